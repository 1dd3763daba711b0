#pragma once

#include "bcaps/dataio.hpp"
#include "bcaps/tensor.hpp"

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

namespace bcaps::testing {

/// MNIST directory: $BCAPS_MNIST_DIR, else the configured default.
inline std::filesystem::path mnist_dir() {
    if (const char* env = std::getenv("BCAPS_MNIST_DIR"); env && *env) return env;
    return BCAPS_DEFAULT_MNIST_DIR;
}

inline bool have_mnist() {
    const auto dir = mnist_dir();
    for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                          "t10k-labels-idx1-ubyte"}) {
        if (!std::filesystem::exists(dir / f)) return false;
    }
    return true;
}

inline Dataset mnist_train() {
    return load_dataset(mnist_dir() / "train-images-idx3-ubyte", mnist_dir() / "train-labels-idx1-ubyte", "mnist",
                        "train");
}

inline Dataset mnist_test() {
    return load_dataset(mnist_dir() / "t10k-images-idx3-ubyte", mnist_dir() / "t10k-labels-idx1-ubyte", "mnist",
                        "test");
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("bcaps-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = dist(rng);
    return Tensor<double>(std::move(shape), std::move(values));
}

/// Small synthetic dataset of `n` random 28x28 images with labels cycling 0..9.
inline Dataset synthetic_dataset(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> byte(0, 255);
    Dataset d;
    d.pixels.resize(n * Dataset::width);
    for (auto& p : d.pixels) p = static_cast<std::uint8_t>(byte(rng));
    for (std::size_t i = 0; i < n; ++i) d.labels.push_back(static_cast<int>(i % 10));
    return d;
}

} // namespace bcaps::testing
