#pragma once

#include "bcaps/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace bcaps {

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

/// Unsigned-byte IDX container (big-endian header).
struct IdxFile {
    std::uint32_t magic = 0;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload;

    std::size_t items() const { return dims.empty() ? 0 : dims.front(); }
    bool operator==(const IdxFile&) const = default;
};

IdxFile parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const IdxFile& idx);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
IdxFile read_idx(const std::filesystem::path& path);

/// Row-major [rows, cols] matrix of real pixels or features.
struct ImageMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
};

/// Flattened 28x28 images kept as raw bytes; normalized to [0, 1] on access.
struct Dataset {
    std::string name = "mnist";
    std::string split = "train";
    std::vector<std::uint8_t> pixels;  ///< size() * 784
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    static constexpr std::size_t width = 784;

    /// Pixel p -> p / 255 for the given rows, as a [rows, 784] tensor.
    template <class T>
    Tensor<T> batch(std::span<const std::size_t> rows) const;
    template <class T>
    Tensor<T> to_tensor() const;
    ImageMatrix to_matrix() const;

    /// First `n` items (all if n >= size()).
    Dataset head(std::size_t n) const;
    /// Items at the given positions, in order.
    Dataset select(std::span<const std::size_t> rows) const;
};

/// Fixed-seed random subset of `n` items (order of the draw).
Dataset random_subset(const Dataset& data, std::size_t n, std::uint64_t seed);

Dataset to_dataset(const IdxFile& images, const IdxFile& labels, std::string name = "mnist",
                   std::string split = "train");
Dataset load_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                     std::string name = "mnist", std::string split = "train");

/// Binary PGM (P5) of square images tiled row-major, `cols` per row, with
/// one-pixel separators (value 255). Pixels quantize as round(clamp(p) * 255).
std::vector<std::uint8_t> encode_image_grid(const std::vector<std::vector<double>>& images, std::size_t cols,
                                            std::size_t side = 28);
void write_image_grid(const std::vector<std::vector<double>>& images, std::size_t cols,
                      const std::filesystem::path& path, std::size_t side = 28);

using CsvValue = std::variant<double, long long, std::string>;
using CsvRow = std::vector<CsvValue>;

/// Header line then one line per row; doubles use 17 significant digits.
std::string format_csv(const std::vector<std::string>& header, const std::vector<CsvRow>& rows);
void write_csv(const std::vector<std::string>& header, const std::vector<CsvRow>& rows,
               const std::filesystem::path& path);

} // namespace bcaps
