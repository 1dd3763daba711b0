#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace bcaps {

/// Independent sub-seed for a named stream, derived through std::seed_seq so
/// the mapping is identical on every conforming standard library.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t noise = 3;
inline constexpr std::uint64_t eval = 4;
} // namespace streams

/// Mersenne-twister engine plus a standard-normal distribution. Its complete
/// state (including any cached normal deviate) round-trips through state().
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    std::mt19937_64& engine() { return engine_; }

    std::string state() const;
    void restore(const std::string& state);

    bool operator==(const Rng& other) const { return engine_ == other.engine_ && normal_ == other.normal_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace bcaps
