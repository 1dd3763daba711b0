#include "bcaps/rng.hpp"

#include "bcaps/error.hpp"

#include <array>
#include <sstream>

namespace bcaps {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    return (static_cast<std::uint64_t>(words[1]) << 32) | words[0];
}

std::string Rng::state() const {
    std::ostringstream out;
    out << engine_ << ' ' << normal_;
    return out.str();
}

void Rng::restore(const std::string& state) {
    std::istringstream in(state);
    in >> engine_ >> normal_;
    if (!in) throw ContractError("malformed RNG state string");
}

} // namespace bcaps
