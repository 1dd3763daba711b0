#pragma once

#include "bcaps/dataio.hpp"
#include "bcaps/models.hpp"

#include <cstdint>

namespace bcaps {

struct EvalOptions {
    std::size_t batch_size = 500;
    /// Decode E[z] instead of a seeded draw.
    bool expected_latent = false;
    std::uint64_t seed = 0;
};

/// Eval-mode reconstructions of every item, [n, pixels]. Latent draws come
/// from the seed's eval stream, so repeated calls agree exactly.
template <class T>
ImageMatrix reconstruct(Autoencoder<T>& model, const Dataset& data, const EvalOptions& options = {});

/// Eval-mode latent codes z of every item, [n, L], drawn like reconstruct().
template <class T>
ImageMatrix encode_latents(Autoencoder<T>& model, const Dataset& data, const EvalOptions& options = {});

} // namespace bcaps
