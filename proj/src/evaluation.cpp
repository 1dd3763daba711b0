#include "bcaps/evaluation.hpp"

#include "bcaps/error.hpp"
#include "bcaps/rng.hpp"

#include <algorithm>
#include <numeric>

namespace bcaps {

namespace {

template <class T, class Emit>
void eval_batches(Autoencoder<T>& model, const Dataset& data, const EvalOptions& options, Emit emit) {
    if (data.size() == 0) throw ContractError("cannot evaluate an empty dataset");
    if (options.batch_size == 0) throw ContractError("eval batch size must be positive");
    NoGradGuard no_grad;
    Rng noise(derive_seed(options.seed, streams::eval));
    const ForwardOptions forward{false, options.expected_latent};
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < data.size(); start += options.batch_size) {
        rows.resize(std::min(options.batch_size, data.size() - start));
        std::iota(rows.begin(), rows.end(), start);
        emit(model.forward(data.batch<T>(rows), forward, noise));
    }
}

template <class T>
void append(ImageMatrix& m, const Tensor<T>& t) {
    m.cols = t.dim(1);
    m.rows += t.dim(0);
    for (T v : t.data()) m.values.push_back(static_cast<double>(v));
}

} // namespace

template <class T>
ImageMatrix reconstruct(Autoencoder<T>& model, const Dataset& data, const EvalOptions& options) {
    ImageMatrix out;
    out.values.reserve(data.size() * input_dim(model.config()));
    eval_batches(model, data, options, [&](const auto& o) { append(out, o.recon); });
    return out;
}

template <class T>
ImageMatrix encode_latents(Autoencoder<T>& model, const Dataset& data, const EvalOptions& options) {
    ImageMatrix out;
    eval_batches(model, data, options, [&](const auto& o) { append(out, o.z); });
    return out;
}

template ImageMatrix reconstruct<float>(Autoencoder<float>&, const Dataset&, const EvalOptions&);
template ImageMatrix reconstruct<double>(Autoencoder<double>&, const Dataset&, const EvalOptions&);
template ImageMatrix encode_latents<float>(Autoencoder<float>&, const Dataset&, const EvalOptions&);
template ImageMatrix encode_latents<double>(Autoencoder<double>&, const Dataset&, const EvalOptions&);

} // namespace bcaps
