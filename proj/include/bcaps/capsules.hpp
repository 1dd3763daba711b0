#pragma once

#include "bcaps/batch_norm.hpp"
#include "bcaps/tensor.hpp"
#include "bcaps/trace.hpp"

#include <optional>
#include <random>

namespace bcaps {

/// v = |s|^2 / (1 + |s|^2) * s / sqrt(|s|^2 + 1e-12), per vector along the last axis.
template <class T> Tensor<T> squash(const Tensor<T>& s);

/// Stabilized Euclidean norm sqrt(sum u^2 + 1e-12) of each capsule:
/// [batch, caps, dim] -> [batch, caps].
template <class T> Tensor<T> caps_norm(const Tensor<T>& u);

/// Prediction vectors uhat[b,i,j,:] = u[b,i,:] * W[i,j,:,:].
/// u: [batch, num_in, in_dim], W: [num_in, num_out, in_dim, out_dim].
template <class T> Tensor<T> predict(const Tensor<T>& u, const Tensor<T>& weights);

/// Coupling-weighted sum s[b,j,:] = sum_i k[b,i,j] * uhat[b,i,j,:].
template <class T> Tensor<T> couple(const Tensor<T>& couplings, const Tensor<T>& uhat);

template <class T>
struct RoutingState {
    Tensor<T> logits;     ///< b, [batch, num_in, num_out]
    Tensor<T> couplings;  ///< k = softmax(b) over num_out
};

template <class T>
struct RoutingResult {
    Tensor<T> output;  ///< v, [batch, num_out, out_dim]
    RoutingState<T> state;
};

/// Dynamic routing by agreement. Logits start at zero; each iteration
/// computes couplings, the squashed weighted sum, and (except after the last
/// iteration) adds the agreement uhat . v to the logits. Logit updates are
/// not differentiated: gradients reach uhat through the final weighted sum
/// and squash. With a trace in replay mode the recorded final logits are
/// reused instead of iterating.
template <class T>
RoutingResult<T> route(const Tensor<T>& uhat, int iters, ForwardTrace<T>* trace = nullptr);

/// Batch norm over each (capsule, feature) channel of u [batch, caps, dim].
template <class T>
Tensor<T> caps_batchnorm(const Tensor<T>& u, BatchNorm<T>& bn, bool training);

struct FcCapsuleConfig {
    std::size_t num_in = 1;
    std::size_t in_dim = 1;
    std::size_t num_out = 1;
    std::size_t out_dim = 1;
    int routing_iters = 3;
    bool use_capsule_batchnorm = false;
};

/// Fully connected capsule layer: predict, route, and optionally batch-normalize
/// the output capsules along the description dimension.
template <class T>
class FcCapsuleLayer {
public:
    FcCapsuleLayer(const FcCapsuleConfig& config, std::mt19937_64& init_rng, T init_std = T(0.05));

    const FcCapsuleConfig& config() const { return config_; }

    /// u: [batch, num_in, in_dim] -> [batch, num_out, out_dim].
    Tensor<T> forward(const Tensor<T>& u, bool training, ForwardTrace<T>* trace = nullptr,
                      RoutingState<T>* routing_out = nullptr);

    Tensor<T> weights;
    std::optional<BatchNorm<T>> norm;

private:
    FcCapsuleConfig config_;
};

extern template class FcCapsuleLayer<float>;
extern template class FcCapsuleLayer<double>;

} // namespace bcaps
