#pragma once

#include "bcaps/tensor.hpp"

namespace bcaps {

/// Per-feature batch normalization state: learned scale/shift plus running
/// statistics used in eval mode.
template <class T>
struct BatchNorm {
    explicit BatchNorm(std::size_t features, T eps = T(1e-5), T momentum = T(0.9));

    std::size_t features() const { return gamma.numel(); }

    Tensor<T> gamma;
    Tensor<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    T eps;
    /// running <- momentum * running + (1 - momentum) * batch statistic.
    T momentum;
};

/// Normalizes each column of x [batch, features]. Train mode uses batch
/// statistics (biased variance) and updates the running estimates; it needs
/// batch >= 2. Eval mode applies the running statistics.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNorm<T>& bn, bool training);

extern template struct BatchNorm<float>;
extern template struct BatchNorm<double>;

} // namespace bcaps
