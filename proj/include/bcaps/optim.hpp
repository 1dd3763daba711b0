#pragma once

#include "bcaps/models.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bcaps {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moments of one parameter.
template <class T>
struct AdamSlot {
    std::vector<T> m;
    std::vector<T> v;
};

/// Bias-corrected Adam update of one parameter in place, `t` being the step
/// number after increment (t >= 1).
template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamSlot<T>& slot, std::int64_t t, double lr,
                 const AdamConfig& config = {});

/// Adam over a fixed set of named parameters.
template <class T>
class Adam {
public:
    Adam(std::vector<NamedTensor<T>> params, double lr, AdamConfig config = {});

    /// Applies one update from the current gradients. A parameter without a
    /// gradient is treated as having a zero gradient. Any non-finite gradient
    /// aborts the step before anything is modified.
    void step();
    void zero_grad();

    std::int64_t steps() const { return t_; }
    double learning_rate() const { return lr_; }
    const std::vector<NamedTensor<T>>& params() const { return params_; }
    std::vector<AdamSlot<T>>& slots() { return slots_; }
    const std::vector<AdamSlot<T>>& slots() const { return slots_; }
    void set_steps(std::int64_t t) { t_ = t; }

private:
    std::vector<NamedTensor<T>> params_;
    std::vector<AdamSlot<T>> slots_;
    double lr_;
    AdamConfig config_;
    std::int64_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

} // namespace bcaps
