#include "bcaps/optim.hpp"

#include "bcaps/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace bcaps {

template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamSlot<T>& slot, std::int64_t t, double lr,
                 const AdamConfig& config) {
    if (grad.size() != param.size() || slot.m.size() != param.size() || slot.v.size() != param.size()) {
        throw DimensionError("adam_update: parameter, gradient and moment sizes differ");
    }
    if (t < 1) throw ContractError("adam_update: step number must be >= 1");
    const T b1 = static_cast<T>(config.beta1);
    const T b2 = static_cast<T>(config.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(config.beta1, static_cast<double>(t)));
    const T c2 = static_cast<T>(1.0 - std::pow(config.beta2, static_cast<double>(t)));
    const T step = static_cast<T>(lr);
    const T eps = static_cast<T>(config.eps);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i];
        slot.m[i] = b1 * slot.m[i] + (T(1) - b1) * g;
        slot.v[i] = b2 * slot.v[i] + (T(1) - b2) * g * g;
        const T mhat = slot.m[i] / c1;
        const T vhat = slot.v[i] / c2;
        param[i] -= step * mhat / (std::sqrt(vhat) + eps);
    }
}

template <class T>
Adam<T>::Adam(std::vector<NamedTensor<T>> params, double lr, AdamConfig config)
    : params_(std::move(params)), lr_(lr), config_(config) {
    if (!(lr > 0)) throw ContractError("learning rate must be positive");
    slots_.reserve(params_.size());
    for (const auto& p : params_) {
        const auto n = p.tensor->numel();
        slots_.push_back({std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
    }
}

template <class T>
void Adam<T>::step() {
    for (const auto& p : params_) {
        if (!p.tensor->has_grad()) continue;
        for (T g : p.tensor->grad()) {
            if (!std::isfinite(g)) {
                throw DivergenceError(fmt::format("non-finite gradient in parameter '{}'", p.name), -1, -1);
            }
        }
    }
    ++t_;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor<T>& tensor = *params_[k].tensor;
        if (tensor.has_grad()) {
            adam_update<T>(tensor.mutable_data(), tensor.grad(), slots_[k], t_, lr_, config_);
        } else {
            const std::vector<T> zeros(tensor.numel(), T(0));
            adam_update<T>(tensor.mutable_data(), zeros, slots_[k], t_, lr_, config_);
        }
    }
}

template <class T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
}

template void adam_update<float>(std::span<float>, std::span<const float>, AdamSlot<float>&, std::int64_t, double,
                                 const AdamConfig&);
template void adam_update<double>(std::span<double>, std::span<const double>, AdamSlot<double>&, std::int64_t,
                                  double, const AdamConfig&);
template class Adam<float>;
template class Adam<double>;

} // namespace bcaps
