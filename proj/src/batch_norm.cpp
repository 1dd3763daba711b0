#include "bcaps/batch_norm.hpp"

#include "bcaps/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace bcaps {

template <class T>
BatchNorm<T>::BatchNorm(std::size_t features, T eps_, T momentum_)
    : gamma({features}, T(1), true),
      beta({features}, T(0), true),
      running_mean({features}, T(0)),
      running_var({features}, T(1)),
      eps(eps_),
      momentum(momentum_) {}

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNorm<T>& bn, bool training) {
    if (x.rank() != 2 || x.dim(1) != bn.features()) {
        throw DimensionError(fmt::format("batch_norm: input {} does not match {} features",
                                         shape_str(x.shape()), bn.features()));
    }
    const std::size_t rows = x.dim(0);
    const std::size_t cols = x.dim(1);
    auto xv = x.data();
    auto gamma = bn.gamma.data();
    auto beta = bn.beta.data();

    std::vector<T> inv_std(cols);
    std::vector<T> centre(cols);
    if (training) {
        if (rows < 2) throw ContractError("batch_norm in train mode needs a batch of at least 2");
        std::vector<T> var(cols, T(0));
        for (std::size_t c = 0; c < cols; ++c) centre[c] = T(0);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) centre[c] += xv[r * cols + c];
        }
        for (auto& m : centre) m /= static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const T d = xv[r * cols + c] - centre[c];
                var[c] += d * d;
            }
        }
        auto run_mean = bn.running_mean.mutable_data();
        auto run_var = bn.running_var.mutable_data();
        for (std::size_t c = 0; c < cols; ++c) {
            var[c] /= static_cast<T>(rows);
            inv_std[c] = T(1) / std::sqrt(var[c] + bn.eps);
            run_mean[c] = bn.momentum * run_mean[c] + (T(1) - bn.momentum) * centre[c];
            run_var[c] = bn.momentum * run_var[c] + (T(1) - bn.momentum) * var[c];
        }
    } else {
        auto run_mean = bn.running_mean.data();
        auto run_var = bn.running_var.data();
        for (std::size_t c = 0; c < cols; ++c) {
            centre[c] = run_mean[c];
            inv_std[c] = T(1) / std::sqrt(run_var[c] + bn.eps);
        }
    }

    std::vector<T> xhat(xv.size());
    std::vector<T> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            xhat[i] = (xv[i] - centre[c]) * inv_std[c];
            out[i] = gamma[c] * xhat[i] + beta[c];
        }
    }

    auto backward = [rows, cols, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& ng = *self.inputs[1];
        auto& nb = *self.inputs[2];
        const auto& g = self.grad;
        if (ng.requires_grad) {
            auto gg = ng.grad_span();
            for (std::size_t i = 0; i < rows * cols; ++i) gg[i % cols] += g[i] * xhat[i];
        }
        if (nb.requires_grad) {
            auto gb = nb.grad_span();
            for (std::size_t i = 0; i < rows * cols; ++i) gb[i % cols] += g[i];
        }
        if (!nx.requires_grad) return;
        auto gx = nx.grad_span();
        const auto& gamma = ng.data;
        if (!training) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] * gamma[c] * inv_std[c];
            }
            return;
        }
        // dx = inv_std/N * (N*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)), dxhat = g*gamma
        const T n = static_cast<T>(rows);
        std::vector<T> sum_d(cols, T(0));
        std::vector<T> sum_dx(cols, T(0));
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const T d = g[r * cols + c] * gamma[c];
                sum_d[c] += d;
                sum_dx[c] += d * xhat[r * cols + c];
            }
        }
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t i = r * cols + c;
                const T d = g[i] * gamma[c];
                gx[i] += inv_std[c] / n * (n * d - sum_d[c] - xhat[i] * sum_dx[c]);
            }
        }
    };
    return Tensor<T>::from_op("batch_norm", x.shape(), std::move(out), {x, bn.gamma, bn.beta}, std::move(backward));
}

template struct BatchNorm<float>;
template struct BatchNorm<double>;
template Tensor<float> batch_norm(const Tensor<float>&, BatchNorm<float>&, bool);
template Tensor<double> batch_norm(const Tensor<double>&, BatchNorm<double>&, bool);

} // namespace bcaps
