#include "bcaps/capsules.hpp"

#include "bcaps/error.hpp"
#include "bcaps/ops.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <cmath>

namespace bcaps {

namespace {

constexpr double kNormFloor = 1e-12;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;

} // namespace

template <class T>
Tensor<T> squash(const Tensor<T>& s) {
    if (s.rank() == 0) throw DimensionError("squash needs at least one axis");
    const std::size_t dim = s.shape().back();
    const std::size_t count = s.numel() / dim;
    auto sv = s.data();
    std::vector<T> out(sv.size());
    for (std::size_t c = 0; c < count; ++c) {
        const T* v = sv.data() + c * dim;
        T q = 0;
        for (std::size_t d = 0; d < dim; ++d) q += v[d] * v[d];
        const T a = q / ((T(1) + q) * std::sqrt(q + T(kNormFloor)));
        for (std::size_t d = 0; d < dim; ++d) out[c * dim + d] = a * v[d];
    }
    return Tensor<T>::from_op("squash", s.shape(), std::move(out), {s}, [dim, count](Node<T>& self) {
        auto& ns = *self.inputs[0];
        auto gs = ns.grad_span();
        for (std::size_t c = 0; c < count; ++c) {
            const T* v = ns.data.data() + c * dim;
            const T* g = self.grad.data() + c * dim;
            T q = 0;
            T gdot = 0;
            for (std::size_t d = 0; d < dim; ++d) {
                q += v[d] * v[d];
                gdot += g[d] * v[d];
            }
            const T qe = q + T(kNormFloor);
            const T a = q / ((T(1) + q) * std::sqrt(qe));
            const T da_dq = (qe - T(0.5) * q * (T(1) + q)) / ((T(1) + q) * (T(1) + q) * qe * std::sqrt(qe));
            const T radial = T(2) * gdot * da_dq;
            for (std::size_t d = 0; d < dim; ++d) gs[c * dim + d] += a * g[d] + radial * v[d];
        }
    });
}

template <class T>
Tensor<T> caps_norm(const Tensor<T>& u) {
    if (u.rank() != 3) throw DimensionError("caps_norm expects [batch, caps, dim], got " + shape_str(u.shape()));
    const std::size_t dim = u.dim(2);
    const std::size_t count = u.dim(0) * u.dim(1);
    auto uv = u.data();
    std::vector<T> out(count);
    for (std::size_t c = 0; c < count; ++c) {
        T q = 0;
        for (std::size_t d = 0; d < dim; ++d) q += uv[c * dim + d] * uv[c * dim + d];
        out[c] = std::sqrt(q + T(kNormFloor));
    }
    return Tensor<T>::from_op("caps_norm", {u.dim(0), u.dim(1)}, std::move(out), {u}, [dim, count](Node<T>& self) {
        auto& nu = *self.inputs[0];
        auto gu = nu.grad_span();
        for (std::size_t c = 0; c < count; ++c) {
            const T factor = self.grad[c] / self.data[c];
            for (std::size_t d = 0; d < dim; ++d) gu[c * dim + d] += factor * nu.data[c * dim + d];
        }
    });
}

template <class T>
Tensor<T> predict(const Tensor<T>& u, const Tensor<T>& weights) {
    if (u.rank() != 3 || weights.rank() != 4 || u.dim(1) != weights.dim(0) || u.dim(2) != weights.dim(2)) {
        throw DimensionError(fmt::format("predict: capsules {} do not fit weights {}", shape_str(u.shape()),
                                         shape_str(weights.shape())));
    }
    const auto batch = static_cast<Eigen::Index>(u.dim(0));
    const auto num_in = static_cast<Eigen::Index>(u.dim(1));
    const auto in_dim = static_cast<Eigen::Index>(u.dim(2));
    const auto num_out = static_cast<Eigen::Index>(weights.dim(1));
    const auto out_dim = static_cast<Eigen::Index>(weights.dim(3));
    const Eigen::OuterStride<> u_stride(num_in * in_dim);
    const Eigen::OuterStride<> out_stride(num_in * num_out * out_dim);

    // Each output sums over d in ascending order, so results match a plain
    // triple loop bit for bit; the e loop vectorizes.
    std::vector<T> out(static_cast<std::size_t>(batch * num_in * num_out * out_dim), T(0));
    const T* uv = u.data().data();
    const T* wv = weights.data().data();
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (Eigen::Index i = 0; i < num_in; ++i) {
            const T* ubi = uv + (b * num_in + i) * in_dim;
            for (Eigen::Index j = 0; j < num_out; ++j) {
                T* acc = out.data() + ((b * num_in + i) * num_out + j) * out_dim;
                const T* wij = wv + (i * num_out + j) * in_dim * out_dim;
                for (Eigen::Index d = 0; d < in_dim; ++d) {
                    const T ud = ubi[d];
                    const T* row = wij + d * out_dim;
                    for (Eigen::Index e = 0; e < out_dim; ++e) acc[e] += ud * row[e];
                }
            }
        }
    }
    Shape shape{u.dim(0), u.dim(1), weights.dim(1), weights.dim(3)};
    return Tensor<T>::from_op(
        "predict", std::move(shape), std::move(out), {u, weights},
        [=](Node<T>& self) {
            auto& nu = *self.inputs[0];
            auto& nw = *self.inputs[1];
            const T* g = self.grad.data();
            for (Eigen::Index i = 0; i < num_in; ++i) {
                for (Eigen::Index j = 0; j < num_out; ++j) {
                    CStridedMap<T> gij(g + (i * num_out + j) * out_dim, batch, out_dim, out_stride);
                    const Eigen::Index w_off = (i * num_out + j) * in_dim * out_dim;
                    if (nu.requires_grad) {
                        StridedMap<T>(nu.grad_span().data() + i * in_dim, batch, in_dim, u_stride).noalias() +=
                            gij * CMap<T>(nw.data.data() + w_off, in_dim, out_dim).transpose();
                    }
                    if (nw.requires_grad) {
                        Map<T>(nw.grad_span().data() + w_off, in_dim, out_dim).noalias() +=
                            CStridedMap<T>(nu.data.data() + i * in_dim, batch, in_dim, u_stride).transpose() * gij;
                    }
                }
            }
        });
}

template <class T>
Tensor<T> couple(const Tensor<T>& couplings, const Tensor<T>& uhat) {
    if (uhat.rank() != 4 || couplings.rank() != 3 || couplings.dim(0) != uhat.dim(0) ||
        couplings.dim(1) != uhat.dim(1) || couplings.dim(2) != uhat.dim(2)) {
        throw DimensionError(fmt::format("couple: couplings {} do not fit predictions {}",
                                         shape_str(couplings.shape()), shape_str(uhat.shape())));
    }
    const std::size_t batch = uhat.dim(0), num_in = uhat.dim(1), num_out = uhat.dim(2), dim = uhat.dim(3);
    auto kv = couplings.data();
    auto uv = uhat.data();
    std::vector<T> out(batch * num_out * dim, T(0));
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < num_in; ++i) {
            for (std::size_t j = 0; j < num_out; ++j) {
                const T k = kv[(b * num_in + i) * num_out + j];
                const T* src = uv.data() + ((b * num_in + i) * num_out + j) * dim;
                T* dst = out.data() + (b * num_out + j) * dim;
                for (std::size_t d = 0; d < dim; ++d) dst[d] += k * src[d];
            }
        }
    }
    return Tensor<T>::from_op(
        "couple", {batch, num_out, dim}, std::move(out), {couplings, uhat}, [=](Node<T>& self) {
            auto& nk = *self.inputs[0];
            auto& nu = *self.inputs[1];
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t i = 0; i < num_in; ++i) {
                    for (std::size_t j = 0; j < num_out; ++j) {
                        const std::size_t kidx = (b * num_in + i) * num_out + j;
                        const T* g = self.grad.data() + (b * num_out + j) * dim;
                        if (nu.requires_grad) {
                            T* gu = nu.grad_span().data() + kidx * dim;
                            const T k = nk.data[kidx];
                            for (std::size_t d = 0; d < dim; ++d) gu[d] += k * g[d];
                        }
                        if (nk.requires_grad) {
                            const T* u = nu.data.data() + kidx * dim;
                            T acc = 0;
                            for (std::size_t d = 0; d < dim; ++d) acc += u[d] * g[d];
                            nk.grad_span()[kidx] += acc;
                        }
                    }
                }
            }
        });
}

template <class T>
RoutingResult<T> route(const Tensor<T>& uhat, int iters, ForwardTrace<T>* trace) {
    if (iters < 1) throw ContractError(fmt::format("routing needs at least one iteration, got {}", iters));
    if (uhat.rank() != 4) throw DimensionError("route expects [batch, num_in, num_out, dim], got " + shape_str(uhat.shape()));
    const std::size_t batch = uhat.dim(0), num_in = uhat.dim(1), num_out = uhat.dim(2), dim = uhat.dim(3);
    const Shape logit_shape{batch, num_in, num_out};

    auto run_iterations = [&]() {
        NoGradGuard no_grad;
        const Tensor<T> fixed = uhat.detach();
        std::vector<T> logits(batch * num_in * num_out, T(0));
        for (int it = 0; it + 1 < iters; ++it) {
            const Tensor<T> k = softmax(Tensor<T>(logit_shape, logits), 2);
            const Tensor<T> v = squash(couple(k, fixed));
            auto uv = fixed.data();
            auto vv = v.data();
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t i = 0; i < num_in; ++i) {
                    for (std::size_t j = 0; j < num_out; ++j) {
                        const T* u = uv.data() + ((b * num_in + i) * num_out + j) * dim;
                        const T* vj = vv.data() + (b * num_out + j) * dim;
                        T agreement = 0;
                        for (std::size_t d = 0; d < dim; ++d) agreement += u[d] * vj[d];
                        logits[(b * num_in + i) * num_out + j] += agreement;
                    }
                }
            }
        }
        return logits;
    };

    std::vector<T> logits = trace ? trace->capture(run_iterations) : run_iterations();
    if (logits.size() != batch * num_in * num_out) throw ContractError("replayed routing logits do not match shape");
    Tensor<T> logit_tensor(logit_shape, std::move(logits));
    Tensor<T> couplings = softmax(logit_tensor, 2);
    Tensor<T> output = squash(couple(couplings, uhat));
    return {output, {logit_tensor, couplings}};
}

template <class T>
Tensor<T> caps_batchnorm(const Tensor<T>& u, BatchNorm<T>& bn, bool training) {
    if (u.rank() != 3) throw DimensionError("caps_batchnorm expects [batch, caps, dim], got " + shape_str(u.shape()));
    const Shape shape = u.shape();
    return reshape(batch_norm(reshape(u, {shape[0], shape[1] * shape[2]}), bn, training), shape);
}

template <class T>
FcCapsuleLayer<T>::FcCapsuleLayer(const FcCapsuleConfig& config, std::mt19937_64& init_rng, T init_std)
    : config_(config) {
    if (config.num_in == 0 || config.in_dim == 0 || config.num_out == 0 || config.out_dim == 0) {
        throw ContractError("capsule layer extents must be positive");
    }
    if (config.routing_iters < 1) throw ContractError("routing_iters must be >= 1");
    Shape shape{config.num_in, config.num_out, config.in_dim, config.out_dim};
    std::vector<T> values(shape_numel(shape));
    std::normal_distribution<T> normal(T(0), init_std);
    for (auto& v : values) v = normal(init_rng);
    weights = Tensor<T>(std::move(shape), std::move(values), true);
    if (config.use_capsule_batchnorm) norm.emplace(config.num_out * config.out_dim);
}

template <class T>
Tensor<T> FcCapsuleLayer<T>::forward(const Tensor<T>& u, bool training, ForwardTrace<T>* trace,
                                     RoutingState<T>* routing_out) {
    RoutingResult<T> routed = route(predict(u, weights), config_.routing_iters, trace);
    if (routing_out) *routing_out = routed.state;
    if (norm) return caps_batchnorm(routed.output, *norm, training);
    return routed.output;
}

#define BCAPS_INSTANTIATE_CAPS(T)                                                        \
    template Tensor<T> squash(const Tensor<T>&);                                         \
    template Tensor<T> caps_norm(const Tensor<T>&);                                      \
    template Tensor<T> predict(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> couple(const Tensor<T>&, const Tensor<T>&);                       \
    template RoutingResult<T> route(const Tensor<T>&, int, ForwardTrace<T>*);            \
    template Tensor<T> caps_batchnorm(const Tensor<T>&, BatchNorm<T>&, bool);            \
    template class FcCapsuleLayer<T>;

BCAPS_INSTANTIATE_CAPS(float)
BCAPS_INSTANTIATE_CAPS(double)

} // namespace bcaps
