#include "bcaps/ops.hpp"

#include "bcaps/error.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace bcaps {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

enum class Pairing { same, scalar_lhs, scalar_rhs };

template <class T>
Pairing pair_shapes(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() == b.shape()) return Pairing::same;
    if (a.rank() == 0) return Pairing::scalar_lhs;
    if (b.rank() == 0) return Pairing::scalar_rhs;
    throw DimensionError(fmt::format("{}: incompatible shapes {} and {}", op, shape_str(a.shape()),
                                     shape_str(b.shape())));
}

template <class T>
T sum_span(std::span<const T> v) {
    T acc = 0;
    for (T x : v) acc += x;
    return acc;
}

// Elementwise unary op. `deriv(x, y)` gives dy/dx at input x with output y.
template <class T, class F, class D>
Tensor<T> unary(const char* name, const Tensor<T>& x, F f, D deriv) {
    auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return Tensor<T>::from_op(name, x.shape(), std::move(out), {x}, [deriv](Node<T>& self) {
        auto& src = *self.inputs[0];
        auto gx = src.grad_span();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(src.data[i], self.data[i]);
    });
}

// Elementwise binary op. `da(a, b)` and `db(a, b)` are the partials.
template <class T, class F, class DA, class DB>
Tensor<T> binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
    const Pairing pairing = pair_shapes(name, a, b);
    const Shape shape = pairing == Pairing::scalar_lhs ? b.shape() : a.shape();
    const std::size_t n = shape_numel(shape);
    auto av = a.data();
    auto bv = b.data();
    auto ai = [&](std::size_t i) { return pairing == Pairing::scalar_lhs ? av[0] : av[i]; };
    auto bi = [&](std::size_t i) { return pairing == Pairing::scalar_rhs ? bv[0] : bv[i]; };
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ai(i), bi(i));
    return Tensor<T>::from_op(name, shape, std::move(out), {a, b}, [pairing, da, db](Node<T>& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        const std::size_t count = self.data.size();
        auto aval = [&](std::size_t i) { return pairing == Pairing::scalar_lhs ? na.data[0] : na.data[i]; };
        auto bval = [&](std::size_t i) { return pairing == Pairing::scalar_rhs ? nb.data[0] : nb.data[i]; };
        if (na.requires_grad) {
            auto ga = na.grad_span();
            for (std::size_t i = 0; i < count; ++i) {
                ga[pairing == Pairing::scalar_lhs ? 0 : i] += self.grad[i] * da(aval(i), bval(i));
            }
        }
        if (nb.requires_grad) {
            auto gb = nb.grad_span();
            for (std::size_t i = 0; i < count; ++i) {
                gb[pairing == Pairing::scalar_rhs ? 0 : i] += self.grad[i] * db(aval(i), bval(i));
            }
        }
    });
}

struct AxisSplit {
    std::size_t outer;
    std::size_t extent;
    std::size_t inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
    return s;
}

} // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T>("add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
                     [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T>("sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
                     [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T>("mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                     [](T x, T) { return x; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    return unary<T>("scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
    return unary<T>("add_scalar", x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
    return unary<T>("neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
    return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
    for (T v : x.data()) {
        if (v < T(0)) throw DomainError(fmt::format("sqrt of negative value {}", v));
    }
    return unary<T>("sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
    return unary<T>("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary<T>(
        "sigmoid", x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                    [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError(fmt::format("matmul: cannot multiply {} by {}", shape_str(a.shape()),
                                         shape_str(b.shape())));
    }
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(1));
    std::vector<T> out(static_cast<std::size_t>(m * n));
    MapMat<T>(out.data(), m, n).noalias() = CMapMat<T>(a.data().data(), m, k) * CMapMat<T>(b.data().data(), k, n);
    return Tensor<T>::from_op("matmul", {a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        CMapMat<T> g(self.grad.data(), m, n);
        if (na.requires_grad) {
            MapMat<T>(na.grad_span().data(), m, k).noalias() += g * CMapMat<T>(nb.data.data(), k, n).transpose();
        }
        if (nb.requires_grad) {
            MapMat<T>(nb.grad_span().data(), k, n).noalias() += CMapMat<T>(na.data.data(), m, k).transpose() * g;
        }
    });
}

template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.dim(0)) {
        throw DimensionError(fmt::format("add_bias: bias {} does not match trailing extent of {}",
                                         shape_str(bias.shape()), shape_str(x.shape())));
    }
    const std::size_t width = bias.dim(0);
    const std::size_t rows = x.numel() / width;
    auto xv = x.data();
    auto bv = bias.data();
    std::vector<T> out(xv.begin(), xv.end());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < width; ++c) out[r * width + c] += bv[c];
    }
    return Tensor<T>::from_op("add_bias", x.shape(), std::move(out), {x, bias}, [rows, width](Node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nb = *self.inputs[1];
        if (nx.requires_grad) {
            auto gx = nx.grad_span();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
        }
        if (nb.requires_grad) {
            auto gb = nb.grad_span();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < width; ++c) gb[c] += self.grad[r * width + c];
            }
        }
    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x, std::optional<std::size_t> axis) {
    if (!axis) {
        const T total = sum_span(x.data());
        return Tensor<T>::from_op("sum", {}, {total}, {x}, [](Node<T>& self) {
            auto gx = self.inputs[0]->grad_span();
            const T g = self.grad[0];
            for (auto& v : gx) v += g;
        });
    }
    if (*axis >= x.rank()) {
        throw DimensionError(fmt::format("sum: axis {} out of range for shape {}", *axis, shape_str(x.shape())));
    }
    const AxisSplit s = split_axis(x.shape(), *axis);
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(*axis));
    auto xv = x.data();
    std::vector<T> out(s.outer * s.inner, T(0));
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t k = 0; k < s.extent; ++k) {
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.extent + k) * s.inner + i];
        }
    }
    return Tensor<T>::from_op("sum_axis", std::move(out_shape), std::move(out), {x}, [s](Node<T>& self) {
        auto gx = self.inputs[0]->grad_span();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t k = 0; k < s.extent; ++k) {
                for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.extent + k) * s.inner + i] += self.grad[o * s.inner + i];
            }
        }
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x, std::optional<std::size_t> axis) {
    if (!axis) return scale(sum(x), T(1) / static_cast<T>(x.numel()));
    if (*axis >= x.rank()) {
        throw DimensionError(fmt::format("mean: axis {} out of range for shape {}", *axis, shape_str(x.shape())));
    }
    return scale(sum(x, axis), T(1) / static_cast<T>(x.dim(*axis)));
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw DimensionError(fmt::format("softmax: axis {} out of range for shape {}", axis, shape_str(x.shape())));
    }
    const AxisSplit s = split_axis(x.shape(), axis);
    auto xv = x.data();
    std::vector<T> out(xv.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            auto idx = [&](std::size_t k) { return (o * s.extent + k) * s.inner + i; };
            T peak = xv[idx(0)];
            for (std::size_t k = 1; k < s.extent; ++k) peak = std::max(peak, xv[idx(k)]);
            T total = 0;
            for (std::size_t k = 0; k < s.extent; ++k) {
                out[idx(k)] = std::exp(xv[idx(k)] - peak);
                total += out[idx(k)];
            }
            for (std::size_t k = 0; k < s.extent; ++k) out[idx(k)] /= total;
        }
    }
    return Tensor<T>::from_op("softmax", x.shape(), std::move(out), {x}, [s](Node<T>& self) {
        auto gx = self.inputs[0]->grad_span();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                auto idx = [&](std::size_t k) { return (o * s.extent + k) * s.inner + i; };
                T dot = 0;
                for (std::size_t k = 0; k < s.extent; ++k) dot += self.grad[idx(k)] * self.data[idx(k)];
                for (std::size_t k = 0; k < s.extent; ++k) gx[idx(k)] += self.data[idx(k)] * (self.grad[idx(k)] - dot);
            }
        }
    });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError(fmt::format("reshape: cannot view {} as {}", shape_str(x.shape()), shape_str(shape)));
    }
    auto xv = x.data();
    return Tensor<T>::from_op("reshape", std::move(shape), std::vector<T>(xv.begin(), xv.end()), {x},
                              [](Node<T>& self) {
                                  auto gx = self.inputs[0]->grad_span();
                                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                              });
}

#define BCAPS_INSTANTIATE_OPS(T)                                                        \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> scale(const Tensor<T>&, T);                                      \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                 \
    template Tensor<T> neg(const Tensor<T>&);                                           \
    template Tensor<T> exp(const Tensor<T>&);                                           \
    template Tensor<T> sqrt(const Tensor<T>&);                                          \
    template Tensor<T> square(const Tensor<T>&);                                        \
    template Tensor<T> sigmoid(const Tensor<T>&);                                       \
    template Tensor<T> relu(const Tensor<T>&);                                          \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> sum(const Tensor<T>&, std::optional<std::size_t>);               \
    template Tensor<T> mean(const Tensor<T>&, std::optional<std::size_t>);              \
    template Tensor<T> softmax(const Tensor<T>&, std::size_t);                          \
    template Tensor<T> reshape(const Tensor<T>&, Shape);

BCAPS_INSTANTIATE_OPS(float)
BCAPS_INSTANTIATE_OPS(double)

} // namespace bcaps
