#pragma once

#include "bcaps/tensor.hpp"

#include <optional>

namespace bcaps {

// Binary ops accept identical shapes, or a rank-0 tensor on either side.
// Any other combination raises DimensionError naming both shapes.

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <class T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <class T> Tensor<T> add_scalar(const Tensor<T>& x, T offset);
template <class T> Tensor<T> neg(const Tensor<T>& x);

template <class T> Tensor<T> exp(const Tensor<T>& x);
/// Throws DomainError on negative input.
template <class T> Tensor<T> sqrt(const Tensor<T>& x);
template <class T> Tensor<T> square(const Tensor<T>& x);
template <class T> Tensor<T> sigmoid(const Tensor<T>& x);
template <class T> Tensor<T> relu(const Tensor<T>& x);

/// [m,k] x [k,n] -> [m,n].
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Adds `bias` (shape [n]) to every row of `x` (shape [..., n]).
template <class T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// Full reduction to a rank-0 tensor, or reduction over one axis (axis removed).
template <class T> Tensor<T> sum(const Tensor<T>& x, std::optional<std::size_t> axis = std::nullopt);
template <class T> Tensor<T> mean(const Tensor<T>& x, std::optional<std::size_t> axis = std::nullopt);

/// Max-shifted softmax along `axis`.
template <class T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

template <class T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <class T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T> Tensor<T> operator-(const Tensor<T>& x) { return neg(x); }

} // namespace bcaps
