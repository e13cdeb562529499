#pragma once

#include <cstddef>
#include <vector>

#include "drbd/tensor.hpp"

namespace drbd {

enum class BinaryOp { add, sub, mul, div };
enum class Activation { relu, silu, sigmoid, softplus, exp, log };

// Broadcasting follows the usual right-aligned rule: shapes are compared
// from the trailing axis backwards, missing leading axes count as 1, and
// two extents are compatible when they are equal or one of them is 1.
// The result extent is the larger of the two. The rule depends only on
// shapes, so the result shape of a chain of ops is known up front.
Shape broadcast_shape(const Shape& a, const Shape& b);

template <class T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::mul, a, b); }
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::div, a, b); }

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

/// Elementwise nonlinearity. `log` throws DomainError on non-positive input.
template <class T>
Tensor<T> activation(Activation kind, const Tensor<T>& x);

template <class T>
Tensor<T> relu(const Tensor<T>& x) { return activation(Activation::relu, x); }
template <class T>
Tensor<T> silu(const Tensor<T>& x) { return activation(Activation::silu, x); }
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(Activation::sigmoid, x); }
template <class T>
Tensor<T> softplus(const Tensor<T>& x) { return activation(Activation::softplus, x); }
template <class T>
Tensor<T> exp(const Tensor<T>& x) { return activation(Activation::exp, x); }
template <class T>
Tensor<T> log(const Tensor<T>& x) { return activation(Activation::log, x); }

template <class T>
Tensor<T> neg(const Tensor<T>& x);
template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s);
template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s);
template <class T>
Tensor<T> square(const Tensor<T>& x);

/// Sum of every element; rank-0 result.
template <class T>
Tensor<T> sum(const Tensor<T>& x);
template <class T>
Tensor<T> mean(const Tensor<T>& x);
/// Sum over one axis, which is removed from the result.
template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis);

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> transpose(const Tensor<T>& a);
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// 3D convolution over a [C_in, X, Y, Z] volume with a
/// [C_out, C_in, k, k, k] kernel, odd k, "same" padding k/2 and stride 1
/// or 2. Output extents are ceil(extent / stride). `bias` may be undefined.
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride);

/// Nearest-neighbour upsampling of the three spatial axes of [C, X, Y, Z].
template <class T>
Tensor<T> upsample_nearest3d(const Tensor<T>& x, std::size_t factor = 2);

/// Normalises to zero mean and unit (biased) variance along `axis`.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, T eps = T(1e-5));

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
template <class T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis);

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
/// Half-open range [begin, end) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
template <class T>
Tensor<T> flip(const Tensor<T>& x, std::size_t axis);

}  // namespace drbd
