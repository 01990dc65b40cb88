#pragma once

#include <span>
#include <vector>

#include "stylegs/tensor.hpp"

// Differentiable primitives. Every function records its result on the
// graph of its inputs; shapes are checked eagerly and reported through
// ShapeError. Images and feature maps are laid out [C,H,W].

namespace stylegs {

// Elementwise arithmetic. Operands must have equal shapes, or one of them
// must hold a single element (broadcast).
template <typename Scalar> Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> div(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar> Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);
template <typename Scalar> Tensor<Scalar> shift(const Tensor<Scalar>& a, Scalar offset);

/// [m,k] x [k,n] -> [m,n]
template <typename Scalar> Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> transpose(const Tensor<Scalar>& a);

/// Stride-1 convolution with zero padding that preserves H and W.
/// input [C_in,H,W], kernel [C_out,C_in,k,k] with odd k, optional bias [C_out].
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias = {});

template <typename Scalar> Tensor<Scalar> relu(const Tensor<Scalar>& a);
/// 2x2 window, stride 2. Odd trailing rows/columns are dropped.
template <typename Scalar> Tensor<Scalar> maxpool2(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> exp(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> log(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> sqrt(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> abs(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> power(const Tensor<Scalar>& a, Scalar exponent);
template <typename Scalar> Tensor<Scalar> clamp(const Tensor<Scalar>& a, Scalar lo, Scalar hi);

template <typename Scalar> Tensor<Scalar> sum(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> mean(const Tensor<Scalar>& a);
/// Reduces one axis away.
template <typename Scalar> Tensor<Scalar> sum(const Tensor<Scalar>& a, std::size_t axis);

template <typename Scalar> Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape);
/// Half-open range [begin, end) along `axis`.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& a, std::size_t axis, Index begin, Index end);
template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, std::size_t axis);

/// x / (||x|| + 1e-8) with the norm taken along `axis`.
template <typename Scalar> Tensor<Scalar> l2_normalize(const Tensor<Scalar>& a, std::size_t axis);

/// Bilinear resampling of [C,H,W] (half-pixel centers, edge clamped).
template <typename Scalar>
Tensor<Scalar> bilinear_resize(const Tensor<Scalar>& a, Index height, Index width);

template <typename Scalar> Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar> Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar> Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }
template <typename Scalar> Tensor<Scalar> operator/(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return div(a, b); }
template <typename Scalar> Tensor<Scalar> operator*(const Tensor<Scalar>& a, Scalar s) { return scale(a, s); }
template <typename Scalar> Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& a) { return scale(a, s); }
template <typename Scalar> Tensor<Scalar> operator+(const Tensor<Scalar>& a, Scalar s) { return shift(a, s); }
template <typename Scalar> Tensor<Scalar> operator-(const Tensor<Scalar>& a, Scalar s) { return shift(a, -s); }

}  // namespace stylegs
