#include "stylegs/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace stylegs {

namespace {

std::atomic<std::uint64_t> g_sequence{0};
std::atomic<bool> g_check_finite{false};

template <typename Scalar>
using Array = typename Node<Scalar>::Array;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
bool wants(const Node<Scalar>& n, std::size_t i) {
  return i < n.inputs.size() && n.inputs[i]->requires_grad;
}

template <typename Scalar>
Array<Scalar>& grad_of(Node<Scalar>& n, std::size_t i) {
  return n.inputs[i]->grad_buffer();
}

Shape broadcast_shape(const std::string& op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (numel(b) == 1) return a;
  if (numel(a) == 1) return b;
  throw ShapeError(op, "incompatible shapes " + to_string(a) + " and " + to_string(b));
}

// View of `shape` as [outer, extent(axis), inner].
struct AxisView {
  Index outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const std::string& op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(op, "axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

// Reduces a broadcast gradient back onto an operand of `n` elements.
template <typename Scalar>
void accumulate_broadcast(Array<Scalar>& target, const Array<Scalar>& g) {
  if (target.size() == g.size()) {
    target += g;
  } else {
    target[0] += g.sum();
  }
}

template <typename Scalar>
Array<Scalar> expand(const Array<Scalar>& v, Index n) {
  if (v.size() == n) return v;
  return Array<Scalar>::Constant(n, v[0]);
}

}  // namespace

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void set_check_finite(bool enabled) { g_check_finite = enabled; }
bool check_finite_enabled() { return g_check_finite; }

namespace detail {

std::uint64_t next_sequence() { return ++g_sequence; }

template <typename T>
static void check_finite_impl(const std::string& op, const T* data, Index n) {
  for (Index i = 0; i < n; ++i) {
    if (!std::isfinite(data[i])) {
      throw NumericError(op + ": non-finite value at element " + std::to_string(i));
    }
  }
}

void throw_if_nonfinite(const std::string& op, const float* data, Index n) { check_finite_impl(op, data, n); }
void throw_if_nonfinite(const std::string& op, const double* data, Index n) { check_finite_impl(op, data, n); }

}  // namespace detail

using detail::make_result;

// ---------------------------------------------------------------------------
// Elementwise binary

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Shape shape = broadcast_shape("add", a.shape(), b.shape());
  const Index n = numel(shape);
  Array<Scalar> out = expand<Scalar>(a.data(), n) + expand<Scalar>(b.data(), n);
  return make_result<Scalar>("add", std::move(shape), std::move(out), {a, b}, [](Node<Scalar>& o) {
    if (wants(o, 0)) accumulate_broadcast<Scalar>(grad_of(o, 0), o.grad);
    if (wants(o, 1)) accumulate_broadcast<Scalar>(grad_of(o, 1), o.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Shape shape = broadcast_shape("sub", a.shape(), b.shape());
  const Index n = numel(shape);
  Array<Scalar> out = expand<Scalar>(a.data(), n) - expand<Scalar>(b.data(), n);
  return make_result<Scalar>("sub", std::move(shape), std::move(out), {a, b}, [](Node<Scalar>& o) {
    if (wants(o, 0)) accumulate_broadcast<Scalar>(grad_of(o, 0), o.grad);
    if (wants(o, 1)) accumulate_broadcast<Scalar>(grad_of(o, 1), Array<Scalar>(-o.grad));
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Shape shape = broadcast_shape("mul", a.shape(), b.shape());
  const Index n = numel(shape);
  Array<Scalar> out = expand<Scalar>(a.data(), n) * expand<Scalar>(b.data(), n);
  return make_result<Scalar>("mul", std::move(shape), std::move(out), {a, b}, [n](Node<Scalar>& o) {
    const auto& av = o.inputs[0]->data;
    const auto& bv = o.inputs[1]->data;
    if (wants(o, 0)) accumulate_broadcast<Scalar>(grad_of(o, 0), Array<Scalar>(o.grad * expand<Scalar>(bv, n)));
    if (wants(o, 1)) accumulate_broadcast<Scalar>(grad_of(o, 1), Array<Scalar>(o.grad * expand<Scalar>(av, n)));
  });
}

template <typename Scalar>
Tensor<Scalar> div(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Shape shape = broadcast_shape("div", a.shape(), b.shape());
  const Index n = numel(shape);
  Array<Scalar> out = expand<Scalar>(a.data(), n) / expand<Scalar>(b.data(), n);
  return make_result<Scalar>("div", std::move(shape), std::move(out), {a, b}, [n](Node<Scalar>& o) {
    const Array<Scalar> av = expand<Scalar>(o.inputs[0]->data, n);
    const Array<Scalar> bv = expand<Scalar>(o.inputs[1]->data, n);
    if (wants(o, 0)) accumulate_broadcast<Scalar>(grad_of(o, 0), Array<Scalar>(o.grad / bv));
    if (wants(o, 1)) accumulate_broadcast<Scalar>(grad_of(o, 1), Array<Scalar>(-o.grad * av / (bv * bv)));
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  return make_result<Scalar>("scale", a.shape(), a.data() * factor, {a}, [factor](Node<Scalar>& o) {
    grad_of(o, 0) += o.grad * factor;
  });
}

template <typename Scalar>
Tensor<Scalar> shift(const Tensor<Scalar>& a, Scalar offset) {
  return make_result<Scalar>("shift", a.shape(), a.data() + offset, {a}, [](Node<Scalar>& o) {
    grad_of(o, 0) += o.grad;
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul", "cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Array<Scalar> out(m * n);
  Eigen::Map<RowMat<Scalar>>(out.data(), m, n).noalias() =
      Eigen::Map<const RowMat<Scalar>>(a.data().data(), m, k) *
      Eigen::Map<const RowMat<Scalar>>(b.data().data(), k, n);
  return make_result<Scalar>("matmul", Shape{m, n}, std::move(out), {a, b}, [m, k, n](Node<Scalar>& o) {
    Eigen::Map<const RowMat<Scalar>> g(o.grad.data(), m, n);
    if (wants(o, 0)) {
      Eigen::Map<RowMat<Scalar>>(grad_of(o, 0).data(), m, k).noalias() +=
          g * Eigen::Map<const RowMat<Scalar>>(o.inputs[1]->data.data(), k, n).transpose();
    }
    if (wants(o, 1)) {
      Eigen::Map<RowMat<Scalar>>(grad_of(o, 1).data(), k, n).noalias() +=
          Eigen::Map<const RowMat<Scalar>>(o.inputs[0]->data.data(), m, k).transpose() * g;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  if (a.ndim() != 2) throw ShapeError("transpose", "expected 2-d tensor, got " + to_string(a.shape()));
  const Index m = a.dim(0), n = a.dim(1);
  Array<Scalar> out(m * n);
  Eigen::Map<RowMat<Scalar>>(out.data(), n, m) = Eigen::Map<const RowMat<Scalar>>(a.data().data(), m, n).transpose();
  return make_result<Scalar>("transpose", Shape{n, m}, std::move(out), {a}, [m, n](Node<Scalar>& o) {
    Eigen::Map<RowMat<Scalar>>(grad_of(o, 0).data(), m, n) +=
        Eigen::Map<const RowMat<Scalar>>(o.grad.data(), n, m).transpose();
  });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

template <typename Scalar>
RowMat<Scalar> im2col(const Scalar* in, Index channels, Index height, Index width, Index k) {
  const Index pad = k / 2;
  RowMat<Scalar> col = RowMat<Scalar>::Zero(channels * k * k, height * width);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = in + c * height * width;
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* row = col.row((c * k + ky) * k + kx).data();
        const Index dx = kx - pad;
        const Index x0 = std::max<Index>(0, -dx);
        const Index x1 = std::min<Index>(width, width - dx);
        for (Index y = 0; y < height; ++y) {
          const Index sy = y + ky - pad;
          if (sy < 0 || sy >= height || x1 <= x0) continue;
          std::copy(plane + sy * width + x0 + dx, plane + sy * width + x1 + dx, row + y * width + x0);
        }
      }
    }
  }
  return col;
}

template <typename Scalar>
void col2im(const RowMat<Scalar>& col, Scalar* out, Index channels, Index height, Index width, Index k) {
  const Index pad = k / 2;
  for (Index c = 0; c < channels; ++c) {
    Scalar* plane = out + c * height * width;
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* row = col.row((c * k + ky) * k + kx).data();
        const Index dx = kx - pad;
        const Index x0 = std::max<Index>(0, -dx);
        const Index x1 = std::min<Index>(width, width - dx);
        for (Index y = 0; y < height; ++y) {
          const Index sy = y + ky - pad;
          if (sy < 0 || sy >= height) continue;
          for (Index x = x0; x < x1; ++x) plane[sy * width + x + dx] += row[y * width + x];
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias) {
  if (input.ndim() != 3) {
    throw ShapeError("conv2d", "input must be [C,H,W], got " + to_string(input.shape()));
  }
  if (kernel.ndim() != 4 || kernel.dim(1) != input.dim(0) || kernel.dim(2) != kernel.dim(3) || kernel.dim(2) % 2 == 0) {
    throw ShapeError("conv2d", "kernel " + to_string(kernel.shape()) + " incompatible with input " +
                                   to_string(input.shape()) + " (need [C_out,C_in,k,k], k odd)");
  }
  const Index channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const Index out_channels = kernel.dim(0), k = kernel.dim(2);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != out_channels)) {
    throw ShapeError("conv2d", "bias " + to_string(bias.shape()) + " does not match " + std::to_string(out_channels) +
                                   " output channels");
  }
  const Index rows = channels * k * k, hw = height * width;
  auto col = std::make_shared<RowMat<Scalar>>(im2col(input.data().data(), channels, height, width, k));
  Array<Scalar> out(out_channels * hw);
  Eigen::Map<RowMat<Scalar>> out_mat(out.data(), out_channels, hw);
  out_mat.noalias() = Eigen::Map<const RowMat<Scalar>>(kernel.data().data(), out_channels, rows) * (*col);
  if (has_bias) {
    out_mat.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.data().data(), out_channels);
  }
  std::vector<Tensor<Scalar>> inputs{input, kernel};
  if (has_bias) inputs.push_back(bias);
  if (!kernel.requires_grad()) col.reset();
  return make_result<Scalar>(
      "conv2d", Shape{out_channels, height, width}, std::move(out), std::move(inputs),
      [=](Node<Scalar>& o) {
        Eigen::Map<const RowMat<Scalar>> g(o.grad.data(), out_channels, hw);
        if (wants(o, 0)) {
          RowMat<Scalar> gcol =
              Eigen::Map<const RowMat<Scalar>>(o.inputs[1]->data.data(), out_channels, rows).transpose() * g;
          col2im<Scalar>(gcol, grad_of(o, 0).data(), channels, height, width, k);
        }
        if (wants(o, 1)) {
          Eigen::Map<RowMat<Scalar>>(grad_of(o, 1).data(), out_channels, rows).noalias() += g * col->transpose();
        }
        if (has_bias && wants(o, 2)) {
          Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(grad_of(o, 2).data(), out_channels) += g.rowwise().sum();
        }
      });
}

// ---------------------------------------------------------------------------
// Unary

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  return make_result<Scalar>("relu", a.shape(), a.data().max(Scalar(0)), {a}, [](Node<Scalar>& o) {
    grad_of(o, 0) += (o.inputs[0]->data > Scalar(0)).select(o.grad, Scalar(0));
  });
}

template <typename Scalar>
Tensor<Scalar> maxpool2(const Tensor<Scalar>& a) {
  if (a.ndim() != 3) throw ShapeError("maxpool2", "input must be [C,H,W], got " + to_string(a.shape()));
  const Index channels = a.dim(0), height = a.dim(1), width = a.dim(2);
  const Index oh = height / 2, ow = width / 2;
  if (oh == 0 || ow == 0) throw ShapeError("maxpool2", "input too small: " + to_string(a.shape()));
  Array<Scalar> out(channels * oh * ow);
  auto argmax = std::make_shared<std::vector<Index>>(out.size());
  const Scalar* in = a.data().data();
  for (Index c = 0; c < channels; ++c) {
    for (Index y = 0; y < oh; ++y) {
      for (Index x = 0; x < ow; ++x) {
        Index best = (c * height + 2 * y) * width + 2 * x;
        for (Index dy = 0; dy < 2; ++dy) {
          for (Index dx = 0; dx < 2; ++dx) {
            const Index idx = (c * height + 2 * y + dy) * width + 2 * x + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const Index o = (c * oh + y) * ow + x;
        out[o] = in[best];
        (*argmax)[o] = best;
      }
    }
  }
  return make_result<Scalar>("maxpool2", Shape{channels, oh, ow}, std::move(out), {a}, [argmax](Node<Scalar>& o) {
    auto& g = grad_of(o, 0);
    for (Index i = 0; i < o.grad.size(); ++i) g[(*argmax)[i]] += o.grad[i];
  });
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a) {
  return make_result<Scalar>("exp", a.shape(), a.data().exp(), {a}, [](Node<Scalar>& o) {
    grad_of(o, 0) += o.grad * o.data;
  });
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& a) {
  return make_result<Scalar>("log", a.shape(), a.data().log(), {a}, [](Node<Scalar>& o) {
    grad_of(o, 0) += o.grad / o.inputs[0]->data;
  });
}

template <typename Scalar>
Tensor<Scalar> sqrt(const Tensor<Scalar>& a) {
  return make_result<Scalar>("sqrt", a.shape(), a.data().sqrt(), {a}, [](Node<Scalar>& o) {
    grad_of(o, 0) += o.grad * Scalar(0.5) / o.data;
  });
}

template <typename Scalar>
Tensor<Scalar> abs(const Tensor<Scalar>& a) {
  return make_result<Scalar>("abs", a.shape(), a.data().abs(), {a}, [](Node<Scalar>& o) {
    const auto& x = o.inputs[0]->data;
    grad_of(o, 0) += o.grad * ((x > Scalar(0)).template cast<Scalar>() - (x < Scalar(0)).template cast<Scalar>());
  });
}

template <typename Scalar>
Tensor<Scalar> power(const Tensor<Scalar>& a, Scalar exponent) {
  return make_result<Scalar>("power", a.shape(), a.data().pow(exponent), {a}, [exponent](Node<Scalar>& o) {
    grad_of(o, 0) += o.grad * exponent * o.inputs[0]->data.pow(exponent - Scalar(1));
  });
}

template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& a, Scalar lo, Scalar hi) {
  return make_result<Scalar>("clamp", a.shape(), a.data().max(lo).min(hi), {a}, [lo, hi](Node<Scalar>& o) {
    const auto& x = o.inputs[0]->data;
    grad_of(o, 0) += (x >= lo && x <= hi).select(o.grad, Scalar(0));
  });
}

// ---------------------------------------------------------------------------
// Reductions and layout

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  return make_result<Scalar>("sum", Shape{1}, Array<Scalar>::Constant(1, a.data().sum()), {a}, [](Node<Scalar>& o) {
    grad_of(o, 0) += o.grad[0];
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  const Scalar n = static_cast<Scalar>(a.size());
  return make_result<Scalar>("mean", Shape{1}, Array<Scalar>::Constant(1, a.data().sum() / n), {a},
                             [n](Node<Scalar>& o) { grad_of(o, 0) += o.grad[0] / n; });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a, std::size_t axis) {
  const AxisView v = axis_view("sum", a.shape(), axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  Array<Scalar> out = Array<Scalar>::Zero(v.outer * v.inner);
  const Scalar* in = a.data().data();
  for (Index o = 0; o < v.outer; ++o)
    for (Index e = 0; e < v.extent; ++e)
      for (Index i = 0; i < v.inner; ++i) out[o * v.inner + i] += in[(o * v.extent + e) * v.inner + i];
  return make_result<Scalar>("sum_axis", std::move(shape), std::move(out), {a}, [v](Node<Scalar>& o) {
    auto& g = grad_of(o, 0);
    for (Index ou = 0; ou < v.outer; ++ou)
      for (Index e = 0; e < v.extent; ++e)
        for (Index i = 0; i < v.inner; ++i) g[(ou * v.extent + e) * v.inner + i] += o.grad[ou * v.inner + i];
  });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape", "cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  return make_result<Scalar>("reshape", std::move(shape), a.data(), {a}, [](Node<Scalar>& o) {
    grad_of(o, 0) += o.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& a, std::size_t axis, Index begin, Index end) {
  const AxisView v = axis_view("slice", a.shape(), axis);
  if (begin < 0 || end > v.extent || begin >= end) {
    throw ShapeError("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                                  std::to_string(axis) + " of " + to_string(a.shape()));
  }
  const Index len = end - begin;
  Shape shape = a.shape();
  shape[axis] = len;
  Array<Scalar> out(v.outer * len * v.inner);
  const Scalar* in = a.data().data();
  for (Index o = 0; o < v.outer; ++o) {
    std::copy(in + (o * v.extent + begin) * v.inner, in + (o * v.extent + end) * v.inner,
              out.data() + o * len * v.inner);
  }
  return make_result<Scalar>("slice", std::move(shape), std::move(out), {a}, [v, begin, len](Node<Scalar>& o) {
    auto& g = grad_of(o, 0);
    for (Index ou = 0; ou < v.outer; ++ou) {
      g.segment((ou * v.extent + begin) * v.inner, len * v.inner) += o.grad.segment(ou * len * v.inner, len * v.inner);
    }
  });
}

template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  Shape shape = parts[0].shape();
  const AxisView first = axis_view("concat", shape, axis);
  std::vector<Index> extents;
  Index total = 0;
  for (const auto& p : parts) {
    const AxisView v = axis_view("concat", p.shape(), axis);
    if (v.outer != first.outer || v.inner != first.inner || p.ndim() != shape.size()) {
      throw ShapeError("concat", "shape " + to_string(p.shape()) + " does not match " + to_string(shape) +
                                     " outside axis " + std::to_string(axis));
    }
    extents.push_back(v.extent);
    total += v.extent;
  }
  shape[axis] = total;
  Array<Scalar> out(first.outer * total * first.inner);
  const Index inner = first.inner;
  for (Index o = 0; o < first.outer; ++o) {
    Index offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const Index len = extents[p] * inner;
      out.segment((o * total + offset) * inner, len) = parts[p].data().segment(o * len, len);
      offset += extents[p];
    }
  }
  std::vector<Tensor<Scalar>> inputs(parts.begin(), parts.end());
  return make_result<Scalar>("concat", std::move(shape), std::move(out), std::move(inputs),
                             [extents, total, outer = first.outer, inner](Node<Scalar>& o) {
                               for (Index ou = 0; ou < outer; ++ou) {
                                 Index offset = 0;
                                 for (std::size_t p = 0; p < extents.size(); ++p) {
                                   const Index len = extents[p] * inner;
                                   if (wants(o, p)) {
                                     grad_of(o, p).segment(ou * len, len) +=
                                         o.grad.segment((ou * total + offset) * inner, len);
                                   }
                                   offset += extents[p];
                                 }
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> l2_normalize(const Tensor<Scalar>& a, std::size_t axis) {
  constexpr Scalar kEps = Scalar(1e-8);
  const AxisView v = axis_view("l2_normalize", a.shape(), axis);
  const Scalar* in = a.data().data();
  auto norms = std::make_shared<Array<Scalar>>(Array<Scalar>::Zero(v.outer * v.inner));
  Array<Scalar> out(a.size());
  for (Index o = 0; o < v.outer; ++o) {
    for (Index i = 0; i < v.inner; ++i) {
      Scalar ss = 0;
      for (Index e = 0; e < v.extent; ++e) {
        const Scalar x = in[(o * v.extent + e) * v.inner + i];
        ss += x * x;
      }
      const Scalar n = std::sqrt(ss);
      (*norms)[o * v.inner + i] = n;
      for (Index e = 0; e < v.extent; ++e) {
        const Index idx = (o * v.extent + e) * v.inner + i;
        out[idx] = in[idx] / (n + kEps);
      }
    }
  }
  return make_result<Scalar>("l2_normalize", a.shape(), std::move(out), {a}, [v, norms](Node<Scalar>& o) {
    const auto& x = o.inputs[0]->data;
    auto& g = grad_of(o, 0);
    for (Index ou = 0; ou < v.outer; ++ou) {
      for (Index i = 0; i < v.inner; ++i) {
        const Scalar n = (*norms)[ou * v.inner + i];
        const Scalar d = n + kEps;
        Scalar gx = 0;
        for (Index e = 0; e < v.extent; ++e) {
          const Index idx = (ou * v.extent + e) * v.inner + i;
          gx += o.grad[idx] * x[idx];
        }
        const Scalar coupling = n > Scalar(0) ? gx / (n * d * d) : Scalar(0);
        for (Index e = 0; e < v.extent; ++e) {
          const Index idx = (ou * v.extent + e) * v.inner + i;
          g[idx] += o.grad[idx] / d - x[idx] * coupling;
        }
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> bilinear_resize(const Tensor<Scalar>& a, Index height, Index width) {
  if (a.ndim() != 3 || height < 1 || width < 1) {
    throw ShapeError("bilinear_resize", "expected [C,H,W] input and positive target, got " + to_string(a.shape()));
  }
  const Index channels = a.dim(0), ih = a.dim(1), iw = a.dim(2);
  struct Tap {
    Index i0, i1;
    Scalar w1;
  };
  auto taps = [](Index in, Index out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (Index o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const Index i0 = static_cast<Index>(std::floor(src));
      const Index i1 = std::min(i0 + 1, in - 1);
      t[static_cast<std::size_t>(o)] = {i0, i1, static_cast<Scalar>(src - static_cast<double>(i0))};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(ih, height));
  auto tx = std::make_shared<std::vector<Tap>>(taps(iw, width));
  Array<Scalar> out(channels * height * width);
  const Scalar* in = a.data().data();
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = in + c * ih * iw;
    for (Index y = 0; y < height; ++y) {
      const Tap& vy = (*ty)[static_cast<std::size_t>(y)];
      for (Index x = 0; x < width; ++x) {
        const Tap& vx = (*tx)[static_cast<std::size_t>(x)];
        const Scalar top = plane[vy.i0 * iw + vx.i0] * (1 - vx.w1) + plane[vy.i0 * iw + vx.i1] * vx.w1;
        const Scalar bot = plane[vy.i1 * iw + vx.i0] * (1 - vx.w1) + plane[vy.i1 * iw + vx.i1] * vx.w1;
        out[(c * height + y) * width + x] = top * (1 - vy.w1) + bot * vy.w1;
      }
    }
  }
  return make_result<Scalar>(
      "bilinear_resize", Shape{channels, height, width}, std::move(out), {a},
      [=](Node<Scalar>& o) {
        auto& g = grad_of(o, 0);
        for (Index c = 0; c < channels; ++c) {
          Scalar* plane = g.data() + c * ih * iw;
          for (Index y = 0; y < height; ++y) {
            const Tap& vy = (*ty)[static_cast<std::size_t>(y)];
            for (Index x = 0; x < width; ++x) {
              const Tap& vx = (*tx)[static_cast<std::size_t>(x)];
              const Scalar gv = o.grad[(c * height + y) * width + x];
              plane[vy.i0 * iw + vx.i0] += gv * (1 - vy.w1) * (1 - vx.w1);
              plane[vy.i0 * iw + vx.i1] += gv * (1 - vy.w1) * vx.w1;
              plane[vy.i1 * iw + vx.i0] += gv * vy.w1 * (1 - vx.w1);
              plane[vy.i1 * iw + vx.i1] += gv * vy.w1 * vx.w1;
            }
          }
        }
      });
}

#define STYLEGS_INSTANTIATE_OPS(S)                                                        \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> div(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> scale(const Tensor<S>&, S);                                          \
  template Tensor<S> shift(const Tensor<S>&, S);                                          \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                          \
  template Tensor<S> transpose(const Tensor<S>&);                                         \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);        \
  template Tensor<S> relu(const Tensor<S>&);                                              \
  template Tensor<S> maxpool2(const Tensor<S>&);                                          \
  template Tensor<S> exp(const Tensor<S>&);                                               \
  template Tensor<S> log(const Tensor<S>&);                                               \
  template Tensor<S> sqrt(const Tensor<S>&);                                              \
  template Tensor<S> abs(const Tensor<S>&);                                               \
  template Tensor<S> power(const Tensor<S>&, S);                                          \
  template Tensor<S> clamp(const Tensor<S>&, S, S);                                       \
  template Tensor<S> sum(const Tensor<S>&);                                               \
  template Tensor<S> mean(const Tensor<S>&);                                              \
  template Tensor<S> sum(const Tensor<S>&, std::size_t);                                  \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                    \
  template Tensor<S> slice(const Tensor<S>&, std::size_t, Index, Index);                  \
  template Tensor<S> concat(std::span<const Tensor<S>>, std::size_t);                     \
  template Tensor<S> l2_normalize(const Tensor<S>&, std::size_t);                         \
  template Tensor<S> bilinear_resize(const Tensor<S>&, Index, Index);

STYLEGS_INSTANTIATE_OPS(float)
STYLEGS_INSTANTIATE_OPS(double)

}  // namespace stylegs
