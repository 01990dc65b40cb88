#include "stylegs/controls.hpp"

#include <Eigen/LU>

#include <cmath>
#include <cstdlib>
#include <deque>

#include "stylegs/errors.hpp"
#include "stylegs/ops.hpp"

namespace stylegs {

namespace {

template <typename Scalar>
Tensor<Scalar> mix_channels(const Tensor<Scalar>& img, const Mat3<double>& m, const char* op) {
  if (img.ndim() != 3 || img.dim(0) != 3) throw ShapeError(op, "expected [3,H,W], got " + to_string(img.shape()));
  const Index h = img.dim(1), w = img.dim(2);
  typename Tensor<Scalar>::Array coeffs(9);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) coeffs[r * 3 + c] = static_cast<Scalar>(m(r, c));
  }
  const Tensor<Scalar> mat(Shape{3, 3}, std::move(coeffs));
  return reshape(matmul(mat, reshape(img, Shape{3, h * w})), Shape{3, h, w});
}

}  // namespace

Mat3<double> yiq_matrix() {
  Mat3<double> m;
  m << 0.299, 0.587, 0.114,
       0.595716, -0.274453, -0.321263,
       0.211456, -0.522591, 0.311135;
  return m;
}

Mat3<double> yiq_inverse() { return yiq_matrix().inverse(); }

template <typename Scalar>
Tensor<Scalar> rgb_to_yiq(const Tensor<Scalar>& rgb) {
  return mix_channels(rgb, yiq_matrix(), "rgb_to_yiq");
}

template <typename Scalar>
Tensor<Scalar> yiq_to_rgb(const Tensor<Scalar>& yiq) {
  return mix_channels(yiq, yiq_inverse(), "yiq_to_rgb");
}

template <typename Scalar>
Tensor<Scalar> luminance(const Tensor<Scalar>& rgb) {
  if (rgb.ndim() != 3 || rgb.dim(0) != 3) throw ShapeError("luminance", "expected [3,H,W], got " + to_string(rgb.shape()));
  const Index h = rgb.dim(1), w = rgb.dim(2), hw = h * w;
  typename Tensor<Scalar>::Array y(hw);
  const Scalar* src = rgb.data().data();
  for (Index p = 0; p < hw; ++p) {
    const double sum = 299.0 * static_cast<double>(src[p]) + 587.0 * static_cast<double>(src[hw + p]) +
                       114.0 * static_cast<double>(src[2 * hw + p]);
    y[p] = static_cast<Scalar>(sum / 1000.0);
  }
  return detail::make_result<Scalar>("luminance", Shape{1, h, w}, std::move(y), {rgb}, [hw](Node<Scalar>& o) {
    auto& g = o.inputs[0]->grad_buffer();
    g.segment(0, hw) += Scalar(0.299) * o.grad;
    g.segment(hw, hw) += Scalar(0.587) * o.grad;
    g.segment(2 * hw, hw) += Scalar(0.114) * o.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> luminance_rgb(const Tensor<Scalar>& rgb) {
  const Tensor<Scalar> y = luminance(rgb);
  const std::vector<Tensor<Scalar>> parts{y, y, y};
  return concat<Scalar>(parts, 0);
}

Mask flood_fill_segment(const Tensor<float>& image, std::span<const PixelPoint> points, double threshold) {
  if (image.ndim() != 3) throw ShapeError("flood_fill", "expected [C,H,W], got " + to_string(image.shape()));
  const Index channels = image.dim(0), h = image.dim(1), w = image.dim(2), hw = h * w;
  Mask mask = Mask::Zero(h, w);
  const float* px = image.data().data();
  for (const PixelPoint& seed : points) {
    if (seed.x < 0 || seed.y < 0 || seed.x >= w || seed.y >= h) {
      throw ConfigError("seed point (" + std::to_string(seed.x) + "," + std::to_string(seed.y) + ") is outside the image");
    }
    const Index s = Index(seed.y) * w + seed.x;
    auto similar = [&](Index p) {
      for (Index c = 0; c < channels; ++c) {
        if (!(std::abs(static_cast<double>(px[c * hw + p]) - static_cast<double>(px[c * hw + s])) < threshold)) {
          return false;
        }
      }
      return true;
    };
    Mask seen = Mask::Zero(h, w);
    std::deque<Index> queue{s};
    seen.data()[s] = 1;
    while (!queue.empty()) {
      const Index p = queue.front();
      queue.pop_front();
      mask.data()[p] = 1;
      const Index y = p / w, x = p % w;
      const Index next[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& n : next) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= w || n[1] >= h) continue;
        const Index q = n[1] * w + n[0];
        if (seen.data()[q] || !similar(q)) continue;
        seen.data()[q] = 1;
        queue.push_back(q);
      }
    }
  }
  return mask;
}

Segmenter flood_fill_segmenter(double threshold) {
  return [threshold](const Tensor<float>& image, std::span<const PixelPoint> points) {
    return flood_fill_segment(image, points, threshold);
  };
}

std::vector<PixelPoint> spiral_offsets(int radius, int step) {
  if (step < 1) throw ConfigError("spiral step must be >= 1");
  std::vector<PixelPoint> out;
  for (int r = step; r <= radius; r += step) {
    for (int x = -r; x < r; x += step) out.push_back({x, -r});
    for (int y = -r; y < r; y += step) out.push_back({r, y});
    for (int x = r; x > -r; x -= step) out.push_back({x, r});
    for (int y = r; y > -r; y -= step) out.push_back({-r, y});
  }
  return out;
}

MaskSequence track_masks(std::span<const Tensor<float>> views, std::size_t start, std::span<const PixelPoint> points,
                         const Segmenter& segmenter, const TrackOptions& options) {
  if (views.empty()) throw ConfigError("track_masks needs at least one view");
  if (start >= views.size()) throw ConfigError("start view " + std::to_string(start) + " out of range");
  if (points.empty()) throw ConfigError("track_masks needs at least one point");
  const Index h = views[start].dim(1), w = views[start].dim(2);
  auto inside = [&](const std::vector<PixelPoint>& ps) {
    for (const auto& p : ps) {
      if (p.x < 0 || p.y < 0 || p.x >= w || p.y >= h) return false;
    }
    return true;
  };
  std::vector<PixelPoint> p0(points.begin(), points.end());
  if (!inside(p0)) throw ConfigError("seed points must lie inside view " + std::to_string(start));

  MaskSequence seq;
  seq.masks.resize(views.size());
  seq.points.resize(views.size());
  seq.masks[start] = segmenter(views[start], p0);
  seq.points[start] = p0.front();
  const auto area0 = static_cast<double>(seq.masks[start].template cast<Index>().sum());
  const double tolerance = options.tolerance < 0 ? 0.1 * area0 : options.tolerance;
  if (!(tolerance > 0)) throw ConfigError("area tolerance must be positive (start mask is empty?)");
  const std::vector<PixelPoint> offsets = spiral_offsets(options.radius, options.step);

  auto track = [&](long from, long to, long dir) {
    std::vector<PixelPoint> carried = p0;
    for (long v = from; v != to; v += dir) {
      const Tensor<float>& view = views[static_cast<std::size_t>(v)];
      if (view.dim(1) != h || view.dim(2) != w) throw ConfigError("view " + std::to_string(v) + " has a different size");
      auto attempt = [&](const std::vector<PixelPoint>& ps) -> bool {
        Mask m = segmenter(view, ps);
        const auto area = static_cast<double>(m.template cast<Index>().sum());
        if (std::abs(area - area0) > tolerance) return false;
        seq.masks[static_cast<std::size_t>(v)] = std::move(m);
        seq.points[static_cast<std::size_t>(v)] = ps.front();
        carried = ps;
        return true;
      };
      if (attempt(carried)) continue;
      bool found = false;
      for (const PixelPoint& off : offsets) {
        std::vector<PixelPoint> shifted = carried;
        for (auto& p : shifted) {
          p.x += off.x;
          p.y += off.y;
        }
        if (!inside(shifted)) continue;
        if (attempt(shifted)) {
          found = true;
          break;
        }
      }
      if (!found) {
        throw TrackingError(static_cast<int>(v), "no mask within " + std::to_string(tolerance) + " pixels of area " +
                                                     std::to_string(area0) + " inside radius " +
                                                     std::to_string(options.radius));
      }
    }
  };
  track(static_cast<long>(start) + 1, static_cast<long>(views.size()), 1);
  track(static_cast<long>(start) - 1, -1, -1);
  return seq;
}

Mask resize_mask_nearest(const Mask& mask, Index height, Index width) {
  if (mask.rows() == height && mask.cols() == width) return mask;
  Mask out(height, width);
  for (Index y = 0; y < height; ++y) {
    const Index sy = std::min<Index>(mask.rows() - 1, static_cast<Index>((static_cast<double>(y) + 0.5) *
                                                                          static_cast<double>(mask.rows()) /
                                                                          static_cast<double>(height)));
    for (Index x = 0; x < width; ++x) {
      const Index sx = std::min<Index>(mask.cols() - 1, static_cast<Index>((static_cast<double>(x) + 0.5) *
                                                                            static_cast<double>(mask.cols()) /
                                                                            static_cast<double>(width)));
      out(y, x) = mask(sy, sx);
    }
  }
  return out;
}

template Tensor<float> rgb_to_yiq(const Tensor<float>&);
template Tensor<double> rgb_to_yiq(const Tensor<double>&);
template Tensor<float> yiq_to_rgb(const Tensor<float>&);
template Tensor<double> yiq_to_rgb(const Tensor<double>&);
template Tensor<float> luminance(const Tensor<float>&);
template Tensor<double> luminance(const Tensor<double>&);
template Tensor<float> luminance_rgb(const Tensor<float>&);
template Tensor<double> luminance_rgb(const Tensor<double>&);

}  // namespace stylegs
