#include "stylegs/colorxfer.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stylegs/errors.hpp"
#include "stylegs/renderer.hpp"

namespace stylegs {

template <typename Scalar>
ColorMoments<Scalar> compute_moments(const Rows3<Scalar>& pixels) {
  const Index n = pixels.rows();
  if (n < 2) throw ConfigError("color moments need at least 2 pixels, got " + std::to_string(n));
  ColorMoments<Scalar> m;
  m.mean = pixels.colwise().mean().transpose();
  const Rows3<Scalar> centered = pixels.rowwise() - m.mean.transpose();
  m.cov = (centered.transpose() * centered) / Scalar(n);
  m.cov = Scalar(0.5) * (m.cov + m.cov.transpose()).eval();
  return m;
}

template <typename Scalar>
Rows3<Scalar> image_pixels(const Tensor<Scalar>& image, const Mask* mask) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw ShapeError("image_pixels", "expected [3,H,W], got " + to_string(image.shape()));
  }
  const Index hw = image.dim(1) * image.dim(2);
  if (mask != nullptr && (mask->rows() != image.dim(1) || mask->cols() != image.dim(2))) {
    throw ShapeError("image_pixels", "mask does not match image " + to_string(image.shape()));
  }
  Index count = hw;
  if (mask != nullptr) count = static_cast<Index>((mask->template cast<Index>() != 0).count());
  Rows3<Scalar> out(count, 3);
  Index r = 0;
  for (Index p = 0; p < hw; ++p) {
    if (mask != nullptr && mask->data()[p] == 0) continue;
    for (Index c = 0; c < 3; ++c) out(r, c) = image[c * hw + p];
    ++r;
  }
  return out;
}

template <typename Scalar>
Rows3<Scalar> image_pixels(std::span<const Tensor<Scalar>> images, std::span<const Mask> masks) {
  if (!masks.empty() && masks.size() != images.size()) {
    throw ShapeError("image_pixels", std::to_string(masks.size()) + " masks for " + std::to_string(images.size()) +
                                         " images");
  }
  std::vector<Rows3<Scalar>> parts;
  Index total = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    parts.push_back(image_pixels(images[i], masks.empty() ? nullptr : &masks[i]));
    total += parts.back().rows();
  }
  Rows3<Scalar> out(total, 3);
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

template <typename Scalar>
Mat3<Scalar> matrix_sqrt_psd(const Mat3<Scalar>& sigma) {
  const Scalar asym = (sigma - sigma.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= Scalar(1e-8))) throw NumericError("matrix_sqrt_psd: input is not symmetric (max |S - S^T| = " +
                                                  std::to_string(double(asym)) + ")");
  Eigen::SelfAdjointEigenSolver<Mat3<Scalar>> eig(sigma);
  Vec3<Scalar> lambda = eig.eigenvalues();
  if (lambda.minCoeff() < Scalar(-1e-10)) {
    throw NumericError("matrix_sqrt_psd: eigenvalue " + std::to_string(double(lambda.minCoeff())) + " is negative");
  }
  lambda = lambda.cwiseMax(Scalar(0)).cwiseSqrt();
  const Mat3<Scalar>& u = eig.eigenvectors();
  Mat3<Scalar> s = u * lambda.asDiagonal() * u.transpose();
  return Scalar(0.5) * (s + s.transpose());
}

template <typename Scalar>
ColorTransform<Scalar> solve_transform(const ColorMoments<Scalar>& content, const ColorMoments<Scalar>& style,
                                       Scalar cov_eps) {
  const Mat3<Scalar> reg = cov_eps * Mat3<Scalar>::Identity();
  const Mat3<Scalar> cc = content.cov + reg;
  const Mat3<Scalar> cs = style.cov + reg;
  auto check = [](const Mat3<Scalar>& c, const char* which) {
    Eigen::SelfAdjointEigenSolver<Mat3<Scalar>> eig(c, Eigen::EigenvaluesOnly);
    const Scalar lo = eig.eigenvalues().minCoeff();
    const Scalar hi = std::max(eig.eigenvalues().maxCoeff(), Scalar(1));
    if (!(lo > hi * std::numeric_limits<Scalar>::epsilon())) {
      throw NumericError(std::string(which) + " color covariance is singular (smallest eigenvalue " +
                         std::to_string(double(lo)) + "); increase cov_eps");
    }
  };
  check(cc, "content");
  check(cs, "style");
  Eigen::SelfAdjointEigenSolver<Mat3<Scalar>> eig(cc);
  const Vec3<Scalar> inv_sqrt = eig.eigenvalues().cwiseSqrt().cwiseInverse();
  const Mat3<Scalar> cc_inv_sqrt = eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
  ColorTransform<Scalar> t;
  t.A = matrix_sqrt_psd<Scalar>(cs) * cc_inv_sqrt;
  t.b = style.mean - t.A * content.mean;
  return t;
}

template <typename Scalar>
Tensor<Scalar> recolor_image(const Tensor<Scalar>& image, const ColorTransform<Scalar>& t) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw ShapeError("recolor_image", "expected [3,H,W], got " + to_string(image.shape()));
  }
  const Index hw = image.dim(1) * image.dim(2);
  typename Tensor<Scalar>::Array out(3 * hw);
  const bool identity = t.A == Mat3<Scalar>::Identity() && t.b.isZero(0);
  if (identity) return image.clone();
  for (Index p = 0; p < hw; ++p) {
    const Vec3<Scalar> px(image[p], image[hw + p], image[2 * hw + p]);
    const Vec3<Scalar> q = t(px);
    for (Index c = 0; c < 3; ++c) out[c * hw + p] = q[c];
  }
  return Tensor<Scalar>(image.shape(), std::move(out));
}

template <typename Scalar>
void recolor_gaussian(GaussianScene<Scalar>& scene, Index i, const ColorTransform<Scalar>& t) {
  const Scalar c0 = Scalar(kShC0);
  auto sh = scene.sh().row(i);
  const Vec3<Scalar> dc(sh(0), sh(1), sh(2));
  const Vec3<Scalar> base = Vec3<Scalar>::Constant(Scalar(0.5)) + c0 * dc;
  const Vec3<Scalar> mapped = (t(base) - Vec3<Scalar>::Constant(Scalar(0.5))) / c0;
  for (int c = 0; c < 3; ++c) sh(c) = mapped[c];
  for (int k = 1; k < scene.sh_coeffs(); ++k) {
    const Vec3<Scalar> v(sh(3 * k), sh(3 * k + 1), sh(3 * k + 2));
    const Vec3<Scalar> w = t.A * v;
    for (int c = 0; c < 3; ++c) sh(3 * k + c) = w[c];
  }
}

template <typename Scalar>
GaussianScene<Scalar> recolor_scene(const GaussianScene<Scalar>& scene, const ColorTransform<Scalar>& t) {
  GaussianScene<Scalar> out = scene;
  for (Index i = 0; i < out.size(); ++i) recolor_gaussian(out, i, t);
  return out;
}

template <typename Scalar>
std::vector<int> assign_regions(const GaussianScene<Scalar>& scene, std::span<const Camera<Scalar>> cams,
                                const std::vector<std::vector<Mask>>& region_masks) {
  const std::size_t regions = region_masks.size();
  for (const auto& per_view : region_masks) {
    if (per_view.size() != cams.size()) {
      throw ConfigError("region masks cover " + std::to_string(per_view.size()) + " views, expected " +
                        std::to_string(cams.size()));
    }
  }
  for (std::size_t v = 0; v < cams.size(); ++v) {
    Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cover;
    for (std::size_t r = 0; r < regions; ++r) {
      const Mask& m = region_masks[r][v];
      if (m.rows() != cams[v].height || m.cols() != cams[v].width) {
        throw ConfigError("mask of region " + std::to_string(r) + " in view " + std::to_string(v) +
                          " does not match the camera resolution");
      }
      if (cover.size() == 0) cover.setZero(m.rows(), m.cols());
      cover += m.template cast<int>();
    }
    if (cover.size() > 0 && cover.maxCoeff() > 1) {
      throw ConfigError("region masks overlap in view " + std::to_string(v));
    }
  }
  const Index n = scene.size();
  std::vector<int> visible(static_cast<std::size_t>(n), 0);
  std::vector<std::vector<int>> votes(regions, std::vector<int>(static_cast<std::size_t>(n), 0));
  for (std::size_t v = 0; v < cams.size(); ++v) {
    const Camera<Scalar>& cam = cams[v];
    const VecX<Scalar> weight = max_contribution(scene, cam);
    for (Index i = 0; i < n; ++i) {
      if (!(weight[i] > Scalar(1.0 / 255.0))) continue;
      const Vec3<Scalar> pc = cam.to_camera(scene.positions().row(i).transpose());
      if (pc.z() < cam.near_clip) continue;
      const Scalar u = cam.fx * pc.x() / pc.z() + cam.cx;
      const Scalar w = cam.fy * pc.y() / pc.z() + cam.cy;
      const auto px = static_cast<Index>(std::floor(u)), py = static_cast<Index>(std::floor(w));
      if (px < 0 || py < 0 || px >= cam.width || py >= cam.height) continue;
      ++visible[static_cast<std::size_t>(i)];
      for (std::size_t r = 0; r < regions; ++r) {
        if (region_masks[r][v](py, px) != 0) ++votes[r][static_cast<std::size_t>(i)];
      }
    }
  }
  std::vector<int> out(static_cast<std::size_t>(n), -1);
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    for (std::size_t r = 0; r < regions; ++r) {
      if (2 * votes[r][k] > visible[k]) out[k] = static_cast<int>(r);
    }
  }
  return out;
}

template <typename Scalar>
GaussianScene<Scalar> recolor_regions(const GaussianScene<Scalar>& scene, std::span<const int> assignment,
                                      std::span<const ColorTransform<Scalar>> transforms) {
  if (static_cast<Index>(assignment.size()) != scene.size()) {
    throw ShapeError("recolor_regions", "assignment has " + std::to_string(assignment.size()) + " entries for " +
                                            std::to_string(scene.size()) + " Gaussians");
  }
  GaussianScene<Scalar> out = scene;
  for (Index i = 0; i < out.size(); ++i) {
    const int r = assignment[static_cast<std::size_t>(i)];
    if (r < 0) continue;
    if (static_cast<std::size_t>(r) >= transforms.size()) throw ConfigError("region index out of range");
    recolor_gaussian(out, i, transforms[static_cast<std::size_t>(r)]);
  }
  return out;
}

Tensor<float> match_histograms(const Tensor<float>& image, const Tensor<float>& reference) {
  if (image.ndim() != 3 || reference.ndim() != 3 || image.dim(0) != reference.dim(0)) {
    throw ShapeError("match_histograms", "incompatible images " + to_string(image.shape()) + " and " +
                                             to_string(reference.shape()));
  }
  const Index channels = image.dim(0);
  const Index n = image.size() / channels, m = reference.size() / channels;
  Tensor<float>::Array out(image.size());
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::vector<float> ref(static_cast<std::size_t>(m));
  for (Index c = 0; c < channels; ++c) {
    const float* src = image.data().data() + c * n;
    for (Index j = 0; j < m; ++j) ref[static_cast<std::size_t>(j)] = reference[c * m + j];
    std::sort(ref.begin(), ref.end());
    std::iota(order.begin(), order.end(), Index(0));
    std::stable_sort(order.begin(), order.end(), [src](Index a, Index b) { return src[a] < src[b]; });
    // Equal inputs share the quantile of their run's midpoint.
    std::size_t start = 0;
    while (start < order.size()) {
      std::size_t end = start;
      while (end + 1 < order.size() && src[order[end + 1]] == src[order[start]]) ++end;
      const double rank = 0.5 * static_cast<double>(start + end);
      const double q = n > 1 ? rank / static_cast<double>(n - 1) : 0.5;
      const double pos = q * static_cast<double>(m - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, static_cast<std::size_t>(m - 1));
      const double f = pos - static_cast<double>(lo);
      const auto value = static_cast<float>((1.0 - f) * ref[lo] + f * ref[hi]);
      for (std::size_t k = start; k <= end; ++k) out[c * n + order[k]] = value;
      start = end + 1;
    }
  }
  return Tensor<float>(image.shape(), std::move(out));
}

#define STYLEGS_INSTANTIATE_COLORXFER(S)                                                                       \
  template ColorMoments<S> compute_moments(const Rows3<S>&);                                                   \
  template Rows3<S> image_pixels(const Tensor<S>&, const Mask*);                                               \
  template Rows3<S> image_pixels(std::span<const Tensor<S>>, std::span<const Mask>);                           \
  template Mat3<S> matrix_sqrt_psd(const Mat3<S>&);                                                            \
  template ColorTransform<S> solve_transform(const ColorMoments<S>&, const ColorMoments<S>&, S);               \
  template Tensor<S> recolor_image(const Tensor<S>&, const ColorTransform<S>&);                                \
  template void recolor_gaussian(GaussianScene<S>&, Index, const ColorTransform<S>&);                          \
  template GaussianScene<S> recolor_scene(const GaussianScene<S>&, const ColorTransform<S>&);                  \
  template std::vector<int> assign_regions(const GaussianScene<S>&, std::span<const Camera<S>>,                \
                                           const std::vector<std::vector<Mask>>&);                             \
  template GaussianScene<S> recolor_regions(const GaussianScene<S>&, std::span<const int>,                     \
                                            std::span<const ColorTransform<S>>);

STYLEGS_INSTANTIATE_COLORXFER(float)
STYLEGS_INSTANTIATE_COLORXFER(double)

}  // namespace stylegs
