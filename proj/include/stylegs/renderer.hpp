#pragma once

#include "stylegs/scene.hpp"
#include "stylegs/tensor.hpp"

namespace stylegs {

/// Compositing constants shared with the reference 3DGS rasterizer.
struct RasterConstants {
  static constexpr double covariance_floor = 0.3;     // pixels^2 added to cov2d
  static constexpr double max_alpha = 0.99;
  static constexpr double min_alpha = 1.0 / 255.0;    // contributions below are skipped
  static constexpr double min_transmittance = 1e-4;   // stop once T would fall below
};

template <typename Scalar>
struct Projection {
  Vec2<Scalar> mean = Vec2<Scalar>::Zero();  // pixel coordinates
  Mat2<Scalar> cov = Mat2<Scalar>::Zero();   // includes the covariance floor
  Scalar depth = 0;                          // camera-space z
  bool culled = false;                       // center in front of the near plane
};

/// EWA projection of one Gaussian: cov2d = J W Sigma W^T J^T + 0.3 I.
template <typename Scalar>
Projection<Scalar> project(const Gaussian<Scalar>& g, const Camera<Scalar>& cam);

struct RenderStats {
  Index culled = 0;    // behind the near plane
  Index singular = 0;  // non-invertible cov2d
  Index visible = 0;   // projected and potentially contributing
  Index fragments = 0; // (pixel, Gaussian) pairs blended
};

template <typename Scalar>
struct RenderedView {
  Tensor<Scalar> color;  // [3,H,W]
  Tensor<Scalar> depth;  // [H,W], alpha-blended camera z, not normalised
  Tensor<Scalar> alpha;  // [H,W]
  RenderStats stats;
};

/// Front-to-back alpha compositing of depth-sorted Gaussians, differentiable
/// with respect to every tensor in `params`. The sort permutation is treated
/// as constant. Background color and depth are 0.
template <typename Scalar>
RenderedView<Scalar> rasterize(const SceneParams<Scalar>& params, const Camera<Scalar>& cam);

/// Non-differentiable convenience overload.
template <typename Scalar>
RenderedView<Scalar> rasterize(const GaussianScene<Scalar>& scene, const Camera<Scalar>& cam);

/// Largest compositing weight T_i * alpha_i * G_i each Gaussian attains over
/// the image (0 for Gaussians that never contribute).
template <typename Scalar>
VecX<Scalar> max_contribution(const GaussianScene<Scalar>& scene, const Camera<Scalar>& cam);

}  // namespace stylegs
