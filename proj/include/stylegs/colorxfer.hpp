#pragma once

#include <span>
#include <vector>

#include "stylegs/image_io.hpp"
#include "stylegs/scene.hpp"

namespace stylegs {

template <typename Scalar>
struct ColorMoments {
  Vec3<Scalar> mean = Vec3<Scalar>::Zero();
  Mat3<Scalar> cov = Mat3<Scalar>::Zero();
};

/// Affine color map p' = A p + b.
template <typename Scalar>
struct ColorTransform {
  Mat3<Scalar> A = Mat3<Scalar>::Identity();
  Vec3<Scalar> b = Vec3<Scalar>::Zero();

  Vec3<Scalar> operator()(const Vec3<Scalar>& p) const { return A * p + b; }
};

/// Mean and population covariance (divide by N) of N x 3 samples.
/// Throws ConfigError for fewer than two samples.
template <typename Scalar>
ColorMoments<Scalar> compute_moments(const Rows3<Scalar>& pixels);

/// Pixels of [3,H,W] images as rows, optionally restricted to mask != 0.
template <typename Scalar>
Rows3<Scalar> image_pixels(const Tensor<Scalar>& image, const Mask* mask = nullptr);
template <typename Scalar>
Rows3<Scalar> image_pixels(std::span<const Tensor<Scalar>> images, std::span<const Mask> masks = {});

/// Symmetric square root U sqrt(L) U^T. Eigenvalues down to -1e-10 are
/// clamped to zero; anything more negative, or asymmetry above 1e-8, throws
/// NumericError.
template <typename Scalar>
Mat3<Scalar> matrix_sqrt_psd(const Mat3<Scalar>& sigma);

/// A = S_s^(1/2) S_c^(-1/2), b = mu_s - A mu_c, with both covariances
/// regularized by cov_eps * I. Throws NumericError when either regularized
/// covariance is singular.
template <typename Scalar>
ColorTransform<Scalar> solve_transform(const ColorMoments<Scalar>& content, const ColorMoments<Scalar>& style,
                                       Scalar cov_eps = Scalar(1e-8));

/// Per-pixel A p + b, unclamped.
template <typename Scalar>
Tensor<Scalar> recolor_image(const Tensor<Scalar>& image, const ColorTransform<Scalar>& t);

/// Applies the transform to SH coefficients so that rendered colors follow
/// it exactly wherever the 0-clamp is inactive.
template <typename Scalar>
void recolor_gaussian(GaussianScene<Scalar>& scene, Index i, const ColorTransform<Scalar>& t);
template <typename Scalar>
GaussianScene<Scalar> recolor_scene(const GaussianScene<Scalar>& scene, const ColorTransform<Scalar>& t);

/// Gaussian -> region assignment by majority vote over the views in which the
/// Gaussian is visible (center inside the image and a compositing weight
/// above 1/255). region_masks[r][v] is region r's mask in view v. Returns -1
/// for unassigned Gaussians. Overlapping masks throw ConfigError.
template <typename Scalar>
std::vector<int> assign_regions(const GaussianScene<Scalar>& scene, std::span<const Camera<Scalar>> cams,
                                const std::vector<std::vector<Mask>>& region_masks);

template <typename Scalar>
GaussianScene<Scalar> recolor_regions(const GaussianScene<Scalar>& scene, std::span<const int> assignment,
                                      std::span<const ColorTransform<Scalar>> transforms);

/// Per-channel CDF matching of `image` onto the value distribution of
/// `reference` (both [3,H,W]).
Tensor<float> match_histograms(const Tensor<float>& image, const Tensor<float>& reference);

}  // namespace stylegs
