#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "stylegs/optim.hpp"
#include "stylegs/scene.hpp"

namespace stylegs {

/// (1 - SSIM(a, b)) / 2 over [C,H,W] images with an 11x11 Gaussian window
/// (sigma 1.5), zero padding, C1 = 0.01^2, C2 = 0.03^2, averaged over
/// channels and pixels.
template <typename Scalar>
Tensor<Scalar> d_ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// (1 - lambda) * mean|render - target| + lambda * d_ssim(render, target).
template <typename Scalar>
Tensor<Scalar> reconstruction_loss(const Tensor<Scalar>& render, const Tensor<Scalar>& target, Scalar lambda_rec);

struct FilterPolicy {
  double k_opacity = 5.0;  // percent
  double k_scale = 8.0;    // percent
  long period = 100;       // iterations between passes

  /// Throws ConfigError unless 0 <= k < 50 and period >= 1.
  void validate() const;
};

/// Indices, ascending, of the union of the ceil(k_scale% N) Gaussians with the
/// largest max activated scale and the ceil(k_opacity% N) with the smallest
/// activated opacity. Ties go to the lower index.
template <typename Scalar>
std::vector<Index> floater_indices(const GaussianScene<Scalar>& scene, const FilterPolicy& policy);

struct FilterResult {
  Index removed = 0;
  bool aborted = false;       // the union covered every Gaussian
  std::vector<Index> kept;    // surviving original indices, in order
};

/// Removes floater_indices in place, preserving survivor order. If that would
/// empty the scene the pass is aborted with a warning and nothing changes.
template <typename Scalar>
FilterResult filter_floaters(GaussianScene<Scalar>& scene, const FilterPolicy& policy);

struct FilterPass {
  long iteration = 0;
  Index removed = 0;
  Index remaining = 0;
  bool aborted = false;
};

struct FinetuneOptions {
  long iterations = 200;
  FilterPolicy policy;
  Schedule schedule{0.1, 0.01, 200};
  double sh_lr_scale = 0.1;
  double lambda_rec = 0.2;
  std::uint64_t seed = 0;
};

struct FinetuneLog {
  std::vector<double> losses;  // per iteration, before the update
  std::vector<FilterPass> filter_passes;
};

/// Color-only fine-tuning on recolored views: each iteration renders a random
/// training view and takes an Adam step on the SH coefficients. Every
/// `policy.period` completed iterations a filter pass runs. Geometry and
/// density parameters are never modified.
template <typename Scalar>
FinetuneLog finetune(GaussianScene<Scalar>& scene, std::span<const Tensor<Scalar>> targets,
                     std::span<const Camera<Scalar>> cams, const FinetuneOptions& options,
                     const std::function<void(long, double)>& on_iteration = {});

}  // namespace stylegs
