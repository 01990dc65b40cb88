#include "stylegs/refine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "stylegs/errors.hpp"
#include "stylegs/log.hpp"
#include "stylegs/ops.hpp"
#include "stylegs/renderer.hpp"

namespace stylegs {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

// Depthwise Gaussian window expressed as a block-diagonal [C,C,11,11] kernel.
template <typename Scalar>
Tensor<Scalar> ssim_kernel(Index channels) {
  std::array<double, kWindow> g{};
  double total = 0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kSigma * kSigma));
    total += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= total;
  const Index taps = kWindow * kWindow;
  typename Tensor<Scalar>::Array k = Tensor<Scalar>::Array::Zero(channels * channels * taps);
  for (Index c = 0; c < channels; ++c) {
    for (int y = 0; y < kWindow; ++y) {
      for (int x = 0; x < kWindow; ++x) {
        k[(c * channels + c) * taps + y * kWindow + x] =
            static_cast<Scalar>(g[static_cast<std::size_t>(y)] * g[static_cast<std::size_t>(x)]);
      }
    }
  }
  return Tensor<Scalar>(Shape{channels, channels, kWindow, kWindow}, std::move(k));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> d_ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape() || a.ndim() != 3) {
    throw ShapeError("d_ssim", "expected equal [C,H,W] shapes, got " + to_string(a.shape()) + " and " +
                                   to_string(b.shape()));
  }
  const Scalar c1 = Scalar(0.01 * 0.01), c2 = Scalar(0.03 * 0.03);
  const Tensor<Scalar> k = ssim_kernel<Scalar>(a.dim(0));
  const auto mu1 = conv2d(a, k);
  const auto mu2 = conv2d(b, k);
  const auto mu1_sq = mu1 * mu1;
  const auto mu2_sq = mu2 * mu2;
  const auto mu12 = mu1 * mu2;
  const auto s1 = conv2d(a * a, k) - mu1_sq;
  const auto s2 = conv2d(b * b, k) - mu2_sq;
  const auto s12 = conv2d(a * b, k) - mu12;
  const auto num = (mu12 * Scalar(2) + c1) * (s12 * Scalar(2) + c2);
  const auto den = (mu1_sq + mu2_sq + c1) * (s1 + s2 + c2);
  const auto ssim = mean(num / den);
  return shift(scale(ssim, Scalar(-0.5)), Scalar(0.5));
}

template <typename Scalar>
Tensor<Scalar> reconstruction_loss(const Tensor<Scalar>& render, const Tensor<Scalar>& target, Scalar lambda_rec) {
  if (render.shape() != target.shape()) {
    throw ShapeError("reconstruction_loss", "render " + to_string(render.shape()) + " vs target " +
                                                to_string(target.shape()));
  }
  const auto l1 = mean(abs(render - target));
  if (lambda_rec == Scalar(0)) return l1;
  return scale(l1, 1 - lambda_rec) + scale(d_ssim(render, target), lambda_rec);
}

void FilterPolicy::validate() const {
  auto pct = [](double k, const char* name) {
    if (!(k >= 0 && k < 50)) throw ConfigError(std::string(name) + " must be in [0, 50), got " + std::to_string(k));
  };
  pct(k_opacity, "k_opacity");
  pct(k_scale, "k_scale");
  if (period < 1) throw ConfigError("filter period must be >= 1, got " + std::to_string(period));
}

template <typename Scalar>
std::vector<Index> floater_indices(const GaussianScene<Scalar>& scene, const FilterPolicy& policy) {
  policy.validate();
  const Index n = scene.size();
  auto count_for = [n](double k) {
    return std::min<Index>(n, static_cast<Index>(std::ceil(k * static_cast<double>(n) / 100.0)));
  };
  std::vector<Scalar> size(static_cast<std::size_t>(n)), opacity(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    size[static_cast<std::size_t>(i)] = scene.activated_scale(i).maxCoeff();
    opacity[static_cast<std::size_t>(i)] = scene.activated_opacity(i);
  }
  std::vector<Index> by_size(static_cast<std::size_t>(n)), by_opacity(static_cast<std::size_t>(n));
  std::iota(by_size.begin(), by_size.end(), Index(0));
  std::iota(by_opacity.begin(), by_opacity.end(), Index(0));
  std::stable_sort(by_size.begin(), by_size.end(), [&](Index a, Index b) {
    return size[static_cast<std::size_t>(a)] > size[static_cast<std::size_t>(b)];
  });
  std::stable_sort(by_opacity.begin(), by_opacity.end(), [&](Index a, Index b) {
    return opacity[static_cast<std::size_t>(a)] < opacity[static_cast<std::size_t>(b)];
  });
  std::vector<bool> drop(static_cast<std::size_t>(n), false);
  const auto take_scale = static_cast<std::size_t>(count_for(policy.k_scale));
  const auto take_opacity = static_cast<std::size_t>(count_for(policy.k_opacity));
  for (std::size_t k = 0; k < take_scale; ++k) drop[static_cast<std::size_t>(by_size[k])] = true;
  for (std::size_t k = 0; k < take_opacity; ++k) drop[static_cast<std::size_t>(by_opacity[k])] = true;
  std::vector<Index> out;
  for (Index i = 0; i < n; ++i) {
    if (drop[static_cast<std::size_t>(i)]) out.push_back(i);
  }
  return out;
}

template <typename Scalar>
FilterResult filter_floaters(GaussianScene<Scalar>& scene, const FilterPolicy& policy) {
  if (scene.empty()) throw ConfigError("filter_floaters needs a nonempty scene");
  const std::vector<Index> drop = floater_indices(scene, policy);
  FilterResult r;
  if (static_cast<Index>(drop.size()) == scene.size()) {
    log_warn("floater filter would remove all " + std::to_string(scene.size()) + " Gaussians; pass skipped");
    r.aborted = true;
    r.kept.resize(static_cast<std::size_t>(scene.size()));
    std::iota(r.kept.begin(), r.kept.end(), Index(0));
    return r;
  }
  std::size_t d = 0;
  for (Index i = 0; i < scene.size(); ++i) {
    if (d < drop.size() && drop[d] == i) {
      ++d;
    } else {
      r.kept.push_back(i);
    }
  }
  r.removed = static_cast<Index>(drop.size());
  scene.keep(r.kept);
  return r;
}

template <typename Scalar>
FinetuneLog finetune(GaussianScene<Scalar>& scene, std::span<const Tensor<Scalar>> targets,
                     std::span<const Camera<Scalar>> cams, const FinetuneOptions& options,
                     const std::function<void(long, double)>& on_iteration) {
  options.policy.validate();
  if (targets.size() != cams.size() || cams.empty()) {
    throw ConfigError("finetune needs one target per camera and at least one view");
  }
  FinetuneLog log;
  Adam<Scalar> adam;
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, cams.size() - 1);
  Schedule schedule = options.schedule;
  schedule.total = options.iterations;
  for (long it = 0; it < options.iterations; ++it) {
    const std::size_t v = pick(rng);
    SceneParams<Scalar> params = to_params(scene, false);
    params.sh = params.sh.clone(true);
    const auto view = rasterize(params, cams[v]);
    const auto loss = reconstruction_loss(view.color, targets[v], Scalar(options.lambda_rec));
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) throw NumericError("finetune: non-finite loss at iteration " + std::to_string(it));
    log.losses.push_back(value);
    loss.backward();
    adam.step("sh", params.sh, Scalar(lr_at(schedule, it) * options.sh_lr_scale));
    std::copy_n(params.sh.data().data(), params.sh.size(), scene.sh().data());
    if (on_iteration) on_iteration(it, value);
    if ((it + 1) % options.policy.period == 0) {
      const FilterResult r = filter_floaters(scene, options.policy);
      adam.keep_rows("sh", r.kept, 3 * scene.sh_coeffs());
      log.filter_passes.push_back({it + 1, r.removed, scene.size(), r.aborted});
      log_info("filter pass at iteration " + std::to_string(it + 1) + ": removed " + std::to_string(r.removed) +
               ", " + std::to_string(scene.size()) + " remain");
    }
  }
  return log;
}

#define STYLEGS_INSTANTIATE_REFINE(S)                                                                        \
  template Tensor<S> d_ssim(const Tensor<S>&, const Tensor<S>&);                                             \
  template Tensor<S> reconstruction_loss(const Tensor<S>&, const Tensor<S>&, S);                             \
  template std::vector<Index> floater_indices(const GaussianScene<S>&, const FilterPolicy&);                 \
  template FilterResult filter_floaters(GaussianScene<S>&, const FilterPolicy&);                             \
  template FinetuneLog finetune(GaussianScene<S>&, std::span<const Tensor<S>>, std::span<const Camera<S>>,   \
                                const FinetuneOptions&, const std::function<void(long, double)>&);

STYLEGS_INSTANTIATE_REFINE(float)
STYLEGS_INSTANTIATE_REFINE(double)

}  // namespace stylegs
