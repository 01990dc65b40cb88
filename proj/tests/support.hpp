#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "stylegs/ops.hpp"
#include "stylegs/renderer.hpp"
#include "stylegs/scene.hpp"
#include "stylegs/tensor.hpp"

namespace testing {

using stylegs::Index;
using stylegs::Shape;
using stylegs::Tensor;

inline std::filesystem::path fixture_dir() { return STYLEGS_FIXTURE_DIR; }

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("stylegs_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1,
                             bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  typename Tensor<Scalar>::Array a(stylegs::numel(shape));
  for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<Scalar>(u(rng));
  return Tensor<Scalar>(std::move(shape), std::move(a), requires_grad);
}

/// Camera at the origin looking down +z.
template <typename Scalar>
stylegs::Camera<Scalar> axis_camera(int width, int height, Scalar f) {
  stylegs::Camera<Scalar> cam;
  cam.fx = cam.fy = f;
  cam.cx = Scalar(width) / 2;
  cam.cy = Scalar(height) / 2;
  cam.width = width;
  cam.height = height;
  return cam;
}

/// n Gaussians scattered in front of an axis camera; every one lands on screen.
template <typename Scalar>
stylegs::GaussianScene<Scalar> random_scene(int n, int degree, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  stylegs::GaussianScene<Scalar> scene(degree);
  for (int i = 0; i < n; ++i) {
    stylegs::Gaussian<Scalar> g;
    const double z = 3.0 + 1.5 * (u(rng) + 1);
    g.position = {Scalar(0.8 * u(rng) * z / 3), Scalar(0.8 * u(rng) * z / 3), Scalar(z)};
    g.log_scale = {Scalar(-2.0 + 0.4 * u(rng)), Scalar(-2.0 + 0.4 * u(rng)), Scalar(-2.0 + 0.4 * u(rng))};
    g.rotation = {Scalar(1 + 0.3 * u(rng)), Scalar(0.3 * u(rng)), Scalar(0.3 * u(rng)), Scalar(0.3 * u(rng))};
    g.opacity_logit = Scalar(1.0 * u(rng));
    g.sh.resize(stylegs::sh_coeff_count(degree), 3);
    for (Index k = 0; k < g.sh.size(); ++k) g.sh.data()[k] = Scalar((k < 3 ? 1.0 : 0.3) * u(rng));
    scene.push_back(g);
  }
  return scene;
}

struct RasterCheck {
  double max_rel_error = 0;
  Index checked = 0;
  Index skipped = 0;  // probes whose +-eps renders blend a different fragment set
};

/// Central differences of sum(color) + sum(depth) w.r.t. one raw parameter
/// group (0 positions, 1 log-scales, 2 rotations, 3 opacity logits, 4 SH).
/// The rasterizer is piecewise smooth: the 1/255 skip threshold and the
/// depth sort make it jump. A probe is skipped when its perturbed renders
/// blend a different number of fragments than the unperturbed one.
inline RasterCheck raster_gradcheck(const stylegs::GaussianScene<double>& scene, const stylegs::Camera<double>& cam,
                                    int group, double eps) {
  using namespace stylegs;
  SceneParams<double> base = to_params(scene, false);
  auto render = [&](const Tensor<double>& x) {
    SceneParams<double> p = base;
    *p.all()[static_cast<std::size_t>(group)] = x;
    const auto v = rasterize(p, cam);
    return std::make_pair(sum(v.color) + sum(v.depth), v.stats.fragments);
  };
  Tensor<double> x = base.all()[static_cast<std::size_t>(group)]->clone(true);
  const auto [loss, fragments] = render(x);
  loss.backward();
  const auto analytic = x.grad();
  RasterCheck out;
  auto& values = x.mutable_data();
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const auto up = render(x);
    values[i] = saved - eps;
    const auto down = render(x);
    values[i] = saved;
    if (up.second != fragments || down.second != fragments) {
      ++out.skipped;
      continue;
    }
    const double fd = (up.first.item() - down.first.item()) / (2 * eps);
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i])));
    ++out.checked;
  }
  return out;
}

}  // namespace testing
