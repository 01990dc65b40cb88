#include "stylegs/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "stylegs/errors.hpp"
#include "stylegs/renderer.hpp"

namespace stylegs {

namespace {

Gaussian<float> make_gaussian(int sh_degree, const Vec3<float>& pos, const Vec3<float>& scale, float opacity,
                              const Vec3<float>& rgb) {
  Gaussian<float> g;
  g.position = pos;
  g.log_scale = scale.array().log();
  g.opacity_logit = logit(opacity);
  g.sh = Eigen::Matrix<float, Eigen::Dynamic, 3>::Zero(sh_coeff_count(sh_degree), 3);
  g.sh.row(0) = ((rgb.array() - 0.5f) / static_cast<float>(kShC0)).matrix().transpose();
  return g;
}

Vec3<float> clamp01(const Vec3<float>& c) { return c.cwiseMax(0.02f).cwiseMin(0.98f); }

}  // namespace

template <typename Scalar>
Camera<Scalar> look_at(const Vec3<Scalar>& eye, const Vec3<Scalar>& target, Scalar fx, int width, int height) {
  const Vec3<Scalar> forward = (target - eye).normalized();
  const Vec3<Scalar> down(0, 1, 0);
  const Vec3<Scalar> right = down.cross(forward).normalized();
  const Vec3<Scalar> up_down = forward.cross(right);
  Mat4<Scalar> c2w = Mat4<Scalar>::Identity();
  c2w.template block<3, 1>(0, 0) = right;
  c2w.template block<3, 1>(0, 1) = up_down;
  c2w.template block<3, 1>(0, 2) = forward;
  c2w.template block<3, 1>(0, 3) = eye;
  return Camera<Scalar>::from_cam_to_world(c2w, fx, fx, Scalar(width) / 2, Scalar(height) / 2, width, height);
}

GaussianScene<float> toy_scene(const ToySceneOptions& options) {
  if (options.plane_side < 2 || options.sphere_count < 0 || options.box_count < 0) {
    throw ConfigError("toy scene counts must be positive");
  }
  GaussianScene<float> scene(options.sh_degree);
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<float> jitter(-0.04f, 0.04f);

  // Backdrop: smooth hue ramp with a coarse checker modulation.
  const float half = 2.8f;
  const float spacing = 2 * half / static_cast<float>(options.plane_side - 1);
  for (int j = 0; j < options.plane_side; ++j) {
    for (int i = 0; i < options.plane_side; ++i) {
      const float u = static_cast<float>(i) / static_cast<float>(options.plane_side - 1);
      const float v = static_cast<float>(j) / static_cast<float>(options.plane_side - 1);
      const bool check = ((i / 4) + (j / 4)) % 2 == 0;
      Vec3<float> rgb(0.25f + 0.5f * u, 0.55f - 0.25f * v, 0.35f + 0.3f * v);
      rgb *= check ? 1.15f : 0.8f;
      rgb += Vec3<float>(jitter(rng), jitter(rng), jitter(rng));
      const Vec3<float> pos(-half + spacing * static_cast<float>(i), -half + spacing * static_cast<float>(j), 5.0f);
      scene.push_back(make_gaussian(options.sh_degree, pos, Vec3<float>(0.6f * spacing, 0.6f * spacing, 0.03f), 0.95f,
                                    clamp01(rgb)));
    }
  }

  // Sphere on a Fibonacci lattice, shaded by the surface normal.
  const Vec3<float> sphere_center(-0.55f, 0.1f, 3.6f);
  const float radius = 0.45f;
  const float golden = static_cast<float>(std::numbers::pi * (3.0 - std::sqrt(5.0)));
  for (int k = 0; k < options.sphere_count; ++k) {
    const float y = 1.0f - 2.0f * (static_cast<float>(k) + 0.5f) / static_cast<float>(options.sphere_count);
    const float r = std::sqrt(std::max(0.0f, 1.0f - y * y));
    const float phi = golden * static_cast<float>(k);
    const Vec3<float> n(r * std::cos(phi), y, r * std::sin(phi));
    const float shade = 0.6f + 0.4f * std::max(0.0f, -n.z());
    const Vec3<float> rgb = Vec3<float>(0.95f, 0.55f, 0.15f) * shade + Vec3<float>(jitter(rng), jitter(rng), 0);
    scene.push_back(
        make_gaussian(options.sh_degree, sphere_center + radius * n, Vec3<float>::Constant(0.05f), 0.9f, clamp01(rgb)));
  }

  // Axis-aligned box, one color per face.
  const Vec3<float> box_center(0.6f, -0.1f, 3.9f);
  const float he = 0.35f;
  const Vec3<float> face_rgb[6] = {{0.15f, 0.45f, 0.85f}, {0.1f, 0.7f, 0.65f}, {0.2f, 0.35f, 0.7f},
                                   {0.1f, 0.55f, 0.9f},   {0.25f, 0.6f, 0.8f}, {0.15f, 0.4f, 0.6f}};
  std::uniform_real_distribution<float> on_face(-he, he);
  for (int k = 0; k < options.box_count; ++k) {
    const int face = k % 6;
    const int axis = face / 2;
    Vec3<float> p(on_face(rng), on_face(rng), on_face(rng));
    p[axis] = (face % 2 == 0) ? -he : he;
    const Vec3<float> rgb = face_rgb[face] + Vec3<float>(jitter(rng), jitter(rng), jitter(rng));
    scene.push_back(
        make_gaussian(options.sh_degree, box_center + p, Vec3<float>::Constant(0.055f), 0.9f, clamp01(rgb)));
  }
  return scene;
}

std::vector<Camera<float>> arc_cameras(int count, int width, int height, float fx, float arc_degrees) {
  if (count < 1) throw ConfigError("arc_cameras needs at least one camera");
  std::vector<Camera<float>> cams;
  const Vec3<float> target(0, 0, 4);
  const float radius = 4.0f;
  for (int k = 0; k < count; ++k) {
    const float s = count == 1 ? 0.0f : static_cast<float>(k) / static_cast<float>(count - 1) - 0.5f;
    const float theta = s * arc_degrees * static_cast<float>(std::numbers::pi / 180.0);
    const float lift = 0.25f * std::sin(static_cast<float>(k) * 1.3f);
    const Vec3<float> eye(radius * std::sin(theta), lift, 4.0f - radius * std::cos(theta));
    cams.push_back(look_at(eye, target, fx, width, height));
  }
  return cams;
}

std::vector<Tensor<float>> render_views(const GaussianScene<float>& scene, const std::vector<Camera<float>>& cams) {
  std::vector<Tensor<float>> views;
  views.reserve(cams.size());
  for (const auto& cam : cams) views.push_back(rasterize(scene, cam).color);
  return views;
}

GaussianScene<float> perturbed_init(const GaussianScene<float>& reference, float position_noise, float initial_scale,
                                    std::uint64_t seed) {
  GaussianScene<float> init(reference.sh_degree());
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, position_noise);
  for (Index i = 0; i < reference.size(); ++i) {
    const Vec3<float> pos = reference.positions().row(i).transpose() + Vec3<float>(noise(rng), noise(rng), noise(rng));
    init.push_back(make_gaussian(reference.sh_degree(), pos, Vec3<float>::Constant(initial_scale), 0.5f,
                                 Vec3<float>::Constant(0.5f)));
  }
  return init;
}

Tensor<float> style_pattern(Index height, Index width, std::uint64_t seed) {
  const Vec3<float> palette[4] = {{0.9f, 0.15f, 0.1f}, {0.1f, 0.25f, 0.8f}, {0.95f, 0.85f, 0.1f}, {0.1f, 0.6f, 0.2f}};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> shift(0, 3);
  const int phase = shift(rng);
  typename Tensor<float>::Array px(3 * height * width);
  const Index hw = height * width;
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const Index band = ((x + y) / 7 + phase) % 4;
      Vec3<float> c = palette[band];
      const Index gx = x % 11, gy = y % 11;
      if ((gx - 5) * (gx - 5) + (gy - 5) * (gy - 5) <= 4) c = Vec3<float>(0.97f, 0.97f, 0.95f);
      for (int ch = 0; ch < 3; ++ch) px[ch * hw + y * width + x] = c[ch];
    }
  }
  return Tensor<float>(Shape{3, height, width}, std::move(px));
}

SquareSequence translating_square(const SquareSequenceOptions& o) {
  SquareSequence seq;
  const Index hw = Index(o.height) * o.width;
  for (int f = 0; f < o.frames; ++f) {
    const PixelPoint corner = o.offsets.empty() ? PixelPoint{o.x0 + f * o.step, o.y0}
                                                : o.offsets[static_cast<std::size_t>(f) % o.offsets.size()];
    typename Tensor<float>::Array px(3 * hw);
    Mask truth = Mask::Zero(o.height, o.width);
    for (int y = 0; y < o.height; ++y) {
      for (int x = 0; x < o.width; ++x) {
        const bool in = x >= corner.x && x < corner.x + o.side && y >= corner.y && y < corner.y + o.side;
        truth(y, x) = in ? 1 : 0;
        const float v[3] = {in ? 0.85f : 0.1f, in ? 0.8f : 0.1f, in ? 0.7f : 0.12f};
        for (int c = 0; c < 3; ++c) px[c * hw + Index(y) * o.width + x] = v[c];
      }
    }
    seq.views.emplace_back(Shape{3, o.height, o.width}, std::move(px));
    seq.truth.push_back(std::move(truth));
    seq.corners.push_back(corner);
  }
  return seq;
}

template Camera<float> look_at(const Vec3<float>&, const Vec3<float>&, float, int, int);
template Camera<double> look_at(const Vec3<double>&, const Vec3<double>&, double, int, int);

}  // namespace stylegs
