#include "stylegs/scene.hpp"

#include <cmath>
#include <cstring>

#include "stylegs/errors.hpp"

namespace stylegs {

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                          0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                          -0.4570457994644658, 1.445305721320277,  -0.5900435899266435};

}  // namespace

template <typename Scalar>
VecX<Scalar> sh_basis(int degree, const Vec3<Scalar>& dir) {
  const Scalar x = dir.x(), y = dir.y(), z = dir.z();
  VecX<Scalar> b(sh_coeff_count(degree));
  b[0] = Scalar(kShC0);
  if (degree < 1) return b;
  b[1] = Scalar(-kC1) * y;
  b[2] = Scalar(kC1) * z;
  b[3] = Scalar(-kC1) * x;
  if (degree < 2) return b;
  const Scalar xx = x * x, yy = y * y, zz = z * z;
  b[4] = Scalar(kC2[0]) * x * y;
  b[5] = Scalar(kC2[1]) * y * z;
  b[6] = Scalar(kC2[2]) * (2 * zz - xx - yy);
  b[7] = Scalar(kC2[3]) * x * z;
  b[8] = Scalar(kC2[4]) * (xx - yy);
  if (degree < 3) return b;
  b[9] = Scalar(kC3[0]) * y * (3 * xx - yy);
  b[10] = Scalar(kC3[1]) * x * y * z;
  b[11] = Scalar(kC3[2]) * y * (4 * zz - xx - yy);
  b[12] = Scalar(kC3[3]) * z * (2 * zz - 3 * xx - 3 * yy);
  b[13] = Scalar(kC3[4]) * x * (4 * zz - xx - yy);
  b[14] = Scalar(kC3[5]) * z * (xx - yy);
  b[15] = Scalar(kC3[6]) * x * (xx - 3 * yy);
  return b;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 3> sh_basis_jacobian(int degree, const Vec3<Scalar>& dir) {
  const Scalar x = dir.x(), y = dir.y(), z = dir.z();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> j = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>::Zero(sh_coeff_count(degree), 3);
  if (degree < 1) return j;
  const Scalar c1 = Scalar(kC1);
  j.row(1) << 0, -c1, 0;
  j.row(2) << 0, 0, c1;
  j.row(3) << -c1, 0, 0;
  if (degree < 2) return j;
  const Scalar xx = x * x, yy = y * y, zz = z * z;
  const auto c2 = [](int i) { return Scalar(kC2[i]); };
  j.row(4) << c2(0) * y, c2(0) * x, 0;
  j.row(5) << 0, c2(1) * z, c2(1) * y;
  j.row(6) << -2 * c2(2) * x, -2 * c2(2) * y, 4 * c2(2) * z;
  j.row(7) << c2(3) * z, 0, c2(3) * x;
  j.row(8) << 2 * c2(4) * x, -2 * c2(4) * y, 0;
  if (degree < 3) return j;
  const auto c3 = [](int i) { return Scalar(kC3[i]); };
  j.row(9) << 6 * c3(0) * x * y, c3(0) * (3 * xx - 3 * yy), 0;
  j.row(10) << c3(1) * y * z, c3(1) * x * z, c3(1) * x * y;
  j.row(11) << -2 * c3(2) * x * y, c3(2) * (4 * zz - xx - 3 * yy), 8 * c3(2) * y * z;
  j.row(12) << -6 * c3(3) * x * z, -6 * c3(3) * y * z, c3(3) * (6 * zz - 3 * xx - 3 * yy);
  j.row(13) << c3(4) * (4 * zz - 3 * xx - yy), -2 * c3(4) * x * y, 8 * c3(4) * x * z;
  j.row(14) << 2 * c3(5) * x * z, -2 * c3(5) * y * z, c3(5) * (xx - yy);
  j.row(15) << c3(6) * (3 * xx - 3 * yy), -6 * c3(6) * x * y, 0;
  return j;
}

template <typename Scalar>
Mat3<Scalar> quaternion_to_matrix(const Vec4<Scalar>& q) {
  const Vec4<Scalar> n = q / q.norm();
  const Scalar w = n[0], x = n[1], y = n[2], z = n[3];
  Mat3<Scalar> r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

template <typename Scalar>
Vec3<Scalar> sh_color(const Gaussian<Scalar>& g, const Vec3<Scalar>& view_dir) {
  const int k = static_cast<int>(g.sh.rows());
  int degree = 0;
  while (sh_coeff_count(degree) < k) ++degree;
  const VecX<Scalar> basis = sh_basis(degree, view_dir);
  Vec3<Scalar> rgb = (g.sh.transpose() * basis).array() + Scalar(0.5);
  return rgb.cwiseMax(Scalar(0));
}

// ---------------------------------------------------------------------------
// GaussianScene

template <typename Scalar>
GaussianScene<Scalar>::GaussianScene(int sh_degree) : sh_degree_(sh_degree) {
  if (sh_degree < 0 || sh_degree > kMaxShDegree) {
    throw ConfigError("sh degree must be in [0,3], got " + std::to_string(sh_degree));
  }
  resize(0);
}

template <typename Scalar>
void GaussianScene<Scalar>::resize(Index n) {
  positions_ = Rows3<Scalar>::Zero(n, 3);
  log_scales_ = Rows3<Scalar>::Zero(n, 3);
  rotations_ = Rows4<Scalar>::Zero(n, 4);
  rotations_.col(0).setOnes();
  opacity_logits_ = VecX<Scalar>::Zero(n);
  sh_ = RowsX<Scalar>::Zero(n, 3 * sh_coeffs());
  normals_ = Rows3<Scalar>::Zero(n, 3);
}

template <typename Scalar>
void GaussianScene<Scalar>::push_back(const Gaussian<Scalar>& g) {
  if (g.sh.rows() != sh_coeffs()) {
    throw ShapeError("push_back", "gaussian has " + std::to_string(g.sh.rows()) + " SH rows, scene expects " +
                                      std::to_string(sh_coeffs()));
  }
  const Index n = size();
  positions_.conservativeResize(n + 1, 3);
  log_scales_.conservativeResize(n + 1, 3);
  rotations_.conservativeResize(n + 1, 4);
  opacity_logits_.conservativeResize(n + 1);
  sh_.conservativeResize(n + 1, 3 * sh_coeffs());
  normals_.conservativeResize(n + 1, 3);
  positions_.row(n) = g.position.transpose();
  log_scales_.row(n) = g.log_scale.transpose();
  rotations_.row(n) = g.rotation.transpose();
  opacity_logits_[n] = g.opacity_logit;
  for (int k = 0; k < sh_coeffs(); ++k) sh_.block(n, 3 * k, 1, 3) = g.sh.row(k);
  normals_.row(n) = g.normal.transpose();
}

template <typename Scalar>
Gaussian<Scalar> GaussianScene<Scalar>::gaussian(Index i) const {
  Gaussian<Scalar> g;
  g.position = positions_.row(i).transpose();
  g.log_scale = log_scales_.row(i).transpose();
  g.rotation = rotations_.row(i).transpose();
  g.opacity_logit = opacity_logits_[i];
  g.sh.resize(sh_coeffs(), 3);
  for (int k = 0; k < sh_coeffs(); ++k) g.sh.row(k) = sh_.block(i, 3 * k, 1, 3);
  g.normal = normals_.row(i).transpose();
  return g;
}

template <typename Scalar>
void GaussianScene<Scalar>::keep(std::span<const Index> rows) {
  GaussianScene<Scalar> out(sh_degree_);
  const Index n = static_cast<Index>(rows.size());
  out.resize(n);
  for (Index r = 0; r < n; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    out.positions_.row(r) = positions_.row(i);
    out.log_scales_.row(r) = log_scales_.row(i);
    out.rotations_.row(r) = rotations_.row(i);
    out.opacity_logits_[r] = opacity_logits_[i];
    out.sh_.row(r) = sh_.row(i);
    out.normals_.row(r) = normals_.row(i);
  }
  *this = std::move(out);
}

template <typename Scalar>
template <typename Other>
GaussianScene<Other> GaussianScene<Scalar>::cast() const {
  GaussianScene<Other> out(sh_degree_);
  out.resize(size());
  out.positions() = positions_.template cast<Other>();
  out.log_scales() = log_scales_.template cast<Other>();
  out.rotations() = rotations_.template cast<Other>();
  out.opacity_logits() = opacity_logits_.template cast<Other>();
  out.sh() = sh_.template cast<Other>();
  out.normals() = normals_.template cast<Other>();
  return out;
}

template <typename Scalar>
std::uint64_t checksum(const GaussianScene<Scalar>& scene) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const Scalar* data, Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(Scalar); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  mix(scene.positions().data(), scene.positions().size());
  mix(scene.log_scales().data(), scene.log_scales().size());
  mix(scene.rotations().data(), scene.rotations().size());
  mix(scene.opacity_logits().data(), scene.opacity_logits().size());
  mix(scene.sh().data(), scene.sh().size());
  return h;
}

// ---------------------------------------------------------------------------
// Camera

template <typename Scalar>
void Camera<Scalar>::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw ConfigError("camera focal lengths must be positive");
  if (width < 8 || height < 8) {
    throw ConfigError("camera image must be at least 8x8, got " + std::to_string(width) + "x" + std::to_string(height));
  }
}

template <typename Scalar>
Camera<Scalar> Camera<Scalar>::resized(int new_width, int new_height) const {
  Camera out = *this;
  const Scalar sx = Scalar(new_width) / Scalar(width);
  const Scalar sy = Scalar(new_height) / Scalar(height);
  out.fx *= sx;
  out.cx *= sx;
  out.fy *= sy;
  out.cy *= sy;
  out.width = new_width;
  out.height = new_height;
  return out;
}

template <typename Scalar>
Camera<Scalar> Camera<Scalar>::from_cam_to_world(const Mat4<Scalar>& c2w, Scalar fx, Scalar fy, Scalar cx, Scalar cy,
                                                 int width, int height) {
  Camera cam;
  cam.rotation = c2w.template topLeftCorner<3, 3>().transpose();
  cam.translation = -(cam.rotation * c2w.template topRightCorner<3, 1>());
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.width = width;
  cam.height = height;
  return cam;
}

template <typename Scalar>
Mat4<Scalar> Camera<Scalar>::cam_to_world() const {
  Mat4<Scalar> m = Mat4<Scalar>::Identity();
  m.template topLeftCorner<3, 3>() = rotation.transpose();
  m.template topRightCorner<3, 1>() = center();
  return m;
}

template <typename Scalar>
template <typename Other>
Camera<Other> Camera<Scalar>::cast() const {
  Camera<Other> c;
  c.rotation = rotation.template cast<Other>();
  c.translation = translation.template cast<Other>();
  c.fx = Other(fx);
  c.fy = Other(fy);
  c.cx = Other(cx);
  c.cy = Other(cy);
  c.width = width;
  c.height = height;
  c.near_clip = Other(near_clip);
  return c;
}

template <typename Scalar>
Camera<Scalar> interpolate_pose(const Camera<Scalar>& a, const Camera<Scalar>& b, Scalar t, Scalar jitter_radians,
                                std::mt19937_64* rng) {
  if (!(t >= 0 && t <= 1)) throw ConfigError("interpolate_pose: t must lie in [0,1]");
  if (a.fx != b.fx || a.fy != b.fy || a.cx != b.cx || a.cy != b.cy || a.width != b.width || a.height != b.height) {
    throw ConfigError("interpolate_pose: cameras must share intrinsics");
  }
  Camera<Scalar> out = t == 0 ? a : b;
  if (t != 0 && t != 1) {
    const Eigen::Quaternion<Scalar> qa(a.rotation), qb(b.rotation);
    out.rotation = qa.slerp(t, qb).normalized().toRotationMatrix();
    const Vec3<Scalar> center = (Scalar(1) - t) * a.center() + t * b.center();
    out.translation = -(out.rotation * center);
  }
  if (jitter_radians > 0 && rng != nullptr) {
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform(0.0, static_cast<double>(jitter_radians));
    Vec3<Scalar> axis(Scalar(normal(*rng)), Scalar(normal(*rng)), Scalar(normal(*rng)));
    if (axis.norm() < Scalar(1e-12)) axis = Vec3<Scalar>::UnitZ();
    const Scalar angle = Scalar(uniform(*rng));
    const Vec3<Scalar> center = out.center();
    out.rotation = Eigen::AngleAxis<Scalar>(angle, axis.normalized()).toRotationMatrix() * out.rotation;
    out.translation = -(out.rotation * center);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Snapshot and parameter views

template <typename Scalar>
SceneSnapshot<Scalar>::SceneSnapshot(const GaussianScene<Scalar>& scene)
    : scene_(scene),
      scales_(scene.log_scales().array().exp().matrix()),
      opacities_(scene.opacity_logits().unaryExpr([](Scalar v) { return sigmoid(v); })) {}

template <typename Scalar>
Rows3<Scalar> SceneSnapshot<Scalar>::scale_delta(const GaussianScene<Scalar>& scene) const {
  if (scene.size() != size()) throw ShapeError("scale_delta", "scene and snapshot sizes differ");
  return scene.log_scales().array().exp().matrix() - scales_;
}

template <typename Scalar>
VecX<Scalar> SceneSnapshot<Scalar>::opacity_delta(const GaussianScene<Scalar>& scene) const {
  if (scene.size() != size()) throw ShapeError("opacity_delta", "scene and snapshot sizes differ");
  return scene.opacity_logits().unaryExpr([](Scalar v) { return sigmoid(v); }) - opacities_;
}

template <typename Scalar>
SceneParams<Scalar> to_params(const GaussianScene<Scalar>& scene, bool requires_grad) {
  using Array = typename Tensor<Scalar>::Array;
  const Index n = scene.size();
  auto flat = [](const auto& m) { return Array(Eigen::Map<const Array>(m.data(), m.size())); };
  SceneParams<Scalar> p;
  p.sh_degree = scene.sh_degree();
  p.positions = Tensor<Scalar>(Shape{n, 3}, flat(scene.positions()), requires_grad);
  p.log_scales = Tensor<Scalar>(Shape{n, 3}, flat(scene.log_scales()), requires_grad);
  p.rotations = Tensor<Scalar>(Shape{n, 4}, flat(scene.rotations()), requires_grad);
  p.opacity_logits = Tensor<Scalar>(Shape{n}, flat(scene.opacity_logits()), requires_grad);
  p.sh = Tensor<Scalar>(Shape{n, scene.sh_coeffs(), 3}, flat(scene.sh()), requires_grad);
  return p;
}

template <typename Scalar>
void assign(GaussianScene<Scalar>& scene, const SceneParams<Scalar>& params) {
  const Index n = params.size();
  if (params.sh_degree != scene.sh_degree()) throw ShapeError("assign", "SH degree mismatch");
  scene.resize(n);
  auto copy = [](auto& dst, const Tensor<Scalar>& src) {
    std::memcpy(dst.data(), src.data().data(), sizeof(Scalar) * static_cast<std::size_t>(src.size()));
  };
  copy(scene.positions(), params.positions);
  copy(scene.log_scales(), params.log_scales);
  copy(scene.rotations(), params.rotations);
  copy(scene.opacity_logits(), params.opacity_logits);
  copy(scene.sh(), params.sh);
}

#define STYLEGS_INSTANTIATE_SCENE(S)                                                                     \
  template VecX<S> sh_basis(int, const Vec3<S>&);                                                        \
  template Eigen::Matrix<S, Eigen::Dynamic, 3> sh_basis_jacobian(int, const Vec3<S>&);                   \
  template Mat3<S> quaternion_to_matrix(const Vec4<S>&);                                                 \
  template Vec3<S> sh_color(const Gaussian<S>&, const Vec3<S>&);                                         \
  template class GaussianScene<S>;                                                                       \
  template std::uint64_t checksum(const GaussianScene<S>&);                                              \
  template struct Camera<S>;                                                                             \
  template Camera<S> interpolate_pose(const Camera<S>&, const Camera<S>&, S, S, std::mt19937_64*);       \
  template class SceneSnapshot<S>;                                                                       \
  template SceneParams<S> to_params(const GaussianScene<S>&, bool);                                      \
  template void assign(GaussianScene<S>&, const SceneParams<S>&);

STYLEGS_INSTANTIATE_SCENE(float)
STYLEGS_INSTANTIATE_SCENE(double)

template GaussianScene<double> GaussianScene<float>::cast<double>() const;
template GaussianScene<float> GaussianScene<double>::cast<float>() const;
template GaussianScene<float> GaussianScene<float>::cast<float>() const;
template GaussianScene<double> GaussianScene<double>::cast<double>() const;
template Camera<double> Camera<float>::cast<double>() const;
template Camera<float> Camera<double>::cast<float>() const;
template Camera<float> Camera<float>::cast<float>() const;
template Camera<double> Camera<double>::cast<double>() const;

}  // namespace stylegs
