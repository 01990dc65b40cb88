#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <random>
#include <span>

#include "stylegs/tensor.hpp"

namespace stylegs {

template <typename Scalar> using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar> using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar> using Vec4 = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar> using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
template <typename Scalar> using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar> using Mat4 = Eigen::Matrix<Scalar, 4, 4>;
template <typename Scalar> using RowsX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar> using Rows3 = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
template <typename Scalar> using Rows4 = Eigen::Matrix<Scalar, Eigen::Dynamic, 4, Eigen::RowMajor>;
template <typename Scalar> using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Zeroth-order real SH constant.
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr int kMaxShDegree = 3;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

template <typename Scalar>
Scalar logit(Scalar p) {
  return std::log(p / (Scalar(1) - p));
}

/// Real SH basis values Y_k(dir) for k < (degree+1)^2, 3DGS sign convention.
template <typename Scalar>
VecX<Scalar> sh_basis(int degree, const Vec3<Scalar>& dir);

/// d Y_k / d dir, treating the basis as a polynomial in (x, y, z). Shape [K,3].
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 3> sh_basis_jacobian(int degree, const Vec3<Scalar>& dir);

/// Rotation matrix of the unit quaternion q / |q|, q stored (w, x, y, z).
template <typename Scalar>
Mat3<Scalar> quaternion_to_matrix(const Vec4<Scalar>& q);

/// One anisotropic Gaussian in raw (pre-activation) parameters.
template <typename Scalar>
struct Gaussian {
  Vec3<Scalar> position = Vec3<Scalar>::Zero();
  Vec3<Scalar> log_scale = Vec3<Scalar>::Zero();
  Vec4<Scalar> rotation = Vec4<Scalar>(1, 0, 0, 0);
  Scalar opacity_logit = 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> sh = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>::Zero(1, 3);
  Vec3<Scalar> normal = Vec3<Scalar>::Zero();

  Vec3<Scalar> scale() const { return log_scale.array().exp(); }
  Scalar opacity() const { return sigmoid(opacity_logit); }
};

/// rgb = max(0.5 + sum_k sh_k * Y_k(view_dir), 0)
template <typename Scalar>
Vec3<Scalar> sh_color(const Gaussian<Scalar>& g, const Vec3<Scalar>& view_dir);

/// Ordered Gaussians in structure-of-arrays layout. Row i of every block
/// belongs to Gaussian i; SH row i holds (deg+1)^2 coefficients with the
/// three channels interleaved (coefficient k, channel c at column 3k+c).
template <typename Scalar>
class GaussianScene {
 public:
  explicit GaussianScene(int sh_degree = 0);

  int sh_degree() const { return sh_degree_; }
  int sh_coeffs() const { return sh_coeff_count(sh_degree_); }
  Index size() const { return positions_.rows(); }
  bool empty() const { return size() == 0; }

  void push_back(const Gaussian<Scalar>& g);
  Gaussian<Scalar> gaussian(Index i) const;

  /// Keeps the listed rows, in the listed order.
  void keep(std::span<const Index> rows);

  Vec3<Scalar> activated_scale(Index i) const { return log_scales_.row(i).transpose().array().exp(); }
  Scalar activated_opacity(Index i) const { return sigmoid(opacity_logits_[i]); }

  Rows3<Scalar>& positions() { return positions_; }
  const Rows3<Scalar>& positions() const { return positions_; }
  Rows3<Scalar>& log_scales() { return log_scales_; }
  const Rows3<Scalar>& log_scales() const { return log_scales_; }
  Rows4<Scalar>& rotations() { return rotations_; }
  const Rows4<Scalar>& rotations() const { return rotations_; }
  VecX<Scalar>& opacity_logits() { return opacity_logits_; }
  const VecX<Scalar>& opacity_logits() const { return opacity_logits_; }
  RowsX<Scalar>& sh() { return sh_; }
  const RowsX<Scalar>& sh() const { return sh_; }
  Rows3<Scalar>& normals() { return normals_; }
  const Rows3<Scalar>& normals() const { return normals_; }

  /// Allocates n zero-initialised Gaussians (identity rotation).
  void resize(Index n);

  template <typename Other>
  GaussianScene<Other> cast() const;

 private:
  int sh_degree_;
  Rows3<Scalar> positions_;
  Rows3<Scalar> log_scales_;
  Rows4<Scalar> rotations_;
  VecX<Scalar> opacity_logits_;
  RowsX<Scalar> sh_;
  Rows3<Scalar> normals_;
};

/// FNV-1a over the raw bytes of every parameter block.
template <typename Scalar>
std::uint64_t checksum(const GaussianScene<Scalar>& scene);

/// Pinhole camera with a world-to-camera pose. Camera looks down +z with
/// +x right and +y down; pixel (x, y) is sampled at (x + 0.5, y + 0.5).
template <typename Scalar>
struct Camera {
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();
  Scalar fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 8, height = 8;
  Scalar near_clip = Scalar(0.01);

  Vec3<Scalar> center() const { return -(rotation.transpose() * translation); }
  Vec3<Scalar> to_camera(const Vec3<Scalar>& world) const { return rotation * world + translation; }

  /// Throws ConfigError on fx, fy <= 0 or an image side below 8 pixels.
  void validate() const;

  /// Same pose, intrinsics rescaled to a new resolution.
  Camera resized(int new_width, int new_height) const;

  static Camera from_cam_to_world(const Mat4<Scalar>& cam_to_world, Scalar fx, Scalar fy, Scalar cx, Scalar cy,
                                  int width, int height);
  Mat4<Scalar> cam_to_world() const;

  template <typename Other>
  Camera<Other> cast() const;
};

/// Slerps rotation and lerps the camera center between two cameras that share
/// intrinsics. A positive `jitter_radians` adds a random rotation about a
/// random axis of angle up to that bound, drawn from `rng`.
template <typename Scalar>
Camera<Scalar> interpolate_pose(const Camera<Scalar>& a, const Camera<Scalar>& b, Scalar t, Scalar jitter_radians = 0,
                                std::mt19937_64* rng = nullptr);

/// Frozen copy of a scene together with its activated scales and opacities.
template <typename Scalar>
class SceneSnapshot {
 public:
  explicit SceneSnapshot(const GaussianScene<Scalar>& scene);

  const GaussianScene<Scalar>& scene() const { return scene_; }
  const Rows3<Scalar>& scales() const { return scales_; }
  const VecX<Scalar>& opacities() const { return opacities_; }
  Index size() const { return scene_.size(); }

  /// Activated-scale change of `scene` relative to the snapshot, [N,3].
  Rows3<Scalar> scale_delta(const GaussianScene<Scalar>& scene) const;
  /// Activated-opacity change, [N].
  VecX<Scalar> opacity_delta(const GaussianScene<Scalar>& scene) const;

 private:
  GaussianScene<Scalar> scene_;
  Rows3<Scalar> scales_;
  VecX<Scalar> opacities_;
};

template <typename Scalar>
SceneSnapshot<Scalar> snapshot(const GaussianScene<Scalar>& scene) {
  return SceneSnapshot<Scalar>(scene);
}

/// Differentiable view of a scene's raw parameters as graph leaves.
template <typename Scalar>
struct SceneParams {
  int sh_degree = 0;
  Tensor<Scalar> positions;       // [N,3]
  Tensor<Scalar> log_scales;      // [N,3]
  Tensor<Scalar> rotations;       // [N,4]
  Tensor<Scalar> opacity_logits;  // [N]
  Tensor<Scalar> sh;              // [N,K,3]

  Index size() const { return positions.defined() ? positions.dim(0) : 0; }
  std::vector<Tensor<Scalar>*> all() { return {&positions, &log_scales, &rotations, &opacity_logits, &sh}; }
};

template <typename Scalar>
SceneParams<Scalar> to_params(const GaussianScene<Scalar>& scene, bool requires_grad);

/// Copies parameter values back into `scene` (sizes must agree).
template <typename Scalar>
void assign(GaussianScene<Scalar>& scene, const SceneParams<Scalar>& params);

}  // namespace stylegs
