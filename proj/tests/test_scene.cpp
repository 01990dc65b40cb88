#include <cmath>
#include <fstream>

#include "doctest.h"
#include "stylegs/ply.hpp"
#include "stylegs/scene.hpp"
#include "support.hpp"

using namespace stylegs;

namespace {

constexpr double kC0 = 0.28209479177387814;

void write_raw_ply(const std::filesystem::path& path, const std::vector<std::string>& props,
                   const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  out << "ply\nformat binary_little_endian 1.0\nelement vertex 1\n";
  for (const auto& p : props) out << "property float " << p << "\n";
  out << "end_header\n";
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
}

std::vector<std::string> base_props(int rest) {
  std::vector<std::string> p{"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
  for (int i = 0; i < rest; ++i) p.push_back("f_rest_" + std::to_string(i));
  for (const char* n : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}) {
    p.emplace_back(n);
  }
  return p;
}

Camera<double> camera_with_yaw(double degrees) {
  Camera<double> c = testing::axis_camera<double>(16, 16, 20.0);
  c.rotation = Eigen::AngleAxisd(degrees * M_PI / 180, Vec3<double>::UnitZ()).toRotationMatrix();
  c.translation = {0.3, -0.2, 1.0};
  return c;
}

}  // namespace

TEST_CASE("PLY: degree 0 and degree 3 layouts") {
  const auto dir = testing::scratch_dir("ply");
  const auto p0 = dir / "d0.ply";
  auto props = base_props(0);
  write_raw_ply(p0, props, std::vector<float>(props.size(), 0.25f));
  const auto s0 = load_ply<float>(p0);
  CHECK(s0.size() == 1);
  CHECK(s0.sh_degree() == 0);
  CHECK(s0.gaussian(0).sh.rows() == 1);
  CHECK(s0.gaussian(0).sh.cols() == 3);

  const auto p3 = dir / "d3.ply";
  props = base_props(45);
  write_raw_ply(p3, props, std::vector<float>(props.size(), 0.5f));
  const auto s3 = load_ply<float>(p3);
  CHECK(s3.sh_degree() == 3);
  CHECK(s3.gaussian(0).sh.rows() == 16);
}

TEST_CASE("PLY: a missing rot_3 is a parse error naming the property") {
  const auto dir = testing::scratch_dir("ply_missing");
  auto props = base_props(0);
  props.pop_back();
  write_raw_ply(dir / "bad.ply", props, std::vector<float>(props.size(), 0.0f));
  try {
    (void)load_ply<float>(dir / "bad.ply");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.field() == "rot_3");
  }
}

TEST_CASE("PLY round trip is bit-exact for every float payload") {
  std::mt19937_64 rng(1);
  for (int degree : {0, 1, 3}) {
    auto scene = testing::random_scene<float>(23, degree, rng);
    scene.normals().setRandom();
    const auto path = testing::scratch_dir("ply_rt") / "s.ply";
    save_ply(scene, path);
    const auto back = load_ply<float>(path);
    CHECK(back.sh_degree() == degree);
    CHECK(checksum(back) == checksum(scene));
    CHECK((back.normals().array() == scene.normals().array()).all());
  }
}

TEST_CASE("sh_color follows the DC convention") {
  Gaussian<double> g;
  g.sh = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(1, 3);
  const Vec3<double> dir(0, 0, 1);
  CHECK(sh_color(g, dir).isApprox(Vec3<double>(0.5, 0.5, 0.5)));

  g.sh(0, 0) = 0.5 / kC0;
  const auto rgb = sh_color(g, dir);
  CHECK(rgb[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rgb[1] == doctest::Approx(0.5));

  g.sh(0, 1) = -5;  // clamped at zero
  CHECK(sh_color(g, dir)[1] == 0);
}

TEST_CASE("sh_color is view independent with only DC coefficients") {
  Gaussian<double> g;
  g.sh = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(16, 3);
  g.sh.row(0) << 0.3, -0.2, 0.9;
  const auto a = sh_color(g, Vec3<double>(0, 0, 1));
  const auto b = sh_color(g, Vec3<double>(0, 0, -1));
  const auto c = sh_color(g, Vec3<double>(0.6, 0, 0.8));
  CHECK(a == b);
  CHECK(a == c);
  g.sh(1, 0) = 0.4;
  CHECK(sh_color(g, Vec3<double>(0, 1, 0))[0] != sh_color(g, Vec3<double>(0, -1, 0))[0]);
}

TEST_CASE("interpolate_pose endpoints, midpoint and orthonormality") {
  const auto a = camera_with_yaw(0), b = camera_with_yaw(90);
  const auto at0 = interpolate_pose(a, b, 0.0);
  const auto at1 = interpolate_pose(a, b, 1.0);
  CHECK(at0.rotation == a.rotation);
  CHECK(at0.translation == a.translation);
  CHECK(at1.rotation == b.rotation);
  CHECK(at1.translation == b.translation);

  const auto mid = interpolate_pose(a, b, 0.5);
  const Mat3<double> expected = Eigen::AngleAxisd(M_PI / 4, Vec3<double>::UnitZ()).toRotationMatrix();
  CHECK((mid.rotation - expected).cwiseAbs().maxCoeff() < 1e-12);

  std::mt19937_64 rng(3);
  for (double t : {0.1, 0.37, 0.8}) {
    const auto c = interpolate_pose(a, b, t, 2.0 * M_PI / 180, &rng);
    CHECK((c.rotation * c.rotation.transpose() - Mat3<double>::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(c.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("snapshot is independent of later edits and reports deltas") {
  std::mt19937_64 rng(4);
  auto scene = testing::random_scene<double>(10, 0, rng);
  const SceneSnapshot<double> snap(scene);
  CHECK((snap.scale_delta(scene).array() == 0).all());
  CHECK((snap.opacity_delta(scene).array() == 0).all());

  scene.positions().setZero();
  scene.opacity_logits()[3] += 1;
  CHECK(snap.scene().positions().cwiseAbs().maxCoeff() > 0);
  const auto d = snap.opacity_delta(scene);
  for (Index i = 0; i < d.size(); ++i) {
    if (i == 3) {
      CHECK(d[i] == doctest::Approx(sigmoid(scene.opacity_logits()[3]) - sigmoid(scene.opacity_logits()[3] - 1)));
    } else {
      CHECK(d[i] == 0);
    }
  }
}

TEST_CASE("activations stay in range for extreme raw values") {
  GaussianScene<double> scene(0);
  Gaussian<double> g;
  g.log_scale = {-30, 0, 30};
  g.opacity_logit = 40;
  scene.push_back(g);
  const auto s = scene.activated_scale(0);
  CHECK(s.minCoeff() > 0);
  CHECK(std::isfinite(s.maxCoeff()));
  CHECK(scene.activated_opacity(0) <= 1);
  CHECK(scene.activated_opacity(0) > 0);
}

TEST_CASE("camera validation and params round trip") {
  Camera<float> bad;
  bad.fx = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  std::mt19937_64 rng(5);
  const auto scene = testing::random_scene<float>(7, 1, rng);
  GaussianScene<float> copy(1);
  copy.resize(7);
  assign(copy, to_params(scene, false));
  CHECK(checksum(copy) == checksum(scene));
  const auto c = Camera<double>::from_cam_to_world(camera_with_yaw(30).cam_to_world(), 20, 20, 8, 8, 16, 16);
  CHECK((c.rotation - camera_with_yaw(30).rotation).cwiseAbs().maxCoeff() < 1e-12);
}
