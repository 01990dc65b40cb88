#pragma once

#include <cstdint>
#include <vector>

#include "stylegs/controls.hpp"
#include "stylegs/image_io.hpp"
#include "stylegs/scene.hpp"

namespace stylegs {

/// Camera at `eye` looking at `target`, world +y pointing down in the image.
template <typename Scalar>
Camera<Scalar> look_at(const Vec3<Scalar>& eye, const Vec3<Scalar>& target, Scalar fx, int width, int height);

struct ToySceneOptions {
  int plane_side = 26;     // background grid is plane_side^2 Gaussians
  int sphere_count = 420;
  int box_count = 380;
  int sh_degree = 1;
  std::uint64_t seed = 7;
};

/// Forward-facing test scene: a textured backdrop at z = 5 and two colored
/// objects in front of it, centered on the +z axis. 1476 Gaussians by default.
GaussianScene<float> toy_scene(const ToySceneOptions& options = {});

/// `count` cameras on a horizontal arc around the origin, all looking at
/// (0, 0, 4), with focal length `fx` and the principal point at the center.
std::vector<Camera<float>> arc_cameras(int count, int width = 96, int height = 96, float fx = 100.0f,
                                       float arc_degrees = 24.0f);

std::vector<Tensor<float>> render_views(const GaussianScene<float>& scene, const std::vector<Camera<float>>& cams);

/// Starting point for fit(): the given positions plus Gaussian noise of
/// `position_noise`, uniform gray color, isotropic scale `initial_scale`,
/// opacity 0.5 and identity rotation.
GaussianScene<float> perturbed_init(const GaussianScene<float>& reference, float position_noise, float initial_scale,
                                    std::uint64_t seed);

/// Saturated diagonal stripes crossed by dots; strongly textured at the
/// scales of the second and third VGG blocks.
Tensor<float> style_pattern(Index height, Index width, std::uint64_t seed = 3);

/// A light square of side `side` on a dark background, moving `step` pixels
/// to the right per frame starting at (x0, y0). Positions come from
/// `offsets` when it is nonempty, overriding the step.
struct SquareSequence {
  std::vector<Tensor<float>> views;
  std::vector<Mask> truth;
  std::vector<PixelPoint> corners;
};

struct SquareSequenceOptions {
  int frames = 20;
  int width = 64;
  int height = 64;
  int side = 12;
  int x0 = 4;
  int y0 = 20;
  int step = 2;
  std::vector<PixelPoint> offsets;  // explicit top-left corners, overrides step
};

SquareSequence translating_square(const SquareSequenceOptions& options);

}  // namespace stylegs
