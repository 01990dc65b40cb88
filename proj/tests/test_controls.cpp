#include "doctest.h"
#include "stylegs/controls.hpp"
#include "stylegs/synthetic.hpp"
#include "support.hpp"

using namespace stylegs;

namespace {

double iou(const Mask& a, const Mask& b) {
  const auto inter = (a.cast<int>() * b.cast<int>()).sum();
  const auto uni = ((a.cast<int>() + b.cast<int>()) > 0).cast<int>().sum();
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

Tensor<float> solid(Index h, Index w, float r, float g, float b) {
  Tensor<float>::Array a(3 * h * w);
  a.segment(0, h * w).setConstant(r);
  a.segment(h * w, h * w).setConstant(g);
  a.segment(2 * h * w, h * w).setConstant(b);
  return Tensor<float>(Shape{3, h, w}, std::move(a));
}

void paint(Tensor<float>& img, Index y, Index x, float r, float g, float b) {
  const Index h = img.dim(1), w = img.dim(2);
  auto& a = img.mutable_data();
  a[y * w + x] = r;
  a[h * w + y * w + x] = g;
  a[2 * h * w + y * w + x] = b;
}

}  // namespace

TEST_CASE("YIQ rows and round trip") {
  const Mat3<double> m = yiq_matrix();
  CHECK(std::abs(m.row(0).sum() - 1) < 1e-9);
  CHECK(std::abs(m.row(1).sum()) < 1e-9);
  CHECK(std::abs(m.row(2).sum()) < 1e-9);
  CHECK((yiq_inverse() * m - Mat3<double>::Identity()).cwiseAbs().maxCoeff() < 1e-12);

  std::mt19937_64 rng(1);
  const auto rgb = testing::random_tensor<double>({3, 7, 9}, rng, 0, 1);
  const auto back = yiq_to_rgb(rgb_to_yiq(rgb));
  CHECK((back.data() - rgb.data()).abs().maxCoeff() < 1e-6);

  const auto gray = rgb_to_yiq(Tensor<double>::full({3, 2, 2}, 0.4));
  for (Index p = 0; p < 4; ++p) {
    CHECK(gray[p] == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(std::abs(gray[4 + p]) < 1e-6);
    CHECK(std::abs(gray[8 + p]) < 1e-6);
  }
  const auto y = luminance(rgb);
  CHECK(y.shape() == Shape{1, 7, 9});
  CHECK(y[5] == doctest::Approx(0.299 * rgb[5] + 0.587 * rgb[63 + 5] + 0.114 * rgb[126 + 5]).epsilon(1e-12));
  const auto y3 = luminance_rgb(rgb);
  CHECK(y3.shape() == rgb.shape());
  CHECK(y3[63 + 5] == y[5]);
}

TEST_CASE("flood fill segmenter") {
  SUBCASE("uniform image fills everything") {
    const PixelPoint p{3, 2};
    const Mask m = flood_fill_segment(solid(6, 8, 0.2f, 0.4f, 0.6f), std::span<const PixelPoint>(&p, 1));
    CHECK(m.cast<int>().sum() == 48);
  }
  SUBCASE("two tones split at a column") {
    auto img = solid(6, 8, 0.1f, 0.1f, 0.1f);
    for (Index y = 0; y < 6; ++y) {
      for (Index x = 5; x < 8; ++x) paint(img, y, x, 0.9f, 0.2f, 0.1f);
    }
    const PixelPoint p{1, 1};
    const Mask m = flood_fill_segment(img, std::span<const PixelPoint>(&p, 1));
    CHECK(m.cast<int>().sum() == 30);
    CHECK(m(0, 4) == 1);
    CHECK(m(0, 5) == 0);
    const PixelPoint q{6, 5};
    CHECK(flood_fill_segment(img, std::span<const PixelPoint>(&q, 1)).cast<int>().sum() == 18);
  }
  SUBCASE("a one-pixel island and diagonal neighbors") {
    auto img = solid(5, 5, 0, 0, 0);
    paint(img, 2, 2, 1, 1, 1);
    paint(img, 3, 3, 1, 1, 1);  // touches only diagonally
    const PixelPoint p{2, 2};
    const Mask m = flood_fill_segment(img, std::span<const PixelPoint>(&p, 1));
    CHECK(m.cast<int>().sum() == 1);
    CHECK(m(2, 2) == 1);
    const std::vector<PixelPoint> both{{2, 2}, {3, 3}};
    CHECK(flood_fill_segment(img, both).cast<int>().sum() == 2);
  }
  SUBCASE("the threshold is per channel and strict") {
    auto img = solid(1, 3, 0.5f, 0.5f, 0.5f);
    paint(img, 0, 1, 0.5f, 0.54f, 0.5f);
    paint(img, 0, 2, 0.5f, 0.5f, 0.56f);
    const PixelPoint p{0, 0};
    const Mask m = flood_fill_segment(img, std::span<const PixelPoint>(&p, 1));
    CHECK(m(0, 1) == 1);
    CHECK(m(0, 2) == 0);
  }
}

TEST_CASE("spiral offsets walk square rings outward") {
  const auto s = spiral_offsets(4, 2);
  REQUIRE(s.size() == 8 + 16);
  CHECK(s[0] == PixelPoint{-2, -2});
  CHECK(s[1] == PixelPoint{0, -2});
  CHECK(s[8] == PixelPoint{-4, -4});
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::max(std::abs(s[i].x), std::abs(s[i].y)) == 2);
}

TEST_CASE("tracking a static scene repeats the first mask") {
  SquareSequenceOptions o;
  o.frames = 5;
  o.step = 0;
  const auto seq = translating_square(o);
  const PixelPoint seed{o.x0 + 5, o.y0 + 5};
  const auto track = track_masks(std::span<const Tensor<float>>(seq.views), 0, std::span<const PixelPoint>(&seed, 1),
                                 flood_fill_segmenter());
  for (const auto& m : track.masks) CHECK((m == track.masks[0]).all());
}

TEST_CASE("tracking a translating square matches the analytic masks") {
  const auto seq = translating_square({});
  REQUIRE(seq.views.size() == 20);
  const PixelPoint seed{4 + 6, 20 + 6};
  const auto track = track_masks(std::span<const Tensor<float>>(seq.views), 0, std::span<const PixelPoint>(&seed, 1),
                                 flood_fill_segmenter());
  REQUIRE(track.masks.size() == 20);
  const double area0 = track.masks[0].cast<int>().sum();
  for (std::size_t v = 0; v < 20; ++v) {
    CAPTURE(v);
    CHECK(iou(track.masks[v], seq.truth[v]) == 1.0);
    CHECK(std::abs(track.masks[v].cast<int>().sum() - area0) <= 0.1 * area0);
  }
  // Same inputs, same output.
  const auto again = track_masks(std::span<const Tensor<float>>(seq.views), 0, std::span<const PixelPoint>(&seed, 1),
                                 flood_fill_segmenter());
  CHECK(again.points == track.points);

  // Starting from the last view and walking back works too.
  const PixelPoint last{seq.corners.back().x + 6, seq.corners.back().y + 6};
  const auto back = track_masks(std::span<const Tensor<float>>(seq.views), 19, std::span<const PixelPoint>(&last, 1),
                                flood_fill_segmenter());
  for (std::size_t v = 0; v < 20; ++v) CHECK(iou(back.masks[v], seq.truth[v]) == 1.0);
}

TEST_CASE("a jump inside the search radius recovers, beyond it fails at that view") {
  SquareSequenceOptions o;
  o.frames = 8;
  o.offsets = {{4, 20}, {6, 20}, {8, 20}, {18, 20}, {20, 20}, {22, 20}, {24, 20}, {26, 20}};
  const PixelPoint seed{10, 26};
  {
    const auto seq = translating_square(o);
    const auto track = track_masks(std::span<const Tensor<float>>(seq.views), 0,
                                   std::span<const PixelPoint>(&seed, 1), flood_fill_segmenter());
    for (std::size_t v = 0; v < 8; ++v) CHECK(iou(track.masks[v], seq.truth[v]) == 1.0);
  }
  o.offsets[5] = {50, 44};
  o.offsets[6] = {50, 44};
  o.offsets[7] = {50, 44};
  const auto seq = translating_square(o);
  try {
    (void)track_masks(std::span<const Tensor<float>>(seq.views), 0, std::span<const PixelPoint>(&seed, 1),
                      flood_fill_segmenter());
    FAIL("expected TrackingError");
  } catch (const TrackingError& e) {
    CHECK(e.view() == 5);
  }
}

TEST_CASE("resize_mask_nearest") {
  Mask m = Mask::Zero(4, 4);
  m(0, 0) = m(3, 3) = 1;
  const Mask up = resize_mask_nearest(m, 8, 8);
  CHECK(up.cast<int>().sum() == 8);
  CHECK(up(1, 1) == 1);
  CHECK(up(7, 6) == 1);
  const Mask down = resize_mask_nearest(up, 4, 4);
  CHECK((down == m).all());
}
