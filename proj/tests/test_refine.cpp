#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "stylegs/colorxfer.hpp"
#include "stylegs/gradcheck.hpp"
#include "stylegs/refine.hpp"
#include "support.hpp"

using namespace stylegs;

namespace {

// Direct loop SSIM with a zero-padded 11x11 window, for comparison.
double ssim_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  const Index c = a.dim(0), h = a.dim(1), w = a.dim(2);
  double g[11], total = 0;
  for (int i = 0; i < 11; ++i) total += g[i] = std::exp(-(i - 5) * (i - 5) / 4.5);
  double sum = 0;
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
        for (int dy = -5; dy <= 5; ++dy) {
          for (int dx = -5; dx <= 5; ++dx) {
            const Index yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
            const double k = g[dy + 5] * g[dx + 5] / (total * total);
            const double va = a[(ch * h + yy) * w + xx], vb = b[(ch * h + yy) * w + xx];
            ma += k * va;
            mb += k * vb;
            aa += k * va * va;
            bb += k * vb * vb;
            ab += k * va * vb;
          }
        }
        const double c1 = 1e-4, c2 = 9e-4;
        sum += (2 * ma * mb + c1) * (2 * (ab - ma * mb) + c2) /
               ((ma * ma + mb * mb + c1) * (aa - ma * ma + bb - mb * mb + c2));
      }
    }
  }
  return sum / double(c * h * w);
}

// Rank-based removal set: Gaussian i is among the top `take` of an ordering
// when fewer than `take` others beat it, index ascending on ties.
std::vector<Index> floater_oracle(const GaussianScene<double>& s, double k_opacity, double k_scale) {
  const Index n = s.size();
  const auto take_o = static_cast<Index>(std::ceil(k_opacity * n / 100.0 - 1e-9));
  const auto take_s = static_cast<Index>(std::ceil(k_scale * n / 100.0 - 1e-9));
  std::vector<Index> out;
  for (Index i = 0; i < n; ++i) {
    Index rank_o = 0, rank_s = 0;
    for (Index j = 0; j < n; ++j) {
      const double oi = s.activated_opacity(i), oj = s.activated_opacity(j);
      const double si = s.activated_scale(i).maxCoeff(), sj = s.activated_scale(j).maxCoeff();
      if (oj < oi || (oj == oi && j < i)) ++rank_o;
      if (sj > si || (sj == si && j < i)) ++rank_s;
    }
    if (rank_o < take_o || rank_s < take_s) out.push_back(i);
  }
  return out;
}

// Scene whose opacities and scales take only a handful of values.
GaussianScene<double> tied_scene(int n, std::mt19937_64& rng) {
  auto s = testing::random_scene<double>(n, 0, rng);
  std::uniform_int_distribution<int> level(0, 3);
  for (Index i = 0; i < n; ++i) {
    s.opacity_logits()[i] = -1.0 + 0.5 * level(rng);
    s.log_scales().row(i).setConstant(-2.5);
    s.log_scales()(i, level(rng) % 3) = -2.0 + 0.25 * level(rng);
  }
  return s;
}

}  // namespace

TEST_CASE("d_ssim hand cases") {
  std::mt19937_64 rng(1);
  const auto a = testing::random_tensor<double>({3, 12, 12}, rng, 0, 1);
  CHECK(std::abs(d_ssim(a, a).item()) < 1e-12);

  // Constants 0 and 1: in the interior SSIM = C1 / (1 + C1); the zero-padded
  // border adds a little variance to the ones image.
  const auto zero = Tensor<double>::zeros({1, 32, 32}), one = Tensor<double>::full({1, 32, 32}, 1.0);
  const double d = d_ssim(zero, one).item();
  CHECK(d == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(d == doctest::Approx((1 - ssim_oracle(zero, one)) / 2).epsilon(1e-12));
  CHECK_THROWS_AS(d_ssim(zero, Tensor<double>::zeros({1, 32, 31})), ShapeError);
}

TEST_CASE("d_ssim agrees with a direct loop on random images") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 3; ++trial) {
    const auto a = testing::random_tensor<double>({3, 14, 17}, rng, 0, 1);
    const auto b = testing::random_tensor<double>({3, 14, 17}, rng, 0, 1);
    CHECK(d_ssim(a, b).item() == doctest::Approx((1 - ssim_oracle(a, b)) / 2).epsilon(1e-10));
  }
}

TEST_CASE("d_ssim gradient matches central differences") {
  std::mt19937_64 rng(3);
  const auto b = testing::random_tensor<double>({3, 16, 16}, rng, 0, 1);
  const auto r = finite_difference_check<double>([&](const Tensor<double>& x) { return d_ssim(x, b); },
                                                 testing::random_tensor<double>({3, 16, 16}, rng, 0, 1, true), 1e-4);
  CHECK(r.max_rel_error < 1e-5);
  CHECK(r.nan_count == 0);
}

TEST_CASE("reconstruction_loss examples") {
  std::mt19937_64 rng(4);
  const auto t = testing::random_tensor<double>({3, 16, 16}, rng, 0.2, 0.8);
  CHECK(reconstruction_loss(t, t, 0.2).item() == doctest::Approx(0).scale(1));
  const auto r = testing::random_tensor<double>({3, 16, 16}, rng, 0, 1);
  CHECK(reconstruction_loss(r, t, 0.0).item() == doctest::Approx(mean(abs(r - t)).item()).epsilon(1e-14));
  const auto off = shift(t, 0.1);
  CHECK(reconstruction_loss(off, t, 0.2).item() ==
        doctest::Approx(0.8 * 0.1 + 0.2 * d_ssim(off, t).item()).epsilon(1e-12));
  CHECK_THROWS_AS(reconstruction_loss(r, Tensor<double>::zeros({3, 16, 15}), 0.2), ShapeError);
}

TEST_CASE("filter policy validation") {
  CHECK_NOTHROW(FilterPolicy{}.validate());
  CHECK_THROWS_AS((FilterPolicy{50, 8, 100}.validate()), ConfigError);
  CHECK_THROWS_AS((FilterPolicy{5, -1, 100}.validate()), ConfigError);
  CHECK_THROWS_AS((FilterPolicy{5, 8, 0}.validate()), ConfigError);
}

TEST_CASE("filter: the five lowest opacities out of 100") {
  std::mt19937_64 rng(5);
  auto s = testing::random_scene<double>(100, 0, rng);
  for (Index i = 0; i < 100; ++i) s.opacity_logits()[i] = 0.01 * double((i * 37) % 100) - 0.5;
  GaussianScene<double> filtered = s;
  const auto r = filter_floaters(filtered, FilterPolicy{5, 0, 100});
  CHECK(r.removed == 5);
  CHECK(filtered.size() == 95);
  std::vector<Index> lowest;
  for (Index i = 0; i < 100; ++i) {
    if ((i * 37) % 100 < 5) lowest.push_back(i);
  }
  std::sort(lowest.begin(), lowest.end());
  CHECK(floater_indices(s, FilterPolicy{5, 0, 100}) == lowest);
}

TEST_CASE("filter equals the rank oracle on random scenes with ties") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> pct(0, 30);
  std::uniform_int_distribution<int> size(1, 120);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = trial % 2 == 0 ? tied_scene(size(rng), rng) : testing::random_scene<double>(size(rng), 0, rng);
    const FilterPolicy policy{trial % 10 == 0 ? 5.0 : pct(rng), trial % 10 == 0 ? 8.0 : pct(rng), 100};
    CAPTURE(trial);
    const auto expected = floater_oracle(s, policy.k_opacity, policy.k_scale);
    REQUIRE(floater_indices(s, policy) == expected);
    const auto before = s;
    const auto r = filter_floaters(s, policy);
    if (static_cast<Index>(expected.size()) == before.size()) {
      CHECK(r.aborted);
      CHECK(checksum(s) == checksum(before));
      continue;
    }
    CHECK(r.removed == static_cast<Index>(expected.size()));
    CHECK(s.size() == before.size() - r.removed);
    // Survivors keep their order and content.
    REQUIRE(static_cast<Index>(r.kept.size()) == s.size());
    for (std::size_t k = 0; k < r.kept.size(); ++k) {
      CHECK(std::find(expected.begin(), expected.end(), r.kept[k]) == expected.end());
      if (k > 0) CHECK(r.kept[k - 1] < r.kept[k]);
      CHECK(s.positions().row(Index(k)) == before.positions().row(r.kept[k]));
    }
  }
}

TEST_CASE("filter: overlapping selections and the abort guard") {
  std::mt19937_64 rng(7);
  auto s = testing::random_scene<double>(20, 0, rng);
  // The largest Gaussians are also the faintest, so the two sets coincide.
  for (Index i = 0; i < 20; ++i) {
    s.log_scales().row(i).setConstant(-3.0 + 0.05 * double(i));
    s.opacity_logits()[i] = 1.0 - 0.1 * double(i);
  }
  const auto r = filter_floaters(s, FilterPolicy{10, 20, 100});
  CHECK(r.removed == 4);  // max(2, 4)
  CHECK(s.size() == 16);

  auto ten = testing::random_scene<double>(10, 0, rng);
  for (Index i = 0; i < 10; ++i) {
    ten.log_scales().row(i).setConstant(-3.0 + 0.1 * double(i));
    ten.opacity_logits()[i] = 0.1 * double(i);  // faintest are the smallest
  }
  const auto before = checksum(ten);
  // k = 49.9% of 10 rounds up to 5 each, and the two halves are disjoint.
  const auto abort = filter_floaters(ten, FilterPolicy{49.9, 49.9, 100});
  CHECK(abort.aborted);
  CHECK(abort.removed == 0);
  CHECK(checksum(ten) == before);
  GaussianScene<double> empty(0);
  CHECK_THROWS_AS(filter_floaters(empty, FilterPolicy{}), ConfigError);
}

TEST_CASE("finetune touches only color and filters on schedule") {
  std::mt19937_64 rng(8);
  auto scene = testing::random_scene<float>(50, 1, rng);
  std::vector<Camera<float>> cams;
  for (int v = 0; v < 3; ++v) {
    auto cam = testing::axis_camera<float>(24, 24, 24.0f);
    cam.translation = {0.1f * float(v - 1), 0, 0};
    cams.push_back(cam);
  }
  ColorTransform<float> warm;
  warm.A = Mat3<float>(Vec3<float>(0.9f, 0.7f, 0.5f).asDiagonal());
  warm.b = {0.1f, 0.05f, 0.0f};
  std::vector<Tensor<float>> targets;
  for (const auto& cam : cams) targets.push_back(recolor_image(rasterize(scene, cam).color, warm));

  SUBCASE("zero iterations leaves the scene alone") {
    const auto before = checksum(scene);
    FinetuneOptions opt;
    opt.iterations = 0;
    const auto log = finetune(scene, std::span<const Tensor<float>>(targets), std::span<const Camera<float>>(cams), opt);
    CHECK(log.losses.empty());
    CHECK(log.filter_passes.empty());
    CHECK(checksum(scene) == before);
  }
  SUBCASE("200 iterations with period 100") {
    const auto before = scene;
    FinetuneOptions opt;
    long calls = 0;
    const auto log = finetune(scene, std::span<const Tensor<float>>(targets), std::span<const Camera<float>>(cams), opt,
                              [&](long, double) { ++calls; });
    CHECK(calls == 200);
    REQUIRE(log.filter_passes.size() == 2);
    CHECK(log.filter_passes[0].iteration == 100);
    CHECK(log.filter_passes[1].iteration == 200);
    // ceil(8% of 50) + ceil(5% of 50) = 4 + 3, minus any overlap.
    CHECK(log.filter_passes[0].removed >= 4);
    CHECK(log.filter_passes[0].removed <= 7);
    CHECK(scene.size() == 50 - log.filter_passes[0].removed - log.filter_passes[1].removed);
    CHECK(scene.size() <= before.size());

    // Replay the removals on a copy to line survivors up with the originals.
    auto shadow = before;
    filter_floaters(shadow, opt.policy);
    filter_floaters(shadow, opt.policy);
    REQUIRE(shadow.size() == scene.size());
    CHECK((shadow.positions().array() == scene.positions().array()).all());
    CHECK((shadow.log_scales().array() == scene.log_scales().array()).all());
    CHECK((shadow.rotations().array() == scene.rotations().array()).all());
    CHECK((shadow.opacity_logits().array() == scene.opacity_logits().array()).all());
    CHECK_FALSE((shadow.sh().array() == scene.sh().array()).all());

    auto head = std::accumulate(log.losses.begin(), log.losses.begin() + 10, 0.0);
    auto tail = std::accumulate(log.losses.end() - 10, log.losses.end(), 0.0);
    CHECK(tail < head);
  }
}
