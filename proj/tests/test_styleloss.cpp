#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "stylegs/controls.hpp"
#include "stylegs/gradcheck.hpp"
#include "stylegs/styleloss.hpp"
#include "support.hpp"

using namespace stylegs;
using TD = Tensor<double>;

namespace {

const ConvNetWeights<double>& vgg64() {
  static const auto w = ConvNetWeights<double>::from_sgsw(synthetic_vgg_weights(0));
  return w;
}

// Plain double loop over every (render, style) pair.
template <typename S>
S nnfm_oracle(const Tensor<S>& r, const Tensor<S>& s, const Mask* rm = nullptr, const Mask* sm = nullptr) {
  const Index c = r.dim(0), n = r.dim(1) * r.dim(2), m = s.dim(1) * s.dim(2);
  S total = 0;
  Index count = 0;
  for (Index i = 0; i < n; ++i) {
    if (rm != nullptr && rm->data()[i] == 0) continue;
    S best = std::numeric_limits<S>::infinity();
    for (Index j = 0; j < m; ++j) {
      if (sm != nullptr && sm->data()[j] == 0) continue;
      S dot = 0, aa = 0, bb = 0;
      for (Index k = 0; k < c; ++k) {
        const S x = r[k * n + i], y = s[k * m + j];
        dot += x * y;
        aa += x * x;
        bb += y * y;
      }
      best = std::min(best, S(1) - dot / (std::sqrt(aa) * std::sqrt(bb) + S(1e-8)));
    }
    total += best;
    ++count;
  }
  return total / S(count);
}

Mask random_mask(Index h, Index w, std::mt19937_64& rng) {
  std::bernoulli_distribution on(0.5);
  Mask m(h, w);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = on(rng) ? 1 : 0;
  m.data()[std::uniform_int_distribution<Index>(0, m.size() - 1)(rng)] = 1;
  return m;
}

// Image on a 2^-10 grid, so the luminance sums are exact.
TD grid_image(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> level(256, 768);
  TD::Array a(3 * 32 * 32);
  for (Index i = 0; i < a.size(); ++i) a[i] = std::ldexp(double(level(rng)), -10);
  return TD(Shape{3, 32, 32}, std::move(a));
}

// Adds integer multiples of (587, -299, 0) and (114, 0, -299) times 2^-20,
// which leave 299 R + 587 G + 114 B unchanged.
TD chroma_shift(const TD& img, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> k(-150, 150);
  TD::Array a = img.data();
  const Index hw = 32 * 32;
  for (Index p = 0; p < hw; ++p) {
    const int u = k(rng), v = k(rng);
    a[p] += std::ldexp(587.0 * u + 114.0 * v, -20);
    a[hw + p] += std::ldexp(-299.0 * u, -20);
    a[2 * hw + p] += std::ldexp(-299.0 * v, -20);
  }
  return TD(img.shape(), std::move(a));
}

}  // namespace

TEST_CASE("cosine distance examples") {
  const double a[] = {1, 0}, b[] = {0, 1}, c[] = {-1, 0}, d[] = {3, 4};
  CHECK(cosine_distance(a, b, 2) == 1);
  CHECK(cosine_distance(a, c, 2) == doctest::Approx(2));
  CHECK(cosine_distance(d, d, 2) == doctest::Approx(0).scale(1));
  // Strided reads: the pair (1, -1) taken from every other entry.
  const double e[] = {1, 9, -1, 9};
  CHECK(cosine_distance(e, a, 2, 2, 1) == doctest::Approx(1 - std::sqrt(0.5)));
}

TEST_CASE("nnfm examples") {
  const TD r(Shape{2, 1, 1}, (TD::Array(2) << 1, 0).finished());
  const TD s(Shape{2, 1, 1}, (TD::Array(2) << 0, 1).finished());
  CHECK(nnfm_loss(r, s).item() == 1);
  std::mt19937_64 rng(1);
  const auto style = testing::random_tensor<double>({8, 4, 4}, rng);
  // A spatial permutation of the style: every vector has an exact match.
  TD::Array p(8 * 16);
  for (Index c = 0; c < 8; ++c) {
    for (Index i = 0; i < 16; ++i) p[c * 16 + i] = style[c * 16 + (i * 5 + 3) % 16];
  }
  CHECK(nnfm_loss(TD(Shape{8, 4, 4}, std::move(p)), style).item() < 1e-7);
  CHECK_THROWS_AS(nnfm_loss(TD::zeros({3, 2, 2}), TD::zeros({4, 2, 2})), ShapeError);
}

TEST_CASE("nnfm equals the brute-force oracle and keeps its invariants") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<Index> side(1, 6), chans(1, 8);
  for (int trial = 0; trial < 100; ++trial) {
    CAPTURE(trial);
    const Index c = chans(rng);
    const auto r = testing::random_tensor<double>({c, side(rng), side(rng)}, rng);
    const auto s = testing::random_tensor<double>({c, side(rng), side(rng)}, rng);
    const double loss = nnfm_loss(r, s).item();
    CHECK(loss == nnfm_oracle(r, s));
    CHECK(loss >= 0);
    CHECK(loss <= 2);

    const Tensor<float> rf(r.shape(), r.data().cast<float>()), sf(s.shape(), s.data().cast<float>());
    CHECK(nnfm_loss(rf, sf).item() == nnfm_oracle(rf, sf));

    // Reversing the style locations changes nothing.
    const Index m = s.dim(1) * s.dim(2);
    TD::Array rev(s.size());
    for (Index k = 0; k < c; ++k) {
      for (Index j = 0; j < m; ++j) rev[k * m + j] = s[k * m + (m - 1 - j)];
    }
    CHECK(nnfm_loss(r, TD(s.shape(), std::move(rev))).item() == loss);

    // More style vectors can only lower the minimum.
    const auto extra = testing::random_tensor<double>({c, s.dim(1), 2}, rng);
    const auto wider = concat<double>(std::vector<TD>{s, extra}, 2);
    CHECK(nnfm_loss(r, wider).item() <= loss);

    // Positive per-vector rescaling only moves the 1e-8 guard.
    CHECK(nnfm_loss(r * 3.0, s * 0.5).item() == doctest::Approx(loss).epsilon(1e-6));
  }
}

TEST_CASE("masked nnfm and the spatial loss equal the masked oracle") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<Index> side(2, 6);
  std::uniform_real_distribution<double> weight(0.25, 2);
  for (int trial = 0; trial < 100; ++trial) {
    CAPTURE(trial);
    const Index h = side(rng), w = side(rng);
    const auto r = testing::random_tensor<double>({8, h, w}, rng);
    std::vector<SpatialRegion<double>> regions(2);
    double expected = 0;
    const double wl = 0.5;
    for (auto& region : regions) {
      region.style["conv2_1"] = testing::random_tensor<double>({8, 4, 4}, rng);
      region.render_mask = random_mask(h, w, rng);
      region.style_mask = random_mask(4, 4, rng);
      region.weight = weight(rng);
      const double term = nnfm_oracle(r, region.style.at("conv2_1"), &region.render_mask, &region.style_mask);
      CHECK(nnfm_loss(r, region.style.at("conv2_1"), &region.render_mask, &region.style_mask).item() == term);
      expected = &region == &regions[0] ? term * (region.weight * wl) : expected + term * (region.weight * wl);
    }
    const FeatureSet<double> render{{"conv2_1", r}};
    CHECK(style_loss_spatial(render, regions, {{"conv2_1", wl}}).item() == expected);
  }
}

TEST_CASE("spatial loss special cases") {
  std::mt19937_64 rng(4);
  const auto r = testing::random_tensor<double>({8, 4, 4}, rng);
  const auto s = testing::random_tensor<double>({8, 4, 4}, rng);
  const FeatureSet<double> render{{"conv3_1", r}};
  SpatialRegion<double> all;
  all.style["conv3_1"] = s;
  all.render_mask = Mask::Ones(4, 4);
  all.style_mask = Mask::Ones(4, 4);
  CHECK(style_loss_spatial(render, {all}, {{"conv3_1", 1.0}}).item() == nnfm_loss(r, s).item());

  // Each render half is a copy of its own region's style.
  SpatialRegion<double> left, right;
  left.style["conv3_1"] = r;
  right.style["conv3_1"] = r;
  left.render_mask = left.style_mask = Mask::Zero(4, 4);
  right.render_mask = right.style_mask = Mask::Zero(4, 4);
  left.render_mask.leftCols(2).setOnes();
  left.style_mask.leftCols(2).setOnes();
  right.render_mask.rightCols(2).setOnes();
  right.style_mask.rightCols(2).setOnes();
  CHECK(style_loss_spatial(render, {left, right}, {{"conv3_1", 1.0}}).item() < 1e-7);

  // A region that vanishes is skipped.
  SpatialRegion<double> none = all;
  none.render_mask.setZero();
  CHECK(style_loss_spatial(render, {all, none}, {{"conv3_1", 1.0}}).item() == nnfm_loss(r, s).item());
  CHECK_THROWS_AS(style_loss_spatial<double>(render, {}, {{"conv3_1", 1.0}}), ConfigError);
}

TEST_CASE("content, depth, regularizer and tv examples") {
  std::mt19937_64 rng(5);
  const auto f = testing::random_tensor<double>({4, 3, 3}, rng);
  CHECK(content_loss(f, f).item() == 0);
  CHECK(content_loss(f, shift(f, 1.0)).item() == doctest::Approx(1));
  CHECK_THROWS_AS(content_loss(f, TD::zeros({4, 3, 2})), ShapeError);

  const auto d = testing::random_tensor<double>({5, 6}, rng, 2, 4);
  const Mask valid = Mask::Ones(5, 6);
  CHECK(depth_loss(d, d, valid).item() == 0);
  CHECK(depth_loss(d, shift(d, 0.1), valid).item() == doctest::Approx(0.01));
  Mask half = Mask::Zero(5, 6);
  half.topRows(2).setOnes();
  TD moved = d.clone();
  moved.mutable_data().tail(18) += 5;  // only invalid rows move
  CHECK(depth_loss(d, moved, half).item() == 0);
  CHECK(depth_loss(d, moved, Mask::Zero(5, 6)).item() == 0);
  const TD alpha(Shape{1, 3}, (TD::Array(3) << 0.01, 0.05, 0.06).finished());
  const Mask vm = valid_depth_mask(alpha);
  CHECK(vm(0, 0) == 0);
  CHECK(vm(0, 1) == 0);
  CHECK(vm(0, 2) == 1);

  auto scene = testing::random_scene<double>(10, 0, rng);
  const SceneSnapshot<double> snap(scene);
  auto same = reg_losses(to_params(scene, false), snap);
  CHECK(same.scale.item() == 0);
  CHECK(same.opacity.item() == 0);
  scene.opacity_logits()[4] = logit(sigmoid(scene.opacity_logits()[4]) + 0.2);
  CHECK(reg_losses(to_params(scene, false), snap).opacity.item() == doctest::Approx(0.02).epsilon(1e-9));
  // Opposite changes do not cancel.
  scene.opacity_logits()[6] = logit(sigmoid(scene.opacity_logits()[6]) - 0.2);
  CHECK(reg_losses(to_params(scene, false), snap).opacity.item() == doctest::Approx(0.04).epsilon(1e-9));
  scene.log_scales()(2, 1) = std::log(std::exp(scene.log_scales()(2, 1)) + 0.3);
  CHECK(reg_losses(to_params(scene, false), snap).scale.item() == doctest::Approx(0.01).epsilon(1e-9));
  scene.push_back(scene.gaussian(0));
  CHECK_THROWS_AS(reg_losses(to_params(scene, false), snap), ShapeError);

  CHECK(tv_loss(TD::full({3, 4, 4}, 0.3)).item() == 0);
  CHECK(tv_loss(TD(Shape{1, 1, 2}, (TD::Array(2) << 0, 1).finished())).item() == 1);
  TD::Array board(3 * 16);
  for (Index i = 0; i < board.size(); ++i) board[i] = double(((i % 16) / 4 + i % 4) % 2);
  CHECK(tv_loss(TD(Shape{3, 4, 4}, std::move(board))).item() == 2);
}

TEST_CASE("total_loss weighting") {
  LossTerms<double> unit;
  for (auto* t : {&unit.style, &unit.content, &unit.depth, &unit.scale, &unit.opacity, &unit.tv}) *t = TD::scalar(1);
  CHECK(total_loss(unit, LossWeights{}).item() == doctest::Approx(2.135).epsilon(1e-12));
  CHECK(total_loss(unit, LossWeights{0, 0, 0, 0, 0, 0}).item() == 0);
  CHECK(total_loss(LossTerms<double>{}, LossWeights{}).item() == 0);
  LossWeights bad;
  bad.tv = -1;
  CHECK_THROWS_AS(total_loss(unit, bad), ConfigError);

  TD x = TD::full({1}, 0.7, true);
  LossTerms<double> one;
  one.style = x * x;
  total_loss(one, LossWeights{}).backward();
  const double g1 = x.grad()[0];
  x.zero_grad();
  LossWeights doubled;
  doubled.style = 4;
  one.style = x * x;
  total_loss(one, doubled).backward();
  CHECK(x.grad()[0] == doctest::Approx(2 * g1).epsilon(1e-14));
}

TEST_CASE("loss gradients match central differences") {
  std::mt19937_64 rng(6);
  const auto style = testing::random_tensor<double>({8, 5, 5}, rng);
  const auto target = testing::random_tensor<double>({4, 6, 6}, rng);
  const auto origin = testing::random_tensor<double>({6, 6}, rng, 2, 4);
  Mask some = Mask::Ones(6, 6);
  some(1, 2) = some(4, 4) = 0;
  auto scene = testing::random_scene<double>(12, 0, rng);
  const SceneSnapshot<double> snap(scene);
  scene.log_scales().array() += 0.1;  // keep |delta| away from the kink at 0
  scene.opacity_logits().array() -= 0.2;
  const auto base = to_params(scene, false);
  struct Case {
    const char* name;
    Shape shape;
    std::function<TD(const TD&)> f;
  };
  const std::vector<Case> cases{
      {"nnfm", {8, 4, 4}, [&](const TD& x) { return nnfm_loss(x, style); }},
      {"content", {4, 6, 6}, [&](const TD& x) { return content_loss(target, x); }},
      {"tv", {3, 6, 6}, [&](const TD& x) { return tv_loss(x); }},
      {"depth", {6, 6}, [&](const TD& x) { return depth_loss(origin, x, some); }},
      {"scale reg",
       {12, 3},
       [&](const TD& x) {
         auto p = base;
         p.log_scales = x + base.log_scales;
         return reg_losses(p, snap).scale;
       }},
      {"opacity reg",
       {12},
       [&](const TD& x) {
         auto p = base;
         p.opacity_logits = x + base.opacity_logits;
         return reg_losses(p, snap).opacity;
       }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const double lo = std::string(c.name).find("reg") != std::string::npos ? -0.01 : -1;
    const double hi = -lo;
    const auto r = finite_difference_check<double>(c.f, testing::random_tensor<double>(c.shape, rng, lo, hi, true), 1e-4);
    CHECK(r.max_rel_error < 1e-5);
    CHECK(r.nan_count == 0);
  }
}

TEST_CASE("depth loss gradient through the rasterizer") {
  std::mt19937_64 rng(7);
  const auto scene = testing::random_scene<double>(30, 0, rng);
  const auto cam = testing::axis_camera<double>(16, 16, 18.0);
  auto moved = scene;
  moved.positions().col(2).array() += 0.05;
  const auto origin = rasterize(moved, cam);
  const Mask valid = valid_depth_mask(reshape(origin.alpha, {16, 16}));
  const auto base = to_params(scene, false);
  const std::function<TD(const TD&)> f = [&](const TD& x) {
    auto p = base;
    p.positions = x;
    return depth_loss(reshape(origin.depth, {16, 16}), reshape(rasterize(p, cam).depth, {16, 16}), valid);
  };
  const auto r = finite_difference_check<double>(f, base.positions.clone(true), 1e-4);
  CHECK(r.max_rel_error < 1e-3);
  CHECK(r.nan_count == 0);
}

TEST_CASE("luminance-only style loss ignores chrominance") {
  std::mt19937_64 rng(8);
  const Vec3<double> yrow(0.299, 0.587, 0.114);
  for (int trial = 0; trial < 10; ++trial) {
    CAPTURE(trial);
    const auto render = grid_image(rng), style = grid_image(rng);
    const auto layers = default_style_layers();
    const double loss = style_loss_color(render, style, vgg64(), layers).item();
    CHECK(style_loss_color(chroma_shift(render, rng), style, vgg64(), layers).item() == loss);
    CHECK(style_loss_color(render, chroma_shift(style, rng), vgg64(), layers).item() == loss);

    auto x = render.clone(true);
    style_loss_color(x, style, vgg64(), layers).backward();
    const auto& g = x.grad();
    const Index hw = 32 * 32;
    const double scale = g.abs().maxCoeff();
    REQUIRE(scale > 0);
    double worst = 0;
    for (Index p = 0; p < hw; ++p) {
      const Vec3<double> gp(g[p], g[hw + p], g[2 * hw + p]);
      worst = std::max(worst, gp.cross(yrow).norm() / yrow.norm());
    }
    CHECK(worst <= 1e-6 * scale);
  }
  const auto img = grid_image(rng);
  CHECK(style_loss_color(img, img, vgg64(), default_style_layers()).item() < 1e-6);
}

TEST_CASE("scale control layer weights") {
  std::mt19937_64 rng(9);
  const auto wf = ConvNetWeights<float>::from_sgsw(synthetic_vgg_weights(0));
  const auto a = extract(testing::random_tensor<float>({3, 64, 64}, rng, 0, 1), wf,
                         {"conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv4_1", "conv4_2", "conv4_3"});
  const auto b = extract(testing::random_tensor<float>({3, 64, 64}, rng, 0, 1), wf,
                         {"conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv4_1", "conv4_2", "conv4_3"});
  CHECK(style_loss_scale(a, b, {{"conv3_1", 1.0}}).item() == nnfm_loss(a.at("conv3_1"), b.at("conv3_1")).item());
  LayerWeights twice = scale_preset("default");
  for (auto& [layer, w] : twice) w *= 2;
  CHECK(style_loss_scale(a, b, twice).item() ==
        doctest::Approx(2 * style_loss_scale(a, b, scale_preset("default")).item()).epsilon(1e-6));
  const double fine = style_loss_scale(a, b, scale_preset("fine")).item();
  const double coarse = style_loss_scale(a, b, scale_preset("coarse")).item();
  CHECK(std::abs(fine - coarse) > 1e-3);
  CHECK(scale_preset("fine").at("conv3_2") == 0.5);
  CHECK(scale_preset("coarse").count("conv2_1") == 0);
  CHECK_THROWS_AS(scale_preset("medium"), ConfigError);
  CHECK_THROWS_AS(style_loss_scale(a, b, {{"conv3_1", 0.0}}), ConfigError);
  CHECK_THROWS_AS(style_loss_scale(a, b, {{"conv5_1", 1.0}}), ConfigError);
}
