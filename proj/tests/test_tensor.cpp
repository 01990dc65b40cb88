#include <cmath>
#include <set>

#include "doctest.h"
#include "stylegs/gradcheck.hpp"
#include "stylegs/ops.hpp"
#include "support.hpp"

using namespace stylegs;
using testing::random_tensor;

using TD = Tensor<double>;
using Fn = std::function<TD(const TD&)>;

TEST_CASE("tensor construction rejects a data length that disagrees with the shape") {
  CHECK_THROWS_AS(TD(Shape{2, 3}, TD::Array::Zero(5)), ShapeError);
  const TD t(Shape{2, 3}, TD::Array::Zero(6));
  CHECK(t.size() == numel(t.shape()));
}

TEST_CASE("conv2d with an identity 1x1 kernel returns its input") {
  std::mt19937_64 rng(1);
  const auto x = random_tensor<double>({3, 5, 4}, rng);
  TD::Array k = TD::Array::Zero(9);
  k[0] = k[4] = k[8] = 1;  // [out, in] diagonal
  const auto y = conv2d(x, TD(Shape{3, 3, 1, 1}, k));
  CHECK(y.shape() == x.shape());
  CHECK((y.data() == x.data()).all());
}

TEST_CASE("relu clamps negatives and keeps the rest") {
  const TD x(Shape{3}, (TD::Array(3) << -1, 0, 2).finished());
  const auto y = relu(x);
  CHECK(y[0] == 0);
  CHECK(y[1] == 0);
  CHECK(y[2] == 2);
}

TEST_CASE("conv2d of a constant image with an all-ones 3x3 kernel and zero padding") {
  const auto y = conv2d(TD::full({1, 4, 4}, 1.0), TD::full({1, 1, 3, 3}, 1.0));
  CHECK(y[0] == 4);           // corner
  CHECK(y[1] == 6);           // edge
  CHECK(y[1 * 4 + 1] == 9);   // interior
  CHECK(y[2 * 4 + 2] == 9);
  CHECK(y[15] == 4);
}

TEST_CASE("backward of sum gives ones and of sum(x*x) gives 2x") {
  std::mt19937_64 rng(2);
  auto x = random_tensor<double>({2, 3, 4}, rng, -1, 1, true);
  sum(x).backward();
  CHECK((x.grad() == 1.0).all());

  TD y(Shape{2}, (TD::Array(2) << 1, 2).finished(), true);
  sum(y * y).backward();
  CHECK(y.grad()[0] == 2);
  CHECK(y.grad()[1] == 4);
}

TEST_CASE("leaf gradients accumulate across backward calls until zeroed") {
  TD x = TD::full({3}, 2.0, true);
  sum(x).backward();
  sum(x).backward();
  CHECK((x.grad() == 2.0).all());
  x.zero_grad();
  sum(x * x).backward();
  CHECK((x.grad() == 4.0).all());
}

TEST_CASE("finite-difference checker basics") {
  std::mt19937_64 rng(3);
  SUBCASE("sum is exact") {
    // Dyadic values and step keep every difference exactly representable.
    TD x = random_tensor<double>({4, 5}, rng, -1, 1, true);
    x.mutable_data() = (x.data() * 1024).round() / 1024;
    const auto r = finite_difference_check<double>([](const TD& v) { return sum(v); }, x, std::ldexp(1.0, -13));
    CHECK(r.max_rel_error == 0);
    CHECK(r.checked == 20);
  }
  SUBCASE("sum(exp(x)) for small x") {
    const auto r = finite_difference_check<double>([](const TD& x) { return sum(exp(x)); },
                                                   random_tensor<double>({10}, rng, -0.1, 0.1, true), 1e-4);
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("two-layer convnet") {
    const auto k1 = random_tensor<double>({4, 3, 3, 3}, rng);
    const auto b1 = random_tensor<double>({4}, rng);
    const auto k2 = random_tensor<double>({2, 4, 3, 3}, rng);
    const Fn f = [&](const TD& x) { return mean(relu(conv2d(maxpool2(relu(conv2d(x, k1, b1))), k2))); };
    const auto r = finite_difference_check<double>(f, random_tensor<double>({3, 8, 8}, rng, -1, 1, true), 1e-4);
    CHECK(r.max_rel_error < 1e-5);
    CHECK(r.nan_count == 0);
  }
}

TEST_CASE("every primitive's backward matches central differences at 64-bit") {
  std::mt19937_64 rng(4);
  const auto other = random_tensor<double>({3, 4}, rng, 0.5, 1.5);
  const auto square = random_tensor<double>({4, 2}, rng);
  const auto kernel = random_tensor<double>({2, 3, 3, 3}, rng);
  const auto bias = random_tensor<double>({2}, rng);
  const auto weights = random_tensor<double>({3, 4}, rng);  // breaks the symmetry of plain sums

  struct Case {
    std::string name;
    Shape shape;
    double lo, hi;
    Fn f;
  };
  auto w = [&](const TD& y) { return sum(y * weights); };
  const std::vector<Case> cases{
      {"add", {3, 4}, -1, 1, [&](const TD& x) { return w(x + other); }},
      {"sub", {3, 4}, -1, 1, [&](const TD& x) { return w(other - x); }},
      {"mul", {3, 4}, -1, 1, [&](const TD& x) { return w(x * other); }},
      {"div", {3, 4}, 0.5, 1.5, [&](const TD& x) { return w(other / x); }},
      {"scale/shift", {3, 4}, -1, 1, [&](const TD& x) { return w(x * 3.0 + 0.5); }},
      {"matmul", {3, 4}, -1, 1, [&](const TD& x) { return sum(matmul(x, square)); }},
      {"transpose", {3, 4}, -1, 1, [&](const TD& x) { return sum(matmul(transpose(x), weights) * matmul(transpose(x), weights)); }},
      {"conv2d", {3, 6, 5}, -1, 1, [&](const TD& x) { return sum(conv2d(x, kernel, bias) * conv2d(x, kernel)); }},
      {"relu", {3, 4}, -1, 1, [&](const TD& x) { return w(relu(x)); }},
      {"maxpool2", {2, 6, 6}, -1, 1, [&](const TD& x) { return sum(maxpool2(x) * maxpool2(x)); }},
      {"exp", {3, 4}, -1, 1, [&](const TD& x) { return w(exp(x)); }},
      {"log", {3, 4}, 0.5, 2, [&](const TD& x) { return w(log(x)); }},
      {"sqrt", {3, 4}, 0.5, 2, [&](const TD& x) { return w(sqrt(x)); }},
      {"abs", {3, 4}, -1, 1, [&](const TD& x) { return w(abs(x)); }},
      {"power", {3, 4}, 0.5, 2, [&](const TD& x) { return w(power(x, 2.5)); }},
      {"clamp", {3, 4}, -1, 1, [&](const TD& x) { return w(clamp(x, -0.5, 0.5)); }},
      {"mean", {3, 4}, -1, 1, [&](const TD& x) { return mean(x * x); }},
      {"sum axis", {3, 4}, -1, 1, [&](const TD& x) { return sum(power(sum(x, 1), 2.0)); }},
      {"reshape", {3, 4}, -1, 1, [&](const TD& x) { return sum(power(reshape(x, {4, 3}), 2.0) * reshape(weights, {4, 3})); }},
      {"slice", {3, 4}, -1, 1, [&](const TD& x) { return sum(power(slice(x, 1, 1, 3), 2.0)); }},
      {"concat", {3, 4}, -1, 1,
       [&](const TD& x) {
         const std::vector<TD> parts{x, x * x};
         return sum(concat<double>(parts, 0) * concat<double>(std::vector<TD>{weights, weights}, 0));
       }},
      {"l2_normalize", {3, 4}, -1, 1, [&](const TD& x) { return w(l2_normalize(x, 0)); }},
      {"bilinear_resize", {2, 5, 4}, -1, 1,
       [&](const TD& x) {
         const auto y = bilinear_resize(x, 7, 3);
         return sum(y * y);
       }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const auto r = finite_difference_check<double>(c.f, random_tensor<double>(c.shape, rng, c.lo, c.hi, true), 1e-4);
    CHECK(r.nan_count == 0);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("tape replay is deterministic and topologically ordered") {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<float>({3, 8, 8}, rng, -1, 1, true);
  const auto k = random_tensor<float>({4, 3, 3, 3}, rng);
  auto run = [&] { return mean(relu(conv2d(x, k))); };
  const auto a = run(), b = run();
  CHECK(a.item() == b.item());

  const auto tape = Tape<float>::record(a);
  std::set<const Node<float>*> seen;
  for (const auto& node : tape.nodes()) {
    for (const auto& in : node->inputs) {
      if (in->requires_grad) CHECK(seen.count(in.get()) == 1);  // constants are not recorded
    }
    CHECK(seen.insert(node.get()).second);
  }
}

TEST_CASE("l2_normalize gives unit columns and guards zero vectors") {
  std::mt19937_64 rng(6);
  const auto x = random_tensor<double>({5, 7}, rng);
  const auto y = l2_normalize(x, 0);
  for (Index j = 0; j < 7; ++j) {
    double n = 0;
    for (Index c = 0; c < 5; ++c) n += y[c * 7 + j] * y[c * 7 + j];
    CHECK(std::abs(std::sqrt(n) - 1) < 1e-6);
  }
  const auto z = l2_normalize(TD::zeros({3, 2}), 0);
  CHECK((z.data() == 0).all());
}

TEST_CASE("finite-check mode names the op that produced a non-finite value") {
  set_check_finite(true);
  const TD x = TD::full({2}, -1.0);
  try {
    (void)log(x);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
  set_check_finite(false);
  CHECK_NOTHROW((void)log(x));
}

TEST_CASE("binary ops reject incompatible shapes") {
  CHECK_THROWS_AS((void)(TD::zeros({2, 3}) + TD::zeros({3, 2})), ShapeError);
  CHECK_THROWS_AS((void)matmul(TD::zeros({2, 3}), TD::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS((void)conv2d(TD::zeros({2, 4, 4}), TD::zeros({1, 3, 3, 3})), ShapeError);
}
