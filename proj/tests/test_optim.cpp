#include <cmath>

#include "doctest.h"
#include "stylegs/errors.hpp"
#include "stylegs/ops.hpp"
#include "stylegs/optim.hpp"
#include "support.hpp"

using namespace stylegs;
using TD = Tensor<double>;

TEST_CASE("lr_at endpoints and midpoint") {
  const Schedule s{0.1, 0.01, 800};
  CHECK(lr_at(s, 0) == 0.1);
  CHECK(lr_at(s, 800) == 0.01);
  CHECK(lr_at(s, 400) == doctest::Approx(std::sqrt(0.1 * 0.01)).epsilon(1e-12));
  for (long t = 1; t <= 800; ++t) CHECK(lr_at(s, t) < lr_at(s, t - 1));
  CHECK(lr_at(Schedule{0.1, 0.01, 0}, 0) == 0.1);
}

TEST_CASE("one Adam step from x = 1 with gradient 2") {
  TD x = TD::full({1}, 1.0, true);
  sum(x * 2.0).backward();
  Adam<double> adam;
  adam.step("x", x, 0.1);
  // m_hat = 2, v_hat = 4, so the step is 0.1 * 2 / (2 + 1e-8).
  CHECK(x[0] == doctest::Approx(1 - 0.1 * 2 / (2 + 1e-8)).epsilon(1e-15));
  CHECK(adam.steps("x") == 1);
  CHECK(adam.first_moment("x")[0] == doctest::Approx(0.2));
  CHECK(adam.second_moment("x")[0] == doctest::Approx(0.004));
}

TEST_CASE("zero gradients leave parameters alone and decay the moments") {
  TD x = TD::full({3}, 0.5, true);
  Adam<double> adam;
  sum(x * 0.0).backward();
  adam.step("x", x, 0.1);
  CHECK((x.data() == 0.5).all());

  x.zero_grad();
  sum(x * x).backward();
  adam.step("x", x, 0.01);
  const double m1 = adam.first_moment("x")[0], v1 = adam.second_moment("x")[0];
  x.zero_grad();
  sum(x * 0.0).backward();
  adam.step("x", x, 0.01);
  CHECK(adam.first_moment("x")[0] == doctest::Approx(0.9 * m1).epsilon(1e-15));
  CHECK(adam.second_moment("x")[0] == doctest::Approx(0.999 * v1).epsilon(1e-15));
}

TEST_CASE("Adam rejects non-finite gradients naming the group") {
  TD x = TD::full({2}, 1.0, true);
  sum(x * std::nan("")).backward();
  Adam<double> adam;
  try {
    adam.step("opacity", x, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("opacity") != std::string::npos);
  }
}

TEST_CASE("Adam trajectories are deterministic and groups are independent") {
  auto run = [] {
    std::mt19937_64 rng(3);
    TD a = testing::random_tensor<double>({5}, rng, -1, 1, true);
    TD b = testing::random_tensor<double>({2, 2}, rng, -1, 1, true);
    Adam<double> adam;
    for (int it = 0; it < 25; ++it) {
      a.zero_grad();
      b.zero_grad();
      (sum(a * a * a) + sum(exp(b))).backward();
      adam.step("a", a, 0.05);
      if (it % 2 == 0) adam.step("b", b, 0.05);
    }
    CHECK(adam.steps("a") == 25);
    CHECK(adam.steps("b") == 13);
    return std::pair{a.data(), b.data()};
  };
  const auto r1 = run(), r2 = run();
  CHECK((r1.first == r2.first).all());
  CHECK((r1.second == r2.second).all());
}

TEST_CASE("keep_rows compacts the moments") {
  TD x(Shape{3, 2}, (TD::Array(6) << 1, 2, 3, 4, 5, 6).finished(), true);
  sum(x * x).backward();
  Adam<double> adam;
  adam.step("x", x, 0.1);
  const auto m = adam.first_moment("x");
  const std::vector<Index> keep{0, 2};
  adam.keep_rows("x", keep, 2);
  REQUIRE(adam.first_moment("x").size() == 4);
  CHECK(adam.first_moment("x")[2] == m[4]);
  CHECK(adam.second_moment("x").size() == 4);
}
