#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "stylegs/tensor.hpp"

namespace stylegs {

template <typename Scalar>
struct GradCheckReport {
  Scalar max_rel_error = 0;  // max |analytic - fd| / max(1, |analytic|)
  Index worst_index = -1;
  Index nan_count = 0;       // probes where f was non-finite
  Index checked = 0;
};

/// Compares the reverse-mode gradient of the scalar function f at x with
/// central finite differences. `x` must be a leaf with requires_grad; its
/// gradient buffer is reset. When `indices` is empty every element is probed.
template <typename Scalar>
GradCheckReport<Scalar> finite_difference_check(const std::function<Tensor<Scalar>(const Tensor<Scalar>&)>& f,
                                                Tensor<Scalar> x, Scalar eps, std::span<const Index> indices = {}) {
  GradCheckReport<Scalar> report;
  x.zero_grad();
  f(x).backward();
  const auto analytic = x.grad();

  std::vector<Index> all;
  if (indices.empty()) {
    all.resize(static_cast<std::size_t>(x.size()));
    for (Index i = 0; i < x.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    indices = all;
  }
  auto& values = x.mutable_data();
  for (Index i : indices) {
    const Scalar saved = values[i];
    values[i] = saved + eps;
    const Scalar up = f(x).item();
    values[i] = saved - eps;
    const Scalar down = f(x).item();
    values[i] = saved;
    ++report.checked;
    const Scalar fd = (up - down) / (Scalar(2) * eps);
    if (!std::isfinite(fd) || !std::isfinite(analytic[i])) {
      ++report.nan_count;
      continue;
    }
    const Scalar err = std::abs(analytic[i] - fd) / std::max(Scalar(1), std::abs(analytic[i]));
    if (err > report.max_rel_error || report.worst_index < 0) {
      report.max_rel_error = std::max(report.max_rel_error, err);
      if (err >= report.max_rel_error) report.worst_index = i;
    }
  }
  x.zero_grad();
  return report;
}

}  // namespace stylegs
