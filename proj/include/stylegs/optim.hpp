#pragma once

#include <map>
#include <span>
#include <string>

#include "stylegs/tensor.hpp"

namespace stylegs {

/// Exponential interpolation lr0 * (lr1 / lr0)^(t / T).
struct Schedule {
  double lr0 = 0.1;
  double lr1 = 0.01;
  long total = 1;
};

/// Learning rate at step t in [0, T]. T = 0 yields lr0.
double lr_at(const Schedule& schedule, long t);

/// Bias-corrected Adam over named parameter groups. Moments are created on
/// the first step of a group; each group keeps its own step count.
template <typename Scalar>
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(Options options) : options_(options) {}

  /// Updates `param` in place from its accumulated gradient. Throws
  /// NumericError naming the group if the gradient holds NaN or Inf.
  void step(const std::string& group, Tensor<Scalar>& param, Scalar lr);

  /// Keeps the listed rows (each `row_width` values wide) of a group's moments,
  /// mirroring a parameter compaction.
  void keep_rows(const std::string& group, std::span<const Index> rows, Index row_width);

  long steps(const std::string& group) const;
  const typename Tensor<Scalar>::Array& first_moment(const std::string& group) const;
  const typename Tensor<Scalar>::Array& second_moment(const std::string& group) const;

 private:
  struct Group {
    typename Tensor<Scalar>::Array m, v;
    long t = 0;
  };
  const Group& group(const std::string& name) const;

  Options options_;
  std::map<std::string, Group> groups_;
};

}  // namespace stylegs
