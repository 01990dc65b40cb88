#include "stylegs/optim.hpp"

#include <cmath>

#include "stylegs/errors.hpp"

namespace stylegs {

double lr_at(const Schedule& schedule, long t) {
  if (schedule.total <= 0 || t <= 0) return schedule.lr0;
  if (t >= schedule.total) return schedule.lr1;
  const double frac = static_cast<double>(t) / static_cast<double>(schedule.total);
  return schedule.lr0 * std::pow(schedule.lr1 / schedule.lr0, frac);
}

template <typename Scalar>
void Adam<Scalar>::step(const std::string& name, Tensor<Scalar>& param, Scalar lr) {
  const auto g = param.grad();
  if (!g.allFinite()) throw NumericError("non-finite gradient in parameter group '" + name + "'");
  Group& s = groups_[name];
  if (s.m.size() != param.size()) {
    if (s.t != 0) throw ShapeError("adam", "group '" + name + "' changed size without keep_rows");
    s.m = Tensor<Scalar>::Array::Zero(param.size());
    s.v = Tensor<Scalar>::Array::Zero(param.size());
  }
  ++s.t;
  const auto b1 = Scalar(options_.beta1), b2 = Scalar(options_.beta2);
  s.m = b1 * s.m + (1 - b1) * g;
  s.v = b2 * s.v + (1 - b2) * g.square();
  const Scalar c1 = 1 - std::pow(b1, Scalar(s.t));
  const Scalar c2 = 1 - std::pow(b2, Scalar(s.t));
  param.mutable_data() -= lr * (s.m / c1) / ((s.v / c2).sqrt() + Scalar(options_.eps));
}

template <typename Scalar>
void Adam<Scalar>::keep_rows(const std::string& name, std::span<const Index> rows, Index row_width) {
  auto it = groups_.find(name);
  if (it == groups_.end()) return;
  Group& s = it->second;
  typename Tensor<Scalar>::Array m(static_cast<Index>(rows.size()) * row_width), v(m.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Index dst = static_cast<Index>(k) * row_width;
    m.segment(dst, row_width) = s.m.segment(rows[k] * row_width, row_width);
    v.segment(dst, row_width) = s.v.segment(rows[k] * row_width, row_width);
  }
  s.m = std::move(m);
  s.v = std::move(v);
}

template <typename Scalar>
const typename Adam<Scalar>::Group& Adam<Scalar>::group(const std::string& name) const {
  const auto it = groups_.find(name);
  if (it == groups_.end()) throw ConfigError("unknown parameter group '" + name + "'");
  return it->second;
}

template <typename Scalar>
long Adam<Scalar>::steps(const std::string& name) const {
  const auto it = groups_.find(name);
  return it == groups_.end() ? 0 : it->second.t;
}

template <typename Scalar>
const typename Tensor<Scalar>::Array& Adam<Scalar>::first_moment(const std::string& name) const {
  return group(name).m;
}

template <typename Scalar>
const typename Tensor<Scalar>::Array& Adam<Scalar>::second_moment(const std::string& name) const {
  return group(name).v;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace stylegs
