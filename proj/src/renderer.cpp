#include "stylegs/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stylegs/ops.hpp"

namespace stylegs {

namespace {

template <typename Scalar>
using Mat23 = Eigen::Matrix<Scalar, 2, 3>;

// Everything the compositing loop and the backward pass need per Gaussian.
template <typename Scalar>
struct Splat {
  bool visible = false;
  Scalar depth = 0;
  Vec3<Scalar> pc;         // camera-space center
  Vec2<Scalar> mean;       // pixel coordinates
  Mat2<Scalar> conic;      // inverse of cov2d
  Scalar opacity = 0;      // sigmoid(logit)
  Vec3<Scalar> color;      // clamped SH color
  Vec3<Scalar> raw_color;  // before clamping
  Vec3<Scalar> dir;        // unit view direction
  Scalar dir_len = 0;
  Mat3<Scalar> rot;
  Vec3<Scalar> scale;
  Mat3<Scalar> sigma;
  Mat23<Scalar> jw;        // J * W
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

template <typename Scalar>
struct SplatGrad {
  Vec2<Scalar> mean = Vec2<Scalar>::Zero();
  Scalar conic_a = 0, conic_b = 0, conic_c = 0;
  Scalar opacity = 0;
  Scalar depth = 0;
  Vec3<Scalar> color = Vec3<Scalar>::Zero();
};

// Raw per-Gaussian parameters, read either from tensors or from a scene.
template <typename Scalar>
struct ParamView {
  const Scalar* positions;
  const Scalar* log_scales;
  const Scalar* rotations;
  const Scalar* opacity_logits;
  const Scalar* sh;
  Index count;
  int sh_degree;
  int coeffs() const { return sh_coeff_count(sh_degree); }
};

template <typename Scalar>
class Rasterizer {
 public:
  Rasterizer(const ParamView<Scalar>& p, const Camera<Scalar>& cam) : p_(p), cam_(cam) {
    cam_.validate();
    prepare();
  }

  const RenderStats& stats() const { return stats_; }
  Index pixels() const { return Index(cam_.width) * cam_.height; }

  // Output planes r, g, b, depth, alpha.
  Eigen::Array<Scalar, Eigen::Dynamic, 1> forward(VecX<Scalar>* max_weight = nullptr) {
    const Index hw = pixels();
    stats_.fragments = 0;
    Eigen::Array<Scalar, Eigen::Dynamic, 1> out = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(5 * hw);
    std::vector<Index> row;
    for (int y = 0; y < cam_.height; ++y) {
      rows_for(y, row);
      for (int x = 0; x < cam_.width; ++x) {
        Scalar t = 1;
        Scalar acc[5] = {0, 0, 0, 0, 0};
        for (Index i : row) {
          const Splat<Scalar>& s = splats_[static_cast<std::size_t>(i)];
          if (x < s.x0 || x > s.x1) continue;
          Scalar g, a;
          bool clamped;
          if (!evaluate(s, x, y, g, a, clamped)) continue;
          const Scalar next_t = t * (1 - a);
          if (next_t < Scalar(RasterConstants::min_transmittance)) break;
          const Scalar w = a * t;
          ++stats_.fragments;
          acc[0] += w * s.color[0];
          acc[1] += w * s.color[1];
          acc[2] += w * s.color[2];
          acc[3] += w * s.depth;
          acc[4] += w;
          if (max_weight != nullptr) (*max_weight)[i] = std::max((*max_weight)[i], w);
          t = next_t;
        }
        const Index px = Index(y) * cam_.width + x;
        for (int c = 0; c < 5; ++c) out[c * hw + px] = acc[c];
      }
    }
    return out;
  }

  // Accumulates parameter gradients given dL/d(out planes).
  void backward(const Scalar* grad_out, Scalar* g_pos, Scalar* g_scale, Scalar* g_rot, Scalar* g_opacity,
                Scalar* g_sh) const {
    const Index hw = pixels();
    std::vector<SplatGrad<Scalar>> sg(splats_.size());
    struct Contribution {
      Index index;
      Scalar g, a, t;
      bool clamped;
    };
    std::vector<Contribution> list;
    std::vector<Index> row;
    for (int y = 0; y < cam_.height; ++y) {
      rows_for(y, row);
      for (int x = 0; x < cam_.width; ++x) {
        const Index px = Index(y) * cam_.width + x;
        Scalar go[5];
        bool any = false;
        for (int c = 0; c < 5; ++c) {
          go[c] = grad_out[c * hw + px];
          any = any || go[c] != 0;
        }
        if (!any) continue;
        list.clear();
        Scalar t = 1;
        for (Index i : row) {
          const Splat<Scalar>& s = splats_[static_cast<std::size_t>(i)];
          if (x < s.x0 || x > s.x1) continue;
          Scalar g, a;
          bool clamped;
          if (!evaluate(s, x, y, g, a, clamped)) continue;
          const Scalar next_t = t * (1 - a);
          if (next_t < Scalar(RasterConstants::min_transmittance)) break;
          list.push_back({i, g, a, t, clamped});
          t = next_t;
        }
        // Back to front: suffix holds sum_{j>i} w_j (go . f_j).
        Scalar suffix = 0;
        const Scalar pxf = Scalar(x) + Scalar(0.5), pyf = Scalar(y) + Scalar(0.5);
        for (auto it = list.rbegin(); it != list.rend(); ++it) {
          const Splat<Scalar>& s = splats_[static_cast<std::size_t>(it->index)];
          SplatGrad<Scalar>& d = sg[static_cast<std::size_t>(it->index)];
          const Scalar w = it->a * it->t;
          const Scalar dot =
              go[0] * s.color[0] + go[1] * s.color[1] + go[2] * s.color[2] + go[3] * s.depth + go[4];
          d.color += w * Vec3<Scalar>(go[0], go[1], go[2]);
          d.depth += w * go[3];
          const Scalar da = it->t * dot - suffix / (1 - it->a);
          suffix += w * dot;
          if (it->clamped) continue;
          d.opacity += da * it->g;
          const Scalar dpower = da * s.opacity * it->g;
          const Scalar dx = pxf - s.mean[0], dy = pyf - s.mean[1];
          const Scalar ka = s.conic(0, 0), kb = s.conic(0, 1), kc = s.conic(1, 1);
          d.mean[0] += dpower * (ka * dx + kb * dy);
          d.mean[1] += dpower * (kb * dx + kc * dy);
          d.conic_a += Scalar(-0.5) * dx * dx * dpower;
          d.conic_b += -dx * dy * dpower;
          d.conic_c += Scalar(-0.5) * dy * dy * dpower;
        }
      }
    }
    for (std::size_t i = 0; i < splats_.size(); ++i) {
      if (splats_[i].visible) chain(static_cast<Index>(i), sg[i], g_pos, g_scale, g_rot, g_opacity, g_sh);
    }
  }

 private:
  void prepare() {
    const Index n = p_.count;
    splats_.resize(static_cast<std::size_t>(n));
    const Mat3<Scalar>& w = cam_.rotation;
    const Vec3<Scalar> campos = cam_.center();
    for (Index i = 0; i < n; ++i) {
      Splat<Scalar>& s = splats_[static_cast<std::size_t>(i)];
      const Vec3<Scalar> pos = Eigen::Map<const Vec3<Scalar>>(p_.positions + 3 * i);
      s.pc = cam_.to_camera(pos);
      if (s.pc.z() < cam_.near_clip) {
        ++stats_.culled;
        continue;
      }
      const Scalar z = s.pc.z();
      s.depth = z;
      s.mean = Vec2<Scalar>(cam_.fx * s.pc.x() / z + cam_.cx, cam_.fy * s.pc.y() / z + cam_.cy);
      s.rot = quaternion_to_matrix<Scalar>(Eigen::Map<const Vec4<Scalar>>(p_.rotations + 4 * i));
      s.scale = Eigen::Map<const Vec3<Scalar>>(p_.log_scales + 3 * i).array().exp();
      const Mat3<Scalar> m = s.rot * s.scale.asDiagonal();
      s.sigma = m * m.transpose();
      Mat23<Scalar> j;
      j << cam_.fx / z, 0, -cam_.fx * s.pc.x() / (z * z), 0, cam_.fy / z, -cam_.fy * s.pc.y() / (z * z);
      s.jw = j * w;
      Mat2<Scalar> cov = s.jw * s.sigma * s.jw.transpose();
      cov(0, 1) = cov(1, 0) = Scalar(0.5) * (cov(0, 1) + cov(1, 0));
      cov(0, 0) += Scalar(RasterConstants::covariance_floor);
      cov(1, 1) += Scalar(RasterConstants::covariance_floor);
      const Scalar det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
      if (!(det > 0)) {
        ++stats_.singular;
        continue;
      }
      s.conic << cov(1, 1) / det, -cov(0, 1) / det, -cov(1, 0) / det, cov(0, 0) / det;
      s.opacity = sigmoid(p_.opacity_logits[i]);
      const Scalar reach = Scalar(255) * s.opacity;
      if (!(reach > 1)) continue;  // alpha * G can never reach 1/255
      const Vec3<Scalar> v = pos - campos;
      s.dir_len = v.norm();
      s.dir = v / s.dir_len;
      const VecX<Scalar> basis = sh_basis(p_.sh_degree, s.dir);
      const Scalar* sh = p_.sh + static_cast<Index>(3 * p_.coeffs()) * i;
      s.raw_color.setConstant(Scalar(0.5));
      for (int k = 0; k < p_.coeffs(); ++k) {
        for (int c = 0; c < 3; ++c) s.raw_color[c] += basis[k] * sh[3 * k + c];
      }
      s.color = s.raw_color.cwiseMax(Scalar(0));
      // Beyond this radius alpha * G < 1/255, so those pixels would be skipped anyway.
      const Scalar mid = Scalar(0.5) * (cov(0, 0) + cov(1, 1));
      const Scalar lambda_max = mid + std::sqrt(std::max(mid * mid - det, Scalar(0)));
      const Scalar radius = std::sqrt(Scalar(2) * std::log(reach) * lambda_max) + 1;
      s.x0 = std::max(0, static_cast<int>(std::floor(s.mean[0] - radius - Scalar(0.5))));
      s.x1 = std::min(cam_.width - 1, static_cast<int>(std::ceil(s.mean[0] + radius - Scalar(0.5))));
      s.y0 = std::max(0, static_cast<int>(std::floor(s.mean[1] - radius - Scalar(0.5))));
      s.y1 = std::min(cam_.height - 1, static_cast<int>(std::ceil(s.mean[1] + radius - Scalar(0.5))));
      if (s.x0 > s.x1 || s.y0 > s.y1) continue;
      s.visible = true;
      ++stats_.visible;
    }
    order_.clear();
    for (Index i = 0; i < n; ++i) {
      if (splats_[static_cast<std::size_t>(i)].visible) order_.push_back(i);
    }
    std::stable_sort(order_.begin(), order_.end(), [this](Index a, Index b) {
      return splats_[static_cast<std::size_t>(a)].depth < splats_[static_cast<std::size_t>(b)].depth;
    });
  }

  void rows_for(int y, std::vector<Index>& row) const {
    row.clear();
    for (Index i : order_) {
      const Splat<Scalar>& s = splats_[static_cast<std::size_t>(i)];
      if (y >= s.y0 && y <= s.y1) row.push_back(i);
    }
  }

  // Gaussian falloff g and clamped alpha a at pixel (x, y). False if skipped.
  bool evaluate(const Splat<Scalar>& s, int x, int y, Scalar& g, Scalar& a, bool& clamped) const {
    const Scalar dx = Scalar(x) + Scalar(0.5) - s.mean[0];
    const Scalar dy = Scalar(y) + Scalar(0.5) - s.mean[1];
    const Scalar power =
        Scalar(-0.5) * (s.conic(0, 0) * dx * dx + s.conic(1, 1) * dy * dy) - s.conic(0, 1) * dx * dy;
    g = std::exp(power);
    const Scalar raw = s.opacity * g;
    clamped = raw > Scalar(RasterConstants::max_alpha);
    a = clamped ? Scalar(RasterConstants::max_alpha) : raw;
    return a >= Scalar(RasterConstants::min_alpha);
  }

  void chain(Index i, const SplatGrad<Scalar>& d, Scalar* g_pos, Scalar* g_scale, Scalar* g_rot, Scalar* g_opacity,
             Scalar* g_sh) const {
    const Splat<Scalar>& s = splats_[static_cast<std::size_t>(i)];
    const Scalar z = s.pc.z(), x = s.pc.x(), y = s.pc.y();
    const Scalar fx = cam_.fx, fy = cam_.fy;
    Vec3<Scalar> dpos = Vec3<Scalar>::Zero();

    // Color through SH and the view direction.
    Vec3<Scalar> dcolor = d.color;
    for (int c = 0; c < 3; ++c) {
      if (!(s.raw_color[c] > 0)) dcolor[c] = 0;
    }
    if (g_sh != nullptr || g_pos != nullptr) {
      const VecX<Scalar> basis = sh_basis(p_.sh_degree, s.dir);
      const int k_count = p_.coeffs();
      const Scalar* sh = p_.sh + static_cast<Index>(3 * k_count) * i;
      if (g_sh != nullptr) {
        Scalar* out = g_sh + static_cast<Index>(3 * k_count) * i;
        for (int k = 0; k < k_count; ++k) {
          for (int c = 0; c < 3; ++c) out[3 * k + c] += basis[k] * dcolor[c];
        }
      }
      if (p_.sh_degree > 0) {
        const auto jac = sh_basis_jacobian(p_.sh_degree, s.dir);
        Vec3<Scalar> ddir = Vec3<Scalar>::Zero();
        for (int k = 1; k < k_count; ++k) {
          const Scalar w = sh[3 * k] * dcolor[0] + sh[3 * k + 1] * dcolor[1] + sh[3 * k + 2] * dcolor[2];
          ddir += w * jac.row(k).transpose();
        }
        dpos += (ddir - s.dir * s.dir.dot(ddir)) / s.dir_len;
      }
    }

    if (g_opacity != nullptr) g_opacity[i] += d.opacity * s.opacity * (1 - s.opacity);

    // Conic -> cov2d -> (J W, Sigma).
    Mat2<Scalar> gk;
    gk << d.conic_a, Scalar(0.5) * d.conic_b, Scalar(0.5) * d.conic_b, d.conic_c;
    const Mat2<Scalar> gcov = -(s.conic * gk * s.conic);
    const Mat3<Scalar> gsigma = s.jw.transpose() * gcov * s.jw;
    const Mat23<Scalar> gjw = Scalar(2) * gcov * s.jw * s.sigma;
    const Mat23<Scalar> gj = gjw * cam_.rotation.transpose();

    Vec3<Scalar> dpc = Vec3<Scalar>::Zero();
    dpc.x() += d.mean[0] * fx / z;
    dpc.y() += d.mean[1] * fy / z;
    dpc.z() += -d.mean[0] * fx * x / (z * z) - d.mean[1] * fy * y / (z * z);
    dpc.z() += d.depth;
    dpc.x() += gj(0, 2) * (-fx / (z * z));
    dpc.y() += gj(1, 2) * (-fy / (z * z));
    dpc.z() += gj(0, 0) * (-fx / (z * z)) + gj(0, 2) * (Scalar(2) * fx * x / (z * z * z)) +
               gj(1, 1) * (-fy / (z * z)) + gj(1, 2) * (Scalar(2) * fy * y / (z * z * z));
    dpos += cam_.rotation.transpose() * dpc;
    if (g_pos != nullptr) {
      for (int c = 0; c < 3; ++c) g_pos[3 * i + c] += dpos[c];
    }

    // Sigma = M M^T with M = R diag(scale).
    const Mat3<Scalar> m = s.rot * s.scale.asDiagonal();
    const Mat3<Scalar> gm = Scalar(2) * gsigma * m;
    if (g_scale != nullptr) {
      for (int c = 0; c < 3; ++c) g_scale[3 * i + c] += s.rot.col(c).dot(gm.col(c)) * s.scale[c];
    }
    if (g_rot != nullptr) {
      const Mat3<Scalar> gr = gm * s.scale.asDiagonal();
      const Vec4<Scalar> q = Eigen::Map<const Vec4<Scalar>>(p_.rotations + 4 * i);
      const Scalar qnorm = q.norm();
      const Vec4<Scalar> n = q / qnorm;
      const Scalar qw = n[0], qx = n[1], qy = n[2], qz = n[3];
      Vec4<Scalar> dn;
      dn[0] = 2 * (-qz * gr(0, 1) + qy * gr(0, 2) + qz * gr(1, 0) - qx * gr(1, 2) - qy * gr(2, 0) + qx * gr(2, 1));
      dn[1] = 2 * (qy * gr(0, 1) + qz * gr(0, 2) + qy * gr(1, 0) - 2 * qx * gr(1, 1) - qw * gr(1, 2) + qz * gr(2, 0) +
                   qw * gr(2, 1) - 2 * qx * gr(2, 2));
      dn[2] = 2 * (-2 * qy * gr(0, 0) + qx * gr(0, 1) + qw * gr(0, 2) + qx * gr(1, 0) + qz * gr(1, 2) - qw * gr(2, 0) +
                   qz * gr(2, 1) - 2 * qy * gr(2, 2));
      dn[3] = 2 * (-2 * qz * gr(0, 0) - qw * gr(0, 1) + qx * gr(0, 2) + qw * gr(1, 0) - 2 * qz * gr(1, 1) +
                   qy * gr(1, 2) + qx * gr(2, 0) + qy * gr(2, 1));
      const Vec4<Scalar> dq = (dn - n * n.dot(dn)) / qnorm;
      for (int c = 0; c < 4; ++c) g_rot[4 * i + c] += dq[c];
    }
  }

  ParamView<Scalar> p_;
  Camera<Scalar> cam_;
  std::vector<Splat<Scalar>> splats_;
  std::vector<Index> order_;
  RenderStats stats_;
};

template <typename Scalar>
ParamView<Scalar> view_of(const SceneParams<Scalar>& p) {
  const Index n = p.size();
  const int k = sh_coeff_count(p.sh_degree);
  auto check = [&](const Tensor<Scalar>& t, const Shape& want, const char* name) {
    if (!t.defined() || t.shape() != want) {
      throw ShapeError("rasterize", std::string(name) + " has shape " + (t.defined() ? to_string(t.shape()) : "<undefined>") +
                                        ", expected " + to_string(want));
    }
  };
  check(p.positions, {n, 3}, "positions");
  check(p.log_scales, {n, 3}, "log_scales");
  check(p.rotations, {n, 4}, "rotations");
  check(p.opacity_logits, {n}, "opacity_logits");
  check(p.sh, {n, k, 3}, "sh");
  return {p.positions.data().data(), p.log_scales.data().data(), p.rotations.data().data(),
          p.opacity_logits.data().data(), p.sh.data().data(), n, p.sh_degree};
}

template <typename Scalar>
ParamView<Scalar> view_of(const GaussianScene<Scalar>& s) {
  return {s.positions().data(), s.log_scales().data(), s.rotations().data(), s.opacity_logits().data(),
          s.sh().data(), s.size(), s.sh_degree()};
}

template <typename Scalar>
RenderedView<Scalar> split(const Tensor<Scalar>& planes, const Camera<Scalar>& cam, const RenderStats& stats) {
  const Index h = cam.height, w = cam.width;
  RenderedView<Scalar> view;
  view.color = slice(planes, 0, 0, 3);
  view.depth = reshape(slice(planes, 0, 3, 4), Shape{h, w});
  view.alpha = reshape(slice(planes, 0, 4, 5), Shape{h, w});
  view.stats = stats;
  return view;
}

}  // namespace

template <typename Scalar>
Projection<Scalar> project(const Gaussian<Scalar>& g, const Camera<Scalar>& cam) {
  Projection<Scalar> out;
  const Vec3<Scalar> pc = cam.to_camera(g.position);
  out.depth = pc.z();
  if (pc.z() < cam.near_clip) {
    out.culled = true;
    return out;
  }
  const Scalar z = pc.z();
  out.mean = Vec2<Scalar>(cam.fx * pc.x() / z + cam.cx, cam.fy * pc.y() / z + cam.cy);
  const Mat3<Scalar> m = quaternion_to_matrix(g.rotation) * g.scale().asDiagonal();
  Mat23<Scalar> j;
  j << cam.fx / z, 0, -cam.fx * pc.x() / (z * z), 0, cam.fy / z, -cam.fy * pc.y() / (z * z);
  const Mat23<Scalar> jw = j * cam.rotation;
  out.cov = jw * (m * m.transpose()) * jw.transpose();
  out.cov(0, 1) = out.cov(1, 0) = Scalar(0.5) * (out.cov(0, 1) + out.cov(1, 0));
  out.cov.diagonal().array() += Scalar(RasterConstants::covariance_floor);
  return out;
}

template <typename Scalar>
RenderedView<Scalar> rasterize(const SceneParams<Scalar>& params, const Camera<Scalar>& cam) {
  const ParamView<Scalar> pv = view_of(params);
  auto raster = std::make_shared<Rasterizer<Scalar>>(pv, cam);
  auto planes = raster->forward();
  const RenderStats stats = raster->stats();
  const Shape shape{5, Index(cam.height), Index(cam.width)};
  std::vector<Tensor<Scalar>> inputs{params.positions, params.log_scales, params.rotations, params.opacity_logits,
                                     params.sh};
  Tensor<Scalar> out = detail::make_result<Scalar>(
      "rasterize", shape, std::move(planes), std::move(inputs), [raster](Node<Scalar>& o) {
        auto grad_ptr = [&o](std::size_t k) -> Scalar* {
          return o.inputs[k]->requires_grad ? o.inputs[k]->grad_buffer().data() : nullptr;
        };
        raster->backward(o.grad.data(), grad_ptr(0), grad_ptr(1), grad_ptr(2), grad_ptr(3), grad_ptr(4));
      });
  return split(out, cam, stats);
}

template <typename Scalar>
RenderedView<Scalar> rasterize(const GaussianScene<Scalar>& scene, const Camera<Scalar>& cam) {
  Rasterizer<Scalar> raster(view_of(scene), cam);
  auto data = raster.forward();
  Tensor<Scalar> planes(Shape{5, Index(cam.height), Index(cam.width)}, std::move(data));
  return split(planes, cam, raster.stats());
}

template <typename Scalar>
VecX<Scalar> max_contribution(const GaussianScene<Scalar>& scene, const Camera<Scalar>& cam) {
  Rasterizer<Scalar> raster(view_of(scene), cam);
  VecX<Scalar> weights = VecX<Scalar>::Zero(scene.size());
  raster.forward(&weights);
  return weights;
}

#define STYLEGS_INSTANTIATE_RENDERER(S)                                                  \
  template Projection<S> project(const Gaussian<S>&, const Camera<S>&);                  \
  template RenderedView<S> rasterize(const SceneParams<S>&, const Camera<S>&);           \
  template RenderedView<S> rasterize(const GaussianScene<S>&, const Camera<S>&);         \
  template VecX<S> max_contribution(const GaussianScene<S>&, const Camera<S>&);

STYLEGS_INSTANTIATE_RENDERER(float)
STYLEGS_INSTANTIATE_RENDERER(double)

}  // namespace stylegs
