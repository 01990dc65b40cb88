#include "stylegs/styleloss.hpp"

#include <cmath>
#include <limits>

#include "stylegs/controls.hpp"
#include "stylegs/errors.hpp"
#include "stylegs/log.hpp"
#include "stylegs/ops.hpp"

namespace stylegs {

namespace {

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kCosineEps = 1e-8;
constexpr Index kBlockRows = 256;

template <typename Scalar>
std::vector<Index> selected(const Mask* mask, Index h, Index w, const char* which) {
  std::vector<Index> out;
  if (mask != nullptr && (mask->rows() != h || mask->cols() != w)) {
    throw ShapeError("nnfm_loss", std::string(which) + " mask is " + std::to_string(mask->rows()) + "x" +
                                      std::to_string(mask->cols()) + ", feature map is " + std::to_string(h) + "x" +
                                      std::to_string(w));
  }
  for (Index p = 0; p < h * w; ++p) {
    if (mask == nullptr || mask->data()[p] != 0) out.push_back(p);
  }
  if (out.empty()) throw ShapeError("nnfm_loss", std::string(which) + " selection is empty");
  return out;
}

template <typename Scalar>
RowMat<Scalar> gather_columns(const Tensor<Scalar>& f, const std::vector<Index>& cols) {
  const Index c = f.dim(0), hw = f.dim(1) * f.dim(2);
  Eigen::Map<const RowMat<Scalar>> all(f.data().data(), c, hw);
  RowMat<Scalar> out(c, static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Index>(k)) = all.col(cols[k]);
  return out;
}

// d cos_dist / d a for one pair; accumulated with the given stride.
template <typename Scalar>
void accumulate_pair_grad(const Scalar* a, const Scalar* b, Index n, Index stride, Scalar coeff, Scalar* out) {
  Scalar dot = 0, aa = 0, bb = 0;
  for (Index c = 0; c < n; ++c) {
    dot += a[c * stride] * b[c * stride];
    aa += a[c * stride] * a[c * stride];
    bb += b[c * stride] * b[c * stride];
  }
  const Scalar na = std::sqrt(aa), nb = std::sqrt(bb);
  const Scalar den = na * nb + Scalar(kCosineEps);
  const Scalar radial = na > 0 ? dot * nb / (na * den * den) : Scalar(0);
  for (Index c = 0; c < n; ++c) out[c * stride] += coeff * -(b[c * stride] / den - radial * a[c * stride]);
}

}  // namespace

template <typename Scalar>
Scalar cosine_distance(const Scalar* a, const Scalar* b, Index n, Index stride_a, Index stride_b) {
  Scalar dot = 0, aa = 0, bb = 0;
  for (Index c = 0; c < n; ++c) {
    const Scalar x = a[c * stride_a], y = b[c * stride_b];
    dot += x * y;
    aa += x * x;
    bb += y * y;
  }
  return Scalar(1) - dot / (std::sqrt(aa) * std::sqrt(bb) + Scalar(kCosineEps));
}

template <typename Scalar>
Tensor<Scalar> nnfm_loss(const Tensor<Scalar>& render, const Tensor<Scalar>& style, const Mask* render_mask,
                         const Mask* style_mask) {
  if (render.ndim() != 3 || style.ndim() != 3 || render.dim(0) != style.dim(0)) {
    throw ShapeError("nnfm_loss", "feature maps " + to_string(render.shape()) + " and " + to_string(style.shape()) +
                                      " must be [C,h,w] with equal C");
  }
  const Index channels = render.dim(0);
  const Index n_all = render.dim(1) * render.dim(2), m_all = style.dim(1) * style.dim(2);
  const std::vector<Index> rows = selected<Scalar>(render_mask, render.dim(1), render.dim(2), "render");
  const std::vector<Index> cols = selected<Scalar>(style_mask, style.dim(1), style.dim(2), "style");
  const RowMat<Scalar> a = gather_columns(render, rows);
  const RowMat<Scalar> b = gather_columns(style, cols);
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> na = a.colwise().norm().transpose();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> nb = b.colwise().norm().transpose();
  // The GEMM only prunes; every surviving candidate is re-scored with the
  // scalar cosine_distance so the result does not depend on GEMM rounding.
  const Scalar slack = std::sqrt(std::numeric_limits<Scalar>::epsilon());
  const Index n = static_cast<Index>(rows.size()), m = static_cast<Index>(cols.size());
  std::vector<Index> match(static_cast<std::size_t>(n));
  std::vector<Scalar> best(static_cast<std::size_t>(n));
  const Scalar* rdata = render.data().data();
  const Scalar* sdata = style.data().data();
  RowMat<Scalar> dots;
  for (Index r0 = 0; r0 < n; r0 += kBlockRows) {
    const Index len = std::min(kBlockRows, n - r0);
    dots.noalias() = a.middleCols(r0, len).transpose() * b;
    for (Index i = 0; i < len; ++i) {
      const Scalar ni = na[r0 + i];
      auto approx = [&](Index j) { return Scalar(1) - dots(i, j) / (ni * nb[j] + Scalar(kCosineEps)); };
      Scalar lo = std::numeric_limits<Scalar>::infinity();
      for (Index j = 0; j < m; ++j) lo = std::min(lo, approx(j));
      Scalar exact = std::numeric_limits<Scalar>::infinity();
      Index arg = 0;
      const Scalar* pa = rdata + rows[static_cast<std::size_t>(r0 + i)];
      for (Index j = 0; j < m; ++j) {
        if (approx(j) > lo + slack) continue;
        const Scalar d = cosine_distance(pa, sdata + cols[static_cast<std::size_t>(j)], channels, n_all, m_all);
        if (d < exact) {
          exact = d;
          arg = j;
        }
      }
      match[static_cast<std::size_t>(r0 + i)] = cols[static_cast<std::size_t>(arg)];
      best[static_cast<std::size_t>(r0 + i)] = exact;
    }
  }
  Scalar total = 0;
  for (Scalar v : best) total += v;
  typename Tensor<Scalar>::Array value(1);
  value[0] = total / Scalar(n);
  return detail::make_result<Scalar>(
      "nnfm_loss", Shape{1}, std::move(value), {render, style},
      [rows, match, channels, n_all, m_all, n](Node<Scalar>& o) {
        const Scalar coeff = o.grad[0] / Scalar(n);
        const Scalar* rd = o.inputs[0]->data.data();
        const Scalar* sd = o.inputs[1]->data.data();
        const bool want_r = o.inputs[0]->requires_grad, want_s = o.inputs[1]->requires_grad;
        Scalar* gr = want_r ? o.inputs[0]->grad_buffer().data() : nullptr;
        Scalar* gs = want_s ? o.inputs[1]->grad_buffer().data() : nullptr;
        for (std::size_t k = 0; k < rows.size(); ++k) {
          const Index i = rows[k], j = match[k];
          if (want_r && n_all == m_all) {
            accumulate_pair_grad(rd + i, sd + j, channels, n_all, coeff, gr + i);
          } else if (want_r) {
            // Strides differ: copy the style vector to the render stride.
            std::vector<Scalar> bj(static_cast<std::size_t>(channels * n_all));
            for (Index c = 0; c < channels; ++c) bj[static_cast<std::size_t>(c * n_all)] = sd[c * m_all + j];
            accumulate_pair_grad(rd + i, bj.data(), channels, n_all, coeff, gr + i);
          }
          if (want_s) {
            std::vector<Scalar> ai(static_cast<std::size_t>(channels)), bj(static_cast<std::size_t>(channels)),
                g(static_cast<std::size_t>(channels), Scalar(0));
            for (Index c = 0; c < channels; ++c) {
              ai[static_cast<std::size_t>(c)] = rd[c * n_all + i];
              bj[static_cast<std::size_t>(c)] = sd[c * m_all + j];
            }
            accumulate_pair_grad(bj.data(), ai.data(), channels, 1, coeff, g.data());
            for (Index c = 0; c < channels; ++c) gs[c * m_all + j] += g[static_cast<std::size_t>(c)];
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> content_loss(const Tensor<Scalar>& content, const Tensor<Scalar>& render) {
  if (content.shape() != render.shape()) {
    throw ShapeError("content_loss", to_string(content.shape()) + " vs " + to_string(render.shape()));
  }
  const auto d = render - content;
  return mean(d * d);
}

template <typename Scalar>
Mask valid_depth_mask(const Tensor<Scalar>& alpha, Scalar threshold) {
  if (alpha.ndim() != 2) throw ShapeError("valid_depth_mask", "expected [H,W], got " + to_string(alpha.shape()));
  Mask m(alpha.dim(0), alpha.dim(1));
  for (Index i = 0; i < alpha.size(); ++i) m.data()[i] = alpha[i] > threshold ? 1 : 0;
  return m;
}

template <typename Scalar>
Tensor<Scalar> depth_loss(const Tensor<Scalar>& origin, const Tensor<Scalar>& render, const Mask& valid) {
  if (origin.shape() != render.shape() || render.ndim() != 2 || valid.rows() != render.dim(0) ||
      valid.cols() != render.dim(1)) {
    throw ShapeError("depth_loss", "origin " + to_string(origin.shape()) + ", render " + to_string(render.shape()) +
                                       " and mask must agree");
  }
  typename Tensor<Scalar>::Array weights(valid.size());
  Index count = 0;
  for (Index i = 0; i < valid.size(); ++i) {
    weights[i] = valid.data()[i] ? Scalar(1) : Scalar(0);
    count += valid.data()[i] ? 1 : 0;
  }
  if (count == 0) {
    log_warn("depth loss has no valid pixels; contributing 0");
    return Tensor<Scalar>::scalar(0);
  }
  const Tensor<Scalar> w(render.shape(), std::move(weights));
  const auto d = render - origin.clone();
  return scale(sum(d * d * w), Scalar(1) / Scalar(count));
}

template <typename Scalar>
RegLosses<Scalar> reg_losses(const SceneParams<Scalar>& params, const SceneSnapshot<Scalar>& snapshot) {
  const Index n = params.size();
  if (n != snapshot.size()) {
    throw ShapeError("reg_losses", "scene has " + std::to_string(n) + " Gaussians, snapshot " +
                                       std::to_string(snapshot.size()));
  }
  using Array = typename Tensor<Scalar>::Array;
  const Tensor<Scalar> s0(Shape{n, 3}, Array(Eigen::Map<const Array>(snapshot.scales().data(), 3 * n)));
  const Tensor<Scalar> a0(Shape{n}, Array(snapshot.opacities().array()));
  const Tensor<Scalar> one = Tensor<Scalar>::scalar(1);
  RegLosses<Scalar> r;
  r.scale = mean(abs(exp(params.log_scales) - s0));
  const auto opacity = one / shift(exp(scale(params.opacity_logits, Scalar(-1))), Scalar(1));
  r.opacity = mean(abs(opacity - a0));
  return r;
}

template <typename Scalar>
Tensor<Scalar> tv_loss(const Tensor<Scalar>& image) {
  if (image.ndim() != 3) throw ShapeError("tv_loss", "expected [C,H,W], got " + to_string(image.shape()));
  const Index h = image.dim(1), w = image.dim(2);
  Tensor<Scalar> total = Tensor<Scalar>::scalar(0);
  bool any = false;
  if (w >= 2) {
    total = mean(abs(slice(image, 2, 1, w) - slice(image, 2, 0, w - 1)));
    any = true;
  }
  if (h >= 2) {
    const auto v = mean(abs(slice(image, 1, 1, h) - slice(image, 1, 0, h - 1)));
    total = any ? total + v : v;
  }
  return total;
}

void LossWeights::validate() const {
  for (double w : {style, content, depth, scale, opacity, tv}) {
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
}

template <typename Scalar>
Tensor<Scalar> total_loss(const LossTerms<Scalar>& terms, const LossWeights& weights) {
  weights.validate();
  Tensor<Scalar> total;
  auto add_term = [&total](const Tensor<Scalar>& t, double w) {
    if (!t.defined()) return;
    const auto scaled = scale(t, Scalar(w));
    total = total.defined() ? total + scaled : scaled;
  };
  add_term(terms.style, weights.style);
  add_term(terms.content, weights.content);
  add_term(terms.depth, weights.depth);
  add_term(terms.scale, weights.scale);
  add_term(terms.opacity, weights.opacity);
  add_term(terms.tv, weights.tv);
  return total.defined() ? total : Tensor<Scalar>::scalar(0);
}

LayerWeights default_style_layers() {
  return {{"conv2_1", 1.0}, {"conv2_2", 1.0}, {"conv3_1", 1.0}, {"conv3_2", 1.0}, {"conv3_3", 1.0}};
}

LayerWeights scale_preset(const std::string& name) {
  auto blocks = [](std::initializer_list<std::pair<int, double>> spec) {
    LayerWeights w;
    for (const auto& [block, weight] : spec) {
      for (const auto& layer : vgg_block_layers(block)) w[layer] = weight;
    }
    return w;
  };
  if (name == "fine") return blocks({{2, 1.0}, {3, 0.5}});
  if (name == "default") return blocks({{2, 1.0}, {3, 1.0}});
  if (name == "coarse") return blocks({{3, 0.5}, {4, 1.0}});
  throw ConfigError("unknown scale preset '" + name + "' (expected fine, default or coarse)");
}

template <typename Scalar>
Tensor<Scalar> style_loss(const FeatureSet<Scalar>& render, const FeatureSet<Scalar>& style,
                          const LayerWeights& weights) {
  Tensor<Scalar> total;
  for (const auto& [layer, w] : weights) {
    if (!(w >= 0)) throw ConfigError("layer weight for " + layer + " must be >= 0");
    if (w == 0) continue;
    const auto r = render.find(layer), s = style.find(layer);
    if (r == render.end() || s == style.end()) throw ConfigError("features for layer '" + layer + "' are missing");
    const auto term = scale(nnfm_loss(r->second, s->second), Scalar(w));
    total = total.defined() ? total + term : term;
  }
  if (!total.defined()) throw ConfigError("style loss needs at least one positive layer weight");
  return total;
}

std::set<std::string> layer_set(const LayerWeights& weights) {
  std::set<std::string> out;
  for (const auto& [layer, w] : weights) {
    if (w > 0) out.insert(layer);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> style_loss_color(const Tensor<Scalar>& render_rgb, const Tensor<Scalar>& style_rgb,
                                const ConvNetWeights<Scalar>& vgg, const LayerWeights& weights,
                                const ImageNormalization& norm) {
  const auto layers = layer_set(weights);
  const auto render = extract(luminance_rgb(render_rgb), vgg, layers, norm);
  const auto style = extract(luminance_rgb(style_rgb.clone()), vgg, layers, norm);
  return style_loss(render, style, weights);
}

template <typename Scalar>
Tensor<Scalar> style_loss_scale(const FeatureSet<Scalar>& render, const FeatureSet<Scalar>& style,
                                const LayerWeights& block_weights) {
  return style_loss(render, style, block_weights);
}

template <typename Scalar>
Tensor<Scalar> style_loss_spatial(const FeatureSet<Scalar>& render, const std::vector<SpatialRegion<Scalar>>& regions,
                                  const LayerWeights& weights) {
  if (regions.empty()) throw ConfigError("spatial style loss needs at least one region");
  Tensor<Scalar> total;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const auto& region = regions[r];
    if (!(region.weight >= 0)) throw ConfigError("region weight must be >= 0");
    for (const auto& [layer, w] : weights) {
      if (w == 0 || region.weight == 0) continue;
      const auto rf = render.find(layer), sf = region.style.find(layer);
      if (rf == render.end() || sf == region.style.end()) {
        throw ConfigError("features for layer '" + layer + "' are missing");
      }
      const Mask rm = resize_mask_nearest(region.render_mask, rf->second.dim(1), rf->second.dim(2));
      const Mask sm = resize_mask_nearest(region.style_mask, sf->second.dim(1), sf->second.dim(2));
      if ((rm == 0).all() || (sm == 0).all()) {
        log_warn("region " + std::to_string(r) + " is empty at " + layer + "; skipped");
        continue;
      }
      const auto term = scale(nnfm_loss(rf->second, sf->second, &rm, &sm), Scalar(region.weight * w));
      total = total.defined() ? total + term : term;
    }
  }
  return total.defined() ? total : Tensor<Scalar>::scalar(0);
}

#define STYLEGS_INSTANTIATE_STYLELOSS(S)                                                                          \
  template S cosine_distance(const S*, const S*, Index, Index, Index);                                           \
  template Tensor<S> nnfm_loss(const Tensor<S>&, const Tensor<S>&, const Mask*, const Mask*);                    \
  template Tensor<S> content_loss(const Tensor<S>&, const Tensor<S>&);                                           \
  template Tensor<S> depth_loss(const Tensor<S>&, const Tensor<S>&, const Mask&);                                \
  template Mask valid_depth_mask(const Tensor<S>&, S);                                                           \
  template RegLosses<S> reg_losses(const SceneParams<S>&, const SceneSnapshot<S>&);                              \
  template Tensor<S> tv_loss(const Tensor<S>&);                                                                  \
  template Tensor<S> total_loss(const LossTerms<S>&, const LossWeights&);                                        \
  template Tensor<S> style_loss(const FeatureSet<S>&, const FeatureSet<S>&, const LayerWeights&);                \
  template Tensor<S> style_loss_color(const Tensor<S>&, const Tensor<S>&, const ConvNetWeights<S>&,              \
                                      const LayerWeights&, const ImageNormalization&);                           \
  template Tensor<S> style_loss_scale(const FeatureSet<S>&, const FeatureSet<S>&, const LayerWeights&);          \
  template Tensor<S> style_loss_spatial(const FeatureSet<S>&, const std::vector<SpatialRegion<S>>&,              \
                                        const LayerWeights&);

STYLEGS_INSTANTIATE_STYLELOSS(float)
STYLEGS_INSTANTIATE_STYLELOSS(double)

}  // namespace stylegs
