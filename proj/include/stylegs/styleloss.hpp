#pragma once

#include <map>
#include <string>
#include <vector>

#include "stylegs/features.hpp"
#include "stylegs/image_io.hpp"
#include "stylegs/scene.hpp"

namespace stylegs {

/// 1 - a.b / (|a| |b| + 1e-8) for n-vectors read with the given strides.
/// Sums run in index order so every caller gets identical rounding.
template <typename Scalar>
Scalar cosine_distance(const Scalar* a, const Scalar* b, Index n, Index stride_a = 1, Index stride_b = 1);

/// Mean over render locations of the cosine distance to the nearest style
/// location, both maps [C,h,w]. Optional masks at feature resolution restrict
/// the render locations averaged over and the style locations searched. The
/// nearest index is constant under differentiation. An empty render or style
/// selection throws ShapeError.
template <typename Scalar>
Tensor<Scalar> nnfm_loss(const Tensor<Scalar>& render, const Tensor<Scalar>& style, const Mask* render_mask = nullptr,
                         const Mask* style_mask = nullptr);

/// Mean squared difference.
template <typename Scalar>
Tensor<Scalar> content_loss(const Tensor<Scalar>& content, const Tensor<Scalar>& render);

/// Mean squared depth difference over pixels where `valid` is set. Returns 0
/// with a warning if no pixel is valid.
template <typename Scalar>
Tensor<Scalar> depth_loss(const Tensor<Scalar>& origin, const Tensor<Scalar>& render, const Mask& valid);

/// alpha > threshold.
template <typename Scalar>
Mask valid_depth_mask(const Tensor<Scalar>& alpha, Scalar threshold = Scalar(0.05));

template <typename Scalar>
struct RegLosses {
  Tensor<Scalar> scale;    // mean |exp(log_scale) - s0| over 3M entries
  Tensor<Scalar> opacity;  // mean |sigmoid(logit) - a0| over M entries
};

template <typename Scalar>
RegLosses<Scalar> reg_losses(const SceneParams<Scalar>& params, const SceneSnapshot<Scalar>& snapshot);

/// mean |horizontal differences| + mean |vertical differences|; an axis of
/// extent 1 contributes 0.
template <typename Scalar>
Tensor<Scalar> tv_loss(const Tensor<Scalar>& image);

struct LossWeights {
  double style = 2.0;
  double content = 0.005;
  double depth = 0.01;  // 0.05 for 360-degree captures
  double scale = 0.05;
  double opacity = 0.05;
  double tv = 0.02;

  /// Throws ConfigError on negative or non-finite weights.
  void validate() const;
};

/// Undefined terms count as zero.
template <typename Scalar>
struct LossTerms {
  Tensor<Scalar> style, content, depth, scale, opacity, tv;
};

template <typename Scalar>
Tensor<Scalar> total_loss(const LossTerms<Scalar>& terms, const LossWeights& weights);

using LayerWeights = std::map<std::string, double>;

/// conv2_1, conv2_2, conv3_1, conv3_2, conv3_3 with weight 1.
LayerWeights default_style_layers();

/// "fine" {conv2: 1, conv3: 0.5}, "default" {conv2: 1, conv3: 1},
/// "coarse" {conv3: 0.5, conv4: 1}. Throws ConfigError for other names.
LayerWeights scale_preset(const std::string& name);

/// Sum over layers of w_l * nnfm(render_l, style_l). Throws ConfigError if
/// every weight is zero or a layer is missing from either set.
template <typename Scalar>
Tensor<Scalar> style_loss(const FeatureSet<Scalar>& render, const FeatureSet<Scalar>& style,
                          const LayerWeights& weights);

/// Luminance-only style loss: both images are reduced to Y replicated to
/// three channels before feature extraction.
template <typename Scalar>
Tensor<Scalar> style_loss_color(const Tensor<Scalar>& render_rgb, const Tensor<Scalar>& style_rgb,
                                const ConvNetWeights<Scalar>& vgg, const LayerWeights& weights,
                                const ImageNormalization& norm = {});

/// Same as style_loss; kept separate so the control mode is explicit.
template <typename Scalar>
Tensor<Scalar> style_loss_scale(const FeatureSet<Scalar>& render, const FeatureSet<Scalar>& style,
                                const LayerWeights& block_weights);

template <typename Scalar>
struct SpatialRegion {
  FeatureSet<Scalar> style;  // features of this region's style image
  Mask render_mask;          // content mask at render resolution
  Mask style_mask;           // mask at style image resolution
  double weight = 1.0;
};

/// Sum over regions of w_r times the masked style loss. Masks are resized to
/// each layer's resolution by nearest neighbor; a region whose render or
/// style mask vanishes there is skipped with a warning. Zero regions throw
/// ConfigError.
template <typename Scalar>
Tensor<Scalar> style_loss_spatial(const FeatureSet<Scalar>& render, const std::vector<SpatialRegion<Scalar>>& regions,
                                  const LayerWeights& weights);

}  // namespace stylegs
