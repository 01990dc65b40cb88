#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stylegs/image_io.hpp"
#include "stylegs/scene.hpp"

namespace stylegs {

/// RGB -> YIQ rows (Y, I, Q).
Mat3<double> yiq_matrix();
/// Exact inverse of yiq_matrix().
Mat3<double> yiq_inverse();

/// Differentiable [3,H,W] color-space conversions.
template <typename Scalar>
Tensor<Scalar> rgb_to_yiq(const Tensor<Scalar>& rgb);
template <typename Scalar>
Tensor<Scalar> yiq_to_rgb(const Tensor<Scalar>& yiq);

/// Y = 0.299 R + 0.587 G + 0.114 B as [1,H,W]. The sum is formed as
/// (299 R + 587 G + 114 B) / 1000 in double precision, so two inputs whose
/// luminance agrees exactly produce bit-identical outputs.
template <typename Scalar>
Tensor<Scalar> luminance(const Tensor<Scalar>& rgb);

/// Luminance replicated into three channels, [3,H,W].
template <typename Scalar>
Tensor<Scalar> luminance_rgb(const Tensor<Scalar>& rgb);

struct PixelPoint {
  int x = 0;
  int y = 0;
  bool operator==(const PixelPoint&) const = default;
};

/// segment(image, points) -> binary mask; must be deterministic.
using Segmenter = std::function<Mask(const Tensor<float>&, std::span<const PixelPoint>)>;

/// Union over seeds of the 4-connected region whose pixels differ from the
/// seed color by less than `threshold` in every channel.
Mask flood_fill_segment(const Tensor<float>& image, std::span<const PixelPoint> points, double threshold = 0.05);
Segmenter flood_fill_segmenter(double threshold = 0.05);

/// Offsets visited when the carried point fails: square rings of Chebyshev
/// radius step, 2 step, ... up to `radius`, each walked clockwise from its
/// top-left corner.
std::vector<PixelPoint> spiral_offsets(int radius, int step);

struct TrackOptions {
  double tolerance = -1;  // |area - area(M_start)| bound in pixels; < 0 means 10% of area(M_start)
  int radius = 12;
  int step = 2;
};

struct MaskSequence {
  std::vector<Mask> masks;           // one per view
  std::vector<PixelPoint> points;    // accepted seed per view (first point of the set)
  std::string provenance = "tracked";
};

/// Propagates a point-seeded mask from `start` across all views. Each view is
/// seeded with the points accepted in its neighbor toward `start`; when the
/// resulting area differs from the start mask's by more than the tolerance,
/// the seeds are shifted along spiral_offsets until a mask fits. Throws
/// TrackingError naming the first view where no offset works.
MaskSequence track_masks(std::span<const Tensor<float>> views, std::size_t start, std::span<const PixelPoint> points,
                         const Segmenter& segmenter, const TrackOptions& options = {});

/// Nearest-neighbor resampling (source index floor((i + 0.5) * src / dst)).
Mask resize_mask_nearest(const Mask& mask, Index height, Index width);

}  // namespace stylegs
