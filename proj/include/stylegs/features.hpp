#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "stylegs/tensor.hpp"

namespace stylegs {

/// One named float32 array as stored in an SGSW container.
struct SgswTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// SGSW container: "SGSW", u32 version (1), u32 count, then per tensor
/// u16 name length, UTF-8 name, u8 ndim, u32 dims, float32 row-major data.
/// Everything is little-endian. Errors are ParseError naming the tensor.
std::vector<SgswTensor> read_sgsw(const std::filesystem::path& path);
void write_sgsw(const std::filesystem::path& path, const std::vector<SgswTensor>& tensors);

struct VggLayer {
  const char* name;
  int in_channels;
  int out_channels;
  bool pool_after;  // 2x2 max pool follows this layer's relu
};

/// The 13 convolution layers of VGG-16, in forward order.
const std::array<VggLayer, 13>& vgg16_layers();

/// Per-channel input normalization applied before the first convolution.
struct ImageNormalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};

/// Weights [out,in,3,3] and biases [out] of every VGG-16 conv layer,
/// stored under "<layer>.weight" and "<layer>.bias".
template <typename Scalar>
class ConvNetWeights {
 public:
  /// Validates that exactly the 26 expected tensors are present with the
  /// architecture's shapes. Throws ParseError naming the first offender.
  static ConvNetWeights from_sgsw(const std::vector<SgswTensor>& tensors);
  static ConvNetWeights load(const std::filesystem::path& path);

  std::vector<SgswTensor> to_sgsw() const;

  const Tensor<Scalar>& weight(const std::string& layer) const;
  const Tensor<Scalar>& bias(const std::string& layer) const;

  template <typename Other>
  ConvNetWeights<Other> cast() const;

 private:
  template <typename>
  friend class ConvNetWeights;
  std::map<std::string, Tensor<Scalar>> tensors_;
};

/// Deterministic stand-in weights: a splitmix64 stream seeded with `seed`
/// fills each tensor in layer order, weights uniform in +-sqrt(6 / fan_in),
/// biases uniform in +-0.05. Reproduced bit-for-bit by the fixture script.
std::vector<SgswTensor> synthetic_vgg_weights(std::uint64_t seed);

template <typename Scalar>
using FeatureSet = std::map<std::string, Tensor<Scalar>>;

/// Post-relu activations of the requested layers for an image [3,H,W] in
/// [0,1]. Only the prefix of the network up to the deepest requested layer
/// is evaluated. Differentiable with respect to `image`.
template <typename Scalar>
FeatureSet<Scalar> extract(const Tensor<Scalar>& image, const ConvNetWeights<Scalar>& weights,
                           const std::set<std::string>& layers, const ImageNormalization& norm = {});

/// Center crop of [C,H,W] to the largest multiple of 16 in each spatial
/// dimension. Returns the input itself when no crop is needed.
template <typename Scalar>
Tensor<Scalar> crop_to_multiple_of_16(const Tensor<Scalar>& image);

/// Layer names of one block, e.g. block 3 -> conv3_1, conv3_2, conv3_3.
std::vector<std::string> vgg_block_layers(int block);

}  // namespace stylegs
