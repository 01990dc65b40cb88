#include "stylegs/features.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "stylegs/errors.hpp"
#include "stylegs/ops.hpp"

namespace stylegs {

static_assert(std::endian::native == std::endian::little, "SGSW I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'G', 'S', 'W'};
constexpr std::uint32_t kVersion = 1;

class Reader {
 public:
  Reader(std::istream& in, std::uint64_t size) : in_(in), size_(size) {}

  template <typename T>
  T get(const std::string& field) {
    T value;
    bytes(&value, sizeof(T), field);
    return value;
  }

  void bytes(void* dst, std::uint64_t n, const std::string& field) {
    if (offset_ + n > size_) throw ParseError(field, offset_, "truncated SGSW data");
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    offset_ += n;
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t size_;
  std::uint64_t offset_ = 0;
};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Shape weight_shape(const VggLayer& l) { return {l.out_channels, l.in_channels, 3, 3}; }
Shape bias_shape(const VggLayer& l) { return {l.out_channels}; }

}  // namespace

std::vector<SgswTensor> read_sgsw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("file", 0, "cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  Reader r(in, size);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError("magic", 0, "not an SGSW file");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) throw ParseError("version", 4, "unsupported SGSW version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("tensor_count");
  std::vector<SgswTensor> out;
  out.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string where = "tensor #" + std::to_string(t);
    SgswTensor tensor;
    const auto name_len = r.get<std::uint16_t>(where);
    tensor.name.resize(name_len);
    r.bytes(tensor.name.data(), name_len, where);
    const auto ndim = r.get<std::uint8_t>(tensor.name);
    for (int d = 0; d < ndim; ++d) tensor.shape.push_back(static_cast<Index>(r.get<std::uint32_t>(tensor.name)));
    const Index n = numel(tensor.shape);
    tensor.data.resize(static_cast<std::size_t>(n));
    r.bytes(tensor.data.data(), static_cast<std::uint64_t>(n) * sizeof(float), tensor.name);
    out.push_back(std::move(tensor));
  }
  if (r.offset() != size) throw ParseError("trailer", r.offset(), "unexpected bytes after the last tensor");
  return out;
}

void write_sgsw(const std::filesystem::path& path, const std::vector<SgswTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (static_cast<Index>(t.data.size()) != numel(t.shape)) {
      throw ShapeError("write_sgsw", t.name + " has " + std::to_string(t.data.size()) + " values for shape " +
                                         to_string(t.shape));
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (Index d : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

const std::array<VggLayer, 13>& vgg16_layers() {
  static const std::array<VggLayer, 13> layers{{
      {"conv1_1", 3, 64, false},
      {"conv1_2", 64, 64, true},
      {"conv2_1", 64, 128, false},
      {"conv2_2", 128, 128, true},
      {"conv3_1", 128, 256, false},
      {"conv3_2", 256, 256, false},
      {"conv3_3", 256, 256, true},
      {"conv4_1", 256, 512, false},
      {"conv4_2", 512, 512, false},
      {"conv4_3", 512, 512, true},
      {"conv5_1", 512, 512, false},
      {"conv5_2", 512, 512, false},
      {"conv5_3", 512, 512, true},
  }};
  return layers;
}

std::vector<std::string> vgg_block_layers(int block) {
  std::vector<std::string> out;
  const std::string prefix = "conv" + std::to_string(block) + "_";
  for (const auto& l : vgg16_layers()) {
    if (std::string(l.name).rfind(prefix, 0) == 0) out.emplace_back(l.name);
  }
  if (out.empty()) throw ConfigError("VGG-16 has no block " + std::to_string(block));
  return out;
}

template <typename Scalar>
ConvNetWeights<Scalar> ConvNetWeights<Scalar>::from_sgsw(const std::vector<SgswTensor>& tensors) {
  std::map<std::string, const SgswTensor*> by_name;
  for (const auto& t : tensors) {
    if (!by_name.emplace(t.name, &t).second) throw ParseError(t.name, 0, "duplicate tensor '" + t.name + "'");
  }
  ConvNetWeights w;
  auto take = [&](const std::string& name, const Shape& want) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError(name, 0, "missing tensor '" + name + "'");
    const SgswTensor& t = *it->second;
    if (t.shape != want) {
      throw ShapeError(name, "has shape " + to_string(t.shape) + ", expected " + to_string(want));
    }
    typename Tensor<Scalar>::Array data(static_cast<Index>(t.data.size()));
    for (std::size_t i = 0; i < t.data.size(); ++i) data[static_cast<Index>(i)] = static_cast<Scalar>(t.data[i]);
    w.tensors_.emplace(name, Tensor<Scalar>(want, std::move(data)));
    by_name.erase(it);
  };
  for (const auto& l : vgg16_layers()) {
    take(std::string(l.name) + ".weight", weight_shape(l));
    take(std::string(l.name) + ".bias", bias_shape(l));
  }
  if (!by_name.empty()) {
    const std::string name = by_name.begin()->first;
    throw ParseError(name, 0, "unexpected tensor '" + name + "'");
  }
  return w;
}

template <typename Scalar>
ConvNetWeights<Scalar> ConvNetWeights<Scalar>::load(const std::filesystem::path& path) {
  return from_sgsw(read_sgsw(path));
}

template <typename Scalar>
std::vector<SgswTensor> ConvNetWeights<Scalar>::to_sgsw() const {
  std::vector<SgswTensor> out;
  for (const auto& l : vgg16_layers()) {
    for (const char* suffix : {".weight", ".bias"}) {
      const std::string name = std::string(l.name) + suffix;
      const Tensor<Scalar>& t = tensors_.at(name);
      SgswTensor s{name, t.shape(), std::vector<float>(static_cast<std::size_t>(t.size()))};
      for (Index i = 0; i < t.size(); ++i) s.data[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
      out.push_back(std::move(s));
    }
  }
  return out;
}

template <typename Scalar>
const Tensor<Scalar>& ConvNetWeights<Scalar>::weight(const std::string& layer) const {
  const auto it = tensors_.find(layer + ".weight");
  if (it == tensors_.end()) throw ConfigError("unknown VGG layer '" + layer + "'");
  return it->second;
}

template <typename Scalar>
const Tensor<Scalar>& ConvNetWeights<Scalar>::bias(const std::string& layer) const {
  const auto it = tensors_.find(layer + ".bias");
  if (it == tensors_.end()) throw ConfigError("unknown VGG layer '" + layer + "'");
  return it->second;
}

template <typename Scalar>
template <typename Other>
ConvNetWeights<Other> ConvNetWeights<Scalar>::cast() const {
  ConvNetWeights<Other> out;
  for (const auto& [name, t] : tensors_) {
    out.tensors_.emplace(name, Tensor<Other>(t.shape(), t.data().template cast<Other>()));
  }
  return out;
}

std::vector<SgswTensor> synthetic_vgg_weights(std::uint64_t seed) {
  std::uint64_t state = seed;
  auto fill = [&state](SgswTensor& t, double bound) {
    t.data.resize(static_cast<std::size_t>(numel(t.shape)));
    for (float& v : t.data) {
      const double u = static_cast<double>(splitmix64(state) >> 40) / 16777216.0;
      v = static_cast<float>((2.0 * u - 1.0) * bound);
    }
  };
  std::vector<SgswTensor> out;
  for (const auto& l : vgg16_layers()) {
    SgswTensor w{std::string(l.name) + ".weight", weight_shape(l), {}};
    fill(w, std::sqrt(6.0 / (9.0 * l.in_channels)));
    SgswTensor b{std::string(l.name) + ".bias", bias_shape(l), {}};
    fill(b, 0.05);
    out.push_back(std::move(w));
    out.push_back(std::move(b));
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> crop_to_multiple_of_16(const Tensor<Scalar>& image) {
  if (image.ndim() != 3) throw ShapeError("crop", "expected [C,H,W], got " + to_string(image.shape()));
  const Index h = image.dim(1), w = image.dim(2);
  const Index ch = h / 16 * 16, cw = w / 16 * 16;
  if (ch == 0 || cw == 0) throw ShapeError("crop", "image " + to_string(image.shape()) + " is smaller than 16");
  Tensor<Scalar> out = image;
  if (ch != h) out = slice(out, 1, (h - ch) / 2, (h - ch) / 2 + ch);
  if (cw != w) out = slice(out, 2, (w - cw) / 2, (w - cw) / 2 + cw);
  return out;
}

template <typename Scalar>
FeatureSet<Scalar> extract(const Tensor<Scalar>& image, const ConvNetWeights<Scalar>& weights,
                           const std::set<std::string>& layers, const ImageNormalization& norm) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw ShapeError("extract", "expected an image [3,H,W], got " + to_string(image.shape()));
  }
  if (image.dim(1) < 32 || image.dim(2) < 32) {
    throw ShapeError("extract", "image " + to_string(image.shape()) + " is smaller than 32x32");
  }
  std::size_t last = 0;
  for (const auto& name : layers) {
    std::size_t found = vgg16_layers().size();
    for (std::size_t i = 0; i < vgg16_layers().size(); ++i) {
      if (name == vgg16_layers()[i].name) found = i;
    }
    if (found == vgg16_layers().size()) throw ConfigError("unknown VGG layer '" + name + "'");
    last = std::max(last, found);
  }
  FeatureSet<Scalar> out;
  if (layers.empty()) return out;

  std::vector<Tensor<Scalar>> channels;
  for (Index c = 0; c < 3; ++c) {
    const auto ch = slice(image, 0, c, c + 1);
    channels.push_back(scale(shift(ch, Scalar(-norm.mean[c])), Scalar(1.0 / norm.std[c])));
  }
  Tensor<Scalar> x = concat<Scalar>(channels, 0);
  for (std::size_t i = 0; i <= last; ++i) {
    const VggLayer& l = vgg16_layers()[i];
    x = relu(conv2d(x, weights.weight(l.name), weights.bias(l.name)));
    if (layers.count(l.name)) out.emplace(l.name, x);
    if (l.pool_after && i < last) x = maxpool2(x);
  }
  return out;
}

template class ConvNetWeights<float>;
template class ConvNetWeights<double>;
template ConvNetWeights<double> ConvNetWeights<float>::cast<double>() const;
template ConvNetWeights<float> ConvNetWeights<double>::cast<float>() const;
template ConvNetWeights<float> ConvNetWeights<float>::cast<float>() const;
template ConvNetWeights<double> ConvNetWeights<double>::cast<double>() const;
template FeatureSet<float> extract(const Tensor<float>&, const ConvNetWeights<float>&, const std::set<std::string>&,
                                   const ImageNormalization&);
template FeatureSet<double> extract(const Tensor<double>&, const ConvNetWeights<double>&, const std::set<std::string>&,
                                    const ImageNormalization&);
template Tensor<float> crop_to_multiple_of_16(const Tensor<float>&);
template Tensor<double> crop_to_multiple_of_16(const Tensor<double>&);

}  // namespace stylegs
