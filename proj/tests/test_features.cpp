#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "stylegs/features.hpp"
#include "stylegs/gradcheck.hpp"
#include "stylegs/image_io.hpp"
#include "stylegs/ops.hpp"
#include "support.hpp"

using namespace stylegs;

namespace {

const ConvNetWeights<float>& weights() {
  static const auto w = ConvNetWeights<float>::from_sgsw(synthetic_vgg_weights(0));
  return w;
}

std::uint64_t fnv1a(const std::vector<float>& data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
  for (std::size_t i = 0; i < data.size() * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

// max |a - b| / max |b|, the scale-aware error used against the fixtures.
double relative_error(const Tensor<float>& a, const SgswTensor& ref) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < ref.data.size(); ++i) {
    diff = std::max(diff, std::abs(double(a[Index(i)]) - ref.data[i]));
    scale = std::max(scale, std::abs(double(ref.data[i])));
  }
  return scale > 0 ? diff / scale : diff;
}

}  // namespace

TEST_CASE("synthetic weights have the 26 VGG-16 tensors and round-trip through SGSW") {
  const auto tensors = synthetic_vgg_weights(0);
  CHECK(tensors.size() == 26);
  CHECK(tensors[0].name == "conv1_1.weight");
  CHECK(tensors[0].shape == Shape{64, 3, 3, 3});
  const auto path = testing::scratch_dir("sgsw") / "w.sgsw";
  write_sgsw(path, tensors);
  const auto back = read_sgsw(path);
  REQUIRE(back.size() == tensors.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == tensors[i].name);
    CHECK(back[i].shape == tensors[i].shape);
    CHECK(back[i].data == tensors[i].data);
  }
  const auto loaded = ConvNetWeights<float>::load(path);
  CHECK((loaded.weight("conv3_1").data() == weights().weight("conv3_1").data()).all());
}

TEST_CASE("a mis-shaped layer is a shape error naming the layer") {
  auto tensors = synthetic_vgg_weights(0);
  for (auto& t : tensors) {
    if (t.name == "conv3_1.weight") {
      t.shape = {256, 128, 3, 4};
      t.data.resize(256 * 128 * 12);
    }
  }
  try {
    (void)ConvNetWeights<float>::from_sgsw(tensors);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("conv3_1") != std::string::npos);
  }
}

TEST_CASE("truncated or foreign SGSW files are parse errors") {
  const auto dir = testing::scratch_dir("sgsw_bad");
  write_sgsw(dir / "ok.sgsw", {SgswTensor{"a", {2, 2}, {1, 2, 3, 4}}});
  std::ifstream in(dir / "ok.sgsw", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(dir / "short.sgsw", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  std::ofstream(dir / "magic.sgsw", std::ios::binary) << "NOPE" << bytes.substr(4);
  CHECK_THROWS_AS(read_sgsw(dir / "short.sgsw"), ParseError);
  CHECK_THROWS_AS(read_sgsw(dir / "magic.sgsw"), ParseError);
  CHECK_THROWS_AS(ConvNetWeights<float>::from_sgsw(read_sgsw(dir / "ok.sgsw")), ParseError);
}

TEST_CASE("manifest checksums match the synthetic weights") {
  std::ifstream in(testing::fixture_dir() / "vgg" / "manifest.json");
  REQUIRE(in);
  const auto manifest = nlohmann::json::parse(in);
  const auto tensors = synthetic_vgg_weights(manifest.at("weights_seed").get<std::uint64_t>());
  std::map<std::string, const SgswTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  CHECK(manifest.at("tensors").size() >= 14);
  for (const auto& entry : manifest.at("tensors")) {
    const auto& t = *by_name.at(entry.at("name").get<std::string>());
    CAPTURE(t.name);
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(t.data)));
    CHECK(entry.at("fnv1a64").get<std::string>() == hex);
    CHECK(entry.at("shape").get<Shape>() == t.shape);
  }
}

TEST_CASE("extract matches the committed reference activations") {
  std::ifstream in(testing::fixture_dir() / "vgg" / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  for (const auto& fixture : manifest.at("fixtures")) {
    const auto dir = testing::fixture_dir() / "vgg";
    const auto image = read_png_rgb(dir / fixture.at("image").get<std::string>());
    const auto refs = read_sgsw(dir / fixture.at("activations").get<std::string>());
    std::set<std::string> layers;
    for (const auto& r : refs) layers.insert(r.name);
    const auto feats = extract(image, weights(), layers);
    for (const auto& r : refs) {
      CAPTURE(fixture.at("image").get<std::string>());
      CAPTURE(r.name);
      REQUIRE(feats.at(r.name).shape() == r.shape);
      CHECK(relative_error(feats.at(r.name), r) <= 1e-4);
    }
  }
}

TEST_CASE("feature shapes follow the VGG pooling schedule") {
  const auto feats = extract(Tensor<float>::full({3, 64, 48}, 0.3f), weights(),
                             {"conv1_2", "conv2_1", "conv3_3", "conv4_1"});
  CHECK(feats.at("conv1_2").shape() == Shape{64, 64, 48});
  CHECK(feats.at("conv2_1").shape() == Shape{128, 32, 24});
  CHECK(feats.at("conv3_3").shape() == Shape{256, 16, 12});
  CHECK(feats.at("conv4_1").shape() == Shape{512, 8, 6});
  CHECK_THROWS_AS(extract(Tensor<float>::zeros({3, 16, 16}), weights(), {"conv1_1"}), ShapeError);
}

TEST_CASE("extract is deterministic") {
  std::mt19937_64 rng(1);
  const auto img = testing::random_tensor<float>({3, 32, 32}, rng, 0, 1);
  const auto a = extract(img, weights(), {"conv2_2"});
  const auto b = extract(img, weights(), {"conv2_2"});
  CHECK((a.at("conv2_2").data() == b.at("conv2_2").data()).all());
}

TEST_CASE("crop_to_multiple_of_16 centre-crops") {
  std::mt19937_64 rng(2);
  const auto img = testing::random_tensor<float>({3, 37, 50}, rng, 0, 1);
  const auto c = crop_to_multiple_of_16(img);
  CHECK(c.shape() == Shape{3, 32, 48});
  CHECK(c[0] == img[2 * 50 + 1]);
  const auto same = crop_to_multiple_of_16(Tensor<float>::zeros({3, 32, 32}));
  CHECK(same.shape() == Shape{3, 32, 32});
}

TEST_CASE("feature gradients w.r.t. the image match central differences") {
  std::mt19937_64 rng(3);
  const auto wd = weights().cast<double>();
  const auto probe = testing::random_tensor<double>({256, 16, 16}, rng);
  const std::function<Tensor<double>(const Tensor<double>&)> f = [&](const Tensor<double>& x) {
    const auto feats = extract(x, wd, {"conv1_2", "conv3_1"});
    return sum(feats.at("conv1_2")) * 1e-3 + sum(feats.at("conv3_1") * slice(slice(probe, 1, 0, 8), 2, 0, 8));
  };
  std::vector<Index> indices;
  std::uniform_int_distribution<Index> pick(0, 3 * 32 * 32 - 1);
  for (int i = 0; i < 24; ++i) indices.push_back(pick(rng));
  // A step of 1e-4 crosses relu and max-pool kinks somewhere in six layers.
  const auto r =
      finite_difference_check<double>(f, testing::random_tensor<double>({3, 32, 32}, rng, 0, 1, true), 1e-6, indices);
  CHECK(r.max_rel_error < 1e-3);
  CHECK(r.nan_count == 0);
}
