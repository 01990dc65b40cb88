#include "stylegs/ply.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stylegs/errors.hpp"

namespace stylegs {

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

namespace {

struct Property {
  std::string name;
  std::size_t index;
};

struct Header {
  std::uint64_t vertex_count = 0;
  std::vector<Property> properties;
  std::map<std::string, std::size_t> by_name;
  std::uint64_t data_offset = 0;
};

Header read_header(std::istream& in) {
  Header h;
  std::string line;
  std::uint64_t offset = 0;
  auto next = [&](const char* expect) -> std::uint64_t {
    const std::uint64_t at = offset;
    if (!std::getline(in, line)) throw ParseError(expect, at, "unexpected end of PLY header");
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return at;
  };
  next("magic");
  if (line != "ply") throw ParseError("magic", 0, "not a PLY file");
  bool in_vertex = false;
  bool seen_format = false;
  for (;;) {
    const std::uint64_t at = next("end_header");
    std::istringstream ls(line);
    std::string keyword;
    ls >> keyword;
    if (keyword == "end_header") break;
    if (keyword == "comment" || keyword == "obj_info" || keyword.empty()) continue;
    if (keyword == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw ParseError("format", at, "unsupported PLY format '" + fmt + "'");
      seen_format = true;
    } else if (keyword == "element") {
      std::string name;
      std::uint64_t count = 0;
      ls >> name >> count;
      if (name != "vertex") throw ParseError(name, at, "unsupported PLY element '" + name + "'");
      h.vertex_count = count;
      in_vertex = true;
    } else if (keyword == "property") {
      std::string type, name;
      ls >> type >> name;
      if (!in_vertex) throw ParseError(name, at, "property outside vertex element");
      if (type == "list") throw ParseError(name, at, "list properties are not supported");
      if (type != "float" && type != "float32") {
        throw ParseError(name, at, "property '" + name + "' has type '" + type + "', expected float");
      }
      h.by_name[name] = h.properties.size();
      h.properties.push_back({name, h.properties.size()});
    } else {
      throw ParseError(keyword, at, "unexpected header line '" + line + "'");
    }
  }
  if (!seen_format) throw ParseError("format", offset, "missing format line");
  h.data_offset = offset;
  return h;
}

std::size_t require(const Header& h, const std::string& name) {
  const auto it = h.by_name.find(name);
  if (it == h.by_name.end()) throw ParseError(name, h.data_offset, "missing vertex property '" + name + "'");
  return it->second;
}

}  // namespace

template <typename Scalar>
GaussianScene<Scalar> load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("file", 0, "cannot open '" + path.string() + "'");
  const Header h = read_header(in);

  std::size_t rest_count = 0;
  while (h.by_name.count("f_rest_" + std::to_string(rest_count))) ++rest_count;
  for (const auto& p : h.properties) {
    if (p.name.rfind("f_rest_", 0) == 0 && std::stoul(p.name.substr(7)) >= rest_count) {
      throw ParseError("f_rest_" + std::to_string(rest_count), h.data_offset, "f_rest properties are not contiguous");
    }
  }
  int degree = -1;
  for (int d = 0; d <= kMaxShDegree; ++d) {
    if (rest_count == static_cast<std::size_t>(3 * (sh_coeff_count(d) - 1))) degree = d;
  }
  if (degree < 0) {
    throw ParseError("f_rest", h.data_offset,
                     std::to_string(rest_count) + " f_rest properties do not correspond to an SH degree in [0,3]");
  }
  const int rest_per_channel = sh_coeff_count(degree) - 1;

  const char* scalar_names[] = {"x",       "y",       "z",       "nx",      "ny",    "nz",    "f_dc_0",
                                "f_dc_1",  "f_dc_2",  "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
                                "rot_1",   "rot_2",   "rot_3"};
  std::map<std::string, std::size_t> col;
  for (const char* name : scalar_names) col[name] = require(h, name);
  std::vector<std::size_t> rest_cols(rest_count);
  for (std::size_t i = 0; i < rest_count; ++i) rest_cols[i] = require(h, "f_rest_" + std::to_string(i));

  const std::size_t stride = h.properties.size();
  std::vector<float> row(stride);
  GaussianScene<Scalar> scene(degree);
  scene.resize(static_cast<Index>(h.vertex_count));
  for (std::uint64_t v = 0; v < h.vertex_count; ++v) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(stride * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(stride * sizeof(float))) {
      throw ParseError("vertex", h.data_offset + v * stride * sizeof(float) + static_cast<std::uint64_t>(in.gcount()),
                       "truncated vertex data at vertex " + std::to_string(v));
    }
    const Index i = static_cast<Index>(v);
    auto at = [&](const char* name) { return static_cast<Scalar>(row[col[name]]); };
    scene.positions().row(i) << at("x"), at("y"), at("z");
    scene.normals().row(i) << at("nx"), at("ny"), at("nz");
    scene.log_scales().row(i) << at("scale_0"), at("scale_1"), at("scale_2");
    scene.rotations().row(i) << at("rot_0"), at("rot_1"), at("rot_2"), at("rot_3");
    scene.opacity_logits()[i] = at("opacity");
    scene.sh()(i, 0) = at("f_dc_0");
    scene.sh()(i, 1) = at("f_dc_1");
    scene.sh()(i, 2) = at("f_dc_2");
    // f_rest is stored channel-major: channel c, coefficient k at c*(K-1) + (k-1).
    for (int c = 0; c < 3; ++c) {
      for (int k = 1; k <= rest_per_channel; ++k) {
        scene.sh()(i, 3 * k + c) = static_cast<Scalar>(row[rest_cols[static_cast<std::size_t>(c * rest_per_channel + k - 1)]]);
      }
    }
  }
  return scene;
}

template <typename Scalar>
void save_ply(const GaussianScene<Scalar>& scene, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  const int rest_per_channel = scene.sh_coeffs() - 1;
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\nelement vertex " << scene.size() << "\n";
  for (const char* name : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"}) {
    header << "property float " << name << "\n";
  }
  for (int i = 0; i < 3 * rest_per_channel; ++i) header << "property float f_rest_" << i << "\n";
  for (const char* name : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}) {
    header << "property float " << name << "\n";
  }
  header << "end_header\n";
  out << header.str();

  std::vector<float> row;
  for (Index i = 0; i < scene.size(); ++i) {
    row.clear();
    for (int c = 0; c < 3; ++c) row.push_back(static_cast<float>(scene.positions()(i, c)));
    for (int c = 0; c < 3; ++c) row.push_back(static_cast<float>(scene.normals()(i, c)));
    for (int c = 0; c < 3; ++c) row.push_back(static_cast<float>(scene.sh()(i, c)));
    for (int c = 0; c < 3; ++c) {
      for (int k = 1; k <= rest_per_channel; ++k) row.push_back(static_cast<float>(scene.sh()(i, 3 * k + c)));
    }
    row.push_back(static_cast<float>(scene.opacity_logits()[i]));
    for (int c = 0; c < 3; ++c) row.push_back(static_cast<float>(scene.log_scales()(i, c)));
    for (int c = 0; c < 4; ++c) row.push_back(static_cast<float>(scene.rotations()(i, c)));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

template GaussianScene<float> load_ply<float>(const std::filesystem::path&);
template GaussianScene<double> load_ply<double>(const std::filesystem::path&);
template void save_ply(const GaussianScene<float>&, const std::filesystem::path&);
template void save_ply(const GaussianScene<double>&, const std::filesystem::path&);

}  // namespace stylegs
