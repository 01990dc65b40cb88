#include "stylegs/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace stylegs {

using nlohmann::json;

std::string to_string(ControlMode mode) {
  switch (mode) {
    case ControlMode::none: return "none";
    case ControlMode::color: return "color";
    case ControlMode::scale: return "scale";
    case ControlMode::spatial: return "spatial";
  }
  return "none";
}

ControlMode parse_control_mode(const std::string& name) {
  if (name == "none") return ControlMode::none;
  if (name == "color") return ControlMode::color;
  if (name == "scale") return ControlMode::scale;
  if (name == "spatial") return ControlMode::spatial;
  throw FieldError("control", "expected none, color, scale or spatial, got '" + name + "'");
}

namespace {

// Reads typed keys from one JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw FieldError(prefix_.empty() ? "<root>" : prefix_, "expected an object");
  }

  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw FieldError(path(key), "expected a number");
      out = v->get<double>();
    }
  }

  template <typename Int>
  void integer(const std::string& key, Int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw FieldError(path(key), "expected an integer");
      if (std::is_unsigned_v<Int> && v->is_number_integer() && !v->is_number_unsigned()) {
        throw FieldError(path(key), "expected a nonnegative integer");
      }
      out = v->get<Int>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw FieldError(path(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw FieldError(path(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void file(const std::string& key, std::filesystem::path& out) {
    std::string s = out.string();
    string(key, s);
    out = s;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw FieldError(path(key), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

void triple(Reader& r, const std::string& key, std::array<double, 3>& out) {
  if (const json* v = r.find(key)) {
    if (!v->is_array() || v->size() != 3) throw FieldError(r.path(key), "expected three numbers");
    for (std::size_t i = 0; i < 3; ++i) {
      if (!(*v)[i].is_number()) throw FieldError(r.path(key), "expected three numbers");
      out[i] = (*v)[i].get<double>();
    }
  }
}

LayerWeights layer_weights(const json& j, const std::string& field) {
  if (!j.is_object()) throw FieldError(field, "expected an object of layer weights");
  LayerWeights out;
  for (const auto& [layer, w] : j.items()) {
    if (!w.is_number()) throw FieldError(field + "." + layer, "expected a number");
    out[layer] = w.get<double>();
  }
  return out;
}

void require(bool ok, const std::string& field, const std::string& detail) {
  if (!ok) throw FieldError(field, detail);
}

bool known_layer(const std::string& name) {
  for (const auto& l : vgg16_layers()) {
    if (name == l.name) return true;
  }
  return false;
}

}  // namespace

StylizeConfig config_from_json(const json& j) {
  StylizeConfig cfg;
  Reader r(j, "");
  r.integer("version", cfg.version);
  if (cfg.version != StylizeConfig::kVersion) {
    throw FieldError("version", "unsupported config version " + std::to_string(cfg.version));
  }
  if (const json* v = r.find("style")) {
    if (v->is_string()) {
      cfg.style = {v->get<std::string>()};
    } else if (v->is_array()) {
      cfg.style.clear();
      for (const auto& s : *v) {
        if (!s.is_string()) throw FieldError("style", "expected a path or a list of paths");
        cfg.style.emplace_back(s.get<std::string>());
      }
    } else {
      throw FieldError("style", "expected a path or a list of paths");
    }
  }
  r.file("color_style", cfg.color_style);
  if (const json* v = r.find("control")) {
    if (!v->is_string()) throw FieldError("control", "expected a string");
    cfg.control = parse_control_mode(v->get<std::string>());
  }
  if (const json* v = r.find("weights")) {
    Reader w(*v, "weights");
    w.number("style", cfg.weights.style);
    w.number("content", cfg.weights.content);
    w.number("depth", cfg.weights.depth);
    w.number("scale", cfg.weights.scale);
    w.number("opacity", cfg.weights.opacity);
    w.number("tv", cfg.weights.tv);
    w.finish();
  }
  r.number("lambda_rec", cfg.lambda_rec);
  if (const json* v = r.find("filter")) {
    Reader f(*v, "filter");
    f.number("k_opacity", cfg.filter.k_opacity);
    f.number("k_scale", cfg.filter.k_scale);
    f.integer("period", cfg.filter.period);
    f.finish();
  }
  r.integer("stage1_iterations", cfg.stage1_iterations);
  r.integer("stage2_iterations", cfg.stage2_iterations);
  cfg.schedule.total = cfg.stage2_iterations;
  if (const json* v = r.find("schedule")) {
    Reader s(*v, "schedule");
    s.number("lr0", cfg.schedule.lr0);
    s.number("lr1", cfg.schedule.lr1);
    s.finish();
  }
  if (const json* v = r.find("rates")) {
    Reader g(*v, "rates");
    g.number("position", cfg.rates.position);
    g.number("log_scale", cfg.rates.log_scale);
    g.number("rotation", cfg.rates.rotation);
    g.number("opacity", cfg.rates.opacity);
    g.number("sh", cfg.rates.sh);
    g.finish();
  }
  r.number("stage1_sh_lr_scale", cfg.stage1_sh_lr_scale);
  if (const json* v = r.find("style_layers")) cfg.style_layers = layer_weights(*v, "style_layers");
  r.string("scale_preset", cfg.scale_preset);
  r.string("content_layer", cfg.content_layer);
  if (const json* v = r.find("regions")) {
    if (!v->is_array()) throw FieldError("regions", "expected a list");
    for (std::size_t i = 0; i < v->size(); ++i) {
      RegionConfig region;
      Reader rr((*v)[i], "regions[" + std::to_string(i) + "]");
      rr.file("style", region.style);
      rr.file("mask_dir", region.mask_dir);
      rr.string("mask_id", region.mask_id);
      rr.file("style_mask", region.style_mask);
      rr.number("weight", region.weight);
      rr.finish();
      cfg.regions.push_back(std::move(region));
    }
  }
  r.number("jitter_degrees", cfg.jitter_degrees);
  r.integer("max_render_side", cfg.max_render_side);
  r.number("cov_eps", cfg.cov_eps);
  r.boolean("histogram_matching", cfg.histogram_matching);
  r.number("depth_valid_alpha", cfg.depth_valid_alpha);
  if (const json* v = r.find("normalization")) {
    Reader n(*v, "normalization");
    triple(n, "mean", cfg.normalization.mean);
    triple(n, "std", cfg.normalization.std);
    n.finish();
  }
  r.file("vgg_weights", cfg.vgg_weights);
  r.integer("vgg_seed", cfg.vgg_seed);
  r.integer("seed", cfg.seed);
  r.file("output_dir", cfg.output_dir);
  r.integer("checkpoint_every", cfg.checkpoint_every);
  r.finish();
  return cfg;
}

json config_to_json(const StylizeConfig& cfg) {
  json j;
  j["version"] = cfg.version;
  json styles = json::array();
  for (const auto& s : cfg.style) styles.push_back(s.string());
  j["style"] = styles;
  j["color_style"] = cfg.color_style.string();
  j["control"] = to_string(cfg.control);
  j["weights"] = {{"style", cfg.weights.style},   {"content", cfg.weights.content}, {"depth", cfg.weights.depth},
                  {"scale", cfg.weights.scale},   {"opacity", cfg.weights.opacity}, {"tv", cfg.weights.tv}};
  j["lambda_rec"] = cfg.lambda_rec;
  j["filter"] = {{"k_opacity", cfg.filter.k_opacity}, {"k_scale", cfg.filter.k_scale}, {"period", cfg.filter.period}};
  j["stage1_iterations"] = cfg.stage1_iterations;
  j["stage2_iterations"] = cfg.stage2_iterations;
  j["schedule"] = {{"lr0", cfg.schedule.lr0}, {"lr1", cfg.schedule.lr1}};
  j["rates"] = {{"position", cfg.rates.position}, {"log_scale", cfg.rates.log_scale},
                {"rotation", cfg.rates.rotation}, {"opacity", cfg.rates.opacity},
                {"sh", cfg.rates.sh}};
  j["stage1_sh_lr_scale"] = cfg.stage1_sh_lr_scale;
  j["style_layers"] = cfg.style_layers;
  j["scale_preset"] = cfg.scale_preset;
  j["content_layer"] = cfg.content_layer;
  json regions = json::array();
  for (const auto& r : cfg.regions) {
    regions.push_back({{"style", r.style.string()},
                       {"mask_dir", r.mask_dir.string()},
                       {"mask_id", r.mask_id},
                       {"style_mask", r.style_mask.string()},
                       {"weight", r.weight}});
  }
  j["regions"] = regions;
  j["jitter_degrees"] = cfg.jitter_degrees;
  j["max_render_side"] = cfg.max_render_side;
  j["cov_eps"] = cfg.cov_eps;
  j["histogram_matching"] = cfg.histogram_matching;
  j["depth_valid_alpha"] = cfg.depth_valid_alpha;
  j["normalization"] = {{"mean", cfg.normalization.mean}, {"std", cfg.normalization.std}};
  j["vgg_weights"] = cfg.vgg_weights.string();
  j["vgg_seed"] = cfg.vgg_seed;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir.string();
  j["checkpoint_every"] = cfg.checkpoint_every;
  return j;
}

void StylizeConfig::validate(bool check_files) const {
  require(version == kVersion, "version", "unsupported config version");
  require(stage1_iterations >= 0, "stage1_iterations", "must be >= 0");
  require(stage2_iterations >= 0, "stage2_iterations", "must be >= 0");
  auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0; };
  const std::pair<const char*, double> weight_fields[] = {
      {"weights.style", weights.style},     {"weights.content", weights.content}, {"weights.depth", weights.depth},
      {"weights.scale", weights.scale},     {"weights.opacity", weights.opacity}, {"weights.tv", weights.tv}};
  for (const auto& [name, value] : weight_fields) require(finite_nonneg(value), name, "must be finite and >= 0");
  require(lambda_rec >= 0 && lambda_rec <= 1, "lambda_rec", "must lie in [0, 1]");
  require(filter.k_opacity >= 0 && filter.k_opacity < 50, "filter.k_opacity", "must lie in [0, 50)");
  require(filter.k_scale >= 0 && filter.k_scale < 50, "filter.k_scale", "must lie in [0, 50)");
  require(filter.period >= 1, "filter.period", "must be >= 1");
  require(schedule.lr0 > 0 && std::isfinite(schedule.lr0), "schedule.lr0", "must be positive");
  require(schedule.lr1 > 0 && std::isfinite(schedule.lr1), "schedule.lr1", "must be positive");
  const std::pair<const char*, double> rate_fields[] = {{"rates.position", rates.position},
                                                        {"rates.log_scale", rates.log_scale},
                                                        {"rates.rotation", rates.rotation},
                                                        {"rates.opacity", rates.opacity},
                                                        {"rates.sh", rates.sh}};
  for (const auto& [name, value] : rate_fields) require(finite_nonneg(value), name, "must be finite and >= 0");
  require(finite_nonneg(stage1_sh_lr_scale), "stage1_sh_lr_scale", "must be finite and >= 0");
  bool any_layer = false;
  for (const auto& [layer, w] : style_layers) {
    require(known_layer(layer), "style_layers." + layer, "not a VGG-16 conv layer");
    require(finite_nonneg(w), "style_layers." + layer, "must be finite and >= 0");
    any_layer = any_layer || w > 0;
  }
  require(any_layer, "style_layers", "needs at least one positive weight");
  require(known_layer(content_layer), "content_layer", "not a VGG-16 conv layer");
  if (control == ControlMode::scale) {
    try {
      scale_preset_weights();
    } catch (const ConfigError& e) {
      throw FieldError("scale_preset", e.what());
    }
  }
  require(jitter_degrees >= 0 && jitter_degrees <= 2.0, "jitter_degrees", "must lie in [0, 2]");
  require(max_render_side >= 32, "max_render_side", "must be >= 32");
  require(cov_eps >= 0 && std::isfinite(cov_eps), "cov_eps", "must be finite and >= 0");
  require(depth_valid_alpha >= 0 && depth_valid_alpha < 1, "depth_valid_alpha", "must lie in [0, 1)");
  for (int c = 0; c < 3; ++c) require(normalization.std[c] > 0, "normalization.std", "must be positive");
  require(checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
  const long total = stage1_iterations + stage2_iterations;
  if (total > 0) require(!style.empty(), "style", "at least one style image is required");
  if (control == ControlMode::spatial && total > 0) {
    require(!regions.empty(), "regions", "spatial control needs at least one region");
    for (std::size_t i = 0; i < regions.size(); ++i) {
      const std::string key = "regions[" + std::to_string(i) + "]";
      require(!regions[i].style.empty(), key + ".style", "a style image is required");
      require(!regions[i].mask_dir.empty() || !regions[i].mask_id.empty(), key + ".mask_dir",
              "either mask_dir or mask_id is required");
      require(finite_nonneg(regions[i].weight), key + ".weight", "must be finite and >= 0");
    }
  }
  if (!check_files) return;
  auto exists = [](const std::filesystem::path& p, const std::string& key) {
    require(std::filesystem::exists(p), key, "file not found: " + p.string());
  };
  for (std::size_t i = 0; i < style.size(); ++i) exists(style[i], "style[" + std::to_string(i) + "]");
  if (!color_style.empty()) exists(color_style, "color_style");
  if (!vgg_weights.empty()) exists(vgg_weights, "vgg_weights");
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const std::string key = "regions[" + std::to_string(i) + "]";
    exists(regions[i].style, key + ".style");
    if (!regions[i].mask_dir.empty()) exists(regions[i].mask_dir, key + ".mask_dir");
    if (!regions[i].style_mask.empty()) exists(regions[i].style_mask, key + ".style_mask");
  }
}

LayerWeights StylizeConfig::scale_preset_weights() const { return stylegs::scale_preset(scale_preset); }

void StylizeConfig::resolve_paths(const std::filesystem::path& base) {
  auto fix = [&base](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative()) p = base / p;
  };
  for (auto& s : style) fix(s);
  fix(color_style);
  fix(vgg_weights);
  fix(output_dir);
  for (auto& r : regions) {
    fix(r.style);
    fix(r.mask_dir);
    fix(r.style_mask);
  }
}

StylizeConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  StylizeConfig cfg = config_from_json(j);
  cfg.resolve_paths(path.parent_path());
  return cfg;
}

void save_config(const StylizeConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << config_to_json(cfg).dump(2) << "\n";
}

}  // namespace stylegs
