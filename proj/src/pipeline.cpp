#include "stylegs/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "stylegs/errors.hpp"
#include "stylegs/image_io.hpp"
#include "stylegs/log.hpp"
#include "stylegs/ops.hpp"
#include "stylegs/optim.hpp"
#include "stylegs/ply.hpp"
#include "stylegs/renderer.hpp"
#include "stylegs/styleloss.hpp"

namespace stylegs {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Cameras and datasets

std::vector<CameraEntry> load_cameras_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open cameras file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("cameras file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_array() || j.empty()) throw FieldError("cameras", "expected a nonempty array");
  std::vector<CameraEntry> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& e = j[i];
    const std::string at = "cameras[" + std::to_string(i) + "]";
    if (!e.is_object()) throw FieldError(at, "expected an object");
    auto get = [&](const char* key) -> const json& {
      const auto it = e.find(key);
      if (it == e.end()) throw FieldError(at + "." + key, "missing");
      return *it;
    };
    auto number = [&](const char* key) {
      const json& v = get(key);
      if (!v.is_number()) throw FieldError(at + "." + key, "expected a number");
      return v.get<double>();
    };
    auto integer = [&](const char* key) {
      const json& v = get(key);
      if (!v.is_number_integer()) throw FieldError(at + "." + key, "expected an integer");
      return v.get<int>();
    };
    const json& file = get("file");
    if (!file.is_string()) throw FieldError(at + ".file", "expected a string");
    const json& m = get("cam_to_world");
    if (!m.is_array() || m.size() != 16) throw FieldError(at + ".cam_to_world", "expected 16 numbers");
    Mat4<float> c2w;
    for (int k = 0; k < 16; ++k) {
      if (!m[static_cast<std::size_t>(k)].is_number()) {
        throw FieldError(at + ".cam_to_world", "expected 16 numbers");
      }
      c2w(k / 4, k % 4) = m[static_cast<std::size_t>(k)].get<float>();
    }
    CameraEntry entry;
    entry.file = file.get<std::string>();
    entry.cam = Camera<float>::from_cam_to_world(c2w, static_cast<float>(number("fx")), static_cast<float>(number("fy")),
                                                 static_cast<float>(number("cx")), static_cast<float>(number("cy")),
                                                 integer("width"), integer("height"));
    try {
      entry.cam.validate();
    } catch (const ConfigError& err) {
      throw FieldError(at, err.what());
    }
    out.push_back(std::move(entry));
  }
  return out;
}

void save_cameras_json(const std::filesystem::path& path, const std::vector<CameraEntry>& entries) {
  json j = json::array();
  for (const auto& e : entries) {
    const Mat4<float> m = e.cam.cam_to_world();
    json c2w = json::array();
    for (int k = 0; k < 16; ++k) c2w.push_back(m(k / 4, k % 4));
    j.push_back({{"file", e.file},
                 {"width", e.cam.width},
                 {"height", e.cam.height},
                 {"fx", e.cam.fx},
                 {"fy", e.cam.fy},
                 {"cx", e.cam.cx},
                 {"cy", e.cam.cy},
                 {"cam_to_world", c2w}});
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& cams_json) {
  Dataset data;
  const auto base = cams_json.parent_path();
  for (auto& entry : load_cameras_json(cams_json)) {
    const std::filesystem::path file = base / entry.file;
    if (!std::filesystem::exists(file)) throw ConfigError("view image not found: " + file.string());
    Tensor<float> view = read_png_rgb(file);
    if (view.dim(1) != entry.cam.height || view.dim(2) != entry.cam.width) {
      throw ConfigError("view " + file.string() + " is " + std::to_string(view.dim(2)) + "x" +
                        std::to_string(view.dim(1)) + " but its camera says " + std::to_string(entry.cam.width) +
                        "x" + std::to_string(entry.cam.height));
    }
    data.cams.push_back(entry.cam);
    data.views.push_back(std::move(view));
    data.files.push_back(file);
  }
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<CameraEntry> entries;
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "view_%03zu.png", i);
    write_png_rgb(dir / name, data.views[i]);
    entries.push_back({name, data.cams[i]});
  }
  save_cameras_json(dir / "cameras.json", entries);
}

Dataset downscale(const Dataset& data, int max_side) {
  Dataset out = data;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Camera<float>& cam = data.cams[i];
    const int side = std::max(cam.width, cam.height);
    if (side <= max_side) continue;
    const double f = static_cast<double>(max_side) / side;
    const int w = std::max(8, static_cast<int>(std::lround(cam.width * f)));
    const int h = std::max(8, static_cast<int>(std::lround(cam.height * f)));
    out.cams[i] = cam.resized(w, h);
    out.views[i] = resize_image(data.views[i], h, w);
  }
  return out;
}

Camera<float> trajectory_pose(std::span<const Camera<float>> cams, double t) {
  if (cams.empty()) throw ConfigError("trajectory needs at least one camera");
  if (!(t >= 0 && t <= 1)) throw ConfigError("pose_t must lie in [0, 1], got " + std::to_string(t));
  if (cams.size() == 1 || t == 0) return cams.front();
  if (t == 1) return cams.back();
  const double s = t * static_cast<double>(cams.size() - 1);
  const std::size_t k = std::min(static_cast<std::size_t>(s), cams.size() - 2);
  return interpolate_pose(cams[k], cams[k + 1], static_cast<float>(s - static_cast<double>(k)));
}

// ---------------------------------------------------------------------------
// Optimization helpers

namespace {

struct ParamGroup {
  const char* name;
  Tensor<float>* tensor;
  double rate;
};

std::vector<ParamGroup> groups_of(SceneParams<float>& p, const GroupRates& r) {
  return {{"position", &p.positions, r.position},
          {"log_scale", &p.log_scales, r.log_scale},
          {"rotation", &p.rotations, r.rotation},
          {"opacity", &p.opacity_logits, r.opacity},
          {"sh", &p.sh, r.sh}};
}

// One Adam step per group at the scheduled rate times the group multiplier.
void adam_step_all(Adam<float>& adam, SceneParams<float>& params, const GroupRates& rates, double lr) {
  for (const auto& g : groups_of(params, rates)) {
    if (g.rate == 0) continue;
    adam.step(g.name, *g.tensor, static_cast<float>(lr * g.rate));
  }
}

// Rethrows with the stage named, keeping the error category.
template <typename F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const FieldError&) {
    throw;
  } catch (const NumericError& e) {
    throw NumericError(stage + ": " + e.what());
  } catch (const TrackingError&) {
    throw;
  } catch (const ShapeError& e) {
    throw ShapeError(e.op(), stage + ": " + e.what());
  } catch (const ParseError&) {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(stage + ": " + e.what());
  }
}

Tensor<float> fit_style_image(const Tensor<float>& style, Index render_side) {
  const Index side = std::max<Index>(32, render_side);
  const Index h = style.dim(1), w = style.dim(2);
  const double f = static_cast<double>(side) / static_cast<double>(std::max(h, w));
  const Index nh = std::max<Index>(32, std::lround(static_cast<double>(h) * f));
  const Index nw = std::max<Index>(32, std::lround(static_cast<double>(w) * f));
  return resize_image(style, nh, nw);
}

Mask crop_mask_16(const Mask& m) {
  const Index h = m.rows(), w = m.cols();
  const Index ch = h / 16 * 16, cw = w / 16 * 16;
  return m.block((h - ch) / 2, (w - cw) / 2, ch, cw);
}

Mask full_mask(Index h, Index w) { return Mask::Ones(h, w); }

std::set<std::string> positive_layers(const LayerWeights& w) {
  std::set<std::string> out;
  for (const auto& [layer, v] : w) {
    if (v > 0) out.insert(layer);
  }
  return out;
}

FeatureSet<float> detached(const FeatureSet<float>& fs) {
  FeatureSet<float> out;
  for (const auto& [k, v] : fs) out[k] = v.clone();
  return out;
}

Rows3<double> pixels_double(std::span<const Tensor<float>> images, std::span<const Mask> masks = {}) {
  return image_pixels<float>(images, masks).cast<double>();
}

ColorTransform<float> to_float(const ColorTransform<double>& t) {
  ColorTransform<float> f;
  f.A = t.A.cast<float>();
  f.b = t.b.cast<float>();
  return f;
}

// Applies per-region transforms to the masked pixels of one view.
Tensor<float> recolor_masked(const Tensor<float>& view, const std::vector<const Mask*>& masks,
                             const std::vector<ColorTransform<float>>& transforms) {
  const Index hw = view.dim(1) * view.dim(2);
  typename Tensor<float>::Array px = view.data();
  for (std::size_t r = 0; r < masks.size(); ++r) {
    const auto& t = transforms[r];
    for (Index p = 0; p < hw; ++p) {
      if (masks[r]->data()[p] == 0) continue;
      const Vec3<float> c(view[p], view[hw + p], view[2 * hw + p]);
      const Vec3<float> o = t(c);
      for (int ch = 0; ch < 3; ++ch) px[ch * hw + p] = o[ch];
    }
  }
  return Tensor<float>(view.shape(), std::move(px));
}

}  // namespace

// ---------------------------------------------------------------------------
// Fit

double mean_l1(const GaussianScene<float>& scene, const Dataset& data) {
  double total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto view = rasterize(scene, data.cams[i]);
    total += static_cast<double>((view.color.data() - data.views[i].data()).abs().mean());
  }
  return data.size() ? total / static_cast<double>(data.size()) : 0.0;
}

FitLog fit(GaussianScene<float>& scene, const Dataset& data, const FitOptions& options,
           const std::function<void(long, double)>& on_iteration) {
  if (data.size() < 2) throw ConfigError("fit needs at least two views");
  if (options.iterations < 0) throw ConfigError("fit iterations must be >= 0");
  FitLog log;
  Adam<float> adam;
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  Schedule schedule = options.schedule;
  schedule.total = options.iterations;
  for (long it = 0; it < options.iterations; ++it) {
    const std::size_t v = pick(rng);
    SceneParams<float> params = to_params(scene, true);
    const auto view = rasterize(params, data.cams[v]);
    const auto loss = reconstruction_loss(view.color, data.views[v], static_cast<float>(options.lambda_rec));
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("fit: non-finite loss at iteration " + std::to_string(it));
    log.losses.push_back(value);
    loss.backward();
    adam_step_all(adam, params, options.rates, lr_at(schedule, it));
    assign(scene, params);
    if (on_iteration) on_iteration(it, value);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Style inputs

StyleInputs load_style_inputs(const StylizeConfig& cfg, const Dataset& data, const MaskLookup& lookup) {
  StyleInputs in;
  if (!cfg.style.empty()) in.style = read_png_rgb(cfg.style.front());
  if (!cfg.color_style.empty()) in.color_style = read_png_rgb(cfg.color_style);
  if (cfg.control != ControlMode::spatial) return in;
  for (std::size_t r = 0; r < cfg.regions.size(); ++r) {
    const RegionConfig& rc = cfg.regions[r];
    const std::string key = "regions[" + std::to_string(r) + "]";
    RegionInput region;
    region.style = read_png_rgb(rc.style);
    region.weight = rc.weight;
    region.style_mask = rc.style_mask.empty() ? full_mask(region.style.dim(1), region.style.dim(2))
                                              : read_mask_png(rc.style_mask);
    if (region.style_mask.rows() != region.style.dim(1) || region.style_mask.cols() != region.style.dim(2)) {
      throw FieldError(key + ".style_mask", "size differs from the region's style image");
    }
    if (!rc.mask_id.empty()) {
      if (!lookup) throw FieldError(key + ".mask_id", "mask ids are only available through the server");
      region.masks = lookup(rc.mask_id);
    } else {
      for (std::size_t v = 0; v < data.size(); ++v) {
        const auto file = rc.mask_dir / mask_file_name(data, v);
        if (!std::filesystem::exists(file)) throw FieldError(key + ".mask_dir", "missing mask " + file.string());
        region.masks.push_back(read_mask_png(file));
      }
    }
    if (region.masks.size() != data.size()) {
      throw FieldError(key, std::to_string(region.masks.size()) + " masks for " + std::to_string(data.size()) +
                                " views");
    }
    for (std::size_t v = 0; v < data.size(); ++v) {
      if (region.masks[v].rows() != data.cams[v].height || region.masks[v].cols() != data.cams[v].width) {
        throw FieldError(key, "mask for view " + std::to_string(v) + " does not match the view size");
      }
    }
    in.regions.push_back(std::move(region));
  }
  return in;
}

ConvNetWeights<float> load_vgg(const StylizeConfig& cfg) {
  if (!cfg.vgg_weights.empty()) return ConvNetWeights<float>::load(cfg.vgg_weights);
  log_warn("no vgg_weights given; using synthetic stand-in weights (seed " + std::to_string(cfg.vgg_seed) + ")");
  return ConvNetWeights<float>::from_sgsw(synthetic_vgg_weights(cfg.vgg_seed));
}

// ---------------------------------------------------------------------------
// Stage 2 objective

namespace {

class StyleObjective {
 public:
  StyleObjective(const StyleInputs& inputs, const StylizeConfig& cfg, const ConvNetWeights<float>& vgg,
                 Index render_side)
      : cfg_(cfg), vgg_(vgg) {
    weights_ = cfg.control == ControlMode::scale ? cfg.scale_preset_weights() : cfg.style_layers;
    style_layers_ = positive_layers(weights_);
    if (style_layers_.empty()) throw ConfigError("no positive style layer weight");
    feature_layers_ = style_layers_;
    feature_layers_.insert(cfg.content_layer);
    if (cfg.control == ControlMode::spatial) {
      for (const auto& r : inputs.regions) {
        const Tensor<float> img = fit_style_image(r.style, render_side);
        Mask m = resize_mask_nearest(r.style_mask, img.dim(1), img.dim(2));
        regions_.push_back({detached(extract(img, vgg, style_layers_, cfg.normalization)), Mask(), std::move(m),
                            r.weight});
      }
    } else {
      if (!inputs.style.defined()) throw ConfigError("a style image is required");
      const Tensor<float> img = fit_style_image(inputs.style, render_side);
      const Tensor<float> source = cfg.control == ControlMode::color ? luminance_rgb(img) : img;
      style_features_ = detached(extract(source, vgg, style_layers_, cfg.normalization));
    }
  }

  /// Style term for a rendered image; `region_masks` are at render size.
  Tensor<float> style_term(const Tensor<float>& color, const FeatureSet<float>& rgb_features,
                           const std::vector<Mask>& region_masks) {
    switch (cfg_.control) {
      case ControlMode::none:
        return style_loss(rgb_features, style_features_, weights_);
      case ControlMode::scale:
        return style_loss_scale(rgb_features, style_features_, weights_);
      case ControlMode::color: {
        const auto lum = extract(luminance_rgb(crop_to_multiple_of_16(color)), vgg_, style_layers_,
                                 cfg_.normalization);
        return style_loss(lum, style_features_, weights_);
      }
      case ControlMode::spatial: {
        std::vector<SpatialRegion<float>> regions = regions_;
        for (std::size_t r = 0; r < regions.size(); ++r) regions[r].render_mask = crop_mask_16(region_masks[r]);
        return style_loss_spatial(rgb_features, regions, weights_);
      }
    }
    throw ConfigError("unknown control mode");
  }

  const std::set<std::string>& feature_layers() const { return feature_layers_; }
  const std::set<std::string>& style_layers() const { return style_layers_; }
  const FeatureSet<float>& style_features() const { return style_features_; }
  const LayerWeights& weights() const { return weights_; }

 private:
  const StylizeConfig& cfg_;
  const ConvNetWeights<float>& vgg_;
  LayerWeights weights_;
  std::set<std::string> style_layers_, feature_layers_;
  FeatureSet<float> style_features_;
  std::vector<SpatialRegion<float>> regions_;
};

// Renders region membership at an arbitrary pose: members white, others black.
std::vector<Mask> render_region_masks(const GaussianScene<float>& scene, const std::vector<int>& assignment,
                                      int regions, const Camera<float>& cam) {
  std::vector<Mask> out;
  GaussianScene<float> probe = scene;
  const float white = static_cast<float>(0.5 / kShC0), black = static_cast<float>(-0.5 / kShC0);
  for (int r = 0; r < regions; ++r) {
    probe.sh().setZero();
    for (Index i = 0; i < probe.size(); ++i) {
      const float v = assignment[static_cast<std::size_t>(i)] == r ? white : black;
      probe.sh().row(i).head<3>().setConstant(v);
    }
    const auto view = rasterize(probe, cam);
    Mask m(cam.height, cam.width);
    for (Index p = 0; p < m.size(); ++p) m.data()[p] = view.color[p] > 0.5f ? 1 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

double evaluate_style_loss(const GaussianScene<float>& scene, std::span<const Camera<float>> cams,
                           const StyleInputs& style, const StylizeConfig& cfg, const ConvNetWeights<float>& vgg) {
  if (cams.empty()) throw ConfigError("evaluate_style_loss needs cameras");
  StylizeConfig plain = cfg;
  StyleInputs inputs = style;
  if (plain.control == ControlMode::spatial) {
    plain.control = ControlMode::none;
    if (!inputs.style.defined() && !inputs.regions.empty()) inputs.style = inputs.regions.front().style;
  }
  const Index side = std::max(cams.front().width, cams.front().height);
  StyleObjective objective(inputs, plain, vgg, side);
  double total = 0;
  for (const auto& cam : cams) {
    const auto view = rasterize(scene, cam);
    const auto feats = extract(crop_to_multiple_of_16(view.color), vgg, objective.style_layers(), plain.normalization);
    total += objective.style_term(view.color, feats, {}).item();
  }
  return total / static_cast<double>(cams.size());
}

// ---------------------------------------------------------------------------
// Stylize

StylizeResult stylize(GaussianScene<float> scene, const Dataset& input, const StyleInputs& style,
                      const StylizeConfig& cfg, const ConvNetWeights<float>& vgg, const StylizeHooks& hooks) {
  cfg.validate(false);
  if (input.size() == 0) throw ConfigError("stylize needs at least one training view");
  if (scene.empty()) throw ConfigError("stylize needs a nonempty scene");
  StylizeResult result;
  StylizeLog& log = result.log;
  log.stage1.count_before = scene.size();
  auto cancelled = [&hooks] { return hooks.cancel != nullptr && hooks.cancel->load(); };

  if (cfg.stage1_iterations == 0 && cfg.stage2_iterations == 0) {
    log.dry_run = true;
    log.stage1.count_after = log.count_at_snapshot = log.final_count = scene.size();
    log.checksum = checksum(scene);
    result.snapshot.emplace(scene);
    result.scene = std::move(scene);
    return result;
  }

  const Dataset data = downscale(input, cfg.max_render_side);
  std::vector<std::vector<Mask>> region_masks;  // [region][view] at working resolution
  for (const auto& r : style.regions) {
    std::vector<Mask> ms;
    for (std::size_t v = 0; v < data.size(); ++v) {
      ms.push_back(resize_mask_nearest(r.masks.at(v), data.cams[v].height, data.cams[v].width));
    }
    region_masks.push_back(std::move(ms));
  }

  // Stage 1: color transfer, color-only fine-tuning, floater filtering.
  std::vector<Tensor<float>> targets = data.views;
  in_stage("stage1", [&] {
    if (cfg.control == ControlMode::spatial) {
      std::vector<ColorTransform<float>> transforms;
      for (std::size_t r = 0; r < style.regions.size(); ++r) {
        const auto content = compute_moments(pixels_double(data.views, region_masks[r]));
        const Tensor<float>& simg = style.regions[r].style;
        const auto spx = image_pixels<float>(simg, &style.regions[r].style_mask).cast<double>().eval();
        const auto t = solve_transform(content, compute_moments<double>(spx), cfg.cov_eps);
        log.stage1.transforms.push_back(t);
        transforms.push_back(to_float(t));
      }
      for (std::size_t v = 0; v < data.size(); ++v) {
        std::vector<const Mask*> ms;
        for (const auto& rm : region_masks) ms.push_back(&rm[v]);
        targets[v] = recolor_masked(data.views[v], ms, transforms);
      }
      const auto assignment = assign_regions<float>(scene, data.cams, region_masks);
      scene = recolor_regions<float>(scene, assignment, transforms);
      log.stage1.recolored = true;
    } else {
      const Tensor<float>& palette = cfg.control == ControlMode::color ? style.color_style : style.style;
      if (palette.defined()) {
        const auto content = compute_moments(pixels_double(data.views));
        const auto spx = image_pixels<float>(palette).cast<double>().eval();
        const auto t = solve_transform(content, compute_moments<double>(spx), cfg.cov_eps);
        log.stage1.transforms.push_back(t);
        const auto tf = to_float(t);
        for (auto& target : targets) target = recolor_image(target, tf);
        scene = recolor_scene(scene, tf);
        log.stage1.recolored = true;
        if (cfg.histogram_matching) {
          for (auto& target : targets) target = match_histograms(target, palette);
        }
      }
    }
    FinetuneOptions ft;
    ft.iterations = cfg.stage1_iterations;
    ft.policy = cfg.filter;
    ft.schedule = Schedule{cfg.schedule.lr0, cfg.schedule.lr1, cfg.stage1_iterations};
    ft.sh_lr_scale = cfg.stage1_sh_lr_scale;
    ft.lambda_rec = cfg.lambda_rec;
    ft.seed = cfg.seed;
    log.stage1.finetune = finetune<float>(scene, targets, data.cams, ft, [&](long it, double loss) {
      if (hooks.on_progress) hooks.on_progress("stage1", it, cfg.stage1_iterations, loss);
      if (hooks.on_scene) hooks.on_scene(scene);
    });
  });
  log.stage1.count_after = scene.size();
  result.snapshot.emplace(scene);
  const SceneSnapshot<float>& snap = *result.snapshot;
  log.count_at_snapshot = scene.size();

  // Stage 2: joint optimization at sampled novel poses.
  in_stage("stage2", [&] {
    const Index side = std::max(data.cams.front().width, data.cams.front().height);
    StyleObjective objective(style, cfg, vgg, side);
    std::vector<int> assignment;
    if (cfg.control == ControlMode::spatial) assignment = assign_regions<float>(scene, data.cams, region_masks);
    Adam<float> adam;
    std::mt19937_64 rng(cfg.seed ^ 0x5f3759dfULL);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    const float jitter = static_cast<float>(cfg.jitter_degrees * std::numbers::pi / 180.0);
    const Schedule schedule{cfg.schedule.lr0, cfg.schedule.lr1, cfg.stage2_iterations};
    for (long it = 0; it < cfg.stage2_iterations; ++it) {
      if (cancelled()) {
        log.cancelled = true;
        break;
      }
      std::size_t a = pick(rng), b = pick(rng);
      if (data.size() > 1) {
        while (b == a) b = pick(rng);
      }
      const float t = unit(rng);
      const Camera<float> cam = interpolate_pose(data.cams[a], data.cams[b], t, jitter, &rng);

      SceneParams<float> params = to_params(scene, true);
      const auto view = rasterize(params, cam);
      const auto origin = rasterize(snap.scene(), cam);
      const auto feats = extract(crop_to_multiple_of_16(view.color), vgg, objective.feature_layers(),
                                 cfg.normalization);
      const auto content_feats =
          extract(crop_to_multiple_of_16(origin.color), vgg, {cfg.content_layer}, cfg.normalization);
      std::vector<Mask> masks;
      if (cfg.control == ControlMode::spatial) {
        masks = render_region_masks(scene, assignment, static_cast<int>(style.regions.size()), cam);
      }
      LossTerms<float> terms;
      terms.style = objective.style_term(view.color, feats, masks);
      terms.content = content_loss(content_feats.at(cfg.content_layer).clone(), feats.at(cfg.content_layer));
      terms.depth = depth_loss(origin.depth, view.depth,
                               valid_depth_mask(origin.alpha, static_cast<float>(cfg.depth_valid_alpha)));
      const auto reg = reg_losses(params, snap);
      terms.scale = reg.scale;
      terms.opacity = reg.opacity;
      terms.tv = tv_loss(view.color);
      const auto total = total_loss(terms, cfg.weights);

      IterationRecord rec;
      rec.iteration = it;
      rec.total = total.item();
      rec.style = terms.style.item();
      rec.content = terms.content.item();
      rec.depth = terms.depth.item();
      rec.scale = terms.scale.item();
      rec.opacity = terms.opacity.item();
      rec.tv = terms.tv.item();
      rec.lr = lr_at(schedule, it);
      if (!std::isfinite(rec.total)) throw NumericError("non-finite loss at iteration " + std::to_string(it));
      total.backward();
      adam_step_all(adam, params, cfg.rates, rec.lr);
      assign(scene, params);
      log.stage2.push_back(rec);
      if (scene.size() != log.count_at_snapshot) throw NumericError("Gaussian count changed during stage 2");
      if (hooks.on_progress) hooks.on_progress("stage2", it, cfg.stage2_iterations, rec.total);
      if (hooks.on_scene) hooks.on_scene(scene);
      if (cfg.checkpoint_every > 0 && !cfg.output_dir.empty() && (it + 1) % cfg.checkpoint_every == 0) {
        const auto dir = cfg.output_dir / "checkpoints";
        std::filesystem::create_directories(dir);
        char name[40];
        std::snprintf(name, sizeof(name), "stage2_%05ld.ply", it + 1);
        save_ply(scene, dir / name);
      }
    }
  });
  log.final_count = scene.size();
  log.checksum = checksum(scene);
  result.scene = std::move(scene);
  return result;
}

json log_to_json(const StylizeLog& log) {
  json j;
  j["dry_run"] = log.dry_run;
  j["cancelled"] = log.cancelled;
  json s1;
  s1["recolored"] = log.stage1.recolored;
  json transforms = json::array();
  for (const auto& t : log.stage1.transforms) {
    json a = json::array();
    for (int r = 0; r < 3; ++r) a.push_back({t.A(r, 0), t.A(r, 1), t.A(r, 2)});
    transforms.push_back({{"A", a}, {"b", {t.b[0], t.b[1], t.b[2]}}});
  }
  s1["transforms"] = transforms;
  s1["losses"] = log.stage1.finetune.losses;
  json passes = json::array();
  for (const auto& p : log.stage1.finetune.filter_passes) {
    passes.push_back({{"iteration", p.iteration}, {"removed", p.removed}, {"remaining", p.remaining},
                      {"aborted", p.aborted}});
  }
  s1["filter_passes"] = passes;
  s1["count_before"] = log.stage1.count_before;
  s1["count_after"] = log.stage1.count_after;
  j["stage1"] = s1;
  json s2 = json::array();
  for (const auto& r : log.stage2) {
    s2.push_back({{"iteration", r.iteration}, {"total", r.total}, {"style", r.style}, {"content", r.content},
                  {"depth", r.depth}, {"scale", r.scale}, {"opacity", r.opacity}, {"tv", r.tv}, {"lr", r.lr}});
  }
  j["stage2"] = s2;
  j["count_at_snapshot"] = log.count_at_snapshot;
  j["final_count"] = log.final_count;
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(log.checksum));
  j["checksum"] = hex;
  return j;
}

// ---------------------------------------------------------------------------
// Output

std::vector<TurntableFrame> render_turntable(const GaussianScene<float>& scene, std::span<const Camera<float>> cams,
                                             int n_frames, const std::filesystem::path& outdir) {
  if (n_frames < 1) throw ConfigError("turntable needs at least one frame");
  std::filesystem::create_directories(outdir);
  std::vector<TurntableFrame> frames;
  json sidecar = json::array();
  for (int k = 0; k < n_frames; ++k) {
    const double t = n_frames == 1 ? 0.0 : static_cast<double>(k) / (n_frames - 1);
    const auto view = rasterize(scene, trajectory_pose(cams, t));
    char name[32];
    TurntableFrame f;
    std::snprintf(name, sizeof(name), "frame_%04d.png", k);
    f.color = outdir / name;
    std::snprintf(name, sizeof(name), "depth_%04d.png", k);
    f.depth = outdir / name;
    write_png_rgb(f.color, view.color);
    const auto& d = view.depth.data();
    const auto& a = view.alpha.data();
    f.alpha_min = a.minCoeff();
    f.alpha_max = a.maxCoeff();
    bool any = false;
    for (Index p = 0; p < d.size(); ++p) {
      if (a[p] <= 0.05f) continue;
      f.depth_min = any ? std::min<double>(f.depth_min, d[p]) : d[p];
      f.depth_max = any ? std::max<double>(f.depth_max, d[p]) : d[p];
      any = true;
    }
    if (!any || f.depth_max <= f.depth_min) f.depth_max = f.depth_min + 1;
    write_png_gray16(f.depth, view.depth, static_cast<float>(f.depth_min), static_cast<float>(f.depth_max));
    sidecar.push_back({{"frame", k},
                       {"pose_t", t},
                       {"color", f.color.filename().string()},
                       {"depth", f.depth.filename().string()},
                       {"depth_min", f.depth_min},
                       {"depth_max", f.depth_max},
                       {"alpha_min", f.alpha_min},
                       {"alpha_max", f.alpha_max}});
    frames.push_back(f);
  }
  std::ofstream out(outdir / "depth.json");
  out << sidecar.dump(2) << "\n";
  return frames;
}

MaskSequence track_dataset_masks(const Dataset& data, std::size_t start, std::span<const PixelPoint> points,
                                 const TrackOptions& options, double threshold) {
  return track_masks(data.views, start, points, flood_fill_segmenter(threshold), options);
}

std::string mask_file_name(const Dataset& data, std::size_t view) {
  if (view < data.files.size()) return data.files[view].stem().string() + ".png";
  char name[32];
  std::snprintf(name, sizeof(name), "view_%03zu.png", view);
  return name;
}

}  // namespace stylegs
