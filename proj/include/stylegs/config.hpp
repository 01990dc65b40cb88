#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "stylegs/errors.hpp"
#include "stylegs/features.hpp"
#include "stylegs/optim.hpp"
#include "stylegs/refine.hpp"
#include "stylegs/styleloss.hpp"

namespace stylegs {

/// ConfigError tied to one configuration key (dotted path, e.g. "weights.style").
class FieldError : public ConfigError {
 public:
  FieldError(std::string field, const std::string& detail)
      : ConfigError(field + ": " + detail), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

enum class ControlMode { none, color, scale, spatial };

std::string to_string(ControlMode mode);
ControlMode parse_control_mode(const std::string& name);

/// Multipliers applied to the scheduled learning rate, per parameter group.
struct GroupRates {
  double position = 0.0005;
  double log_scale = 0.015;
  double rotation = 0.01;
  double opacity = 0.05;
  double sh = 2.0;
};

struct RegionConfig {
  std::filesystem::path style;       // style image for this region
  std::filesystem::path mask_dir;    // content masks, one PNG per view named after the view file
  std::string mask_id;               // alternatively, masks created through the HTTP API
  std::filesystem::path style_mask;  // empty: the whole style image
  double weight = 1.0;
};

struct StylizeConfig {
  static constexpr int kVersion = 1;
  int version = kVersion;

  std::vector<std::filesystem::path> style;  // first entry drives the none/color/scale modes
  std::filesystem::path color_style;         // color mode: palette source for stage 1 (empty keeps hues)
  ControlMode control = ControlMode::none;

  LossWeights weights;
  double lambda_rec = 0.2;
  FilterPolicy filter;
  long stage1_iterations = 200;
  long stage2_iterations = 800;
  Schedule schedule{0.1, 0.01, 800};
  GroupRates rates;
  double stage1_sh_lr_scale = 0.1;

  LayerWeights style_layers = default_style_layers();
  std::string scale_preset = "default";  // scale mode only
  std::string content_layer = "conv3_2";
  std::vector<RegionConfig> regions;     // spatial mode only

  double jitter_degrees = 2.0;
  int max_render_side = 256;
  double cov_eps = 1e-8;
  bool histogram_matching = false;
  double depth_valid_alpha = 0.05;
  ImageNormalization normalization;

  std::filesystem::path vgg_weights;  // empty: synthetic weights from vgg_seed
  std::uint64_t vgg_seed = 0;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  long checkpoint_every = 0;  // 0 disables stage-2 checkpoints

  /// Range checks. With `check_files`, every referenced path must exist.
  /// Throws FieldError naming the key.
  void validate(bool check_files) const;

  /// Layer weights of the configured scale preset.
  LayerWeights scale_preset_weights() const;

  /// Relative paths are interpreted against `base`.
  void resolve_paths(const std::filesystem::path& base);
};

/// Unknown keys and wrongly typed values throw FieldError. Missing keys keep
/// their defaults.
StylizeConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const StylizeConfig& cfg);

StylizeConfig load_config(const std::filesystem::path& path);
void save_config(const StylizeConfig& cfg, const std::filesystem::path& path);

}  // namespace stylegs
