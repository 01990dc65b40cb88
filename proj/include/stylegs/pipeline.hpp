#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stylegs/colorxfer.hpp"
#include "stylegs/config.hpp"
#include "stylegs/controls.hpp"
#include "stylegs/features.hpp"
#include "stylegs/refine.hpp"
#include "stylegs/scene.hpp"

namespace stylegs {

/// Training views with their cameras. `files` holds the image paths when
/// the views came from disk (empty otherwise).
struct Dataset {
  std::vector<Camera<float>> cams;
  std::vector<Tensor<float>> views;
  std::vector<std::filesystem::path> files;

  std::size_t size() const { return cams.size(); }
};

struct CameraEntry {
  std::string file;
  Camera<float> cam;
};

/// JSON array of {file, width, height, fx, fy, cx, cy, cam_to_world} with
/// cam_to_world as 16 row-major numbers. Throws FieldError naming the entry.
std::vector<CameraEntry> load_cameras_json(const std::filesystem::path& path);
void save_cameras_json(const std::filesystem::path& path, const std::vector<CameraEntry>& entries);

/// Loads the cameras and their PNG views (resolved against the JSON's folder).
Dataset load_dataset(const std::filesystem::path& cams_json);

/// Writes views as view_NNN.png plus cameras.json into `dir`.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);

/// Resamples views and intrinsics so that the longer side is at most `max_side`.
Dataset downscale(const Dataset& data, int max_side);

/// Pose at t in [0,1] along the camera sequence, piecewise slerp between
/// consecutive cameras. t = 0 and t = 1 give the end cameras exactly.
Camera<float> trajectory_pose(std::span<const Camera<float>> cams, double t);

// ---------------------------------------------------------------------------
// Scene fitting (test scenes only)

struct FitOptions {
  long iterations = 2000;
  Schedule schedule{0.1, 0.01, 2000};
  GroupRates rates{0.004, 0.1, 0.05, 0.5, 0.5};
  double lambda_rec = 0.2;
  std::uint64_t seed = 0;
};

struct FitLog {
  std::vector<double> losses;  // per iteration, before the update
};

/// Optimizes every raw parameter against the reconstruction loss on random
/// training views. No densification; the Gaussian count never changes.
FitLog fit(GaussianScene<float>& scene, const Dataset& data, const FitOptions& options,
           const std::function<void(long, double)>& on_iteration = {});

/// Mean L1 between renders and views over all training cameras.
double mean_l1(const GaussianScene<float>& scene, const Dataset& data);

// ---------------------------------------------------------------------------
// Stylization

struct RegionInput {
  Tensor<float> style;
  std::vector<Mask> masks;  // one per training view, view resolution
  Mask style_mask;          // style image resolution
  double weight = 1.0;
};

struct StyleInputs {
  Tensor<float> style;        // [3,H,W]; drives the none, color and scale modes
  Tensor<float> color_style;  // color mode palette source; may be undefined
  std::vector<RegionInput> regions;
};

/// Looks up masks created elsewhere (e.g. through the HTTP API) by id.
using MaskLookup = std::function<std::vector<Mask>(const std::string& id)>;

/// Reads every image and mask the config references. Region mask folders
/// hold one PNG per training view named after the view's file.
StyleInputs load_style_inputs(const StylizeConfig& cfg, const Dataset& data, const MaskLookup& lookup = {});

/// Synthetic stand-in weights unless the config names a file.
ConvNetWeights<float> load_vgg(const StylizeConfig& cfg);

struct IterationRecord {
  long iteration = 0;
  double total = 0, style = 0, content = 0, depth = 0, scale = 0, opacity = 0, tv = 0;
  double lr = 0;
};

struct StageOneLog {
  bool recolored = false;
  std::vector<ColorTransform<double>> transforms;  // one per region, or one overall
  FinetuneLog finetune;
  Index count_before = 0;
  Index count_after = 0;
};

struct StylizeLog {
  StageOneLog stage1;
  std::vector<IterationRecord> stage2;
  Index count_at_snapshot = 0;
  Index final_count = 0;
  std::uint64_t checksum = 0;
  bool cancelled = false;
  bool dry_run = false;
};

struct StylizeHooks {
  /// stage is "stage1" or "stage2"; iteration counts from 0.
  std::function<void(const std::string& stage, long iteration, long total, double loss)> on_progress;
  /// Called with the current scene after every optimizer step.
  std::function<void(const GaussianScene<float>&)> on_scene;
  const std::atomic<bool>* cancel = nullptr;
};

struct StylizeResult {
  GaussianScene<float> scene;
  std::optional<SceneSnapshot<float>> snapshot;  // taken after stage 1
  StylizeLog log;
};

/// Two-stage stylization. Stage 1 recolors the training views and the SH
/// coefficients, fine-tunes color only and filters floaters; a snapshot is
/// then frozen. Stage 2 renders a sampled novel pose each iteration and
/// takes an Adam step on all raw parameters against the weighted sum of
/// the configured style loss, content, depth, regularizer and TV terms.
/// With zero iterations in both stages the scene is returned unchanged.
/// Errors are rethrown with the failing stage named in the message.
StylizeResult stylize(GaussianScene<float> scene, const Dataset& data, const StyleInputs& style,
                      const StylizeConfig& cfg, const ConvNetWeights<float>& vgg, const StylizeHooks& hooks = {});

/// The configured style term (none, color or scale mode) averaged over the
/// given cameras, without gradients. Spatial mode evaluates the plain loss
/// against the first style image.
double evaluate_style_loss(const GaussianScene<float>& scene, std::span<const Camera<float>> cams,
                           const StyleInputs& style, const StylizeConfig& cfg, const ConvNetWeights<float>& vgg);

nlohmann::json log_to_json(const StylizeLog& log);

// ---------------------------------------------------------------------------
// Output

struct TurntableFrame {
  std::filesystem::path color;
  std::filesystem::path depth;
  double depth_min = 0, depth_max = 0;  // range mapped to 0..65535
  double alpha_min = 0, alpha_max = 0;
};

/// n frames along trajectory_pose at t = k / (n - 1). Writes frame_NNNN.png,
/// depth_NNNN.png (16-bit, min-max over pixels with alpha > 0.05) and a
/// depth.json sidecar with the ranges.
std::vector<TurntableFrame> render_turntable(const GaussianScene<float>& scene, std::span<const Camera<float>> cams,
                                             int n_frames, const std::filesystem::path& outdir);

/// Mask tracking over a dataset's views with the flood-fill segmenter.
MaskSequence track_dataset_masks(const Dataset& data, std::size_t start, std::span<const PixelPoint> points,
                                 const TrackOptions& options, double threshold = 0.05);

/// File name of view i's mask: the view file's stem plus ".png".
std::string mask_file_name(const Dataset& data, std::size_t view);

}  // namespace stylegs
