// Command line driver: stylize, fit, render, filter, track-masks, gradcheck,
// serve and toy (synthetic dataset generation).

#include <csignal>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "stylegs/config.hpp"
#include "stylegs/errors.hpp"
#include "stylegs/gradcheck.hpp"
#include "stylegs/image_io.hpp"
#include "stylegs/log.hpp"
#include "stylegs/ops.hpp"
#include "stylegs/pipeline.hpp"
#include "stylegs/ply.hpp"
#include "stylegs/refine.hpp"
#include "stylegs/renderer.hpp"
#include "stylegs/server.hpp"
#include "stylegs/styleloss.hpp"
#include "stylegs/synthetic.hpp"

namespace fs = std::filesystem;
using namespace stylegs;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

PixelPoint parse_point(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ConfigError("point '" + s + "' must be x,y");
  try {
    return {std::stoi(s.substr(0, comma)), std::stoi(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw ConfigError("point '" + s + "' must be x,y with integer pixels");
  }
}

int run_stylize(const fs::path& scene_path, const fs::path& cams, const std::vector<fs::path>& styles,
                const std::string& control, const fs::path& config_path, const fs::path& out,
                long stage2_override) {
  StylizeConfig cfg = config_path.empty() ? StylizeConfig{} : load_config(config_path);
  if (!styles.empty()) cfg.style = styles;
  if (!control.empty()) cfg.control = parse_control_mode(control);
  if (stage2_override >= 0) cfg.stage2_iterations = stage2_override;
  cfg.output_dir = out;
  cfg.validate(true);
  const Dataset data = load_dataset(cams);
  const auto scene = load_ply<float>(scene_path);
  const auto inputs = load_style_inputs(cfg, data);
  const auto vgg = load_vgg(cfg);
  StylizeHooks hooks;
  hooks.on_progress = [](const std::string& stage, long it, long total, double loss) {
    if ((it + 1) % 25 == 0 || it + 1 == total) {
      log_info(stage + " " + std::to_string(it + 1) + "/" + std::to_string(total) + " loss " + std::to_string(loss));
    }
  };
  const auto result = stylize(scene, data, inputs, cfg, vgg, hooks);
  fs::create_directories(out);
  save_ply(result.scene, out / "scene.ply");
  save_config(cfg, out / "config.json");
  std::ofstream(out / "log.json") << log_to_json(result.log).dump(2) << "\n";
  fs::create_directories(out / "views");
  for (std::size_t i = 0; i < data.size(); ++i) {
    write_png_rgb(out / "views" / data.files[i].filename(), rasterize(result.scene, data.cams[i]).color);
  }
  log_info("wrote " + (out / "scene.ply").string());
  return kExitOk;
}

int run_gradcheck() {
  // A compact version of the gradient suite, useful after local changes.
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  auto random = [&](Shape shape) {
    Tensor<double>::Array a(numel(shape));
    for (Index i = 0; i < a.size(); ++i) a[i] = n01(rng);
    return Tensor<double>(shape, a, true);
  };
  bool ok = true;
  auto report = [&ok](const std::string& name, double err, double tol) {
    const bool pass = err < tol;
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << name << " max rel err " << err << " (tol " << tol << ")\n";
  };
  const auto k = random({4, 3, 3, 3});
  report("conv2d/relu/mean",
         finite_difference_check<double>([&](const Tensor<double>& x) { return mean(relu(conv2d(x, k))); },
                                         random({3, 8, 8}), 1e-4)
             .max_rel_error,
         1e-5);
  const auto style = random({6, 4, 4});
  report("nnfm",
         finite_difference_check<double>([&](const Tensor<double>& x) { return nnfm_loss(x, style); },
                                         random({6, 4, 4}), 1e-4)
             .max_rel_error,
         1e-5);
  const auto target = random({3, 12, 12});
  report("d_ssim",
         finite_difference_check<double>([&](const Tensor<double>& x) { return d_ssim(x, target); },
                                         random({3, 12, 12}), 1e-4)
             .max_rel_error,
         1e-5);
  // Jittered so no footprint bound sits exactly on a pixel edge.
  GaussianScene<double> scene = perturbed_init(toy_scene({4, 10, 6, 1, 5}), 0.05f, 0.2f, 9).cast<double>();
  const Camera<double> cam = arc_cameras(1, 16, 16, 16.0f).front().cast<double>();
  SceneParams<double> params = to_params(scene, false);
  const auto base = params;
  report("rasterize/positions",
         finite_difference_check<double>(
             [&](const Tensor<double>& x) {
               SceneParams<double> p = base;
               p.positions = x;
               const auto v = rasterize(p, cam);
               return sum(v.color) + sum(v.depth);
             },
             params.positions.clone(true), 1e-6)
             .max_rel_error,
         1e-3);
  return ok ? kExitOk : kExitNumeric;
}

volatile std::sig_atomic_t g_stop = 0;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Controllable stylization of 3D Gaussian splatting scenes"};
  app.require_subcommand(1);

  // stylize
  fs::path scene_path, cams_path, config_path, out_path;
  std::vector<fs::path> styles;
  std::string control;
  long stage2 = -1;
  auto* stylize_cmd = app.add_subcommand("stylize", "Run the two-stage stylization");
  stylize_cmd->add_option("--scene", scene_path, "Input scene (.ply)")->required()->check(CLI::ExistingFile);
  stylize_cmd->add_option("--cams", cams_path, "Cameras JSON")->required()->check(CLI::ExistingFile);
  stylize_cmd->add_option("--style", styles, "Style image(s) (.png)")->check(CLI::ExistingFile);
  stylize_cmd->add_option("--control", control, "Control mode")->check(CLI::IsMember({"none", "color", "scale", "spatial"}));
  stylize_cmd->add_option("--config", config_path, "Stylize config JSON")->check(CLI::ExistingFile);
  stylize_cmd->add_option("--stage2-iterations", stage2, "Override the stage-2 iteration count");
  stylize_cmd->add_option("--out", out_path, "Output directory")->required();

  // fit
  fs::path init_path;
  long fit_iters = 2000;
  std::uint64_t seed = 0;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a scene to training views (no densification)");
  fit_cmd->add_option("--init", init_path, "Initial scene (.ply)")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--cams", cams_path, "Cameras JSON")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--iterations", fit_iters, "Iterations")->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--seed", seed, "Random seed");
  fit_cmd->add_option("--out", out_path, "Output scene (.ply)")->required();

  // render
  int frames = 1;
  auto* render_cmd = app.add_subcommand("render", "Render frames along the camera trajectory");
  render_cmd->add_option("--scene", scene_path, "Scene (.ply)")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("--cams", cams_path, "Cameras JSON")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("--frames", frames, "Frame count")->check(CLI::PositiveNumber);
  render_cmd->add_option("--out", out_path, "Output directory")->required();

  // filter
  FilterPolicy policy;
  auto* filter_cmd = app.add_subcommand("filter", "Remove floaters by opacity and size percentiles");
  filter_cmd->add_option("--scene", scene_path, "Scene (.ply)")->required()->check(CLI::ExistingFile);
  filter_cmd->add_option("--k-opacity", policy.k_opacity, "Percent removed by lowest opacity");
  filter_cmd->add_option("--k-scale", policy.k_scale, "Percent removed by largest scale");
  filter_cmd->add_option("--out", out_path, "Output scene (.ply)")->required();

  // track-masks
  std::size_t view_index = 0;
  std::vector<std::string> points;
  TrackOptions track;
  double threshold = 0.05;
  auto* track_cmd = app.add_subcommand("track-masks", "Propagate a point-seeded mask across all views");
  track_cmd->add_option("--cams", cams_path, "Cameras JSON")->required()->check(CLI::ExistingFile);
  track_cmd->add_option("--view", view_index, "Start view index");
  track_cmd->add_option("--point", points, "Seed point x,y (repeatable)")->required();
  track_cmd->add_option("--tolerance", track.tolerance, "Area tolerance in pixels (default 10% of the start area)");
  track_cmd->add_option("--radius", track.radius, "Neighbor search radius in pixels");
  track_cmd->add_option("--step", track.step, "Neighbor search step in pixels");
  track_cmd->add_option("--threshold", threshold, "Flood-fill color threshold per channel");
  track_cmd->add_option("--out", out_path, "Output mask directory")->required();

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the main differentiable ops");

  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP job API");
  serve_cmd->add_option("--scene", scene_path, "Scene (.ply)")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--cams", cams_path, "Cameras JSON")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--config", config_path, "Default stylize config")->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--port", port, "Port")->check(CLI::Range(0, 65535));

  // toy
  int views = 8;
  auto* toy_cmd = app.add_subcommand("toy", "Write the synthetic test scene, its views and a style image");
  toy_cmd->add_option("--views", views, "Number of training views")->check(CLI::PositiveNumber);
  toy_cmd->add_option("--seed", seed, "Seed for the fit initialization");
  toy_cmd->add_option("--out", out_path, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*stylize_cmd) return run_stylize(scene_path, cams_path, styles, control, config_path, out_path, stage2);
    if (*fit_cmd) {
      const Dataset data = load_dataset(cams_path);
      auto scene = load_ply<float>(init_path);
      FitOptions options;
      options.iterations = fit_iters;
      options.seed = seed;
      fit(scene, data, options, [fit_iters](long it, double loss) {
        if ((it + 1) % 100 == 0 || it + 1 == fit_iters) {
          log_info("fit " + std::to_string(it + 1) + " loss " + std::to_string(loss));
        }
      });
      log_info("mean L1 " + std::to_string(mean_l1(scene, data)));
      save_ply(scene, out_path);
      return kExitOk;
    }
    if (*render_cmd) {
      const auto scene = load_ply<float>(scene_path);
      std::vector<Camera<float>> cams;
      for (const auto& e : load_cameras_json(cams_path)) cams.push_back(e.cam);
      render_turntable(scene, cams, frames, out_path);
      return kExitOk;
    }
    if (*filter_cmd) {
      auto scene = load_ply<float>(scene_path);
      const auto r = filter_floaters(scene, policy);
      log_info("removed " + std::to_string(r.removed) + ", " + std::to_string(scene.size()) + " remain");
      save_ply(scene, out_path);
      return kExitOk;
    }
    if (*track_cmd) {
      const Dataset data = load_dataset(cams_path);
      std::vector<PixelPoint> seeds;
      for (const auto& p : points) seeds.push_back(parse_point(p));
      const auto seq = track_dataset_masks(data, view_index, seeds, track, threshold);
      fs::create_directories(out_path);
      for (std::size_t v = 0; v < seq.masks.size(); ++v) {
        write_mask_png(out_path / mask_file_name(data, v), seq.masks[v]);
      }
      return kExitOk;
    }
    if (*grad_cmd) return run_gradcheck();
    if (*serve_cmd) {
      StylizeConfig defaults = config_path.empty() ? StylizeConfig{} : load_config(config_path);
      JobServer server(load_ply<float>(scene_path), load_dataset(cams_path), defaults);
      const int bound = server.bind(host, port);
      if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
      log_info("listening on http://" + host + ":" + std::to_string(bound));
      server.listen();
      return kExitOk;
    }
    if (*toy_cmd) {
      fs::create_directories(out_path);
      const auto scene = toy_scene();
      Dataset data;
      data.cams = arc_cameras(views);
      data.views = render_views(scene, data.cams);
      save_dataset(data, out_path);
      save_ply(scene, out_path / "truth.ply");
      save_ply(perturbed_init(scene, 0.02f, 0.05f, seed), out_path / "init.ply");
      write_png_rgb(out_path / "style.png", style_pattern(96, 96));
      write_sgsw(out_path / "vgg_synthetic.sgsw", synthetic_vgg_weights(0));
      return kExitOk;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TrackingError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
