#include "stylegs/server.hpp"

#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "stylegs/errors.hpp"
#include "stylegs/image_io.hpp"
#include "stylegs/log.hpp"
#include "stylegs/ply.hpp"
#include "stylegs/renderer.hpp"

namespace stylegs {

using nlohmann::json;

namespace {

struct MaskRecord {
  std::size_t view_index = 0;
  std::vector<PixelPoint> points;
  MaskSequence sequence;
};

struct Job {
  std::string id;
  std::string state = "queued";  // queued, running, done, failed, cancelled
  std::string stage;
  long iteration = 0;
  long stage1_total = 0;
  long stage2_total = 0;
  std::vector<double> losses;
  std::string error;
  GaussianScene<float> current;
  std::atomic<bool> cancel{false};
};

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const std::string& message, const std::string& field = "") {
  json body{{"error", message}};
  if (!field.empty()) body["field"] = field;
  send_json(res, status, body);
}

json camera_json(const Camera<float>& cam, const std::string& file) {
  const Mat4<float> m = cam.cam_to_world();
  json c2w = json::array();
  for (int k = 0; k < 16; ++k) c2w.push_back(m(k / 4, k % 4));
  return {{"file", file},   {"width", cam.width}, {"height", cam.height}, {"fx", cam.fx},
          {"fy", cam.fy},   {"cx", cam.cx},       {"cy", cam.cy},         {"cam_to_world", c2w}};
}

// Points as [[x, y], ...] or [{"x": .., "y": ..}, ...].
std::vector<PixelPoint> parse_points(const json& j) {
  if (!j.is_array() || j.empty()) throw FieldError("points", "expected a nonempty list of points");
  std::vector<PixelPoint> out;
  for (const auto& p : j) {
    if (p.is_array() && p.size() == 2 && p[0].is_number_integer() && p[1].is_number_integer()) {
      out.push_back({p[0].get<int>(), p[1].get<int>()});
    } else if (p.is_object() && p.contains("x") && p.contains("y") && p["x"].is_number_integer() &&
               p["y"].is_number_integer()) {
      out.push_back({p["x"].get<int>(), p["y"].get<int>()});
    } else {
      throw FieldError("points", "each point must be [x, y] or {\"x\", \"y\"} with integer pixels");
    }
  }
  return out;
}

}  // namespace

struct JobServer::Impl {
  GaussianScene<float> scene;
  Dataset data;
  StylizeConfig defaults;
  httplib::Server http;

  std::mutex mutex;
  std::condition_variable idle;
  std::map<std::string, std::shared_ptr<MaskRecord>> masks;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::shared_ptr<Job> active;
  std::thread worker;
  long next_mask = 1;
  long next_job = 1;

  Impl(GaussianScene<float> s, Dataset d, StylizeConfig c)
      : scene(std::move(s)), data(std::move(d)), defaults(std::move(c)) {
    routes();
  }

  ~Impl() {
    {
      std::lock_guard<std::mutex> lock(mutex);
      if (active) active->cancel = true;
    }
    if (worker.joinable()) worker.join();
  }

  std::shared_ptr<Job> find_job(const std::string& id) {
    std::lock_guard<std::mutex> lock(mutex);
    const auto it = jobs.find(id);
    return it == jobs.end() ? nullptr : it->second;
  }

  std::shared_ptr<MaskRecord> find_mask(const std::string& id) {
    std::lock_guard<std::mutex> lock(mutex);
    const auto it = masks.find(id);
    return it == masks.end() ? nullptr : it->second;
  }

  void routes() {
    http.Get("/scene/meta", [this](const httplib::Request&, httplib::Response& res) {
      json cams = json::array();
      for (std::size_t i = 0; i < data.size(); ++i) {
        cams.push_back(camera_json(data.cams[i], i < data.files.size() ? data.files[i].filename().string() : ""));
      }
      send_json(res, 200,
                {{"gaussians", scene.size()}, {"sh_degree", scene.sh_degree()}, {"views", data.size()},
                 {"cameras", cams}});
    });

    http.Get(R"(/view/(\d+)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::size_t i = std::stoul(req.matches[1]);
      if (i >= data.size()) return send_error(res, 404, "no view " + std::to_string(i));
      std::string bytes;
      if (i < data.files.size() && std::filesystem::exists(data.files[i])) {
        std::ifstream in(data.files[i], std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
      } else {
        bytes = encode_png_rgb(data.views[i]);
      }
      res.set_content(bytes, "image/png");
    });

    http.Post("/mask", [this](const httplib::Request& req, httplib::Response& res) { post_mask(req, res); });

    http.Get(R"(/mask/([\w-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto rec = find_mask(req.matches[1]);
      if (!rec) return send_error(res, 404, "no mask " + std::string(req.matches[1]));
      send_json(res, 200, mask_summary(req.matches[1], *rec));
    });

    http.Get(R"(/mask/([\w-]+)/(\d+)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto rec = find_mask(req.matches[1]);
      if (!rec) return send_error(res, 404, "no mask " + std::string(req.matches[1]));
      const std::size_t v = std::stoul(req.matches[2]);
      if (v >= rec->sequence.masks.size()) return send_error(res, 404, "no view " + std::to_string(v));
      res.set_content(encode_mask_png(rec->sequence.masks[v]), "image/png");
    });

    http.Post("/stylize", [this](const httplib::Request& req, httplib::Response& res) { post_stylize(req, res); });

    http.Get(R"(/job/([\w-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto job = find_job(req.matches[1]);
      if (!job) return send_error(res, 404, "no job " + std::string(req.matches[1]));
      std::lock_guard<std::mutex> lock(mutex);
      send_json(res, 200,
                {{"id", job->id},
                 {"state", job->state},
                 {"stage", job->stage},
                 {"iteration", job->iteration},
                 {"stage1_iterations", job->stage1_total},
                 {"stage2_iterations", job->stage2_total},
                 {"losses", job->losses},
                 {"gaussians", job->current.size()},
                 {"error", job->error}});
    });

    http.Get(R"(/job/([\w-]+)/frame)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto job = find_job(req.matches[1]);
      if (!job) return send_error(res, 404, "no job " + std::string(req.matches[1]));
      double t = 0;
      if (req.has_param("pose_t")) {
        try {
          std::size_t used = 0;
          const std::string s = req.get_param_value("pose_t");
          t = std::stod(s, &used);
          if (used != s.size()) throw std::invalid_argument(s);
        } catch (const std::exception&) {
          return send_error(res, 400, "pose_t must be a number", "pose_t");
        }
      }
      if (!(t >= 0 && t <= 1)) return send_error(res, 400, "pose_t must lie in [0, 1]", "pose_t");
      GaussianScene<float> current;
      {
        std::lock_guard<std::mutex> lock(mutex);
        current = job->current;
      }
      const auto view = rasterize(current, trajectory_pose(data.cams, t));
      res.set_content(encode_png_rgb(view.color), "image/png");
    });

    http.Post(R"(/job/([\w-]+)/cancel)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto job = find_job(req.matches[1]);
      if (!job) return send_error(res, 404, "no job " + std::string(req.matches[1]));
      job->cancel = true;
      send_json(res, 200, {{"id", job->id}, {"cancel_requested", true}});
    });
  }

  json mask_summary(const std::string& id, const MaskRecord& rec) {
    json areas = json::array(), points = json::array();
    for (const auto& m : rec.sequence.masks) areas.push_back(m.cast<long>().sum());
    for (const auto& p : rec.sequence.points) points.push_back({p.x, p.y});
    return {{"mask_id", id},   {"view_index", rec.view_index}, {"views", rec.sequence.masks.size()},
            {"areas", areas},  {"points", points},             {"provenance", rec.sequence.provenance}};
  }

  void post_mask(const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      return send_error(res, 400, std::string("body is not valid JSON: ") + e.what(), "body");
    }
    try {
      if (!body.is_object()) throw FieldError("body", "expected an object");
      for (const auto& [key, value] : body.items()) {
        if (key != "view_index" && key != "points" && key != "tolerance" && key != "radius" && key != "step" &&
            key != "threshold") {
          throw FieldError(key, "unknown key");
        }
      }
      if (!body.contains("view_index") || !body["view_index"].is_number_unsigned()) {
        throw FieldError("view_index", "expected a nonnegative integer");
      }
      const std::size_t view = body["view_index"].get<std::size_t>();
      if (view >= data.size()) throw FieldError("view_index", "out of range");
      if (!body.contains("points")) throw FieldError("points", "missing");
      auto rec = std::make_shared<MaskRecord>();
      rec->view_index = view;
      rec->points = parse_points(body["points"]);
      TrackOptions options;
      double threshold = 0.05;
      if (body.contains("tolerance")) {
        if (!body["tolerance"].is_number()) throw FieldError("tolerance", "expected a number");
        options.tolerance = body["tolerance"].get<double>();
      }
      if (body.contains("radius")) {
        if (!body["radius"].is_number_integer()) throw FieldError("radius", "expected an integer");
        options.radius = body["radius"].get<int>();
      }
      if (body.contains("step")) {
        if (!body["step"].is_number_integer() || body["step"].get<int>() < 1) {
          throw FieldError("step", "expected a positive integer");
        }
        options.step = body["step"].get<int>();
      }
      if (body.contains("threshold")) {
        if (!body["threshold"].is_number()) throw FieldError("threshold", "expected a number");
        threshold = body["threshold"].get<double>();
      }
      for (const auto& p : rec->points) {
        if (p.x < 0 || p.y < 0 || p.x >= data.cams[view].width || p.y >= data.cams[view].height) {
          throw FieldError("points", "point outside view " + std::to_string(view));
        }
      }
      rec->sequence = track_dataset_masks(data, view, rec->points, options, threshold);
      std::string id;
      {
        std::lock_guard<std::mutex> lock(mutex);
        id = "mask-" + std::to_string(next_mask++);
        masks[id] = rec;
      }
      send_json(res, 200, mask_summary(id, *rec));
    } catch (const FieldError& e) {
      send_error(res, 400, e.what(), e.field());
    } catch (const TrackingError& e) {
      send_json(res, 422, {{"error", e.what()}, {"view", e.view()}});
    } catch (const ConfigError& e) {
      send_error(res, 400, e.what());
    }
  }

  void post_stylize(const httplib::Request& req, httplib::Response& res) {
    json patch;
    try {
      patch = json::parse(req.body);
    } catch (const json::parse_error& e) {
      return send_error(res, 400, std::string("body is not valid JSON: ") + e.what(), "body");
    }
    if (!patch.is_object()) return send_error(res, 400, "expected a stylize config object", "body");
    {
      std::lock_guard<std::mutex> lock(mutex);
      if (active) return send_error(res, 409, "job " + active->id + " is still running");
    }
    StylizeConfig cfg;
    StyleInputs inputs;
    try {
      json merged = config_to_json(defaults);
      merged.merge_patch(patch);
      cfg = config_from_json(merged);
      cfg.validate(true);
      inputs = load_style_inputs(cfg, data, [this](const std::string& id) {
        const auto rec = find_mask(id);
        if (!rec) throw FieldError("regions.mask_id", "unknown mask id " + id);
        return rec->sequence.masks;
      });
    } catch (const FieldError& e) {
      return send_error(res, 400, e.what(), e.field());
    } catch (const ParseError& e) {
      return send_error(res, 400, e.what(), e.field());
    } catch (const ConfigError& e) {
      return send_error(res, 400, e.what());
    }

    auto job = std::make_shared<Job>();
    job->current = scene;
    job->stage1_total = cfg.stage1_iterations;
    job->stage2_total = cfg.stage2_iterations;
    {
      std::lock_guard<std::mutex> lock(mutex);
      if (active) return send_error(res, 409, "job " + active->id + " is still running");
      job->id = "job-" + std::to_string(next_job++);
      jobs[job->id] = job;
      active = job;
      if (worker.joinable()) worker.join();
      worker = std::thread([this, job, cfg, inputs = std::move(inputs)] { run(job, cfg, inputs); });
    }
    send_json(res, 202, {{"job_id", job->id}});
  }

  void run(const std::shared_ptr<Job>& job, const StylizeConfig& cfg, const StyleInputs& inputs) {
    {
      std::lock_guard<std::mutex> lock(mutex);
      job->state = "running";
    }
    try {
      const auto vgg = load_vgg(cfg);
      StylizeHooks hooks;
      hooks.cancel = &job->cancel;
      hooks.on_progress = [this, &job](const std::string& stage, long, long, double loss) {
        std::lock_guard<std::mutex> lock(mutex);
        job->stage = stage;
        job->losses.push_back(loss);
        job->iteration = static_cast<long>(job->losses.size());
      };
      hooks.on_scene = [this, &job](const GaussianScene<float>& s) {
        std::lock_guard<std::mutex> lock(mutex);
        job->current = s;
      };
      auto result = stylize(scene, data, inputs, cfg, vgg, hooks);
      if (!cfg.output_dir.empty()) {
        std::filesystem::create_directories(cfg.output_dir);
        save_ply(result.scene, cfg.output_dir / "scene.ply");
        std::ofstream(cfg.output_dir / "log.json") << log_to_json(result.log).dump(2) << "\n";
      }
      std::lock_guard<std::mutex> lock(mutex);
      job->current = std::move(result.scene);
      job->state = result.log.cancelled ? "cancelled" : "done";
    } catch (const std::exception& e) {
      log_warn("job " + job->id + " failed: " + e.what());
      std::lock_guard<std::mutex> lock(mutex);
      job->state = "failed";
      job->error = e.what();
    }
    std::lock_guard<std::mutex> lock(mutex);
    active.reset();
    idle.notify_all();
  }
};

JobServer::JobServer(GaussianScene<float> scene, Dataset data, StylizeConfig defaults)
    : impl_(std::make_unique<Impl>(std::move(scene), std::move(data), std::move(defaults))) {}

JobServer::~JobServer() = default;

int JobServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->http.bind_to_any_port(host);
  return impl_->http.bind_to_port(host, port) ? port : -1;
}

void JobServer::listen() { impl_->http.listen_after_bind(); }

void JobServer::stop() { impl_->http.stop(); }

void JobServer::wait_idle() {
  std::unique_lock<std::mutex> lock(impl_->mutex);
  impl_->idle.wait(lock, [this] { return impl_->active == nullptr; });
}

}  // namespace stylegs
