#pragma once

#include <memory>
#include <string>

#include "stylegs/pipeline.hpp"

namespace stylegs {

/// HTTP front end over one scene and its training views.
///
///   GET  /scene/meta                 counts, SH degree, cameras
///   GET  /view/{i}.png               training view i
///   POST /mask                       {view_index, points, tolerance?, radius?, step?, threshold?}
///   GET  /mask/{id}                  tracked mask summary
///   GET  /mask/{id}/{view}.png       one mask as 8-bit PNG
///   POST /stylize                    stylize config as JSON -> {job_id}; 409 while a job runs
///   GET  /job/{id}                   state, iteration, loss curve
///   GET  /job/{id}/frame?pose_t=t    current scene rendered along the camera trajectory
///   POST /job/{id}/cancel
///
/// Malformed bodies get 400 with {"error", "field"}.
class JobServer {
 public:
  JobServer(GaussianScene<float> scene, Dataset data, StylizeConfig defaults);
  ~JobServer();
  JobServer(const JobServer&) = delete;
  JobServer& operator=(const JobServer&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();
  /// Blocks until no job is running.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace stylegs
