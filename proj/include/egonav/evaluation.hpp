#pragma once

#include "egonav/environment.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace egonav {

/// Percent of episodes that ended by reaching the goal.
double success_rate(const std::vector<EpisodeTrace>& traces);

/// Percent of actions whose chunk collided, pooled over all episodes.
double collision_rate(const std::vector<EpisodeTrace>& traces);

struct SkatingParams {
  double slide_threshold = 0.0066;  // m per frame
  double contact_band = 0.02;       // m
};

/// Percent of consecutive frame pairs in which the lower foot is in ground
/// contact and slides more than the threshold horizontally. The lower foot is
/// the one with the smaller summed height over the pair (left on ties).
double foot_skating(const std::vector<EpisodeTrace>& traces, const SkatingParams& p = {});

struct MetricsReport {
  double success_rate = 0.0;
  double collision_rate = 0.0;
  double foot_skating = 0.0;
  int n_episodes = 0;
  std::uint64_t config_hash = 0;
};

MetricsReport compute_metrics(const std::vector<EpisodeTrace>& traces, std::uint64_t config_hash = 0);

struct AngleHistogram {
  std::vector<double> edges;  // degrees, bins are (edges[i], edges[i+1]]
  std::vector<long> counts;
  std::vector<double> angles;  // every included frame, degrees in (-180, 180]
  long excluded = 0;

  long total() const;
  /// Median of |angle|; NaN when no frame was included.
  double median_abs() const;
};

/// Signed angle from the head's horizontal forward axis to the pelvis
/// velocity, per frame; frames slower than speed_floor are left out.
AngleHistogram heading_velocity_angles(const std::vector<EpisodeTrace>& traces, double speed_floor = 0.1,
                                       int n_bins = 36, int fps = 30);

struct CrossSceneResult {
  std::vector<std::string> train_scenes;
  std::vector<std::string> test_scenes;
  Eigen::MatrixXd success;    // n_train x n_test, percent
  Eigen::MatrixXd collision;  // n_train x n_test, percent
  std::vector<std::vector<MetricsReport>> reports;
};

struct TrainedPolicy {
  std::string scene_id;
  QCheckpoint checkpoint;
};

CrossSceneResult cross_scene_eval(const std::vector<TrainedPolicy>& policies,
                                  const std::vector<Scene>& scenes, const MotionPrior& prior,
                                  const ActionSet& actions, const EnvConfig& env,
                                  const RolloutOptions& opt, std::uint64_t config_hash = 0);

/// One row per (train scene, test scene) pair.
void write_metrics_csv(const CrossSceneResult& r, const std::filesystem::path& path);
void write_metrics_csv(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                       const std::string& test_scene, const std::filesystem::path& path);
void write_angles_csv(const AngleHistogram& h, const std::filesystem::path& path);

}  // namespace egonav
