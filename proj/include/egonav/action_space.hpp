#pragma once

#include "egonav/body.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace egonav {

/// Head motion over one chunk horizon, in the earlier head's yaw-aligned
/// frame (x forward, y left, z up).
struct HeadDelta {
  Vec3 translation = Vec3::Zero();
  double yaw = 0.0;
  double pitch = 0.0;

  static constexpr int kFeatureDim = 5;
  /// Clustering features; angles scaled by 1 m/rad.
  Eigen::Matrix<double, kFeatureDim, 1> features() const;
  static HeadDelta from_features(const Eigen::Matrix<double, kFeatureDim, 1>& f);
};

std::vector<HeadDelta> extract_head_deltas(const TrajectoryDataset& ds, int T_frames);

struct KMeansResult {
  Eigen::MatrixXd centroids;           // N x d
  std::vector<int> assignments;
  double inertia = 0.0;
  std::vector<double> inertia_history; // per Lloyd iteration of the kept run
  int iterations = 0;
};

struct KMeansOptions {
  int max_iter = 300;
  int n_init = 40;  // independent k-means++ restarts, best inertia kept
};

/// Lloyd's algorithm with k-means++ seeding, polished by single-point transfers. Points are rows. Ties in the
/// nearest-centroid assignment go to the lowest index; an emptied cluster is
/// re-seeded at the point farthest from its centroid.
KMeansResult kmeans(const Eigen::MatrixXd& points, int n_clusters, std::uint64_t seed,
                    const KMeansOptions& opt = {});

struct ActionSet {
  std::vector<HeadDelta> centroids;
  std::string dataset_id;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(centroids.size()); }
  void validate() const;
  std::string to_json() const;
  static ActionSet from_json(const std::string& text);
  std::uint64_t checksum() const;
};

ActionSet build_action_set(const TrajectoryDataset& ds, int n_actions, int T_frames,
                           std::uint64_t seed, const std::string& dataset_id);

void save_action_set(const ActionSet& a, const std::filesystem::path& path);
ActionSet load_action_set(const std::filesystem::path& path);

struct HeadBand {
  double z_min = 1.2;
  double z_max = 1.9;
  double pitch_limit = deg2rad(45.0);
};

/// World-frame head target for an action taken at `current`.
HeadPose resolve_action(const HeadPose& current, const HeadDelta& action, const HeadBand& band = {});

}  // namespace egonav
