#pragma once

#include "egonav/common.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <vector>

namespace egonav {

/// Simplified body: pelvis on the floor plane, a head frame and two feet.
/// World frame is z-up; heading 0 faces +x.
struct Pose {
  Vec2 pelvis_xy = Vec2::Zero();
  double pelvis_heading = 0.0;
  Vec3 head_pos{0.0, 0.0, 1.6};
  double head_yaw = 0.0;
  double head_pitch = 0.0;
  Vec3 left_foot = Vec3::Zero();
  Vec3 right_foot = Vec3::Zero();
  std::int64_t frame_index = 0;

  static constexpr int kDim = 15;  // row width in dataset files
  Eigen::Matrix<double, kDim, 1> to_row() const;
  static Pose from_row(const Eigen::Matrix<double, kDim, 1>& row);
};

inline Vec2 heading_dir(double heading) {
  return {std::cos(heading), std::sin(heading)};
}

/// Componentwise difference of consecutive poses. Translations live in the
/// earlier pose's heading frame (x forward, y left, z up).
struct PoseDelta {
  static constexpr int kDim = 14;
  Eigen::Matrix<double, kDim, 1> v = Eigen::Matrix<double, kDim, 1>::Zero();
  std::int64_t frame_step = 0;

  // Named slots into v.
  enum Slot : int {
    kPelvisFwd = 0, kPelvisLeft, kHeading,
    kHeadFwd, kHeadLeft, kHeadUp, kHeadYaw, kHeadPitch,
    kLeftFootFwd, kLeftFootLeft, kLeftFootUp,
    kRightFootFwd, kRightFootLeft, kRightFootUp,
  };
};

PoseDelta pose_delta(const Pose& from, const Pose& to);
Pose apply_delta(const Pose& p, const PoseDelta& d);

struct HeadPose {
  Vec3 translation = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();

  double yaw() const { return yaw_of(rotation); }
  double pitch() const { return pitch_of(rotation); }
  Vec3 forward() const { return rotation.col(0); }
  Eigen::Matrix4d matrix() const;
};

HeadPose head_pose(const Pose& p);

struct ReachTolerance {
  double pos_m = 0.10;
  double ang_rad = deg2rad(10.0);
};

/// Closed thresholds on head position and geodesic rotation distance.
bool head_reached(const Pose& p, const HeadPose& target, const ReachTolerance& tol);

struct ChunkConfig {
  int fps = 30;
  int T_frames = 30;
  double v_max = 1.5;              // m/s, forward
  double v_back = 0.5;             // m/s, backward
  double omega_max = kPi;          // rad/s, pelvis heading
  double head_omega = 2.0 * kPi;   // rad/s, head yaw
  double pitch_rate = kPi / 2.0;   // rad/s
  double head_z_rate = 0.5;        // m/s
  double step_cycle_s = 0.6;
  double swing_height = 0.08;
  double foot_lateral = 0.10;
  double head_z_min = 1.2;
  double head_z_max = 1.9;
  double neck_limit = kPi / 2.0;
  double pitch_limit = deg2rad(45.0);
  ReachTolerance tol{};

  double dt() const { return 1.0 / fps; }
  int half_cycle_frames() const;
  /// Translation speed cap for a direction at `angle` from the heading.
  double speed_cap(double angle) const;
};

struct MotionChunk {
  std::vector<Pose> poses;
  bool reached = false;
  double displacement = 0.0;  // pelvis, start pose to last frame
};

/// One autoregressive step of a motion prior.
class MotionPrior {
 public:
  virtual ~MotionPrior() = default;
  virtual Pose next(const Pose& current, const HeadPose& target,
                    int remaining_frames, const ChunkConfig& cfg,
                    Rng& rng) const = 0;
  virtual std::string name() const = 0;
};

/// Procedural turn-and-walk gait with planted stance feet.
class KinematicPrior final : public MotionPrior {
 public:
  Pose next(const Pose& current, const HeadPose& target, int remaining_frames,
            const ChunkConfig& cfg, Rng& rng) const override;
  std::string name() const override { return "kinematic"; }
};

/// Per-frame hook applied after the prior proposes a frame; receives the
/// previous and proposed pose and may edit the proposal in place.
using FrameFilter = std::function<void(const Pose& prev, Pose& proposed)>;

class InfeasibleTarget : public Error {
 public:
  using Error::Error;
};

/// Generates frames until the head reaches the target or T_frames frames
/// exist. The start pose is not part of the chunk.
MotionChunk rollout(const MotionPrior& prior, const Pose& p0,
                    const HeadPose& target, const ChunkConfig& cfg, Rng& rng,
                    const FrameFilter& filter = {});

MotionChunk kinematic_rollout(const Pose& p0, const HeadPose& target,
                              const ChunkConfig& cfg);

/// Standing pose with feet at their nominal stance positions.
Pose standing_pose(Vec2 xy, double heading, double head_z = 1.6);

/// Clamps a pose into the body invariants (head height band, neck limit,
/// pitch limit, feet above the floor).
void clamp_pose(Pose& p, const ChunkConfig& cfg);

bool pose_valid(const Pose& p, const ChunkConfig& cfg, double eps = 1e-9);

struct TrajectoryDataset {
  int fps = 30;
  std::vector<std::vector<Pose>> sequences;
};

struct SynthConfig {
  double min_seconds = 5.0;
  double max_seconds = 20.0;
  ChunkConfig chunk{};
};

TrajectoryDataset synth_trajectories(std::uint64_t seed, int n_sequences,
                                     const SynthConfig& cfg = {});

/// Binary layout: "EGTD", u32 version, u32 fps, u32 pose_dim, u32 n_sequences,
/// then per sequence u32 frame count followed by frame_count * pose_dim f32
/// values in Pose::to_row order. Little-endian.
void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& path);
TrajectoryDataset load_dataset(const std::filesystem::path& path);

}  // namespace egonav
