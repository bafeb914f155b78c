#pragma once

// Episodic navigation task: an action picks a head target, the motion prior
// walks the body towards it for one chunk, and the ego view at the chunk's
// last frame is the next observation.

#include "egonav/action_space.hpp"
#include "egonav/ego_sensor.hpp"
#include "egonav/qlearn.hpp"
#include "egonav/scene.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace egonav {

struct RewardConfig {
  double r_reach = 10.0;
  double r_time = 0.05;
  double r_collision = 1.0;
  double r_still = 0.1;
  double move_threshold = 0.10;  // m

  void validate() const;
};

struct StepOutcome {
  bool reached_and_visible = false;
  bool collided = false;
  double displacement = 0.0;
};

/// Reaching dominates; otherwise the time penalty plus whichever of the
/// collision and no-movement penalties apply.
double compute_reward(const StepOutcome& outcome, const RewardConfig& cfg);

struct EpisodeConfig {
  double horizon_s = 15.0;
  double chunk_s = 1.0;
  int fps = 30;
  double reach_dist = 0.50;  // m, horizontal pelvis-to-goal distance

  int horizon_frames() const { return static_cast<int>(std::lround(horizon_s * fps)); }
  int chunk_frames() const { return static_cast<int>(std::lround(chunk_s * fps)); }
  void validate() const;
};

enum class SamplingProfile { kUniform, kCorridor };

struct EnvConfig {
  EpisodeConfig episode;
  RewardConfig reward;
  CameraConfig camera;
  ChunkConfig chunk;  // fps and T_frames are overwritten from `episode`
  HeadBand band;
  SamplingParams sampling;
  SamplingProfile profile = SamplingProfile::kUniform;

  void validate() const;
  /// Sampling parameters for `scene` under the configured profile.
  SamplingParams sampling_for(const Scene& scene) const;
};

enum class Outcome { kReached, kTimeout };

struct ActionRecord {
  int action = 0;
  std::vector<Pose> poses;
  double reward = 0.0;
  bool collided = false;
  bool goal_visible = false;
  bool reached = false;
  double displacement = 0.0;
  std::uint64_t obs_checksum = 0;
};

struct EpisodeTrace {
  std::string scene_id;
  std::uint64_t seed = 0;  // start/goal sampling seed of this episode
  int episode = 0;
  GoalSpec goal;
  Pose start;
  std::vector<ActionRecord> actions;
  Outcome outcome = Outcome::kTimeout;

  double total_reward() const;
  int frames() const;
};

class NavEnv {
 public:
  NavEnv(const Scene& scene, const MotionPrior& prior, const ActionSet& actions, EnvConfig cfg);

  /// Samples a start and goal from `episode_seed` and renders the first view.
  const ObservationTensor& reset(std::uint64_t episode_seed);
  const ObservationTensor& reset(const StartGoal& sg, std::uint64_t episode_seed);

  struct StepResult {
    ObservationTensor obs;
    double reward = 0.0;
    bool done = false;
    ActionRecord info;
  };
  StepResult step(int action);

  bool done() const { return done_; }
  int frames_used() const { return frames_used_; }
  const Pose& pose() const { return pose_; }
  const GoalSpec& goal() const { return goal_; }
  const ObservationTensor& observation() const { return obs_; }
  const EpisodeTrace& trace() const { return trace_; }
  const EnvConfig& config() const { return cfg_; }
  const Scene& scene() const { return scene_; }

  /// Goal within reach_dist of the pelvis (horizontally) and visible.
  bool reached(const Pose& p) const;

 private:
  const Scene& scene_;
  const MotionPrior& prior_;
  const ActionSet& actions_;
  EnvConfig cfg_;
  Rng rng_;
  Pose pose_;
  GoalSpec goal_;
  ObservationTensor obs_;
  int frames_used_ = 0;
  bool done_ = true;
  EpisodeTrace trace_;
};

class ChecksumMismatch : public Error {
 public:
  using Error::Error;
};

/// Fails unless the checkpoint was trained on `actions` with the sensor
/// layout of `camera`.
void check_compatible(const QCheckpoint& ck, const ActionSet& actions, const CameraConfig& camera);

std::uint32_t sensor_flags(const CameraConfig& camera);

struct TrainingHooks {
  std::function<void(const std::string& ndjson_line)> log;
  std::function<void(const QCheckpoint&)> checkpoint;
  std::function<void(const std::string& batch_dump)> on_failure;
};

struct TrainingResult {
  QCheckpoint checkpoint;
  int episodes = 0;
  std::int64_t env_steps = 0;
};

/// Sequential reference loop; total_steps counts gradient steps, which start
/// once the replay holds one batch. Reproducible per seed. `init` warm-starts
/// both networks and must match the action set and sensor layout.
TrainingResult run_training(const Scene& scene, const MotionPrior& prior, const ActionSet& actions,
                            const TrainConfig& train, const EnvConfig& env, std::uint64_t seed,
                            const TrainingHooks& hooks = {}, const QCheckpoint* init = nullptr);

using Policy = std::function<int(const ObservationTensor& obs, Rng& rng)>;

struct RolloutOptions {
  int n_episodes = 500;
  std::uint64_t seed = 0;
  int jobs = 1;  // capped by EGO_NAV_THREADS when set
};

/// Runs independent episodes, one RNG stream per episode; traces are ordered
/// by episode index regardless of thread scheduling. `make_policy` is called
/// once per worker.
std::vector<EpisodeTrace> run_episodes(const Scene& scene, const MotionPrior& prior,
                                       const ActionSet& actions, const EnvConfig& env,
                                       const std::function<Policy()>& make_policy,
                                       const RolloutOptions& opt);

/// Greedy (epsilon = 0) rollouts of a checkpoint's online network.
std::vector<EpisodeTrace> rollout_policy(const QCheckpoint& ck, const Scene& scene,
                                         const MotionPrior& prior, const ActionSet& actions,
                                         const EnvConfig& env, const RolloutOptions& opt);

/// Uniformly random actions; the baseline for behavioral checks.
std::vector<EpisodeTrace> rollout_random(const Scene& scene, const MotionPrior& prior,
                                         const ActionSet& actions, const EnvConfig& env,
                                         const RolloutOptions& opt);

int worker_count(int requested);

/// NDJSON: one header line {"type":"header", scene, seed, config_hash,
/// n_episodes}, then per episode an "episode" line followed by one "action"
/// line per action.
void write_traces(std::ostream& os, const std::vector<EpisodeTrace>& traces,
                  std::uint64_t seed, std::uint64_t config_hash);
std::vector<EpisodeTrace> read_traces(std::istream& is);

}  // namespace egonav
