#include "egonav/environment.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdlib>
#include <deque>
#include <istream>
#include <mutex>
#include <ostream>
#include <thread>

namespace egonav {

using ordered_json = nlohmann::ordered_json;

void RewardConfig::validate() const {
  if (!(r_reach >= 0) || !(r_time >= 0) || !(r_collision >= 0) || !(r_still >= 0) ||
      !(move_threshold >= 0)) {
    throw Error("reward config: all values must be >= 0");
  }
}

double compute_reward(const StepOutcome& o, const RewardConfig& cfg) {
  if (o.reached_and_visible) return cfg.r_reach;
  double r = -cfg.r_time;
  if (o.collided) r -= cfg.r_collision;
  if (o.displacement < cfg.move_threshold) r -= cfg.r_still;
  return r;
}

void EpisodeConfig::validate() const {
  if (!(horizon_s > 0) || !(chunk_s > 0) || fps <= 0 || !(reach_dist > 0)) {
    throw Error("episode config: values must be positive");
  }
  if (chunk_frames() <= 0 || horizon_frames() % chunk_frames() != 0) {
    throw Error("episode config: horizon must be a whole number of chunks");
  }
}

void EnvConfig::validate() const {
  episode.validate();
  reward.validate();
  camera.validate();
  if (!(sampling.body_radius > 0)) throw Error("env config: body radius must be positive");
}

SamplingParams EnvConfig::sampling_for(const Scene& scene) const {
  SamplingParams sp = sampling;
  if (profile == SamplingProfile::kCorridor) {
    // Start near the closed end facing down the corridor, goal 2-5 m ahead.
    const Vec2 o = scene.bounds.min;
    const double w = scene.bounds.max.y() - o.y();
    sp.start_region = FloorRect{o + Vec2(0.5, w / 2 - 0.3), o + Vec2(1.0, w / 2 + 0.3)};
    sp.goal_region = FloorRect{o + Vec2(3.0, w / 2 - 0.6),
                               Vec2(std::min(o.x() + 6.0, scene.bounds.max.x()), o.y() + w / 2 + 0.6)};
    sp.heading_min = -deg2rad(20.0);
    sp.heading_max = deg2rad(20.0);
  }
  return sp;
}

double EpisodeTrace::total_reward() const {
  double r = 0.0;
  for (const ActionRecord& a : actions) r += a.reward;
  return r;
}

int EpisodeTrace::frames() const {
  int n = 0;
  for (const ActionRecord& a : actions) n += static_cast<int>(a.poses.size());
  return n;
}

NavEnv::NavEnv(const Scene& scene, const MotionPrior& prior, const ActionSet& actions, EnvConfig cfg)
    : scene_(scene), prior_(prior), actions_(actions), cfg_(std::move(cfg)) {
  cfg_.validate();
  actions_.validate();
  cfg_.chunk.fps = cfg_.episode.fps;
  cfg_.chunk.T_frames = cfg_.episode.chunk_frames();
  cfg_.chunk.head_z_min = cfg_.band.z_min;
  cfg_.chunk.head_z_max = cfg_.band.z_max;
  cfg_.chunk.pitch_limit = cfg_.band.pitch_limit;
}

const ObservationTensor& NavEnv::reset(std::uint64_t episode_seed) {
  return reset(sample_start_goal(scene_, episode_seed, cfg_.sampling_for(scene_)), episode_seed);
}

const ObservationTensor& NavEnv::reset(const StartGoal& sg, std::uint64_t episode_seed) {
  rng_.seed(mix_seed(episode_seed, 1));
  pose_ = sg.start_pose;
  goal_ = sg.goal;
  frames_used_ = 0;
  done_ = false;
  obs_ = render_ego(scene_, goal_, head_pose(pose_), cfg_.camera);
  trace_ = EpisodeTrace{};
  trace_.scene_id = scene_.id;
  trace_.seed = episode_seed;
  trace_.goal = goal_;
  trace_.start = pose_;
  return obs_;
}

bool NavEnv::reached(const Pose& p) const {
  if ((p.pelvis_xy - goal_.center.head<2>()).norm() > cfg_.episode.reach_dist) return false;
  return goal_visible(scene_, goal_, head_pose(p), cfg_.camera);
}

NavEnv::StepResult NavEnv::step(int action) {
  if (done_) throw Error("step_env: episode is done; call reset first");
  if (action < 0 || action >= actions_.size()) {
    throw Error("step_env: action " + std::to_string(action) + " out of range");
  }
  const HeadPose target =
      resolve_action(head_pose(pose_), actions_.centroids[static_cast<std::size_t>(action)], cfg_.band);
  ChunkConfig cc = cfg_.chunk;
  cc.T_frames = std::min(cc.T_frames, cfg_.episode.horizon_frames() - frames_used_);

  bool collided = false;
  const double radius = cfg_.sampling.body_radius;
  const FrameFilter pushback = [&](const Pose& prev, Pose& proposed) {
    if (!collide(scene_, {proposed.pelvis_xy, radius}).hit) return;
    collided = true;
    const Vec2 shift = prev.pelvis_xy - proposed.pelvis_xy;
    proposed.pelvis_xy = prev.pelvis_xy;
    proposed.head_pos.head<2>() += shift;
  };
  const MotionChunk chunk = rollout(prior_, pose_, target, cc, rng_, pushback);
  pose_ = chunk.poses.back();
  frames_used_ += static_cast<int>(chunk.poses.size());

  StepResult r;
  obs_ = render_ego(scene_, goal_, head_pose(pose_), cfg_.camera);
  r.obs = obs_;
  r.info.action = action;
  r.info.poses = chunk.poses;
  r.info.collided = collided;
  r.info.goal_visible = goal_visible(scene_, goal_, head_pose(pose_), cfg_.camera);
  r.info.reached = r.info.goal_visible &&
                   (pose_.pelvis_xy - goal_.center.head<2>()).norm() <= cfg_.episode.reach_dist;
  r.info.displacement = chunk.displacement;
  r.info.obs_checksum = obs_.checksum();
  r.reward = compute_reward({r.info.reached, collided, chunk.displacement}, cfg_.reward);
  r.info.reward = r.reward;
  done_ = r.info.reached || frames_used_ >= cfg_.episode.horizon_frames();
  r.done = done_;
  trace_.actions.push_back(r.info);
  if (done_) trace_.outcome = r.info.reached ? Outcome::kReached : Outcome::kTimeout;
  return r;
}

std::uint32_t sensor_flags(const CameraConfig& camera) {
  return (camera.reversed ? 1u : 0u) | (camera.goal_vector ? 2u : 0u);
}

void check_compatible(const QCheckpoint& ck, const ActionSet& actions, const CameraConfig& camera) {
  if (ck.action_checksum != actions.checksum()) {
    throw ChecksumMismatch("checkpoint was trained with action set " + hex64(ck.action_checksum) +
                           ", loaded action set is " + hex64(actions.checksum()));
  }
  if (ck.arch.n_actions != actions.size()) throw ChecksumMismatch("checkpoint action count differs");
  if (ck.sensor_flags != sensor_flags(camera) || ck.arch.channels != camera.channels() ||
      ck.arch.height != camera.height || ck.arch.width != camera.width) {
    throw Error("checkpoint sensor layout does not match the camera configuration");
  }
}

namespace {

QArch arch_for(const CameraConfig& camera, int n_actions) {
  QArch a;
  a.channels = camera.channels();
  a.height = camera.height;
  a.width = camera.width;
  a.n_actions = n_actions;
  return a;
}

ordered_json nullable(double v, bool present) { return present ? ordered_json(v) : ordered_json(nullptr); }

}  // namespace

TrainingResult run_training(const Scene& scene, const MotionPrior& prior, const ActionSet& actions,
                            const TrainConfig& train, const EnvConfig& env_cfg, std::uint64_t seed,
                            const TrainingHooks& hooks, const QCheckpoint* init) {
  train.validate();
  if (init) check_compatible(*init, actions, env_cfg.camera);
  Rng rng(mix_seed(seed, 0));
  QLearner<float> learner(arch_for(env_cfg.camera, actions.size()), train, rng);
  if (init) {
    if (!(init->arch == learner.net.arch())) throw Error("init checkpoint: architecture differs");
    learner.online = init->online;
    learner.target = init->online;
  }
  PrioritizedReplay replay(train.buffer, train.per_alpha, train.per_eps, train.quantized_replay);
  NavEnv env(scene, prior, actions, env_cfg);

  auto snapshot = [&] {
    QCheckpoint ck;
    ck.arch = learner.net.arch();
    ck.action_checksum = actions.checksum();
    ck.step = learner.step;
    ck.sensor_flags = sensor_flags(env_cfg.camera);
    ck.online = learner.online;
    ck.target = learner.target;
    return ck;
  };

  TrainingResult result;
  std::deque<bool> window;
  const std::uint64_t episode_base = mix_seed(seed, 1);
  while (learner.step < train.total_steps) {
    const int episode = result.episodes++;
    ObservationTensor obs = env.reset(mix_seed(episode_base, static_cast<std::uint64_t>(episode)));
    double ret = 0.0, loss_sum = 0.0, q_sum = 0.0;
    int updates = 0;
    double eps = 0.0;
    while (!env.done() && learner.step < train.total_steps) {
      eps = epsilon(result.env_steps, train);
      const int a = select_action(learner.net, learner.online, obs, eps, rng);
      NavEnv::StepResult r = env.step(a);
      // Timeouts bootstrap: only reaching the goal is terminal.
      replay.push_max({std::move(obs), a, static_cast<float>(r.reward), r.obs, r.info.reached});
      obs = std::move(r.obs);
      ret += r.reward;
      ++result.env_steps;
      if (replay.size() < static_cast<std::size_t>(train.batch)) continue;
      TrainMetrics m;
      try {
        m = train_step(learner, replay, rng);
      } catch (const NonFiniteLoss& e) {
        if (hooks.on_failure) hooks.on_failure(e.dump());
        throw;
      }
      loss_sum += m.loss;
      q_sum += m.mean_q;
      ++updates;
      if (hooks.checkpoint && learner.step % train.checkpoint_every == 0) hooks.checkpoint(snapshot());
    }
    const bool reached = !env.trace().actions.empty() && env.trace().actions.back().reached;
    window.push_back(reached);
    if (window.size() > 100) window.pop_front();
    if (hooks.log) {
      ordered_json j;
      j["episode"] = episode;
      j["step"] = learner.step;
      j["env_steps"] = result.env_steps;
      j["loss"] = nullable(updates ? loss_sum / updates : 0.0, updates > 0);
      j["mean_q"] = nullable(updates ? q_sum / updates : 0.0, updates > 0);
      j["eps"] = eps;
      j["episode_return"] = ret;
      j["reached"] = reached;
      j["sr_window"] = 100.0 * static_cast<double>(std::count(window.begin(), window.end(), true)) /
                       static_cast<double>(window.size());
      hooks.log(j.dump());
    }
  }
  result.checkpoint = snapshot();
  return result;
}

int worker_count(int requested) {
  int n = std::max(1, requested);
  if (const char* env = std::getenv("EGO_NAV_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

std::vector<EpisodeTrace> run_episodes(const Scene& scene, const MotionPrior& prior,
                                       const ActionSet& actions, const EnvConfig& env,
                                       const std::function<Policy()>& make_policy,
                                       const RolloutOptions& opt) {
  if (opt.n_episodes < 0) throw Error("rollout: negative episode count");
  std::vector<EpisodeTrace> traces(static_cast<std::size_t>(opt.n_episodes));
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto work = [&] {
    try {
      const Policy policy = make_policy();
      NavEnv nav(scene, prior, actions, env);
      for (int i = next++; i < opt.n_episodes; i = next++) {
        const std::uint64_t es = mix_seed(opt.seed, static_cast<std::uint64_t>(i));
        nav.reset(es);
        Rng prng(mix_seed(es, 2));
        while (!nav.done()) nav.step(policy(nav.observation(), prng));
        EpisodeTrace t = nav.trace();
        t.episode = i;
        traces[static_cast<std::size_t>(i)] = std::move(t);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mu);
      if (!err) err = std::current_exception();
      next = opt.n_episodes;
    }
  };
  const int workers = std::min(worker_count(opt.jobs), std::max(1, opt.n_episodes));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
  return traces;
}

std::vector<EpisodeTrace> rollout_policy(const QCheckpoint& ck, const Scene& scene,
                                         const MotionPrior& prior, const ActionSet& actions,
                                         const EnvConfig& env, const RolloutOptions& opt) {
  check_compatible(ck, actions, env.camera);
  const QNetwork net(ck.arch);
  auto make = [&]() -> Policy {
    return [&](const ObservationTensor& obs, Rng& rng) {
      return select_action(net, ck.online, obs, 0.0, rng);
    };
  };
  return run_episodes(scene, prior, actions, env, make, opt);
}

std::vector<EpisodeTrace> rollout_random(const Scene& scene, const MotionPrior& prior,
                                         const ActionSet& actions, const EnvConfig& env,
                                         const RolloutOptions& opt) {
  const int n = actions.size();
  auto make = [n]() -> Policy {
    return [n](const ObservationTensor&, Rng& rng) {
      return std::uniform_int_distribution<int>(0, n - 1)(rng);
    };
  };
  return run_episodes(scene, prior, actions, env, make, opt);
}

namespace {

ordered_json pose_json(const Pose& p) {
  const auto row = p.to_row();
  return std::vector<double>(row.data(), row.data() + Pose::kDim);
}

Pose pose_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != Pose::kDim) throw Error("trace: pose row has wrong length");
  return Pose::from_row(Eigen::Map<const Eigen::Matrix<double, Pose::kDim, 1>>(v.data()));
}

}  // namespace

void write_traces(std::ostream& os, const std::vector<EpisodeTrace>& traces, std::uint64_t seed,
                  std::uint64_t config_hash) {
  ordered_json h;
  h["type"] = "header";
  h["scene"] = traces.empty() ? std::string() : traces.front().scene_id;
  h["seed"] = seed;
  h["config_hash"] = hex64(config_hash);
  h["n_episodes"] = traces.size();
  os << h.dump() << "\n";
  for (const EpisodeTrace& t : traces) {
    ordered_json e;
    e["type"] = "episode";
    e["episode"] = t.episode;
    e["scene"] = t.scene_id;
    e["seed"] = t.seed;
    e["goal"] = {{"center", {t.goal.center.x(), t.goal.center.y(), t.goal.center.z()}},
                 {"radius", t.goal.radius}};
    e["start"] = pose_json(t.start);
    e["outcome"] = t.outcome == Outcome::kReached ? "reached" : "timeout";
    e["n_actions"] = t.actions.size();
    e["return"] = t.total_reward();
    os << e.dump() << "\n";
    for (std::size_t k = 0; k < t.actions.size(); ++k) {
      const ActionRecord& a = t.actions[k];
      ordered_json j;
      j["type"] = "action";
      j["index"] = k;
      j["action"] = a.action;
      j["reward"] = a.reward;
      j["collided"] = a.collided;
      j["goal_visible"] = a.goal_visible;
      j["reached"] = a.reached;
      j["displacement"] = a.displacement;
      j["obs_checksum"] = hex64(a.obs_checksum);
      auto poses = ordered_json::array();
      for (const Pose& p : a.poses) poses.push_back(pose_json(p));
      j["poses"] = std::move(poses);
      os << j.dump() << "\n";
    }
  }
}

std::vector<EpisodeTrace> read_traces(std::istream& is) {
  std::vector<EpisodeTrace> out;
  std::string line;
  bool header = false;
  try {
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        header = true;
      } else if (type == "episode") {
        EpisodeTrace t;
        t.episode = j.at("episode").get<int>();
        t.scene_id = j.at("scene").get<std::string>();
        t.seed = j.at("seed").get<std::uint64_t>();
        const auto c = j.at("goal").at("center").get<std::vector<double>>();
        if (c.size() != 3) throw Error("trace: goal center must have 3 entries");
        t.goal.center = {c[0], c[1], c[2]};
        t.goal.radius = j.at("goal").at("radius").get<double>();
        t.start = pose_from(j.at("start"));
        t.outcome = j.at("outcome").get<std::string>() == "reached" ? Outcome::kReached : Outcome::kTimeout;
        out.push_back(std::move(t));
      } else if (type == "action") {
        if (out.empty()) throw Error("trace: action record before any episode");
        ActionRecord a;
        a.action = j.at("action").get<int>();
        a.reward = j.at("reward").get<double>();
        a.collided = j.at("collided").get<bool>();
        a.goal_visible = j.at("goal_visible").get<bool>();
        a.reached = j.at("reached").get<bool>();
        a.displacement = j.at("displacement").get<double>();
        a.obs_checksum = std::stoull(j.at("obs_checksum").get<std::string>(), nullptr, 16);
        for (const auto& p : j.at("poses")) a.poses.push_back(pose_from(p));
        out.back().actions.push_back(std::move(a));
      } else {
        throw Error("trace: unknown record type '" + type + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("trace: malformed line: ") + e.what());
  }
  if (!header) throw Error("trace: missing header line");
  return out;
}

}  // namespace egonav
