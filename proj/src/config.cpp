#include "egonav/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace egonav {

using ordered_json = nlohmann::ordered_json;

std::string to_string(SceneSource s) {
  switch (s) {
    case SceneSource::kGenerate: return "generate";
    case SceneSource::kCorridor: return "corridor";
    case SceneSource::kFile: return "file";
  }
  return "?";
}

std::string to_string(PriorKind k) { return k == PriorKind::kVae ? "vae" : "kinematic"; }

std::string to_string(SamplingProfile p) {
  return p == SamplingProfile::kCorridor ? "corridor" : "uniform";
}

std::string to_string(nn::OptimizerKind k) {
  return k == nn::OptimizerKind::kAdam ? "adam" : "sgd_momentum";
}

namespace {

template <typename E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<E> values) {
  std::string allowed;
  for (E e : values) {
    if (to_string(e) == v) return e;
    allowed += (allowed.empty() ? "" : ", ") + to_string(e);
  }
  throw ConfigError(key + ": unknown value '" + v + "' (expected one of " + allowed + ")");
}

SceneSource from_string(const std::string& key, const std::string& v, SceneSource*) {
  return parse_enum(key, v, {SceneSource::kGenerate, SceneSource::kCorridor, SceneSource::kFile});
}
PriorKind from_string(const std::string& key, const std::string& v, PriorKind*) {
  return parse_enum(key, v, {PriorKind::kKinematic, PriorKind::kVae});
}
SamplingProfile from_string(const std::string& key, const std::string& v, SamplingProfile*) {
  return parse_enum(key, v, {SamplingProfile::kUniform, SamplingProfile::kCorridor});
}
nn::OptimizerKind from_string(const std::string& key, const std::string& v, nn::OptimizerKind*) {
  return parse_enum(key, v, {nn::OptimizerKind::kSgdMomentum, nn::OptimizerKind::kAdam});
}

class Writer {
 public:
  ordered_json root = ordered_json::object();

  template <typename F>
  void section(const char* name, F&& body) {
    ordered_json* saved = cur_;
    ordered_json& obj = (*cur_)[name] = ordered_json::object();
    cur_ = &obj;
    body();
    cur_ = saved;
  }
  template <typename T>
  void field(const char* name, const T& v) {
    if constexpr (std::is_enum_v<T>) {
      (*cur_)[name] = to_string(v);
    } else {
      (*cur_)[name] = v;
    }
  }
  void degrees(const char* name, const double& rad) { (*cur_)[name] = rad2deg(rad); }

 private:
  ordered_json* cur_ = &root;
};

class Reader {
 public:
  explicit Reader(const nlohmann::json& j) : cur_(&j) {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
  }

  template <typename F>
  void section(const char* name, F&& body) {
    seen_.back().insert(name);
    if (!cur_->contains(name)) return;
    const nlohmann::json& obj = cur_->at(name);
    if (!obj.is_object()) throw ConfigError(path(name) + ": expected an object");
    const nlohmann::json* saved = cur_;
    cur_ = &obj;
    prefix_.push_back(name);
    seen_.emplace_back();
    body();
    check_unknown();
    seen_.pop_back();
    prefix_.pop_back();
    cur_ = saved;
  }

  template <typename T>
  void field(const char* name, T& v) {
    seen_.back().insert(name);
    if (!cur_->contains(name)) return;
    const nlohmann::json& j = cur_->at(name);
    try {
      if constexpr (std::is_enum_v<T>) {
        v = from_string(path(name), j.get<std::string>(), static_cast<T*>(nullptr));
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!j.is_boolean()) throw ConfigError(path(name) + ": expected a boolean");
        v = j.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!j.is_number_integer()) throw ConfigError(path(name) + ": expected an integer");
        v = j.get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!j.is_number()) throw ConfigError(path(name) + ": expected a number");
        v = j.get<T>();
      } else {
        if (!j.is_string()) throw ConfigError(path(name) + ": expected a string");
        v = j.get<T>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path(name) + ": " + e.what());
    }
  }

  void degrees(const char* name, double& rad) {
    double deg = rad2deg(rad);
    field(name, deg);
    rad = deg2rad(deg);
  }

  void check_unknown() const {
    for (const auto& [k, _] : cur_->items()) {
      if (!seen_.back().count(k)) throw ConfigError(path(k) + ": unknown key");
    }
  }

 private:
  std::string path(const std::string& name) const {
    std::string p;
    for (const auto& s : prefix_) p += s + ".";
    return p + name;
  }

  const nlohmann::json* cur_;
  std::vector<std::string> prefix_;
  std::vector<std::set<std::string>> seen_{1};
};

/// Shared field list for reading and writing.
template <typename Cfg, typename V>
void visit_fields(Cfg& c, V& v) {
  v.field("seed", c.seed);
  v.section("scene", [&] {
    v.field("source", c.scene.source);
    v.field("path", c.scene.path);
    v.field("width", c.scene.params.width);
    v.field("depth", c.scene.params.depth);
    v.field("n_obstacles", c.scene.params.n_obstacles);
    v.field("min_box_size", c.scene.params.min_box_size);
    v.field("max_box_size", c.scene.params.max_box_size);
    v.field("min_box_height", c.scene.params.min_box_height);
    v.field("max_box_height", c.scene.params.max_box_height);
    v.field("clutter_spacing", c.scene.params.clutter_spacing);
    v.field("max_retries", c.scene.params.max_retries);
    v.field("corridor_length", c.scene.corridor_length);
    v.field("corridor_width", c.scene.corridor_width);
  });
  v.section("dataset", [&] {
    v.field("path", c.dataset.path);
    v.field("n_sequences", c.dataset.n_sequences);
    v.field("min_seconds", c.dataset.min_seconds);
    v.field("max_seconds", c.dataset.max_seconds);
  });
  v.section("prior", [&] {
    v.field("kind", c.prior.kind);
    v.field("path", c.prior.path);
    v.field("sample_latent", c.prior.sample_latent);
    v.field("temperature", c.prior.temperature);
    v.field("latent_dim", c.prior.vae.latent_dim);
    v.field("hidden", c.prior.vae.hidden);
    v.field("beta", c.prior.vae.beta);
    v.field("optimizer", c.prior.vae.optimizer.kind);
    v.field("lr", c.prior.vae.optimizer.lr);
    v.field("momentum", c.prior.vae.optimizer.momentum);
    v.field("epochs", c.prior.vae.epochs);
    v.field("batch", c.prior.vae.batch);
  });
  v.section("actions", [&] {
    v.field("path", c.actions.path);
    v.field("n", c.actions.n);
  });
  v.section("train", [&] {
    v.field("lr", c.train.lr);
    v.field("gamma", c.train.gamma);
    v.field("eps_start", c.train.eps_start);
    v.field("eps_end", c.train.eps_end);
    v.field("eps_decay_steps", c.train.eps_decay_steps);
    v.field("batch", c.train.batch);
    v.field("buffer", c.train.buffer);
    v.field("target_update", c.train.target_update);
    v.field("double_q", c.train.double_q);
    v.field("total_steps", c.train.total_steps);
    v.field("per_alpha", c.train.per_alpha);
    v.field("per_beta0", c.train.per_beta0);
    v.field("per_eps", c.train.per_eps);
    v.field("huber_delta", c.train.huber_delta);
    v.field("optimizer", c.train.optimizer);
    v.field("momentum", c.train.momentum);
    v.field("quantized_replay", c.train.quantized_replay);
    v.field("checkpoint_every", c.train.checkpoint_every);
  });
  v.section("reward", [&] {
    v.field("r_reach", c.env.reward.r_reach);
    v.field("r_time", c.env.reward.r_time);
    v.field("r_collision", c.env.reward.r_collision);
    v.field("r_still", c.env.reward.r_still);
    v.field("move_threshold", c.env.reward.move_threshold);
  });
  v.section("episode", [&] {
    v.field("horizon_s", c.env.episode.horizon_s);
    v.field("chunk_s", c.env.episode.chunk_s);
    v.field("fps", c.env.episode.fps);
    v.field("reach_dist", c.env.episode.reach_dist);
  });
  v.section("camera", [&] {
    v.field("width", c.env.camera.width);
    v.field("height", c.env.camera.height);
    v.degrees("fov_deg", c.env.camera.horizontal_fov);
    v.field("max_depth", c.env.camera.max_depth);
    v.field("forward_offset", c.env.camera.forward_offset);
    v.field("reversed", c.env.camera.reversed);
    v.field("goal_vector", c.env.camera.goal_vector);
  });
  v.section("sampling", [&] {
    v.field("profile", c.env.profile);
    v.field("body_radius", c.env.sampling.body_radius);
    v.field("goal_radius", c.env.sampling.goal_radius);
    v.field("goal_height", c.env.sampling.goal_height);
    v.field("min_separation", c.env.sampling.min_separation);
    v.field("head_height", c.env.sampling.head_height);
    v.field("max_attempts", c.env.sampling.max_attempts);
  });
  v.section("eval", [&] {
    v.field("episodes", c.eval.episodes);
    v.field("jobs", c.eval.jobs);
    v.field("checkpoint", c.eval.checkpoint);
    v.field("init_checkpoint", c.eval.init_checkpoint);
    v.field("speed_floor", c.eval.speed_floor);
    v.field("angle_bins", c.eval.angle_bins);
  });
}

constexpr int kConfigVersion = 1;

}  // namespace

std::string RunConfig::to_json() const {
  Writer w;
  w.root["version"] = kConfigVersion;
  visit_fields(*this, w);
  return w.root.dump(2) + "\n";
}

void RunConfig::validate() const {
  train.validate();
  env.validate();
  if (actions.n < 2) throw ConfigError("actions.n: need at least 2 actions");
  if (dataset.n_sequences <= 0) throw ConfigError("dataset.n_sequences: must be positive");
  if (!(dataset.min_seconds > 0) || dataset.max_seconds < dataset.min_seconds) {
    throw ConfigError("dataset: need 0 < min_seconds <= max_seconds");
  }
  if (eval.episodes < 0) throw ConfigError("eval.episodes: must be >= 0");
  if (eval.jobs <= 0) throw ConfigError("eval.jobs: must be positive");
  if (prior.vae.latent_dim <= 0 || prior.vae.hidden <= 0 || prior.vae.epochs <= 0 || prior.vae.batch <= 0) {
    throw ConfigError("prior: latent_dim, hidden, epochs and batch must be positive");
  }
  if (!(prior.temperature >= 0.0)) throw ConfigError("prior.temperature: must be >= 0");
  if (scene.source == SceneSource::kFile && scene.path.empty()) {
    throw ConfigError("scene.path: required when scene.source is 'file'");
  }
  if (prior.kind == PriorKind::kVae && prior.path.empty()) {
    throw ConfigError("prior.path: required when prior.kind is 'vae'");
  }
}

RunConfig overlay_json(RunConfig base, const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  Reader r(j);
  int version = kConfigVersion;
  r.field("version", version);
  if (version != kConfigVersion) throw ConfigError("version: unsupported config version");
  visit_fields(base, r);
  r.check_unknown();
  base.validate();
  return base;
}

RunConfig overlay_file(RunConfig base, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return overlay_json(std::move(base), ss.str());
}

void write_resolved(const RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string text = cfg.to_json();
  std::ofstream(dir / "resolved_config.json", std::ios::binary) << text;
  std::ofstream(dir / "resolved_config.hash", std::ios::binary) << hex64(fnv1a(text)) << "\n";
}

Scene make_scene(const RunConfig& cfg) {
  switch (cfg.scene.source) {
    case SceneSource::kGenerate: return generate_scene(cfg.seed, cfg.scene.params);
    case SceneSource::kCorridor: return corridor_scene(cfg.scene.corridor_length, cfg.scene.corridor_width);
    case SceneSource::kFile: return load_scene(cfg.scene.path);
  }
  throw ConfigError("scene.source: unhandled value");
}

std::unique_ptr<MotionPrior> make_prior(const RunConfig& cfg) {
  if (cfg.prior.kind == PriorKind::kVae) {
    return std::make_unique<VaePrior>(load_vae(cfg.prior.path), cfg.prior.sample_latent,
                                      cfg.prior.temperature);
  }
  return std::make_unique<KinematicPrior>();
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace egonav
