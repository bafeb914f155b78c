// Command-line front end: scene generation, data synthesis, prior and policy
// training, evaluation, trace recording and analysis.

#include "egonav/config.hpp"
#include "egonav/evaluation.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace egonav;

namespace {

struct Common {
  std::string config;
  std::string out;
};

void add_common(CLI::App* sub, RunConfig& cfg, Common& c, const std::string& default_out) {
  c.out = default_out;
  sub->add_option("--seed", cfg.seed, "Base random seed");
  sub->add_option("--config", c.config, "JSON config file; its values override flags")
      ->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "Output directory");
}

RunConfig resolve(RunConfig cfg, const Common& c) {
  if (!c.config.empty()) cfg = overlay_file(std::move(cfg), c.config);
  cfg.validate();
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot open " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void progress(const std::string& msg) { std::cerr << msg << std::endl; }

std::string require(const std::string& value, const std::string& what) {
  if (value.empty()) throw Error(what + " is required (flag or config file)");
  return value;
}

ActionSet load_actions(const RunConfig& cfg) {
  return load_action_set(require(cfg.actions.path, "action set path (--actions)"));
}

/// Evaluation follows the sensor layout the checkpoint was trained with.
EnvConfig env_for(const RunConfig& cfg, const QCheckpoint& ck) {
  EnvConfig env = cfg.env;
  env.camera.width = ck.arch.width;
  env.camera.height = ck.arch.height;
  env.camera.reversed = (ck.sensor_flags & 1u) != 0;
  env.camera.goal_vector = (ck.sensor_flags & 2u) != 0;
  return env;
}

std::pair<std::string, std::string> split_label(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq != std::string::npos) return {arg.substr(0, eq), arg.substr(eq + 1)};
  const fs::path p(arg);
  const std::string parent = p.parent_path().filename().string();
  return {parent.empty() ? p.stem().string() : parent, arg};
}

void write_matrix_csv(const fs::path& path, const CrossSceneResult& r, const Eigen::MatrixXd& m) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << std::fixed << std::setprecision(6) << "train\\test";
  for (const auto& s : r.test_scenes) os << ',' << s;
  os << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    os << r.train_scenes[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << ',' << m(i, j);
    os << '\n';
  }
}

template <class E>
CLI::Option* add_enum(CLI::App* sub, const std::string& flag, E& value, const std::string& help,
                      const std::map<std::string, E>& names) {
  std::string choices;
  for (const auto& [k, v] : names) choices += (choices.empty() ? "" : "|") + k;
  return sub->add_option(flag, value, help)
      ->transform(CLI::CheckedTransformer(names).description(""))
      ->type_name("{" + choices + "}");
}

void add_scene_flags(CLI::App* sub, RunConfig& cfg, std::string& scene_file) {
  sub->add_option("--scene", scene_file, "Scene JSON file (sets scene source to 'file')");
  add_enum(sub, "--scene-source", cfg.scene.source, "Scene source when no file is given",
           std::map<std::string, SceneSource>{
               {"generate", SceneSource::kGenerate}, {"corridor", SceneSource::kCorridor},
               {"file", SceneSource::kFile}});
  add_enum(sub, "--profile", cfg.env.profile, "Start/goal sampling profile",
           std::map<std::string, SamplingProfile>{
               {"uniform", SamplingProfile::kUniform}, {"corridor", SamplingProfile::kCorridor}});
}

void add_prior_flags(CLI::App* sub, RunConfig& cfg) {
  add_enum(sub, "--prior", cfg.prior.kind, "Motion prior",
           std::map<std::string, PriorKind>{
               {"kinematic", PriorKind::kKinematic}, {"vae", PriorKind::kVae}});
  sub->add_option("--prior-path", cfg.prior.path, "VAE prior checkpoint (with --prior vae)");
}

void apply_scene_file(RunConfig& cfg, const std::string& scene_file) {
  if (!scene_file.empty()) {
    cfg.scene.source = SceneSource::kFile;
    cfg.scene.path = scene_file;
  }
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Egocentric-vision navigating avatar: data, training and evaluation"};
  app.name("egonav");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  RunConfig cfg;
  Common common;
  std::string scene_file;
  bool random_policy = false;
  bool previews = false;
  std::vector<std::string> checkpoints, scenes, traces_in;

  // scene-gen
  auto* scene_gen = app.add_subcommand("scene-gen", "Generate a box scene and write it as JSON");
  add_common(scene_gen, cfg, common, "runs/scene");
  add_enum(scene_gen, "--source", cfg.scene.source, "Procedural room or straight corridor",
           std::map<std::string, SceneSource>{
               {"generate", SceneSource::kGenerate}, {"corridor", SceneSource::kCorridor}});
  scene_gen->add_option("--n-obstacles", cfg.scene.params.n_obstacles, "Obstacle boxes");
  scene_gen->add_option("--width", cfg.scene.params.width, "Room extent along x (m)");
  scene_gen->add_option("--depth", cfg.scene.params.depth, "Room extent along y (m)");
  scene_gen->add_option("--spacing", cfg.scene.params.clutter_spacing, "Minimum gap between obstacles (m)");

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Synthesize walking trajectories");
  add_common(synth, cfg, common, "runs/data");
  synth->add_option("--sequences", cfg.dataset.n_sequences, "Number of sequences");
  synth->add_option("--min-seconds", cfg.dataset.min_seconds, "Shortest sequence (s)");
  synth->add_option("--max-seconds", cfg.dataset.max_seconds, "Longest sequence (s)");

  // prior-train
  auto* prior_train = app.add_subcommand("prior-train", "Train the VAE motion prior on a dataset");
  add_common(prior_train, cfg, common, "runs/prior");
  prior_train->add_option("--dataset", cfg.dataset.path, "Trajectory dataset (.egtd)");
  prior_train->add_option("--epochs", cfg.prior.vae.epochs, "Training epochs");
  prior_train->add_option("--latent", cfg.prior.vae.latent_dim, "Latent dimension");
  prior_train->add_option("--hidden", cfg.prior.vae.hidden, "Hidden layer width");
  prior_train->add_option("--beta", cfg.prior.vae.beta, "KL weight");
  prior_train->add_option("--lr", cfg.prior.vae.optimizer.lr, "Learning rate");

  // actions-build
  auto* actions_build = app.add_subcommand("actions-build", "Cluster head-pose deltas into an action set");
  add_common(actions_build, cfg, common, "runs/actions");
  actions_build->add_option("--dataset", cfg.dataset.path, "Trajectory dataset (.egtd)");
  actions_build->add_option("--n", cfg.actions.n, "Number of actions");

  // train
  auto* train = app.add_subcommand("train", "Train a navigation policy with Q-learning");
  add_common(train, cfg, common, "runs/train");
  add_scene_flags(train, cfg, scene_file);
  add_prior_flags(train, cfg);
  train->add_option("--actions", cfg.actions.path, "Action set (.json)");
  train->add_option("--steps", cfg.train.total_steps, "Gradient steps");
  train->add_option("--init", cfg.eval.init_checkpoint, "Warm-start checkpoint");
  train->add_flag("--reversed", cfg.env.camera.reversed, "Mount the camera facing backwards");
  train->add_flag("--goal-vector", cfg.env.camera.goal_vector, "Feed the goal offset as extra planes");
  train->add_flag("--quantized", cfg.train.quantized_replay, "Store replay images as 8-bit");

  // eval
  auto* eval = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
  add_common(eval, cfg, common, "runs/eval");
  add_scene_flags(eval, cfg, scene_file);
  add_prior_flags(eval, cfg);
  eval->add_option("--checkpoint", cfg.eval.checkpoint, "Policy checkpoint (.egqn)");
  eval->add_option("--actions", cfg.actions.path, "Action set (.json)");
  eval->add_option("--episodes", cfg.eval.episodes, "Evaluation episodes");
  eval->add_option("--jobs", cfg.eval.jobs, "Parallel workers");
  eval->add_flag("--random", random_policy, "Evaluate a uniformly random policy instead");

  // cross-eval
  auto* cross = app.add_subcommand("cross-eval", "Evaluate every checkpoint on every scene");
  add_common(cross, cfg, common, "runs/cross");
  add_prior_flags(cross, cfg);
  cross->add_option("--checkpoint", checkpoints, "Checkpoints as [label=]path")->expected(1, -1);
  cross->add_option("--scene", scenes, "Scene JSON files")->expected(1, -1);
  cross->add_option("--actions", cfg.actions.path, "Action set (.json)");
  cross->add_option("--episodes", cfg.eval.episodes, "Episodes per cell");
  cross->add_option("--jobs", cfg.eval.jobs, "Parallel workers");
  add_enum(cross, "--profile", cfg.env.profile, "Start/goal sampling profile",
           std::map<std::string, SamplingProfile>{
               {"uniform", SamplingProfile::kUniform}, {"corridor", SamplingProfile::kCorridor}});

  // record
  auto* record = app.add_subcommand("record", "Record greedy episodes with observations");
  add_common(record, cfg, common, "runs/record");
  add_scene_flags(record, cfg, scene_file);
  add_prior_flags(record, cfg);
  record->add_option("--checkpoint", cfg.eval.checkpoint, "Policy checkpoint (.egqn)");
  record->add_option("--actions", cfg.actions.path, "Action set (.json)");
  record->add_option("--episodes", cfg.eval.episodes, "Episodes to record")->default_val(1);
  record->add_flag("--previews", previews, "Also write PPM previews of every observation");

  // analyze-angles
  auto* angles = app.add_subcommand("analyze-angles", "Histogram of head-forward vs pelvis-velocity angles");
  add_common(angles, cfg, common, "runs/angles");
  angles->add_option("--traces", traces_in, "Trace files (.ndjson)")->expected(1, -1);
  angles->add_option("--speed-floor", cfg.eval.speed_floor, "Frames slower than this are skipped (m/s)");
  angles->add_option("--bins", cfg.eval.angle_bins, "Histogram bins over (-180, 180]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "\n" << app.help();
    return 1;
  }

  try {
    apply_scene_file(cfg, scene_file);
    cfg = resolve(cfg, common);
    const fs::path out(common.out);
    fs::create_directories(out);
    write_resolved(cfg, out);
    const std::uint64_t chash = cfg.hash();

    if (scene_gen->parsed()) {
      const Scene s = make_scene(cfg);
      save_scene(s, out / "scene.json");
      progress("wrote " + (out / "scene.json").string() + " (" + std::to_string(s.boxes.size()) + " boxes)");
    } else if (synth->parsed()) {
      SynthConfig sc;
      sc.min_seconds = cfg.dataset.min_seconds;
      sc.max_seconds = cfg.dataset.max_seconds;
      sc.chunk.fps = cfg.env.episode.fps;
      const TrajectoryDataset ds = synth_trajectories(cfg.seed, cfg.dataset.n_sequences, sc);
      save_dataset(ds, out / "dataset.egtd");
      progress("wrote " + std::to_string(ds.sequences.size()) + " sequences");
    } else if (prior_train->parsed()) {
      const TrajectoryDataset ds = load_dataset(require(cfg.dataset.path, "dataset path (--dataset)"));
      std::ofstream log(out / "prior_log.ndjson", std::ios::binary);
      const VaeParams p = train_vae(ds, cfg.prior.vae, cfg.env.episode.chunk_frames(), cfg.seed,
                                    [&](int epoch, double loss, double recon, double kl) {
                                      nlohmann::ordered_json j;
                                      j["epoch"] = epoch;
                                      j["loss"] = loss;
                                      j["recon"] = recon;
                                      j["kl"] = kl;
                                      log << j.dump() << "\n";
                                      progress("epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
                                    });
      save_vae(p, out / "prior.egva");
    } else if (actions_build->parsed()) {
      const std::string path = require(cfg.dataset.path, "dataset path (--dataset)");
      const TrajectoryDataset ds = load_dataset(path);
      const ActionSet a = build_action_set(ds, cfg.actions.n, cfg.env.episode.chunk_frames(), cfg.seed,
                                           "fnv:" + hex64(fnv1a(read_file(path))));
      save_action_set(a, out / "actions.json");
      progress("wrote " + std::to_string(a.size()) + " actions, checksum " + hex64(a.checksum()));
    } else if (train->parsed()) {
      const Scene s = make_scene(cfg);
      save_scene(s, out / "scene.json");
      const ActionSet a = load_actions(cfg);
      const auto prior = make_prior(cfg);
      std::optional<QCheckpoint> init;
      if (!cfg.eval.init_checkpoint.empty()) init = load_q_checkpoint(cfg.eval.init_checkpoint);
      fs::create_directories(out / "checkpoints");
      std::ofstream log(out / "train_log.ndjson", std::ios::binary);
      TrainingHooks hooks;
      int episodes = 0;
      hooks.log = [&](const std::string& line) {
        log << line << "\n";
        if (++episodes % 25 == 0) progress(line);
      };
      hooks.checkpoint = [&](const QCheckpoint& ck) {
        std::ostringstream name;
        name << "step_" << std::setw(6) << std::setfill('0') << ck.step << ".egqn";
        save_q_checkpoint(ck, out / "checkpoints" / name.str());
      };
      hooks.on_failure = [&](const std::string& dump) {
        std::ofstream(out / "last_batch.json", std::ios::binary) << dump;
      };
      const TrainingResult r = run_training(s, *prior, a, cfg.train, cfg.env, cfg.seed, hooks,
                                            init ? &*init : nullptr);
      save_q_checkpoint(r.checkpoint, out / "final.egqn");
      progress("trained " + std::to_string(r.checkpoint.step) + " steps over " +
               std::to_string(r.episodes) + " episodes");
    } else if (eval->parsed() || record->parsed()) {
      const Scene s = make_scene(cfg);
      const ActionSet a = load_actions(cfg);
      const auto prior = make_prior(cfg);
      RolloutOptions ro;
      ro.n_episodes = cfg.eval.episodes;
      ro.seed = cfg.seed;
      ro.jobs = cfg.eval.jobs;
      std::vector<EpisodeTrace> traces;
      std::string label;
      if (eval->parsed() && random_policy) {
        traces = rollout_random(s, *prior, a, cfg.env, ro);
        label = "random";
      } else {
        const QCheckpoint ck = load_q_checkpoint(require(cfg.eval.checkpoint, "checkpoint (--checkpoint)"));
        const EnvConfig env = env_for(cfg, ck);
        label = split_label(cfg.eval.checkpoint).first;
        if (record->parsed()) {
          check_compatible(ck, a, env.camera);
          const QNetwork net(ck.arch);
          NavEnv nav(s, *prior, a, env);
          fs::create_directories(out / "obs");
          for (int i = 0; i < ro.n_episodes; ++i) {
            const std::uint64_t es = mix_seed(ro.seed, static_cast<std::uint64_t>(i));
            nav.reset(es);
            Rng prng(mix_seed(es, 2));
            for (int k = 0; !nav.done(); ++k) {
              const std::string stem = "ep" + std::to_string(i) + "_step" + std::to_string(k);
              save_observation(nav.observation(), out / "obs" / (stem + ".egob"));
              if (previews) save_previews(nav.observation(), out / "obs" / stem);
              nav.step(select_action(net, ck.online, nav.observation(), 0.0, prng));
            }
            EpisodeTrace t = nav.trace();
            t.episode = i;
            traces.push_back(std::move(t));
          }
        } else {
          traces = rollout_policy(ck, s, *prior, a, env, ro);
        }
      }
      std::ofstream tos(out / "traces.ndjson", std::ios::binary);
      write_traces(tos, traces, cfg.seed, chash);
      if (eval->parsed()) {
        const MetricsReport m = compute_metrics(traces, chash);
        write_metrics_csv({{label, m}}, s.id, out / "metrics.csv");
        std::ostringstream msg;
        msg << std::fixed << std::setprecision(1) << "SR " << m.success_rate << "% CR "
            << m.collision_rate << "% FS " << m.foot_skating << "% over " << m.n_episodes << " episodes";
        progress(msg.str());
      }
    } else if (cross->parsed()) {
      const ActionSet a = load_actions(cfg);
      const auto prior = make_prior(cfg);
      std::vector<TrainedPolicy> policies;
      for (const auto& arg : checkpoints) {
        const auto [label, path] = split_label(arg);
        policies.push_back({label, load_q_checkpoint(path)});
      }
      std::vector<Scene> scene_list;
      for (const auto& p : scenes) scene_list.push_back(load_scene(p));
      const EnvConfig env = env_for(cfg, policies.front().checkpoint);
      RolloutOptions ro;
      ro.n_episodes = cfg.eval.episodes;
      ro.seed = cfg.seed;
      ro.jobs = cfg.eval.jobs;
      const CrossSceneResult r = cross_scene_eval(policies, scene_list, *prior, a, env, ro, chash);
      write_metrics_csv(r, out / "metrics.csv");
      write_matrix_csv(out / "sr_matrix.csv", r, r.success);
      write_matrix_csv(out / "cr_matrix.csv", r, r.collision);
      progress("wrote " + std::to_string(policies.size()) + "x" + std::to_string(scene_list.size()) +
               " matrices");
    } else if (angles->parsed()) {
      std::vector<EpisodeTrace> all;
      for (const auto& p : traces_in) {
        std::ifstream is(p, std::ios::binary);
        if (!is) throw Error("cannot open " + p);
        auto t = read_traces(is);
        all.insert(all.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
      }
      const AngleHistogram h =
          heading_velocity_angles(all, cfg.eval.speed_floor, cfg.eval.angle_bins, cfg.env.episode.fps);
      write_angles_csv(h, out / "angles.csv");
      nlohmann::ordered_json j;
      j["episodes"] = all.size();
      j["frames"] = h.total();
      j["excluded"] = h.excluded;
      j["median_abs_deg"] = h.angles.empty() ? nlohmann::ordered_json(nullptr)
                                             : nlohmann::ordered_json(h.median_abs());
      std::ofstream(out / "angles_summary.json", std::ios::binary) << j.dump(2) << "\n";
      progress("median |angle| " + std::to_string(h.median_abs()) + " deg over " +
               std::to_string(h.total()) + " frames");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
