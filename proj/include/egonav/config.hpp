#pragma once

// Unified run configuration shared by every subcommand. Resolution order:
// built-in defaults, then command-line flags, then the config file.

#include "egonav/environment.hpp"
#include "egonav/learned_prior.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace egonav {

enum class SceneSource { kGenerate, kCorridor, kFile };
enum class PriorKind { kKinematic, kVae };

struct RunConfig {
  std::uint64_t seed = 1;

  struct SceneSection {
    SceneSource source = SceneSource::kGenerate;
    std::string path;  // used when source is kFile
    SceneParams params;
    double corridor_length = 8.0;
    double corridor_width = 2.4;
  } scene;

  struct DatasetSection {
    std::string path;
    int n_sequences = 60;
    double min_seconds = 5.0;
    double max_seconds = 20.0;
  } dataset;

  struct PriorSection {
    PriorKind kind = PriorKind::kKinematic;
    std::string path;  // VAE checkpoint
    bool sample_latent = true;
    double temperature = 0.5;  // latent noise scale at rollout
    VaeConfig vae;
  } prior;

  struct ActionsSection {
    std::string path;
    int n = 16;
  } actions;

  TrainConfig train;
  EnvConfig env;

  struct EvalSection {
    int episodes = 500;
    int jobs = 1;
    std::string checkpoint;
    std::string init_checkpoint;  // warm start for train
    double speed_floor = 0.1;
    int angle_bins = 36;
  } eval;

  /// Canonical JSON (ordered keys, two-space indent, trailing newline).
  std::string to_json() const;
  std::uint64_t hash() const { return fnv1a(to_json()); }
  void validate() const;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Overwrites the fields present in `text`; unknown keys and wrong types are
/// errors naming the offending key.
RunConfig overlay_json(RunConfig base, const std::string& text);
RunConfig overlay_file(RunConfig base, const std::filesystem::path& path);

/// Writes resolved_config.json and resolved_config.hash into `dir`.
void write_resolved(const RunConfig& cfg, const std::filesystem::path& dir);

Scene make_scene(const RunConfig& cfg);
std::unique_ptr<MotionPrior> make_prior(const RunConfig& cfg);

std::string to_string(SceneSource s);
std::string to_string(PriorKind k);
std::string to_string(SamplingProfile p);
std::string to_string(nn::OptimizerKind k);

/// Raises glibc's mmap and trim thresholds so the large per-step training
/// buffers are recycled instead of being returned to the kernel. No-op on
/// other allocators.
void tune_allocator();

}  // namespace egonav
