#pragma once

// Value network, prioritized replay and the double-DQN update.

#include "egonav/ego_sensor.hpp"
#include "egonav/nn.hpp"

#include <filesystem>
#include <vector>

namespace egonav {

struct QArch {
  int channels = 5;
  int height = 64;
  int width = 64;
  std::vector<int> conv_channels{16, 32};
  int kernel = 3;
  int stride = 2;
  int pad = 1;
  std::vector<int> hidden{256};
  int n_actions = 16;

  /// Linear map from a one-hot state to action values (a Q table).
  static QArch tabular(int n_states, int n_actions);
  Eigen::Index input_size() const {
    return static_cast<Eigen::Index>(channels) * height * width;
  }
  bool operator==(const QArch&) const = default;
};

class QNetwork {
 public:
  explicit QNetwork(QArch arch);

  const QArch& arch() const { return arch_; }
  const nn::ParamLayout& layout() const { return layout_; }
  Eigen::Index n_params() const { return layout_.size(); }
  int n_actions() const { return arch_.n_actions; }
  /// Block ids of the final layer (weight, bias).
  std::pair<int, int> output_layer() const;

  template <typename Scalar>
  struct Cache {
    std::vector<nn::ConvCache<Scalar>> conv;
    std::vector<MatrixX<Scalar>> mlp;
  };

  template <typename Scalar>
  VectorX<Scalar> init(Rng& rng) const;

  /// x: input_size x B; returns n_actions x B.
  template <typename Scalar>
  MatrixX<Scalar> forward(const VectorX<Scalar>& theta, const MatrixX<Scalar>& x,
                          Cache<Scalar>* cache = nullptr) const;

  /// Accumulates d loss / d theta given d loss / d outputs.
  template <typename Scalar>
  void backward(const VectorX<Scalar>& theta, const Cache<Scalar>& cache,
                const MatrixX<Scalar>& dq, VectorX<Scalar>& grad) const;

 private:
  QArch arch_;
  nn::ParamLayout layout_;
  std::vector<nn::ConvSpec> convs_;
  nn::Mlp head_;
};

struct TrainConfig {
  double lr = 1e-3;
  double gamma = 0.99;
  double eps_start = 1.0;
  double eps_end = 0.1;
  std::int64_t eps_decay_steps = 2000;
  int batch = 64;
  std::size_t buffer = 20000;
  std::int64_t target_update = 500;
  bool double_q = true;
  std::int64_t total_steps = 30000;
  double per_alpha = 0.6;
  double per_beta0 = 0.4;
  double per_eps = 1e-3;
  double huber_delta = 1.0;
  nn::OptimizerKind optimizer = nn::OptimizerKind::kAdam;
  double momentum = 0.9;
  bool quantized_replay = false;
  std::int64_t checkpoint_every = 1000;

  void validate() const;
  nn::OptimizerConfig optimizer_config() const;
};

/// Linear decay from eps_start at step 0 to eps_end at eps_decay_steps.
double epsilon(std::int64_t step, const TrainConfig& cfg);

/// Importance-sampling exponent annealed from per_beta0 to 1 over total_steps.
double per_beta(std::int64_t step, const TrainConfig& cfg);

/// Argmax with ties to the lowest index.
int greedy_action(const Eigen::Ref<const Eigen::VectorXd>& values);

template <typename Scalar>
MatrixX<Scalar> observation_batch(const std::vector<const ObservationTensor*>& obs);

/// Epsilon-greedy: one uniform draw decides exploration, a second picks the
/// random action.
template <typename Scalar>
int select_action(const QNetwork& net, const VectorX<Scalar>& theta,
                  const ObservationTensor& obs, double eps, Rng& rng);

class SumTree {
 public:
  explicit SumTree(std::size_t min_capacity);

  std::size_t capacity() const { return capacity_; }
  void set(std::size_t leaf, double value);
  double get(std::size_t leaf) const { return nodes_[capacity_ + leaf]; }
  double total() const { return nodes_[1]; }
  /// Leaf whose prefix-sum interval contains u, for u in [0, total).
  std::size_t find(double u) const;
  /// Every internal node equals the sum of its children within rel_tol.
  bool consistent(double rel_tol = 1e-6) const;

 private:
  std::size_t capacity_;
  std::vector<double> nodes_;  // 1-based heap layout, leaves at [capacity, 2*capacity)
};

struct Transition {
  ObservationTensor obs;
  int action = 0;
  float reward = 0.0f;
  ObservationTensor next_obs;
  bool done = false;
};

class PrioritizedReplay {
 public:
  PrioritizedReplay(std::size_t capacity, double alpha, double eps_p, bool quantized = false);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return size_ == 0; }
  double max_priority() const { return max_priority_; }
  double priority(std::size_t i) const { return priorities_[i]; }
  const SumTree& tree() const { return tree_; }
  double alpha() const { return alpha_; }

  /// Stores at the ring cursor with raw priority p (leaf holds p^alpha).
  std::size_t push(const Transition& t, double priority);
  std::size_t push_max(const Transition& t) { return push(t, max_priority_); }

  struct Sample {
    std::vector<std::size_t> indices;
    std::vector<double> probabilities;
    std::vector<double> is_weights;  // (n P(i))^-beta / max over batch
  };
  /// Stratified proportional sampling.
  Sample sample(std::size_t batch, double beta, Rng& rng) const;

  /// p_i = |td_i| + eps_p.
  void update(const std::vector<std::size_t>& indices, const std::vector<double>& td_errors);

  Transition get(std::size_t i) const;
  int action(std::size_t i) const { return slots_[i].action; }
  float reward(std::size_t i) const { return slots_[i].reward; }
  bool done(std::size_t i) const { return slots_[i].done; }
  template <typename Scalar>
  void gather(const std::vector<std::size_t>& indices, MatrixX<Scalar>& obs,
              MatrixX<Scalar>& next_obs) const;

 private:
  struct StoredObs {
    std::vector<float> f;
    std::vector<std::uint8_t> q;
    int channels = 0, height = 0, width = 0;
    std::optional<Eigen::Vector3f> goal;
  };
  struct Slot {
    StoredObs obs, next_obs;
    int action = 0;
    float reward = 0.0f;
    bool done = false;
  };

  StoredObs store(const ObservationTensor& o) const;
  ObservationTensor restore(const StoredObs& s) const;
  template <typename Scalar>
  void write_column(const StoredObs& s, Scalar* dst) const;

  std::size_t capacity_;
  double alpha_;
  double eps_p_;
  bool quantized_;
  SumTree tree_;
  std::vector<Slot> slots_;
  std::vector<double> priorities_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  double max_priority_ = 1.0;
};

template <typename Scalar>
struct QBatch {
  MatrixX<Scalar> obs;
  MatrixX<Scalar> next_obs;
  std::vector<int> actions;
  VectorX<Scalar> rewards;
  std::vector<bool> dones;
  VectorX<Scalar> is_weights;
};

/// done: r. Otherwise r + gamma * Q_target(s', a*) with a* the online argmax
/// (double_q) or the target argmax.
template <typename Scalar>
VectorX<Scalar> td_targets(const QNetwork& net, const VectorX<Scalar>& online,
                           const VectorX<Scalar>& target, const QBatch<Scalar>& batch,
                           double gamma, bool double_q);

template <typename Scalar>
Scalar huber(Scalar x, Scalar delta) {
  const Scalar a = std::abs(x);
  return a <= delta ? Scalar(0.5) * x * x : delta * (a - Scalar(0.5) * delta);
}

template <typename Scalar>
Scalar huber_grad(Scalar x, Scalar delta) {
  return std::clamp(x, -delta, delta);
}

template <typename Scalar>
struct QLoss {
  Scalar loss = 0;
  VectorX<Scalar> td;     // Q(s,a) - target
  VectorX<Scalar> grad;   // d loss / d theta
  Scalar mean_q = 0;
};

/// Importance-weighted mean Huber loss against fixed targets, with gradient.
template <typename Scalar>
QLoss<Scalar> q_loss(const QNetwork& net, const VectorX<Scalar>& theta,
                     const QBatch<Scalar>& batch, const VectorX<Scalar>& targets,
                     double huber_delta);

template <typename Scalar>
struct QLearner {
  QNetwork net;
  TrainConfig cfg;
  VectorX<Scalar> online;
  VectorX<Scalar> target;
  nn::Optimizer<Scalar> opt;
  std::int64_t step = 0;  // gradient steps taken

  QLearner(QArch arch, TrainConfig config, Rng& rng);
};

struct TrainMetrics {
  double loss = 0.0;
  double mean_q = 0.0;
  double mean_td = 0.0;
};

/// One update on a prepared batch; returns metrics and per-item TD errors.
template <typename Scalar>
TrainMetrics train_on_batch(QLearner<Scalar>& learner, const QBatch<Scalar>& batch,
                            std::vector<double>* td_errors = nullptr);

/// Samples from replay, updates, refreshes priorities, syncs the target net
/// every target_update steps. Throws on a non-finite loss.
template <typename Scalar>
TrainMetrics train_step(QLearner<Scalar>& learner, PrioritizedReplay& replay, Rng& rng);

struct QCheckpoint {
  QArch arch;
  std::uint64_t action_checksum = 0;
  std::int64_t step = 0;
  std::uint32_t sensor_flags = 0;  // bit 0 reversed, bit 1 goal vector
  Eigen::VectorXf online;
  Eigen::VectorXf target;
};

/// "EGQN", u32 version, architecture fields, u32 n_actions, u64 action-set
/// checksum, i64 step, u32 sensor flags, u64 n_params, then f32 online and
/// f32 target parameters.
void save_q_checkpoint(const QCheckpoint& ck, const std::filesystem::path& path);
QCheckpoint load_q_checkpoint(const std::filesystem::path& path);

}  // namespace egonav

#include "egonav/qlearn_impl.hpp"
