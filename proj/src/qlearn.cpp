#include "egonav/qlearn.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

namespace egonav {

QArch QArch::tabular(int n_states, int n_actions) {
  QArch a;
  a.channels = 1;
  a.height = 1;
  a.width = n_states;
  a.conv_channels.clear();
  a.hidden.clear();
  a.n_actions = n_actions;
  return a;
}

QNetwork::QNetwork(QArch arch) : arch_(std::move(arch)) {
  if (arch_.channels <= 0 || arch_.height <= 0 || arch_.width <= 0 || arch_.n_actions <= 0) {
    throw Error("QNetwork: non-positive shape");
  }
  Eigen::Index c = arch_.channels, h = arch_.height, w = arch_.width;
  for (int out_c : arch_.conv_channels) {
    nn::ConvSpec s;
    s.in_c = c;
    s.in_h = h;
    s.in_w = w;
    s.out_c = out_c;
    s.kernel = arch_.kernel;
    s.stride = arch_.stride;
    s.pad = arch_.pad;
    if (s.out_h() <= 0 || s.out_w() <= 0) throw Error("QNetwork: convolution shrinks input to nothing");
    s.weight = layout_.add(s.out_c, s.patch());
    s.bias = layout_.add(s.out_c, 1);
    c = s.out_c;
    h = s.out_h();
    w = s.out_w();
    convs_.push_back(s);
  }
  std::vector<Eigen::Index> sizes{c * h * w};
  for (int n : arch_.hidden) sizes.push_back(n);
  sizes.push_back(arch_.n_actions);
  head_ = nn::Mlp(layout_, sizes, nn::Activation::kRelu, nn::Activation::kIdentity);
}

std::pair<int, int> QNetwork::output_layer() const {
  return {head_.layers().back().weight, head_.layers().back().bias};
}

void TrainConfig::validate() const {
  if (!(lr > 0) || !(gamma > 0) || gamma > 1 || !(eps_start > 0) || !(eps_end > 0) ||
      eps_decay_steps <= 0 || batch <= 0 || buffer == 0 || target_update <= 0 || total_steps <= 0 ||
      !(per_alpha > 0) || !(per_beta0 > 0) || !(per_eps > 0) || !(huber_delta > 0)) {
    throw Error("train config: all values must be positive (gamma <= 1)");
  }
  if (eps_end > eps_start || eps_start > 1.0) throw Error("train config: need eps_end <= eps_start <= 1");
  if (static_cast<std::size_t>(batch) > buffer) throw Error("train config: batch larger than buffer");
}

nn::OptimizerConfig TrainConfig::optimizer_config() const {
  nn::OptimizerConfig c;
  c.kind = optimizer;
  c.lr = lr;
  c.momentum = momentum;
  return c;
}

double epsilon(std::int64_t step, const TrainConfig& cfg) {
  if (step >= cfg.eps_decay_steps) return cfg.eps_end;
  const double f = static_cast<double>(std::max<std::int64_t>(step, 0)) / static_cast<double>(cfg.eps_decay_steps);
  return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * f;
}

double per_beta(std::int64_t step, const TrainConfig& cfg) {
  const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.total_steps));
  return cfg.per_beta0 + (1.0 - cfg.per_beta0) * f;
}

int greedy_action(const Eigen::Ref<const Eigen::VectorXd>& values) {
  if (values.size() == 0) throw Error("greedy_action: no values");
  int best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = static_cast<int>(i);
  }
  return best;
}

SumTree::SumTree(std::size_t min_capacity) : capacity_(1) {
  if (min_capacity == 0) throw Error("SumTree: capacity must be positive");
  while (capacity_ < min_capacity) capacity_ *= 2;
  nodes_.assign(2 * capacity_, 0.0);
}

void SumTree::set(std::size_t leaf, double value) {
  if (leaf >= capacity_) throw Error("SumTree: leaf out of range");
  if (!(value >= 0.0) || !std::isfinite(value)) throw Error("SumTree: priority must be finite and >= 0");
  std::size_t i = capacity_ + leaf;
  nodes_[i] = value;
  for (i /= 2; i >= 1; i /= 2) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

std::size_t SumTree::find(double u) const {
  std::size_t i = 1;
  while (i < capacity_) {
    const std::size_t left = 2 * i;
    if (u < nodes_[left] || nodes_[left + 1] <= 0.0) {
      i = left;
    } else {
      u -= nodes_[left];
      i = left + 1;
    }
  }
  return i - capacity_;
}

bool SumTree::consistent(double rel_tol) const {
  for (std::size_t i = 1; i < capacity_; ++i) {
    const double sum = nodes_[2 * i] + nodes_[2 * i + 1];
    if (std::abs(nodes_[i] - sum) > rel_tol * std::max(1.0, std::abs(sum))) return false;
  }
  return true;
}

PrioritizedReplay::PrioritizedReplay(std::size_t capacity, double alpha, double eps_p, bool quantized)
    : capacity_(capacity), alpha_(alpha), eps_p_(eps_p), quantized_(quantized), tree_(capacity) {
  if (capacity == 0) throw Error("replay: capacity must be positive");
  if (!(alpha >= 0.0) || !(eps_p > 0.0)) throw Error("replay: need alpha >= 0 and eps_p > 0");
  slots_.resize(capacity);
  priorities_.assign(capacity, 0.0);
}

PrioritizedReplay::StoredObs PrioritizedReplay::store(const ObservationTensor& o) const {
  StoredObs s;
  s.channels = o.channels;
  s.height = o.height;
  s.width = o.width;
  if (!quantized_) {
    s.f = o.data;
    return s;
  }
  const std::size_t n = static_cast<std::size_t>(o.image_channels()) * o.plane();
  s.q.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.q[i] = static_cast<std::uint8_t>(std::lround(std::clamp(o.data[i], 0.0f, 1.0f) * 255.0f));
  }
  s.goal = o.goal_vector;
  return s;
}

ObservationTensor PrioritizedReplay::restore(const StoredObs& s) const {
  ObservationTensor o(s.channels, s.height, s.width);
  o.goal_vector = s.goal;
  if (!quantized_) {
    o.data = s.f;
    return o;
  }
  write_column(s, o.data.data());
  return o;
}

std::size_t PrioritizedReplay::push(const Transition& t, double priority) {
  if (!(priority > 0.0) || !std::isfinite(priority)) throw Error("replay: priority must be positive");
  if (!std::isfinite(t.reward)) throw Error("replay: non-finite reward");
  if (t.obs.data.size() != t.next_obs.data.size()) throw Error("replay: obs/next_obs shape mismatch");
  const std::size_t i = cursor_;
  Slot& s = slots_[i];
  s.obs = store(t.obs);
  s.next_obs = store(t.next_obs);
  s.action = t.action;
  s.reward = t.reward;
  s.done = t.done;
  priorities_[i] = priority;
  tree_.set(i, std::pow(priority, alpha_));
  max_priority_ = std::max(max_priority_, priority);
  cursor_ = (cursor_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
  return i;
}

PrioritizedReplay::Sample PrioritizedReplay::sample(std::size_t batch, double beta, Rng& rng) const {
  if (size_ == 0) throw Error("replay: sampling from an empty buffer");
  if (batch == 0) throw Error("replay: batch must be positive");
  Sample s;
  const double total = tree_.total();
  const double segment = total / static_cast<double>(batch);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double max_w = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double u = std::min((static_cast<double>(b) + u01(rng)) * segment, std::nextafter(total, 0.0));
    std::size_t leaf = tree_.find(u);
    while (leaf > 0 && (leaf >= size_ || tree_.get(leaf) <= 0.0)) --leaf;
    const double p = tree_.get(leaf) / total;
    const double w = std::pow(static_cast<double>(size_) * p, -beta);
    s.indices.push_back(leaf);
    s.probabilities.push_back(p);
    s.is_weights.push_back(w);
    max_w = std::max(max_w, w);
  }
  for (double& w : s.is_weights) w /= max_w;
  return s;
}

void PrioritizedReplay::update(const std::vector<std::size_t>& indices,
                               const std::vector<double>& td_errors) {
  if (indices.size() != td_errors.size()) throw Error("replay: index/td size mismatch");
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= size_) throw Error("replay: update of an empty slot");
    if (!std::isfinite(td_errors[k])) throw Error("replay: non-finite td error");
    const double p = std::abs(td_errors[k]) + eps_p_;
    priorities_[i] = p;
    tree_.set(i, std::pow(p, alpha_));
    max_priority_ = std::max(max_priority_, p);
  }
}

Transition PrioritizedReplay::get(std::size_t i) const {
  if (i >= size_) throw Error("replay: index out of range");
  const Slot& s = slots_[i];
  return {restore(s.obs), s.action, s.reward, restore(s.next_obs), s.done};
}

std::string describe_batch(const std::vector<int>& actions, const std::vector<double>& rewards,
                           const std::vector<bool>& dones, const std::vector<double>& is_weights,
                           const std::vector<double>& targets, std::int64_t step) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["actions"] = actions;
  j["rewards"] = rewards;
  j["dones"] = dones;
  j["is_weights"] = is_weights;
  auto t = nlohmann::ordered_json::array();
  for (double v : targets) {
    if (std::isfinite(v)) {
      t.push_back(v);
    } else {
      t.push_back(std::to_string(v));
    }
  }
  j["targets"] = std::move(t);
  return j.dump() + "\n";
}

namespace {

constexpr std::uint32_t kQVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error("q checkpoint: truncated header");
  return v;
}

void put_list(std::ostream& os, const std::vector<int>& v) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(v.size()));
  for (int x : v) put<std::uint32_t>(os, static_cast<std::uint32_t>(x));
}

std::vector<int> get_list(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > 64) throw Error("q checkpoint: implausible layer count");
  std::vector<int> v(n);
  for (int& x : v) x = static_cast<int>(get<std::uint32_t>(is));
  return v;
}

}  // namespace

void save_q_checkpoint(const QCheckpoint& ck, const std::filesystem::path& path) {
  const QNetwork net(ck.arch);
  if (ck.online.size() != net.n_params() || ck.target.size() != net.n_params()) {
    throw Error("q checkpoint: parameter count does not match architecture");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write("EGQN", 4);
  put<std::uint32_t>(os, kQVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.arch.channels));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.arch.height));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.arch.width));
  put_list(os, ck.arch.conv_channels);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.arch.kernel));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.arch.stride));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.arch.pad));
  put_list(os, ck.arch.hidden);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.arch.n_actions));
  put<std::uint64_t>(os, ck.action_checksum);
  put<std::int64_t>(os, ck.step);
  put<std::uint32_t>(os, ck.sensor_flags);
  put<std::uint64_t>(os, static_cast<std::uint64_t>(net.n_params()));
  os.write(reinterpret_cast<const char*>(ck.online.data()), static_cast<std::streamsize>(ck.online.size() * 4));
  os.write(reinterpret_cast<const char*>(ck.target.data()), static_cast<std::streamsize>(ck.target.size() * 4));
  if (!os) throw Error("write failed: " + path.string());
}

QCheckpoint load_q_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "EGQN", 4) != 0) {
    throw Error("q checkpoint: bad magic in " + path.string());
  }
  if (get<std::uint32_t>(is) != kQVersion) throw Error("q checkpoint: unsupported version");
  QCheckpoint ck;
  ck.arch.channels = static_cast<int>(get<std::uint32_t>(is));
  ck.arch.height = static_cast<int>(get<std::uint32_t>(is));
  ck.arch.width = static_cast<int>(get<std::uint32_t>(is));
  ck.arch.conv_channels = get_list(is);
  ck.arch.kernel = static_cast<int>(get<std::uint32_t>(is));
  ck.arch.stride = static_cast<int>(get<std::uint32_t>(is));
  ck.arch.pad = static_cast<int>(get<std::uint32_t>(is));
  ck.arch.hidden = get_list(is);
  ck.arch.n_actions = static_cast<int>(get<std::uint32_t>(is));
  ck.action_checksum = get<std::uint64_t>(is);
  ck.step = get<std::int64_t>(is);
  ck.sensor_flags = get<std::uint32_t>(is);
  const auto n = get<std::uint64_t>(is);
  const QNetwork net(ck.arch);
  if (n != static_cast<std::uint64_t>(net.n_params())) throw Error("q checkpoint: parameter count mismatch");
  ck.online.resize(static_cast<Eigen::Index>(n));
  ck.target.resize(static_cast<Eigen::Index>(n));
  if (!is.read(reinterpret_cast<char*>(ck.online.data()), static_cast<std::streamsize>(n * 4)) ||
      !is.read(reinterpret_cast<char*>(ck.target.data()), static_cast<std::streamsize>(n * 4))) {
    throw Error("q checkpoint: truncated parameters");
  }
  if (!ck.online.allFinite() || !ck.target.allFinite()) throw Error("q checkpoint: non-finite parameters");
  return ck;
}

}  // namespace egonav
