#pragma once

// Template definitions for qlearn.hpp.

namespace egonav {

template <typename Scalar>
VectorX<Scalar> QNetwork::init(Rng& rng) const {
  VectorX<Scalar> theta = VectorX<Scalar>::Zero(n_params());
  for (const nn::ConvSpec& s : convs_) {
    nn::init_block(theta, layout_[s.weight], 1.0 / std::sqrt(static_cast<double>(s.patch())), rng);
  }
  for (const nn::Mlp::Layer& l : head_.layers()) {
    nn::init_block(theta, layout_[l.weight], 1.0 / std::sqrt(static_cast<double>(l.in)), rng);
  }
  return theta;
}

template <typename Scalar>
MatrixX<Scalar> QNetwork::forward(const VectorX<Scalar>& theta, const MatrixX<Scalar>& x,
                                  Cache<Scalar>* cache) const {
  if (theta.size() != n_params()) throw Error("q_forward: parameter vector size mismatch");
  if (x.rows() != arch_.input_size()) {
    throw Error("q_forward: input has " + std::to_string(x.rows()) + " values, network expects " +
                std::to_string(arch_.input_size()));
  }
  if (cache) cache->conv.assign(convs_.size(), {});
  MatrixX<Scalar> h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = nn::conv_forward(convs_[i], theta, layout_, h, nn::Activation::kRelu,
                         cache ? &cache->conv[i] : nullptr);
  }
  return head_.forward(theta, layout_, h, cache ? &cache->mlp : nullptr);
}

template <typename Scalar>
void QNetwork::backward(const VectorX<Scalar>& theta, const Cache<Scalar>& cache,
                        const MatrixX<Scalar>& dq, VectorX<Scalar>& grad) const {
  MatrixX<Scalar> g = head_.backward(theta, layout_, cache.mlp, dq, grad);
  for (std::size_t i = convs_.size(); i-- > 0;) {
    g = nn::conv_backward(convs_[i], theta, layout_, cache.conv[i], nn::Activation::kRelu,
                          std::move(g), grad, i > 0);
  }
}

template <typename Scalar>
MatrixX<Scalar> observation_batch(const std::vector<const ObservationTensor*>& obs) {
  if (obs.empty()) return {};
  const auto n = static_cast<Eigen::Index>(obs.front()->data.size());
  MatrixX<Scalar> x(n, static_cast<Eigen::Index>(obs.size()));
  for (std::size_t b = 0; b < obs.size(); ++b) {
    if (static_cast<Eigen::Index>(obs[b]->data.size()) != n) throw Error("observation_batch: mixed shapes");
    x.col(static_cast<Eigen::Index>(b)) =
        Eigen::Map<const Eigen::VectorXf>(obs[b]->data.data(), n).template cast<Scalar>();
  }
  return x;
}

template <typename Scalar>
int select_action(const QNetwork& net, const VectorX<Scalar>& theta, const ObservationTensor& obs,
                  double eps, Rng& rng) {
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < eps) {
    return std::uniform_int_distribution<int>(0, net.n_actions() - 1)(rng);
  }
  const MatrixX<Scalar> q = net.forward(theta, observation_batch<Scalar>({&obs}));
  return greedy_action(q.col(0).template cast<double>());
}

template <typename Scalar>
void PrioritizedReplay::write_column(const StoredObs& s, Scalar* dst) const {
  if (!quantized_) {
    for (float v : s.f) *dst++ = static_cast<Scalar>(v);
    return;
  }
  for (std::uint8_t v : s.q) *dst++ = static_cast<Scalar>(v) / Scalar(255);
  if (s.goal) {
    const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
    for (int c = 0; c < 3; ++c) {
      std::fill_n(dst, plane, static_cast<Scalar>((*s.goal)[c]));
      dst += plane;
    }
  }
}

template <typename Scalar>
void PrioritizedReplay::gather(const std::vector<std::size_t>& indices, MatrixX<Scalar>& obs,
                               MatrixX<Scalar>& next_obs) const {
  if (indices.empty()) throw Error("replay gather: empty index list");
  const Slot& first = slots_[indices.front()];
  const Eigen::Index n = static_cast<Eigen::Index>(first.obs.channels) * first.obs.height * first.obs.width;
  obs.resize(n, static_cast<Eigen::Index>(indices.size()));
  next_obs.resize(n, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Slot& s = slots_[indices[b]];
    write_column(s.obs, obs.col(static_cast<Eigen::Index>(b)).data());
    write_column(s.next_obs, next_obs.col(static_cast<Eigen::Index>(b)).data());
  }
}

template <typename Scalar>
VectorX<Scalar> td_targets(const QNetwork& net, const VectorX<Scalar>& online,
                           const VectorX<Scalar>& target, const QBatch<Scalar>& batch,
                           double gamma, bool double_q) {
  const Eigen::Index B = batch.rewards.size();
  if (B == 0) throw Error("td_targets: empty batch");
  VectorX<Scalar> y = batch.rewards;
  bool any_live = false;
  for (Eigen::Index i = 0; i < B; ++i) any_live = any_live || !batch.dones[static_cast<std::size_t>(i)];
  if (!any_live) return y;
  const MatrixX<Scalar> qt = net.forward(target, batch.next_obs);
  MatrixX<Scalar> qo;
  if (double_q) qo = net.forward(online, batch.next_obs);
  for (Eigen::Index i = 0; i < B; ++i) {
    if (batch.dones[static_cast<std::size_t>(i)]) continue;
    const int a = greedy_action((double_q ? qo : qt).col(i).template cast<double>());
    y[i] += static_cast<Scalar>(gamma) * qt(a, i);
  }
  return y;
}

template <typename Scalar>
QLoss<Scalar> q_loss(const QNetwork& net, const VectorX<Scalar>& theta, const QBatch<Scalar>& batch,
                     const VectorX<Scalar>& targets, double huber_delta) {
  const Eigen::Index B = batch.obs.cols();
  if (B == 0 || targets.size() != B || static_cast<Eigen::Index>(batch.actions.size()) != B) {
    throw Error("q_loss: inconsistent batch");
  }
  QNetwork::Cache<Scalar> cache;
  const MatrixX<Scalar> q = net.forward(theta, batch.obs, &cache);
  const auto delta = static_cast<Scalar>(huber_delta);
  QLoss<Scalar> out;
  out.td.resize(B);
  MatrixX<Scalar> dq = MatrixX<Scalar>::Zero(q.rows(), B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const int a = batch.actions[static_cast<std::size_t>(i)];
    if (a < 0 || a >= q.rows()) throw Error("q_loss: action index out of range");
    const Scalar w = batch.is_weights.size() ? batch.is_weights[i] : Scalar(1);
    const Scalar td = q(a, i) - targets[i];
    out.td[i] = td;
    out.loss += w * huber(td, delta) / static_cast<Scalar>(B);
    dq(a, i) = w * huber_grad(td, delta) / static_cast<Scalar>(B);
  }
  out.mean_q = q.colwise().maxCoeff().mean();
  out.grad = VectorX<Scalar>::Zero(theta.size());
  net.backward(theta, cache, dq, out.grad);
  return out;
}

template <typename Scalar>
QLearner<Scalar>::QLearner(QArch arch, TrainConfig config, Rng& rng)
    : net(std::move(arch)), cfg(std::move(config)) {
  cfg.validate();
  online = net.init<Scalar>(rng);
  target = online;
  opt = nn::Optimizer<Scalar>(cfg.optimizer_config(), net.n_params());
}

/// Thrown when a training step produces a non-finite loss; `dump` describes
/// the offending batch.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(const std::string& what, std::string dump) : Error(what), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

std::string describe_batch(const std::vector<int>& actions, const std::vector<double>& rewards,
                           const std::vector<bool>& dones, const std::vector<double>& is_weights,
                           const std::vector<double>& targets, std::int64_t step);

template <typename Scalar>
TrainMetrics train_on_batch(QLearner<Scalar>& learner, const QBatch<Scalar>& batch,
                            std::vector<double>* td_errors) {
  const VectorX<Scalar> y = td_targets(learner.net, learner.online, learner.target, batch,
                                       learner.cfg.gamma, learner.cfg.double_q);
  QLoss<Scalar> l = q_loss(learner.net, learner.online, batch, y, learner.cfg.huber_delta);
  if (!std::isfinite(static_cast<double>(l.loss)) || !l.grad.allFinite()) {
    auto to_vec = [](const VectorX<Scalar>& v) {
      std::vector<double> out(static_cast<std::size_t>(v.size()));
      for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(v[i]);
      return out;
    };
    throw NonFiniteLoss("train_step: non-finite loss at step " + std::to_string(learner.step),
                        describe_batch(batch.actions, to_vec(batch.rewards), batch.dones,
                                       to_vec(batch.is_weights), to_vec(y), learner.step));
  }
  learner.opt.step(learner.online, l.grad);
  ++learner.step;
  if (learner.step % learner.cfg.target_update == 0) learner.target = learner.online;
  if (td_errors) {
    td_errors->resize(static_cast<std::size_t>(l.td.size()));
    for (Eigen::Index i = 0; i < l.td.size(); ++i) {
      (*td_errors)[static_cast<std::size_t>(i)] = static_cast<double>(l.td[i]);
    }
  }
  return {static_cast<double>(l.loss), static_cast<double>(l.mean_q),
          static_cast<double>(l.td.cwiseAbs().mean())};
}

template <typename Scalar>
QBatch<Scalar> replay_batch(const PrioritizedReplay& replay, const PrioritizedReplay::Sample& s) {
  QBatch<Scalar> b;
  replay.gather(s.indices, b.obs, b.next_obs);
  const auto B = static_cast<Eigen::Index>(s.indices.size());
  b.rewards.resize(B);
  b.is_weights.resize(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const std::size_t idx = s.indices[static_cast<std::size_t>(i)];
    b.actions.push_back(replay.action(idx));
    b.rewards[i] = static_cast<Scalar>(replay.reward(idx));
    b.dones.push_back(replay.done(idx));
    b.is_weights[i] = static_cast<Scalar>(s.is_weights[static_cast<std::size_t>(i)]);
  }
  return b;
}

template <typename Scalar>
TrainMetrics train_step(QLearner<Scalar>& learner, PrioritizedReplay& replay, Rng& rng) {
  const auto B = static_cast<std::size_t>(learner.cfg.batch);
  if (replay.size() < B) throw Error("train_step: replay holds fewer transitions than one batch");
  const PrioritizedReplay::Sample s = replay.sample(B, per_beta(learner.step, learner.cfg), rng);
  const QBatch<Scalar> batch = replay_batch<Scalar>(replay, s);
  std::vector<double> td;
  const TrainMetrics m = train_on_batch(learner, batch, &td);
  replay.update(s.indices, td);
  return m;
}

}  // namespace egonav
