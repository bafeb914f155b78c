#include "egonav/learned_prior.hpp"

#include <cstring>
#include <fstream>
#include <numeric>

namespace egonav {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::Matrix<double, HeadTargetEncoding::kDim, 1> HeadTargetEncoding::vec() const {
  Eigen::Matrix<double, kDim, 1> v;
  v << translation, forward, remaining;
  return v;
}

HeadTargetEncoding encode_target(const Pose& cur, const HeadPose& target, int remaining_frames,
                                 int T_frames) {
  const Mat3 inv = rot_z(-cur.pelvis_heading);
  HeadTargetEncoding e;
  e.translation = inv * (target.translation - cur.head_pos);
  // Orientation relative to where the head already points, so the decoder sees the error.
  e.forward = head_pose(cur).rotation.transpose() * target.forward();
  e.remaining = static_cast<double>(remaining_frames) / T_frames;
  return e;
}

VaeModel::VaeModel(int latent_dim, int hidden) : latent_dim_(latent_dim), hidden_(hidden) {
  if (latent_dim <= 0 || hidden <= 0) throw Error("VaeModel: dimensions must be positive");
  encoder_ = nn::Mlp(layout_, {kDeltaDim + kCondDim, hidden, hidden, 2 * latent_dim},
                     nn::Activation::kTanh, nn::Activation::kIdentity);
  decoder_ = nn::Mlp(layout_, {latent_dim + kCondDim, hidden, hidden, kDeltaDim},
                     nn::Activation::kTanh, nn::Activation::kIdentity);
}

VaeParams zero_vae(int latent_dim, int hidden) {
  VaeParams p{VaeModel(latent_dim, hidden), {}};
  p.theta = VectorXd::Zero(p.model.layout().size());
  return p;
}

VaeParams init_vae(int latent_dim, int hidden, Rng& rng) {
  VaeParams p = zero_vae(latent_dim, hidden);
  for (const nn::Mlp* net : {&p.model.encoder(), &p.model.decoder()}) {
    for (const auto& l : net->layers()) {
      nn::init_block(p.theta, p.model.layout()[l.weight], std::sqrt(3.0 / l.in), rng);
    }
  }
  return p;
}

namespace {

MatrixXd stack(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

}  // namespace

Latent encode(const VaeParams& p, const MatrixXd& deltas, const MatrixXd& conds) {
  if (deltas.rows() != VaeModel::kDeltaDim || conds.rows() != VaeModel::kCondDim ||
      deltas.cols() != conds.cols()) {
    throw Error("vae encode: shape mismatch");
  }
  const MatrixXd out = p.model.encoder().forward(p.theta, p.model.layout(), stack(deltas, conds));
  const int L = p.model.latent_dim();
  return {out.topRows(L), out.bottomRows(L)};
}

MatrixXd decode(const VaeParams& p, const MatrixXd& z, const MatrixXd& conds) {
  if (z.rows() != p.model.latent_dim() || conds.rows() != VaeModel::kCondDim ||
      z.cols() != conds.cols()) {
    throw Error("vae decode: shape mismatch");
  }
  return p.model.decoder().forward(p.theta, p.model.layout(), stack(z, conds));
}

namespace {

MatrixXd normalize_cond(const VaeParams& p, const HeadTargetEncoding& c) {
  return ((c.vec() - p.cond_mean).array() / p.cond_scale.array()).matrix();
}

}  // namespace

Latent encode(const VaeParams& p, const PoseDelta& delta, const HeadTargetEncoding& cond) {
  const MatrixXd d = ((delta.v - p.delta_mean).array() / p.delta_scale.array()).matrix();
  return encode(p, d, normalize_cond(p, cond));
}

PoseDelta decode(const VaeParams& p, const VectorXd& z, const HeadTargetEncoding& cond) {
  const MatrixXd out = decode(p, MatrixXd(z), normalize_cond(p, cond));
  PoseDelta d;
  d.v = (out.col(0).array() * p.delta_scale.array() + p.delta_mean.array()).matrix();
  d.frame_step = 1;
  return d;
}

MatrixXd reparameterize(const MatrixXd& mu, const MatrixXd& logvar, const MatrixXd& noise) {
  if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols() || mu.rows() != noise.rows() ||
      mu.cols() != noise.cols()) {
    throw Error("reparameterize: shape mismatch");
  }
  return (mu.array() + (0.5 * logvar.array()).exp() * noise.array()).matrix();
}

ElboResult elbo_loss(const VaeParams& p, const VaeBatch& batch, double beta) {
  const auto B = static_cast<double>(batch.deltas.cols());
  if (batch.deltas.cols() == 0) throw Error("elbo: empty batch");
  const int L = p.model.latent_dim();
  const auto& layout = p.model.layout();

  std::vector<MatrixXd> enc_acts, dec_acts;
  const MatrixXd enc_out =
      p.model.encoder().forward(p.theta, layout, stack(batch.deltas, batch.conds), &enc_acts);
  const MatrixXd mu = enc_out.topRows(L), logvar = enc_out.bottomRows(L);
  const MatrixXd sigma = (0.5 * logvar.array()).exp().matrix();
  const MatrixXd z = (mu.array() + sigma.array() * batch.noise.array()).matrix();
  const MatrixXd recon_out = p.model.decoder().forward(p.theta, layout, stack(z, batch.conds), &dec_acts);

  const MatrixXd err = recon_out - batch.deltas;
  const double n_elem = B * VaeModel::kDeltaDim;
  ElboResult r;
  r.recon = err.squaredNorm() / n_elem;
  r.kl = 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum() / B;
  r.loss = r.recon + beta * r.kl;

  r.grads = VectorXd::Zero(layout.size());
  const MatrixXd g_dec_in = p.model.decoder().backward(p.theta, layout, dec_acts,
                                                       MatrixXd(2.0 / n_elem * err), r.grads);
  const MatrixXd gz = g_dec_in.topRows(L);
  MatrixXd g_enc(2 * L, batch.deltas.cols());
  g_enc.topRows(L) = gz + beta / B * mu;
  g_enc.bottomRows(L) =
      (gz.array() * batch.noise.array() * 0.5 * sigma.array() +
       beta / B * 0.5 * (logvar.array().exp() - 1.0))
          .matrix();
  p.model.encoder().backward(p.theta, layout, enc_acts, g_enc, r.grads);
  return r;
}

ElboResult elbo_step(VaeParams& p, const VaeBatch& batch, double beta, nn::Optimizer<double>& opt) {
  ElboResult r = elbo_loss(p, batch, beta);
  if (!std::isfinite(r.loss) || !r.grads.allFinite()) {
    throw Error("elbo_step: non-finite loss (recon=" + std::to_string(r.recon) +
                ", kl=" + std::to_string(r.kl) + ", batch=" + std::to_string(batch.deltas.cols()) + ")");
  }
  opt.step(p.theta, r.grads);
  return r;
}

VaeTrainingData build_training_data(const TrajectoryDataset& ds, int T_frames, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PoseDelta> deltas;
  std::vector<HeadTargetEncoding> conds;
  for (const auto& seq : ds.sequences) {
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      const int max_k = static_cast<int>(std::min<std::size_t>(T_frames, seq.size() - 1 - t));
      const int k = std::uniform_int_distribution<int>(1, max_k)(rng);
      deltas.push_back(pose_delta(seq[t], seq[t + 1]));
      conds.push_back(encode_target(seq[t], head_pose(seq[t + k]), k, T_frames));
    }
  }
  VaeTrainingData d;
  d.deltas.resize(VaeModel::kDeltaDim, static_cast<Eigen::Index>(deltas.size()));
  d.conds.resize(VaeModel::kCondDim, static_cast<Eigen::Index>(conds.size()));
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    d.deltas.col(static_cast<Eigen::Index>(i)) = deltas[i].v;
    d.conds.col(static_cast<Eigen::Index>(i)) = conds[i].vec();
  }
  return d;
}

VaeParams train_vae(const TrajectoryDataset& ds, const VaeConfig& cfg, int T_frames,
                    std::uint64_t seed, const EpochLogger& log) {
  Rng rng(seed);
  const VaeTrainingData data = build_training_data(ds, T_frames, mix_seed(seed, 1));
  const Eigen::Index n = data.deltas.cols();
  if (n == 0) throw Error("train_vae: dataset has no frame pairs");

  VaeParams p = init_vae(cfg.latent_dim, cfg.hidden, rng);
  auto stats = [](const MatrixXd& m, auto& mean, auto& scale) {
    mean = m.rowwise().mean();
    const MatrixXd c = m.colwise() - m.rowwise().mean();
    scale = (c.array().square().rowwise().sum() / static_cast<double>(m.cols())).sqrt().max(1e-6).matrix();
  };
  stats(data.deltas, p.delta_mean, p.delta_scale);
  stats(data.conds, p.cond_mean, p.cond_scale);
  const MatrixXd deltas_n =
      ((data.deltas.colwise() - p.delta_mean).array().colwise() / p.delta_scale.array()).matrix();
  const MatrixXd conds_n =
      ((data.conds.colwise() - p.cond_mean).array().colwise() / p.cond_scale.array()).matrix();

  nn::Optimizer<double> opt(cfg.optimizer, p.model.layout().size());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::normal_distribution<double> normal;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    double sum_loss = 0, sum_recon = 0, sum_kl = 0;
    int n_batches = 0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch, n - start);
      VaeBatch batch{MatrixXd(VaeModel::kDeltaDim, b), MatrixXd(VaeModel::kCondDim, b),
                     MatrixXd(cfg.latent_dim, b)};
      for (Eigen::Index j = 0; j < b; ++j) {
        const Eigen::Index src = order[static_cast<std::size_t>(start + j)];
        batch.deltas.col(j) = deltas_n.col(src);
        batch.conds.col(j) = conds_n.col(src);
      }
      for (Eigen::Index j = 0; j < batch.noise.size(); ++j) batch.noise.data()[j] = normal(rng);
      const ElboResult r = elbo_step(p, batch, cfg.beta, opt);
      sum_loss += r.loss;
      sum_recon += r.recon;
      sum_kl += r.kl;
      ++n_batches;
    }
    if (log) log(epoch, sum_loss / n_batches, sum_recon / n_batches, sum_kl / n_batches);
  }
  return p;
}

Pose VaePrior::next(const Pose& cur, const HeadPose& target, int remaining_frames,
                    const ChunkConfig& cfg, Rng& rng) const {
  VectorXd z = VectorXd::Zero(params_.model.latent_dim());
  if (sample_) {
    std::normal_distribution<double> normal;
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = temperature_ * normal(rng);
  }
  PoseDelta d = decode(params_, z, encode_target(cur, target, remaining_frames, cfg.T_frames));
  for (Eigen::Index i = 0; i < d.v.size(); ++i) {
    if (!std::isfinite(d.v[i])) d.v[i] = 0.0;
  }
  const double dt = cfg.dt();
  auto clamp_translation = [&](int slot) {
    Eigen::Ref<Eigen::Vector2d> t = d.v.segment<2>(slot);
    const double len = t.norm();
    if (len <= 0.0) return;
    const double cap = cfg.speed_cap(std::atan2(std::abs(t.y()), t.x())) * dt;
    if (len > cap) t *= cap / len;
  };
  clamp_translation(PoseDelta::kPelvisFwd);
  clamp_translation(PoseDelta::kHeadFwd);
  const double max_turn = cfg.omega_max * dt;
  d.v[PoseDelta::kHeading] = std::clamp(d.v[PoseDelta::kHeading], -max_turn, max_turn);
  const double max_dyaw = cfg.head_omega * dt;
  d.v[PoseDelta::kHeadYaw] = std::clamp(d.v[PoseDelta::kHeadYaw], -max_dyaw, max_dyaw);
  const double max_dpitch = cfg.pitch_rate * dt;
  d.v[PoseDelta::kHeadPitch] = std::clamp(d.v[PoseDelta::kHeadPitch], -max_dpitch, max_dpitch);
  const double max_dz = cfg.head_z_rate * dt;
  d.v[PoseDelta::kHeadUp] = std::clamp(d.v[PoseDelta::kHeadUp], -max_dz, max_dz);
  d.frame_step = 1;
  Pose n = apply_delta(cur, d);
  clamp_pose(n, cfg);
  return n;
}

MotionChunk vae_rollout(const VaeParams& p, const Pose& p0, const HeadPose& target,
                        const ChunkConfig& cfg, Rng& rng) {
  return rollout(VaePrior(p), p0, target, cfg, rng);
}

namespace {

constexpr std::uint32_t kVaeVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw Error("vae checkpoint: truncated header");
  return v;
}

void put_floats(std::ostream& os, const Eigen::Ref<const VectorXd>& v) {
  const Eigen::VectorXf f = v.cast<float>();
  os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
}

void get_floats(std::istream& is, Eigen::Ref<VectorXd> v) {
  Eigen::VectorXf f(v.size());
  if (!is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * 4))) {
    throw Error("vae checkpoint: truncated parameters");
  }
  v = f.cast<double>();
}

}  // namespace

void save_vae(const VaeParams& p, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write("EGVA", 4);
  put_u32(os, kVaeVersion);
  put_u32(os, static_cast<std::uint32_t>(p.model.latent_dim()));
  put_u32(os, static_cast<std::uint32_t>(p.model.hidden()));
  const auto& blocks = p.model.layout().blocks();
  put_u32(os, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    put_u32(os, static_cast<std::uint32_t>(b.rows));
    put_u32(os, static_cast<std::uint32_t>(b.cols));
  }
  put_floats(os, p.theta);
  put_floats(os, p.delta_mean);
  put_floats(os, p.delta_scale);
  put_floats(os, p.cond_mean);
  put_floats(os, p.cond_scale);
}

VaeParams load_vae(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[4];
  if (!is || !is.read(magic, 4) || std::memcmp(magic, "EGVA", 4) != 0) {
    throw Error("vae checkpoint: bad magic in " + path.string());
  }
  if (get_u32(is) != kVaeVersion) throw Error("vae checkpoint: unsupported version");
  const auto latent = static_cast<int>(get_u32(is));
  const auto hidden = static_cast<int>(get_u32(is));
  VaeParams p = zero_vae(latent, hidden);
  const auto& blocks = p.model.layout().blocks();
  if (get_u32(is) != blocks.size()) throw Error("vae checkpoint: layer count mismatch");
  for (const auto& b : blocks) {
    const auto rows = get_u32(is), cols = get_u32(is);
    if (rows != b.rows || cols != b.cols) throw Error("vae checkpoint: layer shape mismatch");
  }
  get_floats(is, p.theta);
  get_floats(is, p.delta_mean);
  get_floats(is, p.delta_scale);
  get_floats(is, p.cond_mean);
  get_floats(is, p.cond_scale);
  if (!p.theta.allFinite()) throw Error("vae checkpoint: non-finite parameters");
  return p;
}

}  // namespace egonav
