#include "egonav/learned_prior.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

using namespace egonav;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Loop-based tanh MLP over consecutive (weight, bias) blocks starting at `first`.
VectorXd oracle_mlp(const VaeParams& p, int first, int n_layers, VectorXd h) {
  const auto& layout = p.model.layout();
  for (int l = 0; l < n_layers; ++l) {
    const nn::Block& w = layout[first + 2 * l];
    const nn::Block& b = layout[first + 2 * l + 1];
    VectorXd z(w.rows);
    for (Eigen::Index r = 0; r < w.rows; ++r) {
      double acc = p.theta[b.offset + r];
      for (Eigen::Index c = 0; c < w.cols; ++c) acc += p.theta[w.offset + c * w.rows + r] * h[c];
      z[r] = (l + 1 < n_layers) ? std::tanh(acc) : acc;
    }
    h = z;
  }
  return h;
}

VaeBatch random_batch(int latent, int n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  auto fill = [&](Eigen::Index r) {
    MatrixXd m(r, n);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
  };
  return {fill(VaeModel::kDeltaDim), fill(VaeModel::kCondDim), fill(latent)};
}

}  // namespace

TEST_CASE("zero weights encode to the prior") {
  const VaeParams p = zero_vae();
  Rng rng(1);
  const VaeBatch b = random_batch(16, 5, rng);
  const Latent l = encode(p, b.deltas, b.conds);
  CHECK(l.mu.cwiseAbs().maxCoeff() == 0.0);
  CHECK(l.logvar.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder and decoder match a loop-based forward pass") {
  Rng rng(2);
  const VaeParams p = init_vae(6, 20, rng);
  const VaeBatch b = random_batch(6, 40, rng);
  const Latent l = encode(p, b.deltas, b.conds);
  const MatrixXd out = decode(p, b.noise, b.conds);
  for (Eigen::Index i = 0; i < 40; ++i) {
    VectorXd in(VaeModel::kDeltaDim + VaeModel::kCondDim);
    in << b.deltas.col(i), b.conds.col(i);
    const VectorXd e = oracle_mlp(p, 0, 3, in);
    CHECK((e.head(6) - l.mu.col(i)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((e.tail(6) - l.logvar.col(i)).cwiseAbs().maxCoeff() < 1e-9);
    VectorXd din(6 + VaeModel::kCondDim);
    din << b.noise.col(i), b.conds.col(i);
    CHECK((oracle_mlp(p, 6, 3, din) - out.col(i)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("forward outputs stay finite") {
  Rng rng(3);
  const VaeParams p = init_vae(16, 128, rng);
  std::normal_distribution<double> g(0.0, 10.0);
  MatrixXd d(VaeModel::kDeltaDim, 1000), c(VaeModel::kCondDim, 1000), z(16, 1000);
  for (auto* m : {&d, &c, &z}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = g(rng);
  }
  CHECK(encode(p, d, c).mu.allFinite());
  CHECK(decode(p, z, c).allFinite());
}

TEST_CASE("reparameterization") {
  MatrixXd mu(3, 1), logvar = MatrixXd::Zero(3, 1);
  mu << 0.5, -1.0, 2.0;
  CHECK(reparameterize(mu, logvar, MatrixXd::Zero(3, 1)) == mu);
  CHECK(reparameterize(mu, logvar, MatrixXd::Ones(3, 1)) == (mu.array() + 1.0).matrix());

  Rng rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n = 100000;
  MatrixXd mu1 = MatrixXd::Constant(1, n, 0.7), lv = MatrixXd::Constant(1, n, std::log(0.25)), noise(1, n);
  for (int i = 0; i < n; ++i) noise(0, i) = g(rng);
  const double mean = reparameterize(mu1, lv, noise).mean();
  CHECK(std::abs(mean - 0.7) < 3.0 * 0.5 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("ELBO gradients match central differences") {
  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    VaeParams p = init_vae(3, 7, rng);
    const VaeBatch b = random_batch(3, 4, rng);
    const double beta = 0.3;
    const ElboResult r = elbo_loss(p, b, beta);
    const VectorXd fd = egonav::testing::finite_difference(
        [&](const VectorXd& th) {
          VaeParams q = p;
          q.theta = th;
          return elbo_loss(q, b, beta).loss;
        },
        p.theta);
    CHECK(egonav::testing::max_relative_error(r.grads, fd) < 1e-4);
  }
}

TEST_CASE("KL term") {
  VaeParams p = zero_vae(4, 8);
  Rng rng(6);
  VaeBatch b = random_batch(4, 6, rng);
  b.deltas.setZero();
  const ElboResult zero = elbo_loss(p, b, 0.0);
  CHECK(zero.kl == 0.0);
  CHECK(zero.loss == 0.0);

  for (int i = 0; i < 20; ++i) {
    VaeParams q = init_vae(4, 8, rng);
    CHECK(elbo_loss(q, random_batch(4, 6, rng), 1.0).kl > 0.0);
  }
}

TEST_CASE("loss strictly decreases while overfitting ten samples") {
  Rng rng(7);
  VaeParams p = init_vae(4, 16, rng);
  const VaeBatch b = random_batch(4, 10, rng);
  nn::Optimizer<double> opt({nn::OptimizerKind::kSgdMomentum, 1e-3, 0.9}, p.theta.size());
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 100; ++step) {
    const double loss = elbo_step(p, b, 1e-3, opt).loss;
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("VAE prior rollouts respect the body clamps") {
  ChunkConfig cfg;
  const Pose p0 = standing_pose(Vec2(0, 0), 0.0);
  HeadPose target = head_pose(p0);
  target.translation.x() += 0.5;

  Rng rng(8);
  const MotionChunk still = vae_rollout(zero_vae(), p0, target, cfg, rng);
  CHECK_FALSE(still.reached);
  CHECK(still.displacement < 0.1);

  for (int trial = 0; trial < 20; ++trial) {
    VaeParams wild = init_vae(16, 32, rng);
    wild.theta *= 5.0;
    const VaePrior prior(wild);
    Pose prev = p0;
    for (const Pose& p : rollout(prior, p0, target, cfg, rng).poses) {
      CHECK(pose_valid(p, cfg));
      CHECK((p.pelvis_xy - prev.pelvis_xy).norm() * cfg.fps <= cfg.v_max + 1e-9);
      prev = p;
    }
  }
}

TEST_CASE("trained prior reaches a nearby forward target") {
  const TrajectoryDataset ds = synth_trajectories(21, 40);
  VaeConfig cfg;
  const VaeParams p = train_vae(ds, cfg, 30, 21);
  const VaePrior prior(p, true);
  ChunkConfig cc;
  int reached = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Pose p0 = standing_pose(Vec2(0, 0), 0.0);
    HeadPose target = head_pose(p0);
    target.translation.x() += 0.5;
    reached += rollout(prior, p0, target, cc, rng).reached ? 1 : 0;
  }
  CHECK(reached >= 90);

  const auto path = std::filesystem::temp_directory_path() / "egonav_vae_test.egva";
  save_vae(p, path);
  const VaeParams back = load_vae(path);
  CHECK((back.theta - p.theta).cwiseAbs().maxCoeff() < 1e-6);
  std::filesystem::remove(path);
}
