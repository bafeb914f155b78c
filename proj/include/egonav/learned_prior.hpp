#pragma once

#include "egonav/body.hpp"
#include "egonav/nn.hpp"

#include <filesystem>
#include <functional>

namespace egonav {

/// Head target seen from the current pose.
struct HeadTargetEncoding {
  static constexpr int kDim = 7;
  Vec3 translation = Vec3::Zero();  // target head minus current head, pelvis heading frame
  Vec3 forward = Vec3::UnitX();     // target forward axis, current head frame
  double remaining = 1.0;           // frames left / T

  Eigen::Matrix<double, kDim, 1> vec() const;
};

HeadTargetEncoding encode_target(const Pose& current, const HeadPose& target,
                                 int remaining_frames, int T_frames);

struct VaeConfig {
  int latent_dim = 16;
  int hidden = 128;
  double beta = 1e-3;
  nn::OptimizerConfig optimizer{nn::OptimizerKind::kSgdMomentum, 1e-3, 0.9};
  int epochs = 20;
  int batch = 64;
};

/// Conditional VAE over pose deltas. Encoder: [delta, cond] -> [mu, logvar];
/// decoder: [z, cond] -> delta. Both work in normalized coordinates.
class VaeModel {
 public:
  static constexpr int kDeltaDim = PoseDelta::kDim;
  static constexpr int kCondDim = HeadTargetEncoding::kDim;

  VaeModel(int latent_dim, int hidden);

  int latent_dim() const { return latent_dim_; }
  int hidden() const { return hidden_; }
  const nn::ParamLayout& layout() const { return layout_; }
  const nn::Mlp& encoder() const { return encoder_; }
  const nn::Mlp& decoder() const { return decoder_; }

 private:
  int latent_dim_;
  int hidden_;
  nn::ParamLayout layout_;
  nn::Mlp encoder_;
  nn::Mlp decoder_;
};

struct VaeParams {
  VaeModel model{16, 128};
  Eigen::VectorXd theta;
  Eigen::Matrix<double, VaeModel::kDeltaDim, 1> delta_mean =
      Eigen::Matrix<double, VaeModel::kDeltaDim, 1>::Zero();
  Eigen::Matrix<double, VaeModel::kDeltaDim, 1> delta_scale =
      Eigen::Matrix<double, VaeModel::kDeltaDim, 1>::Ones();
  Eigen::Matrix<double, VaeModel::kCondDim, 1> cond_mean =
      Eigen::Matrix<double, VaeModel::kCondDim, 1>::Zero();
  Eigen::Matrix<double, VaeModel::kCondDim, 1> cond_scale =
      Eigen::Matrix<double, VaeModel::kCondDim, 1>::Ones();
};

VaeParams zero_vae(int latent_dim = 16, int hidden = 128);
VaeParams init_vae(int latent_dim, int hidden, Rng& rng);

struct Latent {
  Eigen::MatrixXd mu;
  Eigen::MatrixXd logvar;
};

/// Batched, normalized inputs (one sample per column).
Latent encode(const VaeParams& p, const Eigen::MatrixXd& deltas, const Eigen::MatrixXd& conds);
Eigen::MatrixXd decode(const VaeParams& p, const Eigen::MatrixXd& z, const Eigen::MatrixXd& conds);

/// Single-sample forms in physical units.
Latent encode(const VaeParams& p, const PoseDelta& delta, const HeadTargetEncoding& cond);
PoseDelta decode(const VaeParams& p, const Eigen::VectorXd& z, const HeadTargetEncoding& cond);

Eigen::MatrixXd reparameterize(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& logvar,
                               const Eigen::MatrixXd& noise);

struct VaeBatch {
  Eigen::MatrixXd deltas;  // normalized, kDeltaDim x B
  Eigen::MatrixXd conds;   // normalized, kCondDim x B
  Eigen::MatrixXd noise;   // latent_dim x B
};

struct ElboResult {
  double loss = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  Eigen::VectorXd grads;
};

/// Loss = reconstruction MSE + beta * KL(N(mu, sigma) || N(0, I)), batch mean.
ElboResult elbo_loss(const VaeParams& p, const VaeBatch& batch, double beta);

/// One optimizer step in place; returns the loss and gradient at the
/// pre-update parameters. Throws on a non-finite loss.
ElboResult elbo_step(VaeParams& p, const VaeBatch& batch, double beta,
                     nn::Optimizer<double>& opt);

struct VaeTrainingData {
  Eigen::MatrixXd deltas;  // physical units
  Eigen::MatrixXd conds;
};

VaeTrainingData build_training_data(const TrajectoryDataset& ds, int T_frames, std::uint64_t seed);

using EpochLogger = std::function<void(int epoch, double loss, double recon, double kl)>;

VaeParams train_vae(const TrajectoryDataset& ds, const VaeConfig& cfg, int T_frames,
                    std::uint64_t seed, const EpochLogger& log = {});

/// Autoregressive decoder rollout; decoded deltas are clamped to the gait's
/// speed and turn-rate bounds and the resulting pose to body invariants.
/// Latents are drawn from N(0, temperature^2 I); at 1.0 the small-beta
/// posterior mismatch makes head yaw wander past the reach tolerance.
class VaePrior final : public MotionPrior {
 public:
  explicit VaePrior(VaeParams params, bool sample_latent = true, double temperature = 0.5)
      : params_(std::move(params)), sample_(sample_latent), temperature_(temperature) {}

  Pose next(const Pose& current, const HeadPose& target, int remaining_frames,
            const ChunkConfig& cfg, Rng& rng) const override;
  std::string name() const override { return "vae"; }
  const VaeParams& params() const { return params_; }

 private:
  VaeParams params_;
  bool sample_;
  double temperature_;
};

MotionChunk vae_rollout(const VaeParams& p, const Pose& p0, const HeadPose& target,
                        const ChunkConfig& cfg, Rng& rng);

/// "EGVA", u32 version, u32 latent_dim, u32 hidden, u32 n_blocks,
/// n_blocks x (u32 rows, u32 cols), then f32 theta followed by the
/// normalization vectors (delta mean, delta scale, cond mean, cond scale).
void save_vae(const VaeParams& p, const std::filesystem::path& path);
VaeParams load_vae(const std::filesystem::path& path);

}  // namespace egonav
