#pragma once

// Second implementations used as test oracles. They share no code with the
// library beyond plain data types.

#include "egonav/ego_sensor.hpp"
#include "egonav/environment.hpp"

#include <optional>
#include <vector>

namespace egonav::testing {

/// Pinhole ray for pixel (row, col) built from yaw/pitch closed forms.
struct OracleRay {
  Vec3 origin;
  Vec3 dir;
};
OracleRay oracle_ray(const Pose& pose, const CameraConfig& cfg, int row, int col);

/// Face-by-face plane intersection, nearest t > 0.
std::optional<double> oracle_ray_box(const Vec3& o, const Vec3& d, const SceneBox& box);
/// Closest-approach form of the ray-sphere test.
std::optional<double> oracle_ray_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r);

struct OracleImage {
  Eigen::MatrixXd depth;  // normalized
  Eigen::MatrixXi goal;   // 1 where the goal sphere is the nearest hit
};
OracleImage oracle_render(const Scene& scene, const GoalSpec& goal, const Pose& pose,
                          const CameraConfig& cfg);

/// Goal-visibility cases where a center-ray test and "any mask pixel" can
/// legitimately disagree: the goal straddles the frustum edge, is partly
/// occluded, or projects to less than ~1.5 pixels.
bool visibility_ambiguous(const Scene& scene, const GoalSpec& goal, const Pose& pose,
                          const CameraConfig& cfg);

/// Direct nested-loop convolution over one (C, H, W) image, no activation.
Eigen::VectorXd naive_conv(const Eigen::VectorXd& x, int in_c, int h, int w,
                           const Eigen::MatrixXd& weight, const Eigen::VectorXd& bias,
                           int kernel, int stride, int pad, int* out_h, int* out_w);

/// Forward pass of a QNetwork written with loops over the architecture.
/// `kink_margin`, when given, receives the smallest |pre-activation| over all
/// ReLU units: how far this input sits from a point of non-differentiability.
Eigen::VectorXd naive_q_forward(const QArch& arch, const nn::ParamLayout& layout,
                                const Eigen::VectorXd& theta, const Eigen::VectorXd& x,
                                double* kink_margin = nullptr);

/// Minimum within-cluster sum of squares over all 2-partitions of the rows.
double exhaustive_two_means(const Eigen::MatrixXd& points);

/// Central differences of f around theta for every coordinate.
template <class F>
Eigen::VectorXd finite_difference(F&& f, Eigen::VectorXd theta, double h = 1e-5) {
  Eigen::VectorXd g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + h;
    const double up = f(theta);
    theta[i] = keep - h;
    const double down = f(theta);
    theta[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest |a - b| / max(|a|, |b|, floor) over coordinates.
double max_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-6);

/// Trace of `n_actions` actions of `frames_per_action` poses; the builder
/// hands each new pose the previous one to edit.
EpisodeTrace build_trace(int n_actions, int frames_per_action,
                         const std::function<void(int frame, Pose& p)>& edit);

}  // namespace egonav::testing
