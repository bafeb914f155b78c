#include "oracles.hpp"

#include <limits>

namespace egonav::testing {

namespace {

struct Basis {
  Vec3 forward, right, up;
};

Basis camera_basis(const Pose& pose, bool reversed) {
  const double cy = std::cos(pose.head_yaw), sy = std::sin(pose.head_yaw);
  const double cp = std::cos(pose.head_pitch), sp = std::sin(pose.head_pitch);
  const double s = reversed ? -1.0 : 1.0;
  Basis b;
  b.forward = s * Vec3(cp * cy, cp * sy, sp);
  const Vec3 left = s * Vec3(-sy, cy, 0.0);
  b.right = -left;
  b.up = Vec3(-sp * cy, -sp * sy, cp);
  return b;
}

}  // namespace

OracleRay oracle_ray(const Pose& pose, const CameraConfig& cfg, int row, int col) {
  const Basis b = camera_basis(pose, cfg.reversed);
  const double t = std::tan(cfg.horizontal_fov / 2.0);
  const double u = (2.0 * col + 1.0 - cfg.width) / cfg.width * t;
  const double v = (cfg.height - 2.0 * row - 1.0) / cfg.width * t;
  OracleRay r;
  r.origin = pose.head_pos + cfg.forward_offset * b.forward;
  r.dir = (b.forward + u * b.right + v * b.up).normalized();
  return r;
}

std::optional<double> oracle_ray_box(const Vec3& o, const Vec3& d, const SceneBox& box) {
  std::optional<double> best;
  for (int axis = 0; axis < 3; ++axis) {
    if (d[axis] == 0.0) continue;
    for (double plane : {box.min_corner[axis], box.max_corner[axis]}) {
      const double t = (plane - o[axis]) / d[axis];
      if (t <= 0.0) continue;
      const Vec3 p = o + t * d;
      bool inside = true;
      for (int k = 0; k < 3; ++k) {
        if (k == axis) continue;
        const double slack = 1e-12 * (1.0 + std::abs(p[k]));
        if (p[k] < box.min_corner[k] - slack || p[k] > box.max_corner[k] + slack) inside = false;
      }
      if (inside && (!best || t < *best)) best = t;
    }
  }
  return best;
}

std::optional<double> oracle_ray_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r) {
  const Vec3 oc = c - o;
  const double tc = oc.dot(d);
  const double miss2 = oc.squaredNorm() - tc * tc;
  if (miss2 > r * r) return std::nullopt;
  const double half = std::sqrt(r * r - miss2);
  if (tc - half > 0.0) return tc - half;
  if (tc + half > 0.0) return tc + half;
  return std::nullopt;
}

OracleImage oracle_render(const Scene& scene, const GoalSpec& goal, const Pose& pose,
                          const CameraConfig& cfg) {
  OracleImage img{Eigen::MatrixXd::Ones(cfg.height, cfg.width),
                  Eigen::MatrixXi::Zero(cfg.height, cfg.width)};
  for (int row = 0; row < cfg.height; ++row) {
    for (int col = 0; col < cfg.width; ++col) {
      const OracleRay ray = oracle_ray(pose, cfg, row, col);
      double best = std::numeric_limits<double>::infinity();
      bool is_goal = false;
      if (ray.dir.z() < 0.0) {
        const double t = ray.origin.z() / -ray.dir.z();
        const Vec3 p = ray.origin + t * ray.dir;
        if (p.x() >= scene.bounds.min.x() && p.x() <= scene.bounds.max.x() &&
            p.y() >= scene.bounds.min.y() && p.y() <= scene.bounds.max.y()) {
          best = t;
        }
      }
      for (const SceneBox& box : scene.boxes) {
        if (auto t = oracle_ray_box(ray.origin, ray.dir, box); t && *t < best) best = *t;
      }
      if (auto t = oracle_ray_sphere(ray.origin, ray.dir, goal.center, goal.radius); t && *t < best) {
        best = *t;
        is_goal = true;
      }
      if (std::isfinite(best)) img.depth(row, col) = std::min(best / cfg.max_depth, 1.0);
      img.goal(row, col) = is_goal ? 1 : 0;
    }
  }
  return img;
}

bool visibility_ambiguous(const Scene& scene, const GoalSpec& goal, const Pose& pose,
                          const CameraConfig& cfg) {
  const Basis b = camera_basis(pose, cfg.reversed);
  const Vec3 origin = pose.head_pos + cfg.forward_offset * b.forward;
  const Vec3 v = goal.center - origin;
  const double dist = v.norm();
  if (dist <= goal.radius * 1.5) return true;
  const double ang = std::asin(goal.radius / dist);
  const double pitch = 2.0 * std::tan(cfg.horizontal_fov / 2.0) / cfg.width;
  if (std::tan(ang) < 0.75 * pitch) return true;

  // Angular distance of the center direction from each frustum plane.
  const double th = std::tan(cfg.horizontal_fov / 2.0);
  const double tv = th * cfg.height / cfg.width;
  const Vec3 dir = v / dist;
  const double f = dir.dot(b.forward), x = dir.dot(b.right), y = dir.dot(b.up);
  const Vec3 planes[4] = {Vec3(1.0, -th, 0.0), Vec3(-1.0, -th, 0.0), Vec3(0.0, -tv, 1.0),
                          Vec3(0.0, -tv, -1.0)};
  for (const Vec3& n : planes) {
    const double s = (n.x() * x + n.y() * f + n.z() * y) / n.norm();
    if (std::abs(s) < std::sin(ang) * 1.2) return true;
  }

  // Partial occlusion: center and rim rays disagree about being blocked.
  const Vec3 a = dir.unitOrthogonal(), c = dir.cross(a);
  auto blocked = [&](const Vec3& target) {
    const Vec3 d = (target - origin).normalized();
    const double surf = (target - origin).norm();
    for (const SceneBox& box : scene.boxes) {
      if (auto t = oracle_ray_box(origin, d, box); t && *t < surf) return true;
    }
    return false;
  };
  const bool center = blocked(goal.center - goal.radius * dir);
  for (int k = 0; k < 24; ++k) {
    const double phi = 2.0 * kPi * k / 24.0;
    for (double frac : {0.5, 1.05}) {
      const Vec3 rim = goal.center + frac * goal.radius * (std::cos(phi) * a + std::sin(phi) * c);
      if (blocked(rim) != center) return true;
    }
  }
  return false;
}

Eigen::VectorXd naive_conv(const Eigen::VectorXd& x, int in_c, int h, int w,
                           const Eigen::MatrixXd& weight, const Eigen::VectorXd& bias,
                           int kernel, int stride, int pad, int* out_h, int* out_w) {
  const int oh = (h + 2 * pad - kernel) / stride + 1;
  const int ow = (w + 2 * pad - kernel) / stride + 1;
  const int out_c = static_cast<int>(weight.rows());
  Eigen::VectorXd y(out_c * oh * ow);
  for (int o = 0; o < out_c; ++o) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias[o];
        for (int c = 0; c < in_c; ++c) {
          for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
              const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += weight(o, (c * kernel + ky) * kernel + kx) * x[(c * h + iy) * w + ix];
            }
          }
        }
        y[(o * oh + oy) * ow + ox] = acc;
      }
    }
  }
  *out_h = oh;
  *out_w = ow;
  return y;
}

Eigen::VectorXd naive_q_forward(const QArch& arch, const nn::ParamLayout& layout,
                                const Eigen::VectorXd& theta, const Eigen::VectorXd& x,
                                double* kink_margin) {
  double margin = std::numeric_limits<double>::infinity();
  auto block = [&](int id) {
    const nn::Block& b = layout[id];
    return Eigen::MatrixXd(Eigen::Map<const Eigen::MatrixXd>(theta.data() + b.offset, b.rows, b.cols));
  };
  Eigen::VectorXd h = x;
  int c = arch.channels, hh = arch.height, ww = arch.width, id = 0;
  for (int out_c : arch.conv_channels) {
    int oh = 0, ow = 0;
    const Eigen::MatrixXd wgt = block(id++);
    const Eigen::VectorXd bias = block(id++).col(0);
    h = naive_conv(h, c, hh, ww, wgt, bias, arch.kernel, arch.stride, arch.pad, &oh, &ow);
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      margin = std::min(margin, std::abs(h[i]));
      h[i] = std::max(h[i], 0.0);
    }
    c = out_c;
    hh = oh;
    ww = ow;
  }
  const std::size_t n_dense = arch.hidden.size() + 1;
  for (std::size_t l = 0; l < n_dense; ++l) {
    const Eigen::MatrixXd wgt = block(id++);
    const Eigen::VectorXd bias = block(id++).col(0);
    Eigen::VectorXd z(wgt.rows());
    for (Eigen::Index r = 0; r < wgt.rows(); ++r) {
      double acc = bias[r];
      for (Eigen::Index k = 0; k < wgt.cols(); ++k) acc += wgt(r, k) * h[k];
      if (l + 1 < n_dense) margin = std::min(margin, std::abs(acc));
      z[r] = (l + 1 < n_dense) ? std::max(acc, 0.0) : acc;
    }
    h = z;
  }
  if (kink_margin) *kink_margin = margin;
  return h;
}

double exhaustive_two_means(const Eigen::MatrixXd& points) {
  const int n = static_cast<int>(points.rows());
  double best = std::numeric_limits<double>::infinity();
  // Point 0 always in cluster A; every other point picks a side.
  for (unsigned mask = 0; mask < (1u << (n - 1)); ++mask) {
    std::vector<int> a{0}, b;
    for (int i = 1; i < n; ++i) ((mask >> (i - 1)) & 1u ? b : a).push_back(i);
    if (b.empty()) continue;
    double total = 0.0;
    for (const auto* group : {&a, &b}) {
      Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(points.cols());
      for (int i : *group) mean += points.row(i);
      mean /= static_cast<double>(group->size());
      for (int i : *group) total += (points.row(i) - mean).squaredNorm();
    }
    best = std::min(best, total);
  }
  return best;
}

double max_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

EpisodeTrace build_trace(int n_actions, int frames_per_action,
                         const std::function<void(int frame, Pose& p)>& edit) {
  EpisodeTrace t;
  t.start = standing_pose(Vec2::Zero(), 0.0);
  Pose p = t.start;
  int frame = 0;
  for (int a = 0; a < n_actions; ++a) {
    ActionRecord rec;
    for (int k = 0; k < frames_per_action; ++k) {
      ++frame;
      p.frame_index = frame;
      edit(frame, p);
      rec.poses.push_back(p);
    }
    t.actions.push_back(rec);
  }
  return t;
}

}  // namespace egonav::testing
