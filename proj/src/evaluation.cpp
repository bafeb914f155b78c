#include "egonav/evaluation.hpp"

#include <fstream>
#include <iomanip>
#include <limits>

namespace egonav {

double success_rate(const std::vector<EpisodeTrace>& traces) {
  if (traces.empty()) throw Error("success_rate: no traces");
  const auto n = std::count_if(traces.begin(), traces.end(),
                               [](const EpisodeTrace& t) { return t.outcome == Outcome::kReached; });
  return 100.0 * static_cast<double>(n) / static_cast<double>(traces.size());
}

double collision_rate(const std::vector<EpisodeTrace>& traces) {
  if (traces.empty()) throw Error("collision_rate: no traces");
  long hits = 0, total = 0;
  for (const EpisodeTrace& t : traces) {
    for (const ActionRecord& a : t.actions) {
      hits += a.collided ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

namespace {

/// Calls f(prev, next) for every consecutive frame pair of a trace, starting
/// from the episode's start pose.
template <typename F>
void for_each_frame_pair(const EpisodeTrace& t, F&& f) {
  const Pose* prev = &t.start;
  for (const ActionRecord& a : t.actions) {
    if (a.poses.empty()) throw Error("trace of episode " + std::to_string(t.episode) + " has no poses");
    for (const Pose& p : a.poses) {
      f(*prev, p);
      prev = &p;
    }
  }
}

}  // namespace

double foot_skating(const std::vector<EpisodeTrace>& traces, const SkatingParams& sp) {
  long skating = 0, pairs = 0;
  for (const EpisodeTrace& t : traces) {
    for_each_frame_pair(t, [&](const Pose& a, const Pose& b) {
      const bool left = a.left_foot.z() + b.left_foot.z() <= a.right_foot.z() + b.right_foot.z();
      const Vec3& f0 = left ? a.left_foot : a.right_foot;
      const Vec3& f1 = left ? b.left_foot : b.right_foot;
      const double slide = (f1.head<2>() - f0.head<2>()).norm();
      if (slide > sp.slide_threshold && std::max(f0.z(), f1.z()) < sp.contact_band) ++skating;
      ++pairs;
    });
  }
  if (pairs == 0) throw Error("foot_skating: traces contain no frames");
  return 100.0 * static_cast<double>(skating) / static_cast<double>(pairs);
}

MetricsReport compute_metrics(const std::vector<EpisodeTrace>& traces, std::uint64_t config_hash) {
  MetricsReport r;
  r.success_rate = success_rate(traces);
  r.collision_rate = collision_rate(traces);
  r.foot_skating = foot_skating(traces);
  r.n_episodes = static_cast<int>(traces.size());
  r.config_hash = config_hash;
  return r;
}

long AngleHistogram::total() const {
  long n = 0;
  for (long c : counts) n += c;
  return n;
}

double AngleHistogram::median_abs() const {
  if (angles.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> a;
  a.reserve(angles.size());
  for (double v : angles) a.push_back(std::abs(v));
  std::sort(a.begin(), a.end());
  const std::size_t m = a.size() / 2;
  return a.size() % 2 ? a[m] : 0.5 * (a[m - 1] + a[m]);
}

AngleHistogram heading_velocity_angles(const std::vector<EpisodeTrace>& traces, double speed_floor,
                                       int n_bins, int fps) {
  if (n_bins <= 0 || fps <= 0) throw Error("heading_velocity_angles: bins and fps must be positive");
  AngleHistogram h;
  const double width = 360.0 / n_bins;
  for (int i = 0; i <= n_bins; ++i) h.edges.push_back(-180.0 + width * i);
  h.counts.assign(static_cast<std::size_t>(n_bins), 0);
  for (const EpisodeTrace& t : traces) {
    for_each_frame_pair(t, [&](const Pose& a, const Pose& b) {
      const Vec2 v = (b.pelvis_xy - a.pelvis_xy) * fps;
      if (v.norm() < speed_floor) {
        ++h.excluded;
        return;
      }
      const double ang = rad2deg(wrap_angle(std::atan2(v.y(), v.x()) - b.head_yaw));
      const int bin = std::clamp(static_cast<int>(std::ceil((ang + 180.0) / width)) - 1, 0, n_bins - 1);
      ++h.counts[static_cast<std::size_t>(bin)];
      h.angles.push_back(ang);
    });
  }
  return h;
}

CrossSceneResult cross_scene_eval(const std::vector<TrainedPolicy>& policies,
                                  const std::vector<Scene>& scenes, const MotionPrior& prior,
                                  const ActionSet& actions, const EnvConfig& env,
                                  const RolloutOptions& opt, std::uint64_t config_hash) {
  for (const TrainedPolicy& p : policies) check_compatible(p.checkpoint, actions, env.camera);
  CrossSceneResult r;
  const auto nt = static_cast<Eigen::Index>(policies.size());
  const auto ns = static_cast<Eigen::Index>(scenes.size());
  r.success.resize(nt, ns);
  r.collision.resize(nt, ns);
  for (const Scene& s : scenes) r.test_scenes.push_back(s.id);
  for (Eigen::Index i = 0; i < nt; ++i) {
    const TrainedPolicy& p = policies[static_cast<std::size_t>(i)];
    r.train_scenes.push_back(p.scene_id);
    r.reports.emplace_back();
    for (Eigen::Index j = 0; j < ns; ++j) {
      const auto traces = rollout_policy(p.checkpoint, scenes[static_cast<std::size_t>(j)], prior,
                                         actions, env, opt);
      const MetricsReport m = compute_metrics(traces, config_hash);
      r.success(i, j) = m.success_rate;
      r.collision(i, j) = m.collision_rate;
      r.reports.back().push_back(m);
    }
  }
  return r;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << std::setprecision(6) << std::fixed;
  return os;
}

void metrics_row(std::ostream& os, const std::string& train, const std::string& test,
                 const MetricsReport& m) {
  os << train << ',' << test << ',' << m.n_episodes << ',' << m.success_rate << ','
     << m.collision_rate << ',' << m.foot_skating << ',' << hex64(m.config_hash) << '\n';
}

constexpr const char* kMetricsHeader =
    "train_scene,test_scene,n_episodes,success_rate,collision_rate,foot_skating,config_hash\n";

}  // namespace

void write_metrics_csv(const CrossSceneResult& r, const std::filesystem::path& path) {
  std::ofstream os = open_csv(path);
  os << kMetricsHeader;
  for (std::size_t i = 0; i < r.train_scenes.size(); ++i) {
    for (std::size_t j = 0; j < r.test_scenes.size(); ++j) {
      metrics_row(os, r.train_scenes[i], r.test_scenes[j], r.reports[i][j]);
    }
  }
}

void write_metrics_csv(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                       const std::string& test_scene, const std::filesystem::path& path) {
  std::ofstream os = open_csv(path);
  os << kMetricsHeader;
  for (const auto& [train, m] : rows) metrics_row(os, train, test_scene, m);
}

void write_angles_csv(const AngleHistogram& h, const std::filesystem::path& path) {
  std::ofstream os = open_csv(path);
  os << "bin_low,bin_high,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    os << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
  }
}

}  // namespace egonav
