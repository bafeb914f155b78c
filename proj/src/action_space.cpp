#include "egonav/action_space.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace egonav {

using Eigen::MatrixXd;

Eigen::Matrix<double, HeadDelta::kFeatureDim, 1> HeadDelta::features() const {
  Eigen::Matrix<double, kFeatureDim, 1> f;
  f << translation, yaw, pitch;
  return f;
}

HeadDelta HeadDelta::from_features(const Eigen::Matrix<double, kFeatureDim, 1>& f) {
  return {f.head<3>(), f[3], f[4]};
}

std::vector<HeadDelta> extract_head_deltas(const TrajectoryDataset& ds, int T_frames) {
  std::vector<HeadDelta> out;
  for (const auto& seq : ds.sequences) {
    for (std::size_t t = 0; t + static_cast<std::size_t>(T_frames) < seq.size(); ++t) {
      const Pose& a = seq[t];
      const Pose& b = seq[t + static_cast<std::size_t>(T_frames)];
      HeadDelta d;
      d.translation = rot_z(-a.head_yaw) * (b.head_pos - a.head_pos);
      d.yaw = wrap_angle(b.head_yaw - a.head_yaw);
      d.pitch = b.head_pitch - a.head_pitch;
      out.push_back(d);
    }
  }
  return out;
}

namespace {

struct Assign {
  std::vector<int> labels;
  Eigen::VectorXd dist2;
};

Assign assign(const MatrixXd& pts, const MatrixXd& cents) {
  Assign a{std::vector<int>(static_cast<std::size_t>(pts.rows())), Eigen::VectorXd(pts.rows())};
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index k = 0; k < cents.rows(); ++k) {
      const double d = (pts.row(i) - cents.row(k)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(k);
      }
    }
    a.labels[static_cast<std::size_t>(i)] = arg;
    a.dist2[i] = best;
  }
  return a;
}

MatrixXd kmeanspp(const MatrixXd& pts, int k, Rng& rng) {
  const Eigen::Index n = pts.rows();
  MatrixXd c(k, pts.cols());
  c.row(0) = pts.row(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
  Eigen::VectorXd d2 = (pts.rowwise() - c.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (d2[i] > 0.0 && u < d2[i]) {
          pick = i;
          break;
        }
        u -= d2[i];
      }
      while (d2[pick] == 0.0 && pick > 0) --pick;
    }
    c.row(j) = pts.row(pick);
    d2 = d2.cwiseMin((pts.rowwise() - c.row(j)).rowwise().squaredNorm());
  }
  return c;
}

KMeansResult lloyd(const MatrixXd& pts, MatrixXd cents, int max_iter) {
  KMeansResult r;
  Assign a = assign(pts, cents);
  r.inertia_history.push_back(a.dist2.sum());
  for (int it = 0; it < max_iter; ++it) {
    MatrixXd sums = MatrixXd::Zero(cents.rows(), cents.cols());
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(cents.rows());
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      sums.row(a.labels[static_cast<std::size_t>(i)]) += pts.row(i);
      ++counts[a.labels[static_cast<std::size_t>(i)]];
    }
    for (Eigen::Index k = 0; k < cents.rows(); ++k) {
      if (counts[k] > 0) {
        cents.row(k) = sums.row(k) / counts[k];
      } else {
        Eigen::Index far = 0;
        a.dist2.maxCoeff(&far);
        cents.row(k) = pts.row(far);
        a.dist2[far] = 0.0;
      }
    }
    Assign next = assign(pts, cents);
    r.iterations = it + 1;
    r.inertia_history.push_back(next.dist2.sum());
    const bool fixpoint = next.labels == a.labels;
    a = std::move(next);
    if (fixpoint) break;
  }
  r.centroids = std::move(cents);
  r.assignments = std::move(a.labels);
  r.inertia = a.dist2.sum();
  return r;
}

/// Single-point transfers (Hartigan): move a point whenever doing so lowers
/// the total inertia once both centroids are recomputed. Lloyd fixpoints can
/// still admit such moves; alternating the two until neither changes anything
/// removes most poor local minima on small inputs.
KMeansResult refine(const MatrixXd& pts, KMeansResult r, int max_iter) {
  const Eigen::Index k = r.centroids.rows();
  for (int round = 0; round < max_iter; ++round) {
    std::vector<int>& lab = r.assignments;
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    MatrixXd means = MatrixXd::Zero(k, pts.cols());
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      means.row(lab[static_cast<std::size_t>(i)]) += pts.row(i);
      counts[lab[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[c] > 0) means.row(c) /= counts[c];
    }
    bool moved = false;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const int a = lab[static_cast<std::size_t>(i)];
      if (counts[a] <= 1.0) continue;
      const double leave = counts[a] / (counts[a] - 1.0) * (pts.row(i) - means.row(a)).squaredNorm();
      int best = a;
      double join = leave;
      for (Eigen::Index b = 0; b < k; ++b) {
        if (b == a) continue;
        const double cost = counts[b] / (counts[b] + 1.0) * (pts.row(i) - means.row(b)).squaredNorm();
        if (cost < join) {
          join = cost;
          best = static_cast<int>(b);
        }
      }
      if (best == a || join >= leave * (1.0 - 1e-12)) continue;
      means.row(a) = (means.row(a) * counts[a] - pts.row(i)) / (counts[a] - 1.0);
      means.row(best) = (means.row(best) * counts[best] + pts.row(i)) / (counts[best] + 1.0);
      counts[a] -= 1.0;
      counts[best] += 1.0;
      lab[static_cast<std::size_t>(i)] = best;
      moved = true;
    }
    if (!moved) break;
    KMeansResult next = lloyd(pts, means, max_iter);
    next.inertia_history.insert(next.inertia_history.begin(), r.inertia_history.begin(),
                                r.inertia_history.end());
    next.iterations += r.iterations;
    r = std::move(next);
  }
  return r;
}

}  // namespace

KMeansResult kmeans(const MatrixXd& points, int n_clusters, std::uint64_t seed,
                    const KMeansOptions& opt) {
  if (n_clusters <= 0) throw Error("kmeans: n_clusters must be positive");
  std::set<std::vector<double>> distinct;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(points.cols()));
    for (Eigen::Index j = 0; j < points.cols(); ++j) row[static_cast<std::size_t>(j)] = points(i, j);
    distinct.insert(std::move(row));
    if (distinct.size() >= static_cast<std::size_t>(n_clusters)) break;
  }
  if (distinct.size() < static_cast<std::size_t>(n_clusters)) {
    throw Error("kmeans: fewer distinct points (" + std::to_string(distinct.size()) +
                ") than clusters (" + std::to_string(n_clusters) + ")");
  }
  Rng rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int run = 0; run < std::max(1, opt.n_init); ++run) {
    KMeansResult r = refine(points, lloyd(points, kmeanspp(points, n_clusters, rng), opt.max_iter),
                            opt.max_iter);
    if (r.inertia < best.inertia) best = std::move(r);
  }
  return best;
}

void ActionSet::validate() const {
  if (centroids.size() < 2) throw Error("action set: need at least 2 actions");
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    if (!centroids[i].features().allFinite()) throw Error("action set: non-finite centroid");
    for (std::size_t j = 0; j < i; ++j) {
      if (centroids[i].features() == centroids[j].features()) {
        throw Error("action set: duplicate centroids " + std::to_string(j) + " and " + std::to_string(i));
      }
    }
  }
}

std::string ActionSet::to_json() const {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["n"] = size();
  j["provenance"] = {{"dataset", dataset_id}, {"seed", seed}};
  auto arr = nlohmann::ordered_json::array();
  for (const HeadDelta& d : centroids) {
    arr.push_back({{"translation", {d.translation.x(), d.translation.y(), d.translation.z()}},
                   {"yaw", d.yaw},
                   {"pitch", d.pitch}});
  }
  j["centroids"] = std::move(arr);
  return j.dump(2) + "\n";
}

ActionSet ActionSet::from_json(const std::string& text) {
  ActionSet a;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("version").get<int>() != 1) throw Error("action set: unsupported version");
    a.dataset_id = j.at("provenance").at("dataset").get<std::string>();
    a.seed = j.at("provenance").at("seed").get<std::uint64_t>();
    for (const auto& c : j.at("centroids")) {
      const auto t = c.at("translation").get<std::vector<double>>();
      if (t.size() != 3) throw Error("action set: translation must have 3 entries");
      a.centroids.push_back({Vec3(t[0], t[1], t[2]), c.at("yaw").get<double>(), c.at("pitch").get<double>()});
    }
    if (j.at("n").get<int>() != a.size()) throw Error("action set: n does not match centroid count");
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("action set: malformed file: ") + e.what());
  }
  a.validate();
  return a;
}

std::uint64_t ActionSet::checksum() const { return fnv1a(to_json()); }

ActionSet build_action_set(const TrajectoryDataset& ds, int n_actions, int T_frames,
                           std::uint64_t seed, const std::string& dataset_id) {
  const std::vector<HeadDelta> deltas = extract_head_deltas(ds, T_frames);
  if (deltas.empty()) throw Error("build_action_set: no sequence longer than T_frames");
  MatrixXd pts(static_cast<Eigen::Index>(deltas.size()), HeadDelta::kFeatureDim);
  for (std::size_t i = 0; i < deltas.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = deltas[i].features();
  const KMeansResult km = kmeans(pts, n_actions, seed);
  ActionSet a;
  a.dataset_id = dataset_id;
  a.seed = seed;
  for (Eigen::Index k = 0; k < km.centroids.rows(); ++k) {
    a.centroids.push_back(HeadDelta::from_features(km.centroids.row(k).transpose()));
  }
  // Canonical order: by forward translation, then yaw.
  std::sort(a.centroids.begin(), a.centroids.end(), [](const HeadDelta& x, const HeadDelta& y) {
    if (x.translation.x() != y.translation.x()) return x.translation.x() > y.translation.x();
    return x.yaw < y.yaw;
  });
  a.validate();
  return a;
}

void save_action_set(const ActionSet& a, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << a.to_json();
}

ActionSet load_action_set(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ActionSet::from_json(ss.str());
}

HeadPose resolve_action(const HeadPose& cur, const HeadDelta& a, const HeadBand& band) {
  const double yaw = cur.yaw();
  HeadPose t;
  t.translation = cur.translation + rot_z(yaw) * a.translation;
  t.translation.z() = std::clamp(t.translation.z(), band.z_min, band.z_max);
  const double pitch = std::clamp(cur.pitch() + a.pitch, -band.pitch_limit, band.pitch_limit);
  t.rotation = yaw_pitch_rotation(wrap_angle(yaw + a.yaw), pitch);
  return t;
}

}  // namespace egonav
