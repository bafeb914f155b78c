#include "egonav/body.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace egonav {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

namespace {

Eigen::Matrix2d rot2(double a) {
  Eigen::Matrix2d r;
  const double c = std::cos(a), s = std::sin(a);
  r << c, -s, s, c;
  return r;
}

Vec3 to_local(const Eigen::Matrix2d& inv, const Vec3& d) {
  Vec3 out;
  out.head<2>() = inv * d.head<2>();
  out.z() = d.z();
  return out;
}

}  // namespace

Eigen::Matrix<double, Pose::kDim, 1> Pose::to_row() const {
  Eigen::Matrix<double, kDim, 1> r;
  r << pelvis_xy.x(), pelvis_xy.y(), pelvis_heading, head_pos.x(), head_pos.y(),
      head_pos.z(), head_yaw, head_pitch, left_foot.x(), left_foot.y(),
      left_foot.z(), right_foot.x(), right_foot.y(), right_foot.z(),
      static_cast<double>(frame_index);
  return r;
}

Pose Pose::from_row(const Eigen::Matrix<double, kDim, 1>& r) {
  Pose p;
  p.pelvis_xy = {r[0], r[1]};
  p.pelvis_heading = r[2];
  p.head_pos = {r[3], r[4], r[5]};
  p.head_yaw = r[6];
  p.head_pitch = r[7];
  p.left_foot = {r[8], r[9], r[10]};
  p.right_foot = {r[11], r[12], r[13]};
  p.frame_index = static_cast<std::int64_t>(std::llround(r[14]));
  return p;
}

PoseDelta pose_delta(const Pose& from, const Pose& to) {
  const Eigen::Matrix2d inv = rot2(-from.pelvis_heading);
  PoseDelta d;
  d.v.segment<2>(PoseDelta::kPelvisFwd) = inv * (to.pelvis_xy - from.pelvis_xy);
  d.v[PoseDelta::kHeading] = wrap_angle(to.pelvis_heading - from.pelvis_heading);
  d.v.segment<3>(PoseDelta::kHeadFwd) = to_local(inv, to.head_pos - from.head_pos);
  d.v[PoseDelta::kHeadYaw] = wrap_angle(to.head_yaw - from.head_yaw);
  d.v[PoseDelta::kHeadPitch] = to.head_pitch - from.head_pitch;
  d.v.segment<3>(PoseDelta::kLeftFootFwd) = to_local(inv, to.left_foot - from.left_foot);
  d.v.segment<3>(PoseDelta::kRightFootFwd) = to_local(inv, to.right_foot - from.right_foot);
  d.frame_step = to.frame_index - from.frame_index;
  return d;
}

Pose apply_delta(const Pose& p, const PoseDelta& d) {
  const Eigen::Matrix2d fwd = rot2(p.pelvis_heading);
  auto to_world = [&](const Vec3& local) {
    Vec3 out;
    out.head<2>() = fwd * local.head<2>();
    out.z() = local.z();
    return out;
  };
  Pose q;
  q.pelvis_xy = p.pelvis_xy + fwd * d.v.segment<2>(PoseDelta::kPelvisFwd);
  q.pelvis_heading = wrap_angle(p.pelvis_heading + d.v[PoseDelta::kHeading]);
  q.head_pos = p.head_pos + to_world(d.v.segment<3>(PoseDelta::kHeadFwd));
  q.head_yaw = wrap_angle(p.head_yaw + d.v[PoseDelta::kHeadYaw]);
  q.head_pitch = p.head_pitch + d.v[PoseDelta::kHeadPitch];
  q.left_foot = p.left_foot + to_world(d.v.segment<3>(PoseDelta::kLeftFootFwd));
  q.right_foot = p.right_foot + to_world(d.v.segment<3>(PoseDelta::kRightFootFwd));
  q.frame_index = p.frame_index + d.frame_step;
  return q;
}

Eigen::Matrix4d HeadPose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

HeadPose head_pose(const Pose& p) {
  return {p.head_pos, yaw_pitch_rotation(p.head_yaw, p.head_pitch)};
}

bool head_reached(const Pose& p, const HeadPose& target, const ReachTolerance& tol) {
  const HeadPose h = head_pose(p);
  return (h.translation - target.translation).norm() <= tol.pos_m &&
         rotation_distance(h.rotation, target.rotation) <= tol.ang_rad;
}

int ChunkConfig::half_cycle_frames() const {
  return std::max(1, static_cast<int>(std::lround(step_cycle_s * fps / 2.0)));
}

double ChunkConfig::speed_cap(double angle) const {
  return v_back + (v_max - v_back) * 0.5 * (1.0 + std::cos(angle));
}

Pose standing_pose(Vec2 xy, double heading, double head_z) {
  const ChunkConfig cfg;
  Pose p;
  p.pelvis_xy = xy;
  p.pelvis_heading = wrap_angle(heading);
  p.head_pos = {xy.x(), xy.y(), head_z};
  p.head_yaw = p.pelvis_heading;
  const Vec2 left = heading_dir(heading + kPi / 2.0) * cfg.foot_lateral;
  p.left_foot = {xy.x() + left.x(), xy.y() + left.y(), 0.0};
  p.right_foot = {xy.x() - left.x(), xy.y() - left.y(), 0.0};
  return p;
}

void clamp_pose(Pose& p, const ChunkConfig& cfg) {
  p.pelvis_heading = wrap_angle(p.pelvis_heading);
  p.head_pos.z() = std::clamp(p.head_pos.z(), cfg.head_z_min, cfg.head_z_max);
  p.head_pitch = std::clamp(p.head_pitch, -cfg.pitch_limit, cfg.pitch_limit);
  const double rel = std::clamp(wrap_angle(p.head_yaw - p.pelvis_heading),
                                -cfg.neck_limit, cfg.neck_limit);
  p.head_yaw = wrap_angle(p.pelvis_heading + rel);
  p.left_foot.z() = std::max(0.0, p.left_foot.z());
  p.right_foot.z() = std::max(0.0, p.right_foot.z());
}

bool pose_valid(const Pose& p, const ChunkConfig& cfg, double eps) {
  return p.head_pos.z() >= cfg.head_z_min - eps &&
         p.head_pos.z() <= cfg.head_z_max + eps &&
         std::abs(wrap_angle(p.head_yaw - p.pelvis_heading)) <= cfg.neck_limit + eps &&
         std::abs(p.head_pitch) <= cfg.pitch_limit + eps &&
         p.left_foot.z() >= -eps && p.right_foot.z() >= -eps;
}

Pose KinematicPrior::next(const Pose& cur, const HeadPose& target,
                          int /*remaining_frames*/, const ChunkConfig& cfg,
                          Rng& /*rng*/) const {
  const double dt = cfg.dt();
  Pose n = cur;
  n.frame_index = cur.frame_index + 1;

  const double target_yaw = target.yaw();
  const double target_pitch =
      std::clamp(target.pitch(), -cfg.pitch_limit, cfg.pitch_limit);

  const double max_turn = cfg.omega_max * dt;
  n.pelvis_heading = wrap_angle(
      cur.pelvis_heading +
      std::clamp(wrap_angle(target_yaw - cur.pelvis_heading), -max_turn, max_turn));

  const Vec2 to = target.translation.head<2>() - cur.pelvis_xy;
  const double dist = to.norm();
  if (dist > 1e-12) {
    const Vec2 dir = to / dist;
    const double angle = std::acos(std::clamp(dir.dot(heading_dir(n.pelvis_heading)), -1.0, 1.0));
    n.pelvis_xy = cur.pelvis_xy + dir * std::min(cfg.speed_cap(angle) * dt, dist);
  }

  const double z_goal = std::clamp(target.translation.z(), cfg.head_z_min, cfg.head_z_max);
  const double max_dz = cfg.head_z_rate * dt;
  n.head_pos = {n.pelvis_xy.x(), n.pelvis_xy.y(),
                cur.head_pos.z() + std::clamp(z_goal - cur.head_pos.z(), -max_dz, max_dz)};

  const double yaw_goal =
      n.pelvis_heading + std::clamp(wrap_angle(target_yaw - n.pelvis_heading),
                                    -cfg.neck_limit, cfg.neck_limit);
  const double max_dyaw = cfg.head_omega * dt;
  n.head_yaw = wrap_angle(
      cur.head_yaw + std::clamp(wrap_angle(yaw_goal - cur.head_yaw), -max_dyaw, max_dyaw));
  const double max_dpitch = cfg.pitch_rate * dt;
  n.head_pitch = cur.head_pitch +
                 std::clamp(target_pitch - cur.head_pitch, -max_dpitch, max_dpitch);

  // Alternating gait: one foot may swing per half cycle, the other is planted.
  const int hc = cfg.half_cycle_frames();
  const std::int64_t phase = ((n.frame_index % (2 * hc)) + 2 * hc) % (2 * hc);
  const bool swing_left = phase < hc;
  const int k = static_cast<int>(phase % hc);
  Vec3& foot = swing_left ? n.left_foot : n.right_foot;
  const double side = swing_left ? 1.0 : -1.0;
  const Vec2 vel = n.pelvis_xy - cur.pelvis_xy;
  const int remaining = hc - k;
  const Vec2 landing = n.pelvis_xy + vel * (remaining - 1 + 0.5 * hc) +
                       heading_dir(n.pelvis_heading + kPi / 2.0) * side * cfg.foot_lateral;
  const bool airborne = foot.z() > 0.0;
  const bool lift = k == 0 && (landing - foot.head<2>()).norm() > 0.01;
  if (lift || (airborne && k > 0)) {
    foot.head<2>() += (landing - foot.head<2>()) / remaining;
    foot.z() = (k == hc - 1) ? 0.0 : cfg.swing_height * std::sin(kPi * (k + 1) / hc);
  }
  clamp_pose(n, cfg);
  return n;
}

MotionChunk rollout(const MotionPrior& prior, const Pose& p0,
                    const HeadPose& target, const ChunkConfig& cfg, Rng& rng,
                    const FrameFilter& filter) {
  const double z = target.translation.z();
  if (!(z >= cfg.head_z_min && z <= cfg.head_z_max)) {
    throw InfeasibleTarget("head target height " + std::to_string(z) +
                           " outside [" + std::to_string(cfg.head_z_min) + ", " +
                           std::to_string(cfg.head_z_max) + "]");
  }
  MotionChunk chunk;
  chunk.poses.reserve(cfg.T_frames);
  Pose cur = p0;
  for (int f = 0; f < cfg.T_frames; ++f) {
    Pose nxt = prior.next(cur, target, cfg.T_frames - f, cfg, rng);
    if (filter) filter(cur, nxt);
    chunk.poses.push_back(nxt);
    cur = nxt;
    if (head_reached(cur, target, cfg.tol)) {
      chunk.reached = true;
      break;
    }
  }
  chunk.displacement = (cur.pelvis_xy - p0.pelvis_xy).norm();
  return chunk;
}

MotionChunk kinematic_rollout(const Pose& p0, const HeadPose& target,
                              const ChunkConfig& cfg) {
  Rng unused(0);
  return rollout(KinematicPrior{}, p0, target, cfg, unused);
}

namespace {

enum class Segment { kForward, kArc, kTurn, kStop, kBackward, kSidestep };

Segment pick_segment(Rng& rng) {
  static const std::array<double, 6> weights{0.30, 0.20, 0.15, 0.10, 0.12, 0.13};
  std::discrete_distribution<int> dist(weights.begin(), weights.end());
  return static_cast<Segment>(dist(rng));
}

}  // namespace

TrajectoryDataset synth_trajectories(std::uint64_t seed, int n_sequences,
                                     const SynthConfig& cfg) {
  if (n_sequences <= 0) throw Error("synth_trajectories: n_sequences must be > 0");
  const ChunkConfig& cc = cfg.chunk;
  const KinematicPrior prior;
  TrajectoryDataset ds;
  ds.fps = cc.fps;
  Rng rng(seed);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto sign = [&]() { return std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0; };

  for (int s = 0; s < n_sequences; ++s) {
    const auto n_frames = static_cast<std::size_t>(
        std::lround(uni(cfg.min_seconds, cfg.max_seconds) * cc.fps));
    std::vector<Pose> seq{standing_pose(Vec2::Zero(), uni(-kPi, kPi), 1.6)};
    while (seq.size() < n_frames) {
      const Pose& cur = seq.back();
      double fwd = 0.0, left = 0.0, dyaw = 0.0;
      int hold = 0;
      switch (pick_segment(rng)) {
        case Segment::kForward:
          fwd = uni(0.6, 1.5); left = uni(-0.1, 0.1); dyaw = deg2rad(uni(-10, 10));
          break;
        case Segment::kArc:
          fwd = uni(0.4, 1.2); dyaw = sign() * deg2rad(uni(30, 90));
          left = (dyaw > 0 ? 1.0 : -1.0) * uni(0.1, 0.4);
          break;
        case Segment::kTurn:
          dyaw = sign() * deg2rad(uni(45, 180));
          break;
        case Segment::kStop:
          hold = static_cast<int>(uni(10, 40));
          break;
        case Segment::kBackward:
          fwd = -uni(0.2, 0.5); dyaw = deg2rad(uni(-10, 10));
          break;
        case Segment::kSidestep:
          left = sign() * uni(0.2, 0.5); fwd = uni(-0.1, 0.2);
          break;
      }
      if (hold > 0) {
        const HeadPose here = head_pose(cur);
        for (int i = 0; i < hold && seq.size() < n_frames; ++i) {
          seq.push_back(rollout(prior, seq.back(), here, cc, rng).poses.back());
        }
        continue;
      }
      const double yaw0 = cur.head_yaw;
      const Vec2 offset = heading_dir(yaw0) * fwd + heading_dir(yaw0 + kPi / 2.0) * left;
      HeadPose target;
      target.translation = {cur.head_pos.x() + offset.x(), cur.head_pos.y() + offset.y(),
                            std::clamp(cur.head_pos.z() + uni(-0.05, 0.05), 1.5, 1.75)};
      target.rotation = yaw_pitch_rotation(wrap_angle(yaw0 + dyaw), deg2rad(uni(-15, 15)));
      for (const Pose& p : rollout(prior, cur, target, cc, rng).poses) {
        if (seq.size() >= n_frames) break;
        seq.push_back(p);
      }
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

namespace {

constexpr char kDatasetMagic[4] = {'E', 'G', 'T', 'D'};
constexpr std::uint32_t kDatasetVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error("dataset: truncated header");
  return v;
}

}  // namespace

void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write(kDatasetMagic, 4);
  put_u32(os, kDatasetVersion);
  put_u32(os, static_cast<std::uint32_t>(ds.fps));
  put_u32(os, Pose::kDim);
  put_u32(os, static_cast<std::uint32_t>(ds.sequences.size()));
  for (const auto& seq : ds.sequences) {
    put_u32(os, static_cast<std::uint32_t>(seq.size()));
    for (const Pose& p : seq) {
      const Eigen::Matrix<float, Pose::kDim, 1> row = p.to_row().cast<float>();
      os.write(reinterpret_cast<const char*>(row.data()), sizeof(float) * Pose::kDim);
    }
  }
  if (!os) throw Error("write failed: " + path.string());
}

TrajectoryDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw Error("dataset: bad magic in " + path.string());
  }
  if (get_u32(is) != kDatasetVersion) throw Error("dataset: unsupported version");
  TrajectoryDataset ds;
  ds.fps = static_cast<int>(get_u32(is));
  if (get_u32(is) != Pose::kDim) throw Error("dataset: pose_dim mismatch");
  const std::uint32_t n = get_u32(is);
  ds.sequences.resize(n);
  for (auto& seq : ds.sequences) {
    seq.resize(get_u32(is));
    for (Pose& p : seq) {
      Eigen::Matrix<float, Pose::kDim, 1> row;
      if (!is.read(reinterpret_cast<char*>(row.data()), sizeof(float) * Pose::kDim)) {
        throw Error("dataset: truncated frame data");
      }
      p = Pose::from_row(row.cast<double>());
    }
  }
  return ds;
}

}  // namespace egonav
