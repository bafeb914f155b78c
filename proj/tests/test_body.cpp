#include "egonav/body.hpp"
#include "egonav/environment.hpp"
#include "egonav/evaluation.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace egonav;

namespace {

Pose random_pose(Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Pose p = standing_pose(Vec2(3 * u(rng), 3 * u(rng)), kPi * u(rng), 1.6 + 0.2 * u(rng));
  p.head_yaw = p.pelvis_heading + 0.5 * u(rng);
  p.head_pitch = 0.3 * u(rng);
  p.left_foot.z() = 0.05 * (u(rng) + 1.0);
  return p;
}

HeadPose ahead_of(const Pose& p, double dist) {
  HeadPose h = head_pose(p);
  h.translation += dist * Vec3(std::cos(p.head_yaw), std::sin(p.head_yaw), 0.0);
  return h;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("pose deltas") {
  Rng rng(3);
  const Pose a = random_pose(rng);
  const Pose same = apply_delta(a, PoseDelta{});
  CHECK((same.to_row() - a.to_row()).norm() < 1e-12);

  const Pose b = random_pose(rng);
  const Pose b2 = apply_delta(a, pose_delta(a, b));
  Eigen::Matrix<double, Pose::kDim, 1> diff = b2.to_row() - b.to_row();
  diff[2] = wrap_angle(diff[2]);
  diff[6] = wrap_angle(diff[6]);
  CHECK(diff.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("chained deltas land on the direct endpoint") {
  Rng rng(8);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  const Pose p0 = random_pose(rng);
  Pose p = p0;
  for (int k = 0; k < 100; ++k) {
    PoseDelta d;
    for (int i = 0; i < PoseDelta::kDim; ++i) d.v[i] = u(rng);
    d.frame_step = 1;
    p = apply_delta(p, d);
  }
  const Pose direct = apply_delta(p0, pose_delta(p0, p));
  CHECK((direct.pelvis_xy - p.pelvis_xy).norm() < 1e-9);
  CHECK((direct.head_pos - p.head_pos).norm() < 1e-9);
  CHECK((direct.left_foot - p.left_foot).norm() < 1e-9);
  CHECK((direct.right_foot - p.right_foot).norm() < 1e-9);
  CHECK(std::abs(wrap_angle(direct.pelvis_heading - p.pelvis_heading)) < 1e-9);
  CHECK(direct.frame_index == p.frame_index);
}

TEST_CASE("head reach thresholds are closed") {
  const Pose p = standing_pose(Vec2(0, 0), 0.0);
  ReachTolerance tol;
  CHECK(head_reached(p, head_pose(p), tol));

  HeadPose off = head_pose(p);
  off.translation.x() += 0.2;
  CHECK_FALSE(head_reached(p, off, tol));

  off = head_pose(p);
  off.translation.y() += 0.25;
  tol.pos_m = 0.25;
  CHECK(head_reached(p, off, tol));
}

TEST_CASE("kinematic rollout examples") {
  const KinematicPrior prior;
  ChunkConfig cfg;
  Rng rng(1);
  const Pose p0 = standing_pose(Vec2(0, 0), 0.0);

  const MotionChunk stay = rollout(prior, p0, head_pose(p0), cfg, rng);
  CHECK(stay.poses.size() == 1);
  CHECK(stay.reached);

  const MotionChunk half = rollout(prior, p0, ahead_of(p0, 0.5), cfg, rng);
  CHECK(half.reached);
  CHECK(half.poses.size() <= 15);

  const MotionChunk far = rollout(prior, p0, ahead_of(p0, 5.0), cfg, rng);
  CHECK(far.poses.size() == 30);
  CHECK_FALSE(far.reached);
}

TEST_CASE("rollout invariants over random targets") {
  const KinematicPrior prior;
  ChunkConfig cfg;
  Rng rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const Pose p0 = random_pose(rng);
    HeadPose target = head_pose(p0);
    target.translation += Vec3(1.5 * u(rng), 1.5 * u(rng), 0.0);
    target.translation.z() = 1.55 + 0.3 * u(rng);
    target.rotation = yaw_pitch_rotation(p0.head_yaw + 2.0 * u(rng), 0.4 * u(rng));
    const MotionChunk ch = rollout(prior, p0, target, cfg, rng);
    Pose prev = p0;
    for (const Pose& p : ch.poses) {
      CHECK((p.pelvis_xy - prev.pelvis_xy).norm() * cfg.fps <= cfg.v_max + 1e-9);
      CHECK(std::abs(wrap_angle(p.pelvis_heading - prev.pelvis_heading)) * cfg.fps <= cfg.omega_max + 1e-9);
      CHECK(pose_valid(p, cfg));
      prev = p;
    }
    if (ch.reached) {
      CHECK(head_reached(ch.poses.back(), target, cfg.tol));
    } else {
      CHECK(ch.poses.size() == static_cast<std::size_t>(cfg.T_frames));
    }
  }
}

TEST_CASE("kinematic chunks never skate") {
  const KinematicPrior prior;
  ChunkConfig cfg;
  Rng rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  EpisodeTrace t;
  t.start = standing_pose(Vec2(0, 0), 0.0);
  Pose p = t.start;
  for (int k = 0; k < 60; ++k) {
    HeadPose target = head_pose(p);
    target.translation += Vec3(1.2 * u(rng), 0.8 * u(rng), 0.0);
    target.rotation = yaw_pitch_rotation(p.head_yaw + u(rng), 0.0);
    ActionRecord rec;
    rec.poses = rollout(prior, p, target, cfg, rng).poses;
    p = rec.poses.back();
    t.actions.push_back(rec);
  }
  CHECK(foot_skating({t}) == 0.0);
}

TEST_CASE("synthetic trajectories") {
  const auto dir = std::filesystem::temp_directory_path() / "egonav_body_test";
  std::filesystem::create_directories(dir);
  save_dataset(synth_trajectories(5, 1), dir / "a.egtd");
  save_dataset(synth_trajectories(5, 1), dir / "b.egtd");
  CHECK(slurp(dir / "a.egtd") == slurp(dir / "b.egtd"));

  SynthConfig sc;
  const TrajectoryDataset ds = synth_trajectories(9, 8, sc);
  CHECK(ds.sequences.size() == 8);
  std::vector<EpisodeTrace> traces;
  for (const auto& seq : ds.sequences) {
    CHECK(seq.size() >= static_cast<std::size_t>(sc.min_seconds * ds.fps) - 1);
    for (const Pose& p : seq) CHECK(pose_valid(p, sc.chunk));
    // Stance feet hold still: any ground-level foot either stays put or lifts.
    for (std::size_t i = 1; i < seq.size(); ++i) {
      for (auto foot : {&Pose::left_foot, &Pose::right_foot}) {
        const Vec3 a = seq[i - 1].*foot, b = seq[i].*foot;
        if (a.z() == 0.0 && b.z() == 0.0) CHECK((a - b).head<2>().norm() < 1e-6);
      }
    }
    EpisodeTrace t;
    t.start = seq.front();
    ActionRecord rec;
    rec.poses.assign(seq.begin() + 1, seq.end());
    t.actions.push_back(rec);
    traces.push_back(t);
  }
  CHECK(foot_skating(traces) == 0.0);

  const TrajectoryDataset back = load_dataset(dir / "a.egtd");
  CHECK(back.sequences.size() == 1);
  std::filesystem::remove_all(dir);
}
