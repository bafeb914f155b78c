#include "egonav/scene.hpp"

#include <doctest.h>

#include <algorithm>

using namespace egonav;

namespace {

// Point-to-rectangle distance written out per axis.
double rect_distance(const SceneBox& b, const Vec2& p) {
  const double dx = std::max({b.min_corner.x() - p.x(), 0.0, p.x() - b.max_corner.x()});
  const double dy = std::max({b.min_corner.y() - p.y(), 0.0, p.y() - b.max_corner.y()});
  return std::hypot(dx, dy);
}

bool oracle_hit(const Scene& s, const Disc& d) {
  for (const auto& b : s.boxes) {
    const bool inside = d.center.x() > b.min_corner.x() && d.center.x() < b.max_corner.x() &&
                        d.center.y() > b.min_corner.y() && d.center.y() < b.max_corner.y();
    if (inside || rect_distance(b, d.center) < d.radius) return true;
  }
  return false;
}

SceneBox box(Vec2 lo, Vec2 hi, double h = 1.0) {
  SceneBox b;
  b.min_corner = Vec3(lo.x(), lo.y(), 0.0);
  b.max_corner = Vec3(hi.x(), hi.y(), h);
  return b;
}

}  // namespace

TEST_CASE("scene file with one box and four walls loads as five boxes") {
  const std::string text = R"({
    "version": 1, "id": "mini",
    "bounds": {"min": [0, 0], "max": [4, 3]},
    "floor_class": 0, "wall_class": 1,
    "boxes": [
      {"min": [-0.2, -0.2, 0], "max": [0, 3.2, 2.5], "class": 1, "color": [1, 1, 1]},
      {"min": [4, -0.2, 0], "max": [4.2, 3.2, 2.5], "class": 1, "color": [1, 1, 1]},
      {"min": [0, -0.2, 0], "max": [4, 0, 2.5], "class": 1, "color": [1, 1, 1]},
      {"min": [0, 3, 0], "max": [4, 3.2, 2.5], "class": 1, "color": [1, 1, 1]},
      {"min": [1, 1, 0], "max": [2, 2, 1], "class": 3, "color": [0.2, 0.4, 0.6]}
    ]})";
  const Scene s = scene_from_json(text);
  CHECK(s.id == "mini");
  CHECK(s.boxes.size() == 5);
  CHECK(s.boxes[4].semantic_class == 3);
}

TEST_CASE("degenerate box is rejected naming the field") {
  Scene s = corridor_scene();
  s.boxes.push_back(box({1, 1}, {1, 1}));
  CHECK_THROWS_AS(validate_scene(s), SceneValidationError);
  try {
    validate_scene(s);
  } catch (const SceneValidationError& e) {
    CHECK(e.field().find("boxes") != std::string::npos);
  }
  CHECK_THROWS_AS(scene_from_json(scene_to_json(s)), SceneValidationError);
}

TEST_CASE("malformed scene text is a parse error") {
  CHECK_THROWS_AS(scene_from_json("{ not json"), SceneParseError);
}

TEST_CASE("canonical serialization round-trips byte for byte") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SceneParams p;
    p.n_obstacles = static_cast<int>(seed % 9);
    const Scene s = generate_scene(seed, p);
    const std::string a = scene_to_json(s);
    const Scene back = scene_from_json(a);
    CHECK(scene_to_json(back) == a);
    CHECK_NOTHROW(validate_scene(back));
  }
}

TEST_CASE("procedural generation") {
  SceneParams p;
  p.n_obstacles = 0;
  CHECK(generate_scene(7, p).boxes.size() == 4);

  p.n_obstacles = 6;
  CHECK(scene_to_json(generate_scene(7, p)) == scene_to_json(generate_scene(7, p)));
  CHECK(scene_to_json(generate_scene(7, p)) != scene_to_json(generate_scene(8, p)));

  const Scene s = generate_scene(7, p);
  CHECK(s.boxes.size() == 10);
  for (const auto& b : s.boxes) CHECK(class_in_palette(b.semantic_class));
}

TEST_CASE("disc collision examples") {
  Scene s;
  s.bounds = {Vec2(0, 0), Vec2(10, 10)};
  s.boxes.push_back(box({4, 4}, {6, 6}));

  Contact far = collide(s, {Vec2(1, 1), 0.3});
  CHECK_FALSE(far.hit);
  CHECK(far.depth == 0.0);

  Contact in = collide(s, {Vec2(5, 5.2), 0.3});
  CHECK(in.hit);
  CHECK(in.depth >= 0.3);

  Contact tangent = collide(s, {Vec2(3.75, 5.0), 0.25});
  CHECK_FALSE(tangent.hit);
  CHECK(tangent.depth == 0.0);

  // Off a corner: distance is to the corner point.
  const Vec2 c(6.0 + 0.2, 6.0 + 0.1);
  const double dist = std::hypot(0.2, 0.1);
  Contact corner = collide(s, {c, 0.3});
  CHECK(corner.hit);
  CHECK(corner.depth == doctest::Approx(0.3 - dist).epsilon(1e-12));
}

TEST_CASE("collide agrees with a point-to-rectangle oracle, ignores box order, is 1-Lipschitz") {
  SceneParams p;
  p.n_obstacles = 6;
  Rng rng(5);
  std::uniform_real_distribution<double> u(-0.5, 8.5), r(0.05, 0.8), step(-1.0, 1.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Scene s = generate_scene(seed, p);
    Scene shuffled = s;
    std::shuffle(shuffled.boxes.begin(), shuffled.boxes.end(), rng);
    for (int k = 0; k < 200; ++k) {
      const Disc d{Vec2(u(rng), u(rng)), r(rng)};
      const Contact c = collide(s, d);
      const Contact c2 = collide(shuffled, d);
      if (oracle_hit(s, d) != c.hit) {
        // Only exact tangency may differ from a strict oracle.
        bool near_tangent = false;
        for (const auto& b : s.boxes) near_tangent |= std::abs(rect_distance(b, d.center) - d.radius) < 1e-12;
        CHECK(near_tangent);
      }
      CHECK(c.hit == c2.hit);
      CHECK(c.depth == doctest::Approx(c2.depth).epsilon(1e-15));

      const double eps = 1e-3;
      Disc moved = d;
      moved.center += eps * Vec2(step(rng), step(rng)).normalized();
      CHECK(std::abs(collide(s, moved).depth - c.depth) <= eps + 1e-12);
    }
  }
}

TEST_CASE("start/goal sampling") {
  SceneParams p;
  p.n_obstacles = 0;
  const Scene empty = generate_scene(3, p);
  for (std::uint64_t i = 0; i < 50; ++i) CHECK_NOTHROW(sample_start_goal(empty, i));

  p.n_obstacles = 6;
  const Scene s = generate_scene(11, p);
  SamplingParams sp;
  int colliding = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const StartGoal sg = sample_start_goal(s, i, sp);
    colliding += oracle_hit(s, {sg.start_pose.pelvis_xy, sp.body_radius}) ? 1 : 0;
    colliding += oracle_hit(s, {sg.goal.center.head<2>(), sp.goal_radius}) ? 1 : 0;
    CHECK((sg.goal.center.head<2>() - sg.start_pose.pelvis_xy).norm() >= sp.min_separation);
  }
  CHECK(colliding == 0);

  const StartGoal a = sample_start_goal(s, 99, sp), b = sample_start_goal(s, 99, sp);
  CHECK(a.start_pose.to_row() == b.start_pose.to_row());
  CHECK(a.goal.center == b.goal.center);
}

TEST_CASE("sampling in a blocked room fails") {
  Scene s = corridor_scene(2.0, 1.0);
  s.boxes.push_back(box({0, 0}, {2, 1}));
  SamplingParams sp;
  sp.max_attempts = 50;
  CHECK_THROWS_AS(sample_start_goal(s, 1, sp), SamplingError);
}

TEST_CASE("generated scenes survive a save/load cycle") {
  const auto dir = std::filesystem::temp_directory_path() / "egonav_scene_test";
  std::filesystem::create_directories(dir);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = generate_scene(seed, {});
    save_scene(s, dir / "s.json");
    const Scene back = load_scene(dir / "s.json");
    CHECK(scene_to_json(back) == scene_to_json(s));
  }
  std::filesystem::remove_all(dir);
}
