#pragma once

#include "egonav/body.hpp"
#include "egonav/common.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace egonav {

// Semantic labels. Obstacles cycle through kFirstObstacleClass + [0, 8).
inline constexpr int kFloorClass = 0;
inline constexpr int kWallClass = 1;
inline constexpr int kFirstObstacleClass = 2;
inline constexpr int kNumObstacleClasses = 8;
inline constexpr int kGoalClass = 10;

bool class_in_palette(int semantic_class);
Vec3 palette_color(int semantic_class);

struct SceneBox {
  Vec3 min_corner = Vec3::Zero();
  Vec3 max_corner = Vec3::Ones();
  int semantic_class = kFirstObstacleClass;
  Vec3 color = Vec3::Ones();
};

struct FloorRect {
  Vec2 min = Vec2::Zero();
  Vec2 max = Vec2::Ones();

  bool contains(const Vec2& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

struct Scene {
  std::string id = "scene";
  FloorRect bounds;
  std::vector<SceneBox> boxes;
  int floor_class = kFloorClass;
  int wall_class = kWallClass;
};

struct GoalSpec {
  Vec3 center = Vec3::Zero();
  double radius = 0.15;
  int semantic_class = kGoalClass;
};

struct Disc {
  Vec2 center = Vec2::Zero();
  double radius = 0.3;
};

struct Contact {
  bool hit = false;
  double depth = 0.0;
};

class SceneParseError : public Error {
 public:
  using Error::Error;
};

class SceneValidationError : public Error {
 public:
  SceneValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Throws SceneValidationError naming the first offending field.
void validate_scene(const Scene& scene);

inline constexpr int kSceneFormatVersion = 1;

std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text);
void save_scene(const Scene& scene, const std::filesystem::path& path);
Scene load_scene(const std::filesystem::path& path);

/// Four perimeter walls hugging the outside of `bounds`.
std::vector<SceneBox> perimeter_walls(const FloorRect& bounds,
                                      double height = 2.5, double thickness = 0.2);

struct SceneParams {
  double width = 8.0;
  double depth = 8.0;
  int n_obstacles = 6;
  double min_box_size = 0.4;
  double max_box_size = 1.4;
  double min_box_height = 0.5;
  double max_box_height = 2.0;
  double clutter_spacing = 0.9;
  int max_retries = 2000;
};

Scene generate_scene(std::uint64_t seed, const SceneParams& params);

/// Empty straight corridor along +x.
Scene corridor_scene(double length = 8.0, double width = 2.4);

/// Footprint-level overlap of a disc with every box. Tangency is not a hit.
Contact collide(const Scene& scene, const Disc& disc);

/// Signed distance from a point to a box footprint (negative inside).
double footprint_signed_distance(const SceneBox& box, const Vec2& p);

struct SamplingParams {
  double body_radius = 0.30;
  double goal_radius = 0.15;
  double goal_height = 1.3;
  double min_separation = 1.0;
  double head_height = 1.6;
  int max_attempts = 10000;
  // Optional restrictions, used by fixed-layout scenes such as the corridor.
  std::optional<FloorRect> start_region;
  std::optional<FloorRect> goal_region;
  double heading_min = 0.0;
  double heading_max = 2.0 * kPi;
};

struct StartGoal {
  Pose start_pose;
  GoalSpec goal;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

StartGoal sample_start_goal(const Scene& scene, std::uint64_t rng_seed,
                            const SamplingParams& params = {});

/// True if the 1 x 1 m square with lower corner `corner` is box free.
bool free_square(const Scene& scene, const Vec2& corner, double side = 1.0);

}  // namespace egonav
