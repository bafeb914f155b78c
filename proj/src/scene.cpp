#include "egonav/scene.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <fstream>
#include <sstream>

namespace egonav {

namespace {

using ordered_json = nlohmann::ordered_json;

const std::array<Vec3, kNumObstacleClasses> kObstacleColors{
    Vec3{0.90, 0.60, 0.10}, Vec3{0.20, 0.60, 0.90}, Vec3{0.30, 0.80, 0.30},
    Vec3{0.70, 0.30, 0.80}, Vec3{0.90, 0.90, 0.20}, Vec3{0.10, 0.80, 0.80},
    Vec3{0.60, 0.40, 0.20}, Vec3{0.95, 0.50, 0.70}};

constexpr double kTol = 1e-9;

double footprint_gap(const SceneBox& a, const SceneBox& b) {
  const double dx = std::max({0.0, a.min_corner.x() - b.max_corner.x(),
                              b.min_corner.x() - a.max_corner.x()});
  const double dy = std::max({0.0, a.min_corner.y() - b.max_corner.y(),
                              b.min_corner.y() - a.max_corner.y()});
  return std::hypot(dx, dy);
}

ordered_json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> json_vec(const ordered_json& j, const std::string& field) {
  if (!j.is_array() || j.size() != N) {
    throw SceneParseError(field + ": expected array of " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) {
    if (!j[i].is_number()) throw SceneParseError(field + ": non-numeric entry");
    v[i] = j[i].get<double>();
  }
  return v;
}

const ordered_json& require(const ordered_json& j, const char* key, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key)) {
    throw SceneParseError(ctx + (ctx.empty() ? "" : ".") + key + ": missing");
  }
  return j.at(key);
}

bool covers_edge(const SceneBox& b, double fixed, int axis, double lo, double hi) {
  const int other = 1 - axis;
  return b.min_corner[axis] <= fixed + kTol && b.max_corner[axis] >= fixed - kTol &&
         b.min_corner[other] <= lo + kTol && b.max_corner[other] >= hi - kTol;
}

}  // namespace

bool class_in_palette(int c) {
  return c == kFloorClass || c == kWallClass || c == kGoalClass ||
         (c >= kFirstObstacleClass && c < kFirstObstacleClass + kNumObstacleClasses);
}

Vec3 palette_color(int c) {
  if (c == kFloorClass) return {0.5, 0.5, 0.5};
  if (c == kWallClass) return {1.0, 1.0, 1.0};
  if (c == kGoalClass) return {1.0, 0.0, 0.0};
  if (c >= kFirstObstacleClass && c < kFirstObstacleClass + kNumObstacleClasses) {
    return kObstacleColors[c - kFirstObstacleClass];
  }
  throw Error("semantic class " + std::to_string(c) + " not in palette");
}

void validate_scene(const Scene& s) {
  const FloorRect& b = s.bounds;
  if (!b.min.allFinite() || !b.max.allFinite() || !(b.max.array() > b.min.array()).all()) {
    throw SceneValidationError("bounds", "degenerate floor rectangle");
  }
  if (!class_in_palette(s.floor_class)) throw SceneValidationError("floor_class", "not in palette");
  if (!class_in_palette(s.wall_class)) throw SceneValidationError("wall_class", "not in palette");
  for (std::size_t i = 0; i < s.boxes.size(); ++i) {
    const SceneBox& box = s.boxes[i];
    const std::string f = "boxes[" + std::to_string(i) + "]";
    if (!box.min_corner.allFinite() || !box.max_corner.allFinite()) {
      throw SceneValidationError(f + ".min", "non-finite corner");
    }
    if (!(box.min_corner.array() < box.max_corner.array()).all()) {
      throw SceneValidationError(f + ".max", "min_corner must be < max_corner componentwise");
    }
    if (box.min_corner.z() < 0.0) throw SceneValidationError(f + ".min", "box below floor plane");
    if (!class_in_palette(box.semantic_class) || box.semantic_class == kGoalClass) {
      throw SceneValidationError(f + ".class", "not an obstacle or wall label");
    }
    if (!((box.color.array() >= 0.0).all() && (box.color.array() <= 1.0).all())) {
      throw SceneValidationError(f + ".color", "components must lie in [0, 1]");
    }
  }
  struct Edge { const char* name; int axis; double fixed, lo, hi; };
  const std::array<Edge, 4> edges{{
      {"west", 0, b.min.x(), b.min.y(), b.max.y()},
      {"east", 0, b.max.x(), b.min.y(), b.max.y()},
      {"south", 1, b.min.y(), b.min.x(), b.max.x()},
      {"north", 1, b.max.y(), b.min.x(), b.max.x()},
  }};
  for (const Edge& e : edges) {
    const bool ok = std::any_of(s.boxes.begin(), s.boxes.end(), [&](const SceneBox& box) {
      return box.semantic_class == s.wall_class && covers_edge(box, e.fixed, e.axis, e.lo, e.hi);
    });
    if (!ok) throw SceneValidationError("boxes", std::string("no perimeter wall on ") + e.name + " edge");
  }
}

std::string scene_to_json(const Scene& s) {
  ordered_json j;
  j["version"] = kSceneFormatVersion;
  j["id"] = s.id;
  j["bounds"] = {{"min", vec_json(s.bounds.min)}, {"max", vec_json(s.bounds.max)}};
  j["floor_class"] = s.floor_class;
  j["wall_class"] = s.wall_class;
  ordered_json boxes = ordered_json::array();
  for (const SceneBox& b : s.boxes) {
    ordered_json jb;
    jb["min"] = vec_json(b.min_corner);
    jb["max"] = vec_json(b.max_corner);
    jb["class"] = b.semantic_class;
    jb["color"] = vec_json(b.color);
    boxes.push_back(std::move(jb));
  }
  j["boxes"] = std::move(boxes);
  return j.dump(2) + "\n";
}

Scene scene_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SceneParseError(std::string("malformed scene file: ") + e.what());
  }
  const ordered_json& version = require(j, "version", "");
  if (!version.is_number_integer() || version.get<int>() != kSceneFormatVersion) {
    throw SceneParseError("version: unsupported scene format version");
  }
  Scene s;
  if (j.contains("id")) {
    if (!j["id"].is_string()) throw SceneParseError("id: expected string");
    s.id = j["id"].get<std::string>();
  }
  const ordered_json& bounds = require(j, "bounds", "");
  s.bounds.min = json_vec<2>(require(bounds, "min", "bounds"), "bounds.min");
  s.bounds.max = json_vec<2>(require(bounds, "max", "bounds"), "bounds.max");
  if (j.contains("floor_class")) s.floor_class = j["floor_class"].get<int>();
  if (j.contains("wall_class")) s.wall_class = j["wall_class"].get<int>();
  const ordered_json& boxes = require(j, "boxes", "");
  if (!boxes.is_array()) throw SceneParseError("boxes: expected array");
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const std::string f = "boxes[" + std::to_string(i) + "]";
    const ordered_json& jb = boxes[i];
    SceneBox b;
    b.min_corner = json_vec<3>(require(jb, "min", f), f + ".min");
    b.max_corner = json_vec<3>(require(jb, "max", f), f + ".max");
    const ordered_json& cls = require(jb, "class", f);
    if (!cls.is_number_integer()) throw SceneParseError(f + ".class: expected integer");
    b.semantic_class = cls.get<int>();
    b.color = jb.contains("color") ? json_vec<3>(jb["color"], f + ".color")
                                   : (class_in_palette(b.semantic_class) ? palette_color(b.semantic_class)
                                                                         : Vec3::Zero());
    s.boxes.push_back(b);
  }
  validate_scene(s);
  return s;
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << scene_to_json(scene);
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return scene_from_json(ss.str());
}

std::vector<SceneBox> perimeter_walls(const FloorRect& b, double height, double t) {
  const Vec3 c = palette_color(kWallClass);
  return {
      {{b.min.x() - t, b.min.y() - t, 0.0}, {b.min.x(), b.max.y() + t, height}, kWallClass, c},
      {{b.max.x(), b.min.y() - t, 0.0}, {b.max.x() + t, b.max.y() + t, height}, kWallClass, c},
      {{b.min.x(), b.min.y() - t, 0.0}, {b.max.x(), b.min.y(), height}, kWallClass, c},
      {{b.min.x(), b.max.y(), 0.0}, {b.max.x(), b.max.y() + t, height}, kWallClass, c},
  };
}

bool free_square(const Scene& scene, const Vec2& corner, double side) {
  SceneBox cell;
  cell.min_corner = {corner.x(), corner.y(), 0.0};
  cell.max_corner = {corner.x() + side, corner.y() + side, 1.0};
  if (!scene.bounds.contains(corner) || !scene.bounds.contains(corner + Vec2::Constant(side))) {
    return false;
  }
  return std::none_of(scene.boxes.begin(), scene.boxes.end(), [&](const SceneBox& b) {
    return b.min_corner.x() < cell.max_corner.x() && b.max_corner.x() > cell.min_corner.x() &&
           b.min_corner.y() < cell.max_corner.y() && b.max_corner.y() > cell.min_corner.y();
  });
}

Scene generate_scene(std::uint64_t seed, const SceneParams& p) {
  if (!(p.width > 0 && p.depth > 0 && p.min_box_size > 0 && p.max_box_size >= p.min_box_size &&
        p.min_box_height > 0 && p.max_box_height >= p.min_box_height &&
        p.clutter_spacing >= 0 && p.n_obstacles >= 0 && p.max_retries > 0)) {
    throw Error("generate_scene: invalid parameters");
  }
  Rng rng(seed);
  auto uni = [&](double a, double b) {
    return a == b ? a : std::uniform_real_distribution<double>(a, b)(rng);
  };
  Scene s;
  s.id = "gen-" + std::to_string(seed);
  s.bounds = {{0.0, 0.0}, {p.width, p.depth}};
  s.boxes = perimeter_walls(s.bounds);
  const std::size_t n_walls = s.boxes.size();
  for (int i = 0; i < p.n_obstacles; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < p.max_retries && !placed; ++attempt) {
      const Vec2 size{uni(p.min_box_size, p.max_box_size), uni(p.min_box_size, p.max_box_size)};
      const double lo_x = p.clutter_spacing, hi_x = p.width - p.clutter_spacing - size.x();
      const double lo_y = p.clutter_spacing, hi_y = p.depth - p.clutter_spacing - size.y();
      if (hi_x < lo_x || hi_y < lo_y) continue;
      SceneBox b;
      b.min_corner = {uni(lo_x, hi_x), uni(lo_y, hi_y), 0.0};
      b.max_corner = {b.min_corner.x() + size.x(), b.min_corner.y() + size.y(),
                      uni(p.min_box_height, p.max_box_height)};
      b.semantic_class = kFirstObstacleClass + i % kNumObstacleClasses;
      b.color = palette_color(b.semantic_class);
      const bool clear = std::all_of(s.boxes.begin() + n_walls, s.boxes.end(), [&](const SceneBox& o) {
        return footprint_gap(b, o) >= p.clutter_spacing;
      });
      if (clear) {
        s.boxes.push_back(b);
        placed = true;
      }
    }
    if (!placed) {
      throw Error("generate_scene: could not place obstacle " + std::to_string(i) +
                  " after " + std::to_string(p.max_retries) + " attempts");
    }
  }
  bool has_free = false;
  for (double x = 0.0; x + 1.0 <= p.width && !has_free; x += 0.25) {
    for (double y = 0.0; y + 1.0 <= p.depth && !has_free; y += 0.25) {
      has_free = free_square(s, {x, y});
    }
  }
  if (!has_free) throw Error("generate_scene: no free 1 m^2 cell; parameters infeasible");
  return s;
}

Scene corridor_scene(double length, double width) {
  Scene s;
  s.id = "corridor";
  s.bounds = {{0.0, 0.0}, {length, width}};
  s.boxes = perimeter_walls(s.bounds);
  return s;
}

double footprint_signed_distance(const SceneBox& box, const Vec2& p) {
  const Vec2 lo = box.min_corner.head<2>(), hi = box.max_corner.head<2>();
  const Vec2 d = (lo - p).cwiseMax(p - hi);
  const double outside = d.cwiseMax(0.0).norm();
  const double inside = std::min(d.maxCoeff(), 0.0);
  return outside + inside;
}

Contact collide(const Scene& scene, const Disc& disc) {
  Contact c;
  for (const SceneBox& b : scene.boxes) {
    const double pen = disc.radius - footprint_signed_distance(b, disc.center);
    if (pen > 0.0) {
      c.hit = true;
      c.depth = std::max(c.depth, pen);
    }
  }
  return c;
}

StartGoal sample_start_goal(const Scene& scene, std::uint64_t rng_seed, const SamplingParams& sp) {
  Rng rng(rng_seed);
  const FloorRect start_region = sp.start_region.value_or(scene.bounds);
  const FloorRect goal_region = sp.goal_region.value_or(scene.bounds);
  auto point_in = [&](const FloorRect& r) {
    return Vec2{std::uniform_real_distribution<double>(r.min.x(), r.max.x())(rng),
                std::uniform_real_distribution<double>(r.min.y(), r.max.y())(rng)};
  };
  for (int attempt = 0; attempt < sp.max_attempts; ++attempt) {
    const Vec2 start = point_in(start_region);
    const double heading = std::uniform_real_distribution<double>(sp.heading_min, sp.heading_max)(rng);
    const Vec2 goal = point_in(goal_region);
    if (!scene.bounds.contains(start) || !scene.bounds.contains(goal)) continue;
    if (collide(scene, {start, sp.body_radius}).hit) continue;
    if (collide(scene, {goal, std::max(sp.body_radius, sp.goal_radius)}).hit) continue;
    if ((goal - start).norm() < sp.min_separation) continue;
    StartGoal sg;
    sg.start_pose = standing_pose(start, heading, sp.head_height);
    sg.goal.center = {goal.x(), goal.y(), sp.goal_height};
    sg.goal.radius = sp.goal_radius;
    return sg;
  }
  throw SamplingError("sample_start_goal: no valid placement after " +
                      std::to_string(sp.max_attempts) + " attempts");
}

}  // namespace egonav
