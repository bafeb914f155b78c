#include "egonav/ego_sensor.hpp"

#include <cstring>
#include <fstream>
#include <functional>
#include <limits>

namespace egonav {

void CameraConfig::validate() const {
  if (width <= 0 || height <= 0) throw Error("camera: width and height must be positive");
  if (!(horizontal_fov > 0.0 && horizontal_fov < kPi)) throw Error("camera: fov must lie in (0, pi)");
  if (!(max_depth > 0.0)) throw Error("camera: max_depth must be positive");
}

CameraPose camera_pose(const HeadPose& head, const CameraConfig& cfg) {
  const double s = cfg.reversed ? -1.0 : 1.0;
  const Vec3 forward = s * head.rotation.col(0);
  const Vec3 left = s * head.rotation.col(1);
  const Vec3 up = head.rotation.col(2);
  CameraPose cam;
  cam.origin = head.translation + cfg.forward_offset * forward;
  cam.world_from_camera.col(0) = -left;
  cam.world_from_camera.col(1) = up;
  cam.world_from_camera.col(2) = -forward;
  return cam;
}

Eigen::Matrix3Xd camera_rays(const CameraConfig& cfg) {
  cfg.validate();
  Eigen::Matrix3Xd rays(3, static_cast<Eigen::Index>(cfg.width) * cfg.height);
  const double th = cfg.tan_half_h();
  const double half_w = cfg.width / 2.0, half_h = cfg.height / 2.0;
  for (int r = 0; r < cfg.height; ++r) {
    for (int c = 0; c < cfg.width; ++c) {
      // Square pixels: both axes share the horizontal angular pitch.
      const double x = (c + 0.5 - half_w) / half_w * th;
      const double y = -(r + 0.5 - half_h) / half_w * th;
      rays.col(static_cast<Eigen::Index>(r) * cfg.width + c) = Vec3(x, y, -1.0).normalized();
    }
  }
  return rays;
}

std::optional<double> ray_box(const Vec3& o, const Vec3& d, const SceneBox& box) {
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double lo = box.min_corner[a], hi = box.max_corner[a];
    if (std::abs(d[a]) < 1e-300) {
      if (o[a] < lo || o[a] > hi) return std::nullopt;
      continue;
    }
    double t0 = (lo - o[a]) / d[a], t1 = (hi - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  if (t_exit < t_enter || t_exit <= 0.0) return std::nullopt;
  return t_enter > 0.0 ? t_enter : t_exit;
}

std::optional<double> ray_sphere(const Vec3& o, const Vec3& d, const Vec3& center, double radius) {
  const Vec3 oc = o - center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  if (-b - s > 0.0) return -b - s;
  if (-b + s > 0.0) return -b + s;
  return std::nullopt;
}

ObservationTensor render_ego(const Scene& scene, const GoalSpec& goal, const HeadPose& head,
                             const CameraConfig& cfg) {
  const Eigen::Matrix3Xd rays = camera_rays(cfg);
  const CameraPose cam = camera_pose(head, cfg);
  ObservationTensor obs(cfg.channels(), cfg.height, cfg.width);
  const Vec3 floor_color = palette_color(scene.floor_class);
  const Vec3 goal_color = palette_color(kGoalClass);

  for (int r = 0; r < cfg.height; ++r) {
    for (int c = 0; c < cfg.width; ++c) {
      const Vec3 d = cam.world_from_camera * rays.col(static_cast<Eigen::Index>(r) * cfg.width + c);
      double best = std::numeric_limits<double>::infinity();
      Vec3 color = Vec3::Zero();
      bool is_goal = false;
      if (d.z() < 0.0) {
        const double t = -cam.origin.z() / d.z();
        const Vec3 p = cam.origin + t * d;
        if (t > 0.0 && scene.bounds.contains(p.head<2>())) {
          best = t;
          color = floor_color;
        }
      }
      for (const SceneBox& box : scene.boxes) {
        if (auto t = ray_box(cam.origin, d, box); t && *t < best) {
          best = *t;
          color = box.color;
        }
      }
      if (auto t = ray_sphere(cam.origin, d, goal.center, goal.radius); t && *t < best) {
        best = *t;
        color = goal_color;
        is_goal = true;
      }
      if (std::isfinite(best)) {
        obs.at(0, r, c) = static_cast<float>(std::min(best / cfg.max_depth, 1.0));
        for (int k = 0; k < 3; ++k) obs.at(1 + k, r, c) = static_cast<float>(color[k]);
        obs.at(4, r, c) = is_goal ? 1.0f : 0.0f;
      } else {
        obs.at(0, r, c) = 1.0f;
      }
    }
  }
  if (cfg.goal_vector) {
    const Eigen::Vector3f offset =
        (head.rotation.transpose() * (goal.center - head.translation)).cast<float>();
    obs.goal_vector = offset;
    for (int k = 0; k < 3; ++k) {
      std::fill_n(obs.data.begin() + static_cast<std::ptrdiff_t>((5 + k) * obs.plane()), obs.plane(), offset[k]);
    }
  }
  return obs;
}

bool goal_visible(const Scene& scene, const GoalSpec& goal, const HeadPose& head,
                  const CameraConfig& cfg) {
  const CameraPose cam = camera_pose(head, cfg);
  const Vec3 v = goal.center - cam.origin;
  const double dist = v.norm();
  if (dist <= goal.radius) return true;
  const Vec3 vc = cam.world_from_camera.transpose() * v;
  if (vc.z() >= 0.0) return false;
  const double depth = -vc.z();
  if (std::abs(vc.x()) / depth > cfg.tan_half_h() || std::abs(vc.y()) / depth > cfg.tan_half_v()) {
    return false;
  }
  const Vec3 dir = v / dist;
  const double surface = dist - goal.radius;
  return std::none_of(scene.boxes.begin(), scene.boxes.end(), [&](const SceneBox& box) {
    const auto t = ray_box(cam.origin, dir, box);
    return t && *t < surface;
  });
}

std::uint64_t ObservationTensor::checksum() const {
  return fnv1a(std::string_view(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float)));
}

void save_observation(const ObservationTensor& obs, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write("EGOB", 4);
  for (int v : {obs.width, obs.height, obs.channels}) {
    const auto u = static_cast<std::uint32_t>(v);
    os.write(reinterpret_cast<const char*>(&u), sizeof u);
  }
  os.write(reinterpret_cast<const char*>(obs.data.data()),
           static_cast<std::streamsize>(obs.data.size() * sizeof(float)));
}

ObservationTensor load_observation(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[4];
  if (!is || !is.read(magic, 4) || std::memcmp(magic, "EGOB", 4) != 0) {
    throw Error("observation: bad header in " + path.string());
  }
  std::uint32_t hdr[3];
  if (!is.read(reinterpret_cast<char*>(hdr), sizeof hdr)) throw Error("observation: truncated header");
  ObservationTensor obs(static_cast<int>(hdr[2]), static_cast<int>(hdr[1]), static_cast<int>(hdr[0]));
  if (!is.read(reinterpret_cast<char*>(obs.data.data()),
               static_cast<std::streamsize>(obs.data.size() * sizeof(float)))) {
    throw Error("observation: truncated data");
  }
  if (obs.channels == 8) {
    obs.goal_vector = Eigen::Vector3f(obs.at(5, 0, 0), obs.at(6, 0, 0), obs.at(7, 0, 0));
  }
  return obs;
}

namespace {

void write_ppm(const std::filesystem::path& path, int w, int h,
               const std::function<Eigen::Vector3f(int, int)>& pixel) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << "P6\n" << w << " " << h << "\n255\n";
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Eigen::Vector3f p = pixel(r, c).cwiseMax(0.0f).cwiseMin(1.0f);
      for (int k = 0; k < 3; ++k) os.put(static_cast<char>(std::lround(p[k] * 255.0f)));
    }
  }
}

}  // namespace

void save_previews(const ObservationTensor& obs, const std::filesystem::path& stem) {
  const std::string base = stem.string();
  write_ppm(base + "_depth.ppm", obs.width, obs.height,
            [&](int r, int c) { return Eigen::Vector3f::Constant(obs.depth(r, c)); });
  write_ppm(base + "_semantic.ppm", obs.width, obs.height, [&](int r, int c) {
    return Eigen::Vector3f(obs.at(1, r, c), obs.at(2, r, c), obs.at(3, r, c));
  });
  write_ppm(base + "_mask.ppm", obs.width, obs.height,
            [&](int r, int c) { return Eigen::Vector3f::Constant(obs.mask(r, c)); });
}

}  // namespace egonav
