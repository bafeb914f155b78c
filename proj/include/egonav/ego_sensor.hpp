#pragma once

#include "egonav/body.hpp"
#include "egonav/common.hpp"
#include "egonav/scene.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace egonav {

struct CameraConfig {
  int width = 64;
  int height = 64;
  double horizontal_fov = deg2rad(130.0);
  double max_depth = 10.0;
  double forward_offset = 0.10;  // camera origin ahead of the head joint
  bool reversed = false;         // sensor looks along -forward
  bool goal_vector = false;      // append goal offset planes

  /// tan of half the vertical FOV; pixels are square.
  double tan_half_h() const { return std::tan(horizontal_fov / 2.0); }
  double tan_half_v() const { return tan_half_h() * height / width; }
  int channels() const { return goal_vector ? 8 : 5; }
  void validate() const;
};

/// World placement of the camera. Columns of `world_from_camera` are the
/// camera's right, up and back axes (the camera looks along -z).
struct CameraPose {
  Vec3 origin = Vec3::Zero();
  Mat3 world_from_camera = Mat3::Identity();
};

CameraPose camera_pose(const HeadPose& head, const CameraConfig& cfg);

/// Unit ray directions in the camera frame, one column per pixel, row-major
/// pixel order (row 0 is the top of the image).
Eigen::Matrix3Xd camera_rays(const CameraConfig& cfg);

/// Multi-channel ego view in channel-major (C, H, W) layout:
/// 0 depth, 1..3 semantic RGB, 4 goal mask, 5..7 goal offset (optional).
struct ObservationTensor {
  int channels = 5;
  int height = 64;
  int width = 64;
  std::vector<float> data;
  std::optional<Eigen::Vector3f> goal_vector;

  ObservationTensor() = default;
  ObservationTensor(int c, int h, int w)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0.0f) {}

  int image_channels() const { return channels - (goal_vector ? 3 : 0); }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int row, int col) {
    return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(row) * width + col];
  }
  float at(int c, int row, int col) const {
    return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(row) * width + col];
  }
  float depth(int row, int col) const { return at(0, row, col); }
  float mask(int row, int col) const { return at(4, row, col); }

  /// Flattened network input (all channels, goal planes broadcast).
  std::size_t input_size() const { return data.size(); }
  std::uint64_t checksum() const;
};

ObservationTensor render_ego(const Scene& scene, const GoalSpec& goal,
                             const HeadPose& head, const CameraConfig& cfg);

/// Center-ray test: goal center inside the image frustum and no box between
/// the camera and the sphere surface.
bool goal_visible(const Scene& scene, const GoalSpec& goal, const HeadPose& head,
                  const CameraConfig& cfg);

/// Nearest positive ray parameter of a ray against a box (slab method).
std::optional<double> ray_box(const Vec3& origin, const Vec3& dir, const SceneBox& box);
std::optional<double> ray_sphere(const Vec3& origin, const Vec3& dir, const Vec3& center,
                                 double radius);

/// Flat binary dump: "EGOB", u32 width, u32 height, u32 channels, then
/// channels*height*width f32 values in (C, H, W) order.
void save_observation(const ObservationTensor& obs, const std::filesystem::path& path);
ObservationTensor load_observation(const std::filesystem::path& path);

/// PPM previews of the depth, semantic and mask channel groups.
void save_previews(const ObservationTensor& obs, const std::filesystem::path& stem);

}  // namespace egonav
