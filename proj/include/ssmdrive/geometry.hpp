#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <vector>

namespace ssmdrive {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
double norm(Vec2 a);
double dist(Vec2 a, Vec2 b);

// Planar rigid pose: position plus heading, composing as SE(2).
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  Vec2 transform(Vec2 local) const;      // local -> world
  Vec2 inverse_transform(Vec2 world) const;
  Pose2 compose(const Pose2& child) const;  // this ∘ child
  Pose2 inverse() const;
  // Pose of `other` expressed in this pose's frame.
  Pose2 relative(const Pose2& other) const;
};

double wrap_angle(double a);  // into (-pi, pi]

// Oriented rectangle in the plane (footprint of an agent or the ego).
struct Obb2 {
  double cx = 0.0, cy = 0.0;
  double yaw = 0.0;
  double half_len = 0.0;   // along heading
  double half_wid = 0.0;

  std::array<Vec2, 4> corners() const;
  bool contains(Vec2 p) const;
  // Euclidean distance from p to the rectangle (0 inside).
  double distance(Vec2 p) const;
};

// Separating-axis overlap test for two oriented rectangles. Touching edges
// count as overlap.
bool obb_overlap(const Obb2& a, const Obb2& b);

// Axis-aligned 3-D box in a local frame plus pose; used by the renderer.
struct Box3 {
  double cx = 0, cy = 0, cz = 0;   // center (world)
  double yaw = 0;                  // about +z
  double half_l = 0, half_w = 0, half_h = 0;

  // Ray-box intersection; returns smallest t >= 0 with origin + t*dir inside,
  // or a negative value when the ray misses.
  double ray_hit(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const;
};

// Pinhole camera with extrinsics mapping camera frame -> reference frame:
// p_ref = R * p_cam + t. The camera looks along +z in its own frame with
// +x right (image u) and +y down (image v).
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  // Direction in the reference frame of the ray through pixel (u, v),
  // normalized so its camera-frame z equals 1; backprojection is then
  // p = depth * ray(u, v) + t with depth the camera-frame z coordinate.
  Eigen::Vector3d ray(double u, double v) const;
  Eigen::Vector3d backproject(double u, double v, double depth) const;
  // Projects a reference-frame point; returns (u, v, depth).
  Eigen::Vector3d project(const Eigen::Vector3d& p) const;
};

// Builds a yaw/pitch camera rotation: camera +z looks along `yaw` (about
// world +z) tilted by `pitch` (positive = up), +x right, +y down.
Eigen::Matrix3d camera_rotation(double yaw, double pitch);

// Piecewise-linear resampling of a polyline to `count` points, uniform in the
// segment-index parameter (not arclength). count >= 2, input size >= 2.
std::vector<Vec2> resample_polyline(const std::vector<Vec2>& pts, int count);

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b);
double point_polyline_distance(Vec2 p, const std::vector<Vec2>& poly);

}  // namespace ssmdrive
