#include "ssmdrive/geometry.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace ssmdrive {

double norm(Vec2 a) { return std::hypot(a.x, a.y); }
double dist(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

double wrap_angle(double a) {
  const double pi = 3.14159265358979323846;
  while (a > pi) a -= 2 * pi;
  while (a <= -pi) a += 2 * pi;
  return a;
}

Vec2 Pose2::transform(Vec2 local) const {
  double c = std::cos(yaw), s = std::sin(yaw);
  return {x + c * local.x - s * local.y, y + s * local.x + c * local.y};
}

Vec2 Pose2::inverse_transform(Vec2 world) const {
  double c = std::cos(yaw), s = std::sin(yaw);
  double dx = world.x - x, dy = world.y - y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Pose2 Pose2::compose(const Pose2& child) const {
  Vec2 p = transform({child.x, child.y});
  return {p.x, p.y, wrap_angle(yaw + child.yaw)};
}

Pose2 Pose2::inverse() const {
  double c = std::cos(yaw), s = std::sin(yaw);
  return {-(c * x + s * y), -(-s * x + c * y), wrap_angle(-yaw)};
}

Pose2 Pose2::relative(const Pose2& other) const { return inverse().compose(other); }

std::array<Vec2, 4> Obb2::corners() const {
  double c = std::cos(yaw), s = std::sin(yaw);
  std::array<Vec2, 4> out;
  const double sx[4] = {1, 1, -1, -1};
  const double sy[4] = {1, -1, -1, 1};
  for (int i = 0; i < 4; ++i) {
    double lx = sx[i] * half_len, ly = sy[i] * half_wid;
    out[i] = {cx + c * lx - s * ly, cy + s * lx + c * ly};
  }
  return out;
}

bool Obb2::contains(Vec2 p) const {
  double c = std::cos(yaw), s = std::sin(yaw);
  double dx = p.x - cx, dy = p.y - cy;
  double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  return std::abs(lx) <= half_len && std::abs(ly) <= half_wid;
}

double Obb2::distance(Vec2 p) const {
  double c = std::cos(yaw), s = std::sin(yaw);
  double dx = p.x - cx, dy = p.y - cy;
  double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  double qx = std::abs(lx) - half_len, qy = std::abs(ly) - half_wid;
  double ox = qx > 0 ? qx : 0, oy = qy > 0 ? qy : 0;
  return std::hypot(ox, oy);
}

bool obb_overlap(const Obb2& a, const Obb2& b) {
  auto ca = a.corners();
  auto cb = b.corners();
  // Candidate separating axes: the two edge normals of each rectangle.
  std::array<Vec2, 4> axes = {
      Vec2{std::cos(a.yaw), std::sin(a.yaw)}, Vec2{-std::sin(a.yaw), std::cos(a.yaw)},
      Vec2{std::cos(b.yaw), std::sin(b.yaw)}, Vec2{-std::sin(b.yaw), std::cos(b.yaw)}};
  for (const auto& ax : axes) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (const auto& p : ca) {
      double v = p.x * ax.x + p.y * ax.y;
      amin = std::min(amin, v);
      amax = std::max(amax, v);
    }
    for (const auto& p : cb) {
      double v = p.x * ax.x + p.y * ax.y;
      bmin = std::min(bmin, v);
      bmax = std::max(bmax, v);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

double Box3::ray_hit(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const {
  // Slab test in the box frame.
  double c = std::cos(yaw), s = std::sin(yaw);
  Eigen::Vector3d o(origin.x() - cx, origin.y() - cy, origin.z() - cz);
  Eigen::Vector3d lo(c * o.x() + s * o.y(), -s * o.x() + c * o.y(), o.z());
  Eigen::Vector3d ld(c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z());
  const double half[3] = {half_l, half_w, half_h};
  double t0 = 0.0, t1 = 1e300;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(ld[i]) < 1e-300) {
      if (std::abs(lo[i]) > half[i]) return -1.0;
      continue;
    }
    double ta = (-half[i] - lo[i]) / ld[i];
    double tb = (half[i] - lo[i]) / ld[i];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return -1.0;
  }
  return t0;
}

Eigen::Vector3d Camera::ray(double u, double v) const {
  Eigen::Vector3d cam((u - cx) / fx, (v - cy) / fy, 1.0);
  return R * cam;
}

Eigen::Vector3d Camera::backproject(double u, double v, double depth) const {
  return depth * ray(u, v) + t;
}

Eigen::Vector3d Camera::project(const Eigen::Vector3d& p) const {
  Eigen::Vector3d cam = R.transpose() * (p - t);
  double d = cam.z();
  return {fx * cam.x() / d + cx, fy * cam.y() / d + cy, d};
}

Eigen::Matrix3d camera_rotation(double yaw, double pitch) {
  // Columns are the camera axes in the reference frame (x fwd, y left, z up):
  // x_cam = image right, y_cam = image down, z_cam = view direction.
  double cy_ = std::cos(yaw), sy = std::sin(yaw);
  double cp = std::cos(pitch), sp = std::sin(pitch);
  Eigen::Vector3d fwd(cy_ * cp, sy * cp, sp);
  Eigen::Vector3d right(sy, -cy_, 0.0);
  Eigen::Vector3d down = fwd.cross(right).normalized();
  Eigen::Matrix3d R;
  R.col(0) = right;
  R.col(1) = down;
  R.col(2) = fwd;
  return R;
}

std::vector<Vec2> resample_polyline(const std::vector<Vec2>& pts, int count) {
  if (pts.size() < 2) throw std::invalid_argument("resample_polyline: need at least 2 points");
  if (count < 2) throw std::invalid_argument("resample_polyline: need at least 2 samples");
  std::vector<Vec2> out(static_cast<std::size_t>(count));
  double span = static_cast<double>(pts.size() - 1);
  for (int j = 0; j < count; ++j) {
    double s = span * static_cast<double>(j) / static_cast<double>(count - 1);
    auto seg = static_cast<std::size_t>(s);
    if (seg >= pts.size() - 1) seg = pts.size() - 2;
    double f = s - static_cast<double>(seg);
    out[static_cast<std::size_t>(j)] = {pts[seg].x + f * (pts[seg + 1].x - pts[seg].x),
                                        pts[seg].y + f * (pts[seg + 1].y - pts[seg].y)};
  }
  return out;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  double vx = b.x - a.x, vy = b.y - a.y;
  double len2 = vx * vx + vy * vy;
  if (len2 <= 0.0) return dist(p, a);
  double u = ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2;
  u = std::max(0.0, std::min(1.0, u));
  return dist(p, {a.x + u * vx, a.y + u * vy});
}

double point_polyline_distance(Vec2 p, const std::vector<Vec2>& poly) {
  if (poly.empty()) throw std::invalid_argument("point_polyline_distance: empty polyline");
  if (poly.size() == 1) return dist(p, poly[0]);
  double best = 1e300;
  for (std::size_t i = 0; i + 1 < poly.size(); ++i)
    best = std::min(best, point_segment_distance(p, poly[i], poly[i + 1]));
  return best;
}

}  // namespace ssmdrive
