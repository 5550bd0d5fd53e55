#include "ssmdrive/world.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "ssmdrive/token.hpp"

namespace ssmdrive {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLaneHalf = 1.75;   // lane center offset from the divider
constexpr double kRoadHalf = 3.5;    // boundary offset
constexpr double kThinRibbonHalf = 0.15;   // divider / boundary half width
constexpr double kCrossingHalf = 1.5;      // zebra area half width
constexpr double kRibbonHalfHeight = 0.01;

double deg(double d) { return d * kPi / 180.0; }

int channel_of_agent(AgentClass c) {
  return c == AgentClass::Vehicle ? kChVehicle : kChPedestrian;
}

int channel_of_map(MapClass c) {
  switch (c) {
    case MapClass::Divider: return kChDivider;
    case MapClass::Crossing: return kChCrossing;
    case MapClass::Boundary: return kChBoundary;
  }
  return kChFree;
}

double ribbon_half_width(MapClass c) {
  return c == MapClass::Crossing ? kCrossingHalf : kThinRibbonHalf;
}

// All renderable boxes of frame t, expressed in the ego frame of t.
std::vector<std::pair<Box3, int>> scene_boxes(const Episode& ep, int t) {
  const Pose2& ego = ep.ego[static_cast<std::size_t>(t)].pose;
  std::vector<std::pair<Box3, int>> boxes;
  for (const auto& a : ep.agents) {
    Pose2 rel = ego.relative(a.pose[static_cast<std::size_t>(t)]);
    boxes.push_back({Box3{rel.x, rel.y, a.height / 2, rel.yaw, a.length / 2, a.width / 2,
                          a.height / 2},
                     channel_of_agent(a.cls)});
  }
  for (const auto& inst : ep.map) {
    double hw = ribbon_half_width(inst.cls);
    int ch = channel_of_map(inst.cls);
    for (std::size_t s = 0; s + 1 < inst.points.size(); ++s) {
      Vec2 a = ego.inverse_transform(inst.points[s]);
      Vec2 b = ego.inverse_transform(inst.points[s + 1]);
      double len = dist(a, b);
      if (len <= 0.0) continue;
      boxes.push_back({Box3{(a.x + b.x) / 2, (a.y + b.y) / 2, kRibbonHalfHeight,
                            std::atan2(b.y - a.y, b.x - a.x), len / 2, hw, kRibbonHalfHeight},
                       ch});
    }
  }
  return boxes;
}

// Nearest hit along a ray, or a negative value.
std::pair<double, int> cast_ray(const std::vector<std::pair<Box3, int>>& boxes,
                                const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                double far_plane) {
  double best = far_plane;
  int ch = -1;
  for (const auto& [box, c] : boxes) {
    double t = box.ray_hit(origin, dir);
    if (t >= 0.0 && t < best) {
      best = t;
      ch = c;
    }
  }
  return {best, ch};
}

// --- scenario construction -------------------------------------------------

struct SpeedProfile {
  std::vector<double> speed;     // per frame
  std::vector<double> yaw_rate;  // per frame
};

std::vector<EgoFrame> integrate_ego(Pose2 start, const SpeedProfile& p, double dt, int command) {
  std::size_t n = p.speed.size();
  std::vector<EgoFrame> out(n);
  Pose2 pose = start;
  for (std::size_t k = 0; k < n; ++k) {
    out[k].pose = pose;
    out[k].speed = p.speed[k];
    out[k].yaw_rate = p.yaw_rate[k];
    out[k].accel = k + 1 < n ? (p.speed[k + 1] - p.speed[k]) / dt : 0.0;
    out[k].command = command;
    pose.x += p.speed[k] * std::cos(pose.yaw) * dt;
    pose.y += p.speed[k] * std::sin(pose.yaw) * dt;
    pose.yaw = wrap_angle(pose.yaw + p.yaw_rate[k] * dt);
  }
  return out;
}

std::vector<Pose2> straight_track(Pose2 start, double speed, double dt, int n) {
  std::vector<Pose2> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k)
    out[static_cast<std::size_t>(k)] = {start.x + speed * dt * k * std::cos(start.yaw),
                                        start.y + speed * dt * k * std::sin(start.yaw),
                                        start.yaw};
  return out;
}

MapInstance line(MapClass cls, Vec2 a, Vec2 b) { return {cls, {a, b}}; }

// Straight two-lane road along +x with the divider at y = 0.
void straight_road(Episode& ep, double x_lo, double x_hi) {
  ep.map.push_back(line(MapClass::Divider, {x_lo, 0}, {x_hi, 0}));
  ep.map.push_back(line(MapClass::Boundary, {x_lo, -kRoadHalf}, {x_hi, -kRoadHalf}));
  ep.map.push_back(line(MapClass::Boundary, {x_lo, kRoadHalf}, {x_hi, kRoadHalf}));
}

AgentTrack vehicle_track(std::vector<Pose2> pose) {
  AgentTrack a;
  a.cls = AgentClass::Vehicle;
  a.length = 4.5;
  a.width = 2.0;
  a.height = 1.6;
  a.pose = std::move(pose);
  return a;
}

AgentTrack pedestrian_track(std::vector<Pose2> pose) {
  AgentTrack a;
  a.cls = AgentClass::Pedestrian;
  a.length = 0.6;
  a.width = 0.6;
  a.height = 1.75;
  a.pose = std::move(pose);
  return a;
}

Episode base_episode(const WorldConfig& w, const std::string& name, std::uint64_t seed) {
  Episode ep;
  ep.world = w;
  ep.template_name = name;
  ep.seed = seed;
  return ep;
}

Episode gen_straight_follow(const WorldConfig& w, std::uint64_t seed) {
  Episode ep = base_episode(w, "straight-follow", seed);
  Rng rng(seed);
  int n = w.frames + w.horizon();
  Pose2 start{-10.0, -kLaneHalf, 0.0};
  double v = rng.uniform(4.0, 8.0);
  SpeedProfile p{std::vector<double>(static_cast<std::size_t>(n), v),
                 std::vector<double>(static_cast<std::size_t>(n), 0.0)};
  ep.ego = integrate_ego(start, p, w.dt, 1);
  double gap = rng.uniform(8.0, 15.0);
  ep.agents.push_back(
      vehicle_track(straight_track({start.x + gap, -kLaneHalf, 0.0}, v, w.dt, n)));
  straight_road(ep, start.x - 28.0, start.x + 29.0);
  return ep;
}

Episode gen_lead_brake(const WorldConfig& w, std::uint64_t seed) {
  Episode ep = base_episode(w, "lead-brake", seed);
  Rng rng(seed);
  int n = w.frames + w.horizon();
  Pose2 start{-10.0, -kLaneHalf, 0.0};
  double v0 = rng.uniform(5.0, 8.0);
  double gap = rng.uniform(10.0, 15.0);
  double brake = rng.uniform(1.5, 3.0);

  // The lead brakes from frame 1; ego reacts one frame later with the same
  // deceleration, so the gap shrinks by less than v0*dt and stays safe.
  std::vector<Pose2> lead(static_cast<std::size_t>(n));
  Pose2 lp{start.x + gap, -kLaneHalf, 0.0};
  SpeedProfile p;
  for (int k = 0; k < n; ++k) {
    lead[static_cast<std::size_t>(k)] = lp;
    double vl = std::max(0.0, v0 - brake * w.dt * std::max(0, k - 1));
    lp.x += vl * w.dt;
    p.speed.push_back(std::max(0.0, v0 - brake * w.dt * std::max(0, k - 2)));
    p.yaw_rate.push_back(0.0);
  }
  ep.ego = integrate_ego(start, p, w.dt, 1);
  ep.agents.push_back(vehicle_track(std::move(lead)));
  straight_road(ep, start.x - 28.0, start.x + 29.0);
  return ep;
}

Episode gen_cut_in(const WorldConfig& w, std::uint64_t seed) {
  Episode ep = base_episode(w, "cut-in", seed);
  Rng rng(seed);
  int n = w.frames + w.horizon();
  Pose2 start{-10.0, -kLaneHalf, 0.0};
  double v = rng.uniform(4.0, 6.0);
  double gap = rng.uniform(8.0, 12.0);
  double vc = v + rng.uniform(1.0, 2.0);

  // Faster vehicle merges from the adjacent lane between frames 2 and 7; the
  // longitudinal gap only grows, so the scene stays collision-free.
  std::vector<Pose2> cut(static_cast<std::size_t>(n));
  double cx = start.x + gap;
  for (int k = 0; k < n; ++k) {
    double f = std::min(1.0, std::max(0.0, (k - 2) / 5.0));
    double y = kLaneHalf - 2.0 * kLaneHalf * f;
    double ynext = kLaneHalf - 2.0 * kLaneHalf * std::min(1.0, std::max(0.0, (k - 1) / 5.0));
    cut[static_cast<std::size_t>(k)] = {cx, y, std::atan2(ynext - y, vc * w.dt)};
    cx += vc * w.dt;
  }
  SpeedProfile p;
  for (int k = 0; k < n; ++k) {
    p.speed.push_back(std::max(v - 1.5, v - 0.5 * w.dt * std::max(0, k - 2)));
    p.yaw_rate.push_back(0.0);
  }
  ep.ego = integrate_ego(start, p, w.dt, 1);
  ep.agents.push_back(vehicle_track(std::move(cut)));
  straight_road(ep, start.x - 28.0, start.x + 29.0);
  return ep;
}

Episode gen_side_lane_hazard(const WorldConfig& w, std::uint64_t seed) {
  Episode ep = base_episode(w, "side-lane-hazard", seed);
  Rng rng(seed);
  int n = w.frames + w.horizon();
  Pose2 start{-10.0, -kLaneHalf, 0.0};
  double v = rng.uniform(4.0, 7.0);
  SpeedProfile p{std::vector<double>(static_cast<std::size_t>(n), v),
                 std::vector<double>(static_cast<std::size_t>(n), 0.0)};
  ep.ego = integrate_ego(start, p, w.dt, 1);

  // A pedestrian in the opposite lane drifts slowly toward the road; the
  // drift is too slow to ever reach the ego corridor within the horizon.
  double px = start.x + rng.uniform(8.0, 15.0);
  double py = rng.uniform(2.3, 3.0);
  double vy = -rng.uniform(0.1, 0.25);
  std::vector<Pose2> ped(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k)
    ped[static_cast<std::size_t>(k)] = {px, py + vy * w.dt * k, -kPi / 2};
  ep.agents.push_back(pedestrian_track(std::move(ped)));
  straight_road(ep, start.x - 28.0, start.x + 29.0);
  return ep;
}

// Shared construction for both turn directions: approach, slow down, arc 90°
// through the intersection, and continue on the crossing road.
Episode gen_turn(const WorldConfig& w, std::uint64_t seed, bool left) {
  Episode ep = base_episode(w, left ? "turn-left" : "turn-right", seed);
  Rng rng(seed);
  int n = w.frames + w.horizon();
  Pose2 start{-10.0, -kLaneHalf, 0.0};
  double xi = start.x + rng.uniform(8.0, 12.0);
  double v0 = rng.uniform(4.0, 6.0);
  double vt = rng.uniform(2.0, 3.0);
  double radius = rng.uniform(4.0, 6.0);
  double omega = vt / radius;
  // Start of the arc so the turn exits onto the crossing road's proper lane.
  double x_turn = left ? xi + kLaneHalf - radius : xi - kLaneHalf - radius;
  double target_yaw = left ? kPi / 2 : -kPi / 2;
  double omega_s = left ? omega : -omega;

  // Event-split integration: straight until the trigger abscissa, an exact
  // circular arc through 90 degrees, then straight again. Splitting steps at
  // the events keeps the exit lane exact instead of off by up to v*dt.
  int command = left ? 0 : 2;
  ep.ego.resize(static_cast<std::size_t>(n));
  Pose2 pose = start;
  int phase = 0;  // 0 approach, 1 arc, 2 exit
  for (int k = 0; k < n; ++k) {
    double v = phase == 0 ? std::max(vt, v0 - 1.0 * w.dt * k) : vt;
    EgoFrame& e = ep.ego[static_cast<std::size_t>(k)];
    e.pose = pose;
    e.speed = v;
    e.command = command;
    double left_t = w.dt;
    while (left_t > 1e-12) {
      if (phase == 0) {
        double t_trig = (x_turn - pose.x) / v;  // heading is exactly +x here
        double step = std::min(left_t, std::max(0.0, t_trig));
        pose.x += v * step;
        if (t_trig <= left_t) phase = 1;
        left_t -= step;
      } else if (phase == 1) {
        double t_done = std::abs(target_yaw - pose.yaw) / omega;
        double step = std::min(left_t, t_done);
        double phi = omega_s * step;
        pose.x += v / omega_s * (std::sin(pose.yaw + phi) - std::sin(pose.yaw));
        pose.y += v / omega_s * (std::cos(pose.yaw) - std::cos(pose.yaw + phi));
        pose.yaw = wrap_angle(pose.yaw + phi);
        if (t_done <= left_t) {
          pose.yaw = target_yaw;
          phase = 2;
        }
        left_t -= step;
      } else {
        pose.x += v * std::cos(pose.yaw) * left_t;
        pose.y += v * std::sin(pose.yaw) * left_t;
        left_t = 0.0;
      }
    }
    e.yaw_rate = wrap_angle(pose.yaw - e.pose.yaw) / w.dt;
  }
  for (int k = 0; k + 1 < n; ++k)
    ep.ego[static_cast<std::size_t>(k)].accel =
        (ep.ego[static_cast<std::size_t>(k + 1)].speed - ep.ego[static_cast<std::size_t>(k)].speed) /
        w.dt;

  // Main road up to the intersection, the crossing road, and a zebra stripe
  // across the approach.
  double x_lo = start.x - 28.0;
  ep.map.push_back(line(MapClass::Divider, {x_lo, 0}, {xi - kRoadHalf, 0}));
  ep.map.push_back(line(MapClass::Boundary, {x_lo, -kRoadHalf}, {xi - kRoadHalf, -kRoadHalf}));
  ep.map.push_back(line(MapClass::Boundary, {x_lo, kRoadHalf}, {xi - kRoadHalf, kRoadHalf}));
  ep.map.push_back(line(MapClass::Divider, {xi, kRoadHalf}, {xi, 12.0}));
  ep.map.push_back(line(MapClass::Divider, {xi, -12.0}, {xi, -kRoadHalf}));
  ep.map.push_back(line(MapClass::Boundary, {xi - kRoadHalf, kRoadHalf}, {xi - kRoadHalf, 12.0}));
  ep.map.push_back(line(MapClass::Boundary, {xi + kRoadHalf, kRoadHalf}, {xi + kRoadHalf, 12.0}));
  ep.map.push_back(
      line(MapClass::Boundary, {xi - kRoadHalf, -12.0}, {xi - kRoadHalf, -kRoadHalf}));
  ep.map.push_back(
      line(MapClass::Boundary, {xi + kRoadHalf, -12.0}, {xi + kRoadHalf, -kRoadHalf}));
  ep.map.push_back(
      line(MapClass::Crossing, {xi - kRoadHalf + 0.75, -kRoadHalf}, {xi - kRoadHalf + 0.75, kRoadHalf}));

  // A vehicle waiting on the crossing road, clear of the ego's arc.
  double wx = left ? xi - kLaneHalf : xi + kLaneHalf;
  double wy = left ? 10.0 : -10.0;
  ep.agents.push_back(vehicle_track(
      std::vector<Pose2>(static_cast<std::size_t>(n), Pose2{wx, wy, left ? -kPi / 2 : kPi / 2})));
  return ep;
}

void write_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_doubles(std::ofstream& f, const Array& a) {
  write_u64(f, static_cast<std::uint64_t>(a.size()));
  f.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * 8));
}
std::uint32_t read_u32(std::ifstream& f) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::uint64_t read_u64(std::ifstream& f) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
Array read_doubles(std::ifstream& f) {
  std::uint64_t n = read_u64(f);
  Array a(static_cast<Eigen::Index>(n));
  f.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(n * 8));
  return a;
}

constexpr char kFrameMagic[] = "SSMDRIVE-FRAME-1";

}  // namespace

std::vector<Camera> build_rig(const WorldConfig& w) {
  std::vector<Camera> rig;
  double fov = deg(w.fov_deg);
  for (int k = 0; k < w.cameras; ++k) {
    Camera cam;
    cam.width = w.img_w;
    cam.height = w.img_h;
    cam.fx = (w.img_w / 2.0) / std::tan(fov / 2.0);
    cam.fy = cam.fx;
    cam.cx = w.img_w / 2.0;
    cam.cy = w.img_h / 2.0;
    // Two cameras: left (+yaw) then right (-yaw); more alternate on a fan.
    double frac = w.cameras == 1 ? 0.0 : 1.0 - 2.0 * k / static_cast<double>(w.cameras - 1);
    cam.R = camera_rotation(deg(w.cam_yaw_deg) * frac, deg(w.cam_pitch_deg));
    cam.t = Eigen::Vector3d(0.0, 0.0, w.cam_z);
    rig.push_back(cam);
  }
  return rig;
}

FramePayload render_frame(const Episode& ep, int t) {
  if (t < 0 || t >= ep.world.frames)
    throw std::invalid_argument("render_frame: frame " + std::to_string(t) + " outside episode");
  const WorldConfig& w = ep.world;
  auto boxes = scene_boxes(ep, t);
  auto rig = build_rig(w);
  FramePayload out;
  auto centers = patch_centers(w.img_h, w.img_w, w.patch);
  for (const Camera& cam : rig) {
    Array img = Array::Zero(static_cast<Eigen::Index>(w.img_h) * w.img_w * kImageChannels);
    for (int v = 0; v < w.img_h; ++v)
      for (int u = 0; u < w.img_w; ++u) {
        auto [d, ch] = cast_ray(boxes, cam.t, cam.ray(u + 0.5, v + 0.5), w.far_plane);
        std::int64_t base = (static_cast<std::int64_t>(v) * w.img_w + u) * kImageChannels;
        img[base + (ch < 0 ? kChFree : ch)] = 1.0;
        img[base + kChDepth] = d / w.far_plane;
      }
    Array depth(static_cast<Eigen::Index>(centers.size()));
    Array hit(static_cast<Eigen::Index>(centers.size()));
    for (std::size_t i = 0; i < centers.size(); ++i) {
      auto [d, ch] = cast_ray(boxes, cam.t, cam.ray(centers[i].x, centers[i].y), w.far_plane);
      depth[static_cast<Eigen::Index>(i)] = d;
      hit[static_cast<Eigen::Index>(i)] = ch < 0 ? 0.0 : 1.0;
    }
    out.images.push_back(std::move(img));
    out.depth_gt.push_back(std::move(depth));
    out.depth_hit.push_back(std::move(hit));
  }
  return out;
}

void render_all(Episode& ep) {
  ep.frames.clear();
  for (int t = 0; t < ep.world.frames; ++t) ep.frames.push_back(render_frame(ep, t));
}

const std::vector<std::string>& scenario_templates() {
  static const std::vector<std::string> names = {"straight-follow", "lead-brake",
                                                 "cut-in",          "side-lane-hazard",
                                                 "turn-left",       "turn-right"};
  return names;
}

Episode generate_episode(const std::string& tmpl, std::uint64_t seed, const WorldConfig& w) {
  Episode ep;
  if (tmpl == "straight-follow") ep = gen_straight_follow(w, seed);
  else if (tmpl == "lead-brake") ep = gen_lead_brake(w, seed);
  else if (tmpl == "cut-in") ep = gen_cut_in(w, seed);
  else if (tmpl == "side-lane-hazard") ep = gen_side_lane_hazard(w, seed);
  else if (tmpl == "turn-left") ep = gen_turn(w, seed, true);
  else if (tmpl == "turn-right") ep = gen_turn(w, seed, false);
  else {
    std::string all;
    for (const auto& n : scenario_templates()) all += (all.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown scenario template '" + tmpl + "' (known: " + all + ")");
  }
  render_all(ep);
  return ep;
}

FrameGt frame_gt(const Episode& ep, int t, std::int64_t map_points) {
  const WorldConfig& w = ep.world;
  if (t < 0 || t >= w.frames)
    throw std::invalid_argument("frame_gt: frame " + std::to_string(t) + " outside episode");
  const Pose2& ego = ep.ego[static_cast<std::size_t>(t)].pose;
  FrameGt gt;

  for (const auto& a : ep.agents) {
    Pose2 rel = ego.relative(a.pose[static_cast<std::size_t>(t)]);
    DetGt d;
    d.x = rel.x;
    d.y = rel.y;
    d.z = a.height / 2;
    d.l = a.length;
    d.w = a.width;
    d.h = a.height;
    d.yaw = rel.yaw;
    d.cls = a.cls;
    for (int k = 1; k <= w.t_m; ++k) {
      const Pose2& fp = a.pose[static_cast<std::size_t>(t + k)];
      d.future.push_back(ego.inverse_transform({fp.x, fp.y}));
    }
    gt.all_agents.push_back(d);
    bool in_range = std::abs(rel.x) <= w.range_x / 2 && std::abs(rel.y) <= w.range_y / 2;
    if (rel.x > 0.5 && in_range) gt.agents.push_back(d);
  }

  for (const auto& inst : ep.map) {
    if (inst.points.size() < 2) continue;
    std::vector<Vec2> rel;
    rel.reserve(inst.points.size());
    for (const auto& p : inst.points) rel.push_back(ego.inverse_transform(p));
    std::vector<Vec2> pts = resample_polyline(rel, static_cast<int>(map_points));
    bool visible = false;
    for (const auto& p : pts)
      if (std::abs(p.x) <= w.range_x / 2 && std::abs(p.y) <= w.range_y / 2) visible = true;
    if (visible) gt.map.push_back({inst.cls, std::move(pts)});
  }

  for (int k = 1; k <= w.t_e; ++k) {
    const Pose2& fp = ep.ego[static_cast<std::size_t>(t + k)].pose;
    gt.plan.push_back(ego.inverse_transform({fp.x, fp.y}));
  }

  const EgoFrame& e = ep.ego[static_cast<std::size_t>(t)];
  gt.canbus = Array::Zero(6);
  gt.canbus[0] = e.speed;
  gt.canbus[1] = e.yaw_rate;
  gt.canbus[2] = e.accel;
  gt.canbus[3 + e.command] = 1.0;
  gt.command = e.command;
  return gt;
}

std::vector<Pose2> ego_transform_chain(const Episode& ep) {
  std::vector<Pose2> out;
  for (int t = 0; t < ep.world.frames; ++t)
    out.push_back(ep.ego[static_cast<std::size_t>(t)].pose);
  return out;
}

EpisodeSample make_sample(const Episode& ep, std::int64_t map_points) {
  EpisodeSample s;
  s.world = ep.world;
  s.template_name = ep.template_name;
  s.seed = ep.seed;
  s.rig = build_rig(ep.world);
  for (int t = 0; t < ep.world.frames; ++t) {
    s.frames.push_back(ep.frames.size() == static_cast<std::size_t>(ep.world.frames)
                           ? ep.frames[static_cast<std::size_t>(t)]
                           : render_frame(ep, t));
    s.gt.push_back(frame_gt(ep, t, map_points));
    s.motion.push_back(t == 0 ? Pose2{}
                              : ep.ego[static_cast<std::size_t>(t)].pose.relative(
                                    ep.ego[static_cast<std::size_t>(t - 1)].pose));
  }
  return s;
}

void write_episode(const Episode& ep, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "frames");

  nlohmann::json j;
  j["template"] = ep.template_name;
  j["seed"] = ep.seed;
  const WorldConfig& w = ep.world;
  j["world"] = {{"range_x", w.range_x},   {"range_y", w.range_y},
                {"cameras", w.cameras},   {"fov_deg", w.fov_deg},
                {"cam_yaw_deg", w.cam_yaw_deg}, {"cam_pitch_deg", w.cam_pitch_deg},
                {"cam_z", w.cam_z},       {"img_h", w.img_h},
                {"img_w", w.img_w},       {"patch", w.patch},
                {"far_plane", w.far_plane}, {"dt", w.dt},
                {"frames", w.frames},     {"t_m", w.t_m},
                {"t_e", w.t_e},           {"ego_length", w.ego_length},
                {"ego_width", w.ego_width}};
  for (const auto& e : ep.ego)
    j["ego"].push_back({e.pose.x, e.pose.y, e.pose.yaw, e.speed, e.yaw_rate, e.accel,
                        static_cast<double>(e.command)});
  j["agents"] = nlohmann::json::array();
  for (const auto& a : ep.agents) {
    nlohmann::json ja = {{"class", static_cast<int>(a.cls)},
                         {"length", a.length},
                         {"width", a.width},
                         {"height", a.height}};
    for (const auto& p : a.pose) ja["pose"].push_back({p.x, p.y, p.yaw});
    j["agents"].push_back(ja);
  }
  j["map"] = nlohmann::json::array();
  for (const auto& m : ep.map) {
    nlohmann::json jm = {{"class", static_cast<int>(m.cls)}};
    for (const auto& p : m.points) jm["points"].push_back({p.x, p.y});
    j["map"].push_back(jm);
  }
  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("episode: cannot write manifest under " + dir);
  mf << j.dump(2) << "\n";

  for (std::size_t t = 0; t < ep.frames.size(); ++t) {
    std::ofstream f(fs::path(dir) / "frames" / (std::to_string(t) + ".bin"), std::ios::binary);
    if (!f) throw std::runtime_error("episode: cannot write frame " + std::to_string(t));
    f.write(kFrameMagic, 16);
    const FramePayload& fp = ep.frames[t];
    write_u32(f, static_cast<std::uint32_t>(fp.images.size()));
    for (std::size_t c = 0; c < fp.images.size(); ++c) {
      write_doubles(f, fp.images[c]);
      write_doubles(f, fp.depth_gt[c]);
      write_doubles(f, fp.depth_hit[c]);
    }
  }
}

Episode read_episode(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("episode: cannot open manifest under " + dir);
  nlohmann::json j = nlohmann::json::parse(mf);

  Episode ep;
  ep.template_name = j.at("template").get<std::string>();
  ep.seed = j.at("seed").get<std::uint64_t>();
  const auto& jw = j.at("world");
  WorldConfig& w = ep.world;
  w.range_x = jw.at("range_x");
  w.range_y = jw.at("range_y");
  w.cameras = jw.at("cameras");
  w.fov_deg = jw.at("fov_deg");
  w.cam_yaw_deg = jw.at("cam_yaw_deg");
  w.cam_pitch_deg = jw.at("cam_pitch_deg");
  w.cam_z = jw.at("cam_z");
  w.img_h = jw.at("img_h");
  w.img_w = jw.at("img_w");
  w.patch = jw.at("patch");
  w.far_plane = jw.at("far_plane");
  w.dt = jw.at("dt");
  w.frames = jw.at("frames");
  w.t_m = jw.at("t_m");
  w.t_e = jw.at("t_e");
  w.ego_length = jw.at("ego_length");
  w.ego_width = jw.at("ego_width");

  for (const auto& je : j.at("ego")) {
    EgoFrame e;
    e.pose = {je.at(0), je.at(1), je.at(2)};
    e.speed = je.at(3);
    e.yaw_rate = je.at(4);
    e.accel = je.at(5);
    e.command = static_cast<int>(je.at(6).get<double>());
    ep.ego.push_back(e);
  }
  for (const auto& ja : j.at("agents")) {
    AgentTrack a;
    a.cls = static_cast<AgentClass>(ja.at("class").get<int>());
    a.length = ja.at("length");
    a.width = ja.at("width");
    a.height = ja.at("height");
    for (const auto& jp : ja.at("pose")) a.pose.push_back({jp.at(0), jp.at(1), jp.at(2)});
    ep.agents.push_back(a);
  }
  for (const auto& jm : j.at("map")) {
    MapInstance m;
    m.cls = static_cast<MapClass>(jm.at("class").get<int>());
    for (const auto& jp : jm.at("points")) m.points.push_back({jp.at(0), jp.at(1)});
    ep.map.push_back(m);
  }

  for (int t = 0; t < w.frames; ++t) {
    auto path = fs::path(dir) / "frames" / (std::to_string(t) + ".bin");
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("episode: missing frame file " + path.string());
    char magic[16];
    f.read(magic, 16);
    if (std::string(magic, 16) != kFrameMagic)
      throw std::runtime_error("frame file " + path.string() +
                               " has an unknown format or version");
    FramePayload fp;
    std::uint32_t cams = read_u32(f);
    for (std::uint32_t c = 0; c < cams; ++c) {
      fp.images.push_back(read_doubles(f));
      fp.depth_gt.push_back(read_doubles(f));
      fp.depth_hit.push_back(read_doubles(f));
    }
    if (!f) throw std::runtime_error("frame file " + path.string() + " is truncated");
    ep.frames.push_back(std::move(fp));
  }
  return ep;
}

void perturb_extrinsics(std::vector<Camera>& rig, double rot_sigma, double trans_sigma,
                        Rng& rng) {
  for (auto& cam : rig) {
    Eigen::Matrix3d wobble =
        (Eigen::AngleAxisd(rng.normal() * rot_sigma, Eigen::Vector3d::UnitX()) *
         Eigen::AngleAxisd(rng.normal() * rot_sigma, Eigen::Vector3d::UnitY()) *
         Eigen::AngleAxisd(rng.normal() * rot_sigma, Eigen::Vector3d::UnitZ()))
            .toRotationMatrix();
    cam.R = cam.R * wobble;
    cam.t += Eigen::Vector3d(rng.normal() * trans_sigma, rng.normal() * trans_sigma,
                             rng.normal() * trans_sigma);
  }
}

}  // namespace ssmdrive
