#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmdrive/geometry.hpp"
#include "ssmdrive/rng.hpp"
#include "ssmdrive/tensor.hpp"

namespace ssmdrive {

// Desk-scale world and sensor geometry. Distances in meters, angles in
// radians, frames at 2 Hz. BEV axes: x forward, y left.
struct WorldConfig {
  double range_x = 60.0;  // perception box extent along x, centered on ego
  double range_y = 30.0;
  int cameras = 2;
  double fov_deg = 100.0;
  double cam_yaw_deg = 25.0;    // camera k yaw = ±cam_yaw_deg
  double cam_pitch_deg = -10.0; // tilted toward the road
  double cam_z = 1.5;
  int img_h = 16, img_w = 32;
  int patch = 4;
  double far_plane = 120.0;
  double dt = 0.5;  // seconds per frame
  int frames = 6;   // rendered frames per episode
  int t_m = 6;      // agent future steps
  int t_e = 6;      // ego future steps
  double ego_length = 4.0, ego_width = 1.8;

  int horizon() const { return t_m > t_e ? t_m : t_e; }
};

enum class AgentClass : int { Vehicle = 0, Pedestrian = 1 };
constexpr int kAgentClassCount = 2;

enum class MapClass : int { Divider = 0, Crossing = 1, Boundary = 2 };
constexpr int kMapClassCount = 3;

// Image channel layout: semantic one-hot plus normalized depth.
constexpr int kChFree = 0;
constexpr int kChVehicle = 1;
constexpr int kChPedestrian = 2;
constexpr int kChDivider = 3;
constexpr int kChCrossing = 4;
constexpr int kChBoundary = 5;
constexpr int kChDepth = 6;
constexpr int kImageChannels = 7;

struct AgentTrack {
  AgentClass cls = AgentClass::Vehicle;
  double length = 4.5, width = 2.0, height = 1.6;
  std::vector<Pose2> pose;  // world frame, one per frame incl. horizon
};

struct MapInstance {
  MapClass cls = MapClass::Divider;
  std::vector<Vec2> points;  // world frame
};

struct EgoFrame {
  Pose2 pose;  // world frame
  double speed = 0.0, yaw_rate = 0.0, accel = 0.0;
  int command = 1;  // 0 left, 1 straight, 2 right
};

// Rendered sensor data of one frame: per-camera pixel grids laid out
// (v, u, channel), plus exact depth at each patch center and a mask marking
// rays that hit scene geometry.
struct FramePayload {
  std::vector<Array> images;
  std::vector<Array> depth_gt;   // meters, camera z-depth
  std::vector<Array> depth_hit;  // 1.0 where geometry was hit
};

struct Episode {
  WorldConfig world;
  std::string template_name;
  std::uint64_t seed = 0;
  std::vector<AgentTrack> agents;
  std::vector<MapInstance> map;
  std::vector<EgoFrame> ego;  // world.frames + world.horizon() entries
  std::vector<FramePayload> frames;
};

// Cameras with extrinsics mapping camera frame -> current ego frame.
std::vector<Camera> build_rig(const WorldConfig& w);

// Deterministic ray-cast render of frame t in the ego frame at t.
FramePayload render_frame(const Episode& ep, int t);
void render_all(Episode& ep);

// Registered scenario generators.
const std::vector<std::string>& scenario_templates();
Episode generate_episode(const std::string& tmpl, std::uint64_t seed, const WorldConfig& w);

// Ground truth of one frame, all geometry in the ego frame at that frame.
struct DetGt {
  double x = 0, y = 0, z = 0;
  double l = 0, w = 0, h = 0;
  double yaw = 0;
  AgentClass cls = AgentClass::Vehicle;
  std::vector<Vec2> future;  // t_m steps
};

struct MapGt {
  MapClass cls = MapClass::Divider;
  std::vector<Vec2> points;  // resampled to the instance point budget
};

struct FrameGt {
  std::vector<DetGt> agents;      // detection targets: forward, visible region
  std::vector<DetGt> all_agents;  // every agent, for collision evaluation
  std::vector<MapGt> map;
  std::vector<Vec2> plan;  // t_e ego future waypoints
  Array canbus;            // [speed, yaw_rate, accel, one-hot command]
  int command = 1;
};

// map_points: points per map instance GT polyline (matches the map queries).
FrameGt frame_gt(const Episode& ep, int t, std::int64_t map_points = 20);

// World-frame ego pose per rendered frame.
std::vector<Pose2> ego_transform_chain(const Episode& ep);

// Everything the trainer consumes for one episode. motion[t] maps points in
// the ego frame of t-1 into the ego frame of t; motion[0] is the identity.
struct EpisodeSample {
  WorldConfig world;
  std::string template_name;
  std::uint64_t seed = 0;
  std::vector<Camera> rig;
  std::vector<FramePayload> frames;
  std::vector<FrameGt> gt;
  std::vector<Pose2> motion;
};

EpisodeSample make_sample(const Episode& ep, std::int64_t map_points = 20);

// Episode persistence: <dir>/manifest.json plus <dir>/frames/<t>.bin with the
// rendered payloads; the round trip is bit-exact.
void write_episode(const Episode& ep, const std::string& dir);
Episode read_episode(const std::string& dir);

// Sensitivity hook: Gaussian noise on camera rotations (small-angle, radians)
// and translations (meters).
void perturb_extrinsics(std::vector<Camera>& rig, double rot_sigma, double trans_sigma, Rng& rng);

}  // namespace ssmdrive
