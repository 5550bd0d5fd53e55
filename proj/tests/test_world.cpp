// Synthetic driving world: scenario templates, the ray renderer, ground
// truth extraction, episode serialization, and the ego motion chain.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ssmdrive/token.hpp"
#include "ssmdrive/world.hpp"

using namespace ssmdrive;

namespace {

constexpr double kPi = 3.14159265358979323846;

Obb2 ego_box(const WorldConfig& w, const Pose2& p) {
  return {p.x, p.y, p.yaw, w.ego_length / 2, w.ego_width / 2};
}

Obb2 agent_box(const AgentTrack& a, const Pose2& p) {
  return {p.x, p.y, p.yaw, a.length / 2, a.width / 2};
}

// A minimal hand-built scene: optional agents on an otherwise empty stage,
// single forward camera, constant ego.
Episode manual_episode(std::vector<AgentTrack> agents, int cameras = 1) {
  Episode ep;
  ep.world.cameras = cameras;
  ep.template_name = "manual";
  ep.seed = 0;
  int n = ep.world.frames + ep.world.horizon();
  for (int k = 0; k < n; ++k) {
    EgoFrame e;
    e.pose = {0.0, 0.0, 0.0};
    e.speed = 0.0;
    e.command = 1;
    ep.ego.push_back(e);
  }
  for (auto& a : agents) {
    if (a.pose.empty()) a.pose.assign(static_cast<std::size_t>(n), Pose2{});
    ep.agents.push_back(a);
  }
  return ep;
}

AgentTrack static_vehicle(double x, double y, double yaw) {
  AgentTrack a;
  a.cls = AgentClass::Vehicle;
  a.length = 4.5;
  a.width = 2.0;
  a.height = 1.6;
  a.pose.assign(1, {x, y, yaw});
  return a;
}

}  // namespace

TEST_CASE("scenario templates are enumerable and unknown names fail") {
  const auto& names = scenario_templates();
  REQUIRE(names.size() == 6);
  CHECK(names[0] == "straight-follow");
  WorldConfig w;
  CHECK_THROWS_WITH(generate_episode("drift", 1, w),
                    "unknown scenario template 'drift' (known: straight-follow, lead-brake, "
                    "cut-in, side-lane-hazard, turn-left, turn-right)");
}

TEST_CASE("camera rig geometry follows the config") {
  WorldConfig w;
  auto rig = build_rig(w);
  REQUIRE(rig.size() == 2);
  double fov = w.fov_deg * kPi / 180.0;
  CHECK(rig[0].fx == doctest::Approx(16.0 / std::tan(fov / 2)).epsilon(1e-12));
  CHECK(rig[0].cx == 16.0);
  CHECK(rig[0].cy == 8.0);
  CHECK(rig[0].t.z() == w.cam_z);
  // First camera looks left, second right, both pitched down.
  Eigen::Matrix3d left = camera_rotation(25.0 * kPi / 180, -10.0 * kPi / 180);
  Eigen::Matrix3d right = camera_rotation(-25.0 * kPi / 180, -10.0 * kPi / 180);
  CHECK((rig[0].R - left).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((rig[1].R - right).cwiseAbs().maxCoeff() < 1e-12);

  w.cameras = 1;
  auto mono = build_rig(w);
  CHECK((mono[0].R - camera_rotation(0.0, -10.0 * kPi / 180)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("episode generation is deterministic per seed") {
  WorldConfig w;
  Episode a = generate_episode("lead-brake", 42, w);
  Episode b = generate_episode("lead-brake", 42, w);
  REQUIRE(a.ego.size() == b.ego.size());
  for (std::size_t k = 0; k < a.ego.size(); ++k) {
    CHECK(a.ego[k].pose.x == b.ego[k].pose.x);
    CHECK(a.ego[k].pose.y == b.ego[k].pose.y);
    CHECK(a.ego[k].pose.yaw == b.ego[k].pose.yaw);
    CHECK(a.ego[k].speed == b.ego[k].speed);
  }
  REQUIRE(a.frames.size() == static_cast<std::size_t>(w.frames));
  for (std::size_t t = 0; t < a.frames.size(); ++t)
    for (std::size_t c = 0; c < a.frames[t].images.size(); ++c) {
      CHECK((a.frames[t].images[c] - b.frames[t].images[c]).abs().maxCoeff() == 0.0);
      CHECK((a.frames[t].depth_gt[c] - b.frames[t].depth_gt[c]).abs().maxCoeff() == 0.0);
    }

  Episode c = generate_episode("lead-brake", 43, w);
  bool same = true;
  for (std::size_t k = 0; k < a.ego.size() && same; ++k)
    same = a.ego[k].pose.x == c.ego[k].pose.x;
  CHECK_FALSE(same);
}

TEST_CASE("straight-follow holds the lane with a lead vehicle ahead") {
  WorldConfig w;
  for (std::uint64_t seed : {1, 7, 19}) {
    Episode ep = generate_episode("straight-follow", seed, w);
    FrameGt gt = frame_gt(ep, 0);

    // The plan is a straight line out of the ego frame origin.
    REQUIRE(gt.plan.size() == static_cast<std::size_t>(w.t_e));
    double prev = 0.0;
    for (const auto& p : gt.plan) {
      CHECK(std::abs(p.y) < 1e-9);
      CHECK(p.x > prev);
      prev = p.x;
    }

    // Exactly one detection: the lead, dead ahead in the same lane.
    REQUIRE(gt.agents.size() == 1);
    CHECK(gt.agents[0].x > 4.0);
    CHECK(std::abs(gt.agents[0].y) < 1e-9);
    CHECK(std::abs(gt.agents[0].yaw) < 1e-9);
    CHECK(gt.agents[0].cls == AgentClass::Vehicle);
    REQUIRE(gt.agents[0].future.size() == static_cast<std::size_t>(w.t_m));

    // Canbus: cruising straight at constant speed.
    CHECK(gt.canbus[0] > 0.0);
    CHECK(gt.canbus[1] == 0.0);
    CHECK(std::abs(gt.canbus[2]) < 1e-12);
    CHECK(gt.canbus[4] == 1.0);
    CHECK(gt.command == 1);

    // Both road boundaries and the divider are visible.
    CHECK(gt.map.size() == 3);
  }
}

TEST_CASE("every template is collision free and in range at start") {
  WorldConfig w;
  for (const auto& tmpl : scenario_templates()) {
    int seeds = tmpl == "lead-brake" ? 100 : 25;
    for (int s = 0; s < seeds; ++s) {
      // Episodes are checked over the full horizon, not just rendered frames.
      Episode ep = generate_episode(tmpl, static_cast<std::uint64_t>(s) + 1, w);
      int n = w.frames + w.horizon();
      REQUIRE(static_cast<int>(ep.ego.size()) == n);
      for (int k = 0; k < n; ++k) {
        Obb2 ego = ego_box(w, ep.ego[static_cast<std::size_t>(k)].pose);
        for (const auto& a : ep.agents) {
          INFO(tmpl, " seed ", s, " frame ", k);
          CHECK_FALSE(obb_overlap(ego, agent_box(a, a.pose[static_cast<std::size_t>(k)])));
        }
      }

      // Frame-0 invariant: all scene geometry inside the perception range.
      const Pose2& e0 = ep.ego[0].pose;
      for (const auto& a : ep.agents) {
        Pose2 rel = e0.relative(a.pose[0]);
        CHECK(std::abs(rel.x) <= w.range_x / 2);
        CHECK(std::abs(rel.y) <= w.range_y / 2);
      }
      for (const auto& m : ep.map)
        for (const auto& p : m.points) {
          Vec2 rel = e0.inverse_transform(p);
          CHECK(std::abs(rel.x) <= w.range_x / 2 + 1e-9);
          CHECK(std::abs(rel.y) <= w.range_y / 2 + 1e-9);
        }
    }
  }
}

TEST_CASE("turn templates carve an arc in the commanded direction") {
  WorldConfig w;
  for (int s = 0; s < 20; ++s) {
    Episode left = generate_episode("turn-left", static_cast<std::uint64_t>(s) + 1, w);
    Episode right = generate_episode("turn-right", static_cast<std::uint64_t>(s) + 1, w);
    double ly = left.ego.back().pose.yaw;
    double ry = right.ego.back().pose.yaw;
    CHECK(ly > 0.4);  // meaningfully into the turn by the end of the horizon
    CHECK(ly <= kPi / 2 + 1e-9);
    CHECK(ry < -0.4);
    CHECK(ry >= -kPi / 2 - 1e-9);
    CHECK(left.ego[0].command == 0);
    CHECK(right.ego[0].command == 2);
    // The turn templates stage a crossing and a waiting vehicle.
    bool has_crossing = false;
    for (const auto& m : left.map) has_crossing |= m.cls == MapClass::Crossing;
    CHECK(has_crossing);
    CHECK(left.agents.size() == 1);
  }
}

TEST_CASE("rendered depth matches the analytic ray in a single-box scene") {
  Episode ep = manual_episode({static_vehicle(6.0, 0.0, 0.0)});
  const WorldConfig& w = ep.world;
  FramePayload fp = render_frame(ep, 0);
  REQUIRE(fp.images.size() == 1);
  REQUIRE(fp.images[0].size() == static_cast<std::int64_t>(w.img_h) * w.img_w * kImageChannels);

  // Hand-built camera model: pitch-only rotation, pinhole rays with unit
  // forward depth, intersected with the vehicle's front plane x = 7.75.
  double fov = w.fov_deg * kPi / 180.0;
  double f = (w.img_w / 2.0) / std::tan(fov / 2.0);
  double theta = w.cam_pitch_deg * kPi / 180.0;
  Eigen::Vector3d fwd(std::cos(theta), 0.0, std::sin(theta));
  Eigen::Vector3d rightv(0.0, -1.0, 0.0);
  Eigen::Vector3d down = fwd.cross(rightv);

  int u = w.img_w / 2, v = w.img_h / 2;  // slightly off-center ray, still on the box
  double du = (u + 0.5 - w.img_w / 2.0) / f;
  double dv = (v + 0.5 - w.img_h / 2.0) / f;
  Eigen::Vector3d dir = rightv * du + down * dv + fwd;
  double t_hit = (6.0 - 4.5 / 2 - 0.0) / dir.x();
  Eigen::Vector3d hit = Eigen::Vector3d(0, 0, w.cam_z) + t_hit * dir;
  REQUIRE(std::abs(hit.y()) < 1.0);              // inside the face laterally
  REQUIRE(hit.z() > 0.0);
  REQUIRE(hit.z() < 1.6);                        // and vertically

  std::int64_t base = (static_cast<std::int64_t>(v) * w.img_w + u) * kImageChannels;
  CHECK(fp.images[0][base + kChVehicle] == 1.0);
  CHECK(std::abs(fp.images[0][base + kChDepth] - t_hit / w.far_plane) < 1e-9);

  // A sky pixel misses everything: free space at the far plane.
  std::int64_t sky = (0 * static_cast<std::int64_t>(w.img_w) + u) * kImageChannels;
  CHECK(fp.images[0][sky + kChFree] == 1.0);
  CHECK(fp.images[0][sky + kChDepth] == 1.0);
}

TEST_CASE("semantic channels are one-hot and the nearest surface wins") {
  AgentTrack ped;
  ped.cls = AgentClass::Pedestrian;
  ped.length = 0.6;
  ped.width = 0.6;
  ped.height = 1.75;
  ped.pose.assign(1, {5.0, 0.0, 0.0});
  // One vehicle hides straight behind the pedestrian; a second sits offset
  // to the left so some vehicle pixels survive.
  Episode ep =
      manual_episode({ped, static_vehicle(12.0, 0.0, 0.0), static_vehicle(12.0, 2.5, 0.0)});
  const WorldConfig& w = ep.world;
  FramePayload fp = render_frame(ep, 0);

  int hits_ped = 0, hits_veh = 0;
  for (int v = 0; v < w.img_h; ++v)
    for (int u = 0; u < w.img_w; ++u) {
      std::int64_t base = (static_cast<std::int64_t>(v) * w.img_w + u) * kImageChannels;
      double sum = 0.0;
      for (int c = 0; c < kImageChannels - 1; ++c) sum += fp.images[0][base + c];
      CHECK(sum == 1.0);  // exactly one semantic label per pixel
      hits_ped += fp.images[0][base + kChPedestrian] == 1.0;
      hits_veh += fp.images[0][base + kChVehicle] == 1.0;
    }
  CHECK(hits_ped > 0);
  CHECK(hits_veh > 0);

  // Straight ahead, the pedestrian occludes the more distant vehicle.
  std::int64_t mid =
      (static_cast<std::int64_t>(w.img_h / 2) * w.img_w + w.img_w / 2) * kImageChannels;
  CHECK(fp.images[0][mid + kChPedestrian] == 1.0);
}

TEST_CASE("an empty scene renders free space at the far plane") {
  Episode ep = manual_episode({});
  const WorldConfig& w = ep.world;
  FramePayload fp = render_frame(ep, 0);
  for (int p = 0; p < w.img_h * w.img_w; ++p) {
    std::int64_t base = static_cast<std::int64_t>(p) * kImageChannels;
    CHECK(fp.images[0][base + kChFree] == 1.0);
    CHECK(fp.images[0][base + kChDepth] == 1.0);
  }
  CHECK(fp.depth_hit[0].maxCoeff() == 0.0);
  CHECK(fp.depth_gt[0].minCoeff() == w.far_plane);
  CHECK_THROWS_AS(render_frame(ep, w.frames), std::invalid_argument);
}

TEST_CASE("patch depths backproject onto their own pixels") {
  WorldConfig w;
  Episode ep = generate_episode("cut-in", 5, w);
  auto rig = build_rig(w);
  auto centers = patch_centers(w.img_h, w.img_w, w.patch);
  const FramePayload& fp = ep.frames[0];
  int tested = 0;
  for (std::size_t c = 0; c < rig.size(); ++c)
    for (std::size_t i = 0; i < centers.size(); ++i) {
      if (fp.depth_hit[c][static_cast<Eigen::Index>(i)] == 0.0) continue;
      double d = fp.depth_gt[c][static_cast<Eigen::Index>(i)];
      Eigen::Vector3d p = d * rig[c].ray(centers[i].x, centers[i].y) + rig[c].t;
      Eigen::Vector3d uvd = rig[c].project(p);
      CHECK(std::abs(uvd.x() - centers[i].x) < 1e-6);
      CHECK(std::abs(uvd.y() - centers[i].y) < 1e-6);
      CHECK(std::abs(uvd.z() - d) < 1e-6);
      ++tested;
    }
  CHECK(tested > 0);
}

TEST_CASE("ground truth filters detections by heading and range") {
  AgentTrack behind = static_vehicle(-6.0, 0.0, 0.0);
  AgentTrack outside = static_vehicle(100.0, 0.0, 0.0);
  AgentTrack ahead = static_vehicle(8.0, -1.0, 0.3);
  Episode ep = manual_episode({behind, outside, ahead});
  // A map polyline entirely beyond the range must be dropped.
  ep.map.push_back({MapClass::Divider, {{90.0, 0.0}, {95.0, 0.0}}});
  ep.map.push_back({MapClass::Boundary, {{-20.0, -3.5}, {20.0, -3.5}}});

  FrameGt gt = frame_gt(ep, 0);
  CHECK(gt.all_agents.size() == 3);
  REQUIRE(gt.agents.size() == 1);
  CHECK(gt.agents[0].x == 8.0);
  CHECK(gt.agents[0].y == -1.0);
  CHECK(gt.agents[0].yaw == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(gt.agents[0].z == 0.8);
  CHECK(gt.agents[0].l == 4.5);

  REQUIRE(gt.map.size() == 1);
  CHECK(gt.map[0].cls == MapClass::Boundary);
  REQUIRE(gt.map[0].points.size() == 20);
  CHECK(gt.map[0].points.front().x == -20.0);
  CHECK(gt.map[0].points.back().x == 20.0);
}

TEST_CASE("episode io round trips bit exactly") {
  WorldConfig w;
  w.frames = 2;
  Episode ep = generate_episode("turn-left", 9, w);
  std::string dir = (std::filesystem::temp_directory_path() / "ssmdrive_ep_io").string();
  std::filesystem::remove_all(dir);
  write_episode(ep, dir);
  Episode rt = read_episode(dir);

  CHECK(rt.template_name == ep.template_name);
  CHECK(rt.seed == ep.seed);
  CHECK(rt.world.frames == ep.world.frames);
  CHECK(rt.world.dt == ep.world.dt);
  REQUIRE(rt.ego.size() == ep.ego.size());
  for (std::size_t k = 0; k < ep.ego.size(); ++k) {
    CHECK(rt.ego[k].pose.x == ep.ego[k].pose.x);
    CHECK(rt.ego[k].pose.y == ep.ego[k].pose.y);
    CHECK(rt.ego[k].pose.yaw == ep.ego[k].pose.yaw);
    CHECK(rt.ego[k].speed == ep.ego[k].speed);
    CHECK(rt.ego[k].yaw_rate == ep.ego[k].yaw_rate);
    CHECK(rt.ego[k].accel == ep.ego[k].accel);
    CHECK(rt.ego[k].command == ep.ego[k].command);
  }
  REQUIRE(rt.agents.size() == ep.agents.size());
  for (std::size_t a = 0; a < ep.agents.size(); ++a) {
    CHECK(rt.agents[a].cls == ep.agents[a].cls);
    CHECK(rt.agents[a].length == ep.agents[a].length);
    REQUIRE(rt.agents[a].pose.size() == ep.agents[a].pose.size());
    for (std::size_t k = 0; k < ep.agents[a].pose.size(); ++k) {
      CHECK(rt.agents[a].pose[k].x == ep.agents[a].pose[k].x);
      CHECK(rt.agents[a].pose[k].y == ep.agents[a].pose[k].y);
      CHECK(rt.agents[a].pose[k].yaw == ep.agents[a].pose[k].yaw);
    }
  }
  REQUIRE(rt.map.size() == ep.map.size());
  for (std::size_t m = 0; m < ep.map.size(); ++m) {
    CHECK(rt.map[m].cls == ep.map[m].cls);
    REQUIRE(rt.map[m].points.size() == ep.map[m].points.size());
    for (std::size_t p = 0; p < ep.map[m].points.size(); ++p) {
      CHECK(rt.map[m].points[p].x == ep.map[m].points[p].x);
      CHECK(rt.map[m].points[p].y == ep.map[m].points[p].y);
    }
  }
  REQUIRE(rt.frames.size() == ep.frames.size());
  for (std::size_t t = 0; t < ep.frames.size(); ++t)
    for (std::size_t c = 0; c < ep.frames[t].images.size(); ++c) {
      CHECK((rt.frames[t].images[c] - ep.frames[t].images[c]).abs().maxCoeff() == 0.0);
      CHECK((rt.frames[t].depth_gt[c] - ep.frames[t].depth_gt[c]).abs().maxCoeff() == 0.0);
      CHECK((rt.frames[t].depth_hit[c] - ep.frames[t].depth_hit[c]).abs().maxCoeff() == 0.0);
    }

  // A clobbered magic string must be rejected.
  {
    std::ofstream f(std::filesystem::path(dir) / "frames" / "0.bin", std::ios::binary);
    f << "NOT-A-FRAME-FILE and then some";
  }
  CHECK_THROWS_AS(read_episode(dir), std::runtime_error);
  CHECK_THROWS_AS(read_episode("/nonexistent/episode/dir"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("ego motion chain maps between consecutive frames") {
  WorldConfig w;
  Episode ep = generate_episode("turn-right", 3, w);
  EpisodeSample s = make_sample(ep);
  REQUIRE(s.motion.size() == static_cast<std::size_t>(w.frames));
  CHECK(s.motion[0].x == 0.0);
  CHECK(s.motion[0].y == 0.0);
  CHECK(s.motion[0].yaw == 0.0);

  Vec2 p{3.0, -7.0};  // a fixed world point observed from successive frames
  for (int t = 1; t < w.frames; ++t) {
    Vec2 prev = ep.ego[static_cast<std::size_t>(t - 1)].pose.inverse_transform(p);
    Vec2 cur = ep.ego[static_cast<std::size_t>(t)].pose.inverse_transform(p);
    Vec2 mapped = s.motion[static_cast<std::size_t>(t)].transform(prev);
    CHECK(std::abs(mapped.x - cur.x) < 1e-12);
    CHECK(std::abs(mapped.y - cur.y) < 1e-12);
  }

  // Composing the whole chain reproduces the direct frame-0 -> frame-T map.
  Pose2 chain;  // identity
  for (int t = 1; t < w.frames; ++t)
    chain = s.motion[static_cast<std::size_t>(t)].compose(chain);
  Vec2 first = ep.ego[0].pose.inverse_transform(p);
  Vec2 last = ep.ego[static_cast<std::size_t>(w.frames - 1)].pose.inverse_transform(p);
  Vec2 walked = chain.transform(first);
  CHECK(std::abs(walked.x - last.x) < 1e-9);
  CHECK(std::abs(walked.y - last.y) < 1e-9);

  // Samples carry one payload and one ground-truth record per frame.
  REQUIRE(s.frames.size() == static_cast<std::size_t>(w.frames));
  REQUIRE(s.gt.size() == static_cast<std::size_t>(w.frames));
  CHECK(s.rig.size() == 2);
}

TEST_CASE("extrinsic perturbation keeps rotations orthonormal") {
  WorldConfig w;
  auto rig = build_rig(w);
  auto original = rig;
  Rng rng(77);
  perturb_extrinsics(rig, 0.02, 0.05, rng);
  for (std::size_t c = 0; c < rig.size(); ++c) {
    Eigen::Matrix3d rtr = rig[c].R.transpose() * rig[c].R;
    CHECK((rtr - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(rig[c].R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((rig[c].R - original[c].R).cwiseAbs().maxCoeff() > 0.0);
    CHECK((rig[c].t - original[c].t).cwiseAbs().maxCoeff() > 0.0);
  }

  auto frozen = build_rig(w);
  perturb_extrinsics(frozen, 0.0, 0.0, rng);
  CHECK((frozen[0].R - original[0].R).cwiseAbs().maxCoeff() == 0.0);
  CHECK((frozen[0].t - original[0].t).cwiseAbs().maxCoeff() == 0.0);
}
