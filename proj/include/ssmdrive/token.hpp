#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmdrive/geometry.hpp"
#include "ssmdrive/params.hpp"
#include "ssmdrive/tensor.hpp"

namespace ssmdrive {

// Token taxonomy. The task embedding table carries one learned row per kind,
// and the heads consume tokens strictly by kind.
enum class TokenKind : int { Agent = 0, Map = 1, Ego = 2, Sensor = 3, Waypoint = 4 };
constexpr int kTokenKindCount = 5;

// Sinusoidal encoding bank: per input coordinate, `bands` frequencies with
// geometric wavelength spacing, emitted as interleaved (sin, cos) pairs so a
// zero coordinate encodes to [0, 1, 0, 1, ...].
struct SineSpec {
  int bands = 32;
  double lambda_min = 0.5;
  double lambda_max = 120.0;

  std::int64_t width_per_coord() const { return 2 * static_cast<std::int64_t>(bands); }
};

// coords [M, K] -> [M, K * 2 * bands]; differentiable in coords.
Tensor sine_encode(const Tensor& coords, const SineSpec& spec);

// The three-part positional embedding: spatial encoding of the (x, y, z)
// reference position, temporal encoding of the frame index, and a learned
// per-kind embedding, concatenated and projected to the model width.
struct PeParams {
  SineSpec spatial;   // 3 coords
  SineSpec temporal;  // 1 coord
  Tensor te;          // [kTokenKindCount, te_width]
  Linear proj;        // 3*2*bands + 2*bands + te_width -> C
  std::int64_t te_width = 64;
  std::int64_t c_model = 0;

  PeParams() = default;
  PeParams(ParamStore& ps, const std::string& name, std::int64_t c_model, Rng& rng);

  // pos3 [M, 3] (z = 0 for BEV tokens), timestamp [M, 1], kinds.size() == M.
  Tensor build(const Tensor& pos3, const Tensor& timestamp,
               const std::vector<TokenKind>& kinds) const;
};

// Appends a zero z column: [M, 2] -> [M, 3].
Tensor lift_bev(const Tensor& ref);

// Patchwise two-layer perceptron over raw multi-camera semantic grids. Images
// are flat per-camera arrays laid out (v, u, channel); each patch of
// patch x patch pixels becomes one token.
struct PatchEncoder {
  int patch = 4;
  int channels = 7;
  int h_px = 0, w_px = 0;  // per-camera pixel extents
  Mlp2 mlp;                // patch*patch*channels -> C -> C

  PatchEncoder() = default;
  PatchEncoder(ParamStore& ps, const std::string& name, int patch, int channels, int h_px,
               int w_px, std::int64_t c_model, Rng& rng);

  std::int64_t tokens_per_camera() const {
    return static_cast<std::int64_t>(h_px / patch) * (w_px / patch);
  }
  // images: one flat array per camera -> [N_c * tokens_per_camera, C].
  Tensor encode(const std::vector<Array>& images) const;
};

// Continuous image coordinates (u, v) of every patch token's center for one
// camera, row-major over the patch grid; the same order encode() emits.
// Feed directly to Camera::ray.
std::vector<Vec2> patch_centers(int h_px, int w_px, int patch);

// Per-token positive depth from sensor semantics via softplus; the bias
// starts at mid-range so early training sees sane 3D positions.
struct DepthHead {
  Linear lin;  // C -> 1

  DepthHead() = default;
  DepthHead(ParamStore& ps, const std::string& name, std::int64_t c_model, Rng& rng,
            double init_depth = 15.0);
  Tensor forward(const Tensor& sem) const;  // [G, C] -> [G, 1], all > 0
};

// Canbus vector: (speed, yaw rate, acceleration, command one-hot of
// {left, straight, right}).
constexpr std::int64_t kCanbusDim = 6;

// One linear layer plus ReLU, producing the ego token's semantics.
struct CanbusEncoder {
  Linear lin;  // kCanbusDim -> C

  CanbusEncoder() = default;
  CanbusEncoder(ParamStore& ps, const std::string& name, std::int64_t c_model, Rng& rng);
  Tensor forward(const Tensor& canbus) const;  // [1, 6] -> [1, C]
};

// Motion-aware layer normalization: plain LN whose affine is predicted from a
// motion-conditioning vector. Conditioning nets end in zero-initialized
// layers, so at init the op is exactly unconditioned layer normalization.
//   cond = [dx, dy, cos(dyaw), sin(dyaw), dt, vx, vy]
struct Mln {
  static constexpr std::int64_t kCondDim = 7;
  Mlp2 scale_net;  // kCondDim -> hidden -> C, final layer zero-init
  Mlp2 shift_net;

  Mln() = default;
  Mln(ParamStore& ps, const std::string& name, std::int64_t c_model, Rng& rng);
  // x [M, C], cond [M, kCondDim] (or [1, kCondDim], broadcast by tiling).
  Tensor forward(const Tensor& x, const Tensor& cond) const;
};

// How waypoint-token reference positions start out.
enum class WaypointPrior { Origin, Uniform, Random };
WaypointPrior waypoint_prior_from_string(const std::string& s);

// Index layout of the concatenated task-token block, in fixed order
// agent | map points | ego | waypoints.
struct TaskLayout {
  std::int64_t n_agent = 32;
  std::int64_t n_map = 8;
  std::int64_t points_per_map = 20;
  std::int64_t t_e = 6;

  std::int64_t map_begin() const { return n_agent; }
  std::int64_t ego_begin() const { return n_agent + n_map * points_per_map; }
  std::int64_t waypoint_begin() const { return ego_begin() + 1; }
  std::int64_t total() const { return waypoint_begin() + t_e; }
};

// Kind tag of every slot in the layout's order.
std::vector<TokenKind> task_kinds(const TaskLayout& layout);

// Factors n into (nx, ny) grid dims whose aspect best matches rx:ry
// (log-ratio distance, smaller nx wins ties).
std::pair<std::int64_t, std::int64_t> uniform_grid_dims(std::int64_t n, double rx, double ry);

// Initial reference positions [total, 2] over the perception range
// [-rx/2, rx/2] x [-ry/2, ry/2]: agents at uniform grid cell centers, map
// instances as horizontal 20-point polylines at uniform depths, ego at the
// origin, waypoints per the prior mode.
Array init_reference_positions(const TaskLayout& layout, double range_x, double range_y,
                               WaypointPrior prior, Rng& rng, double uniform_dx = 1.0,
                               double uniform_dy = 0.0);

}  // namespace ssmdrive
