#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssmdrive/heads.hpp"
#include "ssmdrive/scan.hpp"
#include "ssmdrive/ssm.hpp"
#include "ssmdrive/token.hpp"
#include "ssmdrive/world.hpp"

namespace ssmdrive {

// Wall-time accounting per pipeline stage.
struct Profiler {
  std::map<std::string, double> seconds;
  std::map<std::string, std::int64_t> calls;

  void add(const std::string& stage, double s) {
    seconds[stage] += s;
    ++calls[stage];
  }
  double total() const {
    double t = 0.0;
    for (const auto& [_, s] : seconds) t += s;
    return t;
  }
};

// Scoped stage timer; accumulates into the profiler on destruction.
class StageTimer {
 public:
  StageTimer(Profiler* prof, const char* stage);
  ~StageTimer();
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

 private:
  Profiler* prof_;
  const char* stage_;
  double start_;
};

// Pipeline stage names, matching the profile report rows.
namespace stages {
inline constexpr const char* kBackbone = "backbone";
inline constexpr const char* kDepth = "depth prediction";
inline constexpr const char* kSerialization = "bidirectional serialization";
inline constexpr const char* kVcl = "view correspondence learning";
inline constexpr const char* kLtf = "long-term temporal fusion";
inline constexpr const char* kTrm = "task relation modeling";
inline constexpr const char* kHeads = "task head inference";
inline constexpr const char* kMemory = "temporal memory propagation";
}  // namespace stages

// Model dimensions and decoder behavior. The stage toggles exist for
// ablations: a disabled stage is skipped entirely (identity).
struct ModelConfig {
  std::int64_t c_model = 64;
  std::int64_t expand = 2;
  std::int64_t n_state = 8;
  std::int64_t dt_rank = 4;
  int layers = 2;

  TaskLayout layout;
  std::int64_t k_mode = 6;
  std::int64_t t_m = 6;

  std::int64_t top_k = 16;  // detection tokens propagated per frame
  int t_queue = 4;          // memory capacity in frames

  WaypointPrior prior = WaypointPrior::Uniform;
  double range_x = 60.0, range_y = 30.0;

  ScanSchedule schedule;  // empty -> ScanSchedule::defaults(layers)

  bool use_vcl = true;
  bool use_ltf = true;
  bool use_trm = true;
};

// One frame of retained task tokens. Positions and velocities are kept in
// the *current* ego frame and re-expressed on every advance; `delta` is the
// accumulated snapshot-to-current transform that conditions the MLN.
struct MemoryEntry {
  Tensor tokens;  // [K, C] semantic snapshot
  Tensor refs;    // [K, 2] BEV positions, current ego frame
  Tensor vel;     // [K, 2] velocity estimates (m/s), current ego frame
  std::vector<TokenKind> kinds;
  int timestamp = 0;
  Pose2 delta;      // snapshot ego frame -> current ego frame
  double age = 0.0; // seconds since the snapshot
};

// Bounded FIFO of memory entries, oldest first. Tensors stay connected to
// the autodiff graph, so temporal fusion backpropagates through time within
// an episode.
class MemoryQueue {
 public:
  explicit MemoryQueue(int capacity = 4) : capacity_(capacity) {}

  void reset() { entries_.clear(); }
  // Re-express all stored geometry in the new ego frame reached by `motion`
  // (a frame-to-frame transform) after `dt` seconds.
  void advance(const Pose2& motion, double dt);
  // Append a snapshot; evicts the oldest entry beyond capacity.
  void push(MemoryEntry e);

  const std::vector<MemoryEntry>& entries() const { return entries_; }
  int capacity() const { return capacity_; }
  int frames() const { return static_cast<int>(entries_.size()); }
  std::int64_t total_tokens() const;

 private:
  int capacity_;
  std::vector<MemoryEntry> entries_;
};

// Everything one decoder pass produces for one frame.
struct FrameResult {
  std::vector<LayerOutputs> layers;  // per decoder layer, refined in order
  Tensor depth;                      // [G, 1] predicted sensor depths
  Tensor sensor_sem;                 // [G, C] encoded sensor tokens
  Tensor sensor_pos;                 // [G, 3] back-projected token positions
  std::int64_t vcl_tokens = 0;       // sequence length seen by VCL
  std::int64_t ltf_tokens = 0;       // sequence length seen by LTF (last layer)
};

// The full streaming model: tokenization, the stacked unified decoder with
// per-layer VCL / LTF / TRM passes, iterative reference refinement, task
// heads, and the temporal memory queue.
class DriveModel {
 public:
  DriveModel(const ModelConfig& mc, const WorldConfig& wc, std::uint64_t seed);

  // Process one frame. `motion` maps the previous frame's ego coordinates
  // into this frame's (identity on the first frame of an episode);
  // `timestamp` is the frame index within the stream.
  FrameResult forward(const FramePayload& frame, const std::vector<Camera>& rig,
                      const Array& canbus, const Pose2& motion, int timestamp,
                      Profiler* prof = nullptr);

  // Clears the memory queue; call between episodes.
  void reset() { memory_.reset(); }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return mc_; }
  const WorldConfig& world() const { return wc_; }
  const MemoryQueue& memory() const { return memory_; }
  // Initial task reference positions [total, 2], fixed at construction.
  const Array& init_refs() const { return init_refs_; }

 private:
  ModelConfig mc_;
  WorldConfig wc_;
  ParamStore params_;

  PatchEncoder patch_;
  DepthHead depth_;
  CanbusEncoder canbus_;
  PeParams pe_;
  Mln mln_;
  Tensor task_init_;  // [total - 1, C]: agent/map rows, then waypoint rows
  Array init_refs_;   // [total, 2]

  std::vector<BMambaLayer> vcl_;
  std::vector<BMambaLayer> ltf_;
  std::vector<BMambaLayer> trm_;
  std::vector<HeadParams> heads_;

  MemoryQueue memory_;
};

// Per-camera patch-grid arrays flattened camera-major into one [G] array,
// matching the sensor token order of PatchEncoder::encode.
Array flatten_camera_arrays(const std::vector<Array>& per_camera);

// Sum of layer_loss over every decoder layer (per-layer supervision); the
// depth term is charged once per layer so the total scales with depth L.
LossBreakdown composite_loss(const FrameResult& r, const FrameGt& gt, const Array& depth_gt,
                             const Array& depth_hit, const LossWeights& weights);

// Streaming pass over a full episode sample: resets the model's memory and
// feeds frames in order.
std::vector<FrameResult> run_episode(DriveModel& model, const EpisodeSample& s,
                                     Profiler* prof = nullptr);

}  // namespace ssmdrive
