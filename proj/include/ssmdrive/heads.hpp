#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmdrive/params.hpp"
#include "ssmdrive/tensor.hpp"
#include "ssmdrive/token.hpp"
#include "ssmdrive/world.hpp"

namespace ssmdrive {

// Map instance logits carry the three semantic classes plus a trailing
// "none" column so unmatched instances can be supervised toward background.
constexpr std::int64_t kMapLogitCount = kMapClassCount + 1;

// Minimum-cost bipartite assignment (O(n^3) potentials method). cost is
// predictions x targets; returns per-prediction target index, -1 for
// unmatched predictions. Unmatched targets are simply absent from the result.
std::vector<std::int64_t> hungarian_assign(const Eigen::MatrixXd& cost);

// All task heads of one decoder layer. Heads read the residual-combined
// token (semantic + PE) and predict offsets from the current reference
// positions, so early layers start near their references.
struct HeadParams {
  std::int64_t c_model = 0;
  std::int64_t k_mode = 6;
  std::int64_t t_m = 6;

  Mlp2 det;        // C -> C -> (7 box params | class logits | confidence)
  Mlp2 map_point;  // C -> C -> per-point BEV offset
  Mlp2 map_cls;    // C -> C -> instance logits, from mean-pooled point tokens
  Tensor mode_emb; // [k_mode, C] learned mode embeddings
  Mlp2 motion;     // C -> C -> (T_m future offsets | mode logit)
  Mlp2 plan;       // C -> C -> per-waypoint BEV offset

  HeadParams() = default;
  HeadParams(ParamStore& ps, const std::string& name, std::int64_t c_model, std::int64_t k_mode,
             std::int64_t t_m, Rng& rng);
};

// Decoded predictions of one layer. Geometry is absolute BEV (current ego
// frame); box extents are exponentially parameterized and strictly positive.
struct LayerOutputs {
  Tensor det_box;       // [N_a, 7] x, y, z, l, w, h, yaw
  Tensor det_cls;       // [N_a, kAgentClassCount] logits
  Tensor det_conf;      // [N_a, 1] logit
  Tensor map_points;    // [N_m*20, 2]
  Tensor map_cls;       // [N_m, kMapLogitCount] logits
  Tensor motion;        // [N_a*k_mode, t_m*2] absolute future points
  Tensor motion_logit;  // [N_a, k_mode]
  Tensor plan;          // [t_e, 2] waypoints
  Tensor new_refs;      // [total, 2] refined reference positions
};

// Runs every head on the residual-combined tokens. head_input is
// [layout.total(), C]; refs [layout.total(), 2] stays in the graph so
// iterative refinement backpropagates across layers.
LayerOutputs run_heads(const HeadParams& hp, const Tensor& head_input, const Tensor& refs,
                       const TaskLayout& layout);

// Bipartite matches as per-prediction target indices (-1 = unmatched).
struct MatchResult {
  std::vector<std::int64_t> pred_to_gt;
  std::int64_t matched = 0;
};

// Detection matching cost: class affinity plus mean L1 over the 7 box
// parameters. Map matching cost: class affinity plus the direction-invariant
// ordered point distance (minimum over both traversal directions).
MatchResult match_detections(const LayerOutputs& out, const FrameGt& gt);
MatchResult match_map(const LayerOutputs& out, const FrameGt& gt);

// Mean focal loss with logits. target01 holds 0/1 per entry.
Tensor focal_binary(const Tensor& logits, const Tensor& target01, double alpha = 0.25,
                    double gamma = 2.0);
// Mean focal loss over rows of [M, K] logits against integer class targets.
Tensor focal_multiclass(const Tensor& logits, const std::vector<std::int64_t>& targets,
                        double alpha = 0.25, double gamma = 2.0);

// Index of the trajectory mode with minimum average displacement error.
// modes is [k_mode, t_m*2] row-major; ties break toward the lower index.
std::int64_t min_ade_mode(const Array& modes, std::int64_t k_mode,
                          const std::vector<Vec2>& gt_future);

// Hinge margins of the planning constraints.
struct PlanMargins {
  double collision = 1.0;      // meters of clearance to agent boxes
  double overstep = 0.0;       // meters inside the road boundary
  double direction_deg = 30.0; // tolerated deviation from the lane direction
};

// Differentiable penalty: collision hinge against agent future boxes,
// boundary overstep hinge, and lane-direction hinge. Zero on a scene that
// satisfies every margin.
Tensor plan_constraints(const Tensor& psi, const FrameGt& gt, const PlanMargins& margins);

struct LossWeights {
  double det = 1.0;
  double map = 1.0;
  double depth = 1.0;
  double motion = 1.0;
  double plan = 1.0;
  PlanMargins margins;
};

// Raw per-task terms plus the weighted sum that is actually optimized.
struct LossBreakdown {
  Tensor det;
  Tensor map;
  Tensor depth;
  Tensor motion;
  Tensor plan;
  Tensor total;
};

// Loss of one decoder layer against one frame's ground truth. depth_pred is
// the per-sensor-token depth column [G, 1]; depth_gt/depth_hit are the
// matching targets and hit mask (loss is masked to rays that hit geometry).
LossBreakdown layer_loss(const LayerOutputs& out, const FrameGt& gt, const Tensor& depth_pred,
                         const Array& depth_gt, const Array& depth_hit,
                         const LossWeights& weights);

// Scene-level augmentation: one rigid BEV transform (rotation, translation,
// optional y-flip) applied consistently to ground truth, ego motion, camera
// extrinsics, and the rendered images.
struct AugmentConfig {
  double max_rotation_deg = 10.0;
  double max_translation = 2.0;
  double flip_prob = 0.5;
};

EpisodeSample apply_augment(const EpisodeSample& s, double rotation, double tx, double ty,
                            bool flip);
EpisodeSample augment_sample(const EpisodeSample& s, const AugmentConfig& cfg, Rng& rng);

}  // namespace ssmdrive
