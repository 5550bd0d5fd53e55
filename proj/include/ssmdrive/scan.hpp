#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ssmdrive/geometry.hpp"

namespace ssmdrive {

// A serialization of N tokens into a 1-D scan sequence.
//   perm[slot] = index of the token placed at that slot
//   inv[token] = slot holding that token
// Every order is a bijection; validate() checks it.
struct ScanOrder {
  std::vector<std::int64_t> perm;
  std::vector<std::int64_t> inv;

  static ScanOrder identity(std::int64_t n);
  static ScanOrder from_perm(std::vector<std::int64_t> perm);
  void validate() const;
  std::int64_t size() const { return static_cast<std::int64_t>(perm.size()); }
};

enum class Axis { Horizontal, Vertical };

// Axis-aligned raster order. Horizontal sorts by (x, y), vertical by (y, x);
// exact key ties fall back to the input index, so the order is total.
ScanOrder axis_order(const std::vector<Vec2>& pos, Axis axis);

// Square BEV grid over the perception range used by the spiral order.
struct BevGrid {
  double x_min = -30.0, x_max = 30.0;
  double y_min = -15.0, y_max = 15.0;
  int n = 50;

  // (row, col) of the cell containing p; out-of-range positions clamp to the
  // border cells.
  std::pair<int, int> cell(Vec2 p) const;
};

// Position of cell (x, y) along the border-first spiral walk of an n x n
// grid: ring by ring from the outer border inward, each ring traversed
// top row left->right, right column downward, bottom row right->left, left
// column upward.
std::int64_t spiral_index(std::int64_t x, std::int64_t y, std::int64_t n);

// Ego-centric local-to-global order: tokens sorted by the spiral position of
// their grid cell. By default the walk is reversed so the sequence starts at
// the grid center (the ego cell) and spirals outward; border_first = true
// keeps the raw walk. Cell ties fall back to the input index.
ScanOrder ego_centric_order(const std::vector<Vec2>& pos, const BevGrid& grid,
                            bool border_first = false);

// Importance of each query w.r.t. an interpolated trajectory: 1 minus the
// normalized min distance to the trajectory points. If the normalizer (the
// max over queries of the min distance) is zero, every weight is 1.
std::vector<double> trajectory_importance(const std::vector<Vec2>& queries,
                                          const std::vector<Vec2>& psi);

// Trajectory-centric order: tokens flagged `fixed_front` (ego, waypoints)
// keep their relative input order in a leading block; the rest follow sorted
// by importance (descending by default), ties by input index.
ScanOrder trajectory_centric_order(const std::vector<Vec2>& pos,
                                   const std::vector<bool>& fixed_front,
                                   const std::vector<Vec2>& psi, bool descending = true);

enum class TemporalMode { SpatialFirst, TemporalFirst };

// Orders a multi-frame token set. SpatialFirst concatenates frames oldest to
// newest, spatially sorted within each frame. TemporalFirst groups by spatial
// position (bins are exact positions) and orders each group by timestamp.
// With a single frame both modes reduce to the spatial (x, y) sort.
ScanOrder temporal_order(const std::vector<Vec2>& pos, const std::vector<int>& timestamp,
                         TemporalMode mode);

// Which serialization each decoder stage uses, per layer.
enum class ScanKind { Horizontal, Vertical, EgoCentric, TrajectoryCentric };

struct ScanSchedule {
  std::vector<ScanKind> vcl;          // per layer
  std::vector<ScanKind> trm;          // per layer
  std::vector<TemporalMode> ltf;      // per layer

  // Default hybrid schedule: VCL alternates Horizontal/Vertical across
  // layers, TRM is trajectory-centric, LTF is spatial-first.
  static ScanSchedule defaults(int layers);
};

ScanKind scan_kind_from_string(const std::string& s);
TemporalMode temporal_mode_from_string(const std::string& s);

}  // namespace ssmdrive
