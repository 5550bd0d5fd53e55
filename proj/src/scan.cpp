#include "ssmdrive/scan.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace ssmdrive {

ScanOrder ScanOrder::identity(std::int64_t n) {
  ScanOrder o;
  o.perm.resize(static_cast<std::size_t>(n));
  std::iota(o.perm.begin(), o.perm.end(), 0);
  o.inv = o.perm;
  return o;
}

ScanOrder ScanOrder::from_perm(std::vector<std::int64_t> perm) {
  ScanOrder o;
  o.perm = std::move(perm);
  o.inv.assign(o.perm.size(), -1);
  for (std::size_t slot = 0; slot < o.perm.size(); ++slot) {
    std::int64_t tok = o.perm[slot];
    if (tok < 0 || tok >= static_cast<std::int64_t>(o.perm.size()) || o.inv[tok] != -1)
      throw std::invalid_argument("scan: permutation is not a bijection");
    o.inv[static_cast<std::size_t>(tok)] = static_cast<std::int64_t>(slot);
  }
  return o;
}

void ScanOrder::validate() const {
  if (perm.size() != inv.size()) throw std::invalid_argument("scan: perm/inv size mismatch");
  for (std::size_t slot = 0; slot < perm.size(); ++slot) {
    std::int64_t tok = perm[slot];
    if (tok < 0 || tok >= static_cast<std::int64_t>(perm.size()) ||
        inv[static_cast<std::size_t>(tok)] != static_cast<std::int64_t>(slot))
      throw std::invalid_argument("scan: perm/inv are not mutually inverse");
  }
}

namespace {
ScanOrder sort_to_order(std::size_t n, const std::function<bool(std::int64_t, std::int64_t)>& lt) {
  std::vector<std::int64_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), lt);
  return ScanOrder::from_perm(std::move(perm));
}
}  // namespace

ScanOrder axis_order(const std::vector<Vec2>& pos, Axis axis) {
  return sort_to_order(pos.size(), [&](std::int64_t a, std::int64_t b) {
    const Vec2& pa = pos[static_cast<std::size_t>(a)];
    const Vec2& pb = pos[static_cast<std::size_t>(b)];
    double a1 = axis == Axis::Horizontal ? pa.x : pa.y;
    double b1 = axis == Axis::Horizontal ? pb.x : pb.y;
    double a2 = axis == Axis::Horizontal ? pa.y : pa.x;
    double b2 = axis == Axis::Horizontal ? pb.y : pb.x;
    if (a1 != b1) return a1 < b1;
    if (a2 != b2) return a2 < b2;
    return a < b;
  });
}

std::pair<int, int> BevGrid::cell(Vec2 p) const {
  auto bin = [this](double v, double lo, double hi) {
    double f = (v - lo) / (hi - lo) * static_cast<double>(n);
    int i = static_cast<int>(std::floor(f));
    return std::max(0, std::min(n - 1, i));
  };
  return {bin(p.x, x_min, x_max), bin(p.y, y_min, y_max)};
}

std::int64_t spiral_index(std::int64_t x, std::int64_t y, std::int64_t n) {
  if (n <= 0 || x < 0 || y < 0 || x >= n || y >= n)
    throw std::invalid_argument("spiral_index: cell (" + std::to_string(x) + "," +
                                std::to_string(y) + ") outside an n=" + std::to_string(n) +
                                " grid");
  std::int64_t l = std::min(std::min(x, y), std::min(n - 1 - x, n - 1 - y));
  std::int64_t base = 4 * l * (n - l);
  std::int64_t side = n - 1 - 2 * l;  // ring side length minus one
  if (x == l) return base + (y - l);
  if (y == n - 1 - l) return base + side + (x - l);
  if (x == n - 1 - l) return base + 2 * side + (n - 1 - l - y);
  return base + 3 * side + (n - 1 - l - x);
}

ScanOrder ego_centric_order(const std::vector<Vec2>& pos, const BevGrid& grid,
                            bool border_first) {
  std::int64_t n2 = static_cast<std::int64_t>(grid.n) * grid.n;
  std::vector<std::int64_t> key(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    auto [r, c] = grid.cell(pos[i]);
    std::int64_t s = spiral_index(r, c, grid.n);
    key[i] = border_first ? s : n2 - 1 - s;
  }
  return sort_to_order(pos.size(), [&](std::int64_t a, std::int64_t b) {
    if (key[static_cast<std::size_t>(a)] != key[static_cast<std::size_t>(b)])
      return key[static_cast<std::size_t>(a)] < key[static_cast<std::size_t>(b)];
    return a < b;
  });
}

std::vector<double> trajectory_importance(const std::vector<Vec2>& queries,
                                          const std::vector<Vec2>& psi) {
  if (psi.empty())
    throw std::invalid_argument("trajectory_importance: empty trajectory");
  std::vector<double> d(queries.size());
  double dmax = 0.0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    double best = 1e300;
    for (const auto& p : psi) best = std::min(best, dist(queries[i], p));
    d[i] = best;
    dmax = std::max(dmax, best);
  }
  std::vector<double> w(queries.size(), 1.0);
  if (dmax > 0.0)
    for (std::size_t i = 0; i < queries.size(); ++i) w[i] = 1.0 - d[i] / dmax;
  return w;
}

ScanOrder trajectory_centric_order(const std::vector<Vec2>& pos,
                                   const std::vector<bool>& fixed_front,
                                   const std::vector<Vec2>& psi, bool descending) {
  if (fixed_front.size() != pos.size())
    throw std::invalid_argument("trajectory_centric_order: flag count " +
                                std::to_string(fixed_front.size()) + " != token count " +
                                std::to_string(pos.size()));
  std::vector<Vec2> scored;
  std::vector<std::int64_t> scored_idx;
  for (std::size_t i = 0; i < pos.size(); ++i)
    if (!fixed_front[i]) {
      scored.push_back(pos[i]);
      scored_idx.push_back(static_cast<std::int64_t>(i));
    }
  std::vector<double> w = trajectory_importance(scored, psi);

  std::vector<std::int64_t> perm;
  perm.reserve(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i)
    if (fixed_front[i]) perm.push_back(static_cast<std::int64_t>(i));
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (w[a] != w[b]) return descending ? w[a] > w[b] : w[a] < w[b];
    return scored_idx[a] < scored_idx[b];
  });
  for (auto k : order) perm.push_back(scored_idx[k]);
  return ScanOrder::from_perm(std::move(perm));
}

ScanOrder temporal_order(const std::vector<Vec2>& pos, const std::vector<int>& timestamp,
                         TemporalMode mode) {
  if (timestamp.size() != pos.size())
    throw std::invalid_argument("temporal_order: timestamp count " +
                                std::to_string(timestamp.size()) + " != token count " +
                                std::to_string(pos.size()));
  return sort_to_order(pos.size(), [&](std::int64_t a, std::int64_t b) {
    const Vec2& pa = pos[static_cast<std::size_t>(a)];
    const Vec2& pb = pos[static_cast<std::size_t>(b)];
    int ta = timestamp[static_cast<std::size_t>(a)];
    int tb = timestamp[static_cast<std::size_t>(b)];
    if (mode == TemporalMode::SpatialFirst) {
      if (ta != tb) return ta < tb;
      if (pa.x != pb.x) return pa.x < pb.x;
      if (pa.y != pb.y) return pa.y < pb.y;
    } else {
      if (pa.x != pb.x) return pa.x < pb.x;
      if (pa.y != pb.y) return pa.y < pb.y;
      if (ta != tb) return ta < tb;
    }
    return a < b;
  });
}

ScanSchedule ScanSchedule::defaults(int layers) {
  ScanSchedule s;
  for (int l = 0; l < layers; ++l) {
    s.vcl.push_back(l % 2 == 0 ? ScanKind::Horizontal : ScanKind::Vertical);
    s.trm.push_back(ScanKind::TrajectoryCentric);
    s.ltf.push_back(TemporalMode::SpatialFirst);
  }
  return s;
}

ScanKind scan_kind_from_string(const std::string& s) {
  if (s == "horizontal") return ScanKind::Horizontal;
  if (s == "vertical") return ScanKind::Vertical;
  if (s == "ego") return ScanKind::EgoCentric;
  if (s == "trajectory") return ScanKind::TrajectoryCentric;
  throw std::invalid_argument("scan: unknown kind '" + s +
                              "' (expected horizontal|vertical|ego|trajectory)");
}

TemporalMode temporal_mode_from_string(const std::string& s) {
  if (s == "spatial_first") return TemporalMode::SpatialFirst;
  if (s == "temporal_first") return TemporalMode::TemporalFirst;
  throw std::invalid_argument("scan: unknown temporal mode '" + s +
                              "' (expected spatial_first|temporal_first)");
}

}  // namespace ssmdrive
