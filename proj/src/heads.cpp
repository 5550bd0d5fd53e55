#include "ssmdrive/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ssmdrive {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Repeat each row index `times` times: [0,0,..,1,1,..].
std::vector<std::int64_t> repeat_each(std::int64_t n, std::int64_t times) {
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(n * times));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < times; ++k) idx.push_back(i);
  return idx;
}

// Cycle 0..n-1 `times` times: [0,1,..,n-1,0,1,..].
std::vector<std::int64_t> cycle(std::int64_t n, std::int64_t times) {
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(n * times));
  for (std::int64_t k = 0; k < times; ++k)
    for (std::int64_t i = 0; i < n; ++i) idx.push_back(i);
  return idx;
}

Tensor tile_cols(const Tensor& x, std::int64_t times) {
  std::vector<Tensor> parts(static_cast<std::size_t>(times), x);
  return concat_last(parts);
}

Array gt_box_row(const DetGt& d) {
  Array row(7);
  row << d.x, d.y, d.z, d.l, d.w, d.h, d.yaw;
  return row;
}

std::int64_t agent_class_index(AgentClass c) { return static_cast<std::int64_t>(c); }
std::int64_t map_class_index(MapClass c) { return static_cast<std::int64_t>(c); }

// Mean absolute difference between two equally sized arrays.
double mean_l1(const Array& a, const Array& b) {
  return a.size() == 0 ? 0.0 : (a - b).abs().mean();
}

Array flatten_points(const std::vector<Vec2>& pts, bool reversed = false) {
  Array out(static_cast<Eigen::Index>(pts.size()) * 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec2& p = pts[reversed ? pts.size() - 1 - i : i];
    out[static_cast<Eigen::Index>(2 * i)] = p.x;
    out[static_cast<Eigen::Index>(2 * i) + 1] = p.y;
  }
  return out;
}

// Differentiable distance from a [1, 2] point to a fixed oriented box, with
// the same zero-inside semantics as Obb2::distance.
Tensor point_box_distance(const Tensor& point, const Obb2& box) {
  Array rot(4);  // row vector times this matrix = world -> box frame
  rot << std::cos(box.yaw), -std::sin(box.yaw), std::sin(box.yaw), std::cos(box.yaw);
  Tensor center = Tensor::from_array({1, 2}, (Array(2) << box.cx, box.cy).finished());
  Tensor local = matmul(point - center, Tensor::from_array({2, 2}, std::move(rot)));
  Tensor excess = clamp_min(
      abs(local) -
          Tensor::from_array({2}, (Array(2) << box.half_len, box.half_wid).finished()),
      0.0);
  return sqrt(clamp_min(sum(square(excess)), 1e-18));
}

// Index of the polyline segment nearest to p, over a class-filtered subset
// of the frame's map instances. Returns {instance, segment} or {-1, -1}.
std::pair<int, int> nearest_segment(const std::vector<MapGt>& map, Vec2 p, bool boundaries_only) {
  double best = std::numeric_limits<double>::infinity();
  std::pair<int, int> pick{-1, -1};
  for (std::size_t m = 0; m < map.size(); ++m) {
    if (boundaries_only && map[m].cls != MapClass::Boundary) continue;
    for (std::size_t s = 0; s + 1 < map[m].points.size(); ++s) {
      double d = point_segment_distance(p, map[m].points[s], map[m].points[s + 1]);
      if (d < best) {
        best = d;
        pick = {static_cast<int>(m), static_cast<int>(s)};
      }
    }
  }
  return pick;
}

}  // namespace

std::vector<std::int64_t> hungarian_assign(const Eigen::MatrixXd& cost) {
  std::int64_t nr = cost.rows(), nc = cost.cols();
  std::vector<std::int64_t> row_to_col(static_cast<std::size_t>(nr), -1);
  if (nr == 0 || nc == 0) return row_to_col;

  // Square the problem with a uniform padding cost; padded cells never beat
  // real ones, so they only absorb the unmatched rows/columns.
  std::int64_t n = std::max(nr, nc);
  double pad = cost.size() > 0 ? cost.maxCoeff() + 1.0 : 1.0;
  auto at = [&](std::int64_t i, std::int64_t j) {
    return i < nr && j < nc ? cost(i, j) : pad;
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<std::int64_t> p(static_cast<std::size_t>(n) + 1, 0);
  std::vector<std::int64_t> way(static_cast<std::size_t>(n) + 1, 0);
  for (std::int64_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::int64_t j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<bool> used(static_cast<std::size_t>(n) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      std::int64_t i0 = p[static_cast<std::size_t>(j0)], j1 = 0;
      double delta = inf;
      for (std::int64_t j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        double cur = at(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                     v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (std::int64_t j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      std::int64_t j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::int64_t j = 1; j <= n; ++j) {
    std::int64_t i = p[static_cast<std::size_t>(j)];
    if (i >= 1 && i <= nr && j <= nc) row_to_col[static_cast<std::size_t>(i - 1)] = j - 1;
  }
  return row_to_col;
}

HeadParams::HeadParams(ParamStore& ps, const std::string& name, std::int64_t c_model,
                       std::int64_t k_mode, std::int64_t t_m, Rng& rng)
    : c_model(c_model), k_mode(k_mode), t_m(t_m) {
  // Geometry heads start near-zero so decoded outputs begin at the reference
  // positions; classification heads keep the default scale.
  det = Mlp2(ps, name + ".det", c_model, c_model, 7 + kAgentClassCount + 1, rng, 0.02);
  map_point = Mlp2(ps, name + ".map_point", c_model, c_model, 2, rng, 0.02);
  map_cls = Mlp2(ps, name + ".map_cls", c_model, c_model, kMapLogitCount, rng);
  mode_emb = ps.add(name + ".mode_emb", Tensor::randn({k_mode, c_model}, rng, 0.02));
  motion = Mlp2(ps, name + ".motion", c_model, c_model, t_m * 2 + 1, rng, 0.02);
  plan = Mlp2(ps, name + ".plan", c_model, c_model, 2, rng, 0.02);
}

LayerOutputs run_heads(const HeadParams& hp, const Tensor& head_input, const Tensor& refs,
                       const TaskLayout& layout) {
  if (head_input.rank() != 2 || head_input.shape()[0] != layout.total())
    throw std::invalid_argument("heads: expected " + std::to_string(layout.total()) +
                                " task tokens, got " + shape_str(head_input.shape()));
  if (refs.rank() != 2 || refs.shape()[0] != layout.total() || refs.shape()[1] != 2)
    throw std::invalid_argument("heads: reference positions must be [" +
                                std::to_string(layout.total()) + ", 2]");
  std::int64_t n_a = layout.n_agent;
  std::int64_t n_mp = layout.n_map * layout.points_per_map;

  Tensor agent_tok = slice_rows(head_input, 0, n_a);
  Tensor map_tok = slice_rows(head_input, layout.map_begin(), n_mp);
  Tensor way_tok = slice_rows(head_input, layout.waypoint_begin(), layout.t_e);
  Tensor agent_ref = slice_rows(refs, 0, n_a);
  Tensor map_ref = slice_rows(refs, layout.map_begin(), n_mp);
  Tensor way_ref = slice_rows(refs, layout.waypoint_begin(), layout.t_e);

  LayerOutputs out;

  // Detection: centers offset from references, extents through exp.
  Tensor det_raw = hp.det.forward(agent_tok);
  Tensor center = agent_ref + slice_last(det_raw, 0, 2);
  out.det_box = concat_last({center, slice_last(det_raw, 2, 1), exp(slice_last(det_raw, 3, 3)),
                             slice_last(det_raw, 6, 1)});
  out.det_cls = slice_last(det_raw, 7, kAgentClassCount);
  out.det_conf = slice_last(det_raw, 7 + kAgentClassCount, 1);

  // Map points refine their references; instance logits come from the mean
  // pooled point tokens of each instance.
  out.map_points = map_ref + hp.map_point.forward(map_tok);
  Array pool = Array::Zero(layout.n_map * n_mp);
  for (std::int64_t m = 0; m < layout.n_map; ++m)
    for (std::int64_t p = 0; p < layout.points_per_map; ++p)
      pool[m * n_mp + m * layout.points_per_map + p] = 1.0 / static_cast<double>(layout.points_per_map);
  out.map_cls =
      hp.map_cls.forward(matmul(Tensor::from_array({layout.n_map, n_mp}, std::move(pool)), map_tok));

  // Motion: each agent token is combined with every mode embedding; decoded
  // future points ride on the decoded box center.
  Tensor agent_tiled = take_rows(agent_tok, repeat_each(n_a, hp.k_mode));
  Tensor mode_tiled = take_rows(hp.mode_emb, cycle(hp.k_mode, n_a));
  Tensor motion_raw = hp.motion.forward(agent_tiled + mode_tiled);
  Tensor center_tiled = tile_cols(take_rows(center, repeat_each(n_a, hp.k_mode)), hp.t_m);
  out.motion = center_tiled + slice_last(motion_raw, 0, hp.t_m * 2);
  out.motion_logit = reshape(slice_last(motion_raw, hp.t_m * 2, 1), {n_a, hp.k_mode});

  // Planning: waypoint tokens refine their own references.
  out.plan = way_ref + hp.plan.forward(way_tok);

  // Refined references for the next layer: agents follow their box centers,
  // map points and waypoints follow their decoded geometry, ego stays put.
  out.new_refs = concat_rows(
      {center, out.map_points, slice_rows(refs, layout.ego_begin(), 1), out.plan});
  return out;
}

MatchResult match_detections(const LayerOutputs& out, const FrameGt& gt) {
  std::int64_t n_pred = out.det_box.shape()[0];
  std::int64_t n_gt = static_cast<std::int64_t>(gt.agents.size());
  MatchResult res;
  res.pred_to_gt.assign(static_cast<std::size_t>(n_pred), -1);
  if (n_gt == 0) return res;

  Array prob = softmax_last(out.det_cls).array();
  Eigen::MatrixXd cost(n_pred, n_gt);
  for (std::int64_t i = 0; i < n_pred; ++i) {
    Array box = out.det_box.array().segment(i * 7, 7);
    for (std::int64_t j = 0; j < n_gt; ++j) {
      double cls = -prob[i * kAgentClassCount + agent_class_index(gt.agents[static_cast<std::size_t>(j)].cls)];
      cost(i, j) = cls + mean_l1(box, gt_box_row(gt.agents[static_cast<std::size_t>(j)]));
    }
  }
  res.pred_to_gt = hungarian_assign(cost);
  for (auto m : res.pred_to_gt) res.matched += m >= 0;
  return res;
}

MatchResult match_map(const LayerOutputs& out, const FrameGt& gt) {
  std::int64_t n_pred = out.map_cls.shape()[0];
  std::int64_t n_gt = static_cast<std::int64_t>(gt.map.size());
  std::int64_t ppm = out.map_points.shape()[0] / std::max<std::int64_t>(n_pred, 1);
  MatchResult res;
  res.pred_to_gt.assign(static_cast<std::size_t>(n_pred), -1);
  if (n_gt == 0) return res;

  Array prob = softmax_last(out.map_cls).array();
  Eigen::MatrixXd cost(n_pred, n_gt);
  for (std::int64_t i = 0; i < n_pred; ++i) {
    Array pts = out.map_points.array().segment(i * ppm * 2, ppm * 2);
    for (std::int64_t j = 0; j < n_gt; ++j) {
      const MapGt& g = gt.map[static_cast<std::size_t>(j)];
      double cls = -prob[i * kMapLogitCount + map_class_index(g.cls)];
      double fwd = mean_l1(pts, flatten_points(g.points));
      double rev = mean_l1(pts, flatten_points(g.points, true));
      cost(i, j) = cls + std::min(fwd, rev);
    }
  }
  res.pred_to_gt = hungarian_assign(cost);
  for (auto m : res.pred_to_gt) res.matched += m >= 0;
  return res;
}

namespace {

// x^gamma for x in [0, 1]; exact square on the default exponent.
Tensor pow_gamma(const Tensor& x, double gamma) {
  if (gamma == 2.0) return square(x);
  return exp(gamma * log(clamp_min(x, 1e-12)));
}

}  // namespace

Tensor focal_binary(const Tensor& logits, const Tensor& target01, double alpha, double gamma) {
  Tensor p = sigmoid(logits);
  Tensor pos = target01 * pow_gamma(1.0 - p, gamma) * softplus(-logits) * alpha;
  Tensor neg = (1.0 - target01) * pow_gamma(p, gamma) * softplus(logits) * (1.0 - alpha);
  return sum(pos + neg) * (1.0 / static_cast<double>(shape_numel(logits.shape())));
}

Tensor focal_multiclass(const Tensor& logits, const std::vector<std::int64_t>& targets,
                        double alpha, double gamma) {
  std::int64_t m = logits.shape()[0];
  std::int64_t k = logits.shape()[1];
  if (static_cast<std::int64_t>(targets.size()) != m)
    throw std::invalid_argument("focal: target count mismatch");
  if (m == 0) return Tensor::scalar(0.0);
  Array onehot = Array::Zero(m * k);
  for (std::int64_t i = 0; i < m; ++i) onehot[i * k + targets[static_cast<std::size_t>(i)]] = 1.0;
  Tensor p = softmax_last(logits);
  Tensor pt = matmul(p * Tensor::from_array({m, k}, std::move(onehot)), Tensor::full({k, 1}, 1.0));
  pt = clamp_min(pt, 1e-12);
  Tensor loss = pow_gamma(1.0 - pt, gamma) * (0.0 - log(pt)) * alpha;
  return sum(loss) * (1.0 / static_cast<double>(m));
}

std::int64_t min_ade_mode(const Array& modes, std::int64_t k_mode,
                          const std::vector<Vec2>& gt_future) {
  std::int64_t t = static_cast<std::int64_t>(gt_future.size());
  std::int64_t width = modes.size() / k_mode;
  std::int64_t best = 0;
  double best_ade = std::numeric_limits<double>::infinity();
  for (std::int64_t k = 0; k < k_mode; ++k) {
    double ade = 0.0;
    for (std::int64_t s = 0; s < t; ++s) {
      double dx = modes[k * width + 2 * s] - gt_future[static_cast<std::size_t>(s)].x;
      double dy = modes[k * width + 2 * s + 1] - gt_future[static_cast<std::size_t>(s)].y;
      ade += std::hypot(dx, dy);
    }
    ade /= static_cast<double>(t);
    if (ade < best_ade) {
      best_ade = ade;
      best = k;
    }
  }
  return best;
}

Tensor plan_constraints(const Tensor& psi, const FrameGt& gt, const PlanMargins& margins) {
  std::int64_t t_e = psi.shape()[0];
  Tensor penalty = Tensor::scalar(0.0);

  // Collision: hinge on clearance to every visible agent's future box.
  std::int64_t col_terms = 0;
  for (std::int64_t t = 0; t < t_e; ++t) {
    Tensor wp = slice_rows(psi, t, 1);
    for (const auto& a : gt.agents) {
      if (static_cast<std::size_t>(t) >= a.future.size()) continue;
      const Vec2& f = a.future[static_cast<std::size_t>(t)];
      Obb2 box{f.x, f.y, a.yaw, a.l / 2, a.w / 2};
      penalty = penalty + relu(margins.collision - point_box_distance(wp, box));
      ++col_terms;
    }
  }
  if (col_terms > 0) penalty = penalty * (1.0 / static_cast<double>(col_terms));

  // Overstep: signed distance past the nearest boundary, oriented so the
  // origin (where the ego starts) is the inside.
  Tensor overstep = Tensor::scalar(0.0);
  std::int64_t over_terms = 0;
  Array psi_now = psi.array();
  for (std::int64_t t = 0; t < t_e; ++t) {
    Vec2 wp_val{psi_now[2 * t], psi_now[2 * t + 1]};
    auto [mi, si] = nearest_segment(gt.map, wp_val, /*boundaries_only=*/true);
    if (mi < 0) continue;
    Vec2 a = gt.map[static_cast<std::size_t>(mi)].points[static_cast<std::size_t>(si)];
    Vec2 b = gt.map[static_cast<std::size_t>(mi)].points[static_cast<std::size_t>(si) + 1];
    double len = std::max(dist(a, b), 1e-12);
    double nx = -(b.y - a.y) / len, ny = (b.x - a.x) / len;  // unit normal
    double side0 = nx * (0.0 - a.x) + ny * (0.0 - a.y);      // origin side
    double sgn = side0 >= 0.0 ? 1.0 : -1.0;
    Tensor wp = slice_rows(psi, t, 1);
    Tensor signed_d =
        sum(wp * Tensor::from_array({2}, (Array(2) << sgn * nx, sgn * ny).finished())) -
        Tensor::scalar(sgn * (nx * a.x + ny * a.y));
    overstep = overstep + relu(margins.overstep - signed_d);
    ++over_terms;
  }
  if (over_terms > 0) penalty = penalty + overstep * (1.0 / static_cast<double>(over_terms));

  // Direction: consecutive waypoint segments must stay within the margin of
  // the nearest lane direction. Stationary segments carry no direction.
  Tensor direction = Tensor::scalar(0.0);
  std::int64_t dir_terms = 0;
  double cos_margin = std::cos(margins.direction_deg * kPi / 180.0);
  Vec2 prev_val{0.0, 0.0};
  Tensor prev = Tensor::zeros({1, 2});
  for (std::int64_t t = 0; t < t_e; ++t) {
    Vec2 wp_val{psi_now[2 * t], psi_now[2 * t + 1]};
    Tensor wp = slice_rows(psi, t, 1);
    double seg_len = dist(prev_val, wp_val);
    if (seg_len >= 0.05) {
      Vec2 mid{(prev_val.x + wp_val.x) / 2, (prev_val.y + wp_val.y) / 2};
      auto [mi, si] = nearest_segment(gt.map, mid, /*boundaries_only=*/false);
      if (mi >= 0) {
        Vec2 a = gt.map[static_cast<std::size_t>(mi)].points[static_cast<std::size_t>(si)];
        Vec2 b = gt.map[static_cast<std::size_t>(mi)].points[static_cast<std::size_t>(si) + 1];
        double len = std::max(dist(a, b), 1e-12);
        Tensor seg = wp - prev;
        Tensor unit = seg / sqrt(clamp_min(sum(square(seg)), 1e-12));
        Tensor cos_dev = abs(sum(
            unit * Tensor::from_array({2}, (Array(2) << (b.x - a.x) / len, (b.y - a.y) / len)
                                               .finished())));
        direction = direction + relu(cos_margin - cos_dev);
        ++dir_terms;
      }
    }
    prev_val = wp_val;
    prev = wp;
  }
  if (dir_terms > 0) penalty = penalty + direction * (1.0 / static_cast<double>(dir_terms));

  return penalty;
}

LossBreakdown layer_loss(const LayerOutputs& out, const FrameGt& gt, const Tensor& depth_pred,
                         const Array& depth_gt, const Array& depth_hit,
                         const LossWeights& weights) {
  LossBreakdown lb;
  std::int64_t n_a = out.det_box.shape()[0];

  // --- detection --------------------------------------------------------
  MatchResult det_match = match_detections(out, gt);
  Array conf_target = Array::Zero(n_a);
  std::vector<std::int64_t> matched_rows;
  std::vector<std::int64_t> matched_cls;
  Array matched_boxes(det_match.matched * 7);
  std::int64_t mi = 0;
  for (std::int64_t i = 0; i < n_a; ++i) {
    std::int64_t j = det_match.pred_to_gt[static_cast<std::size_t>(i)];
    if (j < 0) continue;
    conf_target[i] = 1.0;
    matched_rows.push_back(i);
    const DetGt& g = gt.agents[static_cast<std::size_t>(j)];
    matched_cls.push_back(agent_class_index(g.cls));
    matched_boxes.segment(mi * 7, 7) = gt_box_row(g);
    ++mi;
  }
  lb.det = focal_binary(out.det_conf, Tensor::from_array({n_a, 1}, std::move(conf_target)));
  if (!matched_rows.empty()) {
    Tensor pred_boxes = take_rows(out.det_box, matched_rows);
    Tensor target = Tensor::from_array({mi, 7}, std::move(matched_boxes));
    lb.det = lb.det + sum(abs(pred_boxes - target)) * (1.0 / static_cast<double>(mi * 7));
    lb.det = lb.det + focal_multiclass(take_rows(out.det_cls, matched_rows), matched_cls);
  }

  // --- mapping ----------------------------------------------------------
  MatchResult map_match = match_map(out, gt);
  std::int64_t n_m = out.map_cls.shape()[0];
  std::int64_t ppm = n_m > 0 ? out.map_points.shape()[0] / n_m : 0;
  std::vector<std::int64_t> map_cls_target(static_cast<std::size_t>(n_m), kMapClassCount);
  lb.map = Tensor::scalar(0.0);
  std::int64_t map_matched = 0;
  for (std::int64_t i = 0; i < n_m; ++i) {
    std::int64_t j = map_match.pred_to_gt[static_cast<std::size_t>(i)];
    if (j < 0) continue;
    const MapGt& g = gt.map[static_cast<std::size_t>(j)];
    map_cls_target[static_cast<std::size_t>(i)] = map_class_index(g.cls);
    std::vector<std::int64_t> rows;
    for (std::int64_t p = 0; p < ppm; ++p) rows.push_back(i * ppm + p);
    Tensor pred = take_rows(out.map_points, rows);
    Array fwd = flatten_points(g.points);
    Array rev = flatten_points(g.points, true);
    bool use_rev = mean_l1(pred.array(), rev) < mean_l1(pred.array(), fwd);
    Tensor target = Tensor::from_array({ppm, 2}, use_rev ? std::move(rev) : std::move(fwd));
    lb.map = lb.map + sum(abs(pred - target)) * (1.0 / static_cast<double>(ppm * 2));
    ++map_matched;
  }
  if (map_matched > 0) lb.map = lb.map * (1.0 / static_cast<double>(map_matched));
  lb.map = lb.map + focal_multiclass(out.map_cls, map_cls_target);

  // --- depth (masked to rays that hit geometry) --------------------------
  std::int64_t g_tokens = depth_pred.shape()[0];
  double hits = depth_hit.sum();
  if (hits > 0) {
    Tensor target = Tensor::from_array({g_tokens, 1}, depth_gt);
    Tensor mask = Tensor::from_array({g_tokens, 1}, depth_hit);
    lb.depth = sum(abs(depth_pred - target) * mask) * (1.0 / hits);
  } else {
    lb.depth = Tensor::scalar(0.0);
  }

  // --- motion (winner takes all on matched agents) -----------------------
  lb.motion = Tensor::scalar(0.0);
  std::int64_t k_mode = out.motion_logit.shape()[1];
  std::int64_t width = out.motion.shape()[1];
  std::int64_t motion_terms = 0;
  std::vector<std::int64_t> winner_rows;
  std::vector<std::int64_t> winners;
  std::vector<std::int64_t> agent_rows;
  Array future_target(det_match.matched * width);
  for (std::int64_t i = 0; i < n_a; ++i) {
    std::int64_t j = det_match.pred_to_gt[static_cast<std::size_t>(i)];
    if (j < 0) continue;
    const DetGt& g = gt.agents[static_cast<std::size_t>(j)];
    if (static_cast<std::int64_t>(g.future.size()) * 2 != width) continue;
    Array modes = out.motion.array().segment(i * k_mode * width, k_mode * width);
    std::int64_t win = min_ade_mode(modes, k_mode, g.future);
    winner_rows.push_back(i * k_mode + win);
    winners.push_back(win);
    agent_rows.push_back(i);
    future_target.segment(motion_terms * width, width) = flatten_points(g.future);
    ++motion_terms;
  }
  if (motion_terms > 0) {
    Tensor pred = take_rows(out.motion, winner_rows);
    Tensor target = Tensor::from_array(
        {motion_terms, width}, Array(future_target.head(motion_terms * width)));
    lb.motion = sum(abs(pred - target)) * (1.0 / static_cast<double>(motion_terms * width));
    // Cross-entropy pushes probability mass onto the winning mode.
    Tensor logit = take_rows(out.motion_logit, agent_rows);
    Array onehot = Array::Zero(motion_terms * k_mode);
    for (std::int64_t r = 0; r < motion_terms; ++r)
      onehot[r * k_mode + winners[static_cast<std::size_t>(r)]] = 1.0;
    Tensor pt = matmul(softmax_last(logit) * Tensor::from_array({motion_terms, k_mode}, std::move(onehot)),
                       Tensor::full({k_mode, 1}, 1.0));
    lb.motion = lb.motion + sum(0.0 - log(clamp_min(pt, 1e-12))) *
                                (1.0 / static_cast<double>(motion_terms));
  }

  // --- planning -----------------------------------------------------------
  std::int64_t t_e = out.plan.shape()[0];
  Array plan_target = flatten_points(gt.plan);
  lb.plan = sum(abs(out.plan - Tensor::from_array({t_e, 2}, std::move(plan_target)))) *
            (1.0 / static_cast<double>(t_e * 2));
  lb.plan = lb.plan + plan_constraints(out.plan, gt, weights.margins);

  lb.total = lb.det * weights.det + lb.map * weights.map + lb.depth * weights.depth +
             lb.motion * weights.motion + lb.plan * weights.plan;
  return lb;
}

namespace {

Vec2 aug_point(const Pose2& pose, bool flip, Vec2 p) {
  if (flip) p.y = -p.y;
  return pose.transform(p);
}

double aug_yaw(const Pose2& pose, bool flip, double yaw) {
  return wrap_angle(pose.yaw + (flip ? -yaw : yaw));
}

Pose2 conj_flip(const Pose2& m) { return {m.x, -m.y, wrap_angle(-m.yaw)}; }

// Mirror pixel columns of a flat (v, u, channel) image.
Array mirror_image(const Array& img, int h, int w, int ch) {
  Array out(img.size());
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u)
      out.segment((static_cast<std::int64_t>(v) * w + u) * ch, ch) =
          img.segment((static_cast<std::int64_t>(v) * w + (w - 1 - u)) * ch, ch);
  return out;
}

// Mirror patch columns of a flat patch-grid array (1 value per patch).
Array mirror_patches(const Array& a, int ph, int pw) {
  Array out(a.size());
  for (int i = 0; i < ph; ++i)
    for (int j = 0; j < pw; ++j) out[i * pw + j] = a[i * pw + (pw - 1 - j)];
  return out;
}

}  // namespace

EpisodeSample apply_augment(const EpisodeSample& s, double rotation, double tx, double ty,
                            bool flip) {
  EpisodeSample out = s;
  Pose2 a{tx, ty, rotation};

  for (auto& gt : out.gt) {
    for (auto* dets : {&gt.agents, &gt.all_agents})
      for (auto& d : *dets) {
        Vec2 c = aug_point(a, flip, {d.x, d.y});
        d.x = c.x;
        d.y = c.y;
        d.yaw = aug_yaw(a, flip, d.yaw);
        for (auto& f : d.future) f = aug_point(a, flip, f);
      }
    for (auto& m : gt.map)
      for (auto& p : m.points) p = aug_point(a, flip, p);
    for (auto& p : gt.plan) p = aug_point(a, flip, p);
    if (flip) {
      gt.canbus[1] = -gt.canbus[1];
      std::swap(gt.canbus[3], gt.canbus[5]);
      gt.command = 2 - gt.command;
    }
  }

  // Conjugate the frame-to-frame motion so it maps augmented coordinates.
  Pose2 a_inv = a.inverse();
  for (std::size_t t = 1; t < out.motion.size(); ++t) {
    Pose2 m = flip ? conj_flip(out.motion[t]) : out.motion[t];
    out.motion[t] = a.compose(m).compose(a_inv);
  }

  // Extrinsics follow the scene transform; a flip additionally mirrors the
  // camera x axis so mirrored pixel columns backproject consistently.
  Eigen::Matrix3d lin = Eigen::Matrix3d::Identity();
  lin.topLeftCorner<2, 2>() << std::cos(rotation), -std::sin(rotation), std::sin(rotation),
      std::cos(rotation);
  if (flip) lin = lin * Eigen::Vector3d(1, -1, 1).asDiagonal();
  Eigen::Matrix3d cam_mirror = Eigen::Vector3d(-1, 1, 1).asDiagonal();
  for (auto& cam : out.rig) {
    cam.R = lin * cam.R;
    if (flip) cam.R = cam.R * cam_mirror;
    cam.t = lin * cam.t + Eigen::Vector3d(tx, ty, 0.0);
  }

  if (flip) {
    int ph = s.world.img_h / s.world.patch, pw = s.world.img_w / s.world.patch;
    for (auto& frame : out.frames)
      for (std::size_t c = 0; c < frame.images.size(); ++c) {
        frame.images[c] =
            mirror_image(frame.images[c], s.world.img_h, s.world.img_w, kImageChannels);
        frame.depth_gt[c] = mirror_patches(frame.depth_gt[c], ph, pw);
        frame.depth_hit[c] = mirror_patches(frame.depth_hit[c], ph, pw);
      }
  }
  return out;
}

EpisodeSample augment_sample(const EpisodeSample& s, const AugmentConfig& cfg, Rng& rng) {
  double rot = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) * kPi / 180.0;
  double tx = rng.uniform(-cfg.max_translation, cfg.max_translation);
  double ty = rng.uniform(-cfg.max_translation, cfg.max_translation);
  bool flip = rng.bernoulli(cfg.flip_prob);
  return apply_augment(s, rot, tx, ty, flip);
}

}  // namespace ssmdrive
