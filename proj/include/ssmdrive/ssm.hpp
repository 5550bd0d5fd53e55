#pragma once

#include <cmath>
#include <utility>

#include "ssmdrive/params.hpp"
#include "ssmdrive/scan.hpp"
#include "ssmdrive/tensor.hpp"

namespace ssmdrive {

// Zero-order-hold discretization of the diagonal continuous system
// (a, b) under step delta:
//   a_bar = exp(delta * a)
//   b_bar = (delta*a)^-1 (exp(delta*a) - 1) * delta * b
// For |delta*a| < 1e-6 the quotient switches to its series (1 + delta*a/2),
// which keeps the two branches continuous to well below 1e-9.
namespace zoh {
constexpr double kSeriesThreshold = 1e-6;

inline double abar(double a, double delta) { return std::exp(delta * a); }

// phi(u) = (e^u - 1) / u with the series fallback; b_bar = delta * b * phi(u).
inline double phi(double u) {
  if (std::abs(u) < kSeriesThreshold) return 1.0 + 0.5 * u;
  return std::expm1(u) / u;
}

// d(phi)/du, consistent with the branch used by phi().
inline double dphi(double u) {
  if (std::abs(u) < kSeriesThreshold) return 0.5;
  return (u * std::exp(u) - std::expm1(u)) / (u * u);
}

inline double bbar(double a, double b, double delta) { return delta * b * phi(delta * a); }
}  // namespace zoh

// Elementwise ZOH over tensors: a [D,N], b [M,N], delta [M,D] ->
// (a_bar, b_bar) both [M,D,N].
std::pair<Tensor, Tensor> zoh_discretize(const Tensor& a, const Tensor& b, const Tensor& delta);

// Linear recurrence along the first axis, independent per (d, n):
//   h[m] = a_bar[m] ⊙ h[m-1] + b_bar[m] ⊙ x[m],   h[-1] = 0
//   y[m, d] = sum_n c[m, n] * h[m, d, n]
// a_bar/b_bar [M,D,N], x [M,D], c [M,N] -> y [M,D].
Tensor scan_discrete(const Tensor& a_bar, const Tensor& b_bar, const Tensor& x, const Tensor& c);

// Fused input-dependent scan: discretizes with a = -exp(a_log) and runs the
// recurrence without materializing a_bar/b_bar. x/delta [M,D], bmat/cmat
// [M,N], a_log [D,N] -> y [M,D]. Matches zoh_discretize + scan_discrete.
Tensor selective_scan_core(const Tensor& x, const Tensor& delta, const Tensor& bmat,
                           const Tensor& cmat, const Tensor& a_log);

// Parameters of one scan direction: log-parameterized state matrix plus the
// input-dependent projections for delta (low-rank), B and C.
struct SsmParams {
  Tensor a_log;        // [D, N]
  Linear delta_down;   // D -> rank
  Linear delta_up;     // rank -> D, bias set so softplus lands in [1e-3, 0.1]
  Linear b_proj;       // D -> N
  Linear c_proj;       // D -> N
  std::int64_t d_inner = 0, n_state = 0, dt_rank = 0;

  SsmParams() = default;
  SsmParams(ParamStore& ps, const std::string& name, std::int64_t d_inner, std::int64_t n_state,
            std::int64_t dt_rank, Rng& rng);
};

// Full selective scan: delta = softplus(delta_proj(x)), B/C projected from x.
Tensor selective_scan(const Tensor& x, const SsmParams& p);

// Bidirectional selective-state-space block:
//   pre-LN -> in_proj to (x, z) -> forward scan + backward scan with
//   independent parameters -> SiLU(z)-gated sum -> out_proj -> residual.
// An optional ScanOrder permutes the sequence before the block and restores
// it afterwards, so callers choose the serialization per invocation.
struct BMambaLayer {
  std::int64_t c_model = 0, c_inner = 0, n_state = 0, dt_rank = 0;
  Tensor ln_scale, ln_shift;  // [C]
  Linear in_proj;             // C -> 2*c_inner
  SsmParams fwd, bwd;
  Linear out_proj;            // c_inner -> C

  BMambaLayer() = default;
  BMambaLayer(ParamStore& ps, const std::string& name, std::int64_t c_model, std::int64_t expand,
              std::int64_t n_state, std::int64_t dt_rank, Rng& rng);

  // x [M, C] -> [M, C]; order, when given, must cover exactly M tokens.
  Tensor forward(const Tensor& x, const ScanOrder* order = nullptr) const;
};

}  // namespace ssmdrive
