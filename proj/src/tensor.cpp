#include "ssmdrive/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ssmdrive {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

// --- allocation tracking -----------------------------------------------------

namespace memtrack {
namespace {
std::atomic<std::int64_t> g_current{0};
std::atomic<std::int64_t> g_peak{0};
}  // namespace

std::int64_t current_bytes() { return g_current.load(); }
std::int64_t peak_bytes() { return g_peak.load(); }
void reset_peak() { g_peak.store(g_current.load()); }

void add(std::int64_t bytes) {
  std::int64_t cur = g_current.fetch_add(bytes) + bytes;
  std::int64_t peak = g_peak.load();
  while (cur > peak && !g_peak.compare_exchange_weak(peak, cur)) {
  }
}

void remove(std::int64_t bytes) { g_current.fetch_sub(bytes); }
}  // namespace memtrack

// --- TensorData ---------------------------------------------------------------

TensorData::~TensorData() {
  memtrack::remove(static_cast<std::int64_t>(value.size()) * 8);
  if (has_grad) memtrack::remove(static_cast<std::int64_t>(grad.size()) * 8);
}

void TensorData::set_value(Shape s, Array v) {
  if (shape_numel(s) != static_cast<std::int64_t>(v.size()))
    throw std::invalid_argument("tensor: shape " + shape_str(s) + " does not match buffer of " +
                                std::to_string(v.size()) + " elements");
  memtrack::remove(static_cast<std::int64_t>(value.size()) * 8);
  shape = std::move(s);
  value = std::move(v);
  memtrack::add(static_cast<std::int64_t>(value.size()) * 8);
}

void TensorData::ensure_grad() {
  if (!has_grad) {
    grad = Array::Zero(value.size());
    has_grad = true;
    memtrack::add(static_cast<std::int64_t>(grad.size()) * 8);
  }
}

void TensorData::clear_grad() {
  if (has_grad) {
    memtrack::remove(static_cast<std::int64_t>(grad.size()) * 8);
    grad.resize(0);
    has_grad = false;
  }
}

// --- Tensor -------------------------------------------------------------------

Tensor make_tensor(Shape s, Array v) {
  auto d = std::make_shared<TensorData>();
  d->set_value(std::move(s), std::move(v));
  return Tensor(std::move(d));
}

Tensor Tensor::zeros(const Shape& s) { return make_tensor(s, Array::Zero(shape_numel(s))); }

Tensor Tensor::full(const Shape& s, double v) {
  return make_tensor(s, Array::Constant(shape_numel(s), v));
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

Tensor Tensor::from(const Shape& s, const std::vector<double>& v) {
  return make_tensor(s, Eigen::Map<const Array>(v.data(), static_cast<Eigen::Index>(v.size())));
}

Tensor Tensor::from_array(const Shape& s, Array v) { return make_tensor(s, std::move(v)); }

Tensor Tensor::randn(const Shape& s, Rng& rng, double std) {
  Array v(shape_numel(s));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal(0.0, std);
  return make_tensor(s, std::move(v));
}

Tensor Tensor::leaf(const Shape& s, Array v) {
  Tensor t = make_tensor(s, std::move(v));
  t.set_requires_grad(true);
  return t;
}

static const Shape& require(const std::shared_ptr<TensorData>& d) {
  if (!d) throw std::invalid_argument("tensor: used before initialization");
  return d->shape;
}

const Shape& Tensor::shape() const { return require(d_); }

std::int64_t Tensor::dim(int i) const {
  const Shape& s = shape();
  if (i < 0 || i >= static_cast<int>(s.size()))
    throw std::invalid_argument("tensor: dim " + std::to_string(i) + " out of range for " +
                                shape_str(s));
  return s[static_cast<std::size_t>(i)];
}

std::int64_t Tensor::numel() const { return require(d_), d_->numel(); }

const Array& Tensor::array() const { return require(d_), d_->value; }
Array& Tensor::array() { return require(d_), d_->value; }
double* Tensor::data() { return array().data(); }
const double* Tensor::data() const { return array().data(); }

double Tensor::value() const {
  if (numel() != 1)
    throw std::invalid_argument("tensor: value() needs a single-element tensor, got " +
                                shape_str(shape()));
  return array()[0];
}

double Tensor::operator()(std::int64_t i) const { return array()[i]; }

double Tensor::operator()(std::int64_t i, std::int64_t j) const {
  const Shape& s = shape();
  return array()[i * s[s.size() - 1] + j];
}

double Tensor::operator()(std::int64_t i, std::int64_t j, std::int64_t k) const {
  const Shape& s = shape();
  return array()[(i * s[1] + j) * s[2] + k];
}

bool Tensor::requires_grad() const { return d_ && d_->requires_grad; }
void Tensor::set_requires_grad(bool b) { require(d_), d_->requires_grad = b; }
bool Tensor::has_grad() const { return d_ && d_->has_grad; }

const Array& Tensor::grad() const {
  if (!has_grad()) throw std::invalid_argument("tensor: no gradient accumulated");
  return d_->grad;
}

Array Tensor::grad_or_zero() const {
  if (has_grad()) return d_->grad;
  return Array::Zero(numel());
}

void Tensor::clear_grad() { require(d_), d_->clear_grad(); }

// --- Tape ---------------------------------------------------------------------

namespace {
thread_local Tape* t_active = nullptr;
std::atomic<std::uint64_t> g_tape_serial{1};
}  // namespace

Tape::Tape() : serial_(g_tape_serial.fetch_add(1)), prev_(t_active) { t_active = this; }

Tape::~Tape() { t_active = prev_; }

Tape* Tape::active() { return t_active; }

void Tape::record(TapeEntry e) {
  if (!t_active) return;
  for (auto& out : e.outputs) {
    out->tape_serial = t_active->serial_;
    out->is_leaf = false;
  }
  t_active->entries_.push_back(std::move(e));
}

bool Tape::recording(const Tensor& a) { return t_active && a.requires_grad(); }
bool Tape::recording(const Tensor& a, const Tensor& b) {
  return t_active && (a.requires_grad() || b.requires_grad());
}
bool Tape::recording(const std::vector<Tensor>& ts) {
  if (!t_active) return false;
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1)
    throw std::invalid_argument("backward: root must be a defined single-element tensor");
  if (!entries_.empty() && root.raw()->tape_serial != serial_ && !root.raw()->is_leaf)
    throw std::invalid_argument("backward: root was not produced under this tape");

  // Reset every gradient this tape can reach, then seed the root. This makes
  // backward idempotent: re-running it reproduces identical gradients.
  for (auto& e : entries_) {
    for (auto& n : e.inputs) n->clear_grad();
    for (auto& n : e.outputs) n->clear_grad();
  }
  root.raw()->clear_grad();
  root.raw()->ensure_grad();
  root.raw()->grad[0] = 1.0;

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    bool any = false;
    for (auto& n : it->outputs)
      if (n->has_grad) {
        any = true;
        break;
      }
    if (any) it->vjp();
  }
}

// --- op helpers ---------------------------------------------------------------

namespace {

// Result of suffix-broadcast shape analysis: `big` holds the output shape,
// `rep` the number of leading repetitions of the small operand (1 = aligned).
struct Bcast {
  bool a_is_big;
  std::int64_t rep;
  std::int64_t inner;
};

Bcast analyze_broadcast(const char* op, const Shape& a, const Shape& b, std::int64_t na,
                        std::int64_t nb) {
  auto is_suffix = [](const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    for (std::size_t i = 0; i < small.size(); ++i)
      if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
    return true;
  };
  if (a == b) return {true, 1, na};
  if (nb == 1) return {true, na, 1};
  if (na == 1) return {false, nb, 1};
  if (is_suffix(b, a)) return {true, na / nb, nb};
  if (is_suffix(a, b)) return {false, nb / na, na};
  throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                              shape_str(b) +
                              " are not broadcast-compatible (trailing-suffix rule)");
}

void accumulate(const std::shared_ptr<TensorData>& n, const Array& g) {
  if (!n->requires_grad) return;
  n->ensure_grad();
  n->grad += g;
}

// Reduce a full-size gradient onto the small operand of a broadcast.
Array reduce_to(const Array& g, std::int64_t rep, std::int64_t inner) {
  if (rep == 1) return g;
  Array out = Array::Zero(inner);
  for (std::int64_t r = 0; r < rep; ++r) out += g.segment(r * inner, inner);
  return out;
}

// Tile the small operand of a broadcast up to full size.
Array tile_to(const Array& v, std::int64_t rep, std::int64_t inner) {
  if (rep == 1) return v;
  Array out(rep * inner);
  for (std::int64_t r = 0; r < rep; ++r) out.segment(r * inner, inner) = v;
  return out;
}

Tensor binary_op(const char* name, const Tensor& a, const Tensor& b,
                 const std::function<Array(const Array&, const Array&)>& fwd,
                 const std::function<Array(const Array&, const Array&, const Array&, const Array&)>& dda,
                 const std::function<Array(const Array&, const Array&, const Array&, const Array&)>& ddb) {
  Bcast bc = analyze_broadcast(name, a.shape(), b.shape(), a.numel(), b.numel());
  const Shape& out_shape = bc.a_is_big ? a.shape() : b.shape();

  Array big_a, big_b;
  const Array* pa = &a.array();
  const Array* pb = &b.array();
  if (bc.rep != 1) {
    if (bc.a_is_big) {
      big_b = tile_to(*pb, bc.rep, bc.inner);
      pb = &big_b;
    } else {
      big_a = tile_to(*pa, bc.rep, bc.inner);
      pa = &big_a;
    }
  }

  Tensor out = make_tensor(out_shape, fwd(*pa, *pb));
  if (Tape::recording(a, b)) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    bool a_big = bc.a_is_big;
    std::int64_t rep = bc.rep, inner = bc.inner;
    Tape::record({{an, bn},
                  {on},
                  [an, bn, on, dda, ddb, a_big, rep, inner]() {
                    // Rebuild tiled operands on demand instead of storing them.
                    Array sa = a_big ? an->value : tile_to(an->value, rep, inner);
                    Array sb = a_big ? tile_to(bn->value, rep, inner) : bn->value;
                    const Array& go = on->grad;
                    if (an->requires_grad) {
                      Array ga = dda(go, sa, sb, on->value);
                      accumulate(an, a_big ? ga : reduce_to(ga, rep, inner));
                    }
                    if (bn->requires_grad) {
                      Array gb = ddb(go, sa, sb, on->value);
                      accumulate(bn, a_big ? reduce_to(gb, rep, inner) : gb);
                    }
                  }});
  }
  return out;
}

Tensor unary_op(const Tensor& x, Array value,
                const std::function<Array(const Array& go, const Array& xv, const Array& yv)>& dfdx) {
  Tensor out = make_tensor(x.shape(), std::move(value));
  if (Tape::recording(x)) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto on = out.node();
    Tape::record({{xn}, {on}, [xn, on, dfdx]() {
                    accumulate(xn, dfdx(on->grad, xn->value, on->value));
                  }});
  }
  return out;
}

}  // namespace

// --- binary elementwise -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](const Array& x, const Array& y) { return Array(x + y); },
      [](const Array& g, const Array&, const Array&, const Array&) { return g; },
      [](const Array& g, const Array&, const Array&, const Array&) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](const Array& x, const Array& y) { return Array(x - y); },
      [](const Array& g, const Array&, const Array&, const Array&) { return g; },
      [](const Array& g, const Array&, const Array&, const Array&) { return Array(-g); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](const Array& x, const Array& y) { return Array(x * y); },
      [](const Array& g, const Array&, const Array& y, const Array&) { return Array(g * y); },
      [](const Array& g, const Array& x, const Array&, const Array&) { return Array(g * x); });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_op(
      "divide", a, b, [](const Array& x, const Array& y) { return Array(x / y); },
      [](const Array& g, const Array&, const Array& y, const Array&) { return Array(g / y); },
      [](const Array& g, const Array& x, const Array& y, const Array&) {
        return Array(-g * x / (y * y));
      });
}

// --- unary elementwise --------------------------------------------------------

Tensor affine(const Tensor& x, double a, double b) {
  return unary_op(x, Array(a * x.array() + b),
                  [a](const Array& g, const Array&, const Array&) { return Array(a * g); });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, Array(x.array().exp()),
                  [](const Array& g, const Array&, const Array& y) { return Array(g * y); });
}

Tensor log(const Tensor& x) {
  return unary_op(x, Array(x.array().log()),
                  [](const Array& g, const Array& xv, const Array&) { return Array(g / xv); });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(x, Array(x.array().sqrt()), [](const Array& g, const Array&, const Array& y) {
    return Array(g / (2.0 * y));
  });
}

Tensor sin(const Tensor& x) {
  return unary_op(x, Array(x.array().sin()), [](const Array& g, const Array& xv, const Array&) {
    return Array(g * xv.cos());
  });
}

Tensor cos(const Tensor& x) {
  return unary_op(x, Array(x.array().cos()), [](const Array& g, const Array& xv, const Array&) {
    return Array(-g * xv.sin());
  });
}

Tensor abs(const Tensor& x) {
  return unary_op(x, Array(x.array().abs()), [](const Array& g, const Array& xv, const Array&) {
    return Array(g * xv.sign());
  });
}

Tensor square(const Tensor& x) {
  return unary_op(x, Array(x.array().square()),
                  [](const Array& g, const Array& xv, const Array&) { return Array(2.0 * g * xv); });
}

Tensor sigmoid(const Tensor& x) {
  Array y = 0.5 * (0.5 * x.array()).tanh() + 0.5;  // overflow-safe logistic
  return unary_op(x, std::move(y), [](const Array& g, const Array&, const Array& yv) {
    return Array(g * yv * (1.0 - yv));
  });
}

Tensor silu(const Tensor& x) {
  Array s = 0.5 * (0.5 * x.array()).tanh() + 0.5;
  return unary_op(x, Array(x.array() * s),
                  [](const Array& g, const Array& xv, const Array&) {
                    Array s = 0.5 * (0.5 * xv).tanh() + 0.5;
                    return Array(g * (s + xv * s * (1.0 - s)));
                  });
}

Tensor softplus(const Tensor& x) {
  // log(1+e^x) = max(x,0) + log1p(e^{-|x|})
  Array y = x.array().max(0.0) + (-x.array().abs()).exp().log1p();
  return unary_op(x, std::move(y), [](const Array& g, const Array& xv, const Array&) {
    Array s = 0.5 * (0.5 * xv).tanh() + 0.5;
    return Array(g * s);
  });
}

Tensor relu(const Tensor& x) {
  return unary_op(x, Array(x.array().max(0.0)), [](const Array& g, const Array& xv, const Array&) {
    return Array(g * (xv > 0.0).cast<double>());
  });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary_op(x, Array(x.array().max(lo)), [lo](const Array& g, const Array& xv, const Array&) {
    return Array(g * (xv > lo).cast<double>());
  });
}

Tensor tanh(const Tensor& x) {
  return unary_op(x, Array(x.array().tanh()), [](const Array& g, const Array&, const Array& yv) {
    return Array(g * (1.0 - yv.square()));
  });
}

// --- matmul / reshape ---------------------------------------------------------

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const RowMat>;
using MapMatMut = Eigen::Map<RowMat>;

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expects 2-D operands, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  std::int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  Array out(m * n);
  MapMatMut(out.data(), m, n).noalias() = MapMat(a.data(), m, k) * MapMat(b.data(), k, n);
  Tensor t = make_tensor({m, n}, std::move(out));
  if (Tape::recording(a, b)) {
    t.set_requires_grad(true);
    auto an = a.node();
    auto bn = b.node();
    auto on = t.node();
    Tape::record({{an, bn}, {on}, [an, bn, on, m, k, n]() {
                    MapMat go(on->grad.data(), m, n);
                    if (an->requires_grad) {
                      an->ensure_grad();
                      MapMatMut(an->grad.data(), m, k).noalias() +=
                          go * MapMat(bn->value.data(), k, n).transpose();
                    }
                    if (bn->requires_grad) {
                      bn->ensure_grad();
                      MapMatMut(bn->grad.data(), k, n).noalias() +=
                          MapMat(an->value.data(), m, k).transpose() * go;
                    }
                  }});
  }
  return t;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2)
    throw std::invalid_argument("transpose: expects a 2-D tensor, got " + shape_str(a.shape()));
  std::int64_t m = a.dim(0), n = a.dim(1);
  Array out(m * n);
  MapMatMut(out.data(), n, m) = MapMat(a.data(), m, n).transpose();
  Tensor t = make_tensor({n, m}, std::move(out));
  if (Tape::recording(a)) {
    t.set_requires_grad(true);
    auto an = a.node();
    auto on = t.node();
    Tape::record({{an}, {on}, [an, on, m, n]() {
                    an->ensure_grad();
                    MapMatMut(an->grad.data(), m, n) += MapMat(on->grad.data(), n, m).transpose();
                  }});
  }
  return t;
}

Tensor reshape(const Tensor& a, const Shape& s) {
  if (shape_numel(s) != a.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(s));
  Tensor t = make_tensor(s, a.array());
  if (Tape::recording(a)) {
    t.set_requires_grad(true);
    auto an = a.node();
    auto on = t.node();
    Tape::record({{an}, {on}, [an, on]() { accumulate(an, on->grad); }});
  }
  return t;
}

// --- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x) {
  Tensor t = make_tensor({1}, Array::Constant(1, x.array().sum()));
  if (Tape::recording(x)) {
    t.set_requires_grad(true);
    auto xn = x.node();
    auto on = t.node();
    Tape::record({{xn}, {on}, [xn, on]() {
                    accumulate(xn, Array::Constant(xn->value.size(), on->grad[0]));
                  }});
  }
  return t;
}

Tensor mean(const Tensor& x) { return sum(x) / static_cast<double>(x.numel()); }

Tensor sum_last(const Tensor& x) {
  if (x.rank() < 1)
    throw std::invalid_argument("sum_last: tensor has no dimensions");
  const Shape& s = x.shape();
  std::int64_t inner = s.back();
  std::int64_t outer = x.numel() / inner;
  Shape os(s.begin(), s.end() - 1);
  if (os.empty()) os = {1};
  Array out(outer);
  for (std::int64_t i = 0; i < outer; ++i) out[i] = x.array().segment(i * inner, inner).sum();
  Tensor t = make_tensor(os, std::move(out));
  if (Tape::recording(x)) {
    t.set_requires_grad(true);
    auto xn = x.node();
    auto on = t.node();
    Tape::record({{xn}, {on}, [xn, on, outer, inner]() {
                    Array g(outer * inner);
                    for (std::int64_t i = 0; i < outer; ++i)
                      g.segment(i * inner, inner).setConstant(on->grad[i]);
                    accumulate(xn, g);
                  }});
  }
  return t;
}

Tensor mean_last(const Tensor& x) {
  return sum_last(x) / static_cast<double>(x.shape().back());
}

// --- fused row-wise primitives --------------------------------------------------

Tensor layer_norm(const Tensor& x, double eps) {
  const Shape& s = x.shape();
  std::int64_t inner = s.back();
  std::int64_t outer = x.numel() / inner;
  Array out(x.numel());
  Array rstd(outer);
  for (std::int64_t i = 0; i < outer; ++i) {
    auto row = x.array().segment(i * inner, inner);
    double m = row.mean();
    double var = (row - m).square().mean();
    rstd[i] = 1.0 / std::sqrt(var + eps);
    out.segment(i * inner, inner) = (row - m) * rstd[i];
  }
  Tensor t = make_tensor(s, std::move(out));
  if (Tape::recording(x)) {
    t.set_requires_grad(true);
    auto xn = x.node();
    auto on = t.node();
    Tape::record({{xn}, {on}, [xn, on, rstd = std::move(rstd), outer, inner]() {
                    Array g(outer * inner);
                    double n = static_cast<double>(inner);
                    for (std::int64_t i = 0; i < outer; ++i) {
                      auto go = on->grad.segment(i * inner, inner);
                      auto yv = on->value.segment(i * inner, inner);
                      double gsum = go.sum();
                      double gysum = (go * yv).sum();
                      g.segment(i * inner, inner) =
                          rstd[i] * (go - gsum / n - yv * gysum / n);
                    }
                    accumulate(xn, g);
                  }});
  }
  return t;
}

Tensor softmax_last(const Tensor& x) {
  const Shape& s = x.shape();
  std::int64_t inner = s.back();
  std::int64_t outer = x.numel() / inner;
  Array out(x.numel());
  for (std::int64_t i = 0; i < outer; ++i) {
    auto row = x.array().segment(i * inner, inner);
    Array e = (row - row.maxCoeff()).exp();
    out.segment(i * inner, inner) = e / e.sum();
  }
  Tensor t = make_tensor(s, std::move(out));
  if (Tape::recording(x)) {
    t.set_requires_grad(true);
    auto xn = x.node();
    auto on = t.node();
    Tape::record({{xn}, {on}, [xn, on, outer, inner]() {
                    Array g(outer * inner);
                    for (std::int64_t i = 0; i < outer; ++i) {
                      auto go = on->grad.segment(i * inner, inner);
                      auto yv = on->value.segment(i * inner, inner);
                      double dot = (go * yv).sum();
                      g.segment(i * inner, inner) = yv * (go - dot);
                    }
                    accumulate(xn, g);
                  }});
  }
  return t;
}

// --- gather / slice / concat ----------------------------------------------------

namespace {
std::int64_t row_stride(const Shape& s) {
  std::int64_t n = 1;
  for (std::size_t i = 1; i < s.size(); ++i) n *= s[i];
  return n;
}
}  // namespace

Tensor take_rows(const Tensor& x, const std::vector<std::int64_t>& idx) {
  const Shape& s = x.shape();
  std::int64_t rows = s[0];
  std::int64_t stride = row_stride(s);
  for (auto i : idx)
    if (i < 0 || i >= rows)
      throw std::invalid_argument("take_rows: index " + std::to_string(i) +
                                  " out of range for " + shape_str(s));
  Shape os = s;
  os[0] = static_cast<std::int64_t>(idx.size());
  Array out(os[0] * stride);
  for (std::size_t r = 0; r < idx.size(); ++r)
    out.segment(static_cast<std::int64_t>(r) * stride, stride) =
        x.array().segment(idx[r] * stride, stride);
  Tensor t = make_tensor(os, std::move(out));
  if (Tape::recording(x)) {
    t.set_requires_grad(true);
    auto xn = x.node();
    auto on = t.node();
    Tape::record({{xn}, {on}, [xn, on, idx, stride]() {
                    xn->ensure_grad();
                    for (std::size_t r = 0; r < idx.size(); ++r)
                      xn->grad.segment(idx[r] * stride, stride) +=
                          on->grad.segment(static_cast<std::int64_t>(r) * stride, stride);
                  }});
  }
  return t;
}

Tensor reverse_rows(const Tensor& x) {
  std::int64_t rows = x.shape()[0];
  std::vector<std::int64_t> idx(static_cast<std::size_t>(rows));
  for (std::int64_t i = 0; i < rows; ++i) idx[static_cast<std::size_t>(i)] = rows - 1 - i;
  return take_rows(x, idx);
}

Tensor slice_rows(const Tensor& x, std::int64_t begin, std::int64_t count) {
  const Shape& s = x.shape();
  if (begin < 0 || count < 0 || begin + count > s[0])
    throw std::invalid_argument("slice_rows: range [" + std::to_string(begin) + "," +
                                std::to_string(begin + count) + ") out of bounds for " +
                                shape_str(s));
  std::int64_t stride = row_stride(s);
  Shape os = s;
  os[0] = count;
  Tensor t = make_tensor(os, Array(x.array().segment(begin * stride, count * stride)));
  if (Tape::recording(x)) {
    t.set_requires_grad(true);
    auto xn = x.node();
    auto on = t.node();
    Tape::record({{xn}, {on}, [xn, on, begin, count, stride]() {
                    xn->ensure_grad();
                    xn->grad.segment(begin * stride, count * stride) += on->grad;
                  }});
  }
  return t;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty input list");
  Shape tail(xs[0].shape().begin() + 1, xs[0].shape().end());
  std::int64_t rows = 0;
  for (const auto& x : xs) {
    Shape t(x.shape().begin() + 1, x.shape().end());
    if (t != tail)
      throw std::invalid_argument("concat_rows: trailing shapes disagree: " +
                                  shape_str(xs[0].shape()) + " vs " + shape_str(x.shape()));
    rows += x.shape()[0];
  }
  Shape os = xs[0].shape();
  os[0] = rows;
  std::int64_t stride = row_stride(os);
  Array out(rows * stride);
  std::int64_t at = 0;
  for (const auto& x : xs) {
    out.segment(at, x.numel()) = x.array();
    at += x.numel();
  }
  Tensor t = make_tensor(os, std::move(out));
  if (Tape::recording(xs)) {
    t.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData>> ins;
    ins.reserve(xs.size());
    for (const auto& x : xs) ins.push_back(x.node());
    auto on = t.node();
    Tape::record({ins, {on}, [ins, on]() {
                    std::int64_t at = 0;
                    for (const auto& n : ins) {
                      std::int64_t sz = static_cast<std::int64_t>(n->value.size());
                      if (n->requires_grad) {
                        n->ensure_grad();
                        n->grad += on->grad.segment(at, sz);
                      }
                      at += sz;
                    }
                  }});
  }
  return t;
}

Tensor slice_last(const Tensor& x, std::int64_t begin, std::int64_t count) {
  const Shape& s = x.shape();
  std::int64_t inner = s.back();
  std::int64_t outer = x.numel() / inner;
  if (begin < 0 || count < 0 || begin + count > inner)
    throw std::invalid_argument("slice_last: range [" + std::to_string(begin) + "," +
                                std::to_string(begin + count) + ") out of bounds for " +
                                shape_str(s));
  Shape os = s;
  os.back() = count;
  Array out(outer * count);
  for (std::int64_t i = 0; i < outer; ++i)
    out.segment(i * count, count) = x.array().segment(i * inner + begin, count);
  Tensor t = make_tensor(os, std::move(out));
  if (Tape::recording(x)) {
    t.set_requires_grad(true);
    auto xn = x.node();
    auto on = t.node();
    Tape::record({{xn}, {on}, [xn, on, begin, count, inner, outer]() {
                    xn->ensure_grad();
                    for (std::int64_t i = 0; i < outer; ++i)
                      xn->grad.segment(i * inner + begin, count) +=
                          on->grad.segment(i * count, count);
                  }});
  }
  return t;
}

Tensor concat_last(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_last: empty input list");
  Shape lead(xs[0].shape().begin(), xs[0].shape().end() - 1);
  std::int64_t inner = 0;
  for (const auto& x : xs) {
    Shape l(x.shape().begin(), x.shape().end() - 1);
    if (l != lead)
      throw std::invalid_argument("concat_last: leading shapes disagree: " +
                                  shape_str(xs[0].shape()) + " vs " + shape_str(x.shape()));
    inner += x.shape().back();
  }
  std::int64_t outer = shape_numel(lead);
  Shape os = xs[0].shape();
  os.back() = inner;
  Array out(outer * inner);
  std::int64_t at = 0;
  for (const auto& x : xs) {
    std::int64_t w = x.shape().back();
    for (std::int64_t i = 0; i < outer; ++i)
      out.segment(i * inner + at, w) = x.array().segment(i * w, w);
    at += w;
  }
  Tensor t = make_tensor(os, std::move(out));
  if (Tape::recording(xs)) {
    t.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData>> ins;
    ins.reserve(xs.size());
    std::vector<std::int64_t> widths;
    for (const auto& x : xs) {
      ins.push_back(x.node());
      widths.push_back(x.shape().back());
    }
    auto on = t.node();
    Tape::record({ins, {on}, [ins, on, widths, inner, outer]() {
                    std::int64_t at = 0;
                    for (std::size_t k = 0; k < ins.size(); ++k) {
                      std::int64_t w = widths[k];
                      if (ins[k]->requires_grad) {
                        ins[k]->ensure_grad();
                        for (std::int64_t i = 0; i < outer; ++i)
                          ins[k]->grad.segment(i * w, w) += on->grad.segment(i * inner + at, w);
                      }
                      at += w;
                    }
                  }});
  }
  return t;
}

}  // namespace ssmdrive
