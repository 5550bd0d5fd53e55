#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ssmdrive/rng.hpp"

namespace ssmdrive {

// Dense row-major tensor of doubles with tape-based reverse-mode autodiff.
// Design: a Tensor is a shared handle to a TensorData node; free functions
// build new nodes and, while a Tape is active and an input wants gradients,
// record a VJP closure on that tape. backward() replays the tape in reverse.

using Shape = std::vector<std::int64_t>;
using Array = Eigen::ArrayXd;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Global allocation tracker. Counts live bytes held by tensor value/grad
// buffers; the scaling benchmark reads the peak watermark.
namespace memtrack {
std::int64_t current_bytes();
std::int64_t peak_bytes();
void reset_peak();
void add(std::int64_t bytes);    // internal
void remove(std::int64_t bytes); // internal
}  // namespace memtrack

struct TensorData {
  Shape shape;
  Array value;
  Array grad;           // allocated lazily during backward
  bool has_grad = false;
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t tape_serial = 0;  // serial of the tape that produced this node

  TensorData() = default;
  ~TensorData();
  TensorData(const TensorData&) = delete;
  TensorData& operator=(const TensorData&) = delete;

  void set_value(Shape s, Array v);
  void ensure_grad();   // zero-init grad buffer if absent
  void clear_grad();    // drop grad buffer
  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
};

class Tensor {
 public:
  Tensor() = default;

  // --- constructors -------------------------------------------------------
  static Tensor zeros(const Shape& s);
  static Tensor full(const Shape& s, double v);
  static Tensor scalar(double v);
  static Tensor from(const Shape& s, const std::vector<double>& v);
  static Tensor from_array(const Shape& s, Array v);
  static Tensor randn(const Shape& s, Rng& rng, double std = 1.0);
  // Leaf that participates in gradient computation (parameters, probes).
  static Tensor leaf(const Shape& s, Array v);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const;
  std::int64_t dim(int i) const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t numel() const;

  const Array& array() const;
  Array& array();
  double* data();
  const double* data() const;

  // Element accessors for tests and host-side logic.
  double value() const;  // scalar tensors only
  double operator()(std::int64_t i) const;
  double operator()(std::int64_t i, std::int64_t j) const;
  double operator()(std::int64_t i, std::int64_t j, std::int64_t k) const;

  bool requires_grad() const;
  void set_requires_grad(bool b);
  bool has_grad() const;
  const Array& grad() const;          // valid only when has_grad()
  Array grad_or_zero() const;         // zeros when no grad was accumulated
  void clear_grad();

  std::shared_ptr<TensorData> node() const { return d_; }
  TensorData* raw() const { return d_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
  friend Tensor make_tensor(Shape s, Array v);
};

Tensor make_tensor(Shape s, Array v);

// Recorded operation: VJP closure plus the nodes it connects, kept so a tape
// can reset every gradient it touches before an accumulation pass.
struct TapeEntry {
  std::vector<std::shared_ptr<TensorData>> inputs;
  std::vector<std::shared_ptr<TensorData>> outputs;
  std::function<void()> vjp;
};

// RAII scope: while alive (and innermost), operations record onto it.
// backward(root) resets all gradients the tape references, seeds d(root)=1
// and walks entries newest-to-oldest exactly once. Two backward calls on the
// same tape therefore produce bitwise-identical gradients.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void backward(const Tensor& root);
  std::size_t size() const { return entries_.size(); }
  std::uint64_t serial() const { return serial_; }

  static Tape* active();
  static void record(TapeEntry e);
  static bool recording(const Tensor& a);
  static bool recording(const Tensor& a, const Tensor& b);
  static bool recording(const std::vector<Tensor>& ts);

 private:
  std::vector<TapeEntry> entries_;
  std::uint64_t serial_;
  Tape* prev_;
};

// --- free-function ops ------------------------------------------------------
// Binary elementwise ops broadcast when one operand's shape is a trailing
// suffix of the other's, or when one operand has a single element.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);

// y = a*x + b with scalar a/b; the building block for all tensor-scalar ops.
Tensor affine(const Tensor& x, double a, double b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }
inline Tensor operator+(const Tensor& x, double c) { return affine(x, 1.0, c); }
inline Tensor operator+(double c, const Tensor& x) { return affine(x, 1.0, c); }
inline Tensor operator-(const Tensor& x, double c) { return affine(x, 1.0, -c); }
inline Tensor operator-(double c, const Tensor& x) { return affine(x, -1.0, c); }
inline Tensor operator*(const Tensor& x, double c) { return affine(x, c, 0.0); }
inline Tensor operator*(double c, const Tensor& x) { return affine(x, c, 0.0); }
inline Tensor operator/(const Tensor& x, double c) { return affine(x, 1.0 / c, 0.0); }
inline Tensor operator-(const Tensor& x) { return affine(x, -1.0, 0.0); }

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);       // x * sigmoid(x)
Tensor softplus(const Tensor& x);   // log(1 + e^x), overflow-safe
Tensor relu(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);
Tensor tanh(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K]x[K,N] -> [M,N]
Tensor transpose(const Tensor& a);                // 2-D
Tensor reshape(const Tensor& a, const Shape& s);

Tensor sum(const Tensor& x);   // -> scalar [1]
Tensor mean(const Tensor& x);  // -> scalar [1]
Tensor sum_last(const Tensor& x);   // reduce trailing dim
Tensor mean_last(const Tensor& x);

// Row-wise layer normalization over the trailing dimension, no affine part.
// Zero-variance rows map to zeros.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);
Tensor softmax_last(const Tensor& x);

// Leading-axis gather: row i of the result is row idx[i] of x (a "row" is one
// slice of the first axis). Gradient scatter-adds, so repeated indices are fine.
Tensor take_rows(const Tensor& x, const std::vector<std::int64_t>& idx);
Tensor reverse_rows(const Tensor& x);
Tensor slice_rows(const Tensor& x, std::int64_t begin, std::int64_t count);
Tensor concat_rows(const std::vector<Tensor>& xs);

Tensor slice_last(const Tensor& x, std::int64_t begin, std::int64_t count);
Tensor concat_last(const std::vector<Tensor>& xs);

}  // namespace ssmdrive
