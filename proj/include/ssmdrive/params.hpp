#pragma once

#include <map>
#include <string>
#include <vector>

#include "ssmdrive/tensor.hpp"

namespace ssmdrive {

// Registry of named trainable tensors. Iteration order is the lexicographic
// order of parameter paths, so optimizer state, checkpoints and gradient
// reductions all see parameters in one deterministic order.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }
  std::int64_t total_elements() const;

  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [name, t] : params_) fn(name, t);
  }
  std::vector<std::string> names() const;

 private:
  std::map<std::string, Tensor> params_;
};

// Fully connected layer, weight stored [in, out] row-major: y = x*W + b.
struct Linear {
  Tensor w;
  Tensor b;

  Linear() = default;
  // std_scale multiplies the default 1/sqrt(in) weight deviation; the final
  // layers of residual heads use 0 to start as an identity contribution.
  Linear(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
         double std_scale = 1.0, double bias_init = 0.0);
  Tensor forward(const Tensor& x) const;
};

// Linear -> ReLU -> Linear.
struct Mlp2 {
  Linear l1, l2;
  Mlp2() = default;
  Mlp2(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t hidden,
       std::int64_t out, Rng& rng, double out_std_scale = 1.0, double out_bias = 0.0);
  Tensor forward(const Tensor& x) const;
};

// Decoupled weight decay Adam. The trainer accumulates episode gradients into
// the optimizer's buffers, then steps once per batch.
class AdamW {
 public:
  AdamW(const ParamStore& ps, double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  void zero_accum();
  // Adds each parameter's current tape gradient (zeros when absent) into the
  // accumulator, scaled by `scale`.
  void accumulate(double scale = 1.0);
  void step(double lr_override = -1.0);
  double lr() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Array> m_, v_, accum_;
  double lr_, wd_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

// Cosine decay from lr0 to lr0*floor_frac over total steps, after a short
// linear warmup.
double cosine_lr(double lr0, std::int64_t step, std::int64_t total, std::int64_t warmup = 0,
                 double floor_frac = 0.01);

// Binary checkpoint I/O. The file starts with a versioned magic string and
// stores every parameter as (name, shape, f64 data); loading validates the
// magic and every shape against the live store.
void save_checkpoint(const ParamStore& ps, const std::string& path);
void load_checkpoint(ParamStore& ps, const std::string& path);

}  // namespace ssmdrive
