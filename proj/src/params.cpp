#include "ssmdrive/params.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ssmdrive {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (params_.count(name))
    throw std::invalid_argument("params: duplicate parameter name '" + name + "'");
  t.set_requires_grad(true);
  params_.emplace(name, t);
  return t;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw std::invalid_argument("params: unknown parameter '" + name + "'");
  return it->second;
}

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(name);
  return out;
}

Linear::Linear(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out,
               Rng& rng, double std_scale, double bias_init) {
  double std = std_scale / std::sqrt(static_cast<double>(in));
  w = ps.add(name + ".w", Tensor::randn({in, out}, rng, std));
  b = ps.add(name + ".b", Tensor::full({out}, bias_init));
}

Tensor Linear::forward(const Tensor& x) const { return matmul(x, w) + b; }

Mlp2::Mlp2(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t hidden,
           std::int64_t out, Rng& rng, double out_std_scale, double out_bias)
    : l1(ps, name + ".l1", in, hidden, rng),
      l2(ps, name + ".l2", hidden, out, rng, out_std_scale, out_bias) {}

Tensor Mlp2::forward(const Tensor& x) const { return l2.forward(relu(l1.forward(x))); }

AdamW::AdamW(const ParamStore& ps, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  ps.for_each([&](const std::string&, const Tensor& t) {
    params_.push_back(t);
    m_.push_back(Array::Zero(t.numel()));
    v_.push_back(Array::Zero(t.numel()));
    accum_.push_back(Array::Zero(t.numel()));
  });
}

void AdamW::zero_accum() {
  for (auto& a : accum_) a.setZero();
}

void AdamW::accumulate(double scale) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].has_grad()) accum_[i] += scale * params_[i].grad();
  }
}

void AdamW::step(double lr_override) {
  double lr = lr_override >= 0.0 ? lr_override : lr_;
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Array& g = accum_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
    Array mhat = m_[i] / bc1;
    Array vhat = v_[i] / bc2;
    Array& p = params_[i].array();
    p -= lr * (mhat / (vhat.sqrt() + eps_) + wd_ * p);
  }
}

double cosine_lr(double lr0, std::int64_t step, std::int64_t total, std::int64_t warmup,
                 double floor_frac) {
  if (total <= 0) return lr0;
  if (warmup > 0 && step < warmup)
    return lr0 * static_cast<double>(step + 1) / static_cast<double>(warmup);
  double span = static_cast<double>(total - warmup);
  double u = span > 0.0 ? static_cast<double>(step - warmup) / span : 1.0;
  if (u > 1.0) u = 1.0;
  double lo = lr0 * floor_frac;
  return lo + (lr0 - lo) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * u));
}

// --- checkpoint ---------------------------------------------------------------

namespace {
constexpr char kMagic[] = "SSMDRIVE-CKPT-1";

template <typename T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}
}  // namespace

void save_checkpoint(const ParamStore& ps, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic) - 1);
  write_pod<std::uint64_t>(os, ps.size());
  ps.for_each([&](const std::string& name, const Tensor& t) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& s = t.shape();
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    for (auto d : s) write_pod<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * 8));
  });
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

void load_checkpoint(ParamStore& ps, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[sizeof(kMagic) - 1];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' has an unknown format or version");
  std::uint64_t count = read_pod<std::uint64_t>(is);
  if (count != ps.size())
    throw std::runtime_error("checkpoint: parameter count mismatch: file has " +
                             std::to_string(count) + ", model has " + std::to_string(ps.size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t name_len = read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint32_t ndims = read_pod<std::uint32_t>(is);
    Shape s(ndims);
    for (auto& d : s) d = read_pod<std::int64_t>(is);
    if (!ps.has(name))
      throw std::runtime_error("checkpoint: file parameter '" + name + "' not in model");
    Tensor t = ps.get(name);
    if (t.shape() != s)
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file " +
                               shape_str(s) + ", model " + shape_str(t.shape()));
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
    if (!is) throw std::runtime_error("checkpoint: truncated file '" + path + "'");
  }
}

}  // namespace ssmdrive
