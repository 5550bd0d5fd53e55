#include "ssmdrive/token.hpp"

#include <cmath>
#include <stdexcept>

namespace ssmdrive {

namespace {

// Angular frequency of band b under geometric wavelength spacing.
double band_omega(const SineSpec& spec, int b) {
  const double two_pi = 6.28318530717958647692;
  if (spec.bands == 1) return two_pi / spec.lambda_min;
  double frac = static_cast<double>(b) / static_cast<double>(spec.bands - 1);
  double lambda = spec.lambda_min * std::pow(spec.lambda_max / spec.lambda_min, frac);
  return two_pi / lambda;
}

}  // namespace

Tensor sine_encode(const Tensor& coords, const SineSpec& spec) {
  if (coords.rank() != 2) throw std::invalid_argument("sine_encode: coords must be [M, K]");
  std::int64_t k = coords.shape()[1];
  std::int64_t w = k * spec.width_per_coord();

  // Block frequency matrix: coordinate k feeds its own 2*bands slice, each
  // band duplicated into the (sin, cos) pair of columns.
  Array fm = Array::Zero(k * w);
  Array mask_sin = Array::Zero(w);
  Array mask_cos = Array::Zero(w);
  for (std::int64_t c = 0; c < k; ++c)
    for (int b = 0; b < spec.bands; ++b) {
      std::int64_t col = c * spec.width_per_coord() + 2 * b;
      double omega = band_omega(spec, b);
      fm[c * w + col] = omega;
      fm[c * w + col + 1] = omega;
      mask_sin[col] = 1.0;
      mask_cos[col + 1] = 1.0;
    }
  Tensor freq = Tensor::from_array({k, w}, std::move(fm));
  Tensor theta = matmul(coords, freq);
  return sin(theta) * Tensor::from_array({w}, std::move(mask_sin)) +
         cos(theta) * Tensor::from_array({w}, std::move(mask_cos));
}

PeParams::PeParams(ParamStore& ps, const std::string& name, std::int64_t c_model, Rng& rng)
    : te_width(64), c_model(c_model) {
  temporal.bands = 32;  // one coordinate: same 64-wide slice as each spatial axis
  te = ps.add(name + ".te", Tensor::randn({kTokenKindCount, te_width}, rng, 0.02));
  std::int64_t in = 3 * spatial.width_per_coord() + temporal.width_per_coord() + te_width;
  proj = Linear(ps, name + ".proj", in, c_model, rng);
}

Tensor PeParams::build(const Tensor& pos3, const Tensor& timestamp,
                       const std::vector<TokenKind>& kinds) const {
  if (pos3.rank() != 2 || pos3.shape()[1] != 3)
    throw std::invalid_argument("pe: positions must be [M, 3]");
  std::int64_t m = pos3.shape()[0];
  if (timestamp.rank() != 2 || timestamp.shape()[0] != m || timestamp.shape()[1] != 1)
    throw std::invalid_argument("pe: timestamps must be [M, 1]");
  if (static_cast<std::int64_t>(kinds.size()) != m)
    throw std::invalid_argument("pe: kind count " + std::to_string(kinds.size()) +
                                " != token count " + std::to_string(m));
  Tensor spe = sine_encode(pos3, spatial);
  Tensor tpe = sine_encode(timestamp, temporal);
  std::vector<std::int64_t> rows(kinds.size());
  for (std::size_t i = 0; i < kinds.size(); ++i) rows[i] = static_cast<std::int64_t>(kinds[i]);
  Tensor kind_emb = take_rows(te, rows);
  return proj.forward(concat_last({spe, tpe, kind_emb}));
}

Tensor lift_bev(const Tensor& ref) {
  if (ref.rank() != 2 || ref.shape()[1] != 2)
    throw std::invalid_argument("lift_bev: expected [M, 2]");
  return concat_last({ref, Tensor::zeros({ref.shape()[0], 1})});
}

PatchEncoder::PatchEncoder(ParamStore& ps, const std::string& name, int patch, int channels,
                           int h_px, int w_px, std::int64_t c_model, Rng& rng)
    : patch(patch), channels(channels), h_px(h_px), w_px(w_px) {
  if (h_px % patch != 0 || w_px % patch != 0)
    throw std::invalid_argument("patch encoder: image extents must divide by the patch size");
  std::int64_t in = static_cast<std::int64_t>(patch) * patch * channels;
  mlp = Mlp2(ps, name, in, c_model, c_model, rng);
}

Tensor PatchEncoder::encode(const std::vector<Array>& images) const {
  std::int64_t per_cam = tokens_per_camera();
  std::int64_t px = static_cast<std::int64_t>(patch) * patch * channels;
  std::int64_t expected = static_cast<std::int64_t>(h_px) * w_px * channels;
  std::int64_t g = per_cam * static_cast<std::int64_t>(images.size());
  Array patches = Array::Zero(g * px);
  int ph = h_px / patch, pw = w_px / patch;
  for (std::size_t cam = 0; cam < images.size(); ++cam) {
    const Array& img = images[cam];
    if (img.size() != expected)
      throw std::invalid_argument("patch encoder: camera " + std::to_string(cam) + " holds " +
                                  std::to_string(img.size()) + " values, expected " +
                                  std::to_string(expected));
    for (int i = 0; i < ph; ++i)
      for (int j = 0; j < pw; ++j) {
        std::int64_t tok = static_cast<std::int64_t>(cam) * per_cam + i * pw + j;
        std::int64_t out = tok * px;
        for (int dv = 0; dv < patch; ++dv)
          for (int du = 0; du < patch; ++du)
            for (int ch = 0; ch < channels; ++ch)
              patches[out++] =
                  img[((i * patch + dv) * static_cast<std::int64_t>(w_px) + j * patch + du) *
                          channels +
                      ch];
      }
  }
  return mlp.forward(Tensor::from_array({g, px}, std::move(patches)));
}

std::vector<Vec2> patch_centers(int h_px, int w_px, int patch) {
  std::vector<Vec2> out;
  for (int i = 0; i < h_px / patch; ++i)
    for (int j = 0; j < w_px / patch; ++j) out.push_back({(j + 0.5) * patch, (i + 0.5) * patch});
  return out;
}

DepthHead::DepthHead(ParamStore& ps, const std::string& name, std::int64_t c_model, Rng& rng,
                     double init_depth) {
  // softplus(bias) == init_depth exactly.
  double bias = std::log(std::expm1(init_depth));
  lin = Linear(ps, name, c_model, 1, rng, 1.0, bias);
}

Tensor DepthHead::forward(const Tensor& sem) const { return softplus(lin.forward(sem)); }

CanbusEncoder::CanbusEncoder(ParamStore& ps, const std::string& name, std::int64_t c_model,
                             Rng& rng) {
  lin = Linear(ps, name, kCanbusDim, c_model, rng);
}

Tensor CanbusEncoder::forward(const Tensor& canbus) const { return relu(lin.forward(canbus)); }

Mln::Mln(ParamStore& ps, const std::string& name, std::int64_t c_model, Rng& rng) {
  scale_net = Mlp2(ps, name + ".scale", kCondDim, c_model, c_model, rng, /*out_std_scale=*/0.0);
  shift_net = Mlp2(ps, name + ".shift", kCondDim, c_model, c_model, rng, /*out_std_scale=*/0.0);
}

Tensor Mln::forward(const Tensor& x, const Tensor& cond) const {
  if (cond.rank() != 2 || cond.shape()[1] != kCondDim)
    throw std::invalid_argument("mln: conditioning must be [M, 7]");
  Tensor c = cond;
  if (cond.shape()[0] == 1 && x.shape()[0] != 1) {
    // Tile the single conditioning row across all tokens.
    c = matmul(Tensor::full({x.shape()[0], 1}, 1.0), cond);
  }
  Tensor s = scale_net.forward(c) + 1.0;
  Tensor t = shift_net.forward(c);
  return layer_norm(x) * s + t;
}

WaypointPrior waypoint_prior_from_string(const std::string& s) {
  if (s == "origin") return WaypointPrior::Origin;
  if (s == "uniform") return WaypointPrior::Uniform;
  if (s == "random") return WaypointPrior::Random;
  throw std::invalid_argument("waypoint prior: unknown mode '" + s +
                              "' (expected origin|uniform|random)");
}

std::vector<TokenKind> task_kinds(const TaskLayout& layout) {
  std::vector<TokenKind> kinds;
  kinds.reserve(static_cast<std::size_t>(layout.total()));
  for (std::int64_t i = 0; i < layout.n_agent; ++i) kinds.push_back(TokenKind::Agent);
  for (std::int64_t i = 0; i < layout.n_map * layout.points_per_map; ++i)
    kinds.push_back(TokenKind::Map);
  kinds.push_back(TokenKind::Ego);
  for (std::int64_t i = 0; i < layout.t_e; ++i) kinds.push_back(TokenKind::Waypoint);
  return kinds;
}

std::pair<std::int64_t, std::int64_t> uniform_grid_dims(std::int64_t n, double rx, double ry) {
  if (n <= 0) throw std::invalid_argument("uniform_grid_dims: need n > 0");
  double target = std::log(rx / ry);
  std::int64_t best_x = 1;
  double best_d = 1e300;
  for (std::int64_t gx = 1; gx <= n; ++gx) {
    if (n % gx != 0) continue;
    double d = std::abs(std::log(static_cast<double>(gx) / static_cast<double>(n / gx)) - target);
    if (d < best_d - 1e-12) {
      best_d = d;
      best_x = gx;
    }
  }
  return {best_x, n / best_x};
}

Array init_reference_positions(const TaskLayout& layout, double range_x, double range_y,
                               WaypointPrior prior, Rng& rng, double uniform_dx,
                               double uniform_dy) {
  Array out = Array::Zero(layout.total() * 2);
  auto set = [&](std::int64_t row, double x, double y) {
    out[2 * row] = x;
    out[2 * row + 1] = y;
  };

  auto [gx, gy] = uniform_grid_dims(layout.n_agent, range_x, range_y);
  for (std::int64_t i = 0; i < layout.n_agent; ++i) {
    std::int64_t ix = i % gx, iy = i / gx;
    set(i, (ix + 0.5) / static_cast<double>(gx) * range_x - range_x / 2,
        (iy + 0.5) / static_cast<double>(gy) * range_y - range_y / 2);
  }

  // Map instances: horizontal polylines at uniform depths across the range.
  for (std::int64_t m = 0; m < layout.n_map; ++m) {
    double y = (m + 0.5) / static_cast<double>(layout.n_map) * range_y - range_y / 2;
    for (std::int64_t p = 0; p < layout.points_per_map; ++p) {
      double x = layout.points_per_map == 1
                     ? 0.0
                     : static_cast<double>(p) / static_cast<double>(layout.points_per_map - 1) *
                               range_x -
                           range_x / 2;
      set(layout.map_begin() + m * layout.points_per_map + p, x, y);
    }
  }

  set(layout.ego_begin(), 0.0, 0.0);

  for (std::int64_t j = 0; j < layout.t_e; ++j) {
    std::int64_t row = layout.waypoint_begin() + j;
    switch (prior) {
      case WaypointPrior::Origin:
        set(row, 0.0, 0.0);
        break;
      case WaypointPrior::Uniform:
        set(row, (j + 1) * uniform_dx, (j + 1) * uniform_dy);
        break;
      case WaypointPrior::Random:
        set(row, rng.uniform(-range_x / 2, range_x / 2), rng.uniform(-range_y / 2, range_y / 2));
        break;
    }
  }
  return out;
}

}  // namespace ssmdrive
