#include "fanet/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fanet {
namespace {

Tensor excite(const Tensor& pooled, const DenseParams& d1, const DenseParams& d2) {
  return dense(dense(pooled, d1, Activation::kRelu), d2);
}

Tensor sc_block(const Tensor& x, const ScBlockParams& p, Activation act) {
  return activate(separable_conv2d(activate(separable_conv2d(x, p.first), act),
                                   p.second),
                  act);
}

void require_scalar_param(const Tensor& t, const char* name) {
  if (!t.defined() || t.size() != 1) {
    throw ShapeError(std::string("richards_gate: ") + name +
                     " must be a single-element tensor");
  }
  if (!std::isfinite(t.item())) {
    throw NumericError(std::string("richards_gate: ") + name + " is not finite");
  }
}

}  // namespace

std::size_t retained_count(double retention, std::size_t channels) {
  if (!(retention > 0.0 && retention <= 1.0)) {
    throw ConfigError("retention fraction k must lie in (0, 1], got " +
                      std::to_string(retention));
  }
  const auto m = static_cast<std::size_t>(
      std::llround(retention * static_cast<double>(channels)));
  return std::clamp<std::size_t>(m, 1, std::max<std::size_t>(channels, 1));
}

Tensor channel_attention(const Tensor& f, const CamParams& p) {
  if (!f.defined() || f.rank() != 4) {
    throw ShapeError("channel_attention: input must be N x H x W x C");
  }
  const std::size_t c = f.dim(3);
  if (p.reduction == 0 || c % p.reduction != 0) {
    throw ConfigError("channel_attention: C=" + std::to_string(c) +
                      " is not divisible by r=" + std::to_string(p.reduction));
  }
  const std::size_t hidden = c / p.reduction;
  auto check = [&](const DenseParams& d, std::size_t in, std::size_t out) {
    if (!d.weight.defined() || d.weight.shape() != Shape{in, out}) {
      throw ShapeError("channel_attention: dense weight " +
                       (d.weight.defined() ? to_string(d.weight.shape())
                                           : std::string("<undefined>")) +
                       " expected " + to_string(Shape{in, out}));
    }
  };
  check(p.d1, c, hidden);
  check(p.d2, hidden, c);
  const DenseParams& max_d1 = p.max_path ? p.max_path->d1 : p.d1;
  const DenseParams& max_d2 = p.max_path ? p.max_path->d2 : p.d2;
  check(max_d1, c, hidden);
  check(max_d2, hidden, c);

  Tensor ex_avg = excite(global_pool(f, PoolMode::kAvg), p.d1, p.d2);
  Tensor ex_max = excite(global_pool(f, PoolMode::kMax), max_d1, max_d2);
  return sigmoid(add(ex_max, ex_avg));
}

SpatialAttentionResult spatial_attention_with_map(const Tensor& f,
                                                  const SamParams& p,
                                                  PoolMode mode) {
  if (p.conv.kernel.defined() &&
      (p.conv.kernel.rank() != 4 || p.conv.kernel.dim(2) != 1 ||
       p.conv.kernel.dim(3) != 1)) {
    throw ShapeError("spatial_attention: kernel must be k x k x 1 x 1, got " +
                     to_string(p.conv.kernel.shape()));
  }
  Tensor pooled = channelwise_pool(f, mode);
  Tensor map = sigmoid(conv2d(pooled, p.conv));
  return {mul(f, map), map};
}

Tensor spatial_attention(const Tensor& f, const SamParams& p, PoolMode mode) {
  return spatial_attention_with_map(f, p, mode).attended;
}

Tensor richards_gate(const Tensor& alpha, const Tensor& scale,
                     const Tensor& steepness, const Tensor& location,
                     GateForm form) {
  if (!alpha.defined() || alpha.rank() != 1) {
    throw ShapeError("richards_gate: alpha must be a vector");
  }
  if (!all_finite(alpha.values())) throw NumericError("richards_gate: alpha is not finite");
  require_scalar_param(scale, "A");
  require_scalar_param(steepness, "Q");
  require_scalar_param(location, "mu");
  const double a = scale.item(), q = steepness.item(), mu = location.item();
  const std::size_t n = alpha.size();
  auto av = alpha.values();

  // Local derivatives dg/d(alpha, A, Q, mu) per element.
  std::vector<double> out(n), d_alpha(n), d_a(n), d_q(n), d_mu(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = av[i] - mu;
    const double e = std::exp(-q * u);
    if (form == GateForm::kRichards) {
      // g = sigmoid(-z), z = A e
      const double z = a * e;
      const double g = stable_sigmoid(-z);
      out[i] = g;
      const double dz = g == 0.0 ? 0.0 : -g * (1.0 - g);  // dg/dz
      d_a[i] = dz == 0.0 ? 0.0 : dz * e;
      d_alpha[i] = dz == 0.0 ? 0.0 : dz * z * -q;
      d_q[i] = dz == 0.0 ? 0.0 : dz * z * -u;
      d_mu[i] = dz == 0.0 ? 0.0 : dz * z * q;
    } else {
      const double ae = a == 0.0 ? 0.0 : a * e;
      const double g = 1.0 / (1.0 + ae);
      out[i] = g;
      const double gg = g * g;
      if (gg == 0.0) {
        d_a[i] = d_alpha[i] = d_q[i] = d_mu[i] = 0.0;
        continue;
      }
      d_a[i] = -e * gg;
      d_alpha[i] = a * e * q * gg;
      d_q[i] = a * e * u * gg;
      d_mu[i] = -a * e * q * gg;
    }
  }

  auto ai = alpha.impl();
  auto si = scale.impl();
  auto qi = steepness.impl();
  auto mi = location.impl();
  return make_result(
      {n}, std::move(out), {alpha, scale, steepness, location},
      [=](std::span<const double> g) {
        auto reduce = [&](const std::vector<double>& d) {
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i) s += g[i] * d[i];
          return s;
        };
        if (ai->requires_grad) {
          ai->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) ai->grad[i] += g[i] * d_alpha[i];
        }
        if (si->requires_grad) {
          si->ensure_grad();
          si->grad[0] += reduce(d_a);
        }
        if (qi->requires_grad) {
          qi->ensure_grad();
          qi->grad[0] += reduce(d_q);
        }
        if (mi->requires_grad) {
          mi->ensure_grad();
          mi->grad[0] += reduce(d_mu);
        }
      });
}

std::vector<std::size_t> top_channels(std::span<const double> gates,
                                      std::size_t m) {
  std::vector<std::size_t> order(gates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  m = std::min(m, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m),
                    order.end(), [&](std::size_t i, std::size_t j) {
                      if (gates[i] != gates[j]) return gates[i] > gates[j];
                      return i < j;
                    });
  order.resize(m);
  std::sort(order.begin(), order.end());
  return order;
}

FcsResult fuzzy_channel_select(const Tensor& f, const FcsParams& p) {
  if (!f.defined() || f.rank() != 4) {
    throw ShapeError("fuzzy_channel_select: input must be N x H x W x M");
  }
  const std::size_t channels = f.dim(3);
  if (!p.alpha.defined() || p.alpha.size() != channels) {
    throw ShapeError("fuzzy_channel_select: alpha length " +
                     std::to_string(p.alpha.size()) + " does not match M=" +
                     std::to_string(channels));
  }
  const std::size_t m = retained_count(p.retention, channels);
  FcsResult r;
  r.gates = richards_gate(p.alpha, p.scale, p.steepness, p.location, p.form);
  r.selected = top_channels(r.gates.values(), m);
  r.output = select_channels(mul(f, r.gates), r.selected);
  return r;
}

FcssamResult fcssam_forward(const Tensor& f_enc, const FcssamParams& p) {
  if (!f_enc.defined() || f_enc.rank() != 4) {
    throw ShapeError("fcssam_forward: input must be N x H x W x C");
  }
  const std::size_t n = f_enc.dim(0), c = f_enc.dim(3);
  FcssamResult r;
  Tensor cam = channel_attention(f_enc, p.cam);
  Tensor cam_b = reshape(cam, {n, 1, 1, c});

  SpatialAttentionResult avg, max;
  if (p.wiring == Wiring::kChannelThenSpatial) {
    Tensor f_rec = mul(f_enc, cam_b);
    avg = spatial_attention_with_map(sc_block(f_rec, p.sc_avg, p.sc_activation),
                                     p.sam_avg, PoolMode::kAvg);
    max = spatial_attention_with_map(sc_block(f_rec, p.sc_max, p.sc_activation),
                                     p.sam_max, PoolMode::kMax);
  } else {
    avg = spatial_attention_with_map(sc_block(f_enc, p.sc_avg, p.sc_activation),
                                     p.sam_avg, PoolMode::kAvg);
    max = spatial_attention_with_map(sc_block(f_enc, p.sc_max, p.sc_activation),
                                     p.sam_max, PoolMode::kMax);
    avg.attended = mul(avg.attended, cam_b);
    max.attended = mul(max.attended, cam_b);
  }
  if (avg.attended.dim(3) != c || max.attended.dim(3) != c) {
    throw ShapeError("fcssam_forward: SC blocks must keep C=" + std::to_string(c) +
                     " channels");
  }
  Tensor concat = concat_channels(avg.attended, max.attended);
  FcsResult fcs = fuzzy_channel_select(concat, p.fcs);

  r.output = fcs.output;
  r.diagnostics.cam_weights = cam;
  r.diagnostics.sam_avg_map = avg.map;
  r.diagnostics.sam_max_map = max.map;
  r.diagnostics.gates = fcs.gates;
  r.diagnostics.selected = std::move(fcs.selected);
  return r;
}

}  // namespace fanet
