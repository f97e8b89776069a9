#include "fanet/nn_ops.hpp"

#include <algorithm>
#include <cmath>

namespace fanet {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op,
                  const char* what) {
  if (!t.defined() || t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " +
                     std::to_string(rank) +
                     (t.defined() ? ", got " + to_string(t.shape()) : ""));
  }
}

void require_spatial(const Tensor& x, const char* op) {
  require_rank(x, 4, op, "input");
  if (x.dim(1) == 0 || x.dim(2) == 0 || x.dim(3) == 0 || x.dim(0) == 0) {
    throw ShapeError(std::string(op) + ": zero-size input " +
                     to_string(x.shape()));
  }
}

struct Geometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

Geometry conv_geometry(std::size_t in, std::size_t k, std::size_t stride,
                       Padding padding, const char* op) {
  Geometry g;
  if (padding == Padding::kSame) {
    if (k % 2 == 0) {
      throw ShapeError(std::string(op) + ": same padding needs odd kernel, got " +
                       std::to_string(k));
    }
    g.out = (in + stride - 1) / stride;
    const std::size_t needed = (g.out - 1) * stride + k;
    const std::size_t total = needed > in ? needed - in : 0;
    g.pad_before = total / 2;
  } else {
    if (in < k) {
      throw ShapeError(std::string(op) + ": valid padding with input " +
                       std::to_string(in) + " smaller than kernel " +
                       std::to_string(k));
    }
    g.out = (in - k) / stride + 1;
  }
  return g;
}

}  // namespace

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  require_spatial(x, "conv2d");
  require_rank(p.kernel, 4, "conv2d", "kernel");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t kh = p.kernel.dim(0), kw = p.kernel.dim(1),
                    cout = p.kernel.dim(3);
  if (p.kernel.dim(2) != cin) {
    throw ShapeError("conv2d: channel mismatch, input " + to_string(x.shape()) +
                     " vs kernel " + to_string(p.kernel.shape()));
  }
  if (p.bias.defined() && p.bias.shape() != Shape{cout}) {
    throw ShapeError("conv2d: bias shape " + to_string(p.bias.shape()) +
                     " does not match Cout " + std::to_string(cout));
  }
  if (p.stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t stride = p.stride;
  const Geometry gy = conv_geometry(h, kh, stride, p.padding, "conv2d");
  const Geometry gx = conv_geometry(w, kw, stride, p.padding, "conv2d");
  const std::size_t oh = gy.out, ow = gx.out;

  auto xv = x.values();
  auto kv = p.kernel.values();
  std::vector<double> out(n * oh * ow * cout, 0.0);
  // Visits (output pixel, input tap) pairs; calls fn(out_base, in_base, k_base).
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const std::size_t o_base = ((b * oh + oy) * ow + ox) * cout;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                      static_cast<std::ptrdiff_t>(gy.pad_before);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(gx.pad_before);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t i_base =
                  ((b * h + static_cast<std::size_t>(iy)) * w +
                   static_cast<std::size_t>(ix)) * cin;
              const std::size_t k_base = (ky * kw + kx) * cin * cout;
              fn(o_base, i_base, k_base);
            }
          }
        }
  };

  for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double xval = xv[i + ci];
      const double* krow = &kv[k + ci * cout];
      double* orow = &out[o];
      for (std::size_t co = 0; co < cout; ++co) orow[co] += xval * krow[co];
    }
  });
  if (p.bias.defined()) {
    auto bv = p.bias.values();
    for (std::size_t i = 0; i < out.size(); i += cout)
      for (std::size_t co = 0; co < cout; ++co) out[i + co] += bv[co];
  }

  auto xi = x.impl();
  auto ki = p.kernel.impl();
  auto bi = p.bias.defined() ? p.bias.impl() : nullptr;
  return make_result(
      {n, oh, ow, cout}, std::move(out), {x, p.kernel, p.bias},
      [=](std::span<const double> g) {
        if (xi->requires_grad) xi->ensure_grad();
        if (ki->requires_grad) ki->ensure_grad();
        for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) {
          const double* grow = &g[o];
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* krow = &ki->values[k + ci * cout];
            if (xi->requires_grad) {
              double s = 0.0;
              for (std::size_t co = 0; co < cout; ++co) s += grow[co] * krow[co];
              xi->grad[i + ci] += s;
            }
            if (ki->requires_grad) {
              const double xval = xi->values[i + ci];
              double* kg = &ki->grad[k + ci * cout];
              for (std::size_t co = 0; co < cout; ++co) kg[co] += xval * grow[co];
            }
          }
        });
        if (bi && bi->requires_grad) {
          bi->ensure_grad();
          for (std::size_t i = 0; i < g.size(); i += cout)
            for (std::size_t co = 0; co < cout; ++co) bi->grad[co] += g[i + co];
        }
      });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
  require_spatial(x, "depthwise_conv2d");
  require_rank(kernel, 3, "depthwise_conv2d", "kernel");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1);
  if (kernel.dim(2) != c) {
    throw ShapeError("depthwise_conv2d: channel mismatch, input " +
                     to_string(x.shape()) + " vs kernel " +
                     to_string(kernel.shape()));
  }
  const std::size_t py = conv_geometry(h, kh, 1, Padding::kSame, "depthwise_conv2d").pad_before;
  const std::size_t px = conv_geometry(w, kw, 1, Padding::kSame, "depthwise_conv2d").pad_before;

  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oy = 0; oy < h; ++oy)
        for (std::size_t ox = 0; ox < w; ++ox) {
          const std::size_t o_base = ((b * h + oy) * w + ox) * c;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) -
                                      static_cast<std::ptrdiff_t>(py);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) -
                                        static_cast<std::ptrdiff_t>(px);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t i_base =
                  ((b * h + static_cast<std::size_t>(iy)) * w +
                   static_cast<std::size_t>(ix)) * c;
              fn(o_base, i_base, (ky * kw + kx) * c);
            }
          }
        }
  };

  auto xv = x.values();
  auto kv = kernel.values();
  std::vector<double> out(x.size(), 0.0);
  for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) {
    for (std::size_t ch = 0; ch < c; ++ch) out[o + ch] += xv[i + ch] * kv[k + ch];
  });

  auto xi = x.impl();
  auto ki = kernel.impl();
  return make_result(x.shape(), std::move(out), {x, kernel},
                     [=](std::span<const double> g) {
                       if (xi->requires_grad) xi->ensure_grad();
                       if (ki->requires_grad) ki->ensure_grad();
                       for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           if (xi->requires_grad)
                             xi->grad[i + ch] += g[o + ch] * ki->values[k + ch];
                           if (ki->requires_grad)
                             ki->grad[k + ch] += g[o + ch] * xi->values[i + ch];
                         }
                       });
                     });
}

Tensor separable_conv2d(const Tensor& x, const SeparableConv2dParams& p) {
  require_rank(p.pointwise, 4, "separable_conv2d", "pointwise kernel");
  if (p.pointwise.dim(0) != 1 || p.pointwise.dim(1) != 1) {
    throw ShapeError("separable_conv2d: pointwise kernel must be 1x1, got " +
                     to_string(p.pointwise.shape()));
  }
  Tensor spatial = depthwise_conv2d(x, p.depthwise);
  return conv2d(spatial, Conv2dParams{p.pointwise, p.bias, 1, Padding::kSame});
}

Tensor global_pool(const Tensor& x, PoolMode mode) {
  require_spatial(x, "global_pool");
  const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  auto xv = x.values();
  std::vector<double> out(n * c, 0.0);
  std::vector<std::size_t> argmax;
  if (mode == PoolMode::kAvg) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t s = 0; s < hw; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
          out[b * c + ch] += xv[(b * hw + s) * c + ch];
    for (double& v : out) v /= static_cast<double>(hw);
  } else {
    argmax.assign(n * c, 0);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = b * hw * c + ch;
        for (std::size_t s = 1; s < hw; ++s) {
          const std::size_t idx = (b * hw + s) * c + ch;
          if (xv[idx] > xv[best]) best = idx;
        }
        argmax[b * c + ch] = best;
        out[b * c + ch] = xv[best];
      }
  }
  auto xi = x.impl();
  return make_result({n, c}, std::move(out), {x},
                     [=, argmax = std::move(argmax)](std::span<const double> g) {
                       xi->ensure_grad();
                       if (mode == PoolMode::kMax) {
                         for (std::size_t j = 0; j < g.size(); ++j)
                           xi->grad[argmax[j]] += g[j];
                         return;
                       }
                       const double inv = 1.0 / static_cast<double>(hw);
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t s = 0; s < hw; ++s)
                           for (std::size_t ch = 0; ch < c; ++ch)
                             xi->grad[(b * hw + s) * c + ch] += g[b * c + ch] * inv;
                     });
}

Tensor channelwise_pool(const Tensor& x, PoolMode mode) {
  require_spatial(x, "channelwise_pool");
  const std::size_t pixels = x.dim(0) * x.dim(1) * x.dim(2), c = x.dim(3);
  auto xv = x.values();
  std::vector<double> out(pixels);
  std::vector<std::size_t> argmax;
  if (mode == PoolMode::kMax) argmax.resize(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* row = &xv[p * c];
    if (mode == PoolMode::kAvg) {
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) s += row[ch];
      out[p] = s / static_cast<double>(c);
    } else {
      std::size_t best = 0;
      for (std::size_t ch = 1; ch < c; ++ch)
        if (row[ch] > row[best]) best = ch;
      argmax[p] = best;
      out[p] = row[best];
    }
  }
  auto xi = x.impl();
  return make_result({x.dim(0), x.dim(1), x.dim(2), 1}, std::move(out), {x},
                     [=, argmax = std::move(argmax)](std::span<const double> g) {
                       xi->ensure_grad();
                       for (std::size_t p = 0; p < pixels; ++p) {
                         if (mode == PoolMode::kMax) {
                           xi->grad[p * c + argmax[p]] += g[p];
                         } else {
                           const double d = g[p] / static_cast<double>(c);
                           for (std::size_t ch = 0; ch < c; ++ch)
                             xi->grad[p * c + ch] += d;
                         }
                       }
                     });
}

Tensor dense(const Tensor& x, const DenseParams& p, Activation activation) {
  require_rank(x, 2, "dense", "input");
  require_rank(p.weight, 2, "dense", "weight");
  if (x.dim(1) != p.weight.dim(0)) {
    throw ShapeError("dense: input " + to_string(x.shape()) +
                     " does not match weight " + to_string(p.weight.shape()));
  }
  Tensor y = matmul(x, p.weight);
  if (p.bias.defined()) y = add(y, p.bias);
  return activate(y, activation);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels", "a");
  require_rank(b, 4, "concat_channels", "b");
  if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw ShapeError("concat_channels: batch/spatial mismatch " +
                     to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const std::size_t pixels = a.dim(0) * a.dim(1) * a.dim(2);
  const std::size_t ca = a.dim(3), cb = b.dim(3), c = ca + cb;
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(pixels * c);
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(&av[p * ca], ca, &out[p * c]);
    std::copy_n(&bv[p * cb], cb, &out[p * c + ca]);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result({a.dim(0), a.dim(1), a.dim(2), c}, std::move(out), {a, b},
                     [=](std::span<const double> g) {
                       if (ai->requires_grad) {
                         ai->ensure_grad();
                         for (std::size_t p = 0; p < pixels; ++p)
                           for (std::size_t ch = 0; ch < ca; ++ch)
                             ai->grad[p * ca + ch] += g[p * c + ch];
                       }
                       if (bi->requires_grad) {
                         bi->ensure_grad();
                         for (std::size_t p = 0; p < pixels; ++p)
                           for (std::size_t ch = 0; ch < cb; ++ch)
                             bi->grad[p * cb + ch] += g[p * c + ca + ch];
                       }
                     });
}

Tensor select_channels(const Tensor& x, std::span<const std::size_t> channels) {
  if (!x.defined() || x.rank() == 0) throw ShapeError("select_channels: empty input");
  const std::size_t c = x.shape().back();
  for (std::size_t ch : channels) {
    if (ch >= c) {
      throw ShapeError("select_channels: channel " + std::to_string(ch) +
                       " out of range for " + to_string(x.shape()));
    }
  }
  const std::size_t rows = x.size() / c, m = channels.size();
  std::vector<std::size_t> idx(channels.begin(), channels.end());
  auto xv = x.values();
  std::vector<double> out(rows * m);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = xv[r * c + idx[j]];
  Shape shape = x.shape();
  shape.back() = m;
  auto xi = x.impl();
  return make_result(std::move(shape), std::move(out), {x},
                     [=, idx = std::move(idx)](std::span<const double> g) {
                       xi->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < m; ++j)
                           xi->grad[r * c + idx[j]] += g[r * m + j];
                     });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), {x},
                     [xi](std::span<const double> g) {
                       xi->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (xi->values[i] > 0.0) xi->grad[i] += g[i];
                     });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(xv[i]);
  auto xi = x.impl();
  return make_result(x.shape(), out, {x},
                     [xi, out](std::span<const double> g) {
                       xi->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         xi->grad[i] += g[i] * out[i] * (1.0 - out[i]);
                     });
}

Tensor activate(const Tensor& x, Activation activation) {
  switch (activation) {
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kNone: break;
  }
  return x;
}

namespace {

void require_rows(const Tensor& x, const char* op) {
  require_rank(x, 2, op, "input");
  if (x.dim(1) == 0) throw ShapeError(std::string(op) + ": empty class axis");
  if (!all_finite(x.values())) throw NumericError(std::string(op) + ": NaN/Inf input");
}

}  // namespace

Tensor softmax(const Tensor& x) {
  require_rows(x, "softmax");
  const std::size_t n = x.dim(0), k = x.dim(1);
  auto xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = &xv[r * k];
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (out[r * k + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= z;
  }
  auto xi = x.impl();
  return make_result(x.shape(), out, {x},
                     [xi, out, n, k](std::span<const double> g) {
                       xi->ensure_grad();
                       for (std::size_t r = 0; r < n; ++r) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < k; ++j)
                           dot += g[r * k + j] * out[r * k + j];
                         for (std::size_t j = 0; j < k; ++j)
                           xi->grad[r * k + j] += out[r * k + j] * (g[r * k + j] - dot);
                       }
                     });
}

Tensor log_softmax(const Tensor& x) {
  require_rows(x, "log_softmax");
  const std::size_t n = x.dim(0), k = x.dim(1);
  auto xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = &xv[r * k];
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = row[j] - lse;
  }
  auto xi = x.impl();
  return make_result(x.shape(), out, {x},
                     [xi, out, n, k](std::span<const double> g) {
                       xi->ensure_grad();
                       for (std::size_t r = 0; r < n; ++r) {
                         double gs = 0.0;
                         for (std::size_t j = 0; j < k; ++j) gs += g[r * k + j];
                         for (std::size_t j = 0; j < k; ++j)
                           xi->grad[r * k + j] +=
                               g[r * k + j] - std::exp(out[r * k + j]) * gs;
                       }
                     });
}

}  // namespace fanet
