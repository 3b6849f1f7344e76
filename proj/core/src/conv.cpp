#include <algorithm>

#include "prowave/autodiff.hpp"
#include "prowave/error.hpp"

namespace prowave::ad {

std::size_t conv_pad_left(std::size_t long_len, std::size_t kernel, std::size_t stride) {
  const std::size_t short_len = (long_len + stride - 1) / stride;
  const std::size_t span = (short_len - 1) * stride + kernel;
  return span > long_len ? (span - long_len) / 2 : 0;
}

namespace {

// A strided correlation between a "long" signal [B, long_len, A] and a
// "short" signal [B, short_len, C] through a kernel stored as [K, A, C]:
//
//   T(x, k, y) = sum x[b, o*stride + t - pad, a] * k[t, a, c] * y[b, o, c]
//
// corr, corr_adj and corr_kgrad are the three partial derivatives of T, so the
// backward rule of each one is expressed with the other two.
struct Geometry {
  std::size_t batch = 0;
  std::size_t long_len = 0;
  std::size_t short_len = 0;
  std::size_t long_ch = 0;
  std::size_t short_ch = 0;
  std::size_t kernel = 0;
  std::size_t stride = 0;
  std::size_t pad = 0;

  Shape long_shape() const { return {batch, long_len, long_ch}; }
  Shape short_shape() const { return {batch, short_len, short_ch}; }
  Shape kernel_shape() const { return {kernel, long_ch, short_ch}; }

  // Valid taps [t0, t1) for output position o.
  std::pair<std::size_t, std::size_t> taps(std::size_t o) const {
    const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(o * stride) - static_cast<std::ptrdiff_t>(pad);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -base);
    const std::ptrdiff_t hi =
        std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(kernel), static_cast<std::ptrdiff_t>(long_len) - base);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
  }
  std::size_t first_sample(std::size_t o, std::size_t t) const { return o * stride + t - pad; }
};

float dot(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

Tensor corr_value(const Tensor& x, const Tensor& k, const Geometry& g) {
  Tensor out(g.short_shape());
  const float* X = x.data().data();
  const float* Kp = k.data().data();
  float* Y = out.data().data();
  const std::size_t A = g.long_ch, C = g.short_ch;
  for (std::size_t b = 0; b < g.batch; ++b) {
    const float* xb = X + b * g.long_len * A;
    for (std::size_t o = 0; o < g.short_len; ++o) {
      auto [t0, t1] = g.taps(o);
      if (t0 >= t1) continue;
      const float* xs = xb + g.first_sample(o, t0) * A;
      const float* ks = Kp + t0 * A * C;
      const std::size_t n = (t1 - t0) * A;
      float* y = Y + (b * g.short_len + o) * C;
      if (C == 1) {
        y[0] = dot(xs, ks, n);
      } else {
        for (std::size_t j = 0; j < n; ++j) axpy(xs[j], ks + j * C, y, C);
      }
    }
  }
  return out;
}

Tensor corr_adj_value(const Tensor& y, const Tensor& k, const Geometry& g) {
  Tensor out(g.long_shape());
  const float* Y = y.data().data();
  const float* Kp = k.data().data();
  float* X = out.data().data();
  const std::size_t A = g.long_ch, C = g.short_ch;
  for (std::size_t b = 0; b < g.batch; ++b) {
    float* xb = X + b * g.long_len * A;
    for (std::size_t o = 0; o < g.short_len; ++o) {
      auto [t0, t1] = g.taps(o);
      if (t0 >= t1) continue;
      float* xs = xb + g.first_sample(o, t0) * A;
      const float* ks = Kp + t0 * A * C;
      const std::size_t n = (t1 - t0) * A;
      const float* yv = Y + (b * g.short_len + o) * C;
      if (C == 1) {
        axpy(yv[0], ks, xs, n);
      } else {
        for (std::size_t j = 0; j < n; ++j) xs[j] += dot(yv, ks + j * C, C);
      }
    }
  }
  return out;
}

Tensor corr_kgrad_value(const Tensor& x, const Tensor& y, const Geometry& g) {
  Tensor out(g.kernel_shape());
  const float* X = x.data().data();
  const float* Y = y.data().data();
  float* Kp = out.data().data();
  const std::size_t A = g.long_ch, C = g.short_ch;
  for (std::size_t b = 0; b < g.batch; ++b) {
    const float* xb = X + b * g.long_len * A;
    for (std::size_t o = 0; o < g.short_len; ++o) {
      auto [t0, t1] = g.taps(o);
      if (t0 >= t1) continue;
      const float* xs = xb + g.first_sample(o, t0) * A;
      float* ks = Kp + t0 * A * C;
      const std::size_t n = (t1 - t0) * A;
      const float* yv = Y + (b * g.short_len + o) * C;
      if (C == 1) {
        axpy(yv[0], xs, ks, n);
      } else {
        for (std::size_t j = 0; j < n; ++j) axpy(xs[j], yv, ks + j * C, C);
      }
    }
  }
  return out;
}

Var corr(const Var& x, const Var& k, const Geometry& g);
Var corr_adj(const Var& y, const Var& k, const Geometry& g);
Var corr_kgrad(const Var& x, const Var& y, const Geometry& g);

Var corr(const Var& x, const Var& k, const Geometry& g) {
  return Tape::record("conv1d", corr_value(x.value(), k.value(), g), {x, k},
                      [x, k, g](const Var&, const Var& grad, std::span<const bool> needs, std::span<Var> grads) {
                        if (needs[0]) grads[0] = corr_adj(grad, k, g);
                        if (needs[1]) grads[1] = corr_kgrad(x, grad, g);
                      });
}

Var corr_adj(const Var& y, const Var& k, const Geometry& g) {
  return Tape::record("conv1d_adjoint", corr_adj_value(y.value(), k.value(), g), {y, k},
                      [y, k, g](const Var&, const Var& grad, std::span<const bool> needs, std::span<Var> grads) {
                        if (needs[0]) grads[0] = corr(grad, k, g);
                        if (needs[1]) grads[1] = corr_kgrad(grad, y, g);
                      });
}

Var corr_kgrad(const Var& x, const Var& y, const Geometry& g) {
  return Tape::record("conv1d_kernel_grad", corr_kgrad_value(x.value(), y.value(), g), {x, y},
                      [x, y, g](const Var&, const Var& grad, std::span<const bool> needs, std::span<Var> grads) {
                        if (needs[0]) grads[0] = corr_adj(y, grad, g);
                        if (needs[1]) grads[1] = corr(x, grad, g);
                      });
}

// [K, P, Q] -> [K, Q, P]
Var swap_channels(const Var& k) {
  const auto& s = k.shape();
  Tensor out({s[0], s[2], s[1]});
  auto src = k.value().data();
  auto dst = out.data();
  for (std::size_t t = 0; t < s[0]; ++t) {
    for (std::size_t p = 0; p < s[1]; ++p) {
      for (std::size_t q = 0; q < s[2]; ++q) dst[(t * s[2] + q) * s[1] + p] = src[(t * s[1] + p) * s[2] + q];
    }
  }
  return Tape::record("swap_channels", std::move(out), {k},
                      [](const Var&, const Var& grad, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = swap_channels(grad);
                      });
}

void check_conv_args(std::string_view op, const Var& x, const Var& k, std::size_t stride) {
  if (stride < 1) throw ParameterError(std::string(op) + ": stride must be >= 1");
  if (x.value().rank() != 3) throw ShapeError(std::string(op) + ": input must be [B,L,C], got " + to_string(x.shape()));
  if (k.value().rank() != 3) {
    throw ShapeError(std::string(op) + ": kernel must be [K,Cin,Cout], got " + to_string(k.shape()));
  }
  if (k.shape()[0] % 2 == 0) {
    throw ParameterError(std::string(op) + ": kernel length must be odd, got " + std::to_string(k.shape()[0]));
  }
  if (x.shape()[2] != k.shape()[1]) {
    throw ShapeError(std::string(op) + ": input " + to_string(x.shape()) + " has " + std::to_string(x.shape()[2]) +
                     " channels but kernel " + to_string(k.shape()) + " expects " + std::to_string(k.shape()[1]));
  }
}

}  // namespace

Var conv1d(const Var& x, const Var& k, std::size_t stride) {
  check_conv_args("conv1d", x, k, stride);
  Geometry g;
  g.batch = x.shape()[0];
  g.long_len = x.shape()[1];
  g.short_len = (g.long_len + stride - 1) / stride;
  g.long_ch = k.shape()[1];
  g.short_ch = k.shape()[2];
  g.kernel = k.shape()[0];
  g.stride = stride;
  g.pad = conv_pad_left(g.long_len, g.kernel, stride);
  return corr(x, k, g);
}

Var conv1d_transpose(const Var& x, const Var& k, std::size_t stride) {
  check_conv_args("conv1d_transpose", x, k, stride);
  Geometry g;
  g.batch = x.shape()[0];
  g.short_len = x.shape()[1];
  g.long_len = g.short_len * stride;
  g.short_ch = k.shape()[1];
  g.long_ch = k.shape()[2];
  g.kernel = k.shape()[0];
  g.stride = stride;
  g.pad = conv_pad_left(g.long_len, g.kernel, stride);
  return corr_adj(x, swap_channels(k), g);
}

namespace {

std::size_t mirror(std::ptrdiff_t i, std::size_t len) {
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(len) - 1;
  if (i < 0) return static_cast<std::size_t>(-i);
  if (i > last) return static_cast<std::size_t>(2 * last - i);
  return static_cast<std::size_t>(i);
}

using Shifts = std::shared_ptr<const std::vector<int>>;

Var shift_scatter(const Var& g, const Shifts& shifts);

Tensor shift_apply(const Tensor& x, const std::vector<int>& shifts, bool scatter) {
  const std::size_t B = x.dim(0), L = x.dim(1), C = x.dim(2);
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const int k = shifts[b * C + c];
      for (std::size_t i = 0; i < L; ++i) {
        const std::size_t j = mirror(static_cast<std::ptrdiff_t>(i) + k, L);
        if (scatter) {
          dst[(b * L + j) * C + c] += src[(b * L + i) * C + c];
        } else {
          dst[(b * L + i) * C + c] = src[(b * L + j) * C + c];
        }
      }
    }
  }
  return out;
}

Var shift_scatter(const Var& g, const Shifts& shifts) {
  return Tape::record("shift_mirror_adjoint", shift_apply(g.value(), *shifts, true), {g},
                      [shifts](const Var&, const Var& grad, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = shift_mirror(grad, shifts);
                      });
}

}  // namespace

Var shift_mirror(const Var& x, std::shared_ptr<const std::vector<int>> shifts) {
  if (x.value().rank() != 3) throw ShapeError("shift_mirror: input must be [B,L,C], got " + to_string(x.shape()));
  const std::size_t L = x.shape()[1];
  if (!shifts || shifts->size() != x.shape()[0] * x.shape()[2]) {
    throw ShapeError("shift_mirror: need one shift per (batch, channel) of " + to_string(x.shape()));
  }
  for (int k : *shifts) {
    if (static_cast<std::size_t>(k < 0 ? -k : k) >= L) {
      throw ParameterError("shift_mirror: shift " + std::to_string(k) + " too large for length " + std::to_string(L));
    }
  }
  Shifts keep = std::move(shifts);
  return Tape::record("shift_mirror", shift_apply(x.value(), *keep, false), {x},
                      [keep](const Var&, const Var& grad, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = shift_scatter(grad, keep);
                      });
}

}  // namespace prowave::ad
