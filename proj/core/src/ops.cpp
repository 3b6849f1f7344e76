#include <cmath>

#include "prowave/autodiff.hpp"
#include "prowave/error.hpp"

namespace prowave::ad {
namespace {

void require_same_shape(std::string_view op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape(), std::vector<float>(x.size()));
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape(), std::vector<float>(a.size()));
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

// Leading extent for ops that act on the last axis.
std::size_t rows_before_last(const Shape& s) {
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  return Tape::record("add", map_binary(a.value(), b.value(), [](float x, float y) { return x + y; }),
                      {a, b}, [](const Var&, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = g;
                        grads[1] = g;
                      });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  return Tape::record("sub", map_binary(a.value(), b.value(), [](float x, float y) { return x - y; }),
                      {a, b}, [](const Var&, const Var& g, std::span<const bool> needs, std::span<Var> grads) {
                        grads[0] = g;
                        if (needs[1]) grads[1] = scale(g, -1.0f);
                      });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  return Tape::record("mul", map_binary(a.value(), b.value(), [](float x, float y) { return x * y; }),
                      {a, b}, [a, b](const Var&, const Var& g, std::span<const bool> needs, std::span<Var> grads) {
                        if (needs[0]) grads[0] = mul(g, b);
                        if (needs[1]) grads[1] = mul(g, a);
                      });
}

Var div(const Var& a, const Var& b) {
  require_same_shape("div", a, b);
  return Tape::record("div", map_binary(a.value(), b.value(), [](float x, float y) { return x / y; }),
                      {a, b}, [b](const Var& out, const Var& g, std::span<const bool> needs, std::span<Var> grads) {
                        if (needs[0]) grads[0] = div(g, b);
                        // d(a/b)/db = -(a/b)/b
                        if (needs[1]) grads[1] = scale(mul(g, div(out, b)), -1.0f);
                      });
}

Var scale(const Var& x, float factor) {
  return Tape::record("scale", map_unary(x.value(), [factor](float v) { return v * factor; }), {x},
                      [factor](const Var&, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = scale(g, factor);
                      });
}

Var add_scalar(const Var& x, float value) {
  return Tape::record("add_scalar", map_unary(x.value(), [value](float v) { return v + value; }), {x},
                      [](const Var&, const Var& g, std::span<const bool>, std::span<Var> grads) { grads[0] = g; });
}

Var sqrt(const Var& x) {
  for (float v : x.value().data()) {
    if (v < 0.0f) throw DomainError("sqrt of a negative value");
  }
  return Tape::record("sqrt", map_unary(x.value(), [](float v) { return std::sqrt(v); }), {x},
                      [](const Var& out, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = div(g, scale(out, 2.0f));
                      });
}

Var matmul(const Var& a, const Var& b, bool transpose_a, bool transpose_b) {
  if (a.value().rank() != 2 || b.value().rank() != 2) {
    throw ShapeError("matmul needs rank-2 operands, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t m = transpose_a ? a.shape()[1] : a.shape()[0];
  const std::size_t ka = transpose_a ? a.shape()[0] : a.shape()[1];
  const std::size_t kb = transpose_b ? b.shape()[1] : b.shape()[0];
  const std::size_t n = transpose_b ? b.shape()[0] : b.shape()[1];
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) +
                     (transpose_a ? "^T" : "") + " x " + to_string(b.shape()) + (transpose_b ? "^T" : ""));
  }
  const auto A = a.value().data();
  const auto B = b.value().data();
  const std::size_t a_cols = a.shape()[1];
  const std::size_t b_cols = b.shape()[1];
  std::vector<float> c(m * n, 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c.data() + i * n;
    for (std::size_t k = 0; k < ka; ++k) {
      const float av = transpose_a ? A[k * a_cols + i] : A[i * a_cols + k];
      if (av == 0.0f) continue;
      if (!transpose_b) {
        const float* brow = B.data() + k * b_cols;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * B[j * b_cols + k];
      }
    }
  }
  return Tape::record(
      "matmul", Tensor({m, n}, std::move(c)), {a, b},
      [a, b, transpose_a, transpose_b](const Var&, const Var& g, std::span<const bool> needs,
                                       std::span<Var> grads) {
        if (needs[0]) {
          grads[0] = transpose_a ? matmul(b, g, transpose_b, true) : matmul(g, b, false, !transpose_b);
        }
        if (needs[1]) {
          grads[1] = transpose_b ? matmul(g, a, true, transpose_a) : matmul(a, g, !transpose_a, false);
        }
      });
}

Var dense(const Var& x, const Var& w, const Var& b) {
  if (x.value().rank() != 2 || w.value().rank() != 2 || b.value().rank() != 1 ||
      x.shape()[1] != w.shape()[0] || w.shape()[1] != b.shape()[0]) {
    throw ShapeError("dense: x" + to_string(x.shape()) + " w" + to_string(w.shape()) + " b" +
                     to_string(b.shape()) + " do not conform");
  }
  return add_bias(matmul(x, w), b);
}

Var add_bias(const Var& x, const Var& b) {
  if (b.value().rank() != 1 || x.value().rank() == 0 || x.shape().back() != b.shape()[0]) {
    throw ShapeError("add_bias: bias " + to_string(b.shape()) + " does not match last axis of " +
                     to_string(x.shape()));
  }
  const std::size_t c = b.shape()[0];
  Tensor out = x.value();
  auto dst = out.data();
  auto bias = b.value().data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += bias[i % c];
  return Tape::record("add_bias", std::move(out), {x, b},
                      [](const Var&, const Var& g, std::span<const bool> needs, std::span<Var> grads) {
                        grads[0] = g;
                        if (needs[1]) grads[1] = sum_to_last(g);
                      });
}

Var sum_to_last(const Var& x) {
  if (x.value().rank() == 0) throw ShapeError("sum_to_last needs rank >= 1");
  const std::size_t c = x.shape().back();
  const std::size_t rows = rows_before_last(x.shape());
  std::vector<float> out(c, 0.0f);
  auto src = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[j] += src[r * c + j];
  }
  Shape in_shape = x.shape();
  return Tape::record("sum_to_last", Tensor({c}, std::move(out)), {x},
                      [in_shape](const Var&, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = broadcast_last(g, in_shape);
                      });
}

Var broadcast_last(const Var& v, const Shape& shape) {
  if (v.value().rank() != 1 || shape.empty() || shape.back() != v.shape()[0]) {
    throw ShapeError("broadcast_last: " + to_string(v.shape()) + " into " + to_string(shape));
  }
  Tensor out(shape);
  const std::size_t c = v.shape()[0];
  auto dst = out.data();
  auto src = v.value().data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i % c];
  return Tape::record("broadcast_last", std::move(out), {v},
                      [](const Var&, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = sum_to_last(g);
                      });
}

Var reshape(const Var& x, const Shape& shape) {
  Shape in_shape = x.shape();
  return Tape::record("reshape", x.value().reshaped(shape), {x},
                      [in_shape](const Var&, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = reshape(g, in_shape);
                      });
}

Var relu(const Var& x) {
  return Tape::record("relu", map_unary(x.value(), [](float v) { return v > 0.0f ? v : 0.0f; }), {x},
                      [x](const Var&, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        Var mask(map_unary(x.value(), [](float v) { return v > 0.0f ? 1.0f : 0.0f; }));
                        grads[0] = mul(g, mask);
                      });
}

Var lrelu(const Var& x, float alpha) {
  return Tape::record("lrelu", map_unary(x.value(), [alpha](float v) { return v > 0.0f ? v : alpha * v; }),
                      {x}, [x, alpha](const Var&, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        Var slope(map_unary(x.value(), [alpha](float v) { return v > 0.0f ? 1.0f : alpha; }));
                        grads[0] = mul(g, slope);
                      });
}

Var tanh_act(const Var& x) {
  return Tape::record("tanh", map_unary(x.value(), [](float v) { return std::tanh(v); }), {x},
                      [](const Var& out, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        // 1 - y^2, differentiable through y
                        grads[0] = mul(g, add_scalar(scale(mul(out, out), -1.0f), 1.0f));
                      });
}

Var sum_all(const Var& x) {
  double acc = 0.0;
  for (float v : x.value().data()) acc += v;
  Shape in_shape = x.shape();
  return Tape::record("sum_all", Tensor::scalar(static_cast<float>(acc)), {x},
                      [in_shape](const Var&, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = broadcast_scalar(g, in_shape);
                      });
}

Var broadcast_scalar(const Var& s, const Shape& shape) {
  if (s.size() != 1) throw ShapeError("broadcast_scalar needs a one-element tensor");
  Shape in_shape = s.shape();
  return Tape::record("broadcast_scalar", Tensor::filled(shape, s.value().item()), {s},
                      [in_shape](const Var&, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = reshape(sum_all(g), in_shape);
                      });
}

Var reduce_mean(const Var& x) {
  if (!x.defined() || x.size() == 0) throw ParameterError("reduce_mean of an empty tensor");
  return scale(sum_all(x), 1.0f / static_cast<float>(x.size()));
}

Var sum_rows(const Var& x) {
  if (x.value().rank() == 0) throw ShapeError("sum_rows needs rank >= 1");
  const std::size_t b = x.shape()[0];
  const std::size_t per = x.size() / b;
  std::vector<float> out(b);
  auto src = x.value().data();
  for (std::size_t r = 0; r < b; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < per; ++j) acc += src[r * per + j];
    out[r] = static_cast<float>(acc);
  }
  Shape in_shape = x.shape();
  return Tape::record("sum_rows", Tensor({b}, std::move(out)), {x},
                      [in_shape](const Var&, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = broadcast_rows(g, in_shape);
                      });
}

Var broadcast_rows(const Var& v, const Shape& shape) {
  if (v.value().rank() != 1 || shape.empty() || shape[0] != v.shape()[0]) {
    throw ShapeError("broadcast_rows: " + to_string(v.shape()) + " into " + to_string(shape));
  }
  Tensor out(shape);
  const std::size_t per = out.size() / shape[0];
  auto dst = out.data();
  auto src = v.value().data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i / per];
  return Tape::record("broadcast_rows", std::move(out), {v},
                      [](const Var&, const Var& g, std::span<const bool>, std::span<Var> grads) {
                        grads[0] = sum_rows(g);
                      });
}

namespace {
// Keeps sqrt differentiable at the origin. Below float resolution next to any
// norm of order one, so unit norms stay exact.
constexpr float kNormFloor = 1e-24f;
}  // namespace

Var l2_norm(const Var& x) {
  if (!x.defined() || x.size() == 0) throw ParameterError("l2_norm of an empty tensor");
  return sqrt(add_scalar(sum_all(mul(x, x)), kNormFloor));
}

Var row_l2_norm(const Var& x) {
  if (!x.defined() || x.size() == 0) throw ParameterError("row_l2_norm of an empty tensor");
  return sqrt(add_scalar(sum_rows(mul(x, x)), kNormFloor));
}

Var input_gradient(const std::function<Var(const Var&)>& critic, const Var& m) {
  if (!m.tracked()) throw ContractError("input_gradient: m must be tracked on a tape");
  Var out = critic(m);
  const std::size_t batch = m.shape().empty() ? 1 : m.shape()[0];
  const Shape& s = out.shape();
  const bool per_row = (s.size() == 1 && s[0] == batch) || (s.size() == 2 && s[0] == batch && s[1] == 1);
  if (!per_row) {
    throw ContractError("input_gradient: critic must return one scalar per batch row, got " + to_string(s) +
                        " for batch " + std::to_string(batch));
  }
  Var total = sum_all(out);
  if (!total.tracked()) return Var(Tensor(m.shape()));
  const Var wrt[] = {m};
  return m.tape()->grad(total, wrt, /*create_graph=*/true)[0];
}

}  // namespace prowave::ad
