#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "prowave/tensor.hpp"

// Reverse-mode differentiation over a linear tape.
//
// Every operation's backward rule is written in terms of other recorded
// operations, so gradients computed with create_graph=true are themselves
// differentiable. The gradient penalty relies on that: the input gradient of
// the critic stays connected to the critic parameters.
namespace prowave::ad {

class Tape;

// Handle to a tensor value, optionally recorded on a Tape.
class Var {
 public:
  Var() = default;
  // Untracked constant.
  explicit Var(Tensor value);

  bool defined() const { return static_cast<bool>(value_); }
  bool tracked() const { return tape_ != nullptr; }
  const Tensor& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  std::size_t size() const { return value_->size(); }
  Tape* tape() const { return tape_; }
  // Tape position; only meaningful when tracked().
  std::size_t node() const { return node_; }

 private:
  friend class Tape;
  std::shared_ptr<const Tensor> value_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

// Computes input cotangents from the output cotangent. `needs[i]` says whether
// input i requires a gradient; the rule fills `grads[i]` for those entries.
using BackwardFn = std::function<void(const Var& output, const Var& grad,
                                      std::span<const bool> needs, std::span<Var> grads)>;

// Gradients keyed by the tape node of the tensor they belong to.
class GradientMap {
 public:
  void set(std::size_t node, Tensor grad) { grads_.insert_or_assign(node, std::move(grad)); }
  bool contains(const Var& v) const { return v.tracked() && grads_.count(v.node()) > 0; }
  const Tensor& at(const Var& v) const;
  std::size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::map<std::size_t, Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Tracked input (a parameter or a tensor whose gradient is wanted).
  Var leaf(Tensor value);

  // Appends an operation. Returns an untracked Var when recording is off or
  // when no input is tracked.
  static Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }
  std::string_view op_name(std::size_t node) const { return entries_.at(node).op; }
  std::span<const Var> inputs_of(std::size_t node) const { return entries_.at(node).inputs; }

  // d(loss)/d(leaf) for every leaf recorded before the loss.
  GradientMap backward(const Var& loss);

  // d(output)/d(wrt[i]). With create_graph the results are recorded on this
  // tape and can be differentiated again. Gradients of unreachable inputs are
  // zero tensors.
  std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph);

  // Nodes whose backward rule ran during the most recent pass, in visit order.
  const std::vector<std::size_t>& last_visits() const { return visits_; }

 private:
  struct Entry {
    std::string_view op;
    std::vector<Var> inputs;
    BackwardFn backward;
    Var output;
  };

  std::vector<Var> run_backward(const Var& output, std::span<const std::size_t> targets,
                                bool create_graph);

  std::deque<Entry> entries_;
  bool recording_ = true;
  std::vector<std::size_t> visits_;
};

// Elementwise arithmetic; operands must have identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& x, float factor);
Var add_scalar(const Var& x, float value);
Var sqrt(const Var& x);

// op(a) * op(b) for rank-2 operands, op = transpose when the flag is set.
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
// x[B,I] * w[I,O] + b[O]
Var dense(const Var& x, const Var& w, const Var& b);
// Adds b[C] along the last axis of x.
Var add_bias(const Var& x, const Var& b);
// Sums every axis except the last: [..., C] -> [C].
Var sum_to_last(const Var& x);
// Repeats v[C] into `shape` whose last axis is C.
Var broadcast_last(const Var& v, const Shape& shape);

Var reshape(const Var& x, const Shape& shape);

Var relu(const Var& x);
Var lrelu(const Var& x, float alpha);
Var tanh_act(const Var& x);

// Sum of all elements -> scalar.
Var sum_all(const Var& x);
Var broadcast_scalar(const Var& s, const Shape& shape);
Var reduce_mean(const Var& x);
// Sums all but the leading axis: [B, ...] -> [B].
Var sum_rows(const Var& x);
Var broadcast_rows(const Var& v, const Shape& shape);

// Euclidean norm over all elements.
Var l2_norm(const Var& x);
// Euclidean norm of each leading-axis slice: [B, ...] -> [B].
Var row_l2_norm(const Var& x);

// Zero-padded strided cross-correlation. x[B,L,Cin], k[K,Cin,Cout] ->
// [B,ceil(L/stride),Cout].
Var conv1d(const Var& x, const Var& k, std::size_t stride);
// Adjoint of conv1d with the kernel's channel axes exchanged.
// x[B,L,Cin], k[K,Cin,Cout] -> [B,L*stride,Cout].
Var conv1d_transpose(const Var& x, const Var& k, std::size_t stride);

// Padding before the first sample for a "same"-style strided correlation
// mapping long_len samples onto ceil(long_len/stride) outputs.
std::size_t conv_pad_left(std::size_t long_len, std::size_t kernel, std::size_t stride);

// out[b,i,c] = x[b, mirror(i + shift[b,c]), c] for x[B,L,C]; shifts has B*C
// entries with |shift| < L.
Var shift_mirror(const Var& x, std::shared_ptr<const std::vector<int>> shifts);

// Gradient of sum(critic(m)) with respect to m, kept on the tape so that it
// remains differentiable with respect to the critic's parameters. The critic
// must return one scalar per batch row ([B] or [B,1]); m must be tracked.
Var input_gradient(const std::function<Var(const Var&)>& critic, const Var& m);

}  // namespace prowave::ad
