#include <algorithm>

#include "prowave/autodiff.hpp"
#include "prowave/error.hpp"

namespace prowave::ad {

Var::Var(Tensor value) : value_(std::make_shared<const Tensor>(std::move(value))) {}

const Tensor& GradientMap::at(const Var& v) const {
  if (!v.tracked()) throw ContractError("untracked tensors have no gradient");
  auto it = grads_.find(v.node());
  if (it == grads_.end()) {
    throw ContractError("no gradient recorded for tape node " + std::to_string(v.node()));
  }
  return it->second;
}

namespace {

class RecordingScope {
 public:
  RecordingScope(bool& flag, bool value) : flag_(flag), saved_(flag) { flag_ = value; }
  ~RecordingScope() { flag_ = saved_; }
  RecordingScope(const RecordingScope&) = delete;
  RecordingScope& operator=(const RecordingScope&) = delete;

 private:
  bool& flag_;
  bool saved_;
};

}  // namespace

Var Tape::leaf(Tensor value) {
  Var v(std::move(value));
  v.tape_ = this;
  v.node_ = entries_.size();
  entries_.push_back(Entry{"leaf", {}, {}, v});
  return v;
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Tape* tape = nullptr;
  for (const auto& in : inputs) {
    if (!in.tracked()) continue;
    if (tape && tape != in.tape()) {
      throw ContractError(std::string(op) + ": inputs are recorded on different tapes");
    }
    tape = in.tape();
  }
  Var out(std::move(value));
  if (!tape || !tape->recording_) return out;
  out.tape_ = tape;
  out.node_ = tape->entries_.size();
  tape->entries_.push_back(Entry{op, std::move(inputs), std::move(backward), out});
  return out;
}

std::vector<Var> Tape::run_backward(const Var& output, std::span<const std::size_t> targets,
                                    bool create_graph) {
  if (!output.tracked() || output.tape() != this) {
    throw ContractError("differentiated value was not produced under this tape");
  }
  const std::size_t n = output.node() + 1;

  // reach[i]: node i depends on some target.
  std::vector<char> reach(n, 0);
  std::vector<char> is_target(n, 0);
  for (auto t : targets) {
    if (t < n) reach[t] = is_target[t] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (reach[i]) continue;
    for (const auto& in : entries_[i].inputs) {
      if (in.tracked() && reach[in.node()]) {
        reach[i] = 1;
        break;
      }
    }
  }

  std::vector<Var> grads(n);
  visits_.clear();
  if (!reach[output.node()]) return grads;

  RecordingScope scope(recording_, create_graph);
  grads[output.node()] = Var(Tensor::filled(output.shape(), 1.0f));

  for (std::size_t i = n; i-- > 0;) {
    if (!reach[i] || !grads[i].defined()) continue;
    // Backward rules may append entries; deque references stay valid.
    const Entry& entry = entries_[i];
    if (entry.inputs.empty()) continue;
    const std::size_t arity = entry.inputs.size();
    auto needs = std::make_unique<bool[]>(arity);
    bool any = false;
    for (std::size_t j = 0; j < arity; ++j) {
      const auto& in = entry.inputs[j];
      needs[j] = in.tracked() && in.tape() == this && reach[in.node()];
      any = any || needs[j];
    }
    if (!any) continue;
    std::vector<Var> in_grads(arity);
    entry.backward(entry.output, grads[i], std::span<const bool>(needs.get(), arity), in_grads);
    visits_.push_back(i);
    for (std::size_t j = 0; j < arity; ++j) {
      if (!needs[j] || !in_grads[j].defined()) continue;
      const std::size_t dst = entry.inputs[j].node();
      if (in_grads[j].shape() != entry.inputs[j].shape()) {
        throw ShapeError(std::string(entry.op) + ": backward produced gradient of shape " +
                         to_string(in_grads[j].shape()) + " for input of shape " +
                         to_string(entry.inputs[j].shape()));
      }
      grads[dst] = grads[dst].defined() ? add(grads[dst], in_grads[j]) : in_grads[j];
    }
    if (!is_target[i]) grads[i] = Var();
  }

  std::vector<Var> out;
  out.reserve(targets.size());
  for (auto t : targets) out.push_back(t < n ? grads[t] : Var());
  return out;
}

GradientMap Tape::backward(const Var& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  GradientMap map;
  if (!loss.tracked()) return map;
  // Every leaf recorded before the loss gets an entry, zero when the loss
  // does not depend on it.
  std::vector<std::size_t> leaves;
  for (std::size_t i = 0; i <= loss.node(); ++i) {
    if (entries_[i].inputs.empty()) leaves.push_back(i);
  }
  auto grads = run_backward(loss, leaves, /*create_graph=*/false);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    map.set(leaves[i], grads[i].defined() ? grads[i].value() : Tensor(entries_[leaves[i]].output.shape()));
  }
  return map;
}

std::vector<Var> Tape::grad(const Var& output, std::span<const Var> wrt, bool create_graph) {
  std::vector<std::size_t> targets;
  for (const auto& w : wrt) {
    if (!w.tracked() || w.tape() != this) {
      throw ContractError("grad: every wrt tensor must be tracked on this tape");
    }
    targets.push_back(w.node());
  }
  auto grads = run_backward(output, targets, create_graph);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].defined()) grads[i] = Var(Tensor(wrt[i].shape()));
  }
  return grads;
}

}  // namespace prowave::ad
