#pragma once

#include "rcnet/tensor.hpp"

#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcnet {

using NodeId = std::size_t;

/// Operation identifiers known to the tape. Parameter-free ops can be
/// recorded generically through Tape::record(); layer ops are pushed by the
/// functions in ops.hpp together with their saved state.
enum class OpId : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Sum,
  Mean,
  Relu,
  Conv2d,
  BatchNorm2d,
  MaxPool2d,
  MaxUnpool2d,
  SoftmaxChannels,
  WeightedCrossEntropy,
};

inline const char* op_name(OpId op) {
  switch (op) {
    case OpId::Leaf: return "leaf";
    case OpId::Add: return "add";
    case OpId::Sub: return "sub";
    case OpId::Mul: return "mul";
    case OpId::Sum: return "sum";
    case OpId::Mean: return "mean";
    case OpId::Relu: return "relu";
    case OpId::Conv2d: return "conv2d";
    case OpId::BatchNorm2d: return "batchnorm2d";
    case OpId::MaxPool2d: return "maxpool2d";
    case OpId::MaxUnpool2d: return "maxunpool2d";
    case OpId::SoftmaxChannels: return "softmax_channels";
    case OpId::WeightedCrossEntropy: return "weighted_cross_entropy";
  }
  return "unknown";
}

template <typename Scalar>
using GradientMap = std::map<NodeId, Tensor<Scalar>>;

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
/// so the node list is always topologically sorted.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  /// Maps the gradient w.r.t. a node's output to gradients w.r.t. each of
  /// its inputs (same order as Node::inputs). An empty tensor means "no
  /// contribution".
  using BackwardFn = std::function<std::vector<TensorT>(const TensorT& grad_out)>;

  struct Node {
    OpId op;
    std::vector<NodeId> inputs;
    TensorT value;
    BackwardFn backward;
  };

  Tape() = default;
  // Backward closures hold a pointer back to their tape.
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  NodeId leaf(TensorT value) { return push(OpId::Leaf, {}, std::move(value), nullptr); }

  NodeId push(OpId op, std::vector<NodeId> inputs, TensorT value, BackwardFn backward) {
    for (NodeId in : inputs)
      if (in >= nodes_.size())
        throw std::out_of_range("tape: input node " + std::to_string(in) + " not on tape");
#ifndef NDEBUG
    if (!value.empty()) assert(value.all_finite() || !"non-finite value in forward op");
#endif
    nodes_.push_back(Node{op, std::move(inputs), std::move(value), std::move(backward)});
    return nodes_.size() - 1;
  }

  /// Records a parameter-free op. Layer ops that need extra state must go
  /// through the functions in ops.hpp and are rejected here.
  NodeId record(OpId op, const std::vector<NodeId>& inputs);

  const TensorT& value(NodeId id) const { return nodes_.at(id).value; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Fan-out gradients accumulate by
  /// addition. Only nodes reachable from the loss appear in the result.
  GradientMap<Scalar> backward(NodeId loss) const {
    const TensorT& lv = value(loss);
    if (lv.size() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + to_string(lv.shape()));
    GradientMap<Scalar> grads;
    grads.emplace(loss, ones<Scalar>(lv.shape()));
    for (NodeId id = loss + 1; id-- > 0;) {
      auto it = grads.find(id);
      if (it == grads.end()) continue;
      const Node& n = nodes_[id];
      if (!n.backward) continue;
      std::vector<TensorT> in_grads = n.backward(it->second);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (k >= in_grads.size() || in_grads[k].empty()) continue;
        auto [slot, inserted] = grads.try_emplace(n.inputs[k], std::move(in_grads[k]));
        if (!inserted) slot->second.array() += in_grads[k].array();
      }
    }
    return grads;
  }

 private:
  std::vector<Node> nodes_;
};

template <typename Scalar>
NodeId Tape<Scalar>::record(OpId op, const std::vector<NodeId>& inputs) {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n)
      throw std::invalid_argument(std::string("record: ") + op_name(op) + " expects " +
                                  std::to_string(n) + " inputs");
  };
  for (NodeId in : inputs)
    if (in >= nodes_.size())
      throw std::out_of_range("tape: input node " + std::to_string(in) + " not on tape");

  switch (op) {
    case OpId::Add: {
      arity(2);
      return push(op, inputs, rcnet::add(value(inputs[0]), value(inputs[1])),
                  [](const TensorT& g) { return std::vector<TensorT>{g, g}; });
    }
    case OpId::Sub: {
      arity(2);
      return push(op, inputs, rcnet::sub(value(inputs[0]), value(inputs[1])),
                  [](const TensorT& g) {
                    return std::vector<TensorT>{g, rcnet::scale(g, Scalar(-1))};
                  });
    }
    case OpId::Mul: {
      arity(2);
      TensorT a = value(inputs[0]), b = value(inputs[1]);
      TensorT out = rcnet::mul(a, b);
      return push(op, inputs, std::move(out), [a, b](const TensorT& g) {
        return std::vector<TensorT>{rcnet::mul(g, b), rcnet::mul(g, a)};
      });
    }
    case OpId::Sum:
    case OpId::Mean: {
      arity(1);
      const TensorT& a = value(inputs[0]);
      const Shape shape = a.shape();
      const Scalar factor = op == OpId::Sum ? Scalar(1) : Scalar(1) / Scalar(a.size());
      TensorT out = full<Scalar>({1}, a.array().sum() * factor);
      return push(op, inputs, std::move(out), [shape, factor](const TensorT& g) {
        return std::vector<TensorT>{full<Scalar>(shape, g[0] * factor)};
      });
    }
    case OpId::Relu: {
      arity(1);
      const TensorT& a = value(inputs[0]);
      TensorT out(a.shape(), a.array().max(Scalar(0)));
      // out > 0 exactly where the input was > 0; subgradient 0 at 0.
      const NodeId self = nodes_.size();
      return push(op, inputs, std::move(out), [this, self](const TensorT& g) {
        const TensorT& y = value(self);
        return std::vector<TensorT>{
            TensorT(g.shape(), (y.array() > Scalar(0)).select(g.array(), Scalar(0)))};
      });
    }
    default:
      throw std::invalid_argument(std::string("record: unknown op id '") + op_name(op) +
                                  "' for generic recording");
  }
}

// Convenience wrappers so model code reads as expressions.
template <typename Scalar>
NodeId add(Tape<Scalar>& t, NodeId a, NodeId b) { return t.record(OpId::Add, {a, b}); }
template <typename Scalar>
NodeId sub(Tape<Scalar>& t, NodeId a, NodeId b) { return t.record(OpId::Sub, {a, b}); }
template <typename Scalar>
NodeId mul(Tape<Scalar>& t, NodeId a, NodeId b) { return t.record(OpId::Mul, {a, b}); }
template <typename Scalar>
NodeId sum(Tape<Scalar>& t, NodeId a) { return t.record(OpId::Sum, {a}); }
template <typename Scalar>
NodeId mean(Tape<Scalar>& t, NodeId a) { return t.record(OpId::Mean, {a}); }
template <typename Scalar>
NodeId relu(Tape<Scalar>& t, NodeId a) { return t.record(OpId::Relu, {a}); }

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  Index checked = 0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 0.0;

  bool pass() const {
    for (const auto& e : entries)
      if (!e.pass) return false;
    return !entries.empty();
  }
};

inline std::ostream& operator<<(std::ostream& os, const GradcheckReport& r) {
  std::size_t width = 9;
  for (const auto& e : r.entries) width = std::max(width, e.name.size());
  os << std::left << std::setw(static_cast<int>(width)) << "parameter"
     << "  max_rel_error  entries  result\n";
  for (const auto& e : r.entries) {
    os << std::left << std::setw(static_cast<int>(width)) << e.name << "  "
       << std::scientific << std::setprecision(3) << std::setw(13) << e.max_rel_error << "  "
       << std::setw(7) << e.checked << "  " << (e.pass ? "PASS" : "FAIL") << '\n';
  }
  os << std::defaultfloat;
  return os;
}

/// Relative error used by gradcheck: |a - b| / max(|a|, |b|, 1e-8).
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

struct GradcheckOptions {
  double tolerance = 1e-4;
  double step = 1e-4;
  /// When > 0, only this many evenly spaced entries per parameter are probed.
  Index max_entries = 0;
};

/// A named input to gradcheck; `value` is perturbed in place during probing.
struct GradcheckParam {
  std::string name;
  TensorD* value;
};

/// Compares analytic gradients against central differences.
///
/// `fn` builds a fresh tape from the current parameter values, returns the
/// scalar loss node, and fills `leaves` with the node id of each parameter
/// (same order as `params`). Runs in double precision.
template <typename Fn>
GradcheckReport gradcheck(Fn&& fn, std::vector<GradcheckParam> params,
                          const GradcheckOptions& opt = {}) {
  auto eval = [&](std::vector<NodeId>& leaves, Tape<double>& tape) {
    leaves.clear();
    const NodeId loss = fn(tape, leaves);
    const double v = tape.value(loss)[0];
    if (!std::isfinite(v)) throw std::runtime_error("gradcheck: non-finite loss");
    return loss;
  };

  Tape<double> tape;
  std::vector<NodeId> leaves;
  const NodeId loss = eval(leaves, tape);
  if (leaves.size() != params.size())
    throw std::invalid_argument("gradcheck: fn reported a different number of leaves");
  const GradientMap<double> grads = tape.backward(loss);

  GradcheckReport report;
  report.tolerance = opt.tolerance;
  for (std::size_t p = 0; p < params.size(); ++p) {
    TensorD& value = *params[p].value;
    auto git = grads.find(leaves[p]);
    const TensorD analytic = git != grads.end() ? git->second : zeros_like(value);
    if (!analytic.all_finite()) throw std::runtime_error("gradcheck: non-finite gradient");

    GradcheckEntry entry{params[p].name};
    const Index n = value.size();
    const Index stride =
        (opt.max_entries > 0 && n > opt.max_entries) ? n / opt.max_entries : 1;
    for (Index i = 0; i < n; i += stride) {
      const double saved = value[i];
      value[i] = saved + opt.step;
      Tape<double> tp;
      std::vector<NodeId> lp;
      const double fp = tp.value(eval(lp, tp))[0];
      value[i] = saved - opt.step;
      Tape<double> tm;
      std::vector<NodeId> lm;
      const double fm = tm.value(eval(lm, tm))[0];
      value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i], numeric));
      ++entry.checked;
    }
    entry.pass = entry.max_rel_error <= opt.tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace rcnet
