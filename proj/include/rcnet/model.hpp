#pragma once

#include "rcnet/autograd.hpp"
#include "rcnet/layers.hpp"
#include "rcnet/ops.hpp"
#include "rcnet/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace rcnet {

/// Channel schedule and block shape of RC-Net.
///
/// channels = output widths of (input block, down1, down2, bridge, up1, up2).
/// The identity skips add down2's output to the unpooled bridge output and
/// down1's output to the unpooled up1 output, so bridge == down2 and
/// up1 == down1 are required.
struct RCNetConfig {
  std::array<std::uint32_t, 6> channels{8, 16, 32, 32, 16, 8};
  std::uint32_t convs_per_block = 1;
  std::uint32_t in_channels = 3;
  std::uint32_t num_classes = 2;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  friend bool operator==(const RCNetConfig&, const RCNetConfig&) = default;
};

inline constexpr std::array<std::string_view, 6> kBlockNames{"block1", "down1",  "down2",
                                                             "bridge", "up1", "up2"};

/// One entry of the parameter layout: name, shape, and whether SGD updates it
/// (BN running statistics are state, not learnables).
struct ParamSpec {
  std::string name;
  Shape shape;
  bool learnable;
};

/// Full ordered layout for a configuration; checkpoints store tensors in
/// exactly this order.
std::vector<ParamSpec> param_layout(const RCNetConfig& config);

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> value;
  bool learnable = true;
};

template <typename Scalar>
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(RCNetConfig config, std::vector<NamedTensor<Scalar>> entries)
      : config_(config), entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!index_.emplace(entries_[i].name, i).second)
        throw std::invalid_argument("duplicate parameter name '" + entries_[i].name + "'");
    }
  }

  const RCNetConfig& config() const { return config_; }
  std::vector<NamedTensor<Scalar>>& entries() { return entries_; }
  const std::vector<NamedTensor<Scalar>>& entries() const { return entries_; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<Scalar>& at(const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor<Scalar>& at(const std::string& name) const {
    return entries_[index_of(name)].value;
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    std::vector<NamedTensor<Other>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_)
      out.push_back({e.name, e.value.template cast<Other>(), e.learnable});
    return ModelParams<Other>(config_, std::move(out));
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (!(a.config_ == b.config_) || a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i)
      if (a.entries_[i].name != b.entries_[i].name ||
          a.entries_[i].learnable != b.entries_[i].learnable ||
          !(a.entries_[i].value == b.entries_[i].value))
        return false;
    return true;
  }

 private:
  RCNetConfig config_;
  std::vector<NamedTensor<Scalar>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Deterministic initialization: He fan-in normal kernels, zero biases,
/// BN gamma 1 / beta 0, running mean 0 / var 1.
template <typename Scalar>
ModelParams<Scalar> build(const RCNetConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::vector<NamedTensor<Scalar>> entries;
  for (const ParamSpec& spec : param_layout(config)) {
    Tensor<Scalar> t(spec.shape);
    const std::string_view name = spec.name;
    auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() &&
             name.substr(name.size() - suffix.size()) == suffix;
    };
    if (ends_with(".weight")) {
      const double fan_in = static_cast<double>(spec.shape[1] * spec.shape[2] * spec.shape[3]);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
    } else if (ends_with(".gamma") || ends_with(".running_var")) {
      t.array().setOnes();
    }
    entries.push_back({spec.name, std::move(t), spec.learnable});
  }
  return ModelParams<Scalar>(config, std::move(entries));
}

/// Total learnable scalars (kernels, biases, BN gamma/beta).
template <typename Scalar>
std::int64_t count_params(const ModelParams<Scalar>& params) {
  std::int64_t n = 0;
  for (const auto& e : params.entries())
    if (e.learnable) n += e.value.size();
  return n;
}

/// One layer op seen during a forward pass, for structural assertions.
struct TraceEntry {
  OpId op;
  std::string where;
  Index kernel_size = 0;  // conv2d only
};

struct ForwardResult {
  NodeId probs = 0;
  NodeId logits = 0;
  /// Leaf node of each parameter entry (by entry index); running statistics
  /// are not on the tape and map to nullopt.
  std::vector<std::optional<NodeId>> param_nodes;
  /// Named intermediate maps in evaluation order.
  std::vector<std::pair<std::string, NodeId>> activations;
  std::vector<TraceEntry> trace;

  std::optional<NodeId> activation(std::string_view name) const {
    for (const auto& [n, id] : activations)
      if (n == name) return id;
    return std::nullopt;
  }
};

/// Names accepted by activation lookups, in evaluation order.
std::vector<std::string> activation_names(const RCNetConfig& config);

namespace detail {

template <typename Scalar>
class ForwardPass {
 public:
  ForwardPass(Tape<Scalar>& tape, ModelParams<Scalar>& params, Mode mode, ForwardResult& out)
      : tape_(tape), params_(params), mode_(mode), out_(out) {
    out_.param_nodes.assign(params.entries().size(), std::nullopt);
    for (std::size_t i = 0; i < params.entries().size(); ++i)
      if (params.entries()[i].learnable)
        out_.param_nodes[i] = tape.leaf(params.entries()[i].value);
  }

  NodeId param(const std::string& name) { return *out_.param_nodes[params_.index_of(name)]; }

  void capture(std::string name, NodeId id) { out_.activations.emplace_back(std::move(name), id); }

  NodeId conv(const std::string& prefix, NodeId x, Index padding) {
    const Index k = params_.at(prefix + ".weight").dim(2);
    out_.trace.push_back({OpId::Conv2d, prefix, k});
    return conv2d(tape_, x, param(prefix + ".weight"), param(prefix + ".bias"), padding);
  }

  NodeId bn(const std::string& prefix, NodeId x) {
    out_.trace.push_back({OpId::BatchNorm2d, prefix});
    return batchnorm2d(tape_, x, param(prefix + ".gamma"), param(prefix + ".beta"),
                       params_.at(prefix + ".running_mean"), params_.at(prefix + ".running_var"),
                       mode_);
  }

  NodeId relu_(const std::string& where, NodeId x) {
    out_.trace.push_back({OpId::Relu, where});
    return relu(tape_, x);
  }

  // Main path: [3x3 conv -> BN -> ReLU] x n, the last ReLU deferred until
  // after the 1x1 conv + BN residual of the block input has been added.
  NodeId block(const std::string& name, NodeId x) {
    NodeId h = x;
    const std::uint32_t n = params_.config().convs_per_block;
    for (std::uint32_t i = 1; i <= n; ++i) {
      const std::string idx = std::to_string(i);
      h = bn(name + ".bn" + idx, conv(name + ".conv" + idx, h, 1));
      if (i < n) h = relu_(name, h);
    }
    capture(name + ".main", h);
    const NodeId skip = bn(name + ".skip_bn", conv(name + ".skip", x, 0));
    capture(name + ".skip", skip);
    out_.trace.push_back({OpId::Add, name});
    const NodeId sum = add(tape_, h, skip);
    capture(name + ".residual_sum", sum);
    const NodeId y = relu_(name, sum);
    capture(name, y);
    return y;
  }

  PoolNode<Scalar> pool(const std::string& name, NodeId x) {
    out_.trace.push_back({OpId::MaxPool2d, name});
    PoolNode<Scalar> p = maxpool2d(tape_, x);
    capture(name, p.node);
    return p;
  }

  NodeId unpool(const std::string& name, NodeId y, const PoolNode<Scalar>& pooled) {
    out_.trace.push_back({OpId::MaxUnpool2d, name});
    const NodeId u = maxunpool2d(tape_, y, pooled.indices);
    capture(name, u);
    return u;
  }

  NodeId identity_skip(const std::string& name, NodeId decoder, NodeId encoder) {
    out_.trace.push_back({OpId::Add, name});
    const NodeId s = add(tape_, decoder, encoder);
    capture(name, s);
    return s;
  }

  void run(NodeId x) {
    const NodeId b1 = block("block1", x);
    const NodeId d1 = block("down1", b1);
    const PoolNode<Scalar> p1 = pool("pool1", d1);
    const NodeId d2 = block("down2", p1.node);
    const PoolNode<Scalar> p2 = pool("pool2", d2);
    const NodeId br = block("bridge", p2.node);
    const NodeId s2 = identity_skip("skip2", unpool("unpool2", br, p2), d2);
    const NodeId u1 = block("up1", s2);
    const NodeId s1 = identity_skip("skip1", unpool("unpool1", u1, p1), d1);
    const NodeId u2 = block("up2", s1);

    NodeId h = relu_("output", bn("output.bn1", conv("output.conv1", u2, 1)));
    capture("output", h);
    out_.logits = conv("head", h, 0);
    capture("logits", out_.logits);
    out_.trace.push_back({OpId::SoftmaxChannels, "head"});
    out_.probs = softmax_channels(tape_, out_.logits);
    capture("probs", out_.probs);
  }

 private:
  Tape<Scalar>& tape_;
  ModelParams<Scalar>& params_;
  Mode mode_;
  ForwardResult& out_;
};

}  // namespace detail

/// Records the RC-Net forward pass on `tape`. Train mode updates the BN
/// running statistics held in `params`.
template <typename Scalar>
ForwardResult forward(Tape<Scalar>& tape, ModelParams<Scalar>& params, const Tensor<Scalar>& x,
                      Mode mode) {
  if (x.rank() != 4 || x.dim(1) != static_cast<Index>(params.config().in_channels))
    throw ShapeError("forward: expected input [N," +
                     std::to_string(params.config().in_channels) + ",H,W], got " +
                     to_string(x.shape()));
  if (x.dim(2) % 4 || x.dim(3) % 4)
    throw ShapeError("forward: spatial dims must be multiples of 4, got " + to_string(x.shape()));
  ForwardResult result;
  detail::ForwardPass<Scalar> pass(tape, params, mode, result);
  pass.run(tape.leaf(x));
  return result;
}

/// Eval-mode inference; returns per-pixel class probabilities [N,2,H,W].
template <typename Scalar>
Tensor<Scalar> infer(const ModelParams<Scalar>& params, const Tensor<Scalar>& x) {
  ModelParams<Scalar> local = params;  // eval mode never writes, but forward takes a mutable ref
  Tape<Scalar> tape;
  const ForwardResult r = forward(tape, local, x, Mode::Eval);
  return tape.value(r.probs);
}

}  // namespace rcnet
