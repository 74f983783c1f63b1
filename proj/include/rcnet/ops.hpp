#pragma once

// Differentiable layer ops: each computes the forward value with the kernels
// in layers.hpp and pushes a node carrying the matching backward rule.

#include "rcnet/autograd.hpp"
#include "rcnet/layers.hpp"

#include <memory>

namespace rcnet {

template <typename Scalar>
NodeId conv2d(Tape<Scalar>& tape, NodeId x, NodeId kernel, NodeId bias, Index padding) {
  Tensor<Scalar> out = conv2d(tape.value(x), tape.value(kernel), tape.value(bias), padding);
  // Inputs are read back from the tape rather than copied into the closure.
  const Tape<Scalar>* tp = &tape;
  return tape.push(OpId::Conv2d, {x, kernel, bias}, std::move(out),
                   [tp, x, kernel, padding](const Tensor<Scalar>& g) {
                     ConvGrads<Scalar> cg =
                         conv2d_backward(tp->value(x), tp->value(kernel), padding, g);
                     return std::vector<Tensor<Scalar>>{std::move(cg.input), std::move(cg.kernel),
                                                        std::move(cg.bias)};
                   });
}

/// Running statistics live outside the tape; train mode updates them in place.
template <typename Scalar>
NodeId batchnorm2d(Tape<Scalar>& tape, NodeId x, NodeId gamma, NodeId beta,
                   Tensor<Scalar>& running_mean, Tensor<Scalar>& running_var, Mode mode,
                   Scalar momentum = Scalar(0.1), Scalar eps = Scalar(1e-5)) {
  auto cache = std::make_shared<BatchNormCache<Scalar>>();
  const Tensor<Scalar>& gv = tape.value(gamma);
  Tensor<Scalar> out = batchnorm2d(tape.value(x), gv, tape.value(beta), running_mean,
                                   running_var, momentum, eps, mode, cache.get());
  return tape.push(OpId::BatchNorm2d, {x, gamma, beta}, std::move(out),
                   [cache, gv](const Tensor<Scalar>& g) {
                     BatchNormGrads<Scalar> bg = batchnorm2d_backward(*cache, gv, g);
                     return std::vector<Tensor<Scalar>>{std::move(bg.input), std::move(bg.gamma),
                                                        std::move(bg.beta)};
                   });
}

template <typename Scalar>
struct PoolNode {
  NodeId node;
  std::shared_ptr<const PoolIndices> indices;
};

template <typename Scalar>
PoolNode<Scalar> maxpool2d(Tape<Scalar>& tape, NodeId x) {
  PoolResult<Scalar> r = maxpool2d(tape.value(x));
  auto idx = std::make_shared<const PoolIndices>(std::move(r.indices));
  const NodeId id = tape.push(OpId::MaxPool2d, {x}, std::move(r.values),
                              [idx](const Tensor<Scalar>& g) {
                                return std::vector<Tensor<Scalar>>{maxpool2d_backward(*idx, g)};
                              });
  return {id, idx};
}

template <typename Scalar>
NodeId maxunpool2d(Tape<Scalar>& tape, NodeId y, std::shared_ptr<const PoolIndices> idx) {
  Tensor<Scalar> out = maxunpool2d(tape.value(y), *idx);
  return tape.push(OpId::MaxUnpool2d, {y}, std::move(out), [idx](const Tensor<Scalar>& g) {
    return std::vector<Tensor<Scalar>>{maxunpool2d_backward(*idx, g)};
  });
}

template <typename Scalar>
NodeId softmax_channels(Tape<Scalar>& tape, NodeId x) {
  const Tape<Scalar>* tp = &tape;
  const NodeId self = tape.size();
  return tape.push(OpId::SoftmaxChannels, {x}, softmax_channels(tape.value(x)),
                   [tp, self](const Tensor<Scalar>& g) {
                     return std::vector<Tensor<Scalar>>{
                         softmax_channels_backward(tp->value(self), g)};
                   });
}

template <typename Scalar>
NodeId weighted_cross_entropy(Tape<Scalar>& tape, NodeId probs, const Tensor<Scalar>& target,
                              const ClassWeights& weights, const Tensor<Scalar>& fov) {
  const Scalar loss = weighted_cross_entropy(tape.value(probs), target, weights, fov);
  const Tape<Scalar>* tp = &tape;
  return tape.push(OpId::WeightedCrossEntropy, {probs}, full<Scalar>({1}, loss),
                   [tp, probs, target, weights, fov](const Tensor<Scalar>& g) {
                     return std::vector<Tensor<Scalar>>{weighted_cross_entropy_backward(
                         tp->value(probs), target, weights, fov, g[0])};
                   });
}

}  // namespace rcnet
