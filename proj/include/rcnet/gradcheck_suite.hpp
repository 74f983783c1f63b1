#pragma once

#include "rcnet/autograd.hpp"
#include "rcnet/model.hpp"

#include <string>

#include <cstdint>
#include <string>
#include <vector>

namespace rcnet {

struct NamedReport {
  std::string name;
  GradcheckReport report;
};

/// One gradcheck per layer op (conv 3x3 and 1x1, batchnorm train and eval,
/// relu, maxpool, maxunpool, softmax, weighted cross-entropy, elementwise).
/// Inputs are drawn away from ReLU kinks and pooling ties.
std::vector<NamedReport> layer_gradchecks(std::uint64_t seed, const GradcheckOptions& opt = {});

/// Smallest distance of any ReLU input to 0 and of any pooling window's
/// positive maximum to its runner-up, over a recorded forward pass.
double kink_margin(const Tape<double>& tape);

/// ReLU masks and pool argmaxes of a recorded pass, in tape order.
std::vector<std::int64_t> kink_signature(const Tape<double>& tape);

/// Full RC-Net plus weighted cross-entropy on a 1x3xHxW input in double
/// precision. Input seeds are advanced from `seed` until the forward pass
/// keeps every ReLU input and pooling gap at least `min_margin` away from a
/// kink and no finite-difference probe flips a ReLU mask or pool argmax.
///
/// In eval mode the BN running statistics are first primed with a few
/// train-mode passes on unrelated inputs. In train mode a conv bias feeding
/// BN has an exactly zero gradient, so its finite difference is pure
/// roundoff; `skip` lists parameter names left out of the report.
struct CompositeGradcheck {
  GradcheckReport report;
  std::uint64_t input_seed = 0;
  double margin = 0.0;
};
CompositeGradcheck rcnet_gradcheck(const RCNetConfig& config, std::uint64_t seed, Index size = 16,
                                   const GradcheckOptions& opt = {}, Mode mode = Mode::Eval,
                                   double min_margin = 1e-4,
                                   const std::vector<std::string>& skip = {});

}  // namespace rcnet
