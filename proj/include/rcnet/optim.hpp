#pragma once

#include "rcnet/data.hpp"
#include "rcnet/layers.hpp"
#include "rcnet/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcnet {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 0.01;
  int batch_size = 4;
  int epochs = 1;
  std::uint64_t seed = 0;
  /// nullopt selects median-frequency balancing over the training split.
  std::optional<ClassWeights> loss_weights;
  bool deterministic = true;

  void validate() const;
};

/// Per-class pixel frequencies inside the FOV, as used by median frequency
/// balancing: f_c = (FOV pixels of class c over images containing c) /
/// (FOV pixels of those images).
std::pair<double, double> class_frequencies(const std::vector<Sample>& samples);

/// w_c = median(f) / f_c, with median(f) = (f_0 + f_1) / 2 for two classes.
ClassWeights median_frequency_weights(const std::vector<Sample>& samples);
ClassWeights median_frequency_weights(double f_background, double f_vessel);

/// w <- w - lr * g for every learnable entry. BN running statistics are not
/// touched. `grads` is indexed like params.entries(); entries without a
/// gradient are left unchanged.
template <typename Scalar>
void sgd_step(ModelParams<Scalar>& params, const std::vector<std::optional<Tensor<Scalar>>>& grads,
              Scalar learning_rate) {
  auto& entries = params.entries();
  if (grads.size() != entries.size())
    throw TrainingError("sgd_step: gradient list does not match parameter list");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].learnable || !grads[i]) continue;
    const Tensor<Scalar>& g = *grads[i];
    if (g.shape() != entries[i].value.shape())
      throw TrainingError("sgd_step: gradient shape " + to_string(g.shape()) + " for '" +
                          entries[i].name + "' expected " + to_string(entries[i].value.shape()));
    if (!g.all_finite())
      throw TrainingError("sgd_step: non-finite gradient for '" + entries[i].name + "'");
  }
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].learnable && grads[i])
      entries[i].value.array() -= learning_rate * grads[i]->array();
}

/// Gradients of the learnable entries after a backward pass, indexed like
/// params.entries().
template <typename Scalar>
std::vector<std::optional<Tensor<Scalar>>> collect_gradients(const ForwardResult& forward,
                                                             const GradientMap<Scalar>& grads) {
  std::vector<std::optional<Tensor<Scalar>>> out(forward.param_nodes.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (forward.param_nodes[i])
      if (auto it = grads.find(*forward.param_nodes[i]); it != grads.end()) out[i] = it->second;
  return out;
}

/// Source of training samples: a plain list or a lazily augmented set.
struct SampleSource {
  std::size_t count = 0;
  std::function<Sample(std::size_t)> fetch;

  static SampleSource of(const std::vector<Sample>& samples);
  static SampleSource of(const AugmentedSet& set);
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_acc = 0.0;  // pixel accuracy inside the FOV, argmax prediction
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  ClassWeights weights;
};

/// Per-epoch CSV line: epoch,mean_loss,train_acc,wall_seconds.
void write_epoch_csv(std::ostream& os, const EpochLog& e);
inline constexpr const char* kEpochCsvHeader = "epoch,mean_loss,train_acc,wall_seconds";

/// Plain SGD over epochs x batches. `weights_source` is used for median
/// frequency balancing when config.loss_weights is unset. The callback sees
/// every finished epoch.
TrainResult train(ModelParams<float>& params, const SampleSource& data, const TrainConfig& config,
                  const std::vector<Sample>& weights_source,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace rcnet
