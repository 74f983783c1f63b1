#include "rcnet/optim.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <future>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace rcnet {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("train: learning_rate must be a finite value >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (loss_weights && (!(loss_weights->background > 0.0) || !(loss_weights->vessel > 0.0)))
    throw std::invalid_argument("train: loss weights must be positive");
}

std::pair<double, double> class_frequencies(const std::vector<Sample>& samples) {
  // [class] -> (class pixels, FOV pixels of images containing the class)
  std::array<double, 2> pixels{0, 0}, totals{0, 0};
  for (const Sample& s : samples) {
    std::array<double, 2> count{0, 0};
    for (Index i = 0; i < s.fov.size(); ++i)
      if (s.fov[i] >= 0.5f) ++count[s.label[i] >= 0.5f ? 1 : 0];
    const double fov = count[0] + count[1];
    for (int c = 0; c < 2; ++c)
      if (count[c] > 0) {
        pixels[c] += count[c];
        totals[c] += fov;
      }
  }
  for (int c = 0; c < 2; ++c)
    if (pixels[c] == 0)
      throw std::invalid_argument(std::string("median frequency: class '") +
                                  (c ? "vessel" : "background") +
                                  "' is absent from every training image");
  return {pixels[0] / totals[0], pixels[1] / totals[1]};
}

ClassWeights median_frequency_weights(double f_background, double f_vessel) {
  if (!(f_background > 0.0) || !(f_vessel > 0.0))
    throw std::invalid_argument("median frequency: class frequencies must be positive");
  const double median = 0.5 * (f_background + f_vessel);
  return {median / f_background, median / f_vessel};
}

ClassWeights median_frequency_weights(const std::vector<Sample>& samples) {
  const auto [f0, f1] = class_frequencies(samples);
  return median_frequency_weights(f0, f1);
}

SampleSource SampleSource::of(const std::vector<Sample>& samples) {
  return {samples.size(), [&samples](std::size_t i) { return samples.at(i); }};
}

SampleSource SampleSource::of(const AugmentedSet& set) {
  return {set.size(), [&set](std::size_t i) { return set.at(i); }};
}

void write_epoch_csv(std::ostream& os, const EpochLog& e) {
  std::ostringstream line;
  line << e.epoch << ',' << std::setprecision(9) << e.mean_loss << ',' << e.train_acc << ','
       << std::fixed << std::setprecision(3) << e.wall_seconds;
  os << line.str() << '\n';
}

namespace {

std::vector<Sample> fetch_batch(const SampleSource& data, const std::vector<std::size_t>& order,
                                std::size_t begin, std::size_t end) {
  std::vector<Sample> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(data.fetch(order[i]));
  return out;
}

}  // namespace

TrainResult train(ModelParams<float>& params, const SampleSource& data, const TrainConfig& config,
                  const std::vector<Sample>& weights_source,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (data.count == 0) throw std::invalid_argument("train: empty training split");

  TrainResult result;
  result.weights = config.loss_weights ? *config.loss_weights
                                       : median_frequency_weights(weights_source);

  std::vector<std::size_t> order(data.count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(config.deterministic ? config.seed ^ 0x5eed5eedULL
                                                   : std::random_device{}());
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const float lr = static_cast<float>(config.learning_rate);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::int64_t correct = 0, counted = 0;
    const std::size_t batches = (data.count + batch - 1) / batch;

    // Outside deterministic mode the next batch is rendered while the current
    // one trains; batch contents and order are the same either way.
    std::future<std::vector<Sample>> pending;
    auto launch = [&](std::size_t b) {
      const std::size_t begin = b * batch, end = std::min(data.count, begin + batch);
      return std::async(config.deterministic ? std::launch::deferred : std::launch::async,
                        fetch_batch, std::cref(data), std::cref(order), begin, end);
    };
    pending = launch(0);
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<Sample> samples = pending.get();
      if (b + 1 < batches) pending = launch(b + 1);

      std::vector<const Sample*> ptrs;
      for (const Sample& s : samples) ptrs.push_back(&s);
      const Batch bt = make_batch(ptrs);

      Tape<float> tape;
      const ForwardResult fw = forward(tape, params, bt.images, Mode::Train);
      const NodeId loss = weighted_cross_entropy(tape, fw.probs, bt.labels, result.weights, bt.fovs);
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(b + 1) + "/" + std::to_string(batches);
      const float lv = tape.value(loss)[0];
      if (!std::isfinite(lv)) throw TrainingError("non-finite loss at " + where);
      loss_sum += static_cast<double>(lv) * static_cast<double>(samples.size());

      const TensorF& probs = tape.value(fw.probs);
      const Index n = probs.dim(0), plane = probs.dim(2) * probs.dim(3);
      for (Index s = 0; s < n; ++s)
        for (Index p = 0; p < plane; ++p) {
          if (bt.fovs[s * plane + p] < 0.5f) continue;
          const bool vessel = probs[(s * 2 + 1) * plane + p] >= 0.5f;
          correct += vessel == (bt.labels[s * plane + p] >= 0.5f);
          ++counted;
        }

      const GradientMap<float> grads = tape.backward(loss);
      try {
        sgd_step(params, collect_gradients(fw, grads), lr);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at " + where);
      }
    }

    EpochLog e;
    e.epoch = epoch;
    e.mean_loss = loss_sum / static_cast<double>(data.count);
    e.train_acc = counted ? static_cast<double>(correct) / static_cast<double>(counted) : 0.0;
    e.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return result;
}

}  // namespace rcnet
