#pragma once

#include "rcnet/netpbm.hpp"
#include "rcnet/tensor.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace rcnet {

/// Pixel tallies inside the FOV, vessel as the positive class.
struct ConfusionCounts {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::int64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp, tn += o.tn, fp += o.fp, fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Maps are [H, W] (or any equal shapes) holding 0/1.
ConfusionCounts confusion(const TensorF& pred, const TensorF& gt, const TensorF& fov);

/// A metric whose denominator was zero is nullopt (reported as "n/a").
struct ScalarMetrics {
  std::optional<double> se, sp, acc, f1;
};

/// Se = TP/(TP+FN), Sp = TN/(TN+FP), Acc = (TP+TN)/total, F1 = 2TP/(2TP+FP+FN).
ScalarMetrics scalar_metrics(const ConfusionCounts& c);

/// Rank-statistic (Mann-Whitney) AUC over FOV pixels, ties counted 1/2.
/// Throws if the FOV holds only one class.
double auc_roc(const TensorF& scores, const TensorF& gt, const TensorF& fov);

/// Same statistic on plain vectors; labels are 0/1.
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

/// vessel probability -> 0/1 at `threshold` (>=).
TensorF binarize(const TensorF& probs, double threshold);

/// TP green, TN black, FP red, FN blue, outside FOV dark gray (32,32,32).
netpbm::Image render_overlay(const TensorF& pred, const TensorF& gt, const TensorF& fov);

struct ImageMetrics {
  std::string id;
  ConfusionCounts counts;
  ScalarMetrics scalars;
  std::optional<double> auc;
};

struct MetricsReport {
  std::vector<ImageMetrics> images;  // id order
  ConfusionCounts pooled_counts;
  ScalarMetrics pooled;                 // from pooled counts
  std::optional<double> pooled_auc;     // from pooled pixel scores
  ScalarMetrics mean;                   // per-image averages, n/a excluded
  std::optional<double> mean_auc;
};

/// Accumulates per-image results and pooled pixel scores.
class MetricsAccumulator {
 public:
  void add(const std::string& id, const TensorF& scores, const TensorF& gt, const TensorF& fov,
           double threshold);
  /// Sorts images by id and reduces.
  MetricsReport finish();

 private:
  std::vector<ImageMetrics> images_;
  std::vector<double> pooled_scores_;
  std::vector<int> pooled_labels_;
};

/// image_id,se,sp,acc,f1,auc rows followed by a POOLED row.
void write_report_csv(std::ostream& os, const MetricsReport& report);

std::string format_metric(const std::optional<double>& v);

}  // namespace rcnet
