#include "rcnet/metrics.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace rcnet {

ConfusionCounts confusion(const TensorF& pred, const TensorF& gt, const TensorF& fov) {
  require_same_shape(pred.shape(), gt.shape(), "confusion");
  require_same_shape(pred.shape(), fov.shape(), "confusion");
  ConfusionCounts c;
  for (Index i = 0; i < pred.size(); ++i) {
    if (fov[i] < 0.5f) continue;
    const bool p = pred[i] >= 0.5f, g = gt[i] >= 0.5f;
    if (p && g) ++c.tp;
    else if (!p && !g) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  if (c.total() == 0) throw std::invalid_argument("confusion: empty FOV");
  return c;
}

namespace {

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ScalarMetrics scalar_metrics(const ConfusionCounts& c) {
  return {ratio(c.tp, c.tp + c.fn), ratio(c.tn, c.tn + c.fp), ratio(c.tp + c.tn, c.total()),
          ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)};
}

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auc_roc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of (1-based, tie-averaged) ranks of the positives.
  double rank_sum = 0.0;
  std::int64_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        rank_sum += avg_rank;
        ++pos;
      }
    i = j;
  }
  const std::int64_t neg = static_cast<std::int64_t>(scores.size()) - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("auc_roc: both classes must be present");
  const double u = rank_sum - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double auc_roc(const TensorF& scores, const TensorF& gt, const TensorF& fov) {
  require_same_shape(scores.shape(), gt.shape(), "auc_roc");
  require_same_shape(scores.shape(), fov.shape(), "auc_roc");
  std::vector<double> s;
  std::vector<int> l;
  for (Index i = 0; i < scores.size(); ++i) {
    if (fov[i] < 0.5f) continue;
    s.push_back(scores[i]);
    l.push_back(gt[i] >= 0.5f ? 1 : 0);
  }
  return auc_roc(s, l);
}

TensorF binarize(const TensorF& probs, double threshold) {
  return TensorF(probs.shape(),
                 (probs.array() >= static_cast<float>(threshold)).cast<float>());
}

netpbm::Image render_overlay(const TensorF& pred, const TensorF& gt, const TensorF& fov) {
  require_same_shape(pred.shape(), gt.shape(), "render_overlay");
  require_same_shape(pred.shape(), fov.shape(), "render_overlay");
  if (pred.rank() != 2) throw ShapeError("render_overlay: maps must be [H, W]");
  netpbm::Image img{static_cast<int>(pred.dim(1)), static_cast<int>(pred.dim(0)), 3, 255, {}};
  img.samples.reserve(static_cast<std::size_t>(pred.size() * 3));
  for (Index i = 0; i < pred.size(); ++i) {
    std::array<std::uint16_t, 3> rgb{32, 32, 32};
    if (fov[i] >= 0.5f) {
      const bool p = pred[i] >= 0.5f, g = gt[i] >= 0.5f;
      if (p && g) rgb = {0, 255, 0};
      else if (!p && !g) rgb = {0, 0, 0};
      else if (p) rgb = {255, 0, 0};
      else rgb = {0, 0, 255};
    }
    img.samples.insert(img.samples.end(), rgb.begin(), rgb.end());
  }
  return img;
}

void MetricsAccumulator::add(const std::string& id, const TensorF& scores, const TensorF& gt,
                             const TensorF& fov, double threshold) {
  ImageMetrics m;
  m.id = id;
  m.counts = confusion(binarize(scores, threshold), gt, fov);
  m.scalars = scalar_metrics(m.counts);
  std::vector<double> s;
  std::vector<int> l;
  for (Index i = 0; i < scores.size(); ++i) {
    if (fov[i] < 0.5f) continue;
    s.push_back(scores[i]);
    l.push_back(gt[i] >= 0.5f ? 1 : 0);
  }
  const bool both = std::count(l.begin(), l.end(), 1) > 0 && std::count(l.begin(), l.end(), 0) > 0;
  if (both) m.auc = auc_roc(s, l);
  pooled_scores_.insert(pooled_scores_.end(), s.begin(), s.end());
  pooled_labels_.insert(pooled_labels_.end(), l.begin(), l.end());
  images_.push_back(std::move(m));
}

MetricsReport MetricsAccumulator::finish() {
  MetricsReport r;
  std::sort(images_.begin(), images_.end(),
            [](const ImageMetrics& a, const ImageMetrics& b) { return a.id < b.id; });
  r.images = images_;
  for (const auto& m : r.images) r.pooled_counts += m.counts;
  if (r.pooled_counts.total() > 0) r.pooled = scalar_metrics(r.pooled_counts);
  const auto pos = std::count(pooled_labels_.begin(), pooled_labels_.end(), 1);
  if (pos > 0 && pos < static_cast<std::ptrdiff_t>(pooled_labels_.size()))
    r.pooled_auc = auc_roc(pooled_scores_, pooled_labels_);

  auto average = [&](auto getter) -> std::optional<double> {
    double sum = 0.0;
    int n = 0;
    for (const auto& m : r.images)
      if (const std::optional<double> v = getter(m)) {
        sum += *v;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return sum / n;
  };
  r.mean.se = average([](const ImageMetrics& m) { return m.scalars.se; });
  r.mean.sp = average([](const ImageMetrics& m) { return m.scalars.sp; });
  r.mean.acc = average([](const ImageMetrics& m) { return m.scalars.acc; });
  r.mean.f1 = average([](const ImageMetrics& m) { return m.scalars.f1; });
  r.mean_auc = average([](const ImageMetrics& m) { return m.auc; });
  return r;
}

std::string format_metric(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

void write_report_csv(std::ostream& os, const MetricsReport& r) {
  os << "image_id,se,sp,acc,f1,auc\n";
  auto row = [&](const std::string& id, const ScalarMetrics& s, const std::optional<double>& auc) {
    os << id << ',' << format_metric(s.se) << ',' << format_metric(s.sp) << ','
       << format_metric(s.acc) << ',' << format_metric(s.f1) << ',' << format_metric(auc) << '\n';
  };
  for (const auto& m : r.images) row(m.id, m.scalars, m.auc);
  row("POOLED", r.pooled, r.pooled_auc);
}

}  // namespace rcnet
