#pragma once

// Reference implementations used only by tests. They are written straight
// from the definitions and share no code with the library kernels.

#include "rcnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace oracle {

using rcnet::Index;

// Six nested loops, zero padding, stride 1.
template <typename T>
rcnet::Tensor<T> conv2d(const rcnet::Tensor<T>& x, const rcnet::Tensor<T>& w,
                        const rcnet::Tensor<T>& b, Index pad) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), k = w.dim(2);
  const Index oh = h + 2 * pad - k + 1, ow = wd + 2 * pad - k + 1;
  rcnet::Tensor<T> y({n, cout, oh, ow});
  for (Index s = 0; s < n; ++s)
    for (Index o = 0; o < cout; ++o)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          long double acc = b[o];
          for (Index c = 0; c < cin; ++c)
            for (Index u = 0; u < k; ++u)
              for (Index v = 0; v < k; ++v) {
                const Index yi = i + u - pad, xj = j + v - pad;
                if (yi < 0 || yi >= h || xj < 0 || xj >= wd) continue;
                acc += static_cast<long double>(x(s, c, yi, xj)) * w(o, c, u, v);
              }
          y(s, o, i, j) = static_cast<T>(acc);
        }
  return y;
}

// Window scan: explicit list of the four window cells, strict ">" keeps the
// first maximum in row-major order.
template <typename T>
std::pair<rcnet::Tensor<T>, std::vector<Index>> maxpool2d(const rcnet::Tensor<T>& x) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  rcnet::Tensor<T> y({n, c, h / 2, w / 2});
  std::vector<Index> idx;
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch)
      for (Index i = 0; i < h / 2; ++i)
        for (Index j = 0; j < w / 2; ++j) {
          const Index cells[4][2] = {{2 * i, 2 * j}, {2 * i, 2 * j + 1},
                                     {2 * i + 1, 2 * j}, {2 * i + 1, 2 * j + 1}};
          Index best = 0;
          for (Index q = 1; q < 4; ++q)
            if (x(s, ch, cells[q][0], cells[q][1]) > x(s, ch, cells[best][0], cells[best][1]))
              best = q;
          y(s, ch, i, j) = x(s, ch, cells[best][0], cells[best][1]);
          idx.push_back(cells[best][0] * w + cells[best][1]);
        }
  return {y, idx};
}

// Fraction of (positive, negative) pairs ordered correctly, ties 1/2.
inline double auc_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
  double good = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        good += 1.0;
      else if (scores[i] == scores[j])
        good += 0.5;
    }
  }
  return good / static_cast<double>(pairs);
}

// Learnable scalars of the network, counted layer by layer from the channel
// schedule: a 3x3 conv is 9*Cin*Cout + Cout, a 1x1 conv Cin*Cout + Cout,
// a BN layer 2*C (gamma, beta).
inline std::int64_t rcnet_param_count(const std::vector<std::int64_t>& channels,
                                      std::int64_t convs_per_block, std::int64_t in_channels,
                                      std::int64_t classes) {
  auto conv3 = [](std::int64_t i, std::int64_t o) { return 9 * i * o + o; };
  auto conv1 = [](std::int64_t i, std::int64_t o) { return i * o + o; };
  auto bn = [](std::int64_t c) { return 2 * c; };
  std::int64_t total = 0, cin = in_channels;
  for (std::int64_t cout : channels) {
    std::int64_t c = cin;
    for (std::int64_t k = 0; k < convs_per_block; ++k) {
      total += conv3(c, cout) + bn(cout);
      c = cout;
    }
    total += conv1(cin, cout) + bn(cout);  // residual skip
    cin = cout;
  }
  total += conv3(cin, cin) + bn(cin);  // output block conv
  total += conv1(cin, classes);        // head
  return total;
}

template <typename T>
rcnet::Tensor<T> random(const rcnet::Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0) {
  rcnet::Tensor<T> t(shape);
  std::uniform_real_distribution<double> d(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<T>(d(rng));
  return t;
}

template <typename T>
double max_rel_diff(const rcnet::Tensor<T>& a, const rcnet::Tensor<T>& b) {
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    const double denom = std::max({std::abs(x), std::abs(y), 1e-6});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

// ||a - b|| / ||b|| over all elements.
template <typename T>
double norm_rel_diff(const rcnet::Tensor<T>& a, const rcnet::Tensor<T>& b) {
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    num += d * d;
    den += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

}  // namespace oracle
