#include <doctest.h>

#include "oracles.hpp"
#include "rcnet/layers.hpp"

#include <cmath>
#include <random>

using namespace rcnet;

namespace {

TensorF bias_zero(Index c) { return TensorF({c}); }

}  // namespace

TEST_CASE("conv2d hand cases") {
  const TensorF y = conv2d(ones<float>({1, 1, 3, 3}), ones<float>({1, 1, 3, 3}), bias_zero(1), 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y[0] == 9.0f);

  std::mt19937_64 rng(1);
  const TensorF x = oracle::random<float>({2, 3, 5, 4}, rng);
  TensorF delta({3, 3, 3, 3});
  for (Index c = 0; c < 3; ++c) delta(c, c, 1, 1) = 1.0f;
  CHECK(conv2d(x, delta, bias_zero(3), 1) == x);

  CHECK_THROWS_AS(conv2d(x, TensorF({3, 2, 3, 3}), bias_zero(3), 1), ShapeError);
  CHECK_THROWS_AS(conv2d(x, TensorF({3, 3, 3, 3}), bias_zero(2), 1), ShapeError);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Index k = trial % 2 ? 1 : 3;
    const TensorD x = oracle::random<double>({1 + trial % 2, 2, 5, 6}, rng);
    const TensorD w = oracle::random<double>({3, 2, k, k}, rng);
    const TensorD b = oracle::random<double>({3}, rng);
    const Index pad = k == 3 ? 1 : 0;
    CHECK(oracle::max_rel_diff(conv2d(x, w, b, pad), oracle::conv2d(x, w, b, pad)) < 1e-12);
    const TensorF xf = x.cast<float>(), wf = w.cast<float>(), bf = b.cast<float>();
    CHECK(oracle::norm_rel_diff(conv2d(xf, wf, bf, pad), oracle::conv2d(xf, wf, bf, pad)) < 1e-5);
  }
}

TEST_CASE("property: conv2d is linear with zero bias") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const TensorF x = oracle::random<float>({1, 3, 6, 6}, rng);
    const TensorF y = oracle::random<float>({1, 3, 6, 6}, rng);
    const TensorF w = oracle::random<float>({4, 3, 3, 3}, rng);
    const float a = 1.7f, b = -0.6f;
    const TensorF lhs = conv2d(add(scale(x, a), scale(y, b)), w, bias_zero(4), 1);
    const TensorF rhs = add(scale(conv2d(x, w, bias_zero(4), 1), a),
                            scale(conv2d(y, w, bias_zero(4), 1), b));
    CHECK(oracle::norm_rel_diff(lhs, rhs) < 1e-5);
  }
}

TEST_CASE("conv2d backward matches the oracle adjoint") {
  // <conv(x), g> is bilinear, so d/dx and d/dw are the oracle conv applied to
  // unit vectors; compare a few coordinates directly.
  std::mt19937_64 rng(23);
  const TensorD x = oracle::random<double>({1, 2, 4, 4}, rng);
  const TensorD w = oracle::random<double>({3, 2, 3, 3}, rng);
  const TensorD g = oracle::random<double>({1, 3, 4, 4}, rng);
  const ConvGrads<double> grads = conv2d_backward(x, w, 1, g);
  auto inner = [&](const TensorD& xx, const TensorD& ww, const TensorD& bb) {
    return sum_all(mul(oracle::conv2d(xx, ww, bb, 1), g));
  };
  const double base = inner(x, w, TensorD({3}));
  for (Index i : {Index{0}, Index{7}, Index{31}}) {
    TensorD e = x;
    e[i] += 1.0;
    CHECK(grads.input[i] == doctest::Approx(inner(e, w, TensorD({3})) - base).epsilon(1e-10));
  }
  for (Index i : {Index{0}, Index{20}, Index{53}}) {
    TensorD e = w;
    e[i] += 1.0;
    CHECK(grads.kernel[i] == doctest::Approx(inner(x, e, TensorD({3})) - base).epsilon(1e-10));
  }
  const TensorD gb = sum(g, {0, 2, 3});
  for (Index c = 0; c < 3; ++c) CHECK(grads.bias[c] == doctest::Approx(gb[c]).epsilon(1e-12));
}

TEST_CASE("batchnorm train mode") {
  TensorF rm({1}), rv = ones<float>({1});
  const TensorF x({1, 1, 2, 2}, {1, 2, 3, 4});
  const TensorF y = batchnorm2d(x, ones<float>({1}), TensorF({1}), rm, rv, 0.1f, 1e-5f, Mode::Train);
  // mean 2.5, biased variance 1.25
  const double inv = 1.0 / std::sqrt(1.25 + 1e-5);
  for (Index i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx((x[i] - 2.5) * inv).epsilon(1e-6));
  CHECK(y[0] == doctest::Approx(-1.342).epsilon(1e-3));
  CHECK(y[1] == doctest::Approx(-0.447).epsilon(1e-3));
  CHECK(rm[0] == doctest::Approx(0.25));
  CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * 1.25));

  TensorF rm2({2}), rv2 = ones<float>({2});
  const TensorF c = full<float>({2, 2, 3, 3}, 4.0f);
  const TensorF yc = batchnorm2d(c, ones<float>({2}), TensorF({2}), rm2, rv2, 0.1f, 1e-5f, Mode::Train);
  CHECK(yc.array().abs().maxCoeff() <= 1e-3f);

  // already normalized batch (mean 0, var 1): output = 2x + 3
  TensorF rm3({1}), rv3 = ones<float>({1});
  const TensorF z({1, 1, 1, 4}, {-1, 1, -1, 1});
  const TensorF yz =
      batchnorm2d(z, TensorF({1}, {2}), TensorF({1}, {3}), rm3, rv3, 0.1f, 1e-5f, Mode::Train);
  for (Index i = 0; i < 4; ++i) CHECK(yz[i] == doctest::Approx(2 * z[i] + 3).epsilon(1e-4));

  TensorF rm4({1}), rv4 = ones<float>({1});
  CHECK_THROWS_AS(batchnorm2d(TensorF({1, 1, 1, 1}), ones<float>({1}), TensorF({1}), rm4, rv4, 0.1f,
                              1e-5f, Mode::Train),
                  ShapeError);
}

TEST_CASE("batchnorm eval mode is a fixed affine map") {
  std::mt19937_64 rng(5);
  const TensorF x = oracle::random<float>({2, 3, 4, 4}, rng);
  TensorF rm({3}, {0.1f, -0.2f, 0.3f}), rv({3}, {1.5f, 0.5f, 2.0f});
  const TensorF gamma({3}, {1.0f, 2.0f, 0.5f}), beta({3}, {0.0f, 1.0f, -1.0f});
  const TensorF rm0 = rm, rv0 = rv;
  const TensorF a = batchnorm2d(x, gamma, beta, rm, rv, 0.1f, 1e-5f, Mode::Eval);
  const TensorF b = batchnorm2d(x, gamma, beta, rm, rv, 0.1f, 1e-5f, Mode::Eval);
  CHECK(a == b);
  CHECK(rm == rm0);
  CHECK(rv == rv0);
  for (Index c = 0; c < 3; ++c) {
    const double expect = gamma[c] * (x(1, c, 2, 3) - rm[c]) / std::sqrt(rv[c] + 1e-5) + beta[c];
    CHECK(a(1, c, 2, 3) == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("relu") {
  CHECK(relu(TensorF({3}, {-1, 0, 2})) == TensorF({3}, {0, 0, 2}));
  const TensorF pos({3}, {0.5f, 1, 2});
  CHECK(relu(pos) == pos);
  std::mt19937_64 rng(6);
  const TensorF x = oracle::random<float>({2, 8}, rng);
  CHECK(relu(relu(x)) == relu(x));
}

TEST_CASE("maxpool hand cases and tie rule") {
  const PoolResult<float> r = maxpool2d(TensorF({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(r.values[0] == 4.0f);
  CHECK(r.indices.offsets[0] == 1 * 2 + 1);

  const PoolResult<float> c = maxpool2d(full<float>({1, 2, 4, 6}, 0.5f));
  CHECK(c.values == full<float>({1, 2, 2, 3}, 0.5f));
  for (Index i = 0; i < 6; ++i) {
    const Index oy = i / 3, ox = i % 3;
    CHECK(c.indices.offsets[static_cast<std::size_t>(i)] == (2 * oy) * 6 + 2 * ox);
  }
  CHECK_THROWS_AS(maxpool2d(TensorF({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("maxpool matches the window-scan oracle") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    TensorF x = oracle::random<float>({1, 1, 6, 6}, rng);
    if (trial % 4 == 0)  // force ties
      for (Index i = 0; i < x.size(); ++i) x[i] = std::round(x[i] * 2.0f);
    const auto [v, idx] = oracle::maxpool2d(x);
    const PoolResult<float> r = maxpool2d(x);
    CHECK(r.values == v);
    CHECK(r.indices.offsets == idx);
  }
}

TEST_CASE("maxunpool") {
  const PoolIndices idx{{1, 1, 2, 2}, {1, 1, 1, 1}, {3}};
  CHECK(maxunpool2d(TensorF({1, 1, 1, 1}, {4}), idx) == TensorF({1, 1, 2, 2}, {0, 0, 0, 4}));
  CHECK_THROWS_AS(maxunpool2d(TensorF({1, 1, 1, 2}), idx), ShapeError);

  std::mt19937_64 rng(8);
  const TensorF x = oracle::random<float>({2, 3, 4, 6}, rng);
  const PoolResult<float> p = maxpool2d(x);
  const TensorF u = maxunpool2d(p.values, p.indices);
  for (Index plane = 0; plane < 6; ++plane)
    for (Index off = 0; off < 24; ++off) {
      const bool is_arg = std::find(p.indices.offsets.begin() + plane * 6,
                                    p.indices.offsets.begin() + plane * 6 + 6,
                                    off) != p.indices.offsets.begin() + plane * 6 + 6;
      if (!is_arg) CHECK(u[plane * 24 + off] == 0.0f);
      else CHECK(u[plane * 24 + off] == x[plane * 24 + off]);
    }
}

TEST_CASE("property: pool(unpool(y, idx)) == (y, idx) for positive y") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> cell(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const Index h = 2 * (1 + trial % 3), w = 2 * (1 + trial % 4);
    const TensorF y = oracle::random<float>({1, 2, h / 2, w / 2}, rng, 0.01, 2.0);
    PoolIndices idx{{1, 2, h, w}, y.shape(), {}};
    for (Index plane = 0; plane < 2; ++plane)
      for (Index i = 0; i < h / 2; ++i)
        for (Index j = 0; j < w / 2; ++j) {
          const int k = cell(rng);
          idx.offsets.push_back((2 * i + k / 2) * w + 2 * j + k % 2);
        }
    const PoolResult<float> back = maxpool2d(maxunpool2d(y, idx));
    CHECK(back.values == y);
    CHECK(back.indices.offsets == idx.offsets);
  }
}

TEST_CASE("softmax over channels") {
  const TensorF eq = softmax_channels(TensorF({1, 2, 1, 2}, {3, -1, 3, -1}));
  CHECK(eq == full<float>({1, 2, 1, 2}, 0.5f));
  const TensorD sat = softmax_channels(TensorD({1, 2, 1, 1}, {10, -10}));
  CHECK(sat[0] > 1 - 1e-8);
  const TensorF p = softmax_channels(TensorF({1, 2, 1, 1}, {1, 0}));
  CHECK(p[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(0.2689).epsilon(1e-4));
  CHECK(p[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-6));
  const TensorF big = softmax_channels(TensorF({1, 2, 1, 1}, {1000, 0}));
  CHECK(big.all_finite());
}

TEST_CASE("property: softmax sums to one and ignores a shared shift") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const TensorD x = oracle::random<double>({2, 2, 3, 3}, rng, -5.0, 5.0);
    const TensorD p = softmax_channels(x);
    for (Index s = 0; s < 2; ++s)
      for (Index i = 0; i < 9; ++i)
        CHECK(std::abs(p[(s * 2) * 9 + i] + p[(s * 2 + 1) * 9 + i] - 1.0) < 1e-6);
    const TensorD q = softmax_channels(add(x, 3.25));
    CHECK(oracle::max_rel_diff(p, q) < 1e-12);
  }
}

TEST_CASE("weighted cross-entropy closed forms") {
  const TensorD fov = ones<double>({1, 2, 2});
  const TensorD target({1, 2, 2}, {1, 0, 0, 1});
  TensorD perfect({1, 2, 2, 2});
  for (Index i = 0; i < 4; ++i) perfect[4 + i] = target[i], perfect[i] = 1 - target[i];
  CHECK(weighted_cross_entropy(perfect, target, ClassWeights{0.3, 7.0}, fov) == 0.0);

  const TensorD half = full<double>({1, 2, 2, 2}, 0.5);
  CHECK(weighted_cross_entropy(half, target, ClassWeights{1, 1}, fov) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(weighted_cross_entropy(half, target, ClassWeights{1, 1}, fov) ==
        doctest::Approx(0.6931).epsilon(1e-4));

  const TensorD one_fov({1, 1, 1}, {1}), vessel({1, 1, 1}, {1});
  CHECK(weighted_cross_entropy(full<double>({1, 2, 1, 1}, 0.5), vessel, ClassWeights{1, 5}, one_fov) ==
        doctest::Approx(3.4657).epsilon(1e-4));

  CHECK_THROWS_AS(weighted_cross_entropy(half, target, ClassWeights{}, TensorD({1, 2, 2})),
                  std::invalid_argument);
  CHECK_THROWS_AS(weighted_cross_entropy(half, target, ClassWeights{}, TensorD({1, 2, 3})),
                  ShapeError);
  // saturated wrong prediction stays finite thanks to the log clamp
  CHECK(std::isfinite(weighted_cross_entropy(perfect, sub(ones<double>({1, 2, 2}), target),
                                             ClassWeights{}, fov)));
}

TEST_CASE("property: unit weights give plain cross-entropy; FOV excludes pixels") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const TensorD p = softmax_channels(oracle::random<double>({2, 2, 3, 3}, rng, -3, 3));
    TensorD target({2, 3, 3}), fov({2, 3, 3});
    std::bernoulli_distribution coin(0.5);
    for (Index i = 0; i < target.size(); ++i) target[i] = coin(rng), fov[i] = coin(rng);
    fov[0] = 1;
    double ce = 0;
    int n = 0;
    for (Index s = 0; s < 2; ++s)
      for (Index i = 0; i < 9; ++i)
        if (fov[s * 9 + i] == 1.0) {
          const Index t = static_cast<Index>(target[s * 9 + i]);
          ce -= std::log(p[(s * 2 + t) * 9 + i]);
          ++n;
        }
    CHECK(weighted_cross_entropy(p, target, ClassWeights{1, 1}, fov) ==
          doctest::Approx(ce / n).epsilon(1e-14));
  }
}
