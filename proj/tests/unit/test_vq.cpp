#include <gtest/gtest.h>

#include <cmath>

#include "drbd/ops.hpp"
#include "drbd/vq.hpp"
#include "oracles.hpp"

using namespace drbd;

namespace {

Codebook<double> table(std::size_t K, std::size_t D, std::vector<double> values, double decay = 0.99) {
  Codebook<double> cb({.codes = K, .dim = D, .decay = decay});
  cb.set_embeddings(std::move(values));
  return cb;
}

std::vector<double> random_values(std::size_t n, SplitMix64& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST(Quantize, NearestOfTwoScalars) {
  auto cb = table(2, 1, {-1.0, 1.0});
  auto r = quantize(TensorD::from({1, 1}, {0.2}, true), cb);
  EXPECT_EQ(r.indices[0], 1u);
  EXPECT_EQ(r.quantized.item(), 1.0);
  EXPECT_NEAR(r.commit_loss.item(), 0.64, 1e-15);
}

TEST(Quantize, ExactEntryIsFixedPoint) {
  SplitMix64 rng(1);
  auto cb = table(5, 3, random_values(15, rng));
  const std::vector<double> row(cb.entry(3).begin(), cb.entry(3).end());
  auto r = quantize(TensorD::from({1, 3}, row, true), cb);
  EXPECT_EQ(r.indices[0], 3u);
  EXPECT_EQ(r.quantized.to_vector(), row);
  EXPECT_EQ(r.commit_loss.item(), 0.0);
}

TEST(Quantize, TiesGoToLowestIndex) {
  auto cb = table(3, 1, {1.0, -1.0, 1.0});
  EXPECT_EQ(nearest_code<double>(cb, std::vector<double>{0.0}), 0u);
  EXPECT_EQ(nearest_code<double>(cb, std::vector<double>{2.0}), 0u);
}

TEST(Quantize, MatchesExhaustiveOracle) {
  SplitMix64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const std::size_t K = 7, D = 4, M = 40;
    auto tab = random_values(K * D, rng);
    auto cb = table(K, D, tab);
    auto y = random_values(M * D, rng, -1.5, 1.5);
    auto r = quantize(TensorD::from({M, D}, y, true), cb);
    double commit = 0;
    for (std::size_t m = 0; m < M; ++m) {
      const auto k = oracle::nearest(tab, K, D, &y[m * D]);
      ASSERT_EQ(r.indices[m], k);
      for (std::size_t j = 0; j < D; ++j) {
        ASSERT_EQ(r.quantized.data()[m * D + j], tab[k * D + j]);
        commit += std::pow(y[m * D + j] - tab[k * D + j], 2);
      }
    }
    EXPECT_NEAR(r.commit_loss.item(), commit / M, 1e-12);
    EXPECT_GE(r.commit_loss.item(), 0.0);
  }
}

TEST(Quantize, RejectsDimensionMismatch) {
  auto cb = table(2, 3, std::vector<double>(6, 0.0));
  EXPECT_THROW(quantize(TensorD::zeros({4, 2}), cb), ShapeError);
}

TEST(Quantize, CommitGradientReachesInputOnly) {
  auto cb = table(2, 1, {-1.0, 1.0});
  auto y = TensorD::from({2, 1}, {0.2, -0.5}, true);
  backward(quantize(y, cb).commit_loss);
  // d/dy mean (y - q)^2 = 2 (y - q) / M
  EXPECT_NEAR(y.grad()[0], 2 * (0.2 - 1.0) / 2, 1e-15);
  EXPECT_NEAR(y.grad()[1], 2 * (-0.5 + 1.0) / 2, 1e-15);
}

TEST(StraightThrough, SumGivesOnes) {
  SplitMix64 rng(3);
  auto cb = table(4, 2, random_values(8, rng));
  auto y = TensorD::from({5, 2}, random_values(10, rng), true);
  backward(sum(quantize(y, cb).quantized));
  for (double g : y.grad()) EXPECT_EQ(g, 1.0);
}

TEST(StraightThrough, HalfSquareGivesQuantizedValues) {
  SplitMix64 rng(4);
  auto cb = table(4, 2, random_values(8, rng));
  auto y = TensorD::from({5, 2}, random_values(10, rng), true);
  auto r = quantize(y, cb);
  backward(mul_scalar(sum(square(r.quantized)), 0.5));
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(y.grad()[i], r.quantized.data()[i]);
    EXPECT_NE(y.grad()[i], y.data()[i]);
  }
}

TEST(StraightThrough, RandomHeadMatchesIdentityBypassBitExactly) {
  SplitMix64 rng(5);
  auto cb = table(6, 3, random_values(18, rng));
  auto w = TensorD::from({3, 2}, random_values(6, rng));
  auto y = TensorD::from({8, 3}, random_values(24, rng));
  auto head = [&](const TensorD& q) { return sum(softplus(matmul(sigmoid(q), w))); };
  const auto rep = straight_through_check<double>(y, cb, head);
  EXPECT_TRUE(rep.bit_exact);
  EXPECT_EQ(rep.max_abs_diff, 0.0);
}

TEST(Ema, ZeroDecayIsOneStepKMeans) {
  auto cb = table(2, 2, {0, 0, 5, 5}, 0.0);
  const std::vector<double> rows{1, 2, 3, 4, 2, 0};
  const std::vector<std::uint32_t> idx{1, 1, 1};
  ema_update<double>(cb, rows, idx);
  EXPECT_NEAR(cb.entry(1)[0], 2.0, 1e-4);
  EXPECT_NEAR(cb.entry(1)[1], 2.0, 1e-4);
}

TEST(Ema, UnusedEntryDriftsOnlyThroughSmoothing) {
  auto cb = table(2, 2, {0.3, -0.7, 5, 5});
  const std::vector<double> rows{5, 5};
  const std::vector<std::uint32_t> idx{1};
  for (int i = 0; i < 10; ++i) ema_update<double>(cb, rows, idx);
  // e_0 = m_0 / (n_0 + eps) * (sum n + K eps) / sum n; the decay cancels
  // between m_0 and n_0, leaving only the smoothing factor.
  EXPECT_NEAR(cb.entry(0)[0], 0.3, 1e-4);
  EXPECT_NEAR(cb.entry(0)[1], -0.7, 1e-4);
  for (double v : cb.embeddings) EXPECT_TRUE(std::isfinite(v));
}

TEST(Ema, EmptyClustersNeverProduceNaN) {
  Codebook<double> cb({.codes = 4, .dim = 2, .decay = 0.5});
  cb.set_embeddings(std::vector<double>(8, 0.0));
  const std::vector<double> rows{1, 1};
  const std::vector<std::uint32_t> idx{2};
  for (int i = 0; i < 200; ++i) ema_update<double>(cb, rows, idx);
  for (double v : cb.embeddings) EXPECT_TRUE(std::isfinite(v));
  for (double n : cb.cluster_size) EXPECT_GE(n, 0.0);
}

TEST(Ema, RelationBetweenStatisticsHoldsAfterUpdates) {
  SplitMix64 rng(6);
  auto cb = table(3, 2, random_values(6, rng));
  for (int i = 0; i < 5; ++i) {
    auto rows = random_values(20, rng);
    std::vector<std::uint32_t> idx;
    for (std::size_t m = 0; m < 10; ++m) idx.push_back(nearest_code<double>(cb, {&rows[m * 2], 2}));
    ema_update<double>(cb, rows, idx);
  }
  double total = 0;
  for (double n : cb.cluster_size) total += n;
  for (std::size_t k = 0; k < 3; ++k) {
    const double smoothed = (cb.cluster_size[k] + 1e-5) / (total + 3e-5) * total;
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(cb.entry(k)[j], cb.embed_sum[k * 2 + j] / smoothed, 1e-12);
  }
}

TEST(Ema, RecoversThreeClusters) {
  // Gaussian clusters (sigma 0.05) at the corners of the unit simplex.
  SplitMix64 rng(7);
  const std::size_t M = 96;
  auto batch = [&] {
    std::vector<double> rows(M * 3);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t j = 0; j < 3; ++j) rows[m * 3 + j] = (j == m % 3 ? 1.0 : 0.0) + rng.normal(0, 0.05);
    return rows;
  };
  Codebook<double> cb({.codes = 3, .dim = 3, .decay = 0.99});
  const auto first = batch();
  SplitMix64 init_rng(8);
  cb.init_from_batch(first, M, init_rng);
  for (int step = 0; step < 200; ++step) {
    const auto rows = batch();
    std::vector<std::uint32_t> idx(M);
    for (std::size_t m = 0; m < M; ++m) idx[m] = nearest_code<double>(cb, {&rows[m * 3], 3});
    ema_update<double>(cb, rows, idx);
  }
  for (std::size_t c = 0; c < 3; ++c) {
    double best = 1e9;
    for (std::size_t k = 0; k < 3; ++k) {
      double d = 0;
      for (std::size_t j = 0; j < 3; ++j) d = std::max(d, std::fabs(cb.entry(k)[j] - (j == c ? 1.0 : 0.0)));
      best = std::min(best, d);
    }
    EXPECT_LT(best, 0.05) << "cluster " << c;
  }
}

TEST(Ema, SameSeedSameTrajectory) {
  auto run = [] {
    SplitMix64 rng(9);
    Codebook<float> cb({.codes = 4, .dim = 2});
    std::vector<float> rows(64);
    for (auto& v : rows) v = float(rng.normal());
    cb.init_from_batch(rows, 32, rng);
    for (int i = 0; i < 10; ++i) {
      for (auto& v : rows) v = float(rng.normal());
      std::vector<std::uint32_t> idx(32);
      for (std::size_t m = 0; m < 32; ++m) idx[m] = nearest_code<float>(cb, {&rows[m * 2], 2});
      ema_update<float>(cb, rows, idx);
    }
    return cb.embeddings;
  };
  EXPECT_EQ(run(), run());
}

TEST(Codebook, InitPicksBatchRows) {
  SplitMix64 rng(10);
  auto rows = random_values(40, rng);
  Codebook<double> cb({.codes = 5, .dim = 2});
  cb.init_from_batch(rows, 20, rng);
  EXPECT_TRUE(cb.initialized);
  for (std::size_t k = 0; k < 5; ++k) {
    bool found = false;
    for (std::size_t m = 0; m < 20 && !found; ++m)
      found = cb.entry(k)[0] == rows[m * 2] && cb.entry(k)[1] == rows[m * 2 + 1];
    EXPECT_TRUE(found) << k;
  }
}
