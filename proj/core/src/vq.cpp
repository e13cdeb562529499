#include "drbd/vq.hpp"

#include <cmath>
#include <limits>

#include "drbd/ops.hpp"

namespace drbd {

template <class T>
Codebook<T>::Codebook(const VqConfig& cfg)
    : config(cfg),
      embeddings(cfg.codes * cfg.dim, T(0)),
      cluster_size(cfg.codes, T(1)),
      embed_sum(cfg.codes * cfg.dim, T(0)) {
  if (!(cfg.decay >= 0.0 && cfg.decay < 1.0)) throw DomainError("codebook: decay must lie in [0, 1)");
  if (!(cfg.epsilon > 0.0)) throw DomainError("codebook: epsilon must be positive");
}

template <class T>
void Codebook<T>::set_embeddings(std::vector<T> table) {
  if (table.size() != codes() * dim()) throw ShapeError("codebook: table must be K*D values");
  embeddings = std::move(table);
  embed_sum = embeddings;
  std::fill(cluster_size.begin(), cluster_size.end(), T(1));
  initialized = true;
}

template <class T>
void Codebook<T>::init_from_batch(std::span<const T> rows, std::size_t count, SplitMix64& rng) {
  const std::size_t d = dim();
  if (count == 0 || rows.size() != count * d) throw ShapeError("codebook init: need a nonempty [M, D] batch");
  std::vector<T> table(codes() * d);
  std::vector<double> nearest(count, std::numeric_limits<double>::infinity());
  auto take = [&](std::size_t k, std::size_t r) {
    std::copy_n(&rows[r * d], d, &table[k * d]);
    for (std::size_t i = 0; i < count; ++i) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = double(rows[i * d + j]) - double(rows[r * d + j]);
        dist += diff * diff;
      }
      nearest[i] = std::min(nearest[i], dist);
    }
  };
  take(0, rng.below(count));
  for (std::size_t k = 1; k < codes(); ++k) {
    double total = 0.0;
    for (double v : nearest) total += v;
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.below(count);
    } else {
      double target = rng.uniform() * total;
      for (pick = 0; pick + 1 < count; ++pick) {
        target -= nearest[pick];
        if (target < 0.0) break;
      }
    }
    take(k, pick);
  }
  set_embeddings(std::move(table));
}

template <class T>
std::uint32_t nearest_code(const Codebook<T>& cb, std::span<const T> row) {
  if (cb.codes() == 0) throw DomainError("quantize: empty codebook");
  std::uint32_t best = 0;
  T best_dist = std::numeric_limits<T>::infinity();
  for (std::size_t k = 0; k < cb.codes(); ++k) {
    const T* e = &cb.embeddings[k * cb.dim()];
    T dist = T(0);
    for (std::size_t j = 0; j < cb.dim(); ++j) {
      const T diff = row[j] - e[j];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<std::uint32_t>(k);
    }
  }
  return best;
}

template <class T>
Tensor<T> straight_through(const Tensor<T>& y, std::vector<T> q) {
  if (q.size() != y.numel()) throw ShapeError("straight_through: value count mismatch");
  return make_result<T>("straight_through", y.shape(), std::move(q), {y}, [](Node<T>& self) {
    auto gi = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
  });
}

template <class T>
QuantizeResult<T> quantize(const Tensor<T>& y, const Codebook<T>& cb) {
  if (cb.codes() == 0) throw DomainError("quantize: empty codebook");
  if (y.rank() != 2 || y.dim(1) != cb.dim()) {
    throw ShapeError("quantize: expected [M," + std::to_string(cb.dim()) + "], got " + to_string(y.shape()));
  }
  const std::size_t m = y.dim(0), d = cb.dim();
  const auto yv = y.data();
  QuantizeResult<T> out;
  out.indices.resize(m);
  std::vector<T> q(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    const auto k = nearest_code(cb, yv.subspan(i * d, d));
    out.indices[i] = k;
    for (std::size_t j = 0; j < d; ++j) q[i * d + j] = cb.embeddings[k * d + j];
  }
  const Tensor<T> target = Tensor<T>::from({m, d}, q);  // sg[Q]: constant leaf
  out.commit_loss = mul_scalar(sum(square(sub(y, target))), T(1) / static_cast<T>(m));
  out.quantized = straight_through(y, std::move(q));
  return out;
}

template <class T>
void ema_update(Codebook<T>& cb, std::span<const T> rows, std::span<const std::uint32_t> indices) {
  const std::size_t K = cb.codes(), D = cb.dim(), M = indices.size();
  if (rows.size() != M * D) throw ShapeError("ema_update: rows and indices disagree");
  const double gamma = cb.config.decay;
  std::vector<double> counts(K, 0.0);
  std::vector<double> sums(K * D, 0.0);
  for (std::size_t i = 0; i < M; ++i) {
    const std::size_t k = indices[i];
    if (k >= K) throw ShapeError("ema_update: index out of range");
    counts[k] += 1.0;
    for (std::size_t j = 0; j < D; ++j) sums[k * D + j] += double(rows[i * D + j]);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    cb.cluster_size[k] = static_cast<T>(gamma * double(cb.cluster_size[k]) + (1.0 - gamma) * counts[k]);
    total += double(cb.cluster_size[k]);
    for (std::size_t j = 0; j < D; ++j) {
      T& m = cb.embed_sum[k * D + j];
      m = static_cast<T>(gamma * double(m) + (1.0 - gamma) * sums[k * D + j]);
    }
  }
  const double eps = cb.config.epsilon;
  for (std::size_t k = 0; k < K; ++k) {
    const double smoothed = (double(cb.cluster_size[k]) + eps) / (total + double(K) * eps) * total;
    for (std::size_t j = 0; j < D; ++j) {
      cb.embeddings[k * D + j] = static_cast<T>(double(cb.embed_sum[k * D + j]) / smoothed);
    }
  }
}

template <class T>
StraightThroughReport straight_through_check(const Tensor<T>& y, const Codebook<T>& cb,
                                             const std::function<Tensor<T>(const Tensor<T>&)>& head) {
  const Tensor<T> y_leaf = Tensor<T>::from(y.shape(), y.to_vector(), true);
  const auto result = quantize(y_leaf, cb);
  backward(head(result.quantized));

  const Tensor<T> bypass = Tensor<T>::from(y.shape(), result.quantized.to_vector(), true);
  backward(head(bypass));

  StraightThroughReport report;
  report.bit_exact = true;
  const auto g1 = y_leaf.grad();
  const auto g2 = bypass.grad();
  for (std::size_t i = 0; i < g1.size(); ++i) {
    report.max_abs_diff = std::max(report.max_abs_diff, std::abs(double(g1[i]) - double(g2[i])));
    if (g1[i] != g2[i]) report.bit_exact = false;
  }
  return report;
}

#define DRBD_INSTANTIATE(T)                                                                     \
  template struct Codebook<T>;                                                                  \
  template std::uint32_t nearest_code<T>(const Codebook<T>&, std::span<const T>);               \
  template Tensor<T> straight_through<T>(const Tensor<T>&, std::vector<T>);                     \
  template QuantizeResult<T> quantize<T>(const Tensor<T>&, const Codebook<T>&);                 \
  template void ema_update<T>(Codebook<T>&, std::span<const T>, std::span<const std::uint32_t>); \
  template StraightThroughReport straight_through_check<T>(                                     \
      const Tensor<T>&, const Codebook<T>&, const std::function<Tensor<T>(const Tensor<T>&)>&);

DRBD_INSTANTIATE(float)
DRBD_INSTANTIATE(double)

#undef DRBD_INSTANTIATE

}  // namespace drbd
