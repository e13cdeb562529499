#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "drbd/rng.hpp"
#include "drbd/tensor.hpp"

namespace drbd {

struct VqConfig {
  std::size_t codes = 512;  // K
  std::size_t dim = 512;    // D
  double decay = 0.99;      // gamma
  double epsilon = 1e-5;    // Laplace smoothing
  double commitment = 0.25; // beta, weight of the commitment term in the objective
};

/// K x D codebook with exponential-moving-average cluster statistics.
///
/// After every update embeddings[k] = embed_sum[k] / smoothed(cluster_size[k]).
/// Fresh codebooks start with cluster_size = 1 and embed_sum = embeddings so
/// that the relation already holds and unused entries decay smoothly.
template <class T>
struct Codebook {
  VqConfig config;
  std::vector<T> embeddings;     // [K * D]
  std::vector<T> cluster_size;   // [K]
  std::vector<T> embed_sum;      // [K * D]
  bool initialized = false;

  explicit Codebook(const VqConfig& cfg);

  std::size_t codes() const { return config.codes; }
  std::size_t dim() const { return config.dim; }
  std::span<const T> entry(std::size_t k) const { return {&embeddings[k * dim()], dim()}; }

  /// Replaces the table and resets the statistics (count 1 per entry).
  void set_embeddings(std::vector<T> table);

  /// Data-dependent initialisation from the rows of a first batch,
  /// k-means++ style: the first row uniformly, later rows with probability
  /// proportional to the squared distance to the nearest chosen entry.
  void init_from_batch(std::span<const T> rows, std::size_t count, SplitMix64& rng);
};

/// Index of the nearest entry in Euclidean distance; ties go to the lowest index.
template <class T>
std::uint32_t nearest_code(const Codebook<T>& cb, std::span<const T> row);

template <class T>
struct QuantizeResult {
  Tensor<T> quantized;               // [M, D]; values are codebook rows, gradient passes straight through to Y
  std::vector<std::uint32_t> indices;  // [M]
  Tensor<T> commit_loss;             // mean_m ||Y_m - sg[Q_m]||^2, differentiable in Y only
};

/// Assigns every row of Y [M, D] to its nearest code. Throws on an empty
/// codebook or dimension mismatch.
template <class T>
QuantizeResult<T> quantize(const Tensor<T>& y, const Codebook<T>& cb);

/// Forward value `q`, backward identity with respect to `y`.
template <class T>
Tensor<T> straight_through(const Tensor<T>& y, std::vector<T> q);

/// One EMA step with the assignments from `quantize`. Rows are the
/// (detached) Y values, row-major [M, D]. No gradient flows here.
template <class T>
void ema_update(Codebook<T>& cb, std::span<const T> rows, std::span<const std::uint32_t> indices);

struct StraightThroughReport {
  double max_abs_diff = 0.0;
  bool bit_exact = false;
};

/// Compares dL/dY through quantize() against dL/dQ' where Q' is a fresh leaf
/// holding the quantized values, i.e. the quantizer replaced by identity in
/// the backward pass. `head` maps the [M, D] features to a scalar loss.
template <class T>
StraightThroughReport straight_through_check(const Tensor<T>& y, const Codebook<T>& cb,
                                             const std::function<Tensor<T>(const Tensor<T>&)>& head);

}  // namespace drbd
