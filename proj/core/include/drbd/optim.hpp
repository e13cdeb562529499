#pragma once

#include <string>
#include <utility>
#include <vector>

#include "drbd/tensor.hpp"

namespace drbd {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay: p <- p - lr * wd * p before the
/// bias-corrected moment step. Moments are stored in T (so an f32
/// checkpoint restores them exactly) and updated in double.
template <class T>
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor<T>>> params, const AdamConfig& cfg);

  /// Applies one update from the gradients currently stored on the
  /// parameters, with the learning rate multiplied by `lr_scale`.
  /// Parameters without a gradient buffer are skipped.
  void step(double lr_scale = 1.0);

  const AdamConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace drbd
