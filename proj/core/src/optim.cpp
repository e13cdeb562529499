#include "drbd/optim.hpp"

#include <cmath>

namespace drbd {

template <class T>
AdamW<T>::AdamW(std::vector<std::pair<std::string, Tensor<T>>> params, const AdamConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg.lr >= 0.0) || !(cfg.weight_decay >= 0.0)) throw DomainError("adam: lr and weight decay must be >= 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw DomainError("adam: betas must lie in [0, 1)");
  }
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <class T>
void AdamW<T>::step(double lr_scale) {
  const double lr = cfg_.lr * lr_scale;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& p = params_[i].second;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = double(g[j]);
      const double mj = cfg_.beta1 * double(m[j]) + (1.0 - cfg_.beta1) * gj;
      const double vj = cfg_.beta2 * double(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      double x = double(w[j]);
      x -= lr * cfg_.weight_decay * x;
      x -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
      w[j] = static_cast<T>(x);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace drbd
