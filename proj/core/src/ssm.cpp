#include "drbd/ssm.hpp"

#include <cmath>

#include "drbd/ops.hpp"

namespace drbd {

namespace {

template <class T>
Tensor<T> uniform_tensor(Shape shape, T bound, SplitMix64& rng) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <class T>
ScanParams<T> init_scan(const SsmConfig& cfg, SplitMix64& rng) {
  const std::size_t e = cfg.embed;
  const std::size_t n = cfg.state;
  ScanParams<T> p;
  std::vector<T> a_log(e * n);
  for (std::size_t i = 0; i < e; ++i)
    for (std::size_t j = 0; j < n; ++j) a_log[i * n + j] = static_cast<T>(std::log(double(j + 1)));
  p.a_log = Tensor<T>::from({e, n}, std::move(a_log), true);
  const T proj = static_cast<T>(1.0 / std::sqrt(double(e)));
  p.w_b = uniform_tensor<T>({e, n}, proj, rng);
  p.w_c = uniform_tensor<T>({e, n}, proj, rng);
  p.w_delta = uniform_tensor<T>({e, e}, proj, rng);
  // softplus(b_delta) log-uniform in [0.01, 0.1].
  std::vector<T> b_delta(e);
  for (auto& b : b_delta) {
    const double dt = std::exp(rng.uniform(std::log(0.01), std::log(0.1)));
    b = static_cast<T>(dt + std::log(-std::expm1(-dt)));
  }
  p.b_delta = Tensor<T>::from({e}, std::move(b_delta), true);
  p.d_skip = Tensor<T>::full({e}, T(1), true);
  p.conv_w = uniform_tensor<T>({e, cfg.conv_width}, static_cast<T>(1.0 / std::sqrt(double(cfg.conv_width))), rng);
  p.conv_b = Tensor<T>::zeros({e}, true);
  return p;
}

template <class T>
void add_scan_names(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& prefix,
                    const ScanParams<T>& p, const SsmConfig& cfg) {
  out.emplace_back(prefix + "a_log", p.a_log);
  out.emplace_back(prefix + "w_b", p.w_b);
  out.emplace_back(prefix + "w_c", p.w_c);
  out.emplace_back(prefix + "w_delta", p.w_delta);
  out.emplace_back(prefix + "b_delta", p.b_delta);
  if (cfg.use_skip) out.emplace_back(prefix + "d_skip", p.d_skip);
  if (cfg.use_conv) {
    out.emplace_back(prefix + "conv_w", p.conv_w);
    out.emplace_back(prefix + "conv_b", p.conv_b);
  }
}

}  // namespace

template <class T>
SsmParams<T> SsmParams<T>::init(const SsmConfig& config, SplitMix64& rng) {
  if (config.embed == 0 || config.state == 0) throw ShapeError("SsmParams: embed and state must be positive");
  SsmParams<T> p;
  p.config = config;
  p.forward = init_scan<T>(config, rng);
  if (config.separate_reverse) p.reverse = init_scan<T>(config, rng);
  p.theta = Tensor<T>::zeros({config.embed}, true);
  p.norm_gamma = Tensor<T>::full({config.embed}, T(1), true);
  p.norm_beta = Tensor<T>::zeros({config.embed}, true);
  return p;
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> SsmParams<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  add_scan_names(out, "fwd.", forward, config);
  if (reverse) add_scan_names(out, "rev.", *reverse, config);
  out.emplace_back("theta", theta);
  out.emplace_back("norm_gamma", norm_gamma);
  out.emplace_back("norm_beta", norm_beta);
  return out;
}

template <class T>
std::pair<std::vector<T>, std::vector<T>> discretize(std::span<const T> a, std::span<const T> b,
                                                     T delta) {
  if (!(delta > T(0))) throw DomainError("discretize: step size must be positive");
  if (a.size() != b.size()) throw ShapeError("discretize: A and B sizes differ");
  std::vector<T> a_bar(a.size());
  std::vector<T> b_bar(b.size());
  for (std::size_t n = 0; n < a.size(); ++n) {
    a_bar[n] = std::exp(delta * a[n]);
    b_bar[n] = delta * b[n];
  }
  return {std::move(a_bar), std::move(b_bar)};
}

template <class T>
Tensor<T> scan_recurrence(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a,
                          const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& d) {
  if (x.rank() != 2 || x.dim(0) == 0) throw ShapeError("selective_scan: expected a nonempty [L,E] sequence");
  const std::size_t L = x.dim(0), E = x.dim(1);
  if (a.rank() != 2 || a.dim(0) != E) throw ShapeError("selective_scan: A must be [E,N]");
  const std::size_t N = a.dim(1);
  if (delta.shape() != x.shape()) throw ShapeError("selective_scan: delta must match x");
  if (b.shape() != Shape{L, N} || c.shape() != Shape{L, N}) throw ShapeError("selective_scan: B and C must be [L,N]");
  if (d.defined() && d.shape() != Shape{E}) throw ShapeError("selective_scan: D must be [E]");

  const auto xv = x.data(), dv = delta.data(), av = a.data(), bv = b.data(), cv = c.data();
  for (T v : dv) {
    if (!(v > T(0))) throw DomainError("selective_scan: step size must be positive");
  }
  std::vector<T> y(L * E, T(0));
  // Every state is kept for the backward pass: states[(k*E + e)*N + n].
  std::vector<T> states(L * E * N);
  std::vector<T> h(E * N, T(0));
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t e = 0; e < E; ++e) {
      const T dt = dv[k * E + e];
      const T xin = xv[k * E + e];
      T acc = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        T& hn = h[e * N + n];
        hn = std::exp(dt * av[e * N + n]) * hn + dt * bv[k * N + n] * xin;
        acc += cv[k * N + n] * hn;
      }
      if (d.defined()) acc += d.data()[e] * xin;
      y[k * E + e] = acc;
    }
    std::copy(h.begin(), h.end(), states.begin() + static_cast<std::ptrdiff_t>(k * E * N));
  }

  std::vector<Tensor<T>> inputs{x, delta, a, b, c};
  if (d.defined()) inputs.push_back(d);
  return make_result<T>(
      "selective_scan", {L, E}, std::move(y), std::move(inputs),
      [L, E, N, states = std::move(states)](Node<T>& self) {
        const auto& xv = self.inputs[0]->value;
        const auto& dv = self.inputs[1]->value;
        const auto& av = self.inputs[2]->value;
        const auto& bv = self.inputs[3]->value;
        const auto& cv = self.inputs[4]->value;
        const bool has_d = self.inputs.size() > 5;
        const std::vector<T>* dval = has_d ? &self.inputs[5]->value : nullptr;
        const auto& gy = self.grad;
        auto grad_of = [&](std::size_t i) {
          return self.inputs[i]->requires_grad ? self.inputs[i]->grad_buffer() : std::span<T>{};
        };
        std::span<T> gx = grad_of(0), gdt = grad_of(1), ga = grad_of(2), gb = grad_of(3), gc = grad_of(4);
        std::span<T> gd = has_d ? grad_of(5) : std::span<T>{};
        std::vector<T> gh(E * N, T(0));
        for (std::size_t k = L; k-- > 0;) {
          const T* hk = &states[k * E * N];
          const T* hprev = k > 0 ? &states[(k - 1) * E * N] : nullptr;
          for (std::size_t e = 0; e < E; ++e) {
            const T g = gy[k * E + e];
            const T dt = dv[k * E + e];
            const T xin = xv[k * E + e];
            if (has_d) {
              if (!gd.empty()) gd[e] += g * xin;
              if (!gx.empty()) gx[k * E + e] += g * (*dval)[e];
            }
            T gdt_acc = T(0);
            T gx_acc = T(0);
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t en = e * N + n;
              if (!gc.empty()) gc[k * N + n] += g * hk[en];
              T& dh = gh[en];
              dh += g * cv[k * N + n];
              const T abar = std::exp(dt * av[en]);
              const T hp = hprev ? hprev[en] : T(0);
              const T da = dh * hp * abar;  // d/d(dt*a) through exp
              gdt_acc += da * av[en] + dh * bv[k * N + n] * xin;
              if (!ga.empty()) ga[en] += da * dt;
              if (!gb.empty()) gb[k * N + n] += dh * dt * xin;
              gx_acc += dh * dt * bv[k * N + n];
              dh *= abar;
            }
            if (!gdt.empty()) gdt[k * E + e] += gdt_acc;
            if (!gx.empty()) gx[k * E + e] += gx_acc;
          }
        }
      });
}

template <class T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2) throw ShapeError("causal_conv1d: expected [L,E]");
  const std::size_t L = x.dim(0), E = x.dim(1);
  if (weight.rank() != 2 || weight.dim(0) != E) throw ShapeError("causal_conv1d: weight must be [E,W]");
  if (bias.shape() != Shape{E}) throw ShapeError("causal_conv1d: bias must be [E]");
  const std::size_t W = weight.dim(1);
  const auto xv = x.data(), wv = weight.data(), bv = bias.data();
  std::vector<T> y(L * E);
  for (std::size_t k = 0; k < L; ++k)
    for (std::size_t e = 0; e < E; ++e) {
      T acc = bv[e];
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t lag = W - 1 - j;
        if (k >= lag) acc += wv[e * W + j] * xv[(k - lag) * E + e];
      }
      y[k * E + e] = acc;
    }
  return make_result<T>("causal_conv1d", {L, E}, std::move(y), {x, weight, bias},
                        [L, E, W](Node<T>& self) {
                          Node<T>& nx = *self.inputs[0];
                          Node<T>& nw = *self.inputs[1];
                          Node<T>& nb = *self.inputs[2];
                          const auto& g = self.grad;
                          std::span<T> gx = nx.requires_grad ? nx.grad_buffer() : std::span<T>{};
                          std::span<T> gw = nw.requires_grad ? nw.grad_buffer() : std::span<T>{};
                          std::span<T> gb = nb.requires_grad ? nb.grad_buffer() : std::span<T>{};
                          for (std::size_t k = 0; k < L; ++k)
                            for (std::size_t e = 0; e < E; ++e) {
                              const T gk = g[k * E + e];
                              if (!gb.empty()) gb[e] += gk;
                              for (std::size_t j = 0; j < W; ++j) {
                                const std::size_t lag = W - 1 - j;
                                if (k < lag) continue;
                                if (!gw.empty()) gw[e * W + j] += gk * nx.value[(k - lag) * E + e];
                                if (!gx.empty()) gx[(k - lag) * E + e] += gk * nw.value[e * W + j];
                              }
                            }
                        });
}

template <class T>
Tensor<T> selective_scan(const Tensor<T>& seq, const ScanParams<T>& params, const SsmConfig& config,
                         Direction direction) {
  if (seq.rank() != 2 || seq.dim(0) == 0) throw ShapeError("selective_scan: empty sequence");
  if (seq.dim(1) != config.embed) throw ShapeError("selective_scan: channel count mismatch");
  const Tensor<T> input = direction == Direction::reverse ? flip(seq, 0) : seq;
  Tensor<T> u = input;
  if (config.use_conv) u = silu(causal_conv1d(input, params.conv_w, params.conv_b));
  const Tensor<T> b = matmul(u, params.w_b);
  const Tensor<T> c = matmul(u, params.w_c);
  const Tensor<T> delta = softplus(add(matmul(u, params.w_delta), params.b_delta));
  const Tensor<T> a = neg(exp(params.a_log));
  const Tensor<T> y = scan_recurrence(u, delta, a, b, c, config.use_skip ? params.d_skip : Tensor<T>());
  return direction == Direction::reverse ? flip(y, 0) : y;
}

template <class T>
Tensor<T> gated_fusion(const Tensor<T>& y_fwd, const Tensor<T>& y_rev, const Tensor<T>& theta) {
  if (y_fwd.shape() != y_rev.shape()) {
    throw ShapeError("gated_fusion: stream shapes differ " + to_string(y_fwd.shape()) + " vs " +
                     to_string(y_rev.shape()));
  }
  if (y_fwd.rank() != 2 || theta.shape() != Shape{y_fwd.dim(1)}) {
    throw ShapeError("gated_fusion: theta must have one entry per channel");
  }
  const Tensor<T> alpha = sigmoid(theta);
  const Tensor<T> beta = add_scalar(neg(alpha), T(1));
  return add(mul(y_fwd, alpha), mul(y_rev, beta));
}

template <class T>
Tensor<T> bimamba_mixer(const Tensor<T>& feat3d, const SsmParams<T>& params,
                        const MortonPermutation& perm) {
  if (feat3d.rank() != 4 || feat3d.dim(0) != params.config.embed) {
    throw ShapeError("bimamba_block: expected [" + std::to_string(params.config.embed) +
                     ",X,Y,Z], got " + to_string(feat3d.shape()));
  }
  const Tensor<T> seq = gather_sequence(feat3d, perm);
  const Tensor<T> normed = add(mul(layer_norm(seq, 1), params.norm_gamma), params.norm_beta);
  const Tensor<T> y_fwd = selective_scan(normed, params.forward, params.config, Direction::forward);
  const Tensor<T> y_rev = selective_scan(normed, params.reverse_params(), params.config, Direction::reverse);
  return scatter_back(gated_fusion(y_fwd, y_rev, params.theta), perm);
}

template <class T>
Tensor<T> bimamba_block(const Tensor<T>& feat3d, const SsmParams<T>& params,
                        const MortonPermutation& perm) {
  return add(feat3d, bimamba_mixer(feat3d, params, perm));
}

#define DRBD_INSTANTIATE(T)                                                                        \
  template struct SsmParams<T>;                                                                    \
  template std::pair<std::vector<T>, std::vector<T>> discretize<T>(std::span<const T>,             \
                                                                   std::span<const T>, T);         \
  template Tensor<T> scan_recurrence<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                        const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> causal_conv1d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> selective_scan<T>(const Tensor<T>&, const ScanParams<T>&, const SsmConfig&,   \
                                       Direction);                                                 \
  template Tensor<T> gated_fusion<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> bimamba_mixer<T>(const Tensor<T>&, const SsmParams<T>&,                       \
                                      const MortonPermutation&);                                   \
  template Tensor<T> bimamba_block<T>(const Tensor<T>&, const SsmParams<T>&,                       \
                                      const MortonPermutation&);

DRBD_INSTANTIATE(float)
DRBD_INSTANTIATE(double)

#undef DRBD_INSTANTIATE

}  // namespace drbd
