#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drbd/morton.hpp"
#include "drbd/rng.hpp"
#include "drbd/tensor.hpp"

namespace drbd {

struct SsmConfig {
  std::size_t embed = 0;       // E, channels of the token sequence
  std::size_t state = 16;      // N, state size per channel
  bool use_conv = true;        // depthwise causal conv + silu before the scan
  std::size_t conv_width = 4;
  bool use_skip = true;        // D * x feedthrough
  bool separate_reverse = false;  // independent parameters for the reverse scan
};

/// Parameters of one scan direction.
template <class T>
struct ScanParams {
  Tensor<T> a_log;    // [E, N]; A = -exp(a_log)
  Tensor<T> w_b;      // [E, N]
  Tensor<T> w_c;      // [E, N]
  Tensor<T> w_delta;  // [E, E]
  Tensor<T> b_delta;  // [E]
  Tensor<T> d_skip;   // [E]
  Tensor<T> conv_w;   // [E, conv_width]
  Tensor<T> conv_b;   // [E]
};

/// Learnable state of one bidirectional block: scan parameters, the
/// per-channel fusion gate theta (alpha = sigmoid(theta)) and the affine
/// part of the pre-scan layer norm.
template <class T>
struct SsmParams {
  SsmConfig config;
  ScanParams<T> forward;
  std::optional<ScanParams<T>> reverse;
  Tensor<T> theta;       // [E]
  Tensor<T> norm_gamma;  // [E]
  Tensor<T> norm_beta;   // [E]

  static SsmParams init(const SsmConfig& config, SplitMix64& rng);

  const ScanParams<T>& reverse_params() const { return reverse ? *reverse : forward; }
  /// Every trainable tensor with a stable name suffix.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
};

/// Zero-order-hold transition and Euler input rule for one token and one
/// channel with diagonal A: a_bar[n] = exp(delta * a[n]), b_bar[n] = delta * b[n].
/// Throws DomainError unless delta > 0.
template <class T>
std::pair<std::vector<T>, std::vector<T>> discretize(std::span<const T> a, std::span<const T> b,
                                                     T delta);

/// Recurrence over a prepared sequence. x, delta: [L, E]; a: [E, N] (already
/// negative); b, c: [L, N]; d: [E] or undefined. With h_0 = 0:
///   h_k[e,:] = exp(delta[k,e] a[e,:]) * h_{k-1}[e,:] + delta[k,e] b[k,:] x[k,e]
///   y[k,e]   = <c[k,:], h_k[e,:]> + d[e] x[k,e]
/// Differentiable in all inputs.
template <class T>
Tensor<T> scan_recurrence(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a,
                          const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& d);

/// Depthwise causal 1D convolution along the token axis of [L, E].
template <class T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

enum class Direction { forward, reverse };

/// Full selective scan of a [L, E] sequence: optional causal conv + silu,
/// input-dependent B, C and delta = softplus(x W_delta + b_delta), then the
/// recurrence. `reverse` is Flip(scan(Flip(seq))) along the token axis.
template <class T>
Tensor<T> selective_scan(const Tensor<T>& seq, const ScanParams<T>& params, const SsmConfig& config,
                         Direction direction);

/// alpha * y_fwd + (1 - alpha) * y_rev with alpha = sigmoid(theta) per channel.
template <class T>
Tensor<T> gated_fusion(const Tensor<T>& y_fwd, const Tensor<T>& y_rev, const Tensor<T>& theta);

/// Sequence mixing part of the block, without the residual: Morton gather,
/// layer norm, both scans, gated fusion and inverse Morton scatter.
template <class T>
Tensor<T> bimamba_mixer(const Tensor<T>& feat3d, const SsmParams<T>& params,
                        const MortonPermutation& perm);

/// feat3d + bimamba_mixer(feat3d); output shape equals input shape.
template <class T>
Tensor<T> bimamba_block(const Tensor<T>& feat3d, const SsmParams<T>& params,
                        const MortonPermutation& perm);

}  // namespace drbd
