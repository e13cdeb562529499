#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "drbd/morton.hpp"
#include "drbd/ssm.hpp"
#include "drbd/tensor.hpp"
#include "drbd/vq.hpp"

namespace drbd {

inline constexpr std::size_t kStages = 6;
inline constexpr std::array<std::size_t, kStages> kLadderMultipliers{1, 2, 4, 8, 16, 32};

enum class NormKind { instance, none };

/// Architecture hyper-parameters. Stage i (1-based) has
/// base_channels * kLadderMultipliers[i-1] channels; stages 2-5 halve the
/// resolution and stage 6 keeps the /16 resolution of stage 5.
struct NetConfig {
  std::size_t base_channels = 16;
  std::size_t in_channels = 4;   // T1, T1ce, T2, FLAIR
  std::size_t classes = 4;       // background, NCR, ED, ET
  std::size_t state = 16;        // SSM state size N
  bool ssm_conv = true;
  bool ssm_skip = true;
  bool separate_reverse = false;
  bool use_vq = true;
  bool vq_on_skip = false;
  VqConfig vq{};                 // vq.dim is forced to the bottleneck width
  NormKind norm = NormKind::instance;

  /// 16-512 channel ladder with a 512 x 512 codebook.
  static NetConfig full();
  /// 4-128 ladder for CPU-sized experiments, 64-entry codebook.
  static NetConfig desk();

  std::size_t channels(std::size_t stage) const { return base_channels * kLadderMultipliers.at(stage - 1); }
  std::size_t bottleneck_channels() const { return channels(6); }
  std::size_t skip_channels() const { return channels(4); }
  VqConfig bottleneck_vq() const;
  VqConfig skip_vq() const;
};

/// JSON object with every NetConfig field; doubles round-trip exactly.
std::string net_config_to_json(const NetConfig& cfg);
/// Missing keys keep their defaults. Throws DomainError on unknown values.
NetConfig net_config_from_json(const std::string& text);

/// Total spatial reduction between the input and the bottleneck.
inline constexpr std::size_t kDownsampleFactor = 16;

struct ParamSpec {
  std::string name;
  Shape shape;
  enum class Init { kaiming, ones, zeros, ssm } init;
};

/// Every trainable tensor of the network, in a fixed order. The SSM blocks
/// appear as one entry per tensor with Init::ssm.
std::vector<ParamSpec> parameter_layout(const NetConfig& cfg);
std::size_t parameter_count(const NetConfig& cfg);

/// Per-term view of the training objective. `total` carries the graph.
template <class T>
struct LossReport {
  Tensor<T> total;
  T ce = T(0);
  T dice_loss = T(0);
  T commit = T(0);
  T total_value = T(0);
  /// Mean soft Dice over foreground classes, 1 - dice_loss.
  T soft_dice() const { return T(1) - dice_loss; }
};

/// Smoothing added to numerator and denominator of the soft Dice.
inline constexpr double kDiceSmooth = 1e-5;

/// Mean voxel cross entropy plus (1 - mean soft Dice over the foreground
/// classes) of [C, X, Y, Z] logits against a label volume.
template <class T>
LossReport<T> ce_dice_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

template <class T>
struct ForwardResult {
  Tensor<T> logits;
  Tensor<T> commit;                    // scalar; zero when VQ is disabled
  std::vector<T> vq_rows;              // detached bottleneck features [M, D]
  std::vector<std::uint32_t> vq_indices;
  std::vector<T> skip_vq_rows;
  std::vector<std::uint32_t> skip_vq_indices;
};

/// Dual-resolution encoder-decoder with bidirectional Morton-ordered scans
/// at the bottleneck and at the /8 skip connection.
template <class T>
class Network {
 public:
  Network(const NetConfig& cfg, std::uint64_t seed);

  const NetConfig& config() const { return cfg_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& parameters() const { return params_; }
  Tensor<T>& parameter(const std::string& name);
  const Tensor<T>& parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  Codebook<T>& codebook() { return codebook_; }
  const Codebook<T>& codebook() const { return codebook_; }
  Codebook<T>& skip_codebook() { return skip_codebook_; }
  const Codebook<T>& skip_codebook() const { return skip_codebook_; }

  /// Input [in_channels, X, Y, Z] with every extent divisible by 16.
  /// Codebooks must be initialised when VQ is enabled (see init_codebooks).
  ForwardResult<T> forward(const Tensor<T>& volume) const;

  /// Logits without graph recording.
  Tensor<T> predict(const Tensor<T>& volume) const;

  /// Seeds uninitialised codebooks from the pre-quantisation features of a
  /// batch of inputs.
  void init_codebooks(const std::vector<Tensor<T>>& batch, SplitMix64& rng);

  void zero_grad();

 private:
  Tensor<T> conv_block(const std::string& prefix, const Tensor<T>& x, std::size_t stride) const;
  const MortonPermutation& permutation(const Dims3& dims) const;
  Tensor<T> encode_to_bottleneck(const Tensor<T>& volume, std::vector<Tensor<T>>& skips) const;

  NetConfig cfg_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::map<std::string, std::size_t> index_;
  SsmParams<T> bottleneck_ssm_;
  SsmParams<T> skip_ssm_;
  Codebook<T> codebook_;
  Codebook<T> skip_codebook_;
  mutable std::map<Dims3, std::shared_ptr<const MortonPermutation>> perms_;
};

}  // namespace drbd
