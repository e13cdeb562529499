#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "drbd/checkpoint.hpp"
#include "drbd/network.hpp"
#include "drbd/optim.hpp"

namespace drbd {

/// One training example: a [C, X, Y, Z] image buffer and its label volume.
struct Sample {
  std::string id;
  Dims3 dims{};
  std::size_t channels = 0;
  std::vector<float> image;
  std::vector<std::uint8_t> labels;

  std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }
};

struct AugmentConfig {
  bool enabled = true;
  double flip_p = 0.5;     // per axis
  double rotate_p = 0.5;   // one axis-aligned 90/180/270 degree rotation
  double shift_p = 0.1;    // per channel additive offset in [-shift, shift]
  double shift = 0.1;
  double scale_p = 0.1;    // per channel factor in [scale_lo, scale_hi]
  double scale_lo = 0.9;
  double scale_hi = 1.1;
};

/// Reverses one spatial axis (0, 1 or 2) of image and labels.
Sample flip_axis(const Sample& s, std::size_t axis);
/// Rotates by k * 90 degrees in the plane of spatial axes (a, b), a < b.
/// Quarter turns need equal extents on both axes.
Sample rotate90(const Sample& s, std::size_t a, std::size_t b, unsigned k);
/// Draws the augmentations of one example. Labels only see the geometric
/// transforms. Non-square planes fall back to a half turn.
Sample augment(const Sample& s, const AugmentConfig& cfg, SplitMix64& rng);

struct TrainConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 4;
  AdamConfig adam{};
  std::size_t warmup_steps = 0;  // linear learning-rate ramp over the first steps
  AugmentConfig augment{};
  std::uint64_t seed = 0;
};

struct TrainLogRow {
  std::size_t step = 0;  // 1-based index of the completed optimizer step
  double ce = 0.0;
  double dice_loss = 0.0;
  double commit = 0.0;
  double total = 0.0;
  double soft_dice = 0.0;
};

/// Sample image as a graph leaf.
template <class T>
Tensor<T> sample_tensor(const Sample& s);

/// CE-Dice of the logits plus the commitment term weighted by the
/// network's VQ config.
template <class T>
LossReport<T> training_objective(const Network<T>& net, const ForwardResult<T>& fwd,
                                 std::span<const std::uint8_t> labels);

/// Mini-batch AdamW training. Batch membership and augmentation draws are
/// pure functions of (seed, step), so a run restored from checkpoint()
/// continues exactly as the uninterrupted run would.
template <class T>
class Trainer {
 public:
  Trainer(Network<T>& net, const TrainConfig& cfg);

  /// One optimizer step over batch_size examples drawn from `data`. The
  /// loss is the batch mean. Throws NumericalError on a non-finite loss.
  TrainLogRow step(const std::vector<Sample>& data);

  /// Indices into `data` used by step `step` (0-based).
  std::vector<std::size_t> batch_indices(std::size_t step, std::size_t dataset_size) const;

  std::size_t steps_done() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  Network<T>& network() { return net_; }

  /// Network, optimizer and step state.
  std::vector<CheckpointEntry> checkpoint() const;
  void restore(const std::vector<CheckpointEntry>& entries);

 private:
  Network<T>& net_;
  TrainConfig cfg_;
  AdamW<T> opt_;
  std::size_t step_ = 0;
};

/// Runs `steps` steps and reports each one through `on_step`; stops early
/// when the callback returns false.
template <class T>
std::vector<TrainLogRow> train(Trainer<T>& trainer, const std::vector<Sample>& data, std::size_t steps,
                               const std::function<bool(const TrainLogRow&)>& on_step = {});

/// Architecture, parameters and codebook state. Enough to rebuild the
/// network with network_from_checkpoint.
template <class T>
std::vector<CheckpointEntry> network_checkpoint(const Network<T>& net);
NetConfig config_from_checkpoint(const std::vector<CheckpointEntry>& entries);
template <class T>
void load_network_state(Network<T>& net, const std::vector<CheckpointEntry>& entries);

}  // namespace drbd
