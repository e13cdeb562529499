#pragma once

#include "drbd/morton.hpp"
#include "drbd/network.hpp"

namespace drbd {

/// Where the sequence blocks sit.
///  - dual_resolution: one bidirectional block at the /16 bottleneck and
///    one on the /8 skip, plus the bottleneck quantizer.
///  - tri_orientation_all_stages: a three-direction block after every one
///    of the six encoder stages at that stage's width and resolution, no
///    quantizer. The convolutional backbone is the same in both.
enum class Placement { dual_resolution, tri_orientation_all_stages };

/// Multiply-adds count as two FLOPs. See docs/flops.md for the formulas.
struct FlopBreakdown {
  double conv = 0.0;       // encoder, decoder and head convolutions
  double sequence = 0.0;   // sequence blocks: norm, projections, scans, fusion
  double quantizer = 0.0;  // nearest-code search
  double total() const { return conv + sequence + quantizer; }
};

/// Ops per (token, channel, state) step of the recurrence: 3 to discretise
/// (Delta * A, exp, Delta * B), 4 for the state update and 2 for the output
/// contraction.
inline constexpr double kScanOpsPerStep = 9.0;

/// 2 * k^3 * c_in * c_out per output voxel.
double conv3d_flops(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t out_voxels);

/// One direction of the selective scan over `tokens` tokens of width E:
/// Delta projection 2E^2, B and C projections 4EN, the recurrence c*E*N,
/// the optional causal conv 2*width*E and the D skip 2E, per token.
double scan_direction_flops(std::size_t tokens, const SsmConfig& cfg);

/// A sequence block with `directions` scans: layer norm 8E, the scans,
/// the fusion (4E for the gated two-stream form, 2E per extra summed
/// stream otherwise) and the residual add E, per token.
double sequence_block_flops(std::size_t tokens, const SsmConfig& cfg, std::size_t directions);

/// Spatial extents of encoder stage 1..6 for an input of `input` voxels.
Dims3 stage_resolution(const Dims3& input, std::size_t stage);

FlopBreakdown flops_estimate(const NetConfig& cfg, const Dims3& resolution, Placement placement);

}  // namespace drbd
