#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "drbd/morton.hpp"

namespace drbd {

/// Label values (BraTS 2023 convention).
enum Label : std::uint8_t { kBackground = 0, kNcr = 1, kEd = 2, kEt = 3 };
inline constexpr std::uint8_t kLabelCount = 4;

struct RegionSpec {
  const char* name;
  std::array<bool, kLabelCount> members;  // indexed by label value
};

/// WT = ED + NCR + ET, TC = NCR + ET, ET.
inline constexpr std::array<RegionSpec, 3> kRegions{{
    {"WT", {false, true, true, true}},
    {"TC", {false, true, false, true}},
    {"ET", {false, false, false, true}},
}};

using Spacing = std::array<double, 3>;

/// Binary mask of the voxels whose label belongs to `region`. Throws
/// DomainError on a label outside 0..3.
std::vector<std::uint8_t> region_mask(std::span<const std::uint8_t> labels, const RegionSpec& region);

/// 2|P n G| / (|P| + |G|); 1 when both masks are empty.
double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

/// Foreground voxels with at least one background face neighbour; voxels
/// outside the grid count as background. Returned as linear indices.
std::vector<std::uint32_t> boundary_voxels(std::span<const std::uint8_t> mask, const Dims3& dims);

struct SurfaceDistance {
  double value = 0.0;
  bool pred_empty = false;
  bool gt_empty = false;
  /// True when exactly one mask is empty and `value` is the sentinel.
  bool sentinel() const { return pred_empty != gt_empty; }
};

/// Physical length of the grid diagonal, dims[i] * spacing[i] per axis.
double volume_diagonal(const Dims3& dims, const Spacing& spacing);

/// 95th percentile Hausdorff distance between the boundaries of two masks:
/// the larger of the two directed P95 values, each taken with linear
/// interpolation between order statistics. 0 when both masks are empty,
/// volume_diagonal() when exactly one is.
SurfaceDistance hd95(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, const Dims3& dims,
                     const Spacing& spacing = {1.0, 1.0, 1.0});

/// Same conventions with the maximum instead of the 95th percentile.
SurfaceDistance hausdorff(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, const Dims3& dims,
                          const Spacing& spacing = {1.0, 1.0, 1.0});

/// Distances from every point of `from` to the nearest point of `to`
/// (both as linear voxel indices), exact, via a uniform bucket grid.
std::vector<double> directed_distances(std::span<const std::uint32_t> from, std::span<const std::uint32_t> to,
                                       const Dims3& dims, const Spacing& spacing);

struct RegionScore {
  std::string region;
  double dice = 0.0;
  double hd95 = 0.0;
  bool pred_empty = false;
  bool gt_empty = false;
  /// Empty string or a '|'-separated list of empty_pred, empty_gt.
  std::string flags() const;
};

struct MetricsReport {
  std::string case_id;
  std::array<RegionScore, 3> regions;  // WT, TC, ET
  double mean_dice() const;
};

MetricsReport evaluate_case(const std::string& case_id, std::span<const std::uint8_t> pred,
                            std::span<const std::uint8_t> gt, const Dims3& dims,
                            const Spacing& spacing = {1.0, 1.0, 1.0});

/// Header: case_id,region,dice,hd95,flags
void write_metrics_csv(std::ostream& out, const std::vector<MetricsReport>& reports);

}  // namespace drbd
