#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "drbd/tensor.hpp"

namespace drbd {

using Dims3 = std::array<std::size_t, 3>;

/// Largest supported bit count per axis; 3 * 21 bits fit a 64-bit code.
inline constexpr unsigned kMaxMortonBits = 21;

/// Z-order code of (x, y, z): bit i of x goes to position 3i, of y to
/// 3i+1 and of z to 3i+2. Throws DomainError when a coordinate needs more
/// than `bits` bits or `bits` exceeds kMaxMortonBits.
std::uint64_t morton_code(std::uint64_t x, std::uint64_t y, std::uint64_t z, unsigned bits);

/// Inverse of morton_code.
std::array<std::uint64_t, 3> morton_decode(std::uint64_t code, unsigned bits);

/// ceil(log2(max extent)), at least 1.
unsigned morton_bits(const Dims3& dims);

/// Bijection between voxels of an X*Y*Z grid (row-major linear index,
/// z fastest) and positions in the Z-order sequence.
///
/// Non-power-of-two grids are handled by sorting the codes of in-bounds
/// voxels and using their ranks as sequence positions, so the sequence has
/// exactly X*Y*Z entries and no padded voxels.
class MortonPermutation {
 public:
  explicit MortonPermutation(const Dims3& dims);

  const Dims3& dims() const { return dims_; }
  std::size_t length() const { return forward_.size(); }
  unsigned bits_per_axis() const { return bits_; }

  /// forward()[sequence position] = linear voxel index.
  const std::vector<std::uint32_t>& forward() const { return forward_; }
  /// inverse()[linear voxel index] = sequence position.
  const std::vector<std::uint32_t>& inverse() const { return inverse_; }

 private:
  Dims3 dims_;
  unsigned bits_;
  std::vector<std::uint32_t> forward_;
  std::vector<std::uint32_t> inverse_;
};

MortonPermutation build_permutation(const Dims3& dims);

/// [C, X, Y, Z] feature map -> [L, C] token sequence in Morton order.
template <class T>
Tensor<T> gather_sequence(const Tensor<T>& feat, const MortonPermutation& perm);

/// [L, C] Morton-ordered sequence -> [C, X, Y, Z] feature map.
template <class T>
Tensor<T> scatter_back(const Tensor<T>& seq, const MortonPermutation& perm);

enum class Ordering { morton, row_major, axiswise };

/// Sequence position of every voxel under `ordering`, indexed by linear
/// voxel index. `axiswise` scans with x fastest (the transposed raster),
/// row_major with z fastest.
std::vector<std::uint32_t> sequence_positions(const Dims3& dims, Ordering ordering);

struct LocalityStats {
  std::size_t pairs = 0;
  double mean = 0.0;        // over neighbour pairs
  double voxel_mean = 0.0;  // per voxel mean over its in-grid neighbours, averaged over voxels
  double p50 = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
  std::uint64_t max = 0;
};

/// Exact statistics of |seq(u) - seq(v)| over all 6-neighbour voxel pairs.
/// Percentiles use linear interpolation between order statistics. The pair
/// mean is the same for Morton and row-major order on power-of-two cubes;
/// voxel_mean weights boundary voxels up and separates them. Grids with
/// one voxel have no pairs and report zeros.
LocalityStats locality_stats(const Dims3& dims, Ordering ordering);

}  // namespace drbd
