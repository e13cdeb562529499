#include "drbd/morton.hpp"

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <numeric>

#include "drbd/stats.hpp"

namespace drbd {

namespace {

// Spreads the low 21 bits of v so that bit i lands on bit 3i.
std::uint64_t spread_bits(std::uint64_t v) {
  v &= 0x1fffff;
  v = (v | (v << 32)) & 0x1f00000000ffffull;
  v = (v | (v << 16)) & 0x1f0000ff0000ffull;
  v = (v | (v << 8)) & 0x100f00f00f00f00full;
  v = (v | (v << 4)) & 0x10c30c30c30c30c3ull;
  v = (v | (v << 2)) & 0x1249249249249249ull;
  return v;
}

std::uint64_t compact_bits(std::uint64_t v) {
  v &= 0x1249249249249249ull;
  v = (v ^ (v >> 2)) & 0x10c30c30c30c30c3ull;
  v = (v ^ (v >> 4)) & 0x100f00f00f00f00full;
  v = (v ^ (v >> 8)) & 0x1f0000ff0000ffull;
  v = (v ^ (v >> 16)) & 0x1f00000000ffffull;
  v = (v ^ (v >> 32)) & 0x1fffff;
  return v;
}

void check_dims(const MortonPermutation& perm, std::size_t x, std::size_t y, std::size_t z,
                const char* who) {
  const auto& d = perm.dims();
  if (d[0] != x || d[1] != y || d[2] != z) {
    throw ShapeError(std::string(who) + ": spatial extents [" + std::to_string(x) + "," +
                     std::to_string(y) + "," + std::to_string(z) + "] do not match permutation [" +
                     std::to_string(d[0]) + "," + std::to_string(d[1]) + "," +
                     std::to_string(d[2]) + "]");
  }
}

}  // namespace

std::uint64_t morton_code(std::uint64_t x, std::uint64_t y, std::uint64_t z, unsigned bits) {
  if (bits > kMaxMortonBits) throw DomainError("morton_code: at most 21 bits per axis");
  const std::uint64_t limit = std::uint64_t{1} << bits;
  if (x >= limit || y >= limit || z >= limit) {
    throw DomainError("morton_code: coordinate (" + std::to_string(x) + "," + std::to_string(y) +
                      "," + std::to_string(z) + ") needs more than " + std::to_string(bits) +
                      " bits");
  }
  return spread_bits(x) | (spread_bits(y) << 1) | (spread_bits(z) << 2);
}

std::array<std::uint64_t, 3> morton_decode(std::uint64_t code, unsigned bits) {
  if (bits > kMaxMortonBits) throw DomainError("morton_decode: at most 21 bits per axis");
  return {compact_bits(code), compact_bits(code >> 1), compact_bits(code >> 2)};
}

unsigned morton_bits(const Dims3& dims) {
  const std::size_t m = std::max({dims[0], dims[1], dims[2]});
  if (m == 0) throw DomainError("morton_bits: zero extent");
  const unsigned b = static_cast<unsigned>(std::bit_width(m - 1));
  return std::max(b, 1u);
}

MortonPermutation::MortonPermutation(const Dims3& dims) : dims_(dims) {
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) {
    throw DomainError("build_permutation: every extent must be at least 1");
  }
  bits_ = morton_bits(dims);
  if (bits_ > kMaxMortonBits) throw DomainError("build_permutation: grid too large for 64-bit codes");
  const std::size_t total = dims[0] * dims[1] * dims[2];
  if (total > UINT32_MAX) throw DomainError("build_permutation: grid too large");

  std::vector<std::pair<std::uint64_t, std::uint32_t>> keyed;
  keyed.reserve(total);
  std::uint32_t linear = 0;
  for (std::size_t x = 0; x < dims[0]; ++x)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t z = 0; z < dims[2]; ++z) keyed.emplace_back(morton_code(x, y, z, bits_), linear++);
  // Codes are unique, so the order is total and the sort deterministic.
  std::sort(keyed.begin(), keyed.end());

  forward_.resize(total);
  inverse_.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    forward_[i] = keyed[i].second;
    inverse_[keyed[i].second] = static_cast<std::uint32_t>(i);
  }
}

MortonPermutation build_permutation(const Dims3& dims) { return MortonPermutation(dims); }

template <class T>
Tensor<T> gather_sequence(const Tensor<T>& feat, const MortonPermutation& perm) {
  if (feat.rank() != 4) throw ShapeError("gather_sequence: expected [C,X,Y,Z], got " + to_string(feat.shape()));
  check_dims(perm, feat.dim(1), feat.dim(2), feat.dim(3), "gather_sequence");
  const std::size_t channels = feat.dim(0);
  const std::size_t length = perm.length();
  const auto& fwd = perm.forward();
  const auto fv = feat.data();
  std::vector<T> value(length * channels);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t c = 0; c < channels; ++c) value[i * channels + c] = fv[c * length + fwd[i]];
  return make_result<T>("gather_sequence", {length, channels}, std::move(value), {feat},
                        [fwd, channels, length](Node<T>& self) {
                          auto gi = self.inputs[0]->grad_buffer();
                          for (std::size_t i = 0; i < length; ++i)
                            for (std::size_t c = 0; c < channels; ++c)
                              gi[c * length + fwd[i]] += self.grad[i * channels + c];
                        });
}

template <class T>
Tensor<T> scatter_back(const Tensor<T>& seq, const MortonPermutation& perm) {
  if (seq.rank() != 2 || seq.dim(0) != perm.length()) {
    throw ShapeError("scatter_back: expected [" + std::to_string(perm.length()) + ",C], got " +
                     to_string(seq.shape()));
  }
  const std::size_t channels = seq.dim(1);
  const std::size_t length = perm.length();
  const auto& fwd = perm.forward();
  const auto sv = seq.data();
  std::vector<T> value(length * channels);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t c = 0; c < channels; ++c) value[c * length + fwd[i]] = sv[i * channels + c];
  const auto& d = perm.dims();
  return make_result<T>("scatter_back", {channels, d[0], d[1], d[2]}, std::move(value), {seq},
                        [fwd, channels, length](Node<T>& self) {
                          auto gi = self.inputs[0]->grad_buffer();
                          for (std::size_t i = 0; i < length; ++i)
                            for (std::size_t c = 0; c < channels; ++c)
                              gi[i * channels + c] += self.grad[c * length + fwd[i]];
                        });
}

std::vector<std::uint32_t> sequence_positions(const Dims3& dims, Ordering ordering) {
  const std::size_t total = dims[0] * dims[1] * dims[2];
  std::vector<std::uint32_t> pos(total);
  switch (ordering) {
    case Ordering::morton:
      return MortonPermutation(dims).inverse();
    case Ordering::row_major:
      std::iota(pos.begin(), pos.end(), 0u);
      return pos;
    case Ordering::axiswise: {
      for (std::size_t x = 0; x < dims[0]; ++x)
        for (std::size_t y = 0; y < dims[1]; ++y)
          for (std::size_t z = 0; z < dims[2]; ++z)
            pos[(x * dims[1] + y) * dims[2] + z] =
                static_cast<std::uint32_t>((z * dims[1] + y) * dims[0] + x);
      return pos;
    }
  }
  return pos;
}

LocalityStats locality_stats(const Dims3& dims, Ordering ordering) {
  const auto pos = sequence_positions(dims, ordering);
  const std::size_t n = pos.size();
  std::vector<double> gaps;
  std::vector<double> voxel_sum(n, 0.0);
  std::vector<unsigned> degree(n, 0);
  auto lin = [&](std::size_t x, std::size_t y, std::size_t z) { return (x * dims[1] + y) * dims[2] + z; };
  for (std::size_t x = 0; x < dims[0]; ++x)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t z = 0; z < dims[2]; ++z) {
        const std::size_t i = lin(x, y, z);
        auto push = [&](std::size_t j) {
          const auto g = static_cast<double>(std::llabs(std::int64_t(pos[i]) - std::int64_t(pos[j])));
          gaps.push_back(g);
          voxel_sum[i] += g;
          voxel_sum[j] += g;
          ++degree[i];
          ++degree[j];
        };
        if (x + 1 < dims[0]) push(lin(x + 1, y, z));
        if (y + 1 < dims[1]) push(lin(x, y + 1, z));
        if (z + 1 < dims[2]) push(lin(x, y, z + 1));
      }
  LocalityStats s;
  s.pairs = gaps.size();
  if (gaps.empty()) return s;
  std::sort(gaps.begin(), gaps.end());
  double total = 0.0;
  for (double g : gaps) total += g;
  s.mean = total / static_cast<double>(gaps.size());
  double per_voxel = 0.0;
  for (std::size_t i = 0; i < n; ++i) per_voxel += voxel_sum[i] / double(degree[i]);
  s.voxel_mean = per_voxel / double(n);
  s.p50 = percentile_sorted(gaps, 50.0);
  s.p90 = percentile_sorted(gaps, 90.0);
  s.p99 = percentile_sorted(gaps, 99.0);
  s.max = static_cast<std::uint64_t>(gaps.back());
  return s;
}

template Tensor<float> gather_sequence<float>(const Tensor<float>&, const MortonPermutation&);
template Tensor<double> gather_sequence<double>(const Tensor<double>&, const MortonPermutation&);
template Tensor<float> scatter_back<float>(const Tensor<float>&, const MortonPermutation&);
template Tensor<double> scatter_back<double>(const Tensor<double>&, const MortonPermutation&);

}  // namespace drbd
