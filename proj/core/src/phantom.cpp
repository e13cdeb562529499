#include "drbd/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace drbd {

namespace {

// Per-modality tissue level and tumour offsets (NCR, ED, ET) before the
// per-seed contrast factor. Loosely follows the usual appearance: ET bright
// on T1ce, ED bright on FLAIR and T2, NCR dark on T1ce.
constexpr double kTissue[4] = {0.55, 0.60, 0.50, 0.45};
constexpr double kOffsets[4][3] = {
    {-0.25, -0.10, -0.05},
    {-0.30, -0.05, +0.60},
    {+0.50, +0.35, +0.20},
    {+0.10, +0.50, +0.25},
};

struct Geometry {
  Dims3 dims;
  std::array<double, 3> brain_center, brain_radius;
  std::array<double, 3> tumor_center, tumor_axes;
  double core_ratio;   // NCR radius / ET radius
  double edema_ratio;  // ED radius / ET radius
  double max_radius;   // largest ET radius keeping ED inside the brain
  std::vector<double> tumor_dist;  // per voxel, normalised ellipsoidal distance
  std::vector<double> sorted_dist;
};

Geometry make_geometry(SplitMix64& rng, const Dims3& dims) {
  for (auto d : dims)
    if (d < 16) throw DomainError("generate_phantom: every extent must be at least 16");
  Geometry g;
  g.dims = dims;
  for (int a = 0; a < 3; ++a) {
    g.brain_center[a] = (double(dims[a]) - 1.0) / 2.0;
    g.brain_radius[a] = double(dims[a]) * 0.45 * rng.uniform(0.92, 1.0);
  }
  for (int a = 0; a < 3; ++a) {
    g.tumor_center[a] = g.brain_center[a] + rng.uniform(-0.08, 0.08) * double(dims[a]);
    g.tumor_axes[a] = rng.uniform(0.8, 1.2);
  }
  g.core_ratio = rng.uniform(0.35, 0.55);
  g.edema_ratio = rng.uniform(1.35, 1.7);
  g.max_radius = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double room = g.brain_radius[a] - 1.0 - std::abs(g.tumor_center[a] - g.brain_center[a]);
    g.max_radius = std::min(g.max_radius, room / (g.edema_ratio * g.tumor_axes[a]));
  }
  g.tumor_dist.resize(dims[0] * dims[1] * dims[2]);
  std::size_t i = 0;
  for (std::size_t x = 0; x < dims[0]; ++x)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t z = 0; z < dims[2]; ++z, ++i) {
        const double p[3] = {double(x), double(y), double(z)};
        double s = 0.0;
        for (int a = 0; a < 3; ++a) s += std::pow((p[a] - g.tumor_center[a]) / g.tumor_axes[a], 2);
        g.tumor_dist[i] = std::sqrt(s);
      }
  g.sorted_dist = g.tumor_dist;
  std::sort(g.sorted_dist.begin(), g.sorted_dist.end());
  return g;
}

std::size_t count_within(const Geometry& g, double r) {
  return static_cast<std::size_t>(std::upper_bound(g.sorted_dist.begin(), g.sorted_dist.end(), r) - g.sorted_dist.begin());
}

std::size_t et_count(const Geometry& g, double r) { return count_within(g, r) - count_within(g, g.core_ratio * r); }

}  // namespace

std::size_t max_et_volume(std::uint64_t seed, const Dims3& shape) {
  SplitMix64 rng(seed);
  const auto g = make_geometry(rng, shape);
  return et_count(g, g.max_radius);
}

CaseRecord generate_phantom(std::uint64_t seed, const Dims3& dims, double et_target, const PhantomConfig& cfg) {
  if (!(et_target >= 0.0)) throw DomainError("generate_phantom: ET target must be >= 0");
  SplitMix64 rng(seed);
  const Geometry g = make_geometry(rng, dims);

  double radius, core;
  if (et_target == 0.0) {
    radius = 0.6 * g.max_radius;
    core = radius;  // empty rim
  } else {
    // Bisection on the ET radius; the count grows with the radius up to
    // voxelisation noise, so keep the closest candidate seen.
    double lo = 0.0, hi = g.max_radius;
    radius = hi;
    std::size_t best_err = SIZE_MAX;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double n = double(et_count(g, mid));
      const auto err = static_cast<std::size_t>(std::abs(n - et_target));
      if (err < best_err) {
        best_err = err;
        radius = mid;
      }
      (n < et_target ? lo : hi) = mid;
    }
    const double achieved = double(et_count(g, radius));
    if (std::abs(achieved - et_target) > 0.2 * et_target) {
      throw DomainError("generate_phantom: ET target " + std::to_string(et_target) + " unreachable (closest " +
                        std::to_string(static_cast<std::size_t>(achieved)) + ", max " +
                        std::to_string(et_count(g, g.max_radius)) + ")");
    }
    core = g.core_ratio * radius;
  }
  const double edema = g.edema_ratio * radius;

  const double contrast = std::exp(rng.uniform(std::log(cfg.contrast_lo), std::log(cfg.contrast_hi)));
  std::array<double, 4> tissue;
  for (int m = 0; m < 4; ++m) tissue[m] = kTissue[m] * rng.uniform(0.9, 1.1);
  std::array<double, 3> freq, phase;
  for (int a = 0; a < 3; ++a) {
    freq[a] = 2.0 * std::numbers::pi / rng.uniform(6.0, 12.0);
    phase[a] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  CaseRecord c;
  c.case_id = "phantom_" + std::to_string(seed);
  c.dims = dims;
  const std::size_t n = dims[0] * dims[1] * dims[2];
  c.labels.assign(n, kBackground);
  for (auto& m : c.modalities) m.assign(n, 0.0f);
  std::size_t i = 0;
  for (std::size_t x = 0; x < dims[0]; ++x)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t z = 0; z < dims[2]; ++z, ++i) {
        const double p[3] = {double(x), double(y), double(z)};
        double b = 0.0;
        for (int a = 0; a < 3; ++a) b += std::pow((p[a] - g.brain_center[a]) / g.brain_radius[a], 2);
        if (b > 1.0) continue;
        const double d = g.tumor_dist[i];
        int region = -1;
        if (d <= core) {
          c.labels[i] = kNcr;
          region = 0;
        } else if (d <= radius) {
          c.labels[i] = kEt;
          region = 2;
        } else if (d <= edema) {
          c.labels[i] = kEd;
          region = 1;
        }
        const double texture =
            0.35 * std::sin(freq[0] * p[0] + phase[0]) * std::sin(freq[1] * p[1] + phase[1]) * std::sin(freq[2] * p[2] + phase[2]);
        for (int m = 0; m < 4; ++m) {
          double v = tissue[m] + rng.normal(0.0, cfg.noise_sigma);
          v += region < 0 ? texture : contrast * kOffsets[m][region];
          c.modalities[m][i] = static_cast<float>(std::max(v, 1e-3));
        }
      }
  refresh_stats(c);
  return c;
}

double sweep_et_target(std::uint64_t seed, const Dims3& shape) {
  SplitMix64 rng(mix_seed(seed, 0xE7, 0));
  return std::round(rng.uniform(0.1, 0.7) * double(max_et_volume(seed, shape)));
}

std::vector<CaseRecord> phantom_sweep(std::size_t n, std::uint64_t seed, const Dims3& shape, const PhantomConfig& cfg) {
  std::vector<CaseRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_phantom(seed + i, shape, sweep_et_target(seed + i, shape), cfg));
  return out;
}

std::vector<std::uint8_t> degrade_labels(std::span<const std::uint8_t> labels, const Dims3& dims, std::uint64_t seed,
                                         double erode_p, std::size_t flips) {
  const std::size_t n = dims[0] * dims[1] * dims[2];
  if (labels.size() != n) throw ShapeError("degrade_labels: label volume does not match dims");
  SplitMix64 rng(seed);
  std::vector<std::uint8_t> out(labels.begin(), labels.end());
  const std::ptrdiff_t step[3] = {std::ptrdiff_t(dims[1] * dims[2]), std::ptrdiff_t(dims[2]), 1};
  std::array<std::size_t, 3> lo{SIZE_MAX, SIZE_MAX, SIZE_MAX}, hi{0, 0, 0};
  std::size_t i = 0;
  for (std::size_t x = 0; x < dims[0]; ++x)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t z = 0; z < dims[2]; ++z, ++i) {
        const std::uint8_t l = labels[i];
        if (l == kBackground) continue;
        const std::size_t p[3] = {x, y, z};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a]);
        }
        // First differing face neighbour in a fixed order.
        int other = -1;
        for (int a = 0; a < 3 && other < 0; ++a) {
          if (p[a] > 0 && labels[i - step[a]] != l) other = labels[i - step[a]];
          else if (p[a] + 1 < dims[a] && labels[i + step[a]] != l) other = labels[i + step[a]];
        }
        if (other >= 0 && rng.bernoulli(erode_p)) out[i] = static_cast<std::uint8_t>(other);
      }
  if (lo[0] == SIZE_MAX) return out;
  for (int a = 0; a < 3; ++a) {
    lo[a] = lo[a] >= 2 ? lo[a] - 2 : 0;
    hi[a] = std::min(dims[a] - 1, hi[a] + 2);
  }
  for (std::size_t f = 0; f < flips; ++f) {
    std::size_t p[3];
    for (int a = 0; a < 3; ++a) p[a] = lo[a] + rng.below(hi[a] - lo[a] + 1);
    out[(p[0] * dims[1] + p[1]) * dims[2] + p[2]] = static_cast<std::uint8_t>(rng.below(kLabelCount));
  }
  return out;
}

}  // namespace drbd
