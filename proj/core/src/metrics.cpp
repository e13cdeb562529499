#include "drbd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "drbd/stats.hpp"
#include "drbd/tensor.hpp"

namespace drbd {

namespace {

void check_sizes(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, const char* who) {
  if (a.size() != b.size()) throw ShapeError(std::string(who) + ": masks differ in size");
}

void check_dims(std::span<const std::uint8_t> m, const Dims3& dims, const char* who) {
  if (m.size() != dims[0] * dims[1] * dims[2]) throw ShapeError(std::string(who) + ": mask does not match dims");
}

// Uniform grid of cells holding the points of one boundary set.
class BucketGrid {
 public:
  BucketGrid(std::span<const std::uint32_t> points, const Dims3& dims, const Spacing& spacing)
      : dims_(dims), spacing_(spacing) {
    // About two points per occupied cell along a surface.
    const double n = std::max<double>(1.0, double(points.size()));
    cell_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::cbrt(double(dims[0] * dims[1] * dims[2]) / n) + 1));
    for (int a = 0; a < 3; ++a) cells_[a] = (dims[a] + cell_ - 1) / cell_;
    start_.assign(cells_[0] * cells_[1] * cells_[2] + 1, 0);
    for (auto p : points) ++start_[cell_of(p) + 1];
    for (std::size_t i = 1; i < start_.size(); ++i) start_[i] += start_[i - 1];
    items_.resize(points.size());
    auto fill = start_;
    for (auto p : points) items_[fill[cell_of(p)]++] = p;
  }

  double nearest(std::uint32_t q) const {
    const auto qc = coords(q);
    std::array<std::size_t, 3> c{qc[0] / cell_, qc[1] / cell_, qc[2] / cell_};
    const double min_spacing = std::min({spacing_[0], spacing_[1], spacing_[2]});
    double best = std::numeric_limits<double>::infinity();
    const std::size_t max_ring = std::max({cells_[0], cells_[1], cells_[2]});
    for (std::size_t r = 0; r <= max_ring; ++r) {
      // Any point in ring r + 1 or beyond is at least r * cell_ voxels away
      // along some axis.
      visit_ring(c, r, [&](std::size_t cell) {
        for (std::size_t i = start_[cell]; i < start_[cell + 1]; ++i) best = std::min(best, dist2(qc, coords(items_[i])));
      });
      const double bound = double(r * cell_) * min_spacing;
      if (best <= bound * bound) break;
    }
    return std::sqrt(best);
  }

 private:
  std::array<std::size_t, 3> coords(std::uint32_t p) const {
    return {p / (dims_[1] * dims_[2]), (p / dims_[2]) % dims_[1], p % dims_[2]};
  }
  std::size_t cell_of(std::uint32_t p) const {
    const auto c = coords(p);
    return ((c[0] / cell_) * cells_[1] + c[1] / cell_) * cells_[2] + c[2] / cell_;
  }
  double dist2(const std::array<std::size_t, 3>& a, const std::array<std::size_t, 3>& b) const {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = (double(a[k]) - double(b[k])) * spacing_[k];
      s += d * d;
    }
    return s;
  }
  template <class F>
  void visit_ring(const std::array<std::size_t, 3>& c, std::size_t r, F f) const {
    const auto lo = [&](int a) { return c[a] >= r ? c[a] - r : 0; };
    const auto hi = [&](int a) { return std::min(cells_[a] - 1, c[a] + r); };
    const auto ring = [&](std::size_t v, int a) { return v + r == c[a] || v == c[a] + r; };
    for (std::size_t x = lo(0); x <= hi(0); ++x)
      for (std::size_t y = lo(1); y <= hi(1); ++y)
        for (std::size_t z = lo(2); z <= hi(2); ++z) {
          if (r > 0 && !ring(x, 0) && !ring(y, 1) && !ring(z, 2)) continue;
          f((x * cells_[1] + y) * cells_[2] + z);
        }
  }

  Dims3 dims_;
  Spacing spacing_;
  std::size_t cell_ = 1;
  std::array<std::size_t, 3> cells_{};
  std::vector<std::size_t> start_;
  std::vector<std::uint32_t> items_;
};

template <class Reduce>
SurfaceDistance surface_distance(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                 const Dims3& dims, const Spacing& spacing, Reduce reduce, const char* who) {
  check_sizes(pred, gt, who);
  check_dims(pred, dims, who);
  SurfaceDistance out;
  out.pred_empty = std::none_of(pred.begin(), pred.end(), [](auto v) { return v != 0; });
  out.gt_empty = std::none_of(gt.begin(), gt.end(), [](auto v) { return v != 0; });
  if (out.pred_empty && out.gt_empty) return out;
  if (out.pred_empty || out.gt_empty) {
    out.value = volume_diagonal(dims, spacing);
    return out;
  }
  const auto bp = boundary_voxels(pred, dims);
  const auto bg = boundary_voxels(gt, dims);
  auto a = directed_distances(bp, bg, dims, spacing);
  auto b = directed_distances(bg, bp, dims, spacing);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  out.value = std::max(reduce(a), reduce(b));
  return out;
}

}  // namespace

std::vector<std::uint8_t> region_mask(std::span<const std::uint8_t> labels, const RegionSpec& region) {
  std::vector<std::uint8_t> m(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= kLabelCount) throw DomainError("label value " + std::to_string(labels[i]) + " is not in 0..3");
    m[i] = region.members[labels[i]] ? 1 : 0;
  }
  return m;
}

double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  check_sizes(pred, gt, "dice");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * double(both) / double(p + g);
}

std::vector<std::uint32_t> boundary_voxels(std::span<const std::uint8_t> mask, const Dims3& dims) {
  check_dims(mask, dims, "boundary_voxels");
  std::vector<std::uint32_t> out;
  const std::size_t sy = dims[2], sx = dims[1] * dims[2];
  std::size_t i = 0;
  for (std::size_t x = 0; x < dims[0]; ++x)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t z = 0; z < dims[2]; ++z, ++i) {
        if (!mask[i]) continue;
        const bool edge = x == 0 || y == 0 || z == 0 || x + 1 == dims[0] || y + 1 == dims[1] || z + 1 == dims[2];
        if (edge || !mask[i - sx] || !mask[i + sx] || !mask[i - sy] || !mask[i + sy] || !mask[i - 1] || !mask[i + 1]) {
          out.push_back(static_cast<std::uint32_t>(i));
        }
      }
  return out;
}

double volume_diagonal(const Dims3& dims, const Spacing& spacing) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) s += std::pow(double(dims[a]) * spacing[a], 2);
  return std::sqrt(s);
}

std::vector<double> directed_distances(std::span<const std::uint32_t> from, std::span<const std::uint32_t> to,
                                       const Dims3& dims, const Spacing& spacing) {
  if (to.empty()) throw DomainError("directed_distances: empty target set");
  const BucketGrid grid(to, dims, spacing);
  std::vector<double> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) out[i] = grid.nearest(from[i]);
  return out;
}

SurfaceDistance hd95(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, const Dims3& dims,
                     const Spacing& spacing) {
  return surface_distance(pred, gt, dims, spacing, [](const std::vector<double>& d) { return percentile_sorted(d, 95.0); },
                          "hd95");
}

SurfaceDistance hausdorff(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, const Dims3& dims,
                          const Spacing& spacing) {
  return surface_distance(pred, gt, dims, spacing, [](const std::vector<double>& d) { return d.back(); }, "hausdorff");
}

std::string RegionScore::flags() const {
  std::string f;
  if (pred_empty) f = "empty_pred";
  if (gt_empty) f += f.empty() ? "empty_gt" : "|empty_gt";
  return f;
}

double MetricsReport::mean_dice() const {
  return (regions[0].dice + regions[1].dice + regions[2].dice) / 3.0;
}

MetricsReport evaluate_case(const std::string& case_id, std::span<const std::uint8_t> pred,
                            std::span<const std::uint8_t> gt, const Dims3& dims, const Spacing& spacing) {
  check_sizes(pred, gt, "evaluate_case");
  check_dims(gt, dims, "evaluate_case");
  MetricsReport r;
  r.case_id = case_id;
  for (std::size_t k = 0; k < kRegions.size(); ++k) {
    const auto p = region_mask(pred, kRegions[k]);
    const auto g = region_mask(gt, kRegions[k]);
    const auto h = hd95(p, g, dims, spacing);
    r.regions[k] = {kRegions[k].name, dice(p, g), h.value, h.pred_empty, h.gt_empty};
  }
  return r;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsReport>& reports) {
  out << "case_id,region,dice,hd95,flags\n";
  char buf[64];
  for (const auto& r : reports)
    for (const auto& s : r.regions) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f", s.dice, s.hd95);
      out << r.case_id << ',' << s.region << ',' << buf << ',' << s.flags() << '\n';
    }
}

}  // namespace drbd
