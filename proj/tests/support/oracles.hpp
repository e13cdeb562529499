#pragma once

// Straight-line reference implementations used by the tests. None of these
// call into the library code they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

using Grid = std::array<std::size_t, 3>;

// Bit-by-bit interleave: bit i of x, y, z to positions 3i, 3i+1, 3i+2.
inline std::uint64_t interleave(std::uint64_t x, std::uint64_t y, std::uint64_t z, unsigned bits) {
  std::uint64_t code = 0;
  for (unsigned i = 0; i < bits; ++i) {
    code |= ((x >> i) & 1u) << (3 * i);
    code |= ((y >> i) & 1u) << (3 * i + 1);
    code |= ((z >> i) & 1u) << (3 * i + 2);
  }
  return code;
}

// Sequence position of each voxel under Morton order, by counting how many
// in-grid voxels carry a smaller code. O(n^2), fine for small grids.
inline std::vector<std::size_t> morton_rank(const Grid& d, unsigned bits) {
  const std::size_t n = d[0] * d[1] * d[2];
  std::vector<std::uint64_t> code(n);
  for (std::size_t x = 0; x < d[0]; ++x)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t z = 0; z < d[2]; ++z) code[(x * d[1] + y) * d[2] + z] = interleave(x, y, z, bits);
  std::vector<std::size_t> rank(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (code[j] < code[i]) ++rank[i];
  return rank;
}

// Mean |pos(u) - pos(v)| over 6-neighbour pairs, each pair counted once.
inline double pair_mean_gap(const Grid& d, const std::vector<std::size_t>& pos) {
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t x = 0; x < d[0]; ++x)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t z = 0; z < d[2]; ++z) {
        const std::size_t i = (x * d[1] + y) * d[2] + z;
        const std::size_t nb[3][4] = {{x + 1, y, z, x + 1 < d[0]}, {x, y + 1, z, y + 1 < d[1]}, {x, y, z + 1, z + 1 < d[2]}};
        for (const auto& q : nb) {
          if (!q[3]) continue;
          const std::size_t j = (q[0] * d[1] + q[1]) * d[2] + q[2];
          total += std::fabs(double(pos[i]) - double(pos[j]));
          ++pairs;
        }
      }
  return pairs ? total / double(pairs) : 0.0;
}

// Each voxel's mean gap to its in-grid 6-neighbours, averaged over voxels
// that have at least one neighbour.
inline double voxel_mean_gap(const Grid& d, const std::vector<std::size_t>& pos) {
  double total = 0.0;
  std::size_t voxels = 0;
  for (std::size_t x = 0; x < d[0]; ++x)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t z = 0; z < d[2]; ++z) {
        const long p[3] = {long(x), long(y), long(z)};
        double sum = 0.0;
        std::size_t k = 0;
        for (int a = 0; a < 3; ++a)
          for (long s : {-1L, 1L}) {
            long q[3] = {p[0], p[1], p[2]};
            q[a] += s;
            if (q[a] < 0 || q[a] >= long(d[a])) continue;
            const std::size_t i = (x * d[1] + y) * d[2] + z;
            const std::size_t j = (std::size_t(q[0]) * d[1] + std::size_t(q[1])) * d[2] + std::size_t(q[2]);
            sum += std::fabs(double(pos[i]) - double(pos[j]));
            ++k;
          }
        if (k) {
          total += sum / double(k);
          ++voxels;
        }
      }
  return voxels ? total / double(voxels) : 0.0;
}

// ------------------------------------------------------------------ metrics

inline double dice(const std::vector<std::uint8_t>& p, const std::vector<std::uint8_t>& g) {
  double inter = 0, sp = 0, sg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += (p[i] && g[i]);
    sp += p[i] != 0;
    sg += g[i] != 0;
  }
  if (sp + sg == 0) return 1.0;
  return 2.0 * inter / (sp + sg);
}

// Coordinates of the boundary voxels: foreground with a background (or
// out-of-grid) face neighbour.
inline std::vector<std::array<double, 3>> surface(const std::vector<std::uint8_t>& m, const Grid& d,
                                                  const std::array<double, 3>& sp) {
  std::vector<std::array<double, 3>> out;
  auto at = [&](long x, long y, long z) -> bool {
    if (x < 0 || y < 0 || z < 0 || x >= long(d[0]) || y >= long(d[1]) || z >= long(d[2])) return false;
    return m[(std::size_t(x) * d[1] + std::size_t(y)) * d[2] + std::size_t(z)] != 0;
  };
  for (long x = 0; x < long(d[0]); ++x)
    for (long y = 0; y < long(d[1]); ++y)
      for (long z = 0; z < long(d[2]); ++z) {
        if (!at(x, y, z)) continue;
        const bool edge = !at(x - 1, y, z) || !at(x + 1, y, z) || !at(x, y - 1, z) || !at(x, y + 1, z) ||
                          !at(x, y, z - 1) || !at(x, y, z + 1);
        if (edge) out.push_back({x * sp[0], y * sp[1], z * sp[2]});
      }
  return out;
}

inline std::vector<double> directed(const std::vector<std::array<double, 3>>& a,
                                    const std::vector<std::array<double, 3>>& b) {
  std::vector<double> out;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
    }
    out.push_back(best);
  }
  return out;
}

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * double(v.size() - 1);
  const std::size_t lo = std::size_t(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - double(lo));
}

// Directed-P95-max Hausdorff; both empty 0, one empty the grid diagonal.
inline double hd95(const std::vector<std::uint8_t>& p, const std::vector<std::uint8_t>& g, const Grid& d,
                   const std::array<double, 3>& sp = {1, 1, 1}) {
  const auto sp_ = surface(p, d, sp), sg = surface(g, d, sp);
  if (sp_.empty() && sg.empty()) return 0.0;
  if (sp_.empty() || sg.empty()) {
    double s = 0;
    for (int a = 0; a < 3; ++a) s += std::pow(double(d[a]) * sp[a], 2);
    return std::sqrt(s);
  }
  return std::max(percentile(directed(sp_, sg), 95.0), percentile(directed(sg, sp_), 95.0));
}

// ---------------------------------------------------------------- sequences

// Recurrence with h_0 = 0 over plain row-major arrays.
//   x, delta: [L][E], a: [E][N] (negative), b, c: [L][N], d: [E] or empty.
inline std::vector<double> scan(std::size_t L, std::size_t E, std::size_t N, const std::vector<double>& x,
                                const std::vector<double>& delta, const std::vector<double>& a,
                                const std::vector<double>& b, const std::vector<double>& c,
                                const std::vector<double>& d) {
  std::vector<double> y(L * E, 0.0);
  for (std::size_t e = 0; e < E; ++e) {
    std::vector<double> h(N, 0.0);
    for (std::size_t k = 0; k < L; ++k) {
      const double dt = delta[k * E + e];
      const double xe = x[k * E + e];
      double out = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        h[n] = std::exp(dt * a[e * N + n]) * h[n] + dt * b[k * N + n] * xe;
        out += c[k * N + n] * h[n];
      }
      if (!d.empty()) out += d[e] * xe;
      y[k * E + e] = out;
    }
  }
  return y;
}

struct ScanWeights {
  std::vector<double> a_log, w_b, w_c, w_delta, b_delta, d_skip, conv_w, conv_b;
};

// Whole forward-direction selective scan of seq [L][E]: optional causal
// depthwise conv + silu, row-vector projections u W, softplus step size.
inline std::vector<double> selective_scan(std::size_t L, std::size_t E, std::size_t N, std::size_t width,
                                          const std::vector<double>& seq, const ScanWeights& w, bool conv,
                                          bool skip) {
  std::vector<double> u = seq;
  if (conv) {
    for (std::size_t k = 0; k < L; ++k)
      for (std::size_t e = 0; e < E; ++e) {
        double acc = w.conv_b[e];
        // tap j multiplies the input j - (width - 1) steps away
        for (std::size_t j = 0; j < width; ++j) {
          const long src = long(k) + long(j) - long(width - 1);
          if (src >= 0) acc += w.conv_w[e * width + j] * seq[std::size_t(src) * E + e];
        }
        u[k * E + e] = acc / (1.0 + std::exp(-acc));
      }
  }
  std::vector<double> b(L * N, 0.0), c(L * N, 0.0), delta(L * E, 0.0), a(E * N);
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t e = 0; e < E; ++e) {
        b[k * N + n] += u[k * E + e] * w.w_b[e * N + n];
        c[k * N + n] += u[k * E + e] * w.w_c[e * N + n];
      }
    for (std::size_t f = 0; f < E; ++f) {
      double z = w.b_delta[f];
      for (std::size_t e = 0; e < E; ++e) z += u[k * E + e] * w.w_delta[e * E + f];
      delta[k * E + f] = z > 30 ? z : std::log1p(std::exp(z));
    }
  }
  for (std::size_t i = 0; i < E * N; ++i) a[i] = -std::exp(w.a_log[i]);
  return scan(L, E, N, u, delta, a, b, c, skip ? w.d_skip : std::vector<double>{});
}

// ----------------------------------------------------------------- network

// Direct 3D convolution, "same" padding, stride s; x [ci][X][Y][Z],
// w [co][ci][k][k][k].
inline std::vector<double> conv3d(const std::vector<double>& x, std::size_t ci, const Grid& d,
                                  const std::vector<double>& w, std::size_t co, std::size_t k, std::size_t s,
                                  const std::vector<double>& bias, Grid& out_dims) {
  for (int a = 0; a < 3; ++a) out_dims[a] = (d[a] + s - 1) / s;
  const long pad = long(k / 2);
  const Grid& o = out_dims;
  std::vector<double> y(co * o[0] * o[1] * o[2], 0.0);
  for (std::size_t oc = 0; oc < co; ++oc)
    for (std::size_t X = 0; X < o[0]; ++X)
      for (std::size_t Y = 0; Y < o[1]; ++Y)
        for (std::size_t Z = 0; Z < o[2]; ++Z) {
          double acc = bias.empty() ? 0.0 : bias[oc];
          for (std::size_t ic = 0; ic < ci; ++ic)
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j)
                for (std::size_t l = 0; l < k; ++l) {
                  const long px = long(X * s + i) - pad, py = long(Y * s + j) - pad, pz = long(Z * s + l) - pad;
                  if (px < 0 || py < 0 || pz < 0 || px >= long(d[0]) || py >= long(d[1]) || pz >= long(d[2])) continue;
                  acc += w[(((oc * ci + ic) * k + i) * k + j) * k + l] *
                         x[((ic * d[0] + std::size_t(px)) * d[1] + std::size_t(py)) * d[2] + std::size_t(pz)];
                }
          y[((oc * o[0] + X) * o[1] + Y) * o[2] + Z] = acc;
        }
  return y;
}

struct LossParts {
  double ce = 0, dice_loss = 0;
};

// Mean voxel cross entropy and 1 - mean foreground soft Dice (smoothing eps)
// of logits [C][V] against labels [V].
inline LossParts ce_dice(const std::vector<double>& logits, std::size_t C, const std::vector<std::uint8_t>& labels,
                         double eps = 1e-5) {
  const std::size_t V = labels.size();
  std::vector<double> inter(C, 0), psum(C, 0), gsum(C, 0);
  double ce = 0;
  for (std::size_t v = 0; v < V; ++v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, logits[c * V + v]);
    double z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(logits[c * V + v] - mx);
    for (std::size_t c = 0; c < C; ++c) {
      const double p = std::exp(logits[c * V + v] - mx) / z;
      psum[c] += p;
      if (labels[v] == c) {
        inter[c] += p;
        gsum[c] += 1;
        ce -= std::log(p);
      }
    }
  }
  double d = 0;
  for (std::size_t c = 1; c < C; ++c) d += (2 * inter[c] + eps) / (psum[c] + gsum[c] + eps);
  return {ce / double(V), 1.0 - d / double(C - 1)};
}

// ---------------------------------------------------------------------- VQ

inline std::size_t nearest(const std::vector<double>& table, std::size_t K, std::size_t D, const double* row) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0;
    for (std::size_t j = 0; j < D; ++j) s += (row[j] - table[k * D + j]) * (row[j] - table[k * D + j]);
    if (s < best_d) {
      best_d = s;
      best = k;
    }
  }
  return best;
}

// --------------------------------------------------------------------- fiv

inline double population_std(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= double(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size()));
}

}  // namespace oracle
