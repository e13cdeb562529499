#include "drbd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "drbd/network.hpp"
#include "drbd/ops.hpp"
#include "drbd/rng.hpp"
#include "drbd/ssm.hpp"

namespace drbd {

namespace {

// FNV-1a, so sampled entries do not depend on the standard library's hash.
std::uint64_t name_tag(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ull;
  return h;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckResult check_gradients(const std::string& name, const std::string& op, const GradFn& f,
                                const std::vector<TensorD>& inputs, const GradCheckOptions& opts) {
  GradCheckResult r;
  r.name = name;
  r.op = op;
  std::vector<TensorD> leaves = inputs;
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  struct GateScope {
    GateScope() { testing_hooks::set_relu_gate_mode(testing_hooks::GateMode::record); }
    ~GateScope() { testing_hooks::set_relu_gate_mode(testing_hooks::GateMode::off); }
  } gates;
  const TensorD loss = f(leaves);
  if (loss.numel() != 1) throw ShapeError("check_gradients: " + name + " does not return a scalar");
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : leaves) analytic.push_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                               : std::vector<double>(t.numel(), 0.0));

  NoGradGuard guard;
  SplitMix64 rng(mix_seed(opts.seed, name_tag(name)));
  bool all_finite = std::isfinite(loss.item());
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    std::vector<std::size_t> idx(leaves[k].numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > opts.max_entries) {
      rng.shuffle(std::span<std::size_t>(idx));
      idx.resize(opts.max_entries);
      std::sort(idx.begin(), idx.end());
    }
    auto values = leaves[k].mutable_data();
    auto central = [&](std::size_t i, double h) {
      const double saved = values[i];
      values[i] = saved + h;
      testing_hooks::set_relu_gate_mode(testing_hooks::GateMode::replay);
      const double up = f(leaves).item();
      values[i] = saved - h;
      testing_hooks::set_relu_gate_mode(testing_hooks::GateMode::replay);
      const double down = f(leaves).item();
      values[i] = saved;
      return (up - down) / (2.0 * h);
    };
    for (auto i : idx) {
      const double a = analytic[k][i];
      const double numeric = central(i, opts.step);
      const double rel = relative_error(a, numeric, opts.floor);
      all_finite = all_finite && std::isfinite(numeric) && std::isfinite(a);
      ++r.checked;
      r.max_abs_err = std::max(r.max_abs_err, std::abs(a - numeric));
      if (rel > r.max_rel_err || r.worst.empty()) {
        r.max_rel_err = std::max(r.max_rel_err, rel);
        r.worst = "input" + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  r.passed = all_finite && r.max_rel_err < opts.tolerance;
  return r;
}

namespace {

TensorD random(const Shape& shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD::from(shape, std::move(v), true);
}

// Values with magnitude in [lo, hi] and random sign, away from kinks and poles.
TensorD away_from_zero(const Shape& shape, SplitMix64& rng, double lo = 0.2, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(lo, hi);
  return TensorD::from(shape, std::move(v), true);
}

// Scalar loss <out, w> with fixed random weights, so every output entry
// gets a distinct upstream gradient.
TensorD project(const TensorD& out, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> w(out.numel());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(mul(out, TensorD::from(out.shape(), std::move(w))));
}

using Builder = std::function<std::pair<GradFn, std::vector<TensorD>>(SplitMix64&)>;

GradCheckCase make_case(std::string name, std::string op, Builder build, std::size_t entry_cap = SIZE_MAX) {
  return {name, op, [name, op, build, entry_cap](const GradCheckOptions& opts) {
            SplitMix64 rng(mix_seed(opts.seed, name_tag(name), 1));
            auto [f, inputs] = build(rng);
            GradCheckOptions o = opts;
            o.max_entries = std::min(o.max_entries, entry_cap);
            return check_gradients(name, op, f, inputs, o);
          }};
}

GradCheckCase unary(std::string name, std::string op, std::function<TensorD(const TensorD&)> g, Shape shape,
                    bool avoid_zero = false, double lo = -1.0, double hi = 1.0) {
  return make_case(name, op, [=](SplitMix64& rng) {
    auto x = avoid_zero ? away_from_zero(shape, rng) : random(shape, rng, lo, hi);
    GradFn f = [g](const std::vector<TensorD>& in) { return project(g(in[0]), 11); };
    return std::pair{f, std::vector<TensorD>{x}};
  });
}

GradCheckCase binary(std::string name, std::string op, std::function<TensorD(const TensorD&, const TensorD&)> g,
                     Shape sa, Shape sb, bool b_away_from_zero = false) {
  return make_case(name, op, [=](SplitMix64& rng) {
    auto a = random(sa, rng);
    auto b = b_away_from_zero ? away_from_zero(sb, rng, 0.5, 1.5) : random(sb, rng);
    GradFn f = [g](const std::vector<TensorD>& in) { return project(g(in[0], in[1]), 12); };
    return std::pair{f, std::vector<TensorD>{a, b}};
  });
}

ScanParams<double> random_scan(std::size_t e, std::size_t n, std::size_t width, SplitMix64& rng) {
  ScanParams<double> p;
  p.a_log = random({e, n}, rng, -1.0, 0.5);
  p.w_b = random({e, n}, rng, -0.5, 0.5);
  p.w_c = random({e, n}, rng, -0.5, 0.5);
  p.w_delta = random({e, e}, rng, -0.5, 0.5);
  p.b_delta = random({e}, rng, -1.0, 0.0);
  p.d_skip = random({e}, rng);
  p.conv_w = random({e, width}, rng, -0.5, 0.5);
  p.conv_b = random({e}, rng, -0.2, 0.2);
  return p;
}

std::vector<TensorD> scan_leaves(const ScanParams<double>& p) {
  return {p.a_log, p.w_b, p.w_c, p.w_delta, p.b_delta, p.d_skip, p.conv_w, p.conv_b};
}

ScanParams<double> scan_from(const std::vector<TensorD>& in, std::size_t at) {
  ScanParams<double> p;
  p.a_log = in[at];
  p.w_b = in[at + 1];
  p.w_c = in[at + 2];
  p.w_delta = in[at + 3];
  p.b_delta = in[at + 4];
  p.d_skip = in[at + 5];
  p.conv_w = in[at + 6];
  p.conv_b = in[at + 7];
  return p;
}

GradCheckCase scan_case(Direction dir) {
  const std::string name = dir == Direction::forward ? "selective_scan/forward" : "selective_scan/reverse";
  return make_case(name, "selective_scan", [dir](SplitMix64& rng) {
    SsmConfig cfg;
    cfg.embed = 3;
    cfg.state = 4;
    auto seq = random({7, 3}, rng);
    auto p = random_scan(cfg.embed, cfg.state, cfg.conv_width, rng);
    std::vector<TensorD> in{seq};
    for (auto& t : scan_leaves(p)) in.push_back(t);
    GradFn f = [cfg, dir](const std::vector<TensorD>& v) {
      return project(selective_scan(v[0], scan_from(v, 1), cfg, dir), 13);
    };
    return std::pair{f, in};
  });
}

GradCheckCase bimamba_case() {
  return make_case("bimamba_block", "composite", [](SplitMix64& rng) {
    SsmConfig cfg;
    cfg.embed = 3;
    cfg.state = 4;
    cfg.separate_reverse = true;
    auto feat = random({3, 3, 2, 4}, rng);
    auto fwd = random_scan(cfg.embed, cfg.state, cfg.conv_width, rng);
    auto rev = random_scan(cfg.embed, cfg.state, cfg.conv_width, rng);
    std::vector<TensorD> in{feat, random({3}, rng), random({3}, rng, 0.5, 1.5), random({3}, rng, -0.3, 0.3)};
    for (auto& t : scan_leaves(fwd)) in.push_back(t);
    for (auto& t : scan_leaves(rev)) in.push_back(t);
    auto perm = std::make_shared<MortonPermutation>(Dims3{3, 2, 4});
    GradFn f = [cfg, perm](const std::vector<TensorD>& v) {
      SsmParams<double> p;
      p.config = cfg;
      p.theta = v[1];
      p.norm_gamma = v[2];
      p.norm_beta = v[3];
      p.forward = scan_from(v, 4);
      p.reverse = scan_from(v, 12);
      return project(bimamba_block(v[0], p, *perm), 14);
    };
    return std::pair{f, in};
  });
}

GradCheckCase network_case() {
  return make_case("network/ce_dice", "composite", [](SplitMix64& rng) {
    NetConfig cfg = NetConfig::desk();
    cfg.base_channels = 2;
    cfg.state = 4;
    cfg.use_vq = false;
    auto net = std::make_shared<Network<double>>(cfg, rng.next());
    // The zero-initialised head would hide every upstream gradient.
    for (auto& v : net->parameter("head.w").mutable_data()) v = rng.uniform(-0.5, 0.5);
    const Dims3 dims{32, 32, 32};
    const std::size_t n = dims[0] * dims[1] * dims[2];
    auto volume = TensorD::from({cfg.in_channels, dims[0], dims[1], dims[2]}, [&] {
      std::vector<double> v(cfg.in_channels * n);
      for (auto& x : v) x = rng.normal();
      return v;
    }());
    auto labels = std::make_shared<std::vector<std::uint8_t>>(n);
    for (auto& l : *labels) l = static_cast<std::uint8_t>(rng.below(cfg.classes));
    std::vector<TensorD> in;
    for (const char* name : {"enc1.conv1.w", "enc3.conv2.gamma", "enc6.conv2.w", "skip.theta", "skip.fwd.a_log",
                             "bottleneck.fwd.w_delta", "bottleneck.fwd.conv_w", "dec4.up.w", "dec1.conv2.beta",
                             "head.w", "head.b"}) {
      in.push_back(net->parameter(name));
    }
    GradFn f = [net, volume, labels](const std::vector<TensorD>&) {
      return ce_dice_loss(net->forward(volume).logits, std::span<const std::uint8_t>(*labels)).total;
    };
    return std::pair{f, in};
  }, 20);
}

}  // namespace

std::vector<GradCheckCase> gradcheck_cases() {
  std::vector<GradCheckCase> c;
  c.push_back(binary("add/broadcast", "add", [](auto& a, auto& b) { return add(a, b); }, {3, 4}, {4}));
  c.push_back(binary("sub/broadcast", "sub", [](auto& a, auto& b) { return sub(a, b); }, {2, 3, 4}, {3, 1}));
  c.push_back(binary("mul/broadcast", "mul", [](auto& a, auto& b) { return mul(a, b); }, {2, 3, 4}, {2, 1, 4}));
  c.push_back(binary("div/broadcast", "div", [](auto& a, auto& b) { return div(a, b); }, {3, 4}, {3, 1}, true));
  c.push_back(unary("relu", "relu", [](auto& x) { return relu(x); }, {3, 5}, true));
  c.push_back(unary("silu", "silu", [](auto& x) { return silu(x); }, {3, 5}, false, -3.0, 3.0));
  c.push_back(unary("sigmoid", "sigmoid", [](auto& x) { return sigmoid(x); }, {3, 5}, false, -3.0, 3.0));
  c.push_back(unary("softplus", "softplus", [](auto& x) { return softplus(x); }, {3, 5}, false, -3.0, 3.0));
  c.push_back(unary("exp", "exp", [](auto& x) { return exp(x); }, {3, 5}));
  c.push_back(unary("log", "log", [](auto& x) { return log(x); }, {3, 5}, false, 0.3, 2.0));
  c.push_back(unary("neg", "neg", [](auto& x) { return neg(x); }, {4}));
  c.push_back(unary("add_scalar", "add_scalar", [](auto& x) { return add_scalar(x, 0.7); }, {4}));
  c.push_back(unary("mul_scalar", "mul_scalar", [](auto& x) { return mul_scalar(x, -1.3); }, {4}));
  c.push_back(unary("square", "square", [](auto& x) { return square(x); }, {2, 3}));
  c.push_back(make_case("sum", "sum", [](SplitMix64& rng) {
    GradFn f = [](const std::vector<TensorD>& v) { return sum(v[0]); };
    return std::pair{f, std::vector<TensorD>{random({2, 3}, rng)}};
  }));
  c.push_back(make_case("mean", "mean", [](SplitMix64& rng) {
    GradFn f = [](const std::vector<TensorD>& v) { return mean(square(v[0])); };
    return std::pair{f, std::vector<TensorD>{random({2, 3}, rng)}};
  }));
  c.push_back(unary("sum_axis/1", "sum_axis", [](auto& x) { return sum_axis(x, 1); }, {2, 3, 4}));
  c.push_back(binary("matmul", "matmul", [](auto& a, auto& b) { return matmul(a, b); }, {3, 4}, {4, 5}));
  c.push_back(unary("transpose", "transpose", [](auto& x) { return transpose(x); }, {3, 4}));
  c.push_back(unary("reshape", "reshape", [](auto& x) { return reshape(x, {4, 3}); }, {2, 6}));
  c.push_back(make_case("conv3d/stride1", "conv3d", [](SplitMix64& rng) {
    GradFn f = [](const std::vector<TensorD>& v) { return project(conv3d(v[0], v[1], TensorD{}, 1), 15); };
    return std::pair{f, std::vector<TensorD>{random({2, 5, 4, 3}, rng), random({3, 2, 3, 3, 3}, rng)}};
  }));
  c.push_back(make_case("conv3d/stride2_bias", "conv3d", [](SplitMix64& rng) {
    GradFn f = [](const std::vector<TensorD>& v) { return project(conv3d(v[0], v[1], v[2], 2), 16); };
    return std::pair{f,
                     std::vector<TensorD>{random({2, 6, 5, 4}, rng), random({3, 2, 3, 3, 3}, rng), random({3}, rng)}};
  }));
  c.push_back(make_case("conv3d/pointwise", "conv3d", [](SplitMix64& rng) {
    GradFn f = [](const std::vector<TensorD>& v) { return project(conv3d(v[0], v[1], v[2], 1), 17); };
    return std::pair{f,
                     std::vector<TensorD>{random({3, 3, 2, 2}, rng), random({2, 3, 1, 1, 1}, rng), random({2}, rng)}};
  }));
  c.push_back(unary("upsample_nearest3d", "upsample_nearest3d", [](auto& x) { return upsample_nearest3d(x, 2); },
                    {2, 2, 3, 2}));
  c.push_back(unary("layer_norm/axis0", "layer_norm", [](auto& x) { return layer_norm(x, 0); }, {5, 3}));
  c.push_back(unary("layer_norm/axis1", "layer_norm", [](auto& x) { return layer_norm(x, 1); }, {2, 6, 2}));
  c.push_back(unary("softmax/axis0", "softmax", [](auto& x) { return softmax(x, 0); }, {4, 3}, false, -2.0, 2.0));
  c.push_back(
      unary("log_softmax/axis1", "log_softmax", [](auto& x) { return log_softmax(x, 1); }, {2, 4, 3}, false, -2.0, 2.0));
  c.push_back(binary("concat/axis0", "concat", [](auto& a, auto& b) { return concat<double>({a, b}, 0); }, {2, 3},
                     {1, 3}));
  c.push_back(binary("concat/axis1", "concat", [](auto& a, auto& b) { return concat<double>({a, b}, 1); },
                     {2, 2, 3}, {2, 1, 3}));
  c.push_back(unary("slice", "slice", [](auto& x) { return slice(x, 1, 1, 3); }, {2, 4}));
  c.push_back(unary("flip", "flip", [](auto& x) { return flip(x, 0); }, {4, 2}));
  c.push_back(make_case("gather_sequence", "gather_sequence", [](SplitMix64& rng) {
    auto perm = std::make_shared<MortonPermutation>(Dims3{3, 4, 2});
    GradFn f = [perm](const std::vector<TensorD>& v) { return project(gather_sequence(v[0], *perm), 18); };
    return std::pair{f, std::vector<TensorD>{random({2, 3, 4, 2}, rng)}};
  }));
  c.push_back(make_case("scatter_back", "scatter_back", [](SplitMix64& rng) {
    auto perm = std::make_shared<MortonPermutation>(Dims3{3, 4, 2});
    GradFn f = [perm](const std::vector<TensorD>& v) { return project(scatter_back(v[0], *perm), 19); };
    return std::pair{f, std::vector<TensorD>{random({24, 2}, rng)}};
  }));
  for (bool skip : {true, false}) {
    c.push_back(make_case(skip ? "scan_recurrence/skip" : "scan_recurrence/no_skip", "selective_scan",
                          [skip](SplitMix64& rng) {
                            std::vector<TensorD> in{random({6, 3}, rng), random({6, 3}, rng, 0.05, 0.8),
                                                    random({3, 4}, rng, -2.0, -0.1), random({6, 4}, rng),
                                                    random({6, 4}, rng)};
                            if (skip) in.push_back(random({3}, rng));
                            GradFn f = [skip](const std::vector<TensorD>& v) {
                              return project(scan_recurrence(v[0], v[1], v[2], v[3], v[4], skip ? v[5] : TensorD{}), 20);
                            };
                            return std::pair{f, in};
                          }));
  }
  c.push_back(make_case("causal_conv1d", "causal_conv1d", [](SplitMix64& rng) {
    GradFn f = [](const std::vector<TensorD>& v) { return project(causal_conv1d(v[0], v[1], v[2]), 21); };
    return std::pair{f, std::vector<TensorD>{random({7, 3}, rng), random({3, 4}, rng), random({3}, rng)}};
  }));
  c.push_back(scan_case(Direction::forward));
  c.push_back(scan_case(Direction::reverse));
  c.push_back(make_case("gated_fusion", "gated_fusion", [](SplitMix64& rng) {
    GradFn f = [](const std::vector<TensorD>& v) { return project(gated_fusion(v[0], v[1], v[2]), 22); };
    return std::pair{f, std::vector<TensorD>{random({5, 3}, rng), random({5, 3}, rng), random({3}, rng, -2.0, 2.0)}};
  }));
  c.push_back(bimamba_case());
  c.push_back(make_case("ce_dice_loss", "composite", [](SplitMix64& rng) {
    auto labels = std::make_shared<std::vector<std::uint8_t>>(4 * 3 * 2);
    for (auto& l : *labels) l = static_cast<std::uint8_t>(rng.below(4));
    GradFn f = [labels](const std::vector<TensorD>& v) {
      return ce_dice_loss(v[0], std::span<const std::uint8_t>(*labels)).total;
    };
    return std::pair{f, std::vector<TensorD>{random({4, 4, 3, 2}, rng, -2.0, 2.0)}};
  }));
  c.push_back(network_case());
  return c;
}

std::vector<GradCheckResult> run_gradcheck(const std::string& filter, const GradCheckOptions& opts) {
  std::vector<GradCheckResult> out;
  for (const auto& c : gradcheck_cases())
    if (filter.empty() || c.op == filter || c.name == filter) out.push_back(c.run(opts));
  if (out.empty()) throw DomainError("gradcheck: no case matches '" + filter + "'");
  return out;
}

}  // namespace drbd
