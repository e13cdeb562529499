#include "drbd/flops.hpp"

namespace drbd {

namespace {

std::size_t voxels(const Dims3& d) { return d[0] * d[1] * d[2]; }

SsmConfig block_config(const NetConfig& cfg, std::size_t embed) {
  SsmConfig s;
  s.embed = embed;
  s.state = cfg.state;
  s.use_conv = cfg.ssm_conv;
  s.use_skip = cfg.ssm_skip;
  return s;
}

}  // namespace

double conv3d_flops(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t out_voxels) {
  return 2.0 * double(k * k * k) * double(c_in) * double(c_out) * double(out_voxels);
}

double scan_direction_flops(std::size_t tokens, const SsmConfig& cfg) {
  const double e = double(cfg.embed), n = double(cfg.state);
  double per_token = 2.0 * e * e + 4.0 * e * n + kScanOpsPerStep * e * n;
  if (cfg.use_conv) per_token += 2.0 * double(cfg.conv_width) * e;
  if (cfg.use_skip) per_token += 2.0 * e;
  return double(tokens) * per_token;
}

double sequence_block_flops(std::size_t tokens, const SsmConfig& cfg, std::size_t directions) {
  const double e = double(cfg.embed);
  const double fusion = directions == 2 ? 4.0 * e : 2.0 * e * double(directions - 1);
  return double(directions) * scan_direction_flops(tokens, cfg) + double(tokens) * (8.0 * e + fusion + e);
}

Dims3 stage_resolution(const Dims3& input, std::size_t stage) {
  if (stage < 1 || stage > kStages) throw DomainError("stage_resolution: stage must be 1..6");
  Dims3 d = input;
  const std::size_t halvings = std::min<std::size_t>(stage - 1, 4);
  for (std::size_t h = 0; h < halvings; ++h)
    for (auto& x : d) x = (x + 1) / 2;
  return d;
}

FlopBreakdown flops_estimate(const NetConfig& cfg, const Dims3& resolution, Placement placement) {
  for (auto x : resolution)
    if (x == 0) throw DomainError("flops_estimate: zero extent");
  FlopBreakdown f;
  std::size_t cin = cfg.in_channels;
  for (std::size_t i = 1; i <= kStages; ++i) {
    const std::size_t c = cfg.channels(i);
    const std::size_t v = voxels(stage_resolution(resolution, i));
    f.conv += conv3d_flops(cin, c, 3, v) + conv3d_flops(c, c, 3, v);
    cin = c;
  }
  for (std::size_t j = kStages - 1; j >= 1; --j) {
    const std::size_t c = cfg.channels(j);
    const std::size_t v = voxels(stage_resolution(resolution, j));
    f.conv += conv3d_flops(cfg.channels(j + 1), c, 3, v) + conv3d_flops(2 * c, c, 3, v) + conv3d_flops(c, c, 3, v);
  }
  f.conv += conv3d_flops(cfg.channels(1), cfg.classes, 1, voxels(resolution));

  if (placement == Placement::dual_resolution) {
    const std::size_t l6 = voxels(stage_resolution(resolution, 6));
    const std::size_t l4 = voxels(stage_resolution(resolution, 4));
    f.sequence += sequence_block_flops(l6, block_config(cfg, cfg.bottleneck_channels()), 2);
    f.sequence += sequence_block_flops(l4, block_config(cfg, cfg.skip_channels()), 2);
    if (cfg.use_vq) {
      f.quantizer += 3.0 * double(l6) * double(cfg.vq.codes) * double(cfg.bottleneck_channels());
      if (cfg.vq_on_skip) f.quantizer += 3.0 * double(l4) * double(cfg.vq.codes) * double(cfg.skip_channels());
    }
  } else {
    for (std::size_t i = 1; i <= kStages; ++i) {
      f.sequence += sequence_block_flops(voxels(stage_resolution(resolution, i)), block_config(cfg, cfg.channels(i)), 3);
    }
  }
  return f;
}

}  // namespace drbd
