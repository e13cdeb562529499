#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "drbd/data.hpp"
#include "drbd/flops.hpp"
#include "drbd/gradcheck.hpp"
#include "drbd/inference.hpp"
#include "drbd/ops.hpp"
#include "drbd/train.hpp"
#include "oracles.hpp"

using namespace drbd;
namespace fs = std::filesystem;

namespace {

// Smallest ladder that still exercises every stage: 2..64 channels.
NetConfig tiny_config(bool vq = true) {
  NetConfig c = NetConfig::desk();
  c.base_channels = 2;
  c.state = 4;
  c.vq.codes = 8;
  c.use_vq = vq;
  return c;
}

std::vector<Sample> tiny_data(std::size_t n, const Dims3& shape = {16, 16, 16}) {
  std::vector<Sample> out;
  for (const auto& c : phantom_sweep(n, 40, shape)) out.push_back(to_sample(c));
  return out;
}

TrainConfig quick_train(double lr, std::size_t batch = 2) {
  TrainConfig t;
  t.batch_size = batch;
  t.adam.lr = lr;
  t.seed = 3;
  return t;
}

template <class T>
std::vector<std::vector<T>> snapshot(const Network<T>& net) {
  std::vector<std::vector<T>> out;
  for (const auto& [name, p] : net.parameters()) out.push_back(p.to_vector());
  return out;
}

}  // namespace

TEST(NetConfig, LadderAndPresets) {
  const auto full = NetConfig::full();
  for (std::size_t s = 1; s <= 6; ++s) EXPECT_EQ(full.channels(s), 16u << (s - 1));
  EXPECT_EQ(full.bottleneck_vq().dim, 512u);
  EXPECT_EQ(full.vq.codes, 512u);
  const auto desk = NetConfig::desk();
  EXPECT_EQ(desk.channels(6), 128u);
  EXPECT_EQ(desk.skip_channels(), 32u);
}

TEST(NetConfig, JsonRoundTrip) {
  auto c = tiny_config();
  c.vq.decay = 0.123456789;
  c.separate_reverse = true;
  c.norm = NormKind::none;
  const auto r = net_config_from_json(net_config_to_json(c));
  EXPECT_EQ(net_config_to_json(r), net_config_to_json(c));
  EXPECT_EQ(r.vq.decay, 0.123456789);
  EXPECT_THROW(net_config_from_json(R"({"norm":"batch"})"), DomainError);
}

TEST(ParameterCount, FullScalePinned) {
  const auto n = parameter_count(NetConfig::full());
  EXPECT_EQ(n, 26258276u);
  EXPECT_GE(n, 25'000'000u);
  EXPECT_LE(n, 35'000'000u);
}

TEST(ParameterCount, LayoutMatchesInstantiatedNetwork) {
  const auto cfg = tiny_config();
  Network<float> net(cfg, 1);
  EXPECT_EQ(net.parameter_count(), parameter_count(cfg));
  const auto layout = parameter_layout(cfg);
  ASSERT_EQ(layout.size(), net.parameters().size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    EXPECT_EQ(layout[i].name, net.parameters()[i].first);
    EXPECT_EQ(layout[i].shape, net.parameters()[i].second.shape());
  }
}

TEST(Forward, DeskLogitsShape) {
  Network<float> net(NetConfig::desk(), 1);
  auto x = TensorF::full({4, 32, 32, 32}, 0.1f);
  SplitMix64 rng(1);
  net.init_codebooks({x}, rng);
  const auto out = net.forward(x);
  EXPECT_EQ(out.logits.shape(), (Shape{4, 32, 32, 32}));
  EXPECT_EQ(out.vq_indices.size(), 8u);  // 2^3 bottleneck tokens
  EXPECT_GE(out.commit.item(), 0.0f);
}

TEST(Forward, ZeroInputGivesUniformSoftmax) {
  Network<double> net(tiny_config(false), 2);
  const auto logits = net.predict(TensorD::zeros({4, 16, 16, 16}));
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
  const auto p = softmax(reshape(logits, {4, 16 * 16 * 16}), 0);
  for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Forward, DeterministicAndRejectsBadExtents) {
  const auto cfg = tiny_config(false);
  Network<float> a(cfg, 5), b(cfg, 5);
  auto x = sample_tensor<float>(tiny_data(1)[0]);
  a.parameter("head.w").mutable_data()[0] = 0.5f;
  b.parameter("head.w").mutable_data()[0] = 0.5f;
  EXPECT_EQ(a.predict(x).to_vector(), b.predict(x).to_vector());
  EXPECT_THROW(a.forward(TensorF::zeros({4, 16, 16, 24})), ShapeError);
}

TEST(Loss, UniformLogitsGiveLnFour) {
  const std::vector<std::uint8_t> labels{0, 1, 2, 3, 0, 0, 2, 2};
  const auto r = ce_dice_loss(TensorD::zeros({4, 2, 2, 2}), labels);
  EXPECT_NEAR(r.ce, std::log(4.0), 1e-12);
}

TEST(Loss, ConfidentCorrectLogitsGiveNearZero) {
  const std::vector<std::uint8_t> labels{0, 1, 2, 3, 0, 3, 2, 1};
  std::vector<double> logits(32, -20.0);
  for (std::size_t v = 0; v < 8; ++v) logits[labels[v] * 8 + v] = 20.0;
  const auto r = ce_dice_loss(TensorD::from({4, 2, 2, 2}, logits), labels);
  EXPECT_LT(r.total_value, 0.01);
  EXPECT_NEAR(r.soft_dice(), 1.0, 1e-8);
}

TEST(Loss, MatchesOracleOnRandomLogits) {
  SplitMix64 rng(4);
  std::vector<double> logits(4 * 64);
  for (auto& v : logits) v = rng.normal(0, 2);
  std::vector<std::uint8_t> labels(64);
  for (auto& l : labels) l = std::uint8_t(rng.below(4));
  const auto r = ce_dice_loss(TensorD::from({4, 4, 4, 4}, logits), labels);
  const auto ref = oracle::ce_dice(logits, 4, labels);
  EXPECT_NEAR(r.ce, ref.ce, 1e-12);
  EXPECT_NEAR(r.dice_loss, ref.dice_loss, 1e-12);
  EXPECT_NEAR(r.total_value, ref.ce + ref.dice_loss, 1e-12);
  labels[5] = 4;
  EXPECT_THROW(ce_dice_loss(TensorD::from({4, 4, 4, 4}, logits), labels), DomainError);
}

TEST(Loss, GradientMatchesDifferences) {
  for (const auto& r : run_gradcheck("ce_dice_loss")) EXPECT_TRUE(r.passed) << r.max_rel_err;
}

TEST(Objective, TotalAddsWeightedCommitment) {
  const auto cfg = tiny_config();
  Network<double> net(cfg, 6);
  auto data = tiny_data(1);
  auto x = sample_tensor<double>(data[0]);
  SplitMix64 rng(2);
  net.init_codebooks({x}, rng);
  const auto fwd = net.forward(x);
  const auto rep = training_objective(net, fwd, data[0].labels);
  EXPECT_NEAR(rep.total_value, rep.ce + rep.dice_loss + 0.25 * rep.commit, 1e-12);
  EXPECT_GE(rep.ce, 0.0);
  EXPECT_GE(rep.dice_loss, 0.0);
  EXPECT_GE(rep.commit, 0.0);
}

// --------------------------------------------------------------- training

TEST(Augment, FlipsAndRotationsAreInvertible) {
  const auto s = tiny_data(1)[0];
  for (std::size_t a = 0; a < 3; ++a) {
    const auto f = flip_axis(flip_axis(s, a), a);
    EXPECT_EQ(f.image, s.image);
    EXPECT_EQ(f.labels, s.labels);
    EXPECT_NE(flip_axis(s, a).labels, s.labels);
  }
  auto r = s;
  for (int i = 0; i < 4; ++i) r = rotate90(r, 0, 2, 1);
  EXPECT_EQ(r.image, s.image);
  EXPECT_EQ(rotate90(rotate90(s, 1, 2, 1), 1, 2, 3).labels, s.labels);
}

TEST(Augment, IntensityChangesLeaveLabelsAlone) {
  const auto s = tiny_data(1)[0];
  AugmentConfig only_intensity{.flip_p = 0, .rotate_p = 0, .shift_p = 1, .scale_p = 1};
  SplitMix64 rng(1);
  const auto a = augment(s, only_intensity, rng);
  EXPECT_EQ(a.labels, s.labels);
  EXPECT_NE(a.image, s.image);
  AugmentConfig off = only_intensity;
  off.enabled = false;
  EXPECT_EQ(augment(s, off, rng).image, s.image);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  Network<float> net(tiny_config(), 1);
  const auto before = snapshot(net);
  Trainer<float> t(net, quick_train(0.0));
  train(t, tiny_data(2), 2);
  EXPECT_EQ(snapshot(net), before);
}

TEST(Train, OneStepReducesLossOnFixedBatch) {
  Network<float> net(tiny_config(false), 7);
  auto data = tiny_data(2);
  auto cfg = quick_train(1e-3);
  cfg.augment.enabled = false;
  Trainer<float> t(net, cfg);
  const auto first = t.step(data);
  // Re-evaluate the same batch after the update.
  double after = 0;
  for (const auto& s : data) after += training_objective(net, net.forward(sample_tensor<float>(s)), s.labels).total_value;
  EXPECT_LT(after / 2, first.total);
}

TEST(Train, BatchDrawsCoverEveryExamplePerEpoch) {
  Network<float> net(tiny_config(), 1);
  Trainer<float> t(net, quick_train(1e-3, 3));
  std::vector<int> seen(6, 0);
  for (std::size_t s = 0; s < 2; ++s)
    for (auto i : t.batch_indices(s, 6)) ++seen[i];
  for (int n : seen) EXPECT_EQ(n, 1);
}

TEST(Train, ResumeContinuesBitIdentically) {
  const auto data = tiny_data(3);
  auto cfg = quick_train(2e-3);
  Network<float> ref_net(tiny_config(), 9);
  Trainer<float> ref(ref_net, cfg);
  const auto ref_log = train(ref, data, 4);

  const fs::path path = fs::temp_directory_path() / "drbd_resume_test.ckpt";
  Network<float> a_net(tiny_config(), 9);
  Trainer<float> a(a_net, cfg);
  train(a, data, 2);
  write_checkpoint(path, a.checkpoint());

  Network<float> b_net(tiny_config(), 12345);  // different init, overwritten by restore
  Trainer<float> b(b_net, cfg);
  b.restore(read_checkpoint(path));
  fs::remove(path);
  EXPECT_EQ(b.steps_done(), 2u);
  const auto tail = train(b, data, 2);
  EXPECT_EQ(tail[1].total, ref_log[3].total);
  EXPECT_EQ(snapshot(b_net), snapshot(ref_net));
  EXPECT_EQ(b_net.codebook().embeddings, ref_net.codebook().embeddings);
}

TEST(Train, NonFiniteLossAborts) {
  Network<float> net(tiny_config(false), 1);
  net.parameter("head.b").mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  Trainer<float> t(net, quick_train(1e-3));
  EXPECT_THROW(t.step(tiny_data(2)), NumericalError);
}

TEST(Optimizer, DecoupledWeightDecayOnly) {
  auto p = TensorD::full({2}, 2.0, true);
  AdamW<double> opt({{"p", p}}, {.lr = 0.1, .weight_decay = 0.5});
  backward(mul_scalar(sum(p), 0.0));  // zero gradient
  opt.step();
  // Decay p <- p - lr * wd * p, then a zero Adam step.
  for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 2.0 - 0.1 * 0.5 * 2.0);
}

TEST(Checkpoint, NetworkRoundTrip) {
  const fs::path path = fs::temp_directory_path() / "drbd_net_test.ckpt";
  Network<float> net(tiny_config(), 3);
  net.parameter("head.w").mutable_data()[2] = 0.75f;
  write_checkpoint(path, network_checkpoint(net));
  const auto entries = read_checkpoint(path);
  EXPECT_EQ(net_config_to_json(config_from_checkpoint(entries)), net_config_to_json(tiny_config()));
  Network<float> other(config_from_checkpoint(entries), 99);
  load_network_state(other, entries);
  EXPECT_EQ(snapshot(other), snapshot(net));
  fs::resize_file(path, fs::file_size(path) - 3);
  EXPECT_THROW(read_checkpoint(path), IoError);
  fs::remove(path);
  EXPECT_THROW(find_entry(entries, "no.such.entry"), IoError);
}

// -------------------------------------------------------------- inference

TEST(SlidingWindow, CoveringWindowEqualsForward) {
  Network<float> net(tiny_config(false), 4);
  net.parameter("head.w").mutable_data()[1] = 0.3f;
  const auto x = sample_tensor<float>(tiny_data(1)[0]);
  const auto direct = net.predict(x);
  const auto tiled = sliding_window_infer<float>(x, {16, 16, 16}, [&](const TensorF& w) { return net.predict(w); });
  EXPECT_EQ(tiled.to_vector(), direct.to_vector());
}

TEST(SlidingWindow, ConstantPredictorStaysConstant) {
  const auto x = TensorD::zeros({1, 20, 18, 16});
  const auto y = sliding_window_infer<double>(x, {8, 8, 8}, [](const TensorD& w) {
    return TensorD::full({2, w.dim(1), w.dim(2), w.dim(3)}, 1.25);
  });
  EXPECT_EQ(y.shape(), (Shape{2, 20, 18, 16}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.25);
  EXPECT_THROW(sliding_window_infer<double>(x, {24, 8, 8}, [](const TensorD& w) { return w; }), ShapeError);
}

TEST(SlidingWindow, CoverageOfFortyEightCube) {
  EXPECT_EQ(window_starts(48, 32), (std::vector<std::size_t>{0, 16}));
  const auto cov = window_coverage({48, 48, 48}, {32, 32, 32});
  // Axis coverage counts are 1 outside [16, 32) and 2 inside; the product
  // over axes is the voxel coverage.
  for (std::size_t x = 0; x < 48; ++x)
    for (std::size_t y = 0; y < 48; ++y)
      for (std::size_t z = 0; z < 48; ++z) {
        auto axis = [](std::size_t i) { return (i >= 16 && i < 32) ? 2u : 1u; };
        const auto c = cov[(x * 48 + y) * 48 + z];
        ASSERT_EQ(c, axis(x) * axis(y) * axis(z));
        ASSERT_GE(c, 1u);
        if (x >= 16 && x < 32 && y >= 16 && y < 32 && z >= 16 && z < 32) ASSERT_GE(c, 2u);
      }
}

// ------------------------------------------------------------------ flops

TEST(Flops, ConvScalesWithVolume) {
  NetConfig c = NetConfig::full();
  const auto a = flops_estimate(c, {64, 64, 64}, Placement::dual_resolution);
  const auto b = flops_estimate(c, {128, 128, 128}, Placement::dual_resolution);
  EXPECT_DOUBLE_EQ(b.conv / a.conv, 8.0);
  EXPECT_DOUBLE_EQ(conv3d_flops(2, 3, 3, 10), 2.0 * 27 * 2 * 3 * 10);
}

TEST(Flops, StageResolutions) {
  EXPECT_EQ(stage_resolution({160, 160, 144}, 1), (Dims3{160, 160, 144}));
  EXPECT_EQ(stage_resolution({160, 160, 144}, 4), (Dims3{20, 20, 18}));
  EXPECT_EQ(stage_resolution({160, 160, 144}, 5), (Dims3{10, 10, 9}));
  EXPECT_EQ(stage_resolution({160, 160, 144}, 6), (Dims3{10, 10, 9}));
}

TEST(Flops, ScanFormula) {
  SsmConfig s{.embed = 8, .state = 4, .use_conv = false, .use_skip = false};
  EXPECT_DOUBLE_EQ(scan_direction_flops(10, s), 10.0 * (2 * 64 + 4 * 8 * 4 + 9.0 * 8 * 4));
}

TEST(Flops, SequenceRatioPinned) {
  const auto cfg = NetConfig::full();
  double prev = 0;
  for (const Dims3 r : {Dims3{64, 64, 64}, Dims3{96, 96, 96}, Dims3{128, 128, 128}, Dims3{160, 160, 144}}) {
    const auto dual = flops_estimate(cfg, r, Placement::dual_resolution);
    const auto ref = flops_estimate(cfg, r, Placement::tri_orientation_all_stages);
    EXPECT_EQ(dual.conv, ref.conv);
    EXPECT_EQ(ref.quantizer, 0.0);
    const double ratio = ref.sequence / (dual.sequence + dual.quantizer);
    EXPECT_NEAR(ratio, 23.723005877414, 1e-9);
    EXPECT_GE(ratio, prev);
    prev = ratio;
  }
}
