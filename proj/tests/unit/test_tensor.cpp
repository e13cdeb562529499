#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "drbd/gradcheck.hpp"
#include "drbd/ops.hpp"
#include "drbd/rng.hpp"

using namespace drbd;

namespace {

TensorD random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  SplitMix64 rng(seed);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD::from(std::move(shape), std::move(v), true);
}

std::vector<double> values(const TensorD& t) { return t.to_vector(); }

}  // namespace

TEST(Elementwise, AddsVectors) {
  auto r = add(TensorD::from({2}, {1, 2}), TensorD::from({2}, {3, 4}));
  EXPECT_EQ(values(r), (std::vector<double>{4, 6}));
}

TEST(Elementwise, MulByOnesIsIdentity) {
  auto x = random_tensor({3, 4}, 1);
  auto r = mul(x, TensorD::full({3, 4}, 1.0));
  EXPECT_EQ(values(r), values(x));
}

TEST(Elementwise, BroadcastShapes) {
  EXPECT_EQ(broadcast_shape({3, 1, 5}, {4, 5}), (Shape{3, 4, 5}));
  EXPECT_EQ(broadcast_shape({}, {2, 2}), (Shape{2, 2}));
  EXPECT_THROW(broadcast_shape({3}, {4}), ShapeError);
}

TEST(Elementwise, BroadcastResultShapeDependsOnlyOnShapes) {
  const Shape a{2, 1, 3}, b{4, 1}, c{1, 4, 3};
  const Shape ab_c = broadcast_shape(broadcast_shape(a, b), c);
  const Shape a_bc = broadcast_shape(a, broadcast_shape(b, c));
  EXPECT_EQ(ab_c, a_bc);
  auto r = add(add(random_tensor(a, 1), random_tensor(b, 2)), random_tensor(c, 3));
  EXPECT_EQ(r.shape(), ab_c);
}

TEST(Elementwise, BroadcastGradientSumsOverExpandedAxes) {
  auto a = random_tensor({3, 4}, 4);
  auto b = random_tensor({4}, 5);
  backward(sum(mul(a, b)));
  for (std::size_t j = 0; j < 4; ++j) {
    double expect = 0;
    for (std::size_t i = 0; i < 3; ++i) expect += a.data()[i * 4 + j];
    EXPECT_NEAR(b.grad()[j], expect, 1e-14);
  }
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(a.grad()[i], b.data()[i % 4]);
}

TEST(Activations, ClosedForms) {
  EXPECT_DOUBLE_EQ(sigmoid(TensorD::scalar(0.0)).item(), 0.5);
  EXPECT_NEAR(softplus(TensorD::scalar(0.0)).item(), std::numbers::ln2, 1e-15);
  EXPECT_EQ(relu(TensorD::scalar(-2.0)).item(), 0.0);
  EXPECT_THROW(log(TensorD::scalar(0.0)), DomainError);
}

TEST(Matmul, IdentityAndSmallProduct) {
  auto a = random_tensor({2, 3}, 6);
  auto eye = TensorD::from({2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(values(matmul(eye, a)), values(a));
  auto r = matmul(TensorD::from({1, 2}, {1, 2}), TensorD::from({2, 1}, {3, 4}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r.item(), 11.0);
  EXPECT_THROW(matmul(TensorD::zeros({2, 3}), TensorD::zeros({2, 3})), ShapeError);
}

TEST(Conv3d, PointwiseUnitKernelIsIdentity) {
  auto x = random_tensor({1, 3, 4, 5}, 7);
  auto w = TensorD::full({1, 1, 1, 1, 1}, 1.0);
  EXPECT_EQ(values(conv3d(x, w, TensorD(), 1)), values(x));
}

TEST(Conv3d, StrideTwoHalvesWithCeil) {
  auto y = conv3d(TensorD::zeros({2, 10, 9, 1}), TensorD::zeros({3, 2, 3, 3, 3}), TensorD(), 2);
  EXPECT_EQ(y.shape(), (Shape{3, 5, 5, 1}));
  EXPECT_THROW(conv3d(TensorD::zeros({2, 4, 4, 4}), TensorD::zeros({3, 1, 3, 3, 3}), TensorD(), 1), ShapeError);
}

TEST(Shapes, UpsampleSoftmaxLayerNorm) {
  EXPECT_EQ(upsample_nearest3d(TensorD::zeros({1, 5, 5, 5}), 2).shape(), (Shape{1, 10, 10, 10}));

  auto s = softmax(TensorD::full({2, 5}, 3.0), 1);
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 0.2);

  auto x = random_tensor({4, 7}, 8, -3, 5);
  auto n = layer_norm(x, 1, 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 7; ++c) m += n.data()[r * 7 + c];
    m /= 7;
    for (std::size_t c = 0; c < 7; ++c) v += std::pow(n.data()[r * 7 + c] - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v / 7, 1.0, 1e-6);
  }
}

TEST(Backward, SumAndHalfSquare) {
  auto x = random_tensor({3, 2}, 9);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  auto y = random_tensor({5}, 10);
  backward(mul_scalar(sum(square(y)), 0.5));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(y.grad()[i], y.data()[i]);
}

TEST(Backward, RejectsNonScalarLoss) { EXPECT_THROW(backward(random_tensor({2}, 1)), ShapeError); }

TEST(Backward, LeafGradientsAccumulate) {
  auto x = random_tensor({4}, 11);
  auto loss = sum(mul(x, x));
  backward(loss);
  const auto first = std::vector<double>(x.grad().begin(), x.grad().end());
  backward(loss);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], 2 * first[i]);
}

TEST(Backward, RepeatedPassesAreBitIdentical) {
  auto a = random_tensor({3, 4}, 12);
  auto b = random_tensor({4, 2}, 13);
  auto loss = sum(softplus(matmul(a, b)));
  backward(loss);
  const auto g1 = std::vector<double>(a.grad().begin(), a.grad().end());
  a.zero_grad();
  b.zero_grad();
  backward(loss);
  EXPECT_EQ(std::vector<double>(a.grad().begin(), a.grad().end()), g1);
}

TEST(Tape, TopologicalOrderVisitsEachNodeOnce) {
  auto x = random_tensor({3}, 14);
  auto y = mul(x, x);
  auto z = add(y, y);  // y is reachable twice
  const auto loss = sum(z);
  Tape<double> tape(loss);
  const auto& nodes = tape.nodes();
  std::set<const Node<double>*> seen;
  for (auto* n : nodes) {
    EXPECT_TRUE(seen.insert(n).second);
    for (const auto& in : n->inputs)
      if (in->requires_grad) EXPECT_TRUE(seen.count(in.get())) << n->op;
  }
  EXPECT_EQ(nodes.size(), 4u);  // x, y, z, sum
}

TEST(NoGrad, GuardStopsRecording) {
  auto x = random_tensor({2}, 15);
  NoGradGuard guard;
  auto y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->inputs.empty());
}

TEST(Finite, RequireFiniteFlagsNaN) {
  std::vector<double> v{1.0, std::nan("")};
  EXPECT_THROW(require_finite<double>(v, "v"), NumericalError);
}

TEST(GradCheck, MulGradientIsOtherFactor) {
  auto a = random_tensor({5}, 16);
  auto b = random_tensor({5}, 17);
  backward(sum(mul(a, b)));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.grad()[i], b.data()[i]);
  auto r = check_gradients("mul", "mul", [](const std::vector<TensorD>& in) { return sum(mul(in[0], in[1])); },
                           {random_tensor({5}, 16), random_tensor({5}, 17)});
  EXPECT_TRUE(r.passed) << r.max_rel_err;
}

TEST(GradCheck, SiluDerivativeBelowOneInAMillion) {
  auto r = check_gradients("silu", "silu", [](const std::vector<TensorD>& in) { return sum(silu(in[0])); },
                           {random_tensor({4, 3}, 18, -3, 3)});
  EXPECT_LT(r.max_rel_err, 1e-6);
}

TEST(GradCheck, MatmulOnThreeByFourTimesFourByTwo) {
  auto r = check_gradients("matmul", "matmul",
                           [](const std::vector<TensorD>& in) { return sum(square(matmul(in[0], in[1]))); },
                           {random_tensor({3, 4}, 19), random_tensor({4, 2}, 20)});
  EXPECT_LT(r.max_rel_err, 1e-6);
}

TEST(GradCheck, ConvWeightOnSpecShape) {
  // 2 input channels, 4^3 volume, 3 output channels.
  auto x = random_tensor({2, 4, 4, 4}, 21);
  auto w = random_tensor({3, 2, 3, 3, 3}, 22);
  auto r = check_gradients("conv", "conv3d",
                           [](const std::vector<TensorD>& in) {
                             return sum(square(conv3d(in[0], in[1], TensorD(), 1)));
                           },
                           {x, w}, {.max_entries = 1000});
  EXPECT_LT(r.max_rel_err, 1e-4);
  EXPECT_EQ(r.checked, 128u + 162u);
}

TEST(GradCheck, RandomShapesForElementwiseOps) {
  // Five random small shapes per op family.
  SplitMix64 rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    Shape s{1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(3)};
    auto f = [](const std::vector<TensorD>& in) {
      return sum(mul(sigmoid(in[0]), add(softplus(in[1]), exp(mul_scalar(in[0], 0.3)))));
    };
    auto r = check_gradients("mix", "composite", f, {random_tensor(s, 100 + trial), random_tensor(s, 200 + trial)});
    EXPECT_LT(r.max_rel_err, 1e-4) << to_string(s);
  }
}

TEST(GradCheck, FullSuitePasses) {
  for (const auto& r : run_gradcheck("layer_norm")) EXPECT_TRUE(r.passed) << r.name;
  for (const auto& r : run_gradcheck("selective_scan")) EXPECT_TRUE(r.passed) << r.name;
}

TEST(GradCheck, FilterMatchesOpOrName) {
  const auto conv = run_gradcheck("conv3d");
  EXPECT_EQ(conv.size(), 3u);
  for (const auto& r : conv) EXPECT_EQ(r.op, "conv3d");
  EXPECT_THROW(run_gradcheck("no_such_op"), DomainError);
}

TEST(GradCheck, SignFlipIsDetected) {
  testing_hooks::flip_backward_sign("softplus");
  const auto results = run_gradcheck("softplus");
  testing_hooks::flip_backward_sign("");
  ASSERT_EQ(results.size(), 1u);
  EXPECT_FALSE(results[0].passed);
  EXPECT_TRUE(run_gradcheck("softplus")[0].passed);
}

TEST(GradCheck, ReluGateReplayKeepsKinkedDifferencesOnOnePiece) {
  // Entries within h of zero would give a half slope without the replay.
  auto x = TensorD::from({3}, {1e-6, -1e-6, 0.5}, true);
  auto r = check_gradients("relu_kink", "relu", [](const std::vector<TensorD>& in) { return sum(relu(in[0])); },
                           {x});
  EXPECT_TRUE(r.passed) << r.max_rel_err;
  EXPECT_EQ(testing_hooks::relu_gate_mode(), testing_hooks::GateMode::off);
}

TEST(GradCheck, RelativeErrorUsesFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1e-6, 0.0, 1e-3), 1e-3);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0, 1e-3), 0.5);
}
