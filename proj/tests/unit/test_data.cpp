#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "drbd/data.hpp"
#include "oracles.hpp"

using namespace drbd;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("drbd_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

CaseRecord tiny_case() {
  CaseRecord c;
  c.case_id = "tiny";
  c.dims = {2, 2, 1};
  for (int m = 0; m < 4; ++m) c.modalities[m] = {1.0f, 2.0f, 3.0f, 4.0f + float(m)};
  c.labels = {0, 1, 2, 3};
  refresh_stats(c);
  return c;
}

}  // namespace

TEST(VolumeIo, F32RoundTripIsBitExact) {
  TempDir dir;
  Volume v;
  v.dims = {4, 4, 4};
  v.spacing = {1.0, 0.5, 2.5};
  v.modality = "T2";
  SplitMix64 rng(1);
  for (int i = 0; i < 64; ++i) v.f32.push_back(float(rng.normal()));
  v.f32[3] = -0.0f;
  write_volume(dir.path() / "a.vol", v);
  const auto r = read_volume(dir.path() / "a.vol");
  EXPECT_EQ(r.dims, v.dims);
  EXPECT_EQ(r.spacing, v.spacing);
  EXPECT_EQ(r.modality, "T2");
  ASSERT_EQ(r.f32.size(), 64u);
  EXPECT_EQ(std::memcmp(r.f32.data(), v.f32.data(), 64 * sizeof(float)), 0);
}

TEST(VolumeIo, LabelRoundTripKeepsHistogram) {
  TempDir dir;
  Volume v;
  v.dims = {3, 5, 2};
  v.dtype = Dtype::u8;
  for (int i = 0; i < 30; ++i) v.u8.push_back(std::uint8_t(i % 4));
  write_volume(dir.path() / "l.vol", v);
  EXPECT_EQ(read_volume(dir.path() / "l.vol").u8, v.u8);
}

TEST(VolumeIo, TruncatedOrCorruptFilesFail) {
  TempDir dir;
  Volume v;
  v.dims = {4, 4, 4};
  v.f32.assign(64, 1.0f);
  const auto p = dir.path() / "t.vol";
  write_volume(p, v);
  fs::resize_file(p, fs::file_size(p) - 5);
  EXPECT_THROW(read_volume(p), IoError);
  std::ofstream(dir.path() / "bad.vol") << "{\"magic\":\"NOPE\"}\n";
  EXPECT_THROW(read_volume(dir.path() / "bad.vol"), IoError);
  EXPECT_THROW(read_volume(dir.path() / "missing.vol"), IoError);
}

TEST(Fiv, ConstantTumourGivesZero) {
  CaseRecord c = tiny_case();
  for (auto& m : c.modalities) m = {1.0f, 5.0f, 5.0f, 5.0f};
  EXPECT_NEAR(compute_fiv(c), 0.0, 1e-7);
}

TEST(Fiv, ScaleInvariantPerModality) {
  auto c = phantom_sweep(1, 5, {16, 16, 16})[0];
  const double before = compute_fiv(c);
  for (auto& v : c.modalities[2]) v *= 2.0f;
  EXPECT_NEAR(compute_fiv(c), before, 1e-5);
}

TEST(Fiv, HandEnumeratedThreeVoxelTumour) {
  // One modality has brain values {1, 2, 3, 4} with WT = {2, 3, 4}; the
  // z-scores over the brain are (v - 2.5) / sqrt(1.25), so the WT std is
  // std({0, 1, 2}) / sqrt(1.25).
  CaseRecord c;
  c.case_id = "hand";
  c.dims = {4, 1, 1};
  for (auto& m : c.modalities) m = {1.0f, 2.0f, 3.0f, 4.0f};
  c.labels = {0, 2, 1, 3};
  const double expect = oracle::population_std({0, 1, 2}) / std::sqrt(1.25);
  EXPECT_NEAR(compute_fiv(c), expect, 1e-6);
  c.labels = {0, 0, 0, 0};
  EXPECT_THROW(compute_fiv(c), DomainError);
}

TEST(ZNormalize, ZerosStayZero) {
  const std::vector<float> v{0, 2, 4, 0};
  const auto z = z_normalize(v);
  EXPECT_EQ(z[0], 0.0f);
  EXPECT_EQ(z[3], 0.0f);
  EXPECT_FLOAT_EQ(z[1], -1.0f);
  EXPECT_FLOAT_EQ(z[2], 1.0f);
}

TEST(Cases, WriteReadRoundTripAndStaleStats) {
  TempDir dir;
  const auto c = phantom_sweep(1, 11, {16, 16, 16})[0];
  write_case(dir.path(), c);
  const auto r = read_case(dir.path() / c.case_id);
  EXPECT_EQ(r.labels, c.labels);
  EXPECT_EQ(r.modalities, c.modalities);
  EXPECT_EQ(r.fiv, c.fiv);
  EXPECT_EQ(read_cases(dir.path()).size(), 1u);

  // A modality edited behind the cache makes the stored stats stale.
  auto v = read_volume(dir.path() / c.case_id / "T1ce.vol");
  for (auto& x : v.f32) x = x * x;
  write_volume(dir.path() / c.case_id / "T1ce.vol", v);
  EXPECT_THROW(read_case(dir.path() / c.case_id), IoError);
}

TEST(Cases, ValidateRejectsBadLabelsAndShapes) {
  auto c = tiny_case();
  c.labels[0] = 7;
  EXPECT_THROW(validate_case(c), DomainError);
  c = tiny_case();
  c.modalities[1].pop_back();
  EXPECT_THROW(validate_case(c), ShapeError);
}

TEST(Phantom, ZeroEtTargetHasNoEnhancingTumour) {
  const auto c = generate_phantom(3, {24, 24, 24}, 0.0);
  EXPECT_EQ(c.volumes.et, 0u);
  EXPECT_GT(c.volumes.ed, 0u);
  EXPECT_GT(c.volumes.ncr, 0u);
  EXPECT_EQ(c.volumes.wt(), c.volumes.ed + c.volumes.ncr);
}

TEST(Phantom, DeterministicAndNested) {
  const auto a = generate_phantom(4, {16, 20, 24}, 150.0);
  const auto b = generate_phantom(4, {16, 20, 24}, 150.0);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.modalities, b.modalities);
  EXPECT_NEAR(double(a.volumes.et), 150.0, 30.0);
  validate_case(a);
}

TEST(Phantom, TargetWithinTwentyPercentAcrossSweep) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const double target = sweep_et_target(s, {32, 32, 32});
    const auto c = generate_phantom(s, {32, 32, 32}, target);
    EXPECT_LE(std::fabs(double(c.volumes.et) - target), 0.2 * target) << s;
  }
}

TEST(Phantom, InfeasibleRequestsRejected) {
  EXPECT_THROW(generate_phantom(1, {8, 16, 16}, 10.0), DomainError);
  EXPECT_THROW(generate_phantom(1, {16, 16, 16}, 1e6), DomainError);
  EXPECT_THROW(generate_phantom(1, {16, 16, 16}, -1.0), DomainError);
}

TEST(Phantom, SweepFivRangePinned) {
  const auto cases = phantom_sweep(50, 1000, {32, 32, 32});
  double lo = 1e9, hi = 0;
  for (const auto& c : cases) {
    lo = std::min(lo, c.fiv);
    hi = std::max(hi, c.fiv);
  }
  EXPECT_NEAR(lo, 0.198068, 1e-6);
  EXPECT_NEAR(hi, 1.135942, 1e-6);
  EXPECT_GE(hi / lo, 5.0);
}

TEST(DegradeLabels, DeterministicAndLossy) {
  const auto c = generate_phantom(6, {24, 24, 24}, 200.0);
  const auto a = degrade_labels(c.labels, c.dims, 1);
  EXPECT_EQ(a, degrade_labels(c.labels, c.dims, 1));
  EXPECT_NE(a, c.labels);
  EXPECT_EQ(degrade_labels(c.labels, c.dims, 1, 0.0, 0), c.labels);
}

// ------------------------------------------------------------------ folds

namespace {

std::vector<FoldCase> synthetic_cases(std::size_t n) {
  std::vector<FoldCase> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"c" + std::to_string(100 + i), 0.1 + 0.037 * double((i * 7) % n)});
  return out;
}

}  // namespace

TEST(Folds, TenCasesGiveTwoPerFold) {
  const auto f = build_systematic_folds(synthetic_cases(10), 1);
  std::map<int, int> per_fold;
  std::map<int, std::set<int>> folds_of_bin;
  for (const auto& [id, fold] : f.assignments) {
    ++per_fold[fold];
    folds_of_bin[f.bins.at(id)].insert(fold);
  }
  for (int k = 1; k <= 5; ++k) EXPECT_EQ(per_fold[k], 2);
  for (const auto& [bin, folds] : folds_of_bin) EXPECT_EQ(folds.size(), 2u) << bin;
}

TEST(Folds, FiftyCasesGiveTwoPerFoldPerBin) {
  const auto f = build_systematic_folds(synthetic_cases(50), 2);
  std::map<std::pair<int, int>, int> cell;
  for (const auto& [id, fold] : f.assignments) ++cell[{fold, f.bins.at(id)}];
  EXPECT_EQ(cell.size(), 25u);
  for (const auto& [key, n] : cell) EXPECT_EQ(n, 2);
  EXPECT_EQ(f.bin_edges.size(), 6u);
}

TEST(Folds, UnevenCountsDifferByAtMostOne) {
  for (std::size_t n : {7u, 23u, 38u, 51u}) {
    const auto f = build_systematic_folds(synthetic_cases(n), 3);
    std::map<std::pair<int, int>, int> cell;
    std::map<int, int> fold;
    for (const auto& [id, k] : f.assignments) {
      ++cell[{k, f.bins.at(id)}];
      ++fold[k];
    }
    for (int b = 1; b <= 5; ++b) {
      int lo = 1 << 20, hi = 0;
      for (int k = 1; k <= 5; ++k) {
        const int v = cell.count({k, b}) ? cell[{k, b}] : 0;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      EXPECT_LE(hi - lo, 1) << n;
    }
    int lo = 1 << 20, hi = 0;
    for (int k = 1; k <= 5; ++k) {
      lo = std::min(lo, fold[k]);
      hi = std::max(hi, fold[k]);
    }
    EXPECT_LE(hi - lo, 1) << n;
  }
}

TEST(Folds, DeterministicAndJsonRoundTrip) {
  const auto a = build_systematic_folds(synthetic_cases(30), 9);
  const auto b = build_systematic_folds(synthetic_cases(30), 9);
  EXPECT_EQ(a.to_json(), b.to_json());
  const auto r = FoldAssignment::from_json(a.to_json());
  EXPECT_EQ(r.assignments, a.assignments);
  EXPECT_EQ(r.bin_edges, a.bin_edges);
  EXPECT_EQ(r.seed, 9u);
  EXPECT_THROW(FoldAssignment::from_json("{not json"), IoError);
  // Input order does not matter.
  auto shuffled = synthetic_cases(30);
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_EQ(build_systematic_folds(shuffled, 9).to_json(), a.to_json());
}

TEST(Folds, SeedChangesAssignment) {
  EXPECT_NE(build_systematic_folds(synthetic_cases(50), 1).assignments,
            build_systematic_folds(synthetic_cases(50), 2).assignments);
}

TEST(Folds, ErrorsOnTooFewOrInvalid) {
  EXPECT_THROW(build_systematic_folds(synthetic_cases(4), 1), DomainError);
  auto c = synthetic_cases(10);
  c[3].fiv = std::nan("");
  EXPECT_THROW(build_systematic_folds(c, 1), DomainError);
}

TEST(Folds, PhantomSweepBalance) {
  std::vector<FoldCase> cases;
  double global = 0;
  for (const auto& c : phantom_sweep(50, 1000, {32, 32, 32})) {
    cases.push_back({c.case_id, c.fiv});
    global += c.fiv;
  }
  global /= 50;
  const auto f = build_systematic_folds(cases, 1000);
  std::map<int, double> sum;
  for (const auto& c : cases) sum[f.assignments.at(c.case_id)] += c.fiv;
  for (const auto& [k, s] : sum) EXPECT_LE(std::fabs(s / 10 - global) / global, 0.05) << k;
}

// --------------------------------------------------------------- analyses

namespace {

ScoredCase scored(std::string id, double d, std::size_t et) {
  ScoredCase s;
  s.case_id = std::move(id);
  s.metrics.case_id = s.case_id;
  for (auto& r : s.metrics.regions) r.dice = d;
  s.volumes.et = et;
  s.volumes.ed = 2 * et;
  s.volumes.ncr = et / 2;
  return s;
}

}  // namespace

TEST(Analysis, EqualCountBins) {
  EXPECT_EQ(equal_count_bins(25, 5)[1], (std::pair<std::size_t, std::size_t>{5, 10}));
  const auto b = equal_count_bins(7, 5);
  std::size_t total = 0;
  for (auto [lo, hi] : b) total += hi - lo;
  EXPECT_EQ(total, 7u);
}

TEST(Analysis, RankedDiceBinBoundaries) {
  std::vector<ScoredCase> cases;
  for (int r = 1; r <= 25; ++r) cases.push_back(scored("c" + std::to_string(100 + r), r / 25.0, 10 * r));
  const auto bins = analyze_dice_bins(cases);
  ASSERT_EQ(bins.size(), 5u);
  for (std::size_t b = 0; b < 5; ++b) {
    EXPECT_EQ(bins[b].members.size(), 5u);
    EXPECT_NEAR(bins[b].dice_lo, double(5 * b + 1) / 25.0, 1e-12);
    EXPECT_NEAR(bins[b].dice_hi, double(5 * b + 5) / 25.0, 1e-12);
  }
  EXPECT_NEAR(bins[0].mean_et, 30.0, 1e-12);
}

TEST(Analysis, TiedDiceResolvedByCaseId) {
  std::vector<ScoredCase> cases;
  for (int i = 9; i >= 0; --i) cases.push_back(scored("id" + std::to_string(i), 0.5, 1));
  const auto bins = analyze_dice_bins(cases);
  EXPECT_EQ(bins[0].members[0]->case_id, "id0");
  EXPECT_EQ(bins[0].members[1]->case_id, "id1");
  EXPECT_EQ(bins[4].members[1]->case_id, "id9");
}

TEST(Analysis, QuintilesOfLowestBin) {
  std::vector<ScoredCase> cases;
  // 25 low-Dice cases whose Dice grows with |ET|, and 25 good cases.
  for (int i = 0; i < 25; ++i) cases.push_back(scored("low" + std::to_string(100 + i), 0.1 + 0.01 * i, 50 + 10 * i));
  for (int i = 0; i < 25; ++i) cases.push_back(scored("high" + std::to_string(100 + i), 0.9, 100));
  const auto q = analyze_et_quintiles(cases);
  ASSERT_EQ(q.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(q[i].count, 2u);
  for (std::size_t i = 1; i < 5; ++i) {
    EXPECT_GE(q[i].mean_dice, q[i - 1].mean_dice);
    EXPECT_GE(q[i].et_lo, q[i - 1].et_hi);
  }
  std::ostringstream out;
  write_et_quintiles_csv(out, q);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')),
            "quintile,count,et_lo,et_hi,mean_et,mean_dice,dice_wt,dice_tc,dice_et");
  EXPECT_THROW(analyze_dice_bins(std::vector<ScoredCase>(4)), DomainError);
}

TEST(MetricsCsv, ReadBackRoundTrip) {
  std::vector<std::uint8_t> gt(64, 0), pred(64, 0);
  gt[21] = kEt;
  gt[22] = kEd;
  pred[22] = kEd;
  const std::vector<MetricsReport> reports{evaluate_case("a", pred, gt, {4, 4, 4}), evaluate_case("b", gt, gt, {4, 4, 4})};
  std::stringstream first;
  write_metrics_csv(first, reports);
  const auto back = read_metrics_csv(first);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].regions[2].flags(), "empty_pred");
  std::stringstream second;
  write_metrics_csv(second, back);
  EXPECT_EQ(second.str(), first.str());

  std::stringstream bad("case_id,region,dice,hd95,flags\na,WT,1,0,\na,ET,1,0,\n");
  EXPECT_THROW(read_metrics_csv(bad), IoError);
  std::stringstream short_case("case_id,region,dice,hd95,flags\na,WT,1,0,\n");
  EXPECT_THROW(read_metrics_csv(short_case), IoError);
}
