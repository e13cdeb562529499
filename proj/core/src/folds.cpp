#include "drbd/data.hpp"

#include <algorithm>
#include <sstream>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <tuple>

#include <nlohmann/json.hpp>

namespace drbd {

std::vector<std::pair<std::size_t, std::size_t>> equal_count_bins(std::size_t n, std::size_t groups) {
  if (groups == 0) throw DomainError("equal_count_bins: need at least one group");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < groups; ++b) out.emplace_back(b * n / groups, (b + 1) * n / groups);
  return out;
}

std::string FoldAssignment::to_json() const {
  const nlohmann::json j = {
      {"version", version}, {"seed", seed}, {"folds", folds},
      {"bin_edges", bin_edges}, {"assignments", assignments}, {"bins", bins},
  };
  return j.dump(2);
}

FoldAssignment FoldAssignment::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    FoldAssignment f;
    f.version = j.at("version").get<int>();
    f.seed = j.at("seed").get<std::uint64_t>();
    f.folds = j.at("folds").get<std::size_t>();
    f.bin_edges = j.at("bin_edges").get<std::vector<double>>();
    f.assignments = j.at("assignments").get<std::map<std::string, int>>();
    f.bins = j.at("bins").get<std::map<std::string, int>>();
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("fold assignment: ") + e.what());
  }
}

FoldAssignment build_systematic_folds(std::vector<FoldCase> cases, std::uint64_t seed, std::size_t folds,
                                      std::size_t bins) {
  if (folds == 0 || bins == 0) throw DomainError("build_systematic_folds: need at least one fold and one bin");
  if (cases.size() < folds) {
    throw DomainError("build_systematic_folds: " + std::to_string(cases.size()) + " cases cannot fill " +
                      std::to_string(folds) + " folds");
  }
  for (const auto& c : cases)
    if (!std::isfinite(c.fiv)) throw DomainError("build_systematic_folds: case " + c.case_id + " has no valid fiv");
  std::sort(cases.begin(), cases.end(), [](const FoldCase& a, const FoldCase& b) {
    return a.fiv != b.fiv ? a.fiv < b.fiv : a.case_id < b.case_id;
  });
  for (std::size_t i = 1; i < cases.size(); ++i) {
    if (cases[i].case_id == cases[i - 1].case_id) throw DomainError("build_systematic_folds: duplicate case id " + cases[i].case_id);
  }

  FoldAssignment out;
  out.seed = seed;
  out.folds = folds;
  const auto ranges = equal_count_bins(cases.size(), bins);
  out.bin_edges.push_back(cases.front().fiv);
  for (std::size_t b = 1; b < bins; ++b) {
    const std::size_t cut = ranges[b].first;
    out.bin_edges.push_back(cut == 0 ? cases.front().fiv : 0.5 * (cases[cut - 1].fiv + cases[cut].fiv));
  }
  out.bin_edges.push_back(cases.back().fiv);

  std::vector<std::size_t> totals(folds, 0);
  std::vector<double> sums(folds, 0.0);
  // Highest bin first, largest fiv first, each case to the fold with the
  // smallest fiv sum among those with the fewest cases in this bin and
  // overall. A seeded fold rank breaks remaining ties.
  for (std::size_t b = bins; b-- > 0;) {
    const auto [begin, end] = ranges[b];
    std::vector<std::size_t> rank(folds);
    std::iota(rank.begin(), rank.end(), 0);
    SplitMix64 rng(mix_seed(seed, 0xF01D, b));
    rng.shuffle(std::span<std::size_t>(rank));
    std::vector<std::size_t> in_bin(folds, 0);
    for (std::size_t k = end; k-- > begin;) {
      const auto& c = cases[k];
      const auto key = [&](std::size_t g) { return std::tuple(in_bin[g], totals[g], sums[g], rank[g]); };
      std::size_t best = 0;
      for (std::size_t f = 1; f < folds; ++f)
        if (key(f) < key(best)) best = f;
      out.assignments[c.case_id] = static_cast<int>(best + 1);
      out.bins[c.case_id] = static_cast<int>(b + 1);
      ++in_bin[best];
      ++totals[best];
      sums[best] += c.fiv;
    }
  }
  return out;
}

namespace {

std::vector<const ScoredCase*> sorted_by_dice(const std::vector<ScoredCase>& cases) {
  std::vector<const ScoredCase*> v;
  for (const auto& c : cases) v.push_back(&c);
  std::sort(v.begin(), v.end(), [](const ScoredCase* a, const ScoredCase* b) {
    const double da = a->metrics.mean_dice(), db = b->metrics.mean_dice();
    return da != db ? da < db : a->case_id < b->case_id;
  });
  return v;
}

}  // namespace

std::vector<DiceBin> analyze_dice_bins(const std::vector<ScoredCase>& cases) {
  if (cases.size() < 5) throw DomainError("analyze_dice_bins: need at least 5 scored cases");
  const auto sorted = sorted_by_dice(cases);
  std::vector<DiceBin> out;
  std::size_t b = 0;
  for (const auto& [begin, end] : equal_count_bins(sorted.size(), 5)) {
    DiceBin bin;
    bin.bin = ++b;
    bin.members.assign(sorted.begin() + std::ptrdiff_t(begin), sorted.begin() + std::ptrdiff_t(end));
    bin.dice_lo = bin.members.front()->metrics.mean_dice();
    bin.dice_hi = bin.members.back()->metrics.mean_dice();
    for (const auto* c : bin.members) {
      bin.mean_dice += c->metrics.mean_dice();
      bin.mean_ed += double(c->volumes.ed);
      bin.mean_ncr += double(c->volumes.ncr);
      bin.mean_et += double(c->volumes.et);
    }
    const double n = double(bin.members.size());
    bin.mean_dice /= n;
    bin.mean_ed /= n;
    bin.mean_ncr /= n;
    bin.mean_et /= n;
    out.push_back(std::move(bin));
  }
  return out;
}

std::vector<EtQuintile> et_quintiles_of(std::vector<const ScoredCase*> cases) {
  if (cases.size() < 5) throw DomainError("ET quintiles: need at least 5 cases");
  std::sort(cases.begin(), cases.end(), [](const ScoredCase* a, const ScoredCase* b) {
    return a->volumes.et != b->volumes.et ? a->volumes.et < b->volumes.et : a->case_id < b->case_id;
  });
  std::vector<EtQuintile> out;
  std::size_t q = 0;
  for (const auto& [begin, end] : equal_count_bins(cases.size(), 5)) {
    EtQuintile e;
    e.quintile = ++q;
    e.count = end - begin;
    e.et_lo = double(cases[begin]->volumes.et);
    e.et_hi = double(cases[end - 1]->volumes.et);
    for (std::size_t i = begin; i < end; ++i) {
      e.mean_et += double(cases[i]->volumes.et);
      e.mean_dice += cases[i]->metrics.mean_dice();
      for (int r = 0; r < 3; ++r) e.mean_region_dice[r] += cases[i]->metrics.regions[r].dice;
    }
    const double n = double(e.count);
    e.mean_et /= n;
    e.mean_dice /= n;
    for (auto& d : e.mean_region_dice) d /= n;
    out.push_back(e);
  }
  return out;
}

std::vector<EtQuintile> analyze_et_quintiles(const std::vector<ScoredCase>& cases) {
  const auto bins = analyze_dice_bins(cases);
  if (bins.front().members.size() < 5) {
    throw DomainError("analyze_et_quintiles: the lowest Dice bin holds fewer than 5 cases (need >= 25 scored cases)");
  }
  return et_quintiles_of(bins.front().members);
}

std::vector<MetricsReport> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "case_id,region,dice,hd95,flags")
    throw IoError("metrics csv: missing header");
  std::vector<MetricsReport> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 5) throw IoError("metrics csv: expected 5 fields in '" + line + "'");
    const std::size_t k = row % 3;
    if (k == 0) out.push_back({f[0], {}});
    auto& rep = out.back();
    if (f[0] != rep.case_id || f[1] != kRegions[k].name)
      throw IoError("metrics csv: rows for " + rep.case_id + " out of order");
    auto& s = rep.regions[k];
    s.region = f[1];
    try {
      s.dice = std::stod(f[2]);
      s.hd95 = std::stod(f[3]);
    } catch (const std::exception&) {
      throw IoError("metrics csv: bad number in '" + line + "'");
    }
    s.pred_empty = f[4].find("empty_pred") != std::string::npos;
    s.gt_empty = f[4].find("empty_gt") != std::string::npos;
    ++row;
  }
  if (row % 3) throw IoError("metrics csv: incomplete case " + out.back().case_id);
  return out;
}

void write_dice_bins_csv(std::ostream& out, const std::vector<DiceBin>& bins) {
  out << "bin,count,dice_lo,dice_hi,mean_dice,mean_ed,mean_ncr,mean_et\n";
  char buf[256];
  for (const auto& b : bins) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f,%.6f,%.3f,%.3f,%.3f\n", b.bin, b.members.size(), b.dice_lo,
                  b.dice_hi, b.mean_dice, b.mean_ed, b.mean_ncr, b.mean_et);
    out << buf;
  }
}

void write_et_quintiles_csv(std::ostream& out, const std::vector<EtQuintile>& q) {
  out << "quintile,count,et_lo,et_hi,mean_et,mean_dice,dice_wt,dice_tc,dice_et\n";
  char buf[256];
  for (const auto& e : q) {
    std::snprintf(buf, sizeof buf, "Q%zu,%zu,%.0f,%.0f,%.3f,%.6f,%.6f,%.6f,%.6f\n", e.quintile, e.count, e.et_lo,
                  e.et_hi, e.mean_et, e.mean_dice, e.mean_region_dice[0], e.mean_region_dice[1], e.mean_region_dice[2]);
    out << buf;
  }
}

}  // namespace drbd
