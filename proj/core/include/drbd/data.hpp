#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "drbd/checkpoint.hpp"
#include "drbd/metrics.hpp"
#include "drbd/train.hpp"

namespace drbd {

// ---------------------------------------------------------------- volumes

enum class Dtype { f32, u8 };

/// Single-channel 3D volume. Exactly one of f32/u8 holds the voxels,
/// row-major with z fastest.
struct Volume {
  Dims3 dims{};
  Dtype dtype = Dtype::f32;
  Spacing spacing{1.0, 1.0, 1.0};
  std::string modality;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;
};

/// File layout: a one-line JSON header
///   {"magic":"DRBDVOL","version":1,"dims":[X,Y,Z],"dtype":"f32"|"u8",
///    "spacing":[sx,sy,sz],"modality":"..."}
/// followed by '\n', a NUL byte and the raw little-endian voxel buffer.
/// Throws IoError on a bad header or a buffer of the wrong length.
void write_volume(const std::filesystem::path& path, const Volume& v);
Volume read_volume(const std::filesystem::path& path);

// ------------------------------------------------------------------ cases

inline constexpr std::array<const char*, 4> kModalities{"T1", "T1ce", "T2", "FLAIR"};

struct RegionVolumes {
  std::size_t ed = 0;
  std::size_t ncr = 0;
  std::size_t et = 0;
  std::size_t wt() const { return ed + ncr + et; }
};

struct CaseRecord {
  std::string case_id;
  Dims3 dims{};
  Spacing spacing{1.0, 1.0, 1.0};
  std::array<std::vector<float>, 4> modalities;
  std::vector<std::uint8_t> labels;
  double fiv = 0.0;
  RegionVolumes volumes;

  std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }
};

/// Checks shapes and label values; throws ShapeError / DomainError.
void validate_case(const CaseRecord& c);
RegionVolumes region_volumes(std::span<const std::uint8_t> labels);

/// Intensities standardised by the mean and standard deviation of the
/// nonzero voxels; zero voxels stay zero. An all-zero input is returned
/// unchanged, a constant brain maps to zero.
std::vector<float> z_normalize(std::span<const float> values);

/// Foreground intensity variation: per modality, z-normalise over the
/// nonzero voxels and take the (population) standard deviation over the
/// WT voxels; average over the four modalities. Throws DomainError when
/// WT is empty.
double compute_fiv(const CaseRecord& c);

/// Recomputes fiv and region volumes in place; fiv is NaN when WT is empty.
void refresh_stats(CaseRecord& c);

/// Network input: the four z-normalised modalities as one sample.
Sample to_sample(const CaseRecord& c);

/// dir/<case_id>/{T1,T1ce,T2,FLAIR,label}.vol plus stats.json.
void write_case(const std::filesystem::path& dir, const CaseRecord& c);
/// Reads one case directory. Throws IoError if the cached stats disagree
/// with a recomputation.
CaseRecord read_case(const std::filesystem::path& case_dir);
/// Every case directory below `dir`, sorted by case id.
std::vector<CaseRecord> read_cases(const std::filesystem::path& dir);

// --------------------------------------------------------------- phantoms

struct PhantomConfig {
  double noise_sigma = 0.02;
  /// Tumour contrast is scaled by a per-seed factor drawn log-uniformly
  /// from [contrast_lo, contrast_hi].
  double contrast_lo = 0.05;
  double contrast_hi = 2.0;
};

/// Synthetic case: an ellipsoidal brain with textured tissue holding an
/// ellipsoidal tumour of three nested shells, NCR core inside an ET rim
/// inside ED. The ET rim is sized by bisection so that |ET| is within 20%
/// of the target (no ET for target 0). Deterministic per seed. Throws
/// DomainError for extents below 16 or an unreachable target.
CaseRecord generate_phantom(std::uint64_t seed, const Dims3& shape, double et_volume_target,
                            const PhantomConfig& cfg = {});

/// Largest |ET| the phantom geometry reaches for this seed and shape.
std::size_t max_et_volume(std::uint64_t seed, const Dims3& shape);

/// ET target for phantom `index` of a sweep: a seeded fraction in
/// [0.1, 0.7] of max_et_volume, so |ET| varies across the sweep.
double sweep_et_target(std::uint64_t seed, const Dims3& shape);

/// Phantoms seed, seed + 1, ..., seed + n - 1 at their sweep ET targets.
std::vector<CaseRecord> phantom_sweep(std::size_t n, std::uint64_t seed, const Dims3& shape,
                                      const PhantomConfig& cfg = {});

/// Stand-in predictor for the analysis study: erodes each foreground
/// label's boundary towards its neighbour label with probability
/// `erode_p`, then relabels `flips` random voxels near the tumour.
std::vector<std::uint8_t> degrade_labels(std::span<const std::uint8_t> labels, const Dims3& dims,
                                         std::uint64_t seed, double erode_p = 0.5, std::size_t flips = 20);

// ------------------------------------------------------------------ folds

struct FoldCase {
  std::string case_id;
  double fiv = 0.0;
};

struct FoldAssignment {
  int version = 1;
  std::uint64_t seed = 0;
  std::size_t folds = 5;
  std::vector<double> bin_edges;             // bins + 1 values
  std::map<std::string, int> assignments;    // case id -> fold 1..folds
  std::map<std::string, int> bins;           // case id -> bin 1..bins

  std::string to_json() const;
  static FoldAssignment from_json(const std::string& text);
};

/// Sorts cases by (fiv, id) and cuts `bins` equal-frequency bins. Bins are
/// dealt from the top, each case (largest fiv first) going to the fold with
/// the lowest running fiv sum among the folds holding the fewest cases of
/// that bin and overall; a seeded per-bin fold rank breaks ties. Per-(fold,
/// bin) counts and fold totals differ by at most one.
FoldAssignment build_systematic_folds(std::vector<FoldCase> cases, std::uint64_t seed, std::size_t folds = 5,
                                      std::size_t bins = 5);

// --------------------------------------------------------------- analyses

struct ScoredCase {
  std::string case_id;
  MetricsReport metrics;
  RegionVolumes volumes;
};

struct DiceBin {
  std::size_t bin = 0;  // 1-based, lowest Dice first
  std::vector<const ScoredCase*> members;
  double dice_lo = 0.0, dice_hi = 0.0;
  double mean_dice = 0.0;
  double mean_ed = 0.0, mean_ncr = 0.0, mean_et = 0.0;
};

struct EtQuintile {
  std::size_t quintile = 0;  // 1-based, smallest ET first
  std::size_t count = 0;
  double et_lo = 0.0, et_hi = 0.0, mean_et = 0.0;
  double mean_dice = 0.0;
  std::array<double, 3> mean_region_dice{};  // WT, TC, ET
};

/// `groups` equal-count bins of the index range [0, n): bin b holds
/// [floor(b n / groups), floor((b + 1) n / groups)).
std::vector<std::pair<std::size_t, std::size_t>> equal_count_bins(std::size_t n, std::size_t groups);

/// Cases sorted by mean Dice (ties by case id) in five equal-count bins.
std::vector<DiceBin> analyze_dice_bins(const std::vector<ScoredCase>& cases);
/// The lowest Dice bin split into five equal-count groups by |ET| (ties by
/// case id).
std::vector<EtQuintile> analyze_et_quintiles(const std::vector<ScoredCase>& cases);
/// Same grouping applied to every case instead of the lowest bin only.
std::vector<EtQuintile> et_quintiles_of(std::vector<const ScoredCase*> cases);

/// Parses the output of write_metrics_csv back into reports (three rows
/// per case, WT/TC/ET in order). Throws IoError on malformed input.
std::vector<MetricsReport> read_metrics_csv(std::istream& in);

/// bin,count,dice_lo,dice_hi,mean_dice,mean_ed,mean_ncr,mean_et
void write_dice_bins_csv(std::ostream& out, const std::vector<DiceBin>& bins);
/// quintile,count,et_lo,et_hi,mean_et,mean_dice,dice_wt,dice_tc,dice_et
void write_et_quintiles_csv(std::ostream& out, const std::vector<EtQuintile>& q);

}  // namespace drbd
