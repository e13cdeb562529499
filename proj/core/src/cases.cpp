#include "drbd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace drbd {

void validate_case(const CaseRecord& c) {
  const std::size_t n = c.voxels();
  if (n == 0) throw ShapeError("case " + c.case_id + ": zero extent");
  for (std::size_t m = 0; m < 4; ++m) {
    if (c.modalities[m].size() != n) throw ShapeError("case " + c.case_id + ": modality " + kModalities[m] + " has the wrong size");
  }
  if (c.labels.size() != n) throw ShapeError("case " + c.case_id + ": label volume has the wrong size");
  for (auto l : c.labels)
    if (l >= kLabelCount) throw DomainError("case " + c.case_id + ": label value " + std::to_string(l) + " is not in 0..3");
}

RegionVolumes region_volumes(std::span<const std::uint8_t> labels) {
  RegionVolumes r;
  for (auto l : labels) {
    if (l == kEd) ++r.ed;
    else if (l == kNcr) ++r.ncr;
    else if (l == kEt) ++r.et;
  }
  return r;
}

std::vector<float> z_normalize(std::span<const float> values) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (float v : values)
    if (v != 0.0f) {
      sum += v;
      ++n;
    }
  std::vector<float> out(values.begin(), values.end());
  if (n == 0) return out;
  const double mean = sum / double(n);
  for (float v : values)
    if (v != 0.0f) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / double(n));
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (values[i] == 0.0f) continue;
    out[i] = sd > 0.0 ? static_cast<float>((values[i] - mean) / sd) : 0.0f;
  }
  return out;
}

double compute_fiv(const CaseRecord& c) {
  validate_case(c);
  std::vector<std::size_t> wt;
  for (std::size_t i = 0; i < c.labels.size(); ++i)
    if (c.labels[i] != kBackground) wt.push_back(i);
  if (wt.empty()) throw DomainError("case " + c.case_id + ": empty whole-tumour region, fiv undefined");
  double total = 0.0;
  for (const auto& modality : c.modalities) {
    const auto z = z_normalize(modality);
    double mean = 0.0;
    for (auto i : wt) mean += z[i];
    mean /= double(wt.size());
    double var = 0.0;
    for (auto i : wt) var += (z[i] - mean) * (z[i] - mean);
    total += std::sqrt(var / double(wt.size()));
  }
  return total / 4.0;
}

void refresh_stats(CaseRecord& c) {
  c.volumes = region_volumes(c.labels);
  c.fiv = c.volumes.wt() > 0 ? compute_fiv(c) : std::nan("");
}

Sample to_sample(const CaseRecord& c) {
  validate_case(c);
  Sample s;
  s.id = c.case_id;
  s.dims = c.dims;
  s.channels = 4;
  s.image.reserve(4 * c.voxels());
  for (const auto& m : c.modalities) {
    const auto z = z_normalize(m);
    s.image.insert(s.image.end(), z.begin(), z.end());
  }
  s.labels = c.labels;
  return s;
}

void write_case(const std::filesystem::path& dir, const CaseRecord& c) {
  validate_case(c);
  const auto case_dir = dir / c.case_id;
  std::error_code ec;
  std::filesystem::create_directories(case_dir, ec);
  if (ec) throw IoError("cannot create " + case_dir.string() + ": " + ec.message());
  for (std::size_t m = 0; m < 4; ++m) {
    Volume v{c.dims, Dtype::f32, c.spacing, kModalities[m], c.modalities[m], {}};
    write_volume(case_dir / (std::string(kModalities[m]) + ".vol"), v);
  }
  write_volume(case_dir / "label.vol", Volume{c.dims, Dtype::u8, c.spacing, "label", {}, c.labels});
  const nlohmann::json stats = {
      {"case_id", c.case_id},
      {"fiv", c.fiv},
      {"volume_ed", c.volumes.ed},
      {"volume_ncr", c.volumes.ncr},
      {"volume_et", c.volumes.et},
  };
  std::ofstream f(case_dir / "stats.json");
  if (!f) throw IoError("cannot write " + (case_dir / "stats.json").string());
  f << stats.dump(2) << '\n';
}

CaseRecord read_case(const std::filesystem::path& case_dir) {
  CaseRecord c;
  c.case_id = case_dir.filename().string();
  for (std::size_t m = 0; m < 4; ++m) {
    auto v = read_volume(case_dir / (std::string(kModalities[m]) + ".vol"));
    if (v.dtype != Dtype::f32) throw IoError(case_dir.string() + ": modality volumes must be f32");
    if (m == 0) {
      c.dims = v.dims;
      c.spacing = v.spacing;
    } else if (v.dims != c.dims) {
      throw IoError(case_dir.string() + ": modality dims disagree");
    }
    c.modalities[m] = std::move(v.f32);
  }
  auto lv = read_volume(case_dir / "label.vol");
  if (lv.dtype != Dtype::u8 || lv.dims != c.dims) throw IoError(case_dir.string() + ": label volume must be u8 with matching dims");
  c.labels = std::move(lv.u8);
  validate_case(c);
  refresh_stats(c);

  const auto stats_path = case_dir / "stats.json";
  if (std::filesystem::exists(stats_path)) {
    std::ifstream f(stats_path);
    std::stringstream ss;
    ss << f.rdbuf();
    try {
      const auto s = nlohmann::json::parse(ss.str());
      const bool same = s.at("volume_ed").get<std::size_t>() == c.volumes.ed &&
                        s.at("volume_ncr").get<std::size_t>() == c.volumes.ncr &&
                        s.at("volume_et").get<std::size_t>() == c.volumes.et &&
                        (s.at("fiv").is_null() ? std::isnan(c.fiv)
                                               : std::abs(s.at("fiv").get<double>() - c.fiv) <=
                                                     1e-9 * std::max(1.0, std::abs(c.fiv)));
      if (!same) throw IoError(case_dir.string() + ": cached stats do not match the volumes");
    } catch (const nlohmann::json::exception& e) {
      throw IoError(stats_path.string() + ": " + e.what());
    }
  }
  return c;
}

std::vector<CaseRecord> read_cases(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory() && std::filesystem::exists(e.path() / "label.vol")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<CaseRecord> out;
  for (const auto& d : dirs) out.push_back(read_case(d));
  return out;
}

}  // namespace drbd
