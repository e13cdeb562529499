#include "drbd/data.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

namespace drbd {

namespace {

constexpr const char* kVolumeMagic = "DRBDVOL";
constexpr int kVolumeVersion = 1;

std::size_t voxel_count(const Dims3& d) { return d[0] * d[1] * d[2]; }

}  // namespace

void write_volume(const std::filesystem::path& path, const Volume& v) {
  const std::size_t n = voxel_count(v.dims);
  const std::size_t have = v.dtype == Dtype::f32 ? v.f32.size() : v.u8.size();
  if (have != n) throw ShapeError("write_volume: buffer holds " + std::to_string(have) + " voxels, dims need " + std::to_string(n));
  const nlohmann::json header = {
      {"magic", kVolumeMagic},
      {"version", kVolumeVersion},
      {"dims", v.dims},
      {"dtype", v.dtype == Dtype::f32 ? "f32" : "u8"},
      {"spacing", v.spacing},
      {"modality", v.modality},
  };
  std::string out = header.dump();
  out.push_back('\n');
  out.push_back('\0');
  if (v.dtype == Dtype::f32) {
    out.reserve(out.size() + 4 * n);
    for (float f : v.f32) {
      const auto u = std::bit_cast<std::uint32_t>(f);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
    }
  } else {
    out.append(reinterpret_cast<const char*>(v.u8.data()), n);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::string bytes(std::istreambuf_iterator<char>(f), {});
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos || nl + 1 >= bytes.size() || bytes[nl + 1] != '\0') {
    throw IoError(path.string() + ": missing volume header terminator");
  }
  Volume v;
  try {
    const auto h = nlohmann::json::parse(bytes.substr(0, nl));
    if (h.at("magic").get<std::string>() != kVolumeMagic) throw IoError(path.string() + ": bad magic");
    if (h.at("version").get<int>() != kVolumeVersion) throw IoError(path.string() + ": unsupported version");
    v.dims = h.at("dims").get<Dims3>();
    v.spacing = h.at("spacing").get<Spacing>();
    v.modality = h.at("modality").get<std::string>();
    const auto dtype = h.at("dtype").get<std::string>();
    if (dtype == "f32") v.dtype = Dtype::f32;
    else if (dtype == "u8") v.dtype = Dtype::u8;
    else throw IoError(path.string() + ": unknown dtype " + dtype);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed header (" + e.what() + ")");
  }
  const std::size_t n = voxel_count(v.dims);
  const std::size_t width = v.dtype == Dtype::f32 ? 4 : 1;
  const std::size_t offset = nl + 2;
  if (n == 0) throw IoError(path.string() + ": zero extent");
  if (bytes.size() - offset != n * width) {
    throw IoError(path.string() + ": expected " + std::to_string(n * width) + " data bytes, found " +
                  std::to_string(bytes.size() - offset));
  }
  if (v.dtype == Dtype::f32) {
    v.f32.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u = 0;
      for (std::size_t b = 0; b < 4; ++b) u |= std::uint32_t(static_cast<unsigned char>(bytes[offset + 4 * i + b])) << (8 * b);
      v.f32[i] = std::bit_cast<float>(u);
    }
  } else {
    v.u8.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  }
  return v;
}

}  // namespace drbd
