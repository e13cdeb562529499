#include "drbd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace drbd {

namespace {

template <class U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw IoError(std::string("checkpoint truncated while reading ") + what);
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  std::string out = "DRBD";
  put<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& e : entries) {
    if (e.values.size() != numel(e.shape)) throw ShapeError("checkpoint entry " + e.name + ": size mismatch");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put<std::uint64_t>(out, d);
    put<std::uint64_t>(out, e.values.size());
    for (float v : e.values) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
  if (r.take(4, "magic") != "DRBD") throw IoError(path.string() + ": not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw IoError(path.string() + ": unsupported version " + std::to_string(version));
  std::vector<CheckpointEntry> entries;
  while (!r.done()) {
    CheckpointEntry e;
    e.name = r.take(r.get<std::uint32_t>("name length"), "name");
    const auto rank = r.get<std::uint32_t>("rank");
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(r.get<std::uint64_t>("shape"));
    const auto count = r.get<std::uint64_t>("value count");
    if (count != numel(e.shape)) throw IoError(path.string() + ": entry " + e.name + " has inconsistent size");
    if (count > r.remaining() / sizeof(float)) throw IoError("checkpoint truncated while reading values");
    e.values.resize(count);
    for (auto& v : e.values) v = std::bit_cast<float>(r.get<std::uint32_t>("values"));
    entries.push_back(std::move(e));
  }
  return entries;
}

const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw IoError("checkpoint has no entry " + name);
}

}  // namespace drbd
