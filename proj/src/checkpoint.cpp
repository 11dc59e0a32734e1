#include "gzeb/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace gzeb {
namespace {

constexpr char kMagic[4] = {'G', 'Z', 'E', 'B'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const CheckpointEntry> entries) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (shape_size(e.dims) != e.values.size())
      throw UsageError("checkpoint entry '" + e.name + "' payload does not match its dims");
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : e.values) put_f32(out, f);
  }
  return out;
}

std::vector<CheckpointEntry> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (in.text(4, "magic") != std::string(kMagic, 4)) throw FormatError("not a GZEB checkpoint", 0);
  const std::size_t version_at = in.offset();
  const auto version = in.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  const auto count = in.u32("entry count");
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name_len = in.u32("name length");
    e.name = in.text(name_len, "name");
    const std::size_t rank_at = in.offset();
    const auto rank = in.u32("rank");
    if (rank > 8) throw FormatError("implausible rank " + std::to_string(rank) + " for '" + e.name + "'", rank_at);
    for (std::uint32_t r = 0; r < rank; ++r) e.dims.push_back(in.u32("dims"));
    const std::size_t n = shape_size(e.dims);
    in.need(n * 4, "payload");
    e.values.resize(n);
    for (auto& v : e.values) v = in.f32("payload");
    entries.push_back(std::move(e));
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after last checkpoint entry", in.offset());
  return entries;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries) {
  const auto bytes = encode_checkpoint(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

const CheckpointEntry* find_entry(std::span<const CheckpointEntry> entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::vector<CheckpointEntry> snapshot_state(const ParameterSet<float>& params,
                                            std::span<const NamedBuffer<float>> buffers) {
  std::vector<CheckpointEntry> out;
  for (const auto& p : params.all()) {
    const auto& dims = p.value.dims();
    out.push_back({p.name, dims, {p.value.data().begin(), p.value.data().end()}});
    if (!p.adam_m.empty()) out.push_back({p.name + ".m", dims, p.adam_m});
    if (!p.adam_v.empty()) out.push_back({p.name + ".v", dims, p.adam_v});
    if (!p.momentum.empty()) out.push_back({p.name + ".mom", dims, p.momentum});
  }
  for (const auto& b : buffers) out.push_back({b.name, {b.values->size()}, *b.values});
  return out;
}

void restore_state(std::span<const CheckpointEntry> entries, ParameterSet<float>& params,
                   std::span<const NamedBuffer<float>> buffers) {
  auto load = [&](const std::string& name, const Shape& dims, std::vector<float>& dst, bool required) {
    const auto* e = find_entry(entries, name);
    if (!e) {
      if (required) throw DataError("checkpoint is missing entry '" + name + "'");
      dst.clear();
      return;
    }
    if (e->dims != dims)
      throw DataError("checkpoint entry '" + name + "' has dims " + shape_string(e->dims) +
                      ", model expects " + shape_string(dims));
    dst = e->values;
  };
  for (auto& p : params.all()) {
    std::vector<float> value;
    load(p.name, p.value.dims(), value, true);
    std::copy(value.begin(), value.end(), p.value.data().begin());
    load(p.name + ".m", p.value.dims(), p.adam_m, false);
    load(p.name + ".v", p.value.dims(), p.adam_v, false);
    load(p.name + ".mom", p.value.dims(), p.momentum, false);
  }
  for (const auto& b : buffers) load(b.name, {b.values->size()}, *b.values, true);
}

}  // namespace gzeb
