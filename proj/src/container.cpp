#include "frtpad/container.hpp"

#include <fstream>
#include <limits>

#include "byteio.hpp"

namespace frtpad {

namespace {

constexpr std::string_view kMagic = "FSTK";

std::string describe(FormatError::Kind kind, std::size_t offset, const std::string& detail) {
  return std::string(to_string(kind)) + " at byte " + std::to_string(offset) + ": " + detail;
}

std::uint16_t checked_u16(std::size_t v, const std::string& what) {
  if (v > std::numeric_limits<std::uint16_t>::max()) {
    throw std::invalid_argument(what + " = " + std::to_string(v) + " does not fit in u16");
  }
  return static_cast<std::uint16_t>(v);
}

void write_dims(io::Writer& w, const Shape& s, const std::string& what) {
  if (s.size() != 3) throw ShapeError(what + " must be [c x h x w], got " + shape_to_string(s));
  for (std::size_t d : s) w.u16(checked_u16(d, what + " dim"));
}

LevelDims read_dims(io::Reader& r, const char* what) {
  const std::size_t at = r.position();
  LevelDims d;
  d.channels = r.u16(what);
  d.height = r.u16(what);
  d.width = r.u16(what);
  if (d.numel() == 0) {
    throw FormatError(FormatError::Kind::kInvalidField, at, std::string(what) + " has a zero dim");
  }
  return d;
}

Tensor read_tensor(io::Reader& r, const LevelDims& d, const char* what) {
  if (d.numel() > r.remaining() / 4) {
    throw FormatError(FormatError::Kind::kTruncated, r.position(),
                      std::string(what) + " needs " + std::to_string(d.numel() * 4) + " bytes, " +
                          std::to_string(r.remaining()) + " remain");
  }
  std::vector<float> data(d.numel());
  r.f32s(data, what);
  return Tensor(d.shape(), std::move(data));
}

}  // namespace

FormatError::FormatError(Kind kind, std::size_t offset, const std::string& detail)
    : std::runtime_error(describe(kind, offset, detail)), kind_(kind), offset_(offset) {}

const char* to_string(FormatError::Kind kind) {
  switch (kind) {
    case FormatError::Kind::kBadMagic: return "bad_magic";
    case FormatError::Kind::kVersionMismatch: return "version_mismatch";
    case FormatError::Kind::kTruncated: return "truncated";
    case FormatError::Kind::kTrailingBytes: return "trailing_bytes";
    case FormatError::Kind::kInvalidField: return "invalid_field";
    case FormatError::Kind::kIo: return "io_error";
  }
  return "unknown";
}

std::vector<std::uint8_t> encode_container(const Dataset& samples) {
  std::vector<LevelDims> levels;
  if (!samples.empty()) levels = samples.front().features.dims();
  return encode_container(samples, levels);
}

std::vector<std::uint8_t> encode_container(std::span<const Sample> samples,
                                           const std::vector<LevelDims>& levels) {
  if (levels.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw std::invalid_argument("container supports at most 255 levels");
  }
  if (samples.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("container supports at most 2^32-1 samples");
  }
  io::Writer w;
  w.bytes(kMagic);
  w.u16(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(samples.size()));
  w.u8(static_cast<std::uint8_t>(levels.size()));
  for (std::size_t i = 0; i < levels.size(); ++i) {
    write_dims(w, levels[i].shape(), "level " + std::to_string(i));
  }
  for (std::size_t j = 0; j < samples.size(); ++j) {
    const Sample& s = samples[j];
    const std::string where = "sample " + std::to_string(j);
    if (s.features.levels.size() != levels.size()) {
      throw ShapeError(where + " has " + std::to_string(s.features.levels.size()) +
                       " levels, container declares " + std::to_string(levels.size()));
    }
    w.u8(static_cast<std::uint8_t>(s.label));
    w.u16(checked_u16(s.dataset_id.size(), where + " dataset_id length"));
    w.bytes(s.dataset_id);
    write_dims(w, s.raw_input.shape(), where + " raw_input");
    w.f32s(s.raw_input.data());
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const Tensor& t = s.features.levels[i];
      if (t.shape() != levels[i].shape()) {
        throw ShapeError(where + " level " + std::to_string(i) + " is " +
                         shape_to_string(t.shape()) + ", container declares " +
                         shape_to_string(levels[i].shape()));
      }
      w.f32s(t.data());
    }
  }
  return std::move(w.buffer());
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size(), "magic") != kMagic) {
    throw FormatError(FormatError::Kind::kBadMagic, 0, "expected \"FSTK\"");
  }
  const std::uint16_t version = r.u16("version");
  if (version != kContainerVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch, 4,
                      "file version " + std::to_string(version) + ", reader supports " +
                          std::to_string(kContainerVersion));
  }
  const std::uint32_t count = r.u32("sample count");
  const std::uint8_t n_levels = r.u8("level count");
  Container c;
  for (std::size_t i = 0; i < n_levels; ++i) c.levels.push_back(read_dims(r, "level dims"));

  // Every record is at least label + id length + raw dims; refuse counts the
  // payload cannot possibly hold before reserving memory for them.
  constexpr std::size_t kMinRecord = 1 + 2 + 6;
  if (static_cast<std::uint64_t>(count) * kMinRecord > r.remaining()) {
    throw FormatError(FormatError::Kind::kTruncated, r.position(),
                      "sample count " + std::to_string(count) + " exceeds the " +
                          std::to_string(r.remaining()) + "-byte payload");
  }
  c.samples.reserve(count);
  for (std::uint32_t j = 0; j < count; ++j) {
    Sample s;
    const std::size_t label_at = r.position();
    const std::uint8_t label = r.u8("label");
    if (label > 1) {
      throw FormatError(FormatError::Kind::kInvalidField, label_at,
                        "label " + std::to_string(label) + " is not 0 or 1");
    }
    s.label = static_cast<Label>(label);
    const std::uint16_t id_len = r.u16("dataset_id length");
    s.dataset_id = r.bytes(id_len, "dataset_id");
    const LevelDims raw = read_dims(r, "raw_input dims");
    s.raw_input = read_tensor(r, raw, "raw_input data");
    s.features.source_tag = "file";
    for (const auto& d : c.levels) s.features.levels.push_back(read_tensor(r, d, "level data"));
    c.samples.push_back(std::move(s));
  }
  r.expect_end();
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, 0, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::kIo, 0, "cannot write " + path.string());
}

void write_container(const std::filesystem::path& path, const Dataset& samples) {
  write_file_bytes(path, encode_container(samples));
}

Container read_container(const std::filesystem::path& path) {
  return decode_container(read_file_bytes(path));
}

ContainerSummary summarize(const Container& c) {
  ContainerSummary s;
  s.samples = c.samples.size();
  s.levels = c.levels;
  for (const auto& x : c.samples) {
    auto& counts = s.per_dataset[x.dataset_id];
    (x.label == Label::kBonafide ? counts.second : counts.first) += 1;
  }
  return s;
}

nlohmann::json container_manifest(const std::string& file_name, const Container& c) {
  const ContainerSummary s = summarize(c);
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& d : s.levels) levels.push_back({d.channels, d.height, d.width});
  nlohmann::json datasets = nlohmann::json::object();
  for (const auto& [id, counts] : s.per_dataset) {
    datasets[id] = {{"attack", counts.first}, {"bonafide", counts.second}};
  }
  nlohmann::json raw = nullptr;
  if (!c.samples.empty()) raw = c.samples.front().raw_input.shape();
  return {{"file", file_name},       {"format", "FSTK"},  {"version", kContainerVersion},
          {"samples", s.samples},    {"levels", levels},  {"raw_dims", raw},
          {"datasets", datasets}};
}

}  // namespace frtpad
