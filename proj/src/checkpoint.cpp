#include "frtpad/checkpoint.hpp"

#include <limits>

#include "byteio.hpp"
#include "frtpad/container.hpp"

namespace frtpad {

namespace {

constexpr std::string_view kMagic = "FPRM";

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& config, const ParamSet& params) {
  io::Writer w;
  w.bytes(kMagic);
  w.u16(kCheckpointVersion);
  const std::string cfg = to_json(config).dump();
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::invalid_argument("parameter name too long: " + e.name.substr(0, 32) + "...");
    }
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name);
    w.u8(e.trainable ? 1 : 0);
    w.u8(static_cast<std::uint8_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(e.value.data());
  }
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size(), "magic") != kMagic) {
    throw FormatError(FormatError::Kind::kBadMagic, 0, "expected \"FPRM\"");
  }
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch, 4,
                      "checkpoint version " + std::to_string(version) + ", reader supports " +
                          std::to_string(kCheckpointVersion));
  }
  const std::size_t cfg_at = r.position();
  const std::string cfg = r.bytes(r.u32("config length"), "config JSON");
  json j;
  try {
    j = json::parse(cfg);
  } catch (const json::parse_error& e) {
    throw FormatError(FormatError::Kind::kInvalidField, cfg_at, std::string("config JSON: ") + e.what());
  }
  Checkpoint c;
  c.config = model_config_from_json(j, "checkpoint.config");

  const std::uint32_t count = r.u32("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.position();
    std::string name = r.bytes(r.u16("name length"), "name");
    const std::uint8_t trainable = r.u8("trainable flag");
    const std::uint8_t rank = r.u8("rank");
    if (rank == 0 || trainable > 1) {
      throw FormatError(FormatError::Kind::kInvalidField, at, "entry " + name + " has rank 0 or a bad flag");
    }
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const std::uint32_t d = r.u32("dim");
      if (d == 0) throw FormatError(FormatError::Kind::kInvalidField, at, "entry " + name + " has a zero dim");
      shape.push_back(d);
      numel *= d;
      if (numel * 4 > r.remaining()) {
        throw FormatError(FormatError::Kind::kTruncated, r.position(),
                          "entry " + name + " declares more data than the file holds");
      }
    }
    std::vector<float> data(static_cast<std::size_t>(numel));
    r.f32s(data, "parameter data");
    try {
      c.params.add(std::move(name), Tensor(std::move(shape), std::move(data)), trainable == 1);
    } catch (const std::invalid_argument& e) {
      throw FormatError(FormatError::Kind::kInvalidField, at, e.what());
    }
  }
  r.expect_end();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ParamSet& params) {
  write_file_bytes(path, encode_checkpoint(config, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace frtpad
