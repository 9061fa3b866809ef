#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ecw/common.hpp"
#include "ecw/network.hpp"
#include "ecw/rng.hpp"

namespace ecw {

// Checkpoint file layout:
//   "ECNW1"                          5-byte ASCII magic (4 id chars + version)
//   u32 LE header length
//   UTF-8 JSON header                {"spec": ..., "metadata": ...}
//   float32 LE weight blobs          per weighted layer: weights, then bias
//   u32 LE CRC-32 of the weight section
//
// Weights are stored exactly as held in memory, so a save/load round trip
// reproduces bit-identical forward outputs.

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  char b[4];
  b[0] = char(v & 0xff);
  b[1] = char((v >> 8) & 0xff);
  b[2] = char((v >> 16) & 0xff);
  b[3] = char((v >> 24) & 0xff);
  out.append(b, 4);
}

inline uint32_t get_u32(const std::string& s, size_t off) {
  return uint32_t(uint8_t(s[off])) | uint32_t(uint8_t(s[off + 1])) << 8 |
         uint32_t(uint8_t(s[off + 2])) << 16 | uint32_t(uint8_t(s[off + 3])) << 24;
}

static_assert(sizeof(float) == 4, "checkpoint format requires 32-bit float");

inline void put_floats(std::string& out, const float* p, size_t n) {
  // Little-endian hosts only; the workbench targets x86-64/aarch64.
  out.append(reinterpret_cast<const char*>(p), n * 4);
}

}  // namespace detail

inline constexpr char kCheckpointMagic[5] = {'E', 'C', 'N', 'W', '1'};

inline std::string serialize_checkpoint(const Network<float>& net,
                                        const nlohmann::json& metadata) {
  nlohmann::json header;
  header["spec"] = net.spec();
  header["metadata"] = metadata;
  const std::string header_str = header.dump();

  std::string weight_blob;
  for (const auto& p : net.params()) {
    detail::put_floats(weight_blob, p.weights.data.data(), p.weights.data.size());
    detail::put_floats(weight_blob, p.bias.data(), p.bias.size());
  }

  std::string out;
  out.append(kCheckpointMagic, 5);
  detail::put_u32(out, static_cast<uint32_t>(header_str.size()));
  out += header_str;
  out += weight_blob;
  detail::put_u32(out, crc32(weight_blob.data(), weight_blob.size()));
  return out;
}

inline void save_checkpoint(const Network<float>& net, const std::filesystem::path& path,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  const std::string bytes = serialize_checkpoint(net, metadata);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoFailure("cannot open checkpoint for writing: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoFailure("short write on checkpoint: " + path.string());
}

struct LoadedCheckpoint {
  Network<float> network;
  nlohmann::json metadata;
};

inline LoadedCheckpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 9) throw CorruptCheckpoint("checkpoint shorter than fixed header");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CorruptCheckpoint("bad magic");
  if (bytes[4] != kCheckpointMagic[4])
    throw VersionMismatch(std::string("unsupported checkpoint version '") + bytes[4] + "'");

  const uint32_t header_len = detail::get_u32(bytes, 5);
  if (bytes.size() < 9 + size_t(header_len))
    throw CorruptCheckpoint("truncated header section");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(9, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("unparseable header: ") + e.what());
  }

  NetworkSpec spec;
  nlohmann::json metadata;
  try {
    spec = header.at("spec").get<NetworkSpec>();
    metadata = header.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("bad header fields: ") + e.what());
  }

  Network<float> net(spec, 0);
  size_t expected = 0;
  for (const auto& p : net.params()) expected += (p.weights.data.size() + p.bias.size()) * 4;

  const size_t blob_off = 9 + header_len;
  if (bytes.size() != blob_off + expected + 4)
    throw CorruptCheckpoint("weight section length mismatch: have " +
                            std::to_string(bytes.size() - blob_off) + " bytes, expected " +
                            std::to_string(expected + 4));

  const uint32_t stored_crc = detail::get_u32(bytes, blob_off + expected);
  if (crc32(bytes.data() + blob_off, expected) != stored_crc)
    throw CorruptCheckpoint("weight section CRC mismatch");

  size_t off = blob_off;
  auto read_floats = [&](float* dst, size_t n) {
    std::memcpy(dst, bytes.data() + off, n * 4);
    off += n * 4;
  };
  for (auto& p : net.params()) {
    read_floats(p.weights.data.data(), p.weights.data.size());
    read_floats(p.bias.data(), p.bias.size());
  }
  return {std::move(net), std::move(metadata)};
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open checkpoint: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace ecw
