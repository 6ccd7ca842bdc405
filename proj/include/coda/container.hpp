#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "coda/errors.hpp"

// Shared on-disk container: magic "CODA", version byte 0x01, u32
// little-endian JSON-header length, UTF-8 JSON header, then concatenated
// float64 little-endian payload blocks (row-major) in header order.

namespace coda::io {

inline constexpr char kMagic[4] = {'C', 'O', 'D', 'A'};
inline constexpr std::uint8_t kVersion = 0x01;

struct Container {
  nlohmann::json header;
  std::vector<std::vector<double>> blocks;
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

[[nodiscard]] inline std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

[[nodiscard]] inline double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

/// Serialize to the exact byte layout (suitable for hashing before write).
[[nodiscard]] inline std::string encode(const Container& c) {
  std::string out;
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  const std::string header = c.header.dump();
  detail::put_u32_le(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto& block : c.blocks) {
    for (double v : block) detail::put_f64_le(out, v);
  }
  return out;
}

[[nodiscard]] inline Container decode(const std::string& bytes) {
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("container: bad magic");
  }
  const auto version = static_cast<std::uint8_t>(bytes[4]);
  if (version != kVersion) {
    throw FormatError("container: unsupported version " + std::to_string(version));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t header_len = detail::get_u32_le(p + 5);
  if (bytes.size() < 9 + static_cast<std::size_t>(header_len)) {
    throw FormatError("container: truncated header");
  }
  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(9, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: invalid JSON header: ") + e.what());
  }
  const std::size_t payload_off = 9 + header_len;
  const std::size_t payload_bytes = bytes.size() - payload_off;
  if (payload_bytes % 8 != 0) throw FormatError("container: payload not 8-byte aligned");
  std::vector<double> payload(payload_bytes / 8);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    payload[i] = detail::get_f64_le(p + payload_off + 8 * i);
  }
  c.blocks.push_back(std::move(payload));
  return c;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write failed: " + path.string());
}

[[nodiscard]] inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

/// FNV-1a 64-bit over raw bytes; the run manifests' content hash.
[[nodiscard]] inline std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace coda::io
