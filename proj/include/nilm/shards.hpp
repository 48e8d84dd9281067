#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nilm/checkpoint.hpp"
#include "nilm/errors.hpp"
#include "nilm/sampling.hpp"

// Sample shard files: the binary exchange format between `prepare` and
// `train`/`evaluate`.
//
// On-disk layout (little-endian; see docs/FORMATS.md):
//
//   offset  size  field
//   0       8     magic "NILMSHRD"
//   8       4     u32 format version (currently 1)
//   12      4     u32 flags (reserved, 0)
//   16      8     u64 master seed the records were generated under
//   24      8     u64 record count
//   then per record:
//           4     u32 window length L
//           4*L   f32 normalized aggregate
//           4*L   f32 normalized appliance target
//           4     f32 scale (watts)
//           1     u8 role (0 = train, 1 = test)
//           1     u8 kind (0 = positive, 1 = negative)
//
// Values are stored at float32 precision (the training precision); the
// in-memory SamplePair keeps doubles and quantizes on write.

namespace nilm {

constexpr char kShardMagic[8] = {'N', 'I', 'L', 'M', 'S', 'H', 'R', 'D'};
constexpr std::uint32_t kShardVersion = 1;

struct ShardFile {
  std::uint64_t seed = 0;
  std::vector<SamplePair> records;
};

inline void write_shards(const std::string& path,
                         const std::vector<SamplePair>& records,
                         std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path + ": cannot open for writing");
  os.write(kShardMagic, sizeof(kShardMagic));
  detail::write_pod(os, kShardVersion);
  detail::write_pod(os, std::uint32_t{0});
  detail::write_pod(os, seed);
  detail::write_pod(os, static_cast<std::uint64_t>(records.size()));
  std::vector<float> buffer;
  for (const auto& r : records) {
    const auto L = static_cast<std::uint32_t>(r.window_length());
    if (r.appliance.size() != L) {
      throw ShapeError(path + ": pair has mismatched window lengths");
    }
    detail::write_pod(os, L);
    buffer.resize(L);
    for (std::uint32_t i = 0; i < L; ++i) {
      buffer[i] = static_cast<float>(r.aggregate[i]);
    }
    os.write(reinterpret_cast<const char*>(buffer.data()),
             static_cast<std::streamsize>(sizeof(float) * L));
    for (std::uint32_t i = 0; i < L; ++i) {
      buffer[i] = static_cast<float>(r.appliance[i]);
    }
    os.write(reinterpret_cast<const char*>(buffer.data()),
             static_cast<std::streamsize>(sizeof(float) * L));
    detail::write_pod(os, static_cast<float>(r.scale_watts));
    detail::write_pod(os, static_cast<std::uint8_t>(r.role));
    detail::write_pod(os, static_cast<std::uint8_t>(r.kind));
  }
  if (!os) throw IoError(path + ": write failed");
}

inline ShardFile read_shards(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path + ": cannot open for reading");
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kShardMagic, 8) != 0) {
    throw IoError(path + ": not a shard file (bad magic)");
  }
  const auto version = detail::read_pod<std::uint32_t>(is, path, "version");
  if (version != kShardVersion) {
    throw IoError(path + ": unsupported shard version " +
                  std::to_string(version));
  }
  detail::read_pod<std::uint32_t>(is, path, "flags");
  ShardFile out;
  out.seed = detail::read_pod<std::uint64_t>(is, path, "seed");
  const auto count = detail::read_pod<std::uint64_t>(is, path, "record count");
  out.records.reserve(count);
  std::vector<float> buffer;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto L = detail::read_pod<std::uint32_t>(is, path, "window length");
    SamplePair r;
    buffer.resize(L);
    if (!is.read(reinterpret_cast<char*>(buffer.data()),
                 static_cast<std::streamsize>(sizeof(float) * L))) {
      throw IoError(path + ": truncated aggregate in record " +
                    std::to_string(i));
    }
    r.aggregate.assign(buffer.begin(), buffer.end());
    if (!is.read(reinterpret_cast<char*>(buffer.data()),
                 static_cast<std::streamsize>(sizeof(float) * L))) {
      throw IoError(path + ": truncated target in record " +
                    std::to_string(i));
    }
    r.appliance.assign(buffer.begin(), buffer.end());
    r.scale_watts = detail::read_pod<float>(is, path, "scale");
    r.role = static_cast<SampleRole>(
        detail::read_pod<std::uint8_t>(is, path, "role"));
    r.kind = static_cast<SampleKind>(
        detail::read_pod<std::uint8_t>(is, path, "kind"));
    out.records.push_back(std::move(r));
  }
  return out;
}

}  // namespace nilm
