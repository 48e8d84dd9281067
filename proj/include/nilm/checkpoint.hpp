#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nilm/errors.hpp"
#include "nilm/rng.hpp"
#include "nilm/tensor.hpp"

// Checkpoint container: a JSON config blob plus named raw tensors.
//
// On-disk layout (all integers little-endian; see docs/FORMATS.md):
//
//   offset  size  field
//   0       8     magic "NILMCKPT"
//   8       4     u32 format version (currently 1)
//   12      4     u32 flags (reserved, 0)
//   16      8     u64 config length N
//   24      N     config JSON, UTF-8
//   24+N    4     u32 tensor count
//   then per tensor:
//           4     u32 name length M
//           M     name bytes
//           1     u8 dtype (0 = float32, 1 = float64)
//           4     u32 rank R
//           8*R   u64 extents
//           8     u64 payload byte count
//           ...   raw values, little-endian
//
// Values are written verbatim from memory, so save -> load round trips are
// bit-identical for matching dtypes.

namespace nilm {

static_assert(std::endian::native == std::endian::little,
              "the on-disk formats are little-endian; porting to a "
              "big-endian host needs byte swaps in checkpoint.hpp/shards.hpp");

constexpr char kCheckpointMagic[8] = {'N', 'I', 'L', 'M',
                                      'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

template <typename S>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() {
  return Dtype::f32;
}
template <>
constexpr Dtype dtype_of<double>() {
  return Dtype::f64;
}

inline std::size_t dtype_size(Dtype d) {
  return d == Dtype::f32 ? 4 : 8;
}

struct CheckpointEntry {
  std::string name;
  Dtype dtype = Dtype::f32;
  Shape shape;
  std::vector<unsigned char> raw;

  std::size_t numel() const { return shape_numel(shape); }

  template <typename S>
  static CheckpointEntry from_tensor(std::string name, const Tensor<S>& t) {
    CheckpointEntry e;
    e.name = std::move(name);
    e.dtype = dtype_of<S>();
    e.shape = t.shape();
    e.raw.resize(t.size() * sizeof(S));
    std::memcpy(e.raw.data(), t.data(), e.raw.size());
    return e;
  }

  // Copies values into an existing tensor; shapes must agree, the dtype is
  // converted when it differs from S.
  template <typename S>
  void copy_into(Tensor<S>& dst) const {
    if (dst.shape() != shape) {
      throw ShapeError("checkpoint: tensor \"" + name + "\" has shape " +
                       shape_str(shape) + " but the model expects " +
                       shape_str(dst.shape()));
    }
    if (dtype == dtype_of<S>()) {
      std::memcpy(dst.data(), raw.data(), raw.size());
      return;
    }
    const std::size_t n = numel();
    if (dtype == Dtype::f32) {
      const float* src = reinterpret_cast<const float*>(raw.data());
      for (std::size_t i = 0; i < n; ++i) dst.data()[i] = static_cast<S>(src[i]);
    } else {
      const double* src = reinterpret_cast<const double*>(raw.data());
      for (std::size_t i = 0; i < n; ++i) dst.data()[i] = static_cast<S>(src[i]);
    }
  }
};

struct Checkpoint {
  nlohmann::json config;
  std::vector<CheckpointEntry> tensors;

  std::size_t total_parameters() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
  }

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

// Stable digest of a JSON document (order-independent via canonical dump).
inline std::uint64_t json_digest(const nlohmann::json& j) {
  return fnv1a64(j.dump());
}

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw IoError(path + ": truncated while reading " + std::string(what));
  }
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path + ": cannot open for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod(os, kCheckpointVersion);
  detail::write_pod(os, std::uint32_t{0});
  const std::string cfg = ck.config.dump();
  detail::write_pod(os, static_cast<std::uint64_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  detail::write_pod(os, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    detail::write_pod(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_pod(os, static_cast<std::uint8_t>(t.dtype));
    detail::write_pod(os, static_cast<std::uint32_t>(t.shape.size()));
    for (const std::size_t d : t.shape) {
      detail::write_pod(os, static_cast<std::uint64_t>(d));
    }
    detail::write_pod(os, static_cast<std::uint64_t>(t.raw.size()));
    os.write(reinterpret_cast<const char*>(t.raw.data()),
             static_cast<std::streamsize>(t.raw.size()));
  }
  if (!os) throw IoError(path + ": write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path + ": cannot open for reading");
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw IoError(path + ": not a checkpoint file (bad magic)");
  }
  const auto version = detail::read_pod<std::uint32_t>(is, path, "version");
  if (version != kCheckpointVersion) {
    throw IoError(path + ": unsupported checkpoint version " +
                  std::to_string(version));
  }
  detail::read_pod<std::uint32_t>(is, path, "flags");
  const auto cfg_len = detail::read_pod<std::uint64_t>(is, path, "config len");
  std::string cfg(cfg_len, '\0');
  if (!is.read(cfg.data(), static_cast<std::streamsize>(cfg_len))) {
    throw IoError(path + ": truncated while reading config");
  }
  Checkpoint ck;
  try {
    ck.config = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": config is not valid json: " + e.what());
  }
  const auto count = detail::read_pod<std::uint32_t>(is, path, "tensor count");
  ck.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name_len =
        detail::read_pod<std::uint32_t>(is, path, "tensor name length");
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len)) {
      throw IoError(path + ": truncated while reading tensor name");
    }
    const auto dtype = detail::read_pod<std::uint8_t>(is, path, "dtype");
    if (dtype > 1) {
      throw IoError(path + ": tensor \"" + e.name + "\" has unknown dtype " +
                    std::to_string(dtype));
    }
    e.dtype = static_cast<Dtype>(dtype);
    const auto rank = detail::read_pod<std::uint32_t>(is, path, "rank");
    e.shape.resize(rank);
    for (auto& d : e.shape) {
      d = static_cast<std::size_t>(
          detail::read_pod<std::uint64_t>(is, path, "extent"));
    }
    const auto bytes = detail::read_pod<std::uint64_t>(is, path, "payload");
    if (bytes != e.numel() * dtype_size(e.dtype)) {
      throw IoError(path + ": tensor \"" + e.name +
                    "\" payload size disagrees with its shape");
    }
    e.raw.resize(bytes);
    if (!is.read(reinterpret_cast<char*>(e.raw.data()),
                 static_cast<std::streamsize>(bytes))) {
      throw IoError(path + ": truncated while reading tensor values");
    }
    ck.tensors.push_back(std::move(e));
  }
  return ck;
}

// ---------------------------------------------------------------------------
// model <-> checkpoint glue (any model exposing named_parameters + config)

template <typename S, typename Model>
Checkpoint make_checkpoint(const Model& model,
                           nlohmann::json meta = nlohmann::json()) {
  Checkpoint ck;
  ck.config["model"] = model.config().to_json();
  if (!meta.is_null()) ck.config["meta"] = std::move(meta);
  for (const auto& [name, t] : model.named_parameters()) {
    ck.tensors.push_back(CheckpointEntry::from_tensor<S>(name, t));
  }
  return ck;
}

// Order-sensitive digest over all parameter bytes; lets tests assert that a
// code path (e.g. evaluation) left the parameters untouched.
template <typename S, typename Model>
std::uint64_t parameters_digest(const Model& model) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, t] : model.named_parameters()) {
    h = fnv1a64(name, h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(t.data()),
                                 t.size() * sizeof(S)),
                h);
  }
  return h;
}

template <typename S, typename Model>
void load_into_model(const Checkpoint& ck, Model& model) {
  const auto named = model.named_parameters();
  if (named.size() != ck.tensors.size()) {
    throw IoError("checkpoint: holds " + std::to_string(ck.tensors.size()) +
                  " tensors but the model has " +
                  std::to_string(named.size()));
  }
  for (auto& [name, t] : named) {
    const CheckpointEntry* e = ck.find(name);
    if (e == nullptr) {
      throw IoError("checkpoint: missing tensor \"" + name + "\"");
    }
    Tensor<S> dst = t;
    e->copy_into(dst);
  }
}

}  // namespace nilm
