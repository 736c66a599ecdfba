#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "unik/error.hpp"
#include "unik/net.hpp"
#include "unik/tensor.hpp"

namespace unik {

// Checkpoint file layout (all integers little-endian):
//   magic "UNIK" | u32 version | u32 fingerprint | u32 tensor count
//   per tensor:  u32 name length | name bytes | u8 rank | u32 extents...
//                | f32 values...
//   trailer:     u32 epoch | u64 rng seed
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::ostream& out, float f) {
  std::uint32_t v;
  static_assert(sizeof(v) == sizeof(f));
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw checkpoint_error(checkpoint_error::kind::corrupt, "checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& in) {
  std::uint64_t lo = get_u32(in);
  std::uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

inline float get_f32(std::istream& in) {
  std::uint32_t v = get_u32(in);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace ckpt_detail

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointData {
  std::uint32_t version = kCheckpointVersion;
  std::uint32_t fingerprint = 0;
  std::uint32_t epoch = 0;
  std::uint64_t seed = 0;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

template <typename T>
void save_checkpoint(Network<T>& net, const std::string& path, std::uint32_t epoch = 0,
                     std::uint64_t seed = 0) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw checkpoint_error(checkpoint_error::kind::io, "checkpoint: cannot write " + path);
  out.write("UNIK", 4);
  ckpt_detail::put_u32(out, kCheckpointVersion);
  ckpt_detail::put_u32(out, net.fingerprint());
  auto state = net.state();
  ckpt_detail::put_u32(out, static_cast<std::uint32_t>(state.size()));
  for (const NamedBuf<T>& buf : state) {
    ckpt_detail::put_u32(out, static_cast<std::uint32_t>(buf.name.size()));
    out.write(buf.name.data(), static_cast<std::streamsize>(buf.name.size()));
    out.put(static_cast<char>(buf.shape.size()));
    for (std::size_t e : buf.shape) ckpt_detail::put_u32(out, static_cast<std::uint32_t>(e));
    for (T v : *buf.data) ckpt_detail::put_f32(out, static_cast<float>(v));
  }
  ckpt_detail::put_u32(out, epoch);
  ckpt_detail::put_u64(out, seed);
  if (!out) throw checkpoint_error(checkpoint_error::kind::io, "checkpoint: write failed: " + path);
}

inline CheckpointData read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw checkpoint_error(checkpoint_error::kind::io, "checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "UNIK")
    throw checkpoint_error(checkpoint_error::kind::bad_magic,
                           "checkpoint " + path + ": bad magic bytes");
  CheckpointData data;
  data.version = ckpt_detail::get_u32(in);
  if (data.version != kCheckpointVersion)
    throw checkpoint_error(checkpoint_error::kind::bad_version,
                           "checkpoint " + path + ": unsupported version " +
                               std::to_string(data.version));
  data.fingerprint = ckpt_detail::get_u32(in);
  std::uint32_t count = ckpt_detail::get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    std::uint32_t name_len = ckpt_detail::get_u32(in);
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    int rank = in.get();
    if (!in || rank < 0)
      throw checkpoint_error(checkpoint_error::kind::corrupt, "checkpoint: truncated file");
    std::size_t numel = 1;
    for (int r = 0; r < rank; ++r) {
      std::size_t e = ckpt_detail::get_u32(in);
      t.shape.push_back(e);
      numel *= e;
    }
    t.values.reserve(numel);
    for (std::size_t k = 0; k < numel; ++k) t.values.push_back(ckpt_detail::get_f32(in));
    data.tensors.push_back(std::move(t));
  }
  data.epoch = ckpt_detail::get_u32(in);
  data.seed = ckpt_detail::get_u64(in);
  return data;
}

// Full restore: fingerprint must match, every state tensor must be present
// with its exact shape.
template <typename T>
CheckpointData load_checkpoint(Network<T>& net, const std::string& path) {
  CheckpointData data = read_checkpoint_file(path);
  if (data.fingerprint != net.fingerprint())
    throw checkpoint_error(checkpoint_error::kind::bad_fingerprint,
                           "checkpoint " + path + ": architecture fingerprint mismatch");
  for (NamedBuf<T>& buf : net.state()) {
    const CheckpointTensor* t = data.find(buf.name);
    if (!t)
      throw checkpoint_error(checkpoint_error::kind::tensor_mismatch,
                             "checkpoint " + path + ": missing tensor '" + buf.name + "'");
    if (t->shape != buf.shape)
      throw checkpoint_error(checkpoint_error::kind::tensor_mismatch,
                             "checkpoint " + path + ": tensor '" + buf.name + "' has shape " +
                                 shape_str(t->shape) + ", expected " + shape_str(buf.shape));
    for (std::size_t i = 0; i < t->values.size(); ++i)
      (*buf.data)[i] = static_cast<T>(t->values[i]);
  }
  return data;
}

enum class RestorePolicy { backbone_only, full };

struct RestoreReport {
  std::vector<std::string> restored;
  std::vector<std::string> fresh;
};

// Transfer-learning restore. backbone_only tolerates a different classifier
// (e.g. a new class count): backbone tensors must match exactly, classifier
// tensors are restored only when shapes agree and are left at their fresh
// initialization otherwise.
template <typename T>
RestoreReport load_pretrained_partial(Network<T>& net, const std::string& path,
                                      RestorePolicy policy) {
  RestoreReport report;
  if (policy == RestorePolicy::full) {
    load_checkpoint(net, path);
    for (NamedBuf<T>& buf : net.state()) report.restored.push_back(buf.name);
    return report;
  }
  CheckpointData data = read_checkpoint_file(path);
  for (NamedBuf<T>& buf : net.state()) {
    bool is_classifier = buf.name.rfind("classifier.", 0) == 0;
    const CheckpointTensor* t = data.find(buf.name);
    if (is_classifier) {
      if (t && t->shape == buf.shape) {
        for (std::size_t i = 0; i < t->values.size(); ++i)
          (*buf.data)[i] = static_cast<T>(t->values[i]);
        report.restored.push_back(buf.name);
      } else {
        report.fresh.push_back(buf.name);
      }
      continue;
    }
    if (!t)
      throw checkpoint_error(checkpoint_error::kind::tensor_mismatch,
                             "checkpoint " + path + ": missing backbone tensor '" + buf.name +
                                 "'");
    if (t->shape != buf.shape)
      throw checkpoint_error(checkpoint_error::kind::tensor_mismatch,
                             "checkpoint " + path + ": backbone tensor '" + buf.name +
                                 "' has shape " + shape_str(t->shape) + ", expected " +
                                 shape_str(buf.shape));
    for (std::size_t i = 0; i < t->values.size(); ++i)
      (*buf.data)[i] = static_cast<T>(t->values[i]);
    report.restored.push_back(buf.name);
  }
  return report;
}

}  // namespace unik
