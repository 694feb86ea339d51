#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cenlab/bytes.hpp"
#include "cenlab/nn/tensor.hpp"

namespace cenlab::nn {

inline constexpr uint32_t kCheckpointVersion = 1;

// Named tensor list for serialization: learnable parameters plus
// non-learnable buffers (batch-norm running stats) alike.
using NamedTensorList = std::vector<std::pair<std::string, Tensor*>>;

inline std::vector<uint8_t> checkpoint_bytes(const NamedTensorList& items) {
  ByteWriter w;
  w.magic("CENW");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<uint32_t>(items.size()));
  for (const auto& [name, t] : items) {
    w.str(name);
    w.u8(static_cast<uint8_t>(t->shape.size()));
    for (int d : t->shape) w.u32(static_cast<uint32_t>(d));
    for (float x : t->v) w.f32(x);
  }
  return w.take();
}

inline void save_checkpoint(const std::string& path, const NamedTensorList& items) {
  std::vector<uint8_t> buf = checkpoint_bytes(items);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path);
  if (std::fwrite(buf.data(), 1, buf.size(), f) != buf.size()) {
    std::fclose(f);
    throw std::runtime_error("short write: " + path);
  }
  std::fclose(f);
}

// Strict load: names, order, and shapes must match the model exactly.
inline void load_checkpoint(const std::string& path, const NamedTensorList& items) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  long len = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> buf(static_cast<size_t>(len));
  if (len > 0 && std::fread(buf.data(), 1, buf.size(), f) != buf.size()) {
    std::fclose(f);
    throw std::runtime_error("short read: " + path);
  }
  std::fclose(f);

  ByteReader r(buf);
  r.expect_magic("CENW");
  if (r.u32() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  uint32_t count = r.u32();
  if (count != items.size()) throw FormatError("checkpoint tensor count mismatch");
  for (const auto& [name, t] : items) {
    std::string got = r.str();
    if (got != name) throw FormatError("checkpoint tensor name mismatch: " + got);
    uint8_t nd = r.u8();
    std::vector<int> shape(nd);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    if (shape != t->shape) throw FormatError("checkpoint shape mismatch for " + name);
    for (float& x : t->v) {
      x = r.f32();
      if (!std::isfinite(x)) throw FormatError("non-finite value in checkpoint: " + name);
    }
  }
  if (!r.done()) throw FormatError("trailing bytes in checkpoint");
}

}  // namespace cenlab::nn
