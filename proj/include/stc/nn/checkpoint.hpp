#pragma once

// STCK v1: "STCK", u32 version, str metadata (JSON text), u32 count, then per
// parameter: str name, u32 rank, u32 dims[rank], u64 adam step,
// f32 value | f32 m | f32 v. Strings are u32 length + bytes.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stc/binary_io.hpp"
#include "stc/nn/tensor.hpp"

namespace stc::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredParameter {
  std::string name;
  Shape shape;
  std::uint64_t step = 0;
  std::vector<float> value, m, v;
};

struct Checkpoint {
  std::string metadata;
  std::vector<StoredParameter> params;
};

template <class T>
StoredParameter store(const Parameter<T>& p) {
  StoredParameter s;
  s.name = p.name;
  s.shape = p.value.shape;
  s.step = static_cast<std::uint64_t>(p.step);
  s.value.assign(p.value.data.begin(), p.value.data.end());
  s.m.assign(p.m.data.begin(), p.m.data.end());
  s.v.assign(p.v.data.begin(), p.v.data.end());
  return s;
}

inline std::string serialize(const Checkpoint& ck) {
  io::Writer w;
  w.bytes("STCK");
  w.u32(kCheckpointVersion);
  w.str(ck.metadata);
  w.u32(static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& p : ck.params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) w.u32(static_cast<std::uint32_t>(d));
    w.u64(p.step);
    w.f32_range(p.value.begin(), p.value.end());
    w.f32_range(p.m.begin(), p.m.end());
    w.f32_range(p.v.begin(), p.v.end());
  }
  return w.buffer();
}

inline Checkpoint parse_checkpoint(io::Reader r) {
  if (r.bytes(4) != "STCK") throw FormatError("not an STCK checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw UnsupportedError("unsupported STCK version " + std::to_string(version));
  Checkpoint ck;
  ck.metadata = r.str();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredParameter p;
    p.name = r.str();
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank in checkpoint");
    for (std::uint32_t d = 0; d < rank; ++d) p.shape.push_back(static_cast<int>(r.u32()));
    p.step = r.u64();
    const std::size_t n = numel(p.shape);
    if (n * 12 > r.remaining()) throw FormatError("truncated parameter '" + p.name + "'");
    p.value = r.f32_vec(n);
    p.m = r.f32_vec(n);
    p.v = r.f32_vec(n);
    ck.params.push_back(std::move(p));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::Writer w;
  w.bytes(serialize(ck));
  w.save(path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(io::Reader::load(path));
}

// Copies stored values and Adam state into `params`, matched by name.
// Every parameter must be present with an identical shape.
template <class T>
void restore(const Checkpoint& ck, std::span<Parameter<T>* const> params) {
  std::map<std::string, const StoredParameter*> by_name;
  for (const auto& p : ck.params) by_name[p.name] = &p;
  for (Parameter<T>* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing parameter '" + p->name + "'");
    const StoredParameter& s = *it->second;
    if (s.shape != p->value.shape)
      throw FormatError("parameter '" + p->name + "' has shape " + to_string(s.shape) + " in checkpoint, expected " +
                        to_string(p->value.shape));
    p->value.data.assign(s.value.begin(), s.value.end());
    p->m.data.assign(s.m.begin(), s.m.end());
    p->v.data.assign(s.v.begin(), s.v.end());
    p->step = static_cast<std::int64_t>(s.step);
    p->zero_grad();
  }
}

}  // namespace stc::nn
