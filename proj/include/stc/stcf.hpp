#pragma once

// "STCF v1" feature files:
//   "STCF" u32 version u32 frames f32 hop_seconds u32 sp_bins u32 ap_bands
//   f32 f0[frames] | f32 sp[frames * sp_bins] | f32 ap[frames * ap_bands]
// optionally followed by a feature chunk:
//   u32 domain_id | f32 data[frames * 60]

#include <filesystem>
#include <optional>

#include "stc/binary_io.hpp"
#include "stc/feature_codec.hpp"
#include "stc/vocoder.hpp"

namespace stc::stcf {

inline constexpr std::uint32_t kVersion = 1;

struct File {
  vocoder::VocoderFrames frames;
  std::optional<features::FeatureTensor> features;  // f0 sidecar taken from frames
};

inline std::string serialize(const vocoder::VocoderFrames& frames,
                             const features::FeatureTensor* feats = nullptr) {
  vocoder::validate(frames);
  io::Writer w;
  w.bytes("STCF");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(frames.size()));
  w.f32(static_cast<float>(frames.hop_seconds));
  w.u32(static_cast<std::uint32_t>(frames.sp.cols));
  w.u32(static_cast<std::uint32_t>(frames.ap.cols));
  w.f32_range(frames.f0.begin(), frames.f0.end());
  w.f32_range(frames.sp.data.begin(), frames.sp.data.end());
  w.f32_range(frames.ap.data.begin(), frames.ap.data.end());
  if (feats != nullptr) {
    if (feats->frames() != frames.size() || feats->data.cols != static_cast<std::size_t>(features::kDims))
      throw ArgumentError("feature chunk shape does not match frames");
    w.u32(static_cast<std::uint32_t>(index_of(feats->domain)));
    w.f32_range(feats->data.data.begin(), feats->data.data.end());
  }
  return w.buffer();
}

inline void write(const std::filesystem::path& path, const vocoder::VocoderFrames& frames,
                  const features::FeatureTensor* feats = nullptr) {
  io::Writer w;
  w.bytes(serialize(frames, feats));
  w.save(path);
}

inline File parse(io::Reader r) {
  if (r.bytes(4) != "STCF") throw FormatError("bad STCF magic");
  const auto version = r.u32();
  if (version != kVersion) throw UnsupportedError("unsupported STCF version " + std::to_string(version));
  const auto n = r.u32();
  const float hop = r.f32();
  const auto bins = r.u32();
  const auto bands = r.u32();
  if (bins != static_cast<std::uint32_t>(vocoder::kSpBins) ||
      bands != static_cast<std::uint32_t>(vocoder::kApBands))
    throw UnsupportedError("STCF layout must be 513 sp bins and 4 ap bands");

  File f;
  f.frames.hop_seconds = hop;
  const auto f0 = r.f32_vec(n);
  f.frames.f0.assign(f0.begin(), f0.end());
  const auto sp = r.f32_vec(static_cast<std::size_t>(n) * bins);
  f.frames.sp = Matrix(n, bins);
  f.frames.sp.data.assign(sp.begin(), sp.end());
  const auto ap = r.f32_vec(static_cast<std::size_t>(n) * bands);
  f.frames.ap = Matrix(n, bands);
  f.frames.ap.data.assign(ap.begin(), ap.end());

  if (r.remaining() > 0) {
    features::FeatureTensor ft;
    ft.domain = domain_from_index(static_cast<int>(r.u32()));
    const auto data = r.f32_vec(static_cast<std::size_t>(n) * features::kDims);
    ft.data = Matrix(n, features::kDims);
    ft.data.data.assign(data.begin(), data.end());
    ft.f0 = f.frames.f0;
    f.features = std::move(ft);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after STCF payload");
  return f;
}

inline File read(const std::filesystem::path& path) { return parse(io::Reader::load(path)); }

}  // namespace stc::stcf
