#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "stc/dsp.hpp"
#include "stc/error.hpp"

namespace stc {

inline constexpr int kAnalysisRate = 16000;

// Mono sample buffer. Samples are nominally in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kAnalysisRate;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
  std::size_t size() const { return samples.size(); }
};

namespace wav_detail {

inline std::uint32_t u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline constexpr std::uint16_t kFormatPcm = 1;
inline constexpr std::uint16_t kFormatFloat = 3;
inline constexpr std::uint16_t kFormatExtensible = 0xfffe;

}  // namespace wav_detail

// Parses a RIFF/WAVE byte buffer. PCM16 and IEEE float32, mono or stereo;
// stereo is averaged down to mono.
inline AudioClip parse_wav(const std::vector<unsigned char>& bytes) {
  using namespace wav_detail;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file");

  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = u32le(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Tolerate a truncated data chunk (streaming writers leave size unset).
      if (std::memcmp(chunk, "data", 4) == 0) {
        data = bytes.data() + body;
        data_size = bytes.size() - body;
        break;
      }
      throw FormatError("chunk extends past end of file");
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError("fmt chunk too small");
      format = u16le(chunk + 8);
      channels = u16le(chunk + 10);
      rate = u32le(chunk + 12);
      bits = u16le(chunk + 22);
      if (format == kFormatExtensible && size >= 26) format = u16le(chunk + 8 + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw FormatError("missing fmt chunk");
  if (data == nullptr) throw FormatError("missing data chunk");
  if (rate == 0) throw FormatError("zero sample rate");
  if (channels != 1 && channels != 2)
    throw UnsupportedError("unsupported channel count " + std::to_string(channels));

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32)
    throw UnsupportedError("unsupported encoding (format " + std::to_string(format) + ", " +
                           std::to_string(bits) + " bits)");

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frames = data_size / (bytes_per_sample * channels);
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per_sample;
      if (pcm16) {
        acc += static_cast<std::int16_t>(u16le(p)) / 32768.0;
      } else {
        float f;
        std::uint32_t raw = u32le(p);
        std::memcpy(&f, &raw, 4);
        acc += f;
      }
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

inline AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return parse_wav(bytes);
}

// Serializes as IEEE float32 mono.
inline std::string encode_wav(const AudioClip& clip) {
  using namespace wav_detail;
  if (clip.sample_rate <= 0) throw ArgumentError("clip sample rate must be positive");
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::string out;
  out.reserve(44 + 4 * n);
  out += "RIFF";
  put_u32(out, 36 + 4 * n);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, kFormatFloat);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 4);
  put_u16(out, 4);
  put_u16(out, 32);
  out += "data";
  put_u32(out, 4 * n);
  for (double s : clip.samples) {
    const float f = static_cast<float>(s);
    std::uint32_t raw;
    std::memcpy(&raw, &f, 4);
    put_u32(out, raw);
  }
  return out;
}

inline void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
  for (double s : clip.samples)
    if (!std::isfinite(s)) throw ArgumentError("clip contains non-finite samples");
  const std::string bytes = encode_wav(clip);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// Band-limited resampling with a Kaiser-windowed sinc kernel spanning 64
// zero crossings of the (lower) cutoff. The source/target ratio is reduced to
// L/M and one kernel table is built per output phase.
inline AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw ArgumentError("target rate must be positive");
  if (clip.sample_rate <= 0) throw ArgumentError("source rate must be positive");
  if (target_rate == clip.sample_rate) return clip;

  constexpr int kTaps = 64;
  constexpr double kBeta = 8.6;
  const long g = std::gcd(static_cast<long>(target_rate), static_cast<long>(clip.sample_rate));
  const long up = target_rate / g;           // output phases
  const long down = clip.sample_rate / g;
  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  const double cutoff = std::min(1.0, ratio);  // relative to source Nyquist
  const double half_width = (kTaps / 2) / cutoff;
  const long reach = static_cast<long>(std::ceil(half_width)) + 1;
  const auto out_len = static_cast<std::size_t>(std::llround(clip.samples.size() * ratio));
  const auto n_in = static_cast<long>(clip.samples.size());
  if (up > 1 << 16) throw UnsupportedError("resampling ratio too irregular");

  // table[phase][j] is the weight of input sample floor(p) - reach + 1 + j.
  const long width = 2 * reach;
  std::vector<double> table(static_cast<std::size_t>(up * width));
  for (long ph = 0; ph < up; ++ph) {
    const double frac = static_cast<double>(ph) / up;
    for (long j = 0; j < width; ++j) {
      const double t = frac + static_cast<double>(reach - 1 - j);
      table[ph * width + j] = std::abs(t) <= half_width
                                  ? cutoff * dsp::sinc(cutoff * t) * dsp::kaiser(t / half_width, kBeta)
                                  : 0.0;
    }
  }

  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  for (std::size_t m = 0; m < out_len; ++m) {
    const long num = static_cast<long>(m) * down;
    const long base = num / up;
    const long ph = num % up;
    const double* w = &table[ph * width];
    double acc = 0.0;
    for (long j = 0; j < width; ++j) {
      const long k = base - reach + 1 + j;
      if (k >= 0 && k < n_in) acc += clip.samples[k] * w[j];
    }
    out.samples[m] = acc;
  }
  return out;
}

// Scales so the absolute peak equals `peak`. Silent clips are returned as is.
inline AudioClip normalize_peak(const AudioClip& clip, double peak = 0.99) {
  double m = 0.0;
  for (double s : clip.samples) m = std::max(m, std::abs(s));
  AudioClip out = clip;
  if (m > 0.0)
    for (double& s : out.samples) s *= peak / m;
  return out;
}

// Resamples to the analysis rate, optionally peak-normalizing.
inline AudioClip ingest(const AudioClip& clip, bool peak_normalize = false) {
  AudioClip out = resample(clip, kAnalysisRate);
  return peak_normalize ? normalize_peak(out) : out;
}

}  // namespace stc
