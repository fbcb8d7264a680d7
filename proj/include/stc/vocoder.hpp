#pragma once

// WORLD-style analysis/synthesis at 16 kHz with a 5 ms hop:
//   f0   normalized autocorrelation on 40 ms Hann windows
//   sp   pitch-adaptive smoothed power spectrum, cepstrally liftered
//   ap   band-limited periodicity at the pitch lag, four 2 kHz bands
// Synthesis overlap-adds minimum-phase responses excited by pulses (voiced)
// or noise (unvoiced).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "stc/audio_io.hpp"
#include "stc/dsp.hpp"
#include "stc/error.hpp"
#include "stc/matrix.hpp"
#include "stc/rng.hpp"

namespace stc::vocoder {

inline constexpr int kSampleRate = 16000;
inline constexpr int kHop = 80;                 // 5 ms
inline constexpr double kHopSeconds = 0.005;
inline constexpr int kFftSize = 1024;
inline constexpr int kSpBins = kFftSize / 2 + 1;  // 513, 0..8 kHz
inline constexpr int kApBands = 4;
inline constexpr double kBandWidthHz = 2000.0;
inline constexpr double kF0Floor = 55.0;
inline constexpr double kF0Ceil = 4000.0;
inline constexpr int kF0Window = 640;           // 40 ms
inline constexpr double kVoicingThreshold = 0.45;
inline constexpr int kMedianSpan = 5;
inline constexpr double kSpFloor = 1e-12;
inline constexpr int kUnvoicedLifter = 96;      // 6 ms
inline constexpr int kUnvoicedWindow = 640;

// Frames on either side of a cut whose analysis window reaches across it:
// half of the longest window (envelope at 55 Hz, 2.5 periods) plus the
// median filter's reach.
inline constexpr int kContextFrames = 7;

struct VocoderFrames {
  std::vector<double> f0;  // Hz, 0 = unvoiced
  Matrix sp;               // frames x 513, power spectral density
  Matrix ap;               // frames x 4, in [0, 1]
  double hop_seconds = kHopSeconds;
  int sample_rate = kSampleRate;

  std::size_t size() const { return f0.size(); }
};

struct F0Track {
  std::vector<double> f0;
  std::vector<double> periodicity;
};

inline std::size_t frame_count(std::size_t samples) { return samples / kHop + 1; }

namespace detail {

// Window-length segment centred on `center` (start = center - len/2), zero
// outside the clip.
inline std::vector<double> segment(std::span<const double> x, long center, int len) {
  std::vector<double> out(len, 0.0);
  const long start = center - len / 2;
  const long n = static_cast<long>(x.size());
  for (int i = 0; i < len; ++i) {
    const long k = start + i;
    if (k >= 0 && k < n) out[i] = x[k];
  }
  return out;
}

// Autocorrelation at a fractional lag from a power spectrum of an n-point
// transform, restricted to bins [k_lo, k_hi]. Band-limited interpolation.
inline double acf_at(std::span<const double> power, int n, double lag, int k_lo = 0,
                     int k_hi = -1) {
  const int half = n / 2;
  if (k_hi < 0) k_hi = half;
  const double theta = 2.0 * M_PI * lag / n;
  const std::complex<double> step(std::cos(theta), std::sin(theta));
  std::complex<double> rot = std::polar(1.0, theta * k_lo);
  double acc = 0.0;
  for (int k = k_lo; k <= k_hi; ++k) {
    const double weight = (k == 0 || k == half) ? 1.0 : 2.0;
    acc += weight * power[k] * rot.real();
    rot *= step;
  }
  return acc / n;
}

inline std::vector<double> power_spectrum(std::span<const double> y, int n) {
  const auto spec = dsp::rfft(y, n);
  std::vector<double> p(spec.size());
  for (std::size_t k = 0; k < spec.size(); ++k) p[k] = std::norm(spec[k]);
  return p;
}

inline double median_of(std::vector<double> v) {
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double hi = v[mid];
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

struct PitchCandidate {
  double lag = 0.0;
  double periodicity = 0.0;
};

// Normalized cross-correlation of a windowed frame against itself, sampled
// on a quarter-sample lag grid (band-limited interpolation of the ACF). Picks
// the shortest-lag peak within 10% of the best peak (suppresses octave-down
// errors), then refines the lag on the window-compensated autocorrelation,
// which has no bias toward short lags.
inline PitchCandidate pitch_candidate(std::span<const double> frame,
                                      std::span<const double> window_power, int nfft) {
  constexpr int kUp = 4;
  const int len = static_cast<int>(frame.size());
  const int lag_min = static_cast<int>(std::floor(kSampleRate / kF0Ceil));
  const int lag_max = std::min(len - 2, static_cast<int>(std::ceil(kSampleRate / kF0Floor)));

  std::vector<double> prefix(len + 1, 0.0);
  for (int i = 0; i < len; ++i) prefix[i + 1] = prefix[i] + frame[i] * frame[i];
  const double energy = prefix[len];
  if (energy < 1e-12 * len) return {};

  const auto power = power_spectrum(frame, nfft);
  std::vector<dsp::Complex> padded(nfft * kUp / 2 + 1, 0.0);
  for (int k = 0; k <= nfft / 2; ++k) padded[k] = power[k] * (k == nfft / 2 ? 0.5 : 1.0);
  const auto r = dsp::irfft(padded, nfft * kUp);  // r[j] ~ ACF(j / kUp) / kUp

  auto prefix_at = [&](double x) {
    const int i = std::clamp(static_cast<int>(std::floor(x)), 0, len - 1);
    return prefix[i] + (x - i) * (prefix[i + 1] - prefix[i]);
  };
  auto nccf = [&](int j) {
    const double lag = static_cast<double>(j) / kUp;
    const double d = std::sqrt(prefix_at(len - lag) * (energy - prefix_at(lag)));
    return d > 0.0 ? r[j] * kUp / d : 0.0;
  };

  const int j_min = lag_min * kUp, j_max = lag_max * kUp;
  std::vector<double> score(j_max + 2, 0.0);
  for (int j = j_min - 1; j <= j_max + 1; ++j) score[j] = nccf(j);

  std::vector<int> peaks;
  double best = 0.0;
  for (int j = j_min; j <= j_max; ++j) {
    if (score[j] > score[j - 1] && score[j] >= score[j + 1] && score[j] > 0.0) {
      peaks.push_back(j);
      best = std::max(best, score[j]);
    }
  }
  int chosen = -1;
  for (int j : peaks) {
    if (score[j] >= 0.9 * best) {
      chosen = j;
      break;
    }
  }
  if (chosen < 0) return {};

  const double a = score[chosen - 1], b = score[chosen], c = score[chosen + 1];
  const double denom = a - 2.0 * b + c;
  const double offset = denom < 0.0 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;
  const double periodicity = std::clamp(b - 0.25 * (a - c) * offset, 0.0, 1.0);

  // Iterated three-point parabolic search on the window-compensated ACF.
  auto compensated = [&](double lag) {
    const double w = acf_at(window_power, nfft, lag);
    return w > 0.0 ? acf_at(power, nfft, lag) / w : 0.0;
  };
  double lag = (chosen + offset) / kUp;
  for (double h : {2.0, 0.5, 0.1, 0.02}) {
    const double fa = compensated(lag - h), fb = compensated(lag), fc = compensated(lag + h);
    const double d = fa - 2.0 * fb + fc;
    if (d < 0.0) lag += std::clamp(0.5 * h * (fa - fc) / d, -h, h);
  }
  return {lag, periodicity};
}

inline void median_smooth_voiced(std::vector<double>& f0) {
  const int n = static_cast<int>(f0.size());
  const int reach = kMedianSpan / 2;
  std::vector<double> out = f0;
  for (int i = 0; i < n; ++i) {
    if (f0[i] <= 0.0) continue;
    std::vector<double> vals;
    for (int j = std::max(0, i - reach); j <= std::min(n - 1, i + reach); ++j)
      if (f0[j] > 0.0) vals.push_back(f0[j]);
    out[i] = median_of(vals);
  }
  f0 = std::move(out);
}

inline void check_clip(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate)
    throw ArgumentError("vocoder expects 16 kHz audio, got " + std::to_string(clip.sample_rate));
}

inline void check_track(const AudioClip& clip, std::span<const double> f0) {
  if (f0.size() != frame_count(clip.samples.size()))
    throw ArgumentError("f0 track length " + std::to_string(f0.size()) + " does not match " +
                        std::to_string(frame_count(clip.samples.size())) + " frames");
}

// Mean of `s` over a window of `width` bins centred on each bin; the spectrum
// is mirrored at DC and Nyquist.
inline std::vector<double> smooth_linear(std::span<const double> s, double width) {
  const int bins = static_cast<int>(s.size());
  const int half = bins - 1;
  if (width <= 1.0) return {s.begin(), s.end()};
  const int pad = static_cast<int>(std::ceil(width)) + 2;
  std::vector<double> ext(bins + 2 * pad);
  for (int i = 0; i < static_cast<int>(ext.size()); ++i) {
    int k = i - pad;
    if (k < 0) k = -k;
    if (k > half) k = 2 * half - k;
    ext[i] = s[std::clamp(k, 0, half)];
  }
  // Cumulative integral of the piecewise-constant spectrum.
  std::vector<double> cum(ext.size() + 1, 0.0);
  for (std::size_t i = 0; i < ext.size(); ++i) cum[i + 1] = cum[i] + ext[i];
  auto integral = [&](double x) {  // x in extended-bin coordinates, bin i covers [i-0.5, i+0.5)
    const double u = x + 0.5;
    const int i = std::clamp(static_cast<int>(std::floor(u)), 0, static_cast<int>(ext.size()) - 1);
    return cum[i] + (u - i) * ext[i];
  };
  std::vector<double> out(bins);
  for (int k = 0; k < bins; ++k) {
    const double c = k + pad;
    out[k] = (integral(c + width / 2) - integral(c - width / 2)) / width;
  }
  return out;
}

// Real cepstrum of a 513-bin log spectrum, liftered to quefrencies < cutoff.
inline std::vector<double> lifter_log_spectrum(std::span<const double> log_spec, double cutoff) {
  std::vector<dsp::Complex> ls(log_spec.begin(), log_spec.end());
  auto cep = dsp::irfft(ls, kFftSize);
  for (int q = 0; q < kFftSize; ++q) {
    const int quef = q <= kFftSize / 2 ? q : kFftSize - q;
    if (quef >= cutoff) cep[q] = 0.0;
  }
  const auto back = dsp::rfft(cep, kFftSize);
  std::vector<double> out(kSpBins);
  for (int k = 0; k < kSpBins; ++k) out[k] = back[k].real();
  return out;
}

}  // namespace detail

inline F0Track estimate_f0(const AudioClip& clip) {
  detail::check_clip(clip);
  if (clip.samples.size() < static_cast<std::size_t>(kF0Window))
    throw ArgumentError("clip shorter than one 40 ms analysis window");

  const std::size_t frames = frame_count(clip.samples.size());
  const int nfft = dsp::next_pow2(2 * kF0Window);
  const auto window = dsp::hann(kF0Window);
  const auto window_power = detail::power_spectrum(window, nfft);

  F0Track track;
  track.f0.assign(frames, 0.0);
  track.periodicity.assign(frames, 0.0);
  for (std::size_t i = 0; i < frames; ++i) {
    auto seg = detail::segment(clip.samples, static_cast<long>(i) * kHop, kF0Window);
    for (int j = 0; j < kF0Window; ++j) seg[j] *= window[j];
    const auto cand = detail::pitch_candidate(seg, window_power, nfft);
    track.periodicity[i] = cand.periodicity;
    if (cand.lag > 0.0 && cand.periodicity >= kVoicingThreshold) {
      const double f = kSampleRate / cand.lag;
      if (f >= kF0Floor && f <= kF0Ceil) track.f0[i] = f;
    }
  }
  detail::median_smooth_voiced(track.f0);
  return track;
}

inline Matrix estimate_envelope(const AudioClip& clip, std::span<const double> f0) {
  detail::check_clip(clip);
  detail::check_track(clip, f0);
  const std::size_t frames = f0.size();
  Matrix sp(frames, kSpBins, kSpFloor);
  const double bin_hz = static_cast<double>(kSampleRate) / kFftSize;

  for (std::size_t i = 0; i < frames; ++i) {
    const bool voiced = f0[i] > 0.0;
    const double period = voiced ? kSampleRate / f0[i] : 0.0;
    const int len = voiced ? std::max(8, static_cast<int>(std::lround(2.5 * period)))
                           : kUnvoicedWindow;
    const auto window = dsp::hann(len);
    auto seg = detail::segment(clip.samples, static_cast<long>(i) * kHop, len);
    double wsum = 0.0;
    for (int j = 0; j < len; ++j) {
      seg[j] *= window[j];
      wsum += window[j] * window[j];
    }
    auto power = detail::power_spectrum(seg, kFftSize);
    for (double& p : power) p /= wsum;

    // Smooth across one harmonic spacing in the power domain, then lifter the
    // log spectrum below the first rahmonic.
    const double smooth_hz = voiced ? f0[i] : static_cast<double>(kSampleRate) / kUnvoicedLifter;
    power = detail::smooth_linear(power, smooth_hz / bin_hz);
    std::vector<double> log_spec(kSpBins);
    for (int k = 0; k < kSpBins; ++k) log_spec[k] = std::log(std::max(power[k], kSpFloor));
    const double cutoff = voiced ? 0.8 * period : static_cast<double>(kUnvoicedLifter);
    const auto smooth = detail::lifter_log_spectrum(log_spec, cutoff);
    for (int k = 0; k < kSpBins; ++k) sp(i, k) = std::max(std::exp(smooth[k]), kSpFloor);
  }
  return sp;
}

inline Matrix estimate_aperiodicity(const AudioClip& clip, std::span<const double> f0) {
  detail::check_clip(clip);
  detail::check_track(clip, f0);
  const std::size_t frames = f0.size();
  Matrix ap(frames, kApBands, 1.0);

  for (std::size_t i = 0; i < frames; ++i) {
    if (f0[i] <= 0.0) continue;
    const double period = kSampleRate / f0[i];
    const int len = std::max(kF0Window, static_cast<int>(std::lround(4.0 * period)));
    const int nfft = dsp::next_pow2(2 * len);
    const auto window = dsp::hann(len);
    auto seg = detail::segment(clip.samples, static_cast<long>(i) * kHop, len);
    for (int j = 0; j < len; ++j) seg[j] *= window[j];
    const auto power = detail::power_spectrum(seg, nfft);
    const auto window_power = detail::power_spectrum(window, nfft);
    const double w_ratio =
        detail::acf_at(window_power, nfft, period) / detail::acf_at(window_power, nfft, 0.0);

    double total = 0.0;
    for (double p : power) total += p;
    const double bin_hz = static_cast<double>(kSampleRate) / nfft;
    for (int b = 0; b < kApBands; ++b) {
      const int k_lo = static_cast<int>(std::ceil(b * kBandWidthHz / bin_hz));
      const int k_hi = std::min(nfft / 2, static_cast<int>(std::ceil((b + 1) * kBandWidthHz / bin_hz)) - (b + 1 < kApBands ? 1 : 0));
      double band = 0.0;
      for (int k = k_lo; k <= k_hi; ++k) band += power[k];
      if (band <= 1e-8 * total || band <= 0.0 || w_ratio <= 0.0) continue;  // stays 1.0
      const double r0 = detail::acf_at(power, nfft, 0.0, k_lo, k_hi);
      const double rp = detail::acf_at(power, nfft, period, k_lo, k_hi);
      const double periodic = std::clamp(rp / r0 / w_ratio, 0.0, 1.0);
      ap(i, b) = 1.0 - periodic;
    }
  }
  return ap;
}

inline VocoderFrames analyze(const AudioClip& clip) {
  detail::check_clip(clip);
  const std::size_t frames = frame_count(clip.samples.size());
  // Short clips are zero-padded to one F0 window; the frame grid is kept.
  AudioClip padded = clip;
  if (padded.samples.size() < static_cast<std::size_t>(kF0Window))
    padded.samples.resize(kF0Window, 0.0);
  auto track = estimate_f0(padded);
  track.f0.resize(frames);

  VocoderFrames out;
  out.f0 = track.f0;
  std::vector<double> padded_f0 = track.f0;
  padded_f0.resize(frame_count(padded.samples.size()), 0.0);
  Matrix sp = estimate_envelope(padded, padded_f0);
  Matrix ap = estimate_aperiodicity(padded, padded_f0);
  sp.rows = frames;
  sp.data.resize(frames * kSpBins);
  ap.rows = frames;
  ap.data.resize(frames * kApBands);
  out.sp = std::move(sp);
  out.ap = std::move(ap);
  return out;
}

inline void validate(const VocoderFrames& frames) {
  const std::size_t n = frames.f0.size();
  if (frames.sp.rows != n || frames.ap.rows != n)
    throw ArgumentError("f0/sp/ap frame counts differ");
  if (frames.sp.cols != static_cast<std::size_t>(kSpBins))
    throw ArgumentError("sp must have 513 bins");
  if (frames.ap.cols != static_cast<std::size_t>(kApBands))
    throw ArgumentError("ap must have 4 bands");
  for (double f : frames.f0)
    if (!(f == 0.0 || (f >= kF0Floor && f <= kF0Ceil)))
      throw ArgumentError("f0 outside {0} U [55, 4000] Hz: " + std::to_string(f));
  for (double s : frames.sp.data)
    if (!(s >= kSpFloor * (1 - 1e-9)) || !std::isfinite(s))
      throw ArgumentError("sp below floor or non-finite");
  for (double a : frames.ap.data)
    if (!(a >= 0.0 && a <= 1.0)) throw ArgumentError("ap outside [0, 1]");
}

namespace detail {

// Minimum-phase spectrum whose squared magnitude equals the envelope.
inline std::vector<dsp::Complex> minimum_phase(std::span<const double> sp) {
  std::vector<dsp::Complex> log_mag(kSpBins);
  for (int k = 0; k < kSpBins; ++k) log_mag[k] = 0.5 * std::log(std::max(sp[k], kSpFloor));
  auto cep = dsp::irfft(log_mag, kFftSize);
  for (int q = 1; q < kFftSize / 2; ++q) {
    cep[q] *= 2.0;
    cep[kFftSize - q] = 0.0;
  }
  auto spec = dsp::rfft(cep, kFftSize);
  for (auto& z : spec) z = std::exp(z);
  return spec;
}

inline int band_of_bin(int k) {
  const double hz = static_cast<double>(k) * kSampleRate / kFftSize;
  return std::min(kApBands - 1, static_cast<int>(hz / kBandWidthHz));
}

inline void overlap_add(std::vector<double>& out, const std::vector<double>& response, long start) {
  const long n = static_cast<long>(out.size());
  for (long j = 0; j < static_cast<long>(response.size()); ++j) {
    const long k = start + j;
    if (k >= 0 && k < n) out[k] += response[j];
  }
}

}  // namespace detail

// Resynthesizes audio of (frames - 1) * hop samples. Noise is drawn from a
// generator seeded with `seed`, so output is deterministic.
inline AudioClip synthesize(const VocoderFrames& frames, std::uint64_t seed = 0) {
  validate(frames);
  const std::size_t n_frames = frames.size();
  AudioClip out;
  out.sample_rate = kSampleRate;
  if (n_frames == 0) return out;
  const std::size_t length = (n_frames - 1) * kHop;
  out.samples.assign(length, 0.0);
  if (length == 0) return out;

  Rng rng(seed);
  std::vector<std::vector<dsp::Complex>> filters(n_frames);
  auto filter = [&](std::size_t i) -> const std::vector<dsp::Complex>& {
    if (filters[i].empty()) filters[i] = detail::minimum_phase(frames.sp.row(i));
    return filters[i];
  };
  auto nearest = [&](double t) {
    return std::min(n_frames - 1, static_cast<std::size_t>(std::lround(t / kHop)));
  };

  // Unvoiced stretches: unit-variance noise, one hop-centred segment per frame.
  for (std::size_t i = 0; i < n_frames; ++i) {
    if (frames.f0[i] > 0.0) continue;
    const long start = std::max(0L, static_cast<long>(i) * kHop - kHop / 2);
    const long stop = std::min(static_cast<long>(length), static_cast<long>(i) * kHop + kHop / 2);
    if (stop <= start) continue;
    std::vector<double> noise(stop - start);
    for (double& v : noise) v = rng.normal();
    auto spec = dsp::rfft(noise, kFftSize);
    const auto& h = filter(i);
    for (int k = 0; k < kSpBins; ++k) spec[k] *= h[k];
    detail::overlap_add(out.samples, dsp::irfft(spec, kFftSize), start);
  }

  // Voiced stretches: pulses at the instantaneous period, each carrying a
  // per-band mix of impulse and noise weighted by aperiodicity.
  auto f0_at = [&](double t) {
    const std::size_t i = nearest(t);
    if (frames.f0[i] <= 0.0) return 0.0;
    const double pos = t / kHop;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(n_frames - 1, lo + 1);
    const double a = frames.f0[lo], b = frames.f0[hi];
    if (a > 0.0 && b > 0.0) return a + (b - a) * (pos - lo);
    return frames.f0[i];
  };

  double phase = 0.0;
  bool in_voiced = false;
  for (std::size_t s = 0; s < length; ++s) {
    const double f = f0_at(static_cast<double>(s));
    if (f <= 0.0) {
      in_voiced = false;
      continue;
    }
    const double inc = f / kSampleRate;
    const double next = phase + inc;
    if (!in_voiced || next >= 1.0) {
      // Pulse at the exact crossing time within [s, s+1); onsets pulse at s.
      const double frac = in_voiced ? (1.0 - phase) / inc : 0.0;
      phase = in_voiced ? next - 1.0 : inc;
      in_voiced = true;
      const double t = static_cast<double>(s) + frac;
      const std::size_t i = nearest(t);
      if (frames.f0[i] <= 0.0) continue;
      const double period = kSampleRate / f;
      const auto noise_len = std::max(1L, std::lround(period));
      std::vector<double> noise(noise_len);
      for (double& v : noise) v = rng.normal();
      const auto noise_spec = dsp::rfft(noise, kFftSize);
      const auto& h = filter(i);
      const double pulse = std::sqrt(period);
      std::vector<dsp::Complex> spec(kSpBins);
      for (int k = 0; k < kSpBins; ++k) {
        const double a = frames.ap(i, detail::band_of_bin(k));
        const dsp::Complex excitation = pulse * std::sqrt(1.0 - a) + std::sqrt(a) * noise_spec[k];
        const dsp::Complex delay = std::polar(1.0, -2.0 * M_PI * k * (t - std::floor(t)) / kFftSize);
        spec[k] = h[k] * excitation * delay;
      }
      // The Nyquist bin must stay real for a real response.
      spec[kSpBins - 1] = spec[kSpBins - 1].real();
      detail::overlap_add(out.samples, dsp::irfft(spec, kFftSize), static_cast<long>(std::floor(t)));
    } else {
      phase = next;
    }
  }
  return out;
}

}  // namespace stc::vocoder
