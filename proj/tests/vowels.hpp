#pragma once

// Synthetic sung-vowel suite used for the vocoder round-trip regression.

#include <array>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "stc/audio_io.hpp"
#include "stc/feature_codec.hpp"
#include "stc/toolkit.hpp"
#include "stc/vocoder.hpp"

namespace testing_support {

struct Vowel {
  std::string name;
  std::array<double, 3> formants;
  std::array<double, 3> bandwidths;
};

inline const std::vector<Vowel>& vowels() {
  static const std::vector<Vowel> v = {
      {"a", {730, 1090, 2440}, {90, 110, 170}},
      {"i", {270, 2290, 3010}, {60, 100, 170}},
      {"u", {300, 870, 2240}, {60, 90, 150}},
  };
  return v;
}

inline const std::vector<double>& vowel_pitches() {
  static const std::vector<double> p = {130.0, 220.0, 350.0};
  return p;
}

// Magnitude of a cascade of two-pole resonators at frequency hz.
inline double formant_gain(const Vowel& v, double hz, int rate) {
  double g = 1.0;
  const std::complex<double> z = std::polar(1.0, 2 * M_PI * hz / rate);
  for (int i = 0; i < 3; ++i) {
    const double r = std::exp(-M_PI * v.bandwidths[i] / rate);
    const std::complex<double> pole = std::polar(r, 2 * M_PI * v.formants[i] / rate);
    const double dc = std::abs((1.0 - pole) * (1.0 - std::conj(pole)));
    g *= dc / std::abs((z - pole) * (z - std::conj(pole)));
  }
  return g;
}

// Additive harmonics shaped by a -12 dB/octave source and the vowel formants,
// with 5.5 Hz vibrato of +-30 cents.
inline stc::AudioClip sung_vowel(const Vowel& v, double f0, double seconds = 1.5, int rate = 16000) {
  stc::AudioClip c;
  c.sample_rate = rate;
  const auto n = static_cast<std::size_t>(seconds * rate);
  c.samples.assign(n, 0.0);
  double phase = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double f = f0 * std::pow(2.0, 30.0 / 1200.0 * std::sin(2 * M_PI * 5.5 * t));
    phase += 2 * M_PI * f / rate;
    double s = 0;
    for (int h = 1; h * f < 7800.0; ++h) s += formant_gain(v, h * f, rate) / (h * h) * std::sin(h * phase);
    c.samples[i] = s;
  }
  return stc::normalize_peak(c, 0.5);
}

// analyze -> synthesize -> analyze, MCD between the two analyses' cepstra.
inline double vowel_roundtrip_mcd(const stc::AudioClip& clip) {
  using namespace stc;
  const auto first = vocoder::analyze(clip);
  const auto resynth = vocoder::synthesize(first);
  const auto second = vocoder::analyze(resynth);
  const auto a = features::encode(first, Domain::chest);
  const auto b = features::encode(second, Domain::chest);
  return toolkit::mcd(a, b);
}

inline double vowel_suite_mcd() {
  double total = 0;
  int count = 0;
  for (const auto& v : vowels())
    for (double f0 : vowel_pitches()) {
      total += vowel_roundtrip_mcd(sung_vowel(v, f0));
      ++count;
    }
  return total / count;
}

}  // namespace testing_support
