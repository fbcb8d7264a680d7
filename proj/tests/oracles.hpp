#pragma once
// Reference scorers shared by unit tests and the acceptance run.

#include <cmath>
#include <random>
#include <vector>

#include "stc/vocoder.hpp"
#include "support.hpp"

namespace testing_support {

struct F0Score {
  double median_cents = 0;
  double voiced_fraction = 0;
};

// Scores interior frames (first and last 5 skipped) against a reference curve.
template <class Ref>
F0Score score_f0(const std::vector<double>& f0, Ref ref) {
  std::vector<double> errs;
  int voiced = 0, total = 0;
  for (std::size_t i = 5; i + 5 < f0.size(); ++i) {
    ++total;
    if (f0[i] <= 0) continue;
    ++voiced;
    errs.push_back(std::abs(cents(f0[i], ref(i * stc::vocoder::kHopSeconds))));
  }
  F0Score s;
  s.voiced_fraction = static_cast<double>(voiced) / total;
  s.median_cents = errs.empty() ? 1e9 : median(errs);
  return s;
}

// Random smooth envelope: low-order cosine series in log power plus a few resonances.
inline std::vector<double> smooth_envelope(std::mt19937_64& eng) {
  using stc::vocoder::kSpBins;
  std::normal_distribution<double> nd(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> coef(12);
  for (std::size_t k = 0; k < coef.size(); ++k) coef[k] = nd(eng) / (1.0 + k);
  std::vector<std::pair<double, double>> peaks;
  for (int i = 0; i < 3; ++i) peaks.emplace_back(300 + 3500 * u(eng), 150 + 250 * u(eng));
  std::vector<double> sp(kSpBins);
  for (int j = 0; j < kSpBins; ++j) {
    const double w = M_PI * j / (kSpBins - 1);
    const double hz = 8000.0 * j / (kSpBins - 1);
    double l = -4.0;
    for (std::size_t k = 0; k < coef.size(); ++k) l += coef[k] * std::cos(k * w);
    for (auto [f, bw] : peaks) l += 1.5 * std::exp(-0.5 * (hz - f) * (hz - f) / (bw * bw));
    sp[j] = std::exp(l);
  }
  return sp;
}

// RMS log-spectral distance in dB.
inline double lsd_db(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = 10 * std::log10(a[j] / b[j]);
    s += d * d;
  }
  return std::sqrt(s / a.size());
}

}  // namespace testing_support
