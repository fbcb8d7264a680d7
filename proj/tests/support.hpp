#pragma once

// Signal generators and small numeric helpers shared by the test suites.
// They are written independently of the library so they can act as oracles.

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "stc/audio_io.hpp"

namespace testing_support {

inline stc::AudioClip tone(double hz, double seconds, int rate = 16000, double amp = 0.5, double phase = 0.0) {
  stc::AudioClip c;
  c.sample_rate = rate;
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.samples[i] = amp * std::sin(2 * M_PI * hz * i / rate + phase);
  return c;
}

// Band-limited sawtooth, optionally with sinusoidal vibrato (depth in cents).
inline stc::AudioClip sawtooth(double hz, double seconds, double vib_cents = 0, double vib_rate = 5.5,
                               int rate = 16000, double amp = 0.3) {
  stc::AudioClip c;
  c.sample_rate = rate;
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  c.samples.resize(n);
  double phase = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double f = hz * std::pow(2.0, vib_cents / 1200.0 * std::sin(2 * M_PI * vib_rate * t));
    phase += 2 * M_PI * f / rate;
    double s = 0;
    for (int h = 1; h * f < 0.45 * rate; ++h) s += std::sin(h * phase) / h;
    c.samples[i] = amp * s;
  }
  return c;
}

// Instantaneous frequency of the vibrato sawtooth at time t.
inline double vibrato_f0(double hz, double t, double vib_cents = 0, double vib_rate = 5.5) {
  return hz * std::pow(2.0, vib_cents / 1200.0 * std::sin(2 * M_PI * vib_rate * t));
}

inline stc::AudioClip white_noise(double seconds, std::uint64_t seed, int rate = 16000, double sigma = 0.1) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> nd(0.0, sigma);
  stc::AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(static_cast<std::size_t>(std::llround(seconds * rate)));
  for (double& s : c.samples) s = nd(eng);
  return c;
}

inline double cents(double f, double ref) { return 1200.0 * std::log2(f / ref); }

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Direct DFT magnitude at one frequency (Hann-windowed, amplitude-normalized).
inline double tone_amplitude(const std::vector<double>& x, double hz, int rate) {
  std::complex<double> acc = 0;
  double wsum = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = 0.5 - 0.5 * std::cos(2 * M_PI * (i + 0.5) / x.size());
    acc += w * x[i] * std::polar(1.0, -2 * M_PI * hz * i / rate);
    wsum += w;
  }
  return 2.0 * std::abs(acc) / wsum;
}

// Frequency of the largest DFT bin (plain DFT, resolution rate/len).
inline double peak_frequency(const std::vector<double>& x, int rate) {
  const std::size_t n = x.size();
  double best = 0, best_f = 0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * std::polar(1.0, -2 * M_PI * double(k) * i / n);
    if (std::abs(acc) > best) {
      best = std::abs(acc);
      best_f = static_cast<double>(k) * rate / n;
    }
  }
  return best_f;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("stc_test_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace testing_support
