#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "stc/error.hpp"

namespace stc::dsp {

using Complex = std::complex<double>;

namespace detail {

// Real FFT plans cached per size for the calling thread. FFTW planning is not
// thread-safe, so each thread keeps its own plans and buffers.
class RealFftPlan {
 public:
  explicit RealFftPlan(int n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    forward_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(n, out_, in_, FFTW_ESTIMATE);
  }
  RealFftPlan(const RealFftPlan&) = delete;
  RealFftPlan& operator=(const RealFftPlan&) = delete;
  ~RealFftPlan() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(in_);
    fftw_free(out_);
  }

  void forward(std::span<const double> x, std::vector<Complex>& spectrum) {
    for (int i = 0; i < n_; ++i) in_[i] = i < static_cast<int>(x.size()) ? x[i] : 0.0;
    fftw_execute(forward_);
    spectrum.resize(n_ / 2 + 1);
    for (int k = 0; k <= n_ / 2; ++k) spectrum[k] = {out_[k][0], out_[k][1]};
  }

  // Unnormalized inverse; caller divides by n.
  void inverse(std::span<const Complex> spectrum, std::vector<double>& x) {
    for (int k = 0; k <= n_ / 2; ++k) {
      out_[k][0] = spectrum[k].real();
      out_[k][1] = spectrum[k].imag();
    }
    fftw_execute(inverse_);
    x.assign(in_, in_ + n_);
  }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan forward_;
  fftw_plan inverse_;
};

inline RealFftPlan& plan_for(int n) {
  thread_local std::map<int, std::unique_ptr<RealFftPlan>> plans;
  auto& p = plans[n];
  if (!p) p = std::make_unique<RealFftPlan>(n);
  return *p;
}

}  // namespace detail

// Zero-pads (or truncates) x to n samples and returns the n/2+1 bin spectrum.
inline std::vector<Complex> rfft(std::span<const double> x, int n) {
  std::vector<Complex> out;
  detail::plan_for(n).forward(x, out);
  return out;
}

// Inverse of rfft, normalized so irfft(rfft(x, n), n) == x.
inline std::vector<double> irfft(std::span<const Complex> spectrum, int n) {
  if (static_cast<int>(spectrum.size()) != n / 2 + 1)
    throw ArgumentError("irfft: spectrum has wrong bin count");
  std::vector<double> out;
  detail::plan_for(n).inverse(spectrum, out);
  for (double& v : out) v /= n;
  return out;
}

// Symmetric-in-the-limit (periodic=false) Hann window of length n.
inline std::vector<double> hann(int n) {
  std::vector<double> w(n);
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * (i + 0.5) / n);
  return w;
}

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline double kaiser(double x, double beta) {
  // x in [-1, 1]
  if (x <= -1.0 || x >= 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - x * x)) / std::cyl_bessel_i(0.0, beta);
}

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(M_PI * x) / (M_PI * x);
}

}  // namespace stc::dsp
