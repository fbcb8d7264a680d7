#pragma once

// 60-dimensional network features: 56 mel-cepstral coefficients of the
// spectral envelope followed by the 4 band aperiodicities.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <span>
#include <vector>

#include <json.hpp>

#include "stc/domain.hpp"
#include "stc/error.hpp"
#include "stc/matrix.hpp"
#include "stc/vocoder.hpp"

namespace stc::features {

inline constexpr int kMccOrder = 56;
inline constexpr int kDims = kMccOrder + vocoder::kApBands;  // 60
inline constexpr double kAlpha = 0.42;
inline constexpr double kMinStd = 1e-6;

struct FeatureTensor {
  Matrix data;  // frames x 60
  Domain domain = Domain::chest;
  std::vector<double> f0;  // sidecar, never transformed here

  std::size_t frames() const { return data.rows; }
};

// Bilinear (all-pass) frequency warping.
inline double warp(double omega, double alpha = kAlpha) {
  return omega + 2.0 * std::atan(alpha * std::sin(omega) / (1.0 - alpha * std::cos(omega)));
}
inline double warp_slope(double omega, double alpha = kAlpha) {
  return (1.0 - alpha * alpha) / (1.0 - 2.0 * alpha * std::cos(omega) + alpha * alpha);
}

namespace detail {

// Log envelope model on the linear bin grid:
//   ln sp(w_j) = c0 + 2 * sum_{n>=1} c_n cos(n * warp(w_j)).
struct WarpedBasis {
  Eigen::MatrixXd synth;    // 513 x 56
  Eigen::MatrixXd analyze;  // 56 x 513, weighted least-squares projector

  WarpedBasis() : synth(vocoder::kSpBins, kMccOrder), analyze(kMccOrder, vocoder::kSpBins) {
    const int bins = vocoder::kSpBins;
    Eigen::VectorXd weight(bins);
    for (int j = 0; j < bins; ++j) {
      const double omega = M_PI * j / (bins - 1);
      const double theta = warp(omega);
      synth(j, 0) = 1.0;
      for (int n = 1; n < kMccOrder; ++n) synth(j, n) = 2.0 * std::cos(n * theta);
      // Trapezoid weights times the warp Jacobian: uniform measure on the
      // warped axis.
      weight(j) = warp_slope(omega) * ((j == 0 || j == bins - 1) ? 0.5 : 1.0);
    }
    const Eigen::MatrixXd bw = synth.transpose() * weight.asDiagonal();
    analyze = (bw * synth).ldlt().solve(bw);
  }
};

inline const WarpedBasis& basis() {
  static const WarpedBasis b;
  return b;
}

}  // namespace detail

inline std::vector<double> sp_to_mcc(std::span<const double> sp) {
  if (sp.size() != static_cast<std::size_t>(vocoder::kSpBins))
    throw ArgumentError("sp frame must have 513 bins");
  Eigen::VectorXd log_sp(vocoder::kSpBins);
  for (int j = 0; j < vocoder::kSpBins; ++j) {
    if (!(sp[j] > 0.0) || !std::isfinite(sp[j]))
      throw ArgumentError("sp bin " + std::to_string(j) + " is not positive");
    log_sp(j) = std::log(sp[j]);
  }
  const Eigen::VectorXd c = detail::basis().analyze * log_sp;
  return {c.data(), c.data() + c.size()};
}

inline std::vector<double> mcc_to_sp(std::span<const double> mcc) {
  if (mcc.size() != static_cast<std::size_t>(kMccOrder))
    throw ArgumentError("mcc vector must have 56 coefficients");
  Eigen::VectorXd c(kMccOrder);
  for (int n = 0; n < kMccOrder; ++n) {
    if (!std::isfinite(mcc[n])) throw ArgumentError("non-finite mel-cepstral coefficient");
    c(n) = mcc[n];
  }
  const Eigen::VectorXd log_sp = detail::basis().synth * c;
  std::vector<double> sp(vocoder::kSpBins);
  for (int j = 0; j < vocoder::kSpBins; ++j)
    sp[j] = std::max(std::exp(log_sp(j)), vocoder::kSpFloor);
  return sp;
}

inline FeatureTensor encode(const vocoder::VocoderFrames& frames, Domain domain) {
  vocoder::validate(frames);
  FeatureTensor out;
  out.domain = domain;
  out.f0 = frames.f0;
  out.data = Matrix(frames.size(), kDims);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto mcc = sp_to_mcc(frames.sp.row(t));
    auto row = out.data.row(t);
    std::copy(mcc.begin(), mcc.end(), row.begin());
    for (int b = 0; b < vocoder::kApBands; ++b) row[kMccOrder + b] = frames.ap(t, b);
  }
  return out;
}

inline vocoder::VocoderFrames decode(const FeatureTensor& features) {
  if (features.data.cols != static_cast<std::size_t>(kDims))
    throw ArgumentError("feature tensor must have 60 columns, got " +
                        std::to_string(features.data.cols));
  if (features.f0.size() != features.data.rows)
    throw ArgumentError("f0 sidecar length does not match frame count");
  const std::size_t n = features.data.rows;
  vocoder::VocoderFrames out;
  out.f0 = features.f0;
  out.sp = Matrix(n, vocoder::kSpBins);
  out.ap = Matrix(n, vocoder::kApBands);
  for (std::size_t t = 0; t < n; ++t) {
    const auto row = features.data.row(t);
    const auto sp = mcc_to_sp(row.first(kMccOrder));
    std::copy(sp.begin(), sp.end(), out.sp.row(t).begin());
    for (int b = 0; b < vocoder::kApBands; ++b) {
      const double a = row[kMccOrder + b];
      out.ap(t, b) = std::isfinite(a) ? std::clamp(a, 0.0, 1.0) : 1.0;
    }
  }
  return out;
}

// Per-dimension z-score statistics.
struct NormStats {
  std::vector<double> mean = std::vector<double>(kDims, 0.0);
  std::vector<double> std = std::vector<double>(kDims, 1.0);

  bool operator==(const NormStats&) const = default;
};

inline NormStats fit_norm(std::span<const FeatureTensor> corpus, std::ostream* warn = &std::clog) {
  NormStats stats;
  std::vector<double> sum(kDims, 0.0), sum_sq(kDims, 0.0);
  std::size_t count = 0;
  for (const auto& ft : corpus) {
    if (ft.data.cols != static_cast<std::size_t>(kDims)) throw ArgumentError("expected 60 columns");
    for (std::size_t t = 0; t < ft.data.rows; ++t)
      for (int d = 0; d < kDims; ++d) sum[d] += ft.data(t, d);
    count += ft.data.rows;
  }
  if (count == 0) throw DataError("cannot fit normalization on an empty corpus");
  for (int d = 0; d < kDims; ++d) stats.mean[d] = sum[d] / count;
  // Second pass about the mean for numerical stability.
  for (const auto& ft : corpus)
    for (std::size_t t = 0; t < ft.data.rows; ++t)
      for (int d = 0; d < kDims; ++d) {
        const double v = ft.data(t, d) - stats.mean[d];
        sum_sq[d] += v * v;
      }
  int clamped = 0;
  for (int d = 0; d < kDims; ++d) {
    const double s = std::sqrt(sum_sq[d] / count);
    if (s < kMinStd) ++clamped;
    stats.std[d] = std::max(s, kMinStd);
  }
  if (clamped > 0 && warn != nullptr)
    *warn << "warning: " << clamped << " feature dimension(s) have std < 1e-6; clamped\n";
  return stats;
}

inline NormStats fit_norm(const FeatureTensor& ft, std::ostream* warn = &std::clog) {
  return fit_norm(std::span<const FeatureTensor>(&ft, 1), warn);
}

inline FeatureTensor apply_norm(const FeatureTensor& ft, const NormStats& stats) {
  FeatureTensor out = ft;
  for (std::size_t t = 0; t < ft.data.rows; ++t)
    for (int d = 0; d < kDims; ++d)
      out.data(t, d) = (ft.data(t, d) - stats.mean[d]) / std::max(stats.std[d], kMinStd);
  return out;
}

inline FeatureTensor invert_norm(const FeatureTensor& ft, const NormStats& stats) {
  FeatureTensor out = ft;
  for (std::size_t t = 0; t < ft.data.rows; ++t)
    for (int d = 0; d < kDims; ++d)
      out.data(t, d) = ft.data(t, d) * std::max(stats.std[d], kMinStd) + stats.mean[d];
  return out;
}

inline nlohmann::json to_json(const NormStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

inline NormStats norm_from_json(const nlohmann::json& j) {
  NormStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  if (s.mean.size() != static_cast<std::size_t>(kDims) || s.std.size() != static_cast<std::size_t>(kDims))
    throw FormatError("norm stats must have 60 entries each");
  for (double& v : s.std) v = std::max(v, kMinStd);
  return s;
}

}  // namespace stc::features
