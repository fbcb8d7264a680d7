#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>

#include "stc/vocoder.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "vowels.hpp"

using namespace stc;
using namespace stc::vocoder;
namespace ts = testing_support;
using ts::score_f0;

namespace {

double rms(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v * v;
  return x.empty() ? 0.0 : std::sqrt(s / x.size());
}

VocoderFrames flat_frames(std::size_t n, double f0, double level, double ap) {
  VocoderFrames f;
  f.f0.assign(n, f0);
  f.sp = Matrix(n, kSpBins, level);
  f.ap = Matrix(n, kApBands, ap);
  return f;
}

}  // namespace

TEST(EstimateF0, Sine440) {
  const auto track = estimate_f0(ts::tone(440, 1.0));
  const auto s = score_f0(track.f0, [](double) { return 440.0; });
  EXPECT_LT(s.median_cents, 10.0);
  EXPECT_GE(s.voiced_fraction, 0.95);
  ASSERT_EQ(track.periodicity.size(), track.f0.size());
}

class F0Sweep : public ::testing::TestWithParam<std::tuple<double, double>> {};

TEST_P(F0Sweep, SawtoothWithAndWithoutVibrato) {
  const auto [hz, vib] = GetParam();
  const auto track = estimate_f0(ts::sawtooth(hz, 1.0, vib));
  const auto s = score_f0(track.f0, [&](double t) { return ts::vibrato_f0(hz, t, vib); });
  EXPECT_LT(s.median_cents, 10.0) << hz << " Hz, vibrato " << vib;
  EXPECT_GT(s.voiced_fraction, 0.95) << hz << " Hz, vibrato " << vib;
}

INSTANTIATE_TEST_SUITE_P(Pitches, F0Sweep,
                         ::testing::Combine(::testing::Values(110.0, 220.0, 440.0, 880.0, 1500.0, 2500.0),
                                            ::testing::Values(0.0, 50.0)));

TEST(EstimateF0, WhiteNoiseMostlyUnvoiced) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto track = estimate_f0(ts::white_noise(1.0, seed));
    int unvoiced = 0;
    for (double f : track.f0) unvoiced += f == 0.0;
    EXPECT_GE(unvoiced, 0.9 * track.f0.size()) << seed;
  }
}

TEST(EstimateF0, SilenceAllUnvoiced) {
  AudioClip c;
  c.samples.assign(8000, 0.0);
  for (double f : estimate_f0(c).f0) EXPECT_EQ(f, 0.0);
}

TEST(EstimateF0, ShortClipRejected) {
  AudioClip c;
  c.samples.assign(kF0Window - 1, 0.0);
  EXPECT_THROW(estimate_f0(c), ArgumentError);
  AudioClip wrong_rate = ts::tone(100, 0.1, 48000);
  EXPECT_THROW(estimate_f0(wrong_rate), ArgumentError);
}

TEST(EstimateF0, VoicedValuesInRange) {
  const auto track = estimate_f0(ts::sawtooth(180, 0.5, 80));
  for (double f : track.f0) EXPECT_TRUE(f == 0.0 || (f >= kF0Floor && f <= kF0Ceil));
  for (double p : track.periodicity) EXPECT_TRUE(p >= 0.0 && p <= 1.0);
}

TEST(EstimateEnvelope, PulseTrainThroughOnePoleFilter) {
  // y[n] = x[n] + a y[n-1] driven by unit impulses every 80 samples. The power
  // spectral density of the output is |H|^2 / period.
  const double a = 0.9;
  const int period = 80;
  AudioClip c;
  c.samples.assign(16000, 0.0);
  for (std::size_t n = 0; n < c.samples.size(); n += period) c.samples[n] = 1.0;
  double y = 0;
  for (double& s : c.samples) s = y = s + a * y;
  const auto track = estimate_f0(c);
  const Matrix sp = estimate_envelope(c, track.f0);
  for (std::size_t t : {50u, 100u, 150u}) {
    ASSERT_NEAR(track.f0[t], 200.0, 0.5);
    double se = 0;
    int n = 0;
    for (int k = 0; k < kSpBins; ++k) {
      const double hz = k * 16000.0 / kFftSize;
      if (hz < 300 || hz > 6000) continue;
      const double w = 2 * M_PI * hz / 16000;
      const double h2 = 1.0 / std::norm(1.0 - a * std::polar(1.0, -w)) / period;
      const double d = 10 * std::log10(sp(t, k) / h2);
      se += d * d;
      ++n;
    }
    EXPECT_LT(std::sqrt(se / n), 2.0) << "frame " << t;
  }
}

TEST(EstimateEnvelope, NoHarmonicRippleOnFlatPulseTrain) {
  AudioClip c;
  c.samples.assign(16000, 0.0);
  for (std::size_t n = 0; n < c.samples.size(); n += 64) c.samples[n] = 1.0;  // 250 Hz
  const auto track = estimate_f0(c);
  const Matrix sp = estimate_envelope(c, track.f0);
  const std::size_t t = 100;
  ASSERT_GT(track.f0[t], 0.0);
  double lo = 1e300, hi = 0;
  for (int k = 0; k < kSpBins; ++k) {
    const double hz = k * 16000.0 / kFftSize;
    if (hz < 250 || hz > 7500) continue;
    lo = std::min(lo, sp(t, k));
    hi = std::max(hi, sp(t, k));
  }
  EXPECT_LT(10 * std::log10(hi / lo), 3.0);
}

TEST(EstimateEnvelope, WhiteNoiseAverageIsFlat) {
  const double sigma = 0.1;
  const auto c = ts::white_noise(4.0, 7, 16000, sigma);
  const auto frames = analyze(c);
  std::vector<double> avg(kSpBins, 0.0);
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (int k = 0; k < kSpBins; ++k) avg[k] += frames.sp(i, k) / frames.size();
  const double expect_db = 10 * std::log10(sigma * sigma);
  for (int k = 0; k < kSpBins; ++k) {
    const double hz = k * 16000.0 / kFftSize;
    if (hz < 500 || hz > 7000) continue;
    EXPECT_NEAR(10 * std::log10(avg[k]), expect_db, 3.0) << hz;
  }
}

TEST(EstimateEnvelope, SilenceIsFloor) {
  AudioClip c;
  c.samples.assign(4000, 0.0);
  const auto f0 = std::vector<double>(frame_count(c.samples.size()), 0.0);
  const Matrix sp = estimate_envelope(c, f0);
  for (double v : sp.data) EXPECT_NEAR(v, kSpFloor, kSpFloor * 1e-6);
}

TEST(EstimateEnvelope, MisalignedTrackRejected) {
  const auto c = ts::tone(200, 0.2);
  std::vector<double> f0(frame_count(c.samples.size()) + 1, 0.0);
  EXPECT_THROW(estimate_envelope(c, f0), ArgumentError);
  EXPECT_THROW(estimate_aperiodicity(c, f0), ArgumentError);
}

TEST(EstimateAperiodicity, PureToneBandZeroIsPeriodic) {
  const auto c = ts::tone(300, 1.0);
  const std::vector<double> f0(frame_count(c.samples.size()), 300.0);
  const Matrix ap = estimate_aperiodicity(c, f0);
  for (std::size_t t = 10; t + 10 < ap.rows; ++t) EXPECT_LT(ap(t, 0), 0.2) << t;
}

TEST(EstimateAperiodicity, WhiteNoiseIsAperiodic) {
  const auto c = ts::white_noise(1.0, 11);
  // Force a pitch hypothesis so the periodicity measure is actually exercised.
  const std::vector<double> f0(frame_count(c.samples.size()), 200.0);
  const Matrix ap = estimate_aperiodicity(c, f0);
  int good = 0, total = 0;
  for (std::size_t t = 10; t + 10 < ap.rows; ++t)
    for (int b = 0; b < kApBands; ++b) {
      ++total;
      good += ap(t, b) > 0.8;
    }
  EXPECT_GE(good, 0.95 * total);
  const auto frames = analyze(c);
  for (double v : frames.ap.data) EXPECT_GT(v, 0.8);
}

TEST(EstimateAperiodicity, UnvoicedFramesAreAllOnes) {
  const auto c = ts::sawtooth(200, 0.3);
  std::vector<double> f0(frame_count(c.samples.size()), 200.0);
  f0[10] = 0.0;
  const Matrix ap = estimate_aperiodicity(c, f0);
  for (int b = 0; b < kApBands; ++b) EXPECT_EQ(ap(10, b), 1.0);
  for (double v : ap.data) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(Analyze, FrameCounts) {
  EXPECT_EQ(analyze(ts::tone(200, 2.0)).size(), 401u);
  AudioClip five_ms;
  five_ms.samples.assign(80, 0.0);
  const auto f = analyze(five_ms);
  EXPECT_EQ(f.size(), 2u);
  EXPECT_EQ(f.sp.rows, 2u);
  EXPECT_EQ(f.ap.rows, 2u);
  for (std::size_t n : {0u, 1u, 79u, 80u, 81u, 12345u}) EXPECT_EQ(frame_count(n), n / 80 + 1);
}

TEST(Analyze, OutputsSatisfyInvariants) {
  const auto f = analyze(ts::sung_vowel(ts::vowels()[0], 220, 0.5));
  EXPECT_NO_THROW(validate(f));
  EXPECT_EQ(f.sp.cols, 513u);
  EXPECT_EQ(f.ap.cols, 4u);
  EXPECT_DOUBLE_EQ(f.hop_seconds, 0.005);
  EXPECT_EQ(f.sample_rate, 16000);
}

TEST(Analyze, ConcatenationInvariance) {
  const auto a = ts::sawtooth(220, 1.0, 30);
  const auto b = ts::sung_vowel(ts::vowels()[1], 330, 1.0);
  AudioClip ab = a;
  ab.samples.insert(ab.samples.end(), b.samples.begin(), b.samples.end());
  const auto fa = analyze(a), fb = analyze(b), fab = analyze(ab);
  const std::size_t na = a.samples.size() / kHop;  // frame index where b starts
  // Frames within reach of the joint see the other clip; compare beyond it.
  const std::size_t margin = 3 + (kF0Window / 2 + kHop - 1) / kHop;
  auto same = [](const VocoderFrames& x, std::size_t i, const VocoderFrames& y, std::size_t j) {
    if (x.f0[i] != y.f0[j]) return false;
    for (int k = 0; k < kSpBins; ++k)
      if (std::abs(std::log(x.sp(i, k) / y.sp(j, k))) > 1e-9) return false;
    for (int k = 0; k < kApBands; ++k)
      if (std::abs(x.ap(i, k) - y.ap(j, k)) > 1e-9) return false;
    return true;
  };
  int mismatches = 0;
  for (std::size_t i = margin; i + margin < na; ++i) mismatches += !same(fa, i, fab, i);
  for (std::size_t j = margin; j + margin < fb.size(); ++j) mismatches += !same(fb, j, fab, na + j);
  EXPECT_EQ(mismatches, 0);
}

TEST(Synthesize, LengthIsFramesMinusOneHops) {
  for (std::size_t n : {1u, 2u, 50u}) EXPECT_EQ(synthesize(flat_frames(n, 200, 1e-3, 0.5)).samples.size(), (n - 1) * 80);
}

TEST(Synthesize, UnvoicedFloorIsNearSilent) {
  const auto out = synthesize(flat_frames(100, 0.0, kSpFloor, 1.0));
  EXPECT_LT(rms(out.samples), 1e-4);
}

TEST(Synthesize, AutocorrelationPeakAtPitchLag) {
  const auto out = synthesize(flat_frames(200, 220.0, 1e-2, 0.0));
  const std::vector<double> x(out.samples.begin() + 1600, out.samples.end() - 1600);
  int best_lag = 0;
  double best = -1e300;
  for (int lag = 40; lag < 120; ++lag) {
    double acc = 0;
    for (std::size_t i = 0; i + lag < x.size(); ++i) acc += x[i] * x[i + lag];
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  EXPECT_NEAR(best_lag, 16000.0 / 220.0, 1.0);
}

TEST(Synthesize, EnergyScalesWithEnvelope) {
  for (double f0 : {0.0, 180.0}) {
    auto f = flat_frames(200, f0, 1e-3, 0.3);
    const double base = rms(synthesize(f).samples);
    for (double g : {4.0, 0.25, 100.0}) {
      auto scaled = f;
      for (double& v : scaled.sp.data) v *= g;
      EXPECT_NEAR(rms(synthesize(scaled).samples) / base, std::sqrt(g), 0.05 * std::sqrt(g)) << f0 << " " << g;
    }
  }
}

TEST(Synthesize, F0BypassFidelity) {
  for (double f0 : {110.0, 262.0, 523.0, 1200.0}) {
    const auto out = synthesize(flat_frames(300, f0, 1e-3, 0.1));
    const auto track = estimate_f0(out);
    const auto s = score_f0(track.f0, [&](double) { return f0; });
    EXPECT_LT(s.median_cents, 15.0) << f0;
  }
}

TEST(Synthesize, Deterministic) {
  const auto f = flat_frames(60, 150, 1e-3, 0.5);
  EXPECT_EQ(synthesize(f, 3).samples, synthesize(f, 3).samples);
  EXPECT_NE(synthesize(f, 3).samples, synthesize(f, 4).samples);
}

TEST(Synthesize, InvalidFramesRejected) {
  auto f = flat_frames(10, 200, 1e-3, 0.5);
  auto bad_ap = f;
  bad_ap.ap(3, 1) = 1.5;
  EXPECT_THROW(synthesize(bad_ap), ArgumentError);
  auto bad_f0 = f;
  bad_f0.f0[2] = 30.0;
  EXPECT_THROW(synthesize(bad_f0), ArgumentError);
  auto bad_sp = f;
  bad_sp.sp(1, 1) = 0.0;
  EXPECT_THROW(synthesize(bad_sp), ArgumentError);
  auto bad_rows = f;
  bad_rows.f0.push_back(0.0);
  EXPECT_THROW(synthesize(bad_rows), ArgumentError);
}

TEST(RoundTrip, VowelSuiteWithinBaseline) {
  std::ifstream in(std::string(STC_TEST_DATA) + "/vocoder_baseline.json");
  ASSERT_TRUE(in);
  const double baseline = nlohmann::json::parse(in).at("mcd_db").get<double>();
  const double measured = ts::vowel_suite_mcd();
  EXPECT_LE(measured, 1.15 * baseline) << "measured " << measured << " dB";
}
