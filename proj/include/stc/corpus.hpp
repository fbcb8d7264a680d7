#pragma once

// Synthetic four-technique singing corpus and its on-disk index.
//
// Layout: <dir>/index.json plus <dir>/<domain>/<domain>_NNN.{wav,stcf}.
// Every fifth clip of a domain is held out for evaluation.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stc/audio_io.hpp"
#include "stc/domain.hpp"
#include "stc/dsp.hpp"
#include "stc/feature_codec.hpp"
#include "stc/rng.hpp"
#include "stc/stcf.hpp"
#include "stc/vocoder.hpp"

namespace stc::corpus {

struct DomainRecipe {
  double f0_min = 110, f0_max = 220;
  double tilt_db_per_octave = -6;   // above 500 Hz
  double formant_db = 18;           // vowel formant boost; 0 disables
  double harmonic_decay_db = 0;     // extra attenuation per harmonic number
  std::array<double, 4> band_noise = {0.02, 0.02, 0.02, 0.02};  // noise/harmonic RMS per band
  double jitter = 0;                // relative per-period f0 perturbation (std)
  double shimmer = 0;               // relative per-period amplitude perturbation (std)
  double vibrato_cents = 30;
};

struct CorpusSpec {
  int clips_per_domain = 20;
  double min_seconds = 5;
  double max_seconds = 12;
  int holdout_every = 5;
  std::array<DomainRecipe, kNumDomains> domains;
};

inline CorpusSpec default_spec() {
  CorpusSpec s;
  auto& chest = s.domains[index_of(Domain::chest)];
  chest = {110, 220, -6, 18, 0, {0.01, 0.01, 0.02, 0.02}, 0, 0, 30};
  auto& falsetto = s.domains[index_of(Domain::falsetto)];
  falsetto = {300, 600, -15, 12, 0, {0.02, 0.05, 0.5, 0.2}, 0, 0, 40};
  auto& whistle = s.domains[index_of(Domain::whistle)];
  whistle = {1000, 2500, -3, 0, 14, {0.01, 0.05, 0.2, 1.5}, 0, 0, 20};
  auto& raspy = s.domains[index_of(Domain::raspy)];
  raspy = {110, 220, -6, 18, 0, {1.0, 0.15, 0.05, 0.05}, 0.03, 0.2, 15};
  return s;
}

inline nlohmann::json to_json(const CorpusSpec& s) {
  nlohmann::json d = nlohmann::json::object();
  for (int i = 0; i < kNumDomains; ++i) {
    const auto& r = s.domains[i];
    d[std::string(kDomainNames[i])] = {{"f0_min", r.f0_min},
                                       {"f0_max", r.f0_max},
                                       {"tilt_db_per_octave", r.tilt_db_per_octave},
                                       {"formant_db", r.formant_db},
                                       {"harmonic_decay_db", r.harmonic_decay_db},
                                       {"band_noise", r.band_noise},
                                       {"jitter", r.jitter},
                                       {"shimmer", r.shimmer},
                                       {"vibrato_cents", r.vibrato_cents}};
  }
  return {{"clips_per_domain", s.clips_per_domain},
          {"min_seconds", s.min_seconds},
          {"max_seconds", s.max_seconds},
          {"holdout_every", s.holdout_every},
          {"domains", d}};
}

// Missing keys keep their defaults.
inline CorpusSpec spec_from_json(const nlohmann::json& j) {
  CorpusSpec s = default_spec();
  try {
    s.clips_per_domain = j.value("clips_per_domain", s.clips_per_domain);
    s.min_seconds = j.value("min_seconds", s.min_seconds);
    s.max_seconds = j.value("max_seconds", s.max_seconds);
    s.holdout_every = j.value("holdout_every", s.holdout_every);
    if (j.contains("domains")) {
      for (const auto& [name, r] : j.at("domains").items()) {
        auto& d = s.domains[index_of(parse_domain(name))];
        d.f0_min = r.value("f0_min", d.f0_min);
        d.f0_max = r.value("f0_max", d.f0_max);
        d.tilt_db_per_octave = r.value("tilt_db_per_octave", d.tilt_db_per_octave);
        d.formant_db = r.value("formant_db", d.formant_db);
        d.harmonic_decay_db = r.value("harmonic_decay_db", d.harmonic_decay_db);
        d.band_noise = r.value("band_noise", d.band_noise);
        d.jitter = r.value("jitter", d.jitter);
        d.shimmer = r.value("shimmer", d.shimmer);
        d.vibrato_cents = r.value("vibrato_cents", d.vibrato_cents);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid corpus spec: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("invalid corpus spec: ") + e.what());
  }
  if (s.clips_per_domain < 1) throw ConfigError("clips_per_domain must be positive");
  if (!(s.min_seconds > 0) || s.max_seconds < s.min_seconds) throw ConfigError("invalid clip duration range");
  if (s.holdout_every < 2) throw ConfigError("holdout_every must be at least 2");
  for (const auto& d : s.domains) {
    if (!(d.f0_min >= vocoder::kF0Floor) || d.f0_max < d.f0_min || d.f0_max > 3000)
      throw ConfigError("domain f0 range must lie within [55, 3000] Hz");
    for (double v : d.band_noise)
      if (v < 0) throw ConfigError("band_noise must be non-negative");
  }
  return s;
}

namespace detail {

struct Vowel {
  double f1, f2, f3;
};
inline constexpr std::array<Vowel, 5> kVowels = {{
    {800, 1200, 2500}, {400, 2000, 2600}, {300, 2300, 3000}, {500, 900, 2400}, {350, 800, 2300}}};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + a * 0xbf58476d1ce4e5b9ULL + b * 0x94d049bb133111ebULL + 1;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Harmonic gain (linear amplitude) at frequency f for harmonic number h.
inline double harmonic_gain(const DomainRecipe& r, const Vowel& v, double f, int h) {
  double db = r.tilt_db_per_octave * std::log2(std::max(f, 500.0) / 500.0);
  db -= r.harmonic_decay_db * (h - 1);
  if (r.formant_db > 0) {
    const double bw[3] = {90, 120, 180};
    const double fc[3] = {v.f1, v.f2, v.f3};
    double boost = 0;
    for (int k = 0; k < 3; ++k) boost += std::exp(-0.5 * std::pow((f - fc[k]) / (2 * bw[k]), 2)) * (1.0 - 0.25 * k);
    db += r.formant_db * boost;
  }
  return std::pow(10.0, db / 20.0);
}

struct Note {
  double start, f0;
  Vowel vowel;
  bool rest;
};

inline std::vector<Note> phrase(const DomainRecipe& r, double seconds, Rng& rng) {
  std::vector<Note> notes;
  double t = 0;
  while (t < seconds) {
    Note n;
    n.start = t;
    n.rest = !notes.empty() && rng.uniform() < 0.12;
    n.f0 = r.f0_min * std::pow(r.f0_max / r.f0_min, rng.uniform());
    n.vowel = kVowels[rng.below(kVowels.size())];
    notes.push_back(n);
    t += n.rest ? rng.uniform(0.08, 0.2) : rng.uniform(0.3, 1.0);
  }
  return notes;
}

}  // namespace detail

// One sung phrase for `recipe`, deterministic in `rng`.
inline AudioClip synth_phrase(const DomainRecipe& recipe, double seconds, Rng& rng) {
  constexpr double fs = vocoder::kSampleRate;
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
  const auto notes = detail::phrase(recipe, seconds, rng);
  const double vib_rate = rng.uniform(4.5, 6.5);
  const double vib_depth = recipe.vibrato_cents / 1200.0;

  std::vector<double> f0(n), amp(n), voiced(n);
  std::vector<detail::Vowel> vowel(n);
  std::size_t k = 0;
  double glide_f0 = notes.front().f0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i / fs;
    while (k + 1 < notes.size() && notes[k + 1].start <= t) ++k;
    const auto& note = notes[k];
    const double note_end = k + 1 < notes.size() ? notes[k + 1].start : seconds;
    glide_f0 += (note.f0 - glide_f0) * (1.0 - std::exp(-1.0 / (0.03 * fs)));
    f0[i] = glide_f0 * std::pow(2.0, vib_depth * std::sin(2 * M_PI * vib_rate * t));
    const double attack = std::min(1.0, (t - note.start) / 0.04);
    const double release = std::min(1.0, (note_end - t) / 0.04);
    voiced[i] = note.rest ? 0.0 : std::max(0.0, std::min(attack, release));
    amp[i] = 0.85 + 0.15 * std::sin(2 * M_PI * 0.7 * t);
    vowel[i] = note.vowel;
  }

  // Harmonic part, amplitudes refreshed once per hop.
  std::vector<double> harm(n, 0.0);
  double phase = 0, jit = 1, shim = 1;
  std::vector<double> gains;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = f0[i] * jit;
    if (i % vocoder::kHop == 0) {
      const int nh = std::max(1, static_cast<int>(7800.0 / f0[i]));
      gains.assign(nh, 0.0);
      double norm = 0;
      for (int h = 1; h <= nh; ++h) {
        gains[h - 1] = detail::harmonic_gain(recipe, vowel[i], h * f0[i], h);
        norm += gains[h - 1] * gains[h - 1];
      }
      for (double& g : gains) g /= std::sqrt(norm / 2);  // unit-RMS harmonic sum
    }
    phase += 2 * M_PI * f / fs;
    if (phase >= 2 * M_PI) {
      phase -= 2 * M_PI;
      if (recipe.jitter > 0) jit = std::clamp(1.0 + recipe.jitter * rng.normal(), 0.8, 1.2);
      if (recipe.shimmer > 0) shim = std::clamp(1.0 + recipe.shimmer * rng.normal(), 0.2, 1.8);
    }
    double s = 0;
    for (std::size_t h = 0; h < gains.size(); ++h) s += gains[h] * std::sin((h + 1) * phase);
    harm[i] = s * shim * voiced[i] * amp[i];
  }

  // Band-shaped noise: white noise scaled per 2 kHz band in the frequency domain.
  const int nfft = dsp::next_pow2(static_cast<int>(std::max<std::size_t>(n, 2)));
  std::vector<double> white(nfft, 0.0);
  for (std::size_t i = 0; i < n; ++i) white[i] = rng.normal();
  auto spec = dsp::rfft(white, nfft);
  for (std::size_t b = 0; b < spec.size(); ++b) {
    const double hz = b * fs / nfft;
    const int band = std::min(3, static_cast<int>(hz / vocoder::kBandWidthHz));
    // Band energy relative to a unit-RMS harmonic sum, spread over 2 kHz.
    spec[b] *= recipe.band_noise[band] * std::sqrt(2.0);
  }
  const auto noise = dsp::irfft(spec, nfft);
  const double floor_noise = 0.003;

  AudioClip clip;
  clip.sample_rate = vocoder::kSampleRate;
  clip.samples.resize(n);
  double peak = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double env = std::max(voiced[i], 0.0) * amp[i];
    clip.samples[i] = harm[i] + noise[i] * (env + floor_noise);
    peak = std::max(peak, std::abs(clip.samples[i]));
  }
  const double target = rng.uniform(0.5, 0.9);
  if (peak > 0)
    for (double& s : clip.samples) s *= target / peak;
  return clip;
}

struct ClipEntry {
  std::string wav;       // relative to the corpus root
  std::string features;  // STCF with feature chunk, relative
  Domain domain = Domain::chest;
  std::size_t frames = 0;
  bool holdout = false;
};

struct CorpusIndex {
  std::filesystem::path root;
  std::vector<ClipEntry> clips;

  std::vector<const ClipEntry*> of(Domain d, bool holdout) const {
    std::vector<const ClipEntry*> out;
    for (const auto& c : clips)
      if (c.domain == d && c.holdout == holdout) out.push_back(&c);
    return out;
  }
};

inline nlohmann::json to_json(const CorpusIndex& idx) {
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : idx.clips)
    clips.push_back({{"wav", c.wav},
                     {"features", c.features},
                     {"domain", std::string(name_of(c.domain))},
                     {"frames", c.frames},
                     {"split", c.holdout ? "holdout" : "train"}});
  return {{"format", "stc-corpus"}, {"version", 1}, {"clips", clips}};
}

inline CorpusIndex load_index(const std::filesystem::path& dir) {
  const auto path = dir / "index.json";
  std::ifstream in(path);
  if (!in) throw DataError("no corpus index at " + path.string());
  CorpusIndex idx;
  idx.root = dir;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& c : j.at("clips")) {
      ClipEntry e;
      e.wav = c.at("wav").get<std::string>();
      e.features = c.at("features").get<std::string>();
      e.domain = parse_domain(c.at("domain").get<std::string>());
      e.frames = c.at("frames").get<std::size_t>();
      e.holdout = c.at("split").get<std::string>() == "holdout";
      idx.clips.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed corpus index " + path.string() + ": " + e.what());
  }
  return idx;
}

inline features::FeatureTensor load_features(const CorpusIndex& idx, const ClipEntry& e) {
  auto file = stcf::read(idx.root / e.features);
  if (!file.features) throw DataError(e.features + " has no feature chunk");
  return std::move(*file.features);
}

// Writes the corpus under `dir` and returns its index. Identical (spec, seed)
// produce byte-identical files.
inline CorpusIndex make_synthetic_corpus(const CorpusSpec& spec, std::uint64_t seed,
                                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  CorpusIndex idx;
  idx.root = dir;
  for (int d = 0; d < kNumDomains; ++d) {
    const std::string name(kDomainNames[d]);
    std::filesystem::create_directories(dir / name);
    for (int c = 0; c < spec.clips_per_domain; ++c) {
      Rng rng(detail::mix_seed(seed, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(c)));
      const double seconds = std::round(rng.uniform(spec.min_seconds, spec.max_seconds) * 200.0) / 200.0;
      const AudioClip clip = synth_phrase(spec.domains[d], seconds, rng);
      char stem[64];
      std::snprintf(stem, sizeof stem, "%s/%s_%03d", name.c_str(), name.c_str(), c);
      ClipEntry e;
      e.wav = std::string(stem) + ".wav";
      e.features = std::string(stem) + ".stcf";
      e.domain = domain_from_index(d);
      e.holdout = c % spec.holdout_every == spec.holdout_every - 1;
      write_wav(clip, dir / e.wav);
      const auto frames = vocoder::analyze(clip);
      const auto feats = features::encode(frames, e.domain);
      stcf::write(dir / e.features, frames, &feats);
      e.frames = frames.size();
      idx.clips.push_back(std::move(e));
    }
  }
  std::ofstream out(dir / "index.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "index.json").string());
  out << to_json(idx).dump(2) << "\n";
  std::ofstream spec_out(dir / "spec.json", std::ios::trunc);
  spec_out << to_json(spec).dump(2) << "\n";
  return idx;
}

}  // namespace stc::corpus
