#pragma once

// Conversion pipeline, objective metrics, the domain classifier used to score
// conversions, and the bottleneck-depth grid experiment.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "stc/audio_io.hpp"
#include "stc/trainer.hpp"
#include "stc/vocoder.hpp"

namespace stc::toolkit {

using features::FeatureTensor;
using trainer::DomainSet;

// Mel-cepstral distortion in dB over coefficients 1..55 (energy excluded).
inline double mcd(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw ArgumentError("mcd: frame counts differ (" + std::to_string(a.rows) + " vs " +
                                            std::to_string(b.rows) + ")");
  if (a.cols < features::kMccOrder || b.cols < features::kMccOrder) throw ArgumentError("mcd: too few columns");
  if (a.rows == 0) throw ArgumentError("mcd: empty input");
  const double k = 10.0 / std::log(10.0) * std::sqrt(2.0);
  double total = 0;
  for (std::size_t t = 0; t < a.rows; ++t) {
    double s = 0;
    for (int d = 1; d < features::kMccOrder; ++d) {
      const double diff = a(t, d) - b(t, d);
      s += diff * diff;
    }
    total += std::sqrt(s);
  }
  return k * total / static_cast<double>(a.rows);
}

inline double mcd(const FeatureTensor& a, const FeatureTensor& b) { return mcd(a.data, b.data); }

// A trained generator ready for inference.
struct Model {
  stargan::GeneratorConfig config;
  std::unique_ptr<stargan::Generator<float>> generator;
  features::NormStats stats;
  nlohmann::json manifest;
};

inline Model load_model(const std::filesystem::path& path) {
  const auto ck = nn::load_checkpoint(path);
  const auto meta = trainer::parse_metadata(ck);
  Model m;
  try {
    m.manifest = meta.at("manifest");
    if (m.manifest.at("num_domains").get<int>() != kNumDomains)
      throw FormatError("checkpoint has " + m.manifest.at("num_domains").dump() + " domains, expected 4");
    m.config.depth = m.manifest.at("depth").get<int>();
    m.config.channel_divisor = m.manifest.at("channel_divisor").get<int>();
    m.stats = features::norm_from_json(meta.at("norm_stats"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad checkpoint manifest: ") + e.what());
  }
  Rng rng(0);
  m.generator = std::make_unique<stargan::Generator<float>>(m.config, rng);
  auto params = m.generator->params();
  nn::restore<float>(ck, params);
  return m;
}

// Right-pads the width to a multiple of 4 by repeating the last frame.
inline Matrix pad_to_multiple(const Matrix& m, int multiple) {
  if (m.rows == 0) throw ArgumentError("cannot convert an empty feature sequence");
  const std::size_t rows = (m.rows + multiple - 1) / multiple * multiple;
  Matrix out(rows, m.cols);
  for (std::size_t t = 0; t < rows; ++t) {
    const auto src = m.row(std::min(t, m.rows - 1));
    std::copy(src.begin(), src.end(), out.row(t).begin());
  }
  return out;
}

// Converts normalized frames (frames x 60) to `target`; returns normalized frames.
inline Matrix convert_normalized(stargan::Generator<float>& g, const Matrix& x, int target) {
  const Matrix padded = pad_to_multiple(x, 4);
  const Matrix* ptr = &padded;
  nn::Tape<float> t;
  const int attrs[1] = {target};
  nn::Var y = g.generate(t, t.constant(trainer::to_batch<float>(std::span<const Matrix* const>(&ptr, 1))), attrs,
                         false);
  Matrix out = trainer::from_batch(t.value(y), 0);
  out.rows = x.rows;
  out.data.resize(x.rows * x.cols);
  return out;
}

inline std::vector<double> shift_f0(std::span<const double> f0, double semitones) {
  std::vector<double> out(f0.begin(), f0.end());
  if (semitones == 0.0) return out;
  const double ratio = std::pow(2.0, semitones / 12.0);
  for (double& v : out)
    if (v > 0) v *= ratio;
  return out;
}

// Converts raw features; the f0 sidecar is copied (and optionally shifted) unchanged.
inline FeatureTensor convert_features(Model& model, const FeatureTensor& input, Domain target,
                                      double shift_semitones = 0.0) {
  const auto normed = features::apply_norm(input, model.stats);
  FeatureTensor out;
  out.data = convert_normalized(*model.generator, normed.data, index_of(target));
  out.domain = target;
  out = features::invert_norm(out, model.stats);
  out.domain = target;
  out.f0 = shift_f0(input.f0, shift_semitones);
  return out;
}

struct ConversionRequest {
  std::filesystem::path input;
  Domain target = Domain::chest;
  std::filesystem::path checkpoint;
  double pitch_shift_semitones = 0.0;
  std::filesystem::path output;
};

struct ConversionResult {
  FeatureTensor source;     // analysis of the input
  FeatureTensor converted;  // generator output with the f0 sidecar, before synthesis
  AudioClip audio;
};

inline ConversionResult convert_clip(Model& model, const AudioClip& clip, Domain target, double shift = 0.0) {
  AudioClip in = ingest(clip);
  if (in.sample_rate != vocoder::kSampleRate) in = resample(in, vocoder::kSampleRate);
  ConversionResult r;
  const auto frames = vocoder::analyze(in);
  r.source = features::encode(frames, target);
  r.converted = convert_features(model, r.source, target, shift);
  // The shifted sidecar is kept exact; only the synthesizer sees the clamped range.
  auto frames_out = features::decode(r.converted);
  for (double& f : frames_out.f0)
    if (f > 0) f = std::clamp(f, vocoder::kF0Floor, vocoder::kF0Ceil);
  r.audio = vocoder::synthesize(frames_out);
  // Synthesis yields (frames - 1) hops; match the input length exactly.
  r.audio.samples.resize(in.samples.size(), 0.0);
  return r;
}

inline ConversionResult convert_file(const ConversionRequest& req) {
  Model model = load_model(req.checkpoint);
  auto r = convert_clip(model, read_wav(req.input), req.target, req.pitch_shift_semitones);
  if (!req.output.empty()) write_wav(r.audio, req.output);
  return r;
}

// ---------------------------------------------------------------------------
// Domain classifier: the discriminator's trunk and class head trained alone.

struct ClassifierConfig {
  long iterations = 400;
  double lr = 1e-3;
  int batch_size = 8;
  int crop_frames = 400;
  int channel_divisor = 16;
  std::uint64_t seed = 1234;
};

using Classifier = stargan::Discriminator<float>;

inline std::unique_ptr<Classifier> train_classifier(const DomainSet& train, const ClassifierConfig& cfg) {
  Rng init(cfg.seed);
  stargan::DiscriminatorConfig dc;
  dc.channel_divisor = cfg.channel_divisor;
  auto net = std::make_unique<Classifier>(dc, init);
  auto params = net->params();
  Rng rng(cfg.seed + 1);
  for (long it = 0; it < cfg.iterations; ++it) {
    std::vector<trainer::Crop> crops;
    std::vector<const Matrix*> ptrs;
    std::vector<int> labels;
    for (int i = 0; i < cfg.batch_size; ++i) crops.push_back(trainer::sample_crop(train, cfg.crop_frames, rng));
    for (const auto& c : crops) {
      ptrs.push_back(&c.frames);
      labels.push_back(c.src);
    }
    nn::Tape<float> t;
    const auto j = (*net)(t, t.constant(trainer::to_batch<float>(ptrs)));
    nn::Var loss = nn::cross_entropy(t, j.logits, labels);
    nn::zero_grads<float>(params);
    t.backward(loss);
    const double lr = cfg.lr * (1.0 - static_cast<double>(it) / static_cast<double>(cfg.iterations));
    nn::adam_step<float>(params, lr, {0.9, 0.999, 1e-8});
  }
  return net;
}

// Predicted domain index per batch item.
inline std::vector<int> classify(Classifier& net, std::span<const Matrix* const> crops) {
  nn::Tape<float> t;
  const auto j = net(t, t.constant(trainer::to_batch<float>(crops)), false);
  const auto& z = t.value(j.logits);
  std::vector<int> out;
  for (int i = 0; i < z.dim(0); ++i) {
    const float* row = z.data.data() + static_cast<std::size_t>(i) * z.dim(1);
    out.push_back(static_cast<int>(std::max_element(row, row + z.dim(1)) - row));
  }
  return out;
}

struct EvalCrop {
  Matrix frames;  // normalized
  int domain;
};

// Deterministic crops: `per_clip` evenly spaced windows from every clip.
inline std::vector<EvalCrop> eval_crops(const DomainSet& set, int width, int per_clip) {
  std::vector<EvalCrop> out;
  for (int d = 0; d < kNumDomains; ++d)
    for (const auto& ft : set.clips[d]) {
      const std::size_t span = ft.data.rows > static_cast<std::size_t>(width) ? ft.data.rows - width : 0;
      for (int k = 0; k < per_clip; ++k) {
        const std::size_t start = per_clip > 1 ? span * k / (per_clip - 1) : span / 2;
        out.push_back({trainer::window(ft.data, start, width), d});
      }
    }
  return out;
}

inline double classifier_accuracy(Classifier& net, const std::vector<EvalCrop>& crops) {
  if (crops.empty()) throw DataError("no evaluation crops");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < crops.size(); i += 8) {
    std::vector<const Matrix*> ptrs;
    for (std::size_t k = i; k < std::min(crops.size(), i + 8); ++k) ptrs.push_back(&crops[k].frames);
    const auto pred = classify(net, ptrs);
    for (std::size_t k = 0; k < pred.size(); ++k) hits += pred[k] == crops[i + k].domain;
  }
  return static_cast<double>(hits) / static_cast<double>(crops.size());
}

struct PairMetrics {
  int src = 0, tgt = 0;
  double mcd = 0;      // converted vs source, dB
  double cls_acc = 0;  // fraction classified as tgt
  int samples = 0;
};

struct EvalReport {
  double recon_l1 = 0;  // normalized-feature l1 with src == tgt
  std::vector<PairMetrics> pairs;
  double mean_cls_acc = 0;  // over non-identity pairs
};

inline EvalReport eval_conversion(stargan::Generator<float>& g, const features::NormStats& stats,
                                  const std::vector<EvalCrop>& crops, Classifier& cls) {
  if (crops.empty()) throw DataError("no evaluation crops");
  EvalReport rep;
  std::array<std::array<PairMetrics, kNumDomains>, kNumDomains> acc{};
  double l1_total = 0;
  std::size_t l1_count = 0;
  auto denorm = [&](const Matrix& m, int d) {
    FeatureTensor ft{m, domain_from_index(d), {}};
    return features::invert_norm(ft, stats).data;
  };
  for (const auto& c : crops) {
    const Matrix src_raw = denorm(c.frames, c.domain);
    for (int tgt = 0; tgt < kNumDomains; ++tgt) {
      const Matrix y = convert_normalized(g, c.frames, tgt);
      if (tgt == c.domain) {
        for (std::size_t i = 0; i < y.data.size(); ++i) l1_total += std::abs(y.data[i] - c.frames.data[i]);
        l1_count += y.data.size();
        continue;
      }
      const Matrix* ptr = &y;
      const int pred = classify(cls, std::span<const Matrix* const>(&ptr, 1)).front();
      auto& p = acc[c.domain][tgt];
      p.src = c.domain;
      p.tgt = tgt;
      p.mcd += mcd(denorm(y, tgt), src_raw);
      p.cls_acc += pred == tgt;
      ++p.samples;
    }
  }
  rep.recon_l1 = l1_total / static_cast<double>(l1_count);
  double sum = 0;
  for (int s = 0; s < kNumDomains; ++s)
    for (int t = 0; t < kNumDomains; ++t) {
      if (s == t || acc[s][t].samples == 0) continue;
      PairMetrics p = acc[s][t];
      p.mcd /= p.samples;
      p.cls_acc /= p.samples;
      sum += p.cls_acc;
      rep.pairs.push_back(p);
    }
  rep.mean_cls_acc = rep.pairs.empty() ? 0.0 : sum / static_cast<double>(rep.pairs.size());
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"src", std::string(kDomainNames[p.src])},
                     {"tgt", std::string(kDomainNames[p.tgt])},
                     {"mcd", p.mcd},
                     {"cls_acc", p.cls_acc},
                     {"samples", p.samples}});
  return {{"recon_l1", r.recon_l1}, {"mean_cls_acc", r.mean_cls_acc}, {"pairs", pairs}};
}

// ---------------------------------------------------------------------------
// Bottleneck grid.

struct GridConfig {
  trainer::TrainConfig base;
  std::vector<int> depths = {2, 3, 4};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  int eval_crops_per_clip = 3;
  ClassifierConfig classifier;
  std::filesystem::path checkpoint_dir;  // when set, every cell's model is saved here
};

inline std::filesystem::path cell_checkpoint(const std::filesystem::path& dir, int depth, std::uint64_t seed) {
  return dir / ("depth" + std::to_string(depth) + "_seed" + std::to_string(seed) + ".stck");
}

struct GridCell {
  int depth = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvalReport eval;
  double final_g_rec = 0;
  double runtime_s = 0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct GridReport {
  nlohmann::json json;
  std::vector<GridCell> cells;
  double classifier_accuracy = 0;
};

using CellCallback = std::function<void(const GridCell&)>;

inline GridReport run_bottleneck_grid(const trainer::TrainingData& data, const GridConfig& cfg,
                                      const CellCallback& on_cell = {}) {
  GridReport rep;
  auto cls = train_classifier(data.train, cfg.classifier);
  const auto crops = eval_crops(data.holdout, cfg.base.crop_frames, cfg.eval_crops_per_clip);
  rep.classifier_accuracy = classifier_accuracy(*cls, crops);

  nlohmann::json rows = nlohmann::json::array();
  for (int depth : cfg.depths) {
    trainer::TrainConfig tc = cfg.base;
    tc.generator.depth = depth;
    nlohmann::json seeds = nlohmann::json::array();
    std::vector<double> recon;
    std::vector<GridCell> ok_cells;
    double runtime = 0;
    for (auto seed : cfg.seeds) {
      GridCell cell;
      cell.depth = depth;
      cell.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        tc.seed = seed;
        trainer::Trainer tr(tc, data);
        const auto log = trainer::train(tr);
        for (auto it = log.rbegin(); it != log.rend(); ++it)
          if (it->g_rec) {
            cell.final_g_rec = *it->g_rec;
            break;
          }
        cell.eval = eval_conversion(tr.generator(), data.stats, crops, *cls);
        if (!cfg.checkpoint_dir.empty()) {
          std::filesystem::create_directories(cfg.checkpoint_dir);
          nn::save_checkpoint(tr.checkpoint(), cell_checkpoint(cfg.checkpoint_dir, depth, seed));
        }
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      cell.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      runtime += cell.runtime_s;
      nlohmann::json sj = {{"seed", seed}, {"runtime_s", cell.runtime_s}};
      if (cell.ok) {
        sj["recon_l1"] = cell.eval.recon_l1;
        sj["final_g_rec"] = cell.final_g_rec;
        sj["mean_cls_acc"] = cell.eval.mean_cls_acc;
        recon.push_back(cell.eval.recon_l1);
        ok_cells.push_back(cell);
      } else {
        sj["error"] = cell.error;
      }
      seeds.push_back(sj);
      if (on_cell) on_cell(cell);
      rep.cells.push_back(std::move(cell));
    }
    nlohmann::json row = {{"bottleneck", stargan::bottleneck_label(tc.generator)},
                          {"depth", depth},
                          {"runtime_s", runtime},
                          {"seeds", seeds}};
    if (ok_cells.empty()) {
      row["status"] = "failed";
      row["recon_l1"] = nullptr;
      row["pairs"] = nlohmann::json::array();
    } else {
      row["status"] = ok_cells.size() == cfg.seeds.size() ? "ok" : "partial";
      row["recon_l1"] = median(recon);
      // Pair metrics averaged over the successful seeds.
      nlohmann::json pairs = nlohmann::json::array();
      double mean_acc = 0;
      const auto& ref = ok_cells.front().eval.pairs;
      for (std::size_t p = 0; p < ref.size(); ++p) {
        double m = 0, a = 0;
        for (const auto& c : ok_cells) {
          m += c.eval.pairs[p].mcd;
          a += c.eval.pairs[p].cls_acc;
        }
        m /= static_cast<double>(ok_cells.size());
        a /= static_cast<double>(ok_cells.size());
        mean_acc += a;
        pairs.push_back({{"src", std::string(kDomainNames[ref[p].src])},
                         {"tgt", std::string(kDomainNames[ref[p].tgt])},
                         {"mcd", m},
                         {"cls_acc", a}});
      }
      row["pairs"] = pairs;
      row["mean_cls_acc"] = ref.empty() ? 0.0 : mean_acc / static_cast<double>(ref.size());
    }
    rows.push_back(row);
  }
  nlohmann::json seeds_json = cfg.seeds;
  rep.json = {{"config",
               {{"train", trainer::to_json(cfg.base)},
                {"depths", cfg.depths},
                {"seeds", seeds_json},
                {"eval_crops_per_clip", cfg.eval_crops_per_clip},
                {"classifier_holdout_accuracy", rep.classifier_accuracy}}},
              {"rows", rows}};
  return rep;
}

// Drops wall-clock fields so reports from separate runs can be compared.
inline nlohmann::json without_runtime(nlohmann::json j) {
  if (j.is_object()) {
    j.erase("runtime_s");
    for (auto& [k, v] : j.items()) v = without_runtime(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = without_runtime(v);
  }
  return j;
}

}  // namespace stc::toolkit
