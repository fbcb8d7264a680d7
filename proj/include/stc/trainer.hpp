#pragma once

// StarGAN training: random fixed-width crops, Adam, linear learning-rate
// decay, and an uneven generator/discriminator update ratio.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "stc/corpus.hpp"
#include "stc/feature_codec.hpp"
#include "stc/nn/adam.hpp"
#include "stc/nn/checkpoint.hpp"
#include "stc/stargan.hpp"

namespace stc::trainer {

using stargan::Discriminator;
using stargan::Generator;

struct TrainConfig {
  long iterations = 2000;
  double lr0 = 1e-4;
  long decay_span = -1;  // < 0: 40% of the budget
  double beta1 = 0.5;
  double beta2 = 0.999;
  int ratio = 3;              // updates of the frequent network per update of the other
  bool invert_ratio = false;  // false: G updated every iteration, D every `ratio`-th
  int crop_frames = 400;
  int batch_size = 4;
  stargan::LossWeights loss;
  std::uint64_t seed = 0;
  stargan::GeneratorConfig generator;
  stargan::DiscriminatorConfig discriminator;
  long snapshot_every = 0;  // 0 disables snapshots

  long span() const { return decay_span < 0 ? std::max(1L, (iterations * 2) / 5) : decay_span; }
  long decay_start() const { return iterations - span(); }

  void validate() const {
    if (iterations < 1) throw ConfigError("iterations must be positive");
    if (span() < 1 || decay_start() < 0) throw ConfigError("decay span must lie in [1, iterations]");
    if (!(lr0 > 0)) throw ConfigError("lr0 must be positive");
    if (ratio < 1) throw ConfigError("update ratio must be at least 1");
    if (crop_frames < 4 || crop_frames % 4 != 0) throw ConfigError("crop_frames must be a positive multiple of 4");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    generator.validate();
    if (generator.channel_divisor != discriminator.channel_divisor)
      throw ConfigError("generator and discriminator must share channel_divisor");
  }
};

inline TrainConfig desk_config(int depth = 3, std::uint64_t seed = 0) {
  TrainConfig c;
  c.seed = seed;
  c.generator.depth = depth;
  c.generator.channel_divisor = 16;
  c.discriminator.channel_divisor = 16;
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},
          {"lr0", c.lr0},
          {"decay_span", c.span()},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"ratio", c.ratio},
          {"invert_ratio", c.invert_ratio},
          {"crop_frames", c.crop_frames},
          {"batch_size", c.batch_size},
          {"lambda_cls", c.loss.cls},
          {"lambda_rec", c.loss.rec},
          {"cycle", c.loss.cycle},
          {"lambda_cyc", c.loss.cyc},
          {"seed", c.seed},
          {"depth", c.generator.depth},
          {"channel_divisor", c.generator.channel_divisor},
          {"snapshot_every", c.snapshot_every}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.iterations = j.at("iterations").get<long>();
    c.lr0 = j.at("lr0").get<double>();
    c.decay_span = j.at("decay_span").get<long>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.ratio = j.at("ratio").get<int>();
    c.invert_ratio = j.at("invert_ratio").get<bool>();
    c.crop_frames = j.at("crop_frames").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.loss.cls = j.at("lambda_cls").get<double>();
    c.loss.rec = j.at("lambda_rec").get<double>();
    c.loss.cycle = j.at("cycle").get<bool>();
    c.loss.cyc = j.at("lambda_cyc").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.generator.depth = j.at("depth").get<int>();
    c.generator.channel_divisor = j.at("channel_divisor").get<int>();
    c.discriminator.channel_divisor = c.generator.channel_divisor;
    c.snapshot_every = j.at("snapshot_every").get<long>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad training config: ") + e.what());
  }
  return c;
}

// Learning rate for 0 <= iter <= iterations: lr0 up to the knee, then linear to 0.
inline double lr_schedule(long iter, const TrainConfig& c) {
  if (iter < 0 || iter > c.iterations) throw ArgumentError("iteration out of range");
  const long knee = c.decay_start();
  if (iter <= knee) return c.lr0;
  return c.lr0 * static_cast<double>(c.iterations - iter) / static_cast<double>(c.span());
}

// Normalized feature tensors of one split, grouped by domain.
struct DomainSet {
  std::array<std::vector<features::FeatureTensor>, kNumDomains> clips;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& c : clips) n += c.size();
    return n;
  }
};

struct Crop {
  Matrix frames;  // crop x 60
  int src = 0;
  int tgt = 0;
  std::size_t clip = 0;
  std::size_t start = 0;
};

// Contiguous window of `width` frames starting at `start`, wrapping circularly
// past the end of short clips.
inline Matrix window(const Matrix& m, std::size_t start, int width) {
  if (m.rows == 0) throw DataError("empty clip");
  Matrix out(static_cast<std::size_t>(width), m.cols);
  for (int t = 0; t < width; ++t) {
    const auto r = m.row((start + static_cast<std::size_t>(t)) % m.rows);
    std::copy(r.begin(), r.end(), out.row(static_cast<std::size_t>(t)).begin());
  }
  return out;
}

// Source domain uniform, clip uniform within it, start uniform over valid
// offsets; target uniform over the other domains.
inline Crop sample_crop(const DomainSet& set, int width, Rng& rng) {
  for (int d = 0; d < kNumDomains; ++d)
    if (set.clips[d].empty()) throw DataError("domain '" + std::string(kDomainNames[d]) + "' has no clips");
  Crop c;
  c.src = static_cast<int>(rng.below(kNumDomains));
  const auto& pool = set.clips[c.src];
  c.clip = rng.below(pool.size());
  const Matrix& m = pool[c.clip].data;
  const std::size_t w = static_cast<std::size_t>(width);
  c.start = m.rows > w ? rng.below(m.rows - w + 1) : 0;
  c.frames = window(m, c.start, width);
  c.tgt = static_cast<int>((c.src + 1 + rng.below(kNumDomains - 1)) % kNumDomains);
  return c;
}

// Packs crops into an (N, 1, 60, W) tensor: feature dimension along height.
template <class T>
nn::Tensor<T> to_batch(std::span<const Matrix* const> crops) {
  const int n = static_cast<int>(crops.size());
  const int w = static_cast<int>(crops.front()->rows);
  const int h = static_cast<int>(crops.front()->cols);
  nn::Tensor<T> x({n, 1, h, w});
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(crops[i]->rows) != w || static_cast<int>(crops[i]->cols) != h)
      throw ArgumentError("crops in a batch must share their shape");
    for (int t = 0; t < w; ++t)
      for (int d = 0; d < h; ++d) x.at(i, 0, d, t) = static_cast<T>((*crops[i])(t, d));
  }
  return x;
}

// Inverse of to_batch for one batch item.
template <class T>
Matrix from_batch(const nn::Tensor<T>& x, int item) {
  const int h = x.dim(2), w = x.dim(3);
  Matrix m(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
  for (int t = 0; t < w; ++t)
    for (int d = 0; d < h; ++d) m(t, d) = static_cast<double>(x.at(item, 0, d, t));
  return m;
}

struct Metrics {
  long iter = 0;
  double lr = 0;
  std::optional<double> g_adv, g_cls, g_rec, d_adv, d_cls;
  bool g_step = false, d_step = false;
};

inline constexpr const char* kLogHeader = "iter,lr,g_adv,g_cls,g_rec,d_adv,d_cls";

inline std::string csv_row(const Metrics& m) {
  std::ostringstream os;
  os << std::setprecision(17) << m.iter << ',' << m.lr;
  for (const auto& v : {m.g_adv, m.g_cls, m.g_rec, m.d_adv, m.d_cls}) {
    os << ',';
    if (v) os << *v;
  }
  return os.str();
}

struct TrainingData {
  DomainSet train;
  DomainSet holdout;
  features::NormStats stats;
};

// Loads both splits and normalizes them with statistics of the training split.
inline TrainingData load_training_data(const corpus::CorpusIndex& idx) {
  TrainingData data;
  std::vector<features::FeatureTensor> raw_train;
  std::vector<std::pair<bool, features::FeatureTensor>> all;
  for (const auto& e : idx.clips) {
    auto ft = corpus::load_features(idx, e);
    if (ft.domain != e.domain) throw DataError(e.features + ": domain label disagrees with the index");
    if (!e.holdout) raw_train.push_back(ft);
    all.emplace_back(e.holdout, std::move(ft));
  }
  if (raw_train.empty()) throw DataError("corpus has no training clips");
  data.stats = features::fit_norm(raw_train, nullptr);
  for (auto& [holdout, ft] : all) {
    auto normed = features::apply_norm(ft, data.stats);
    (holdout ? data.holdout : data.train).clips[index_of(normed.domain)].push_back(std::move(normed));
  }
  for (int d = 0; d < kNumDomains; ++d)
    if (data.train.clips[d].empty())
      throw DataError("domain '" + std::string(kDomainNames[d]) + "' has no training clips");
  return data;
}

inline std::string model_metadata(const TrainConfig& c, const features::NormStats& stats, long iteration,
                                  const std::string& rng_state, long g_steps, long d_steps) {
  const auto& g = c.generator;
  nlohmann::json channels = {g.stem()};
  for (int i = 0; i < g.depth; ++i) channels.push_back(g.stage(i));
  nlohmann::json manifest = {{"depth", g.depth},
                             {"channels", channels},
                             {"channel_divisor", g.channel_divisor},
                             {"num_domains", g.num_domains},
                             {"norm_stats_ref", "embedded:norm_stats"},
                             {"lambda_cls", c.loss.cls},
                             {"lambda_rec", c.loss.rec},
                             {"bottleneck", stargan::bottleneck_label(g)}};
  nlohmann::json j = {{"format", "stc-model"},
                      {"manifest", manifest},
                      {"norm_stats", features::to_json(stats)},
                      {"train_config", to_json(c)},
                      {"iteration", iteration},
                      {"rng_state", rng_state},
                      {"g_steps", g_steps},
                      {"d_steps", d_steps}};
  return j.dump();
}

inline nlohmann::json parse_metadata(const nn::Checkpoint& ck) {
  try {
    auto j = nlohmann::json::parse(ck.metadata);
    if (j.value("format", "") != "stc-model") throw FormatError("checkpoint is not an stc model");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("unreadable checkpoint metadata: ") + e.what());
  }
}

// Every step allocates and frees the same large activation buffers; keeping
// them on the heap avoids an mmap/munmap round trip per tensor.
inline void retain_large_allocations() {
#ifdef __GLIBC__
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, TrainingData data)
      : cfg_(cfg), data_(std::move(data)), init_rng_(cfg.seed), gen_(cfg.generator, init_rng_),
        disc_(cfg.discriminator, init_rng_), rng_(cfg.seed ^ 0x5deece66dULL) {
    cfg_.validate();
    if (data_.train.size() == 0) throw DataError("no training data");
    retain_large_allocations();
    gp_ = gen_.params();
    dp_ = disc_.params();
  }

  const TrainConfig& config() const { return cfg_; }
  const TrainingData& data() const { return data_; }
  long iteration() const { return iter_; }
  long g_steps() const { return g_steps_; }
  long d_steps() const { return d_steps_; }
  Generator<float>& generator() { return gen_; }
  Discriminator<float>& discriminator() { return disc_; }

  bool g_due(long iter) const { return !cfg_.invert_ratio || iter % cfg_.ratio == 0; }
  bool d_due(long iter) const { return cfg_.invert_ratio || iter % cfg_.ratio == 0; }

  // One iteration: the frequent network updates, then the other one if due.
  Metrics step() {
    if (iter_ >= cfg_.iterations) throw TrainingError("iteration budget exhausted");
    Metrics m;
    m.iter = iter_ + 1;
    m.lr = lr_schedule(iter_, cfg_);
    const nn::AdamConfig adam{cfg_.beta1, cfg_.beta2, 1e-8};
    if (g_due(m.iter)) {
      Batch b = next_batch();
      nn::Tape<float> t;
      stargan::LossParts parts;
      nn::Var x = t.constant(std::move(b.x));
      nn::Var loss = stargan::generator_loss(t, gen_, disc_, x, b.src, b.tgt, cfg_.loss, parts);
      check_finite(m.iter, "generator", {parts.g_adv, parts.g_cls, parts.g_rec, parts.g_cyc});
      nn::zero_grads<float>(gp_);
      t.backward(loss);
      nn::adam_step<float>(gp_, m.lr, adam);
      m.g_adv = parts.g_adv;
      m.g_cls = parts.g_cls;
      m.g_rec = parts.g_rec;
      m.g_step = true;
      ++g_steps_;
    }
    if (d_due(m.iter)) {
      Batch b = next_batch();
      nn::Tape<float> t;
      stargan::LossParts parts;
      nn::Var x = t.constant(std::move(b.x));
      nn::Var loss = stargan::discriminator_loss(t, gen_, disc_, x, b.src, b.tgt, cfg_.loss, parts);
      check_finite(m.iter, "discriminator", {parts.d_adv, parts.d_cls});
      nn::zero_grads<float>(dp_);
      t.backward(loss);
      nn::adam_step<float>(dp_, m.lr, adam);
      m.d_adv = parts.d_adv;
      m.d_cls = parts.d_cls;
      m.d_step = true;
      ++d_steps_;
    }
    ++iter_;
    return m;
  }

  nn::Checkpoint checkpoint() const {
    nn::Checkpoint ck;
    ck.metadata = model_metadata(cfg_, data_.stats, iter_, rng_.state(), g_steps_, d_steps_);
    for (const auto* p : gp_) ck.params.push_back(nn::store(*p));
    for (const auto* p : dp_) ck.params.push_back(nn::store(*p));
    return ck;
  }

  // Restores weights, optimizer state, RNG stream and counters.
  void resume(const nn::Checkpoint& ck) {
    const auto meta = parse_metadata(ck);
    const auto saved = config_from_json(meta.at("train_config"));
    if (to_json(saved) != to_json(cfg_)) throw ConfigError("checkpoint was trained with a different configuration");
    nn::restore<float>(ck, gp_);
    nn::restore<float>(ck, dp_);
    rng_.set_state(meta.at("rng_state").get<std::string>());
    iter_ = meta.at("iteration").get<long>();
    g_steps_ = meta.at("g_steps").get<long>();
    d_steps_ = meta.at("d_steps").get<long>();
  }

 private:
  struct Batch {
    nn::Tensor<float> x;
    std::vector<int> src, tgt;
  };

  Batch next_batch() {
    std::vector<Crop> crops;
    std::vector<const Matrix*> ptrs;
    Batch b;
    for (int i = 0; i < cfg_.batch_size; ++i) {
      crops.push_back(sample_crop(data_.train, cfg_.crop_frames, rng_));
      b.src.push_back(crops.back().src);
      b.tgt.push_back(crops.back().tgt);
    }
    for (const auto& c : crops) ptrs.push_back(&c.frames);
    b.x = to_batch<float>(ptrs);
    return b;
  }

  static void check_finite(long iter, const char* which, std::initializer_list<double> values) {
    for (double v : values)
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "non-finite " << which << " loss at iteration " << iter << "; parts:";
        for (double u : values) os << ' ' << u;
        throw TrainingError(os.str());
      }
  }

  TrainConfig cfg_;
  TrainingData data_;
  Rng init_rng_;
  Generator<float> gen_;
  Discriminator<float> disc_;
  Rng rng_;
  std::vector<nn::Parameter<float>*> gp_, dp_;
  long iter_ = 0, g_steps_ = 0, d_steps_ = 0;
};

struct TrainOutputs {
  std::filesystem::path checkpoint;    // written at the end; empty to skip
  std::filesystem::path log;           // CSV metric log; empty to skip
  std::filesystem::path snapshot_dir;  // defaults to the checkpoint's directory
  std::optional<std::filesystem::path> resume_from;
};

inline std::filesystem::path snapshot_path(const std::filesystem::path& dir, long iter) {
  char name[64];
  std::snprintf(name, sizeof name, "snapshot_%07ld.stck", iter);
  return dir / name;
}

// Runs to the end of the budget. The log is rewritten from the resume point
// so rows match an uninterrupted run.
inline std::vector<Metrics> train(Trainer& trainer, const TrainOutputs& out = {},
                                  const std::function<void(const Metrics&)>& on_step = {}) {
  if (out.resume_from) trainer.resume(nn::load_checkpoint(*out.resume_from));
  std::ofstream log;
  if (!out.log.empty()) {
    std::vector<std::string> kept;
    if (out.resume_from) {
      std::ifstream prev(out.log);
      std::string line;
      std::getline(prev, line);
      while (std::getline(prev, line) && static_cast<long>(kept.size()) < trainer.iteration()) kept.push_back(line);
    }
    log.open(out.log, std::ios::trunc);
    if (!log) throw IoError("cannot write metric log " + out.log.string());
    log << kLogHeader << "\n";
    for (const auto& l : kept) log << l << "\n";
  }
  auto snap_dir = out.snapshot_dir.empty() && !out.checkpoint.empty() ? out.checkpoint.parent_path() : out.snapshot_dir;
  if (snap_dir.empty()) snap_dir = ".";
  std::vector<Metrics> rows;
  const auto& cfg = trainer.config();
  while (trainer.iteration() < cfg.iterations) {
    Metrics m = trainer.step();
    if (log.is_open()) log << csv_row(m) << "\n" << std::flush;
    if (on_step) on_step(m);
    rows.push_back(m);
    if (cfg.snapshot_every > 0 && m.iter % cfg.snapshot_every == 0 && m.iter < cfg.iterations)
      nn::save_checkpoint(trainer.checkpoint(), snapshot_path(snap_dir, m.iter));
  }
  if (!out.checkpoint.empty()) nn::save_checkpoint(trainer.checkpoint(), out.checkpoint);
  return rows;
}

}  // namespace stc::trainer
