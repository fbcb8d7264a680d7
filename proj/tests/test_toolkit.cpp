#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>
#include <stc/corpus.hpp>
#include <stc/toolkit.hpp>

#include "support.hpp"

using namespace stc;
using namespace stc::toolkit;
namespace ts = testing_support;

namespace {

Matrix random_features(Rng& rng, std::size_t frames) {
  Matrix m(frames, features::kDims);
  for (double& v : m.data) v = rng.normal();
  return m;
}

constexpr double kMcdScale = 10.0 / 2.302585092994046 * 1.4142135623730951;

struct Cli {
  int code;
  std::string out, err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Cli run_cli(const std::string& args, const ts::TempDir& dir) {
  const auto out = dir / "cli.out", err = dir / "cli.err";
  const std::string cmd = std::string(STC_CLI) + " " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

corpus::CorpusSpec tiny_spec() {
  auto s = corpus::default_spec();
  s.clips_per_domain = 2;
  s.min_seconds = 0.6;
  s.max_seconds = 0.8;
  s.holdout_every = 2;
  return s;
}

trainer::TrainConfig tiny_config(long iters) {
  trainer::TrainConfig c;
  c.iterations = iters;
  c.decay_span = std::max(1L, iters / 2);
  c.crop_frames = 32;
  c.batch_size = 2;
  c.generator.depth = 2;
  c.generator.channel_divisor = 32;
  c.discriminator.channel_divisor = 32;
  return c;
}

// Shared fixture: a tiny corpus and a briefly trained checkpoint.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new ts::TempDir("toolkit");
    corpus::make_synthetic_corpus(tiny_spec(), 3, dir_->path / "corpus");
    data_ = new trainer::TrainingData(trainer::load_training_data(corpus::load_index(dir_->path / "corpus")));
    trainer::Trainer tr(tiny_config(3), *data_);
    trainer::train(tr, {.checkpoint = dir_->path / "model.stck"});
  }
  static void TearDownTestSuite() {
    delete data_;
    delete dir_;
  }
  static std::filesystem::path ckpt() { return dir_->path / "model.stck"; }
  static std::filesystem::path wav() { return dir_->path / "corpus" / "chest" / "chest_000.wav"; }

  static ts::TempDir* dir_;
  static trainer::TrainingData* data_;
};
ts::TempDir* Pipeline::dir_ = nullptr;
trainer::TrainingData* Pipeline::data_ = nullptr;

}  // namespace

// ---------------------------------------------------------------------------

TEST(Mcd, IdenticalIsZero) {
  Rng rng(1);
  const auto a = random_features(rng, 20);
  EXPECT_EQ(mcd(a, a), 0.0);
}

TEST(Mcd, SingleCoefficientOffsetClosedForm) {
  Rng rng(2);
  const auto a = random_features(rng, 30);
  for (double delta : {0.01, 0.3, 2.0}) {
    auto b = a;
    for (std::size_t t = 0; t < b.rows; ++t) b(t, 1) += delta;
    EXPECT_NEAR(mcd(a, b), kMcdScale * delta, 1e-12 * kMcdScale * (1 + delta));
  }
}

TEST(Mcd, ExcludesEnergyAndAperiodicity) {
  Rng rng(3);
  const auto a = random_features(rng, 10);
  auto b = a;
  for (std::size_t t = 0; t < b.rows; ++t) {
    b(t, 0) += 5;
    for (int d = features::kMccOrder; d < features::kDims; ++d) b(t, d) -= 1;
  }
  EXPECT_EQ(mcd(a, b), 0.0);
  b(4, features::kMccOrder - 1) += 1;
  EXPECT_NEAR(mcd(a, b), kMcdScale / 10, 1e-12);
}

TEST(Mcd, PseudometricProperties) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_features(rng, 15), b = random_features(rng, 15), c = random_features(rng, 15);
    EXPECT_GT(mcd(a, b), 0.0);
    EXPECT_EQ(mcd(a, b), mcd(b, a));
    EXPECT_LE(mcd(a, c), mcd(a, b) + mcd(b, c) + 1e-9);
  }
}

TEST(Mcd, FrameMismatch) {
  Rng rng(5);
  EXPECT_THROW(mcd(random_features(rng, 10), random_features(rng, 11)), ArgumentError);
  EXPECT_THROW(mcd(Matrix(0, 60), Matrix(0, 60)), ArgumentError);
  EXPECT_THROW(mcd(Matrix(3, 20), Matrix(3, 20)), ArgumentError);
}

TEST(ShiftF0, OctaveDoublesVoicedOnly) {
  const std::vector<double> f0 = {0, 110, 220.5, 0, 440, 97.25};
  const auto up = shift_f0(f0, 12);
  for (std::size_t i = 0; i < f0.size(); ++i) EXPECT_EQ(up[i], 2 * f0[i]) << i;
  const auto down = shift_f0(f0, -12);
  EXPECT_EQ(down[2], f0[2] / 2);
  EXPECT_EQ(down[0], 0.0);
}

TEST(ShiftF0, ZeroIsBitExact) {
  Rng rng(6);
  std::vector<double> f0(100);
  for (double& v : f0) v = rng.uniform() < 0.3 ? 0.0 : rng.uniform(80, 2000);
  EXPECT_EQ(shift_f0(f0, 0), f0);
}

TEST(ShiftF0, ExactAboveTrackerRange) {
  const auto up = shift_f0(std::vector<double>{2500}, 12);
  EXPECT_EQ(up[0], 5000.0);
}

TEST(Padding, EdgeReplication) {
  Rng rng(7);
  const auto m = random_features(rng, 9);
  const auto p = pad_to_multiple(m, 4);
  ASSERT_EQ(p.rows, 12u);
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t d = 0; d < m.cols; ++d) EXPECT_EQ(p(t, d), m(std::min<std::size_t>(t, 8), d));
  EXPECT_EQ(pad_to_multiple(p, 4).data, p.data);
  EXPECT_THROW(pad_to_multiple(Matrix(0, 60), 4), ArgumentError);
}

// ---------------------------------------------------------------------------

TEST_F(Pipeline, ModelManifest) {
  const auto m = load_model(ckpt());
  EXPECT_EQ(m.config.depth, 2);
  EXPECT_EQ(m.config.channel_divisor, 32);
  EXPECT_EQ(m.manifest["bottleneck"], "15x256");
  EXPECT_EQ(features::to_json(m.stats), features::to_json(data_->stats));
}

TEST_F(Pipeline, ModelErrors) {
  EXPECT_THROW(load_model(dir_->path / "missing.stck"), IoError);
  {
    std::ofstream out(dir_->path / "junk.stck", std::ios::binary);
    out << "not a checkpoint at all";
  }
  EXPECT_THROW(load_model(dir_->path / "junk.stck"), FormatError);
  auto ck = nn::load_checkpoint(ckpt());
  auto meta = nlohmann::json::parse(ck.metadata);
  meta["manifest"]["num_domains"] = 5;
  ck.metadata = meta.dump();
  nn::save_checkpoint(ck, dir_->path / "five.stck");
  EXPECT_THROW(load_model(dir_->path / "five.stck"), FormatError);
}

TEST_F(Pipeline, FeatureConversionContracts) {
  auto model = load_model(ckpt());
  const auto idx = corpus::load_index(dir_->path / "corpus");
  for (const auto& e : idx.clips) {
    const auto in = corpus::load_features(idx, e);
    for (int tgt = 0; tgt < kNumDomains; ++tgt) {
      const auto out = convert_features(model, in, domain_from_index(tgt));
      EXPECT_EQ(out.frames(), in.frames());
      EXPECT_EQ(out.domain, domain_from_index(tgt));
      EXPECT_EQ(out.f0, in.f0) << "f0 sidecar must pass through untouched";
      for (double v : out.data.data) ASSERT_TRUE(std::isfinite(v));
    }
    const auto up = convert_features(model, in, Domain::whistle, 12);
    for (std::size_t i = 0; i < in.f0.size(); ++i) EXPECT_EQ(up.f0[i], 2 * in.f0[i]);
  }
}

TEST_F(Pipeline, ConvertAnyWidth) {
  auto model = load_model(ckpt());
  Rng rng(8);
  for (std::size_t w : {1u, 5u, 37u, 64u}) {
    features::FeatureTensor ft{random_features(rng, w), Domain::chest, std::vector<double>(w, 0.0)};
    EXPECT_EQ(convert_features(model, ft, Domain::raspy).frames(), w);
  }
}

TEST_F(Pipeline, ConvertClipDuration) {
  auto model = load_model(ckpt());
  const auto clip = read_wav(wav());
  const auto r = convert_clip(model, clip, Domain::falsetto);
  EXPECT_EQ(r.audio.samples.size(), clip.samples.size());
  EXPECT_EQ(r.audio.sample_rate, vocoder::kSampleRate);
  const long in_frames = static_cast<long>(vocoder::frame_count(clip.samples.size()));
  EXPECT_LE(std::abs(static_cast<long>(r.converted.frames()) - in_frames), 1);
  EXPECT_EQ(r.converted.f0, vocoder::analyze(ingest(clip)).f0);
}

TEST_F(Pipeline, ConvertResampledInput) {
  auto model = load_model(ckpt());
  const auto clip = resample(read_wav(wav()), 44100);
  const auto r = convert_clip(model, clip, Domain::chest);
  const double in_sec = clip.samples.size() / 44100.0;
  const double out_sec = r.audio.samples.size() / static_cast<double>(vocoder::kSampleRate);
  EXPECT_NEAR(out_sec, in_sec, double(vocoder::kHop) / vocoder::kSampleRate);
}

TEST_F(Pipeline, EvalReportShape) {
  ClassifierConfig cc;
  cc.iterations = 5;
  cc.crop_frames = 32;
  cc.channel_divisor = 32;
  auto cls = train_classifier(data_->train, cc);
  auto model = load_model(ckpt());
  const auto crops = eval_crops(data_->holdout, 32, 2);
  ASSERT_EQ(crops.size(), 8u);
  const auto rep = eval_conversion(*model.generator, model.stats, crops, *cls);
  EXPECT_EQ(rep.pairs.size(), 12u);
  double sum = 0;
  for (const auto& p : rep.pairs) {
    EXPECT_NE(p.src, p.tgt);
    EXPECT_EQ(p.samples, 2);
    EXPECT_GE(p.mcd, 0.0);
    EXPECT_GE(p.cls_acc, 0.0);
    EXPECT_LE(p.cls_acc, 1.0);
    sum += p.cls_acc;
  }
  EXPECT_NEAR(rep.mean_cls_acc, sum / 12, 1e-12);
  EXPECT_GT(rep.recon_l1, 0.0);
  const auto j = to_json(rep);
  EXPECT_TRUE(j["recon_l1"].is_number());
  EXPECT_TRUE(j["mean_cls_acc"].is_number());
  for (const auto& p : j["pairs"])
    for (const char* k : {"src", "tgt", "mcd", "cls_acc", "samples"}) EXPECT_TRUE(p.contains(k)) << k;
  EXPECT_THROW(eval_conversion(*model.generator, model.stats, {}, *cls), DataError);
}

TEST_F(Pipeline, GridReportAndDeterminism) {
  GridConfig gc;
  gc.base = tiny_config(3);
  gc.seeds = {0, 1};
  gc.eval_crops_per_clip = 1;
  gc.classifier.iterations = 3;
  gc.classifier.crop_frames = 32;
  gc.classifier.channel_divisor = 32;
  const auto a = run_bottleneck_grid(*data_, gc);
  const auto& rows = a.json["rows"];
  ASSERT_EQ(rows.size(), 3u);
  const std::vector<std::string> labels = {"15x256", "5x512", "1x1024"};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(rows[i]["bottleneck"], labels[i]);
    EXPECT_EQ(rows[i]["status"], "ok");
    EXPECT_GT(rows[i]["runtime_s"].get<double>(), 0.0);
    EXPECT_TRUE(rows[i]["recon_l1"].is_number());
    EXPECT_EQ(rows[i]["pairs"].size(), 12u);
    EXPECT_EQ(rows[i]["seeds"].size(), 2u);
  }
  EXPECT_EQ(a.cells.size(), 6u);

  gc.depths = {2};
  const auto b = run_bottleneck_grid(*data_, gc);
  EXPECT_EQ(without_runtime(b.json["rows"][0]), without_runtime(rows[0]));
}

TEST_F(Pipeline, GridRecordsFailedCells) {
  GridConfig gc;
  gc.base = tiny_config(2);
  gc.base.ratio = 0;  // rejected by every trainer
  gc.seeds = {0};
  gc.eval_crops_per_clip = 1;
  gc.classifier.iterations = 1;
  gc.classifier.crop_frames = 32;
  gc.classifier.channel_divisor = 32;
  const auto rep = run_bottleneck_grid(*data_, gc);
  ASSERT_EQ(rep.json["rows"].size(), 3u);
  for (const auto& row : rep.json["rows"]) {
    EXPECT_EQ(row["status"], "failed");
    EXPECT_TRUE(row["seeds"][0].contains("error"));
  }
}

// ---------------------------------------------------------------------------

TEST_F(Pipeline, CliUsageErrors) {
  ts::TempDir d("cli");
  EXPECT_EQ(run_cli("", d).code, 2);
  EXPECT_EQ(run_cli("frobnicate", d).code, 2);
  EXPECT_EQ(run_cli("analyze", d).code, 2);
  EXPECT_EQ(run_cli("analyze /nonexistent.wav -o x.stcf", d).code, 2);
  EXPECT_EQ(run_cli("train --depth 5 --corpus .", d).code, 2);
  EXPECT_EQ(run_cli("--help", d).code, 0);
  const auto bad = run_cli("convert '" + wav().string() + "' --target belting --ckpt '" + ckpt().string() + "'", d);
  EXPECT_EQ(bad.code, 2);
  for (const char* name : {"chest", "falsetto", "whistle", "raspy"})
    EXPECT_NE(bad.err.find(name), std::string::npos) << bad.err;
}

TEST_F(Pipeline, CliRuntimeErrors) {
  ts::TempDir d("cli");
  {
    std::ofstream out(d / "fake.wav");
    out << "this is not audio";
  }
  EXPECT_EQ(run_cli("analyze '" + (d / "fake.wav").string() + "' -o '" + (d / "x.stcf").string() + "'", d).code, 1);
  EXPECT_EQ(run_cli("train --corpus '" + (d / "nowhere").string() + "' --iters 1", d).code, 1);
  const auto r = run_cli("synth '" + (d / "fake.wav").string() + "' -o '" + (d / "y.wav").string() + "'", d);
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(Pipeline, CliAnalyzeSynthRoundTrip) {
  ts::TempDir d("cli");
  const auto stcf_path = d / "a.stcf", out_wav = d / "a.wav";
  ASSERT_EQ(run_cli("analyze '" + wav().string() + "' -o '" + stcf_path.string() + "' --domain chest", d).code, 0);
  ASSERT_EQ(run_cli("synth '" + stcf_path.string() + "' -o '" + out_wav.string() + "'", d).code, 0);
  const auto in = read_wav(wav()), out = read_wav(out_wav);
  EXPECT_LE(std::abs(static_cast<long>(in.samples.size()) - static_cast<long>(out.samples.size())),
            static_cast<long>(vocoder::kHop));
  const auto file = stcf::read(stcf_path);
  ASSERT_TRUE(file.features.has_value());
  EXPECT_EQ(file.features->domain, Domain::chest);
}

TEST_F(Pipeline, CliConvertShift) {
  ts::TempDir d("cli");
  const auto out_wav = d / "w.wav";
  const auto r = run_cli("convert '" + wav().string() + "' --target whistle --shift 12 --ckpt '" + ckpt().string() +
                             "' -o '" + out_wav.string() + "'",
                         d);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto in = read_wav(wav()), out = read_wav(out_wav);
  EXPECT_EQ(out.samples.size(), in.samples.size());
  // The library path used by the CLI doubles every voiced value.
  auto model = load_model(ckpt());
  const auto conv = convert_clip(model, in, Domain::whistle, 12);
  int voiced = 0;
  for (std::size_t i = 0; i < conv.source.f0.size(); ++i)
    if (conv.source.f0[i] > 0) {
      ++voiced;
      EXPECT_EQ(conv.converted.f0[i], 2 * conv.source.f0[i]);
    }
  EXPECT_GT(voiced, 0);
}

TEST_F(Pipeline, CliGridWritesReport) {
  ts::TempDir d("cli");
  const auto report = d / "report.json", csv = d / "report.csv";
  const auto r = run_cli("grid --corpus '" + (dir_->path / "corpus").string() +
                             "' --iters 1 --seeds 0 --divisor 32 --classifier-iters 1 -o '" + report.string() +
                             "' --csv '" + csv.string() + "'",
                         d);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(report));
  ASSERT_EQ(j["rows"].size(), 3u);
  EXPECT_TRUE(j.contains("config"));
  for (const auto& row : j["rows"])
    for (const char* k : {"bottleneck", "recon_l1", "pairs", "runtime_s"}) EXPECT_TRUE(row.contains(k)) << k;
  EXPECT_EQ(slurp(csv).substr(0, 31), "bottleneck,src,tgt,mcd,cls_acc\n");
}

TEST_F(Pipeline, WhistleOctaveShiftSynthesizes) {
  auto model = load_model(ckpt());
  const AudioClip clip = ts::tone(2400, 0.5);
  const auto r = convert_clip(model, clip, Domain::whistle, 12);
  double top = 0;
  for (std::size_t i = 0; i < r.source.f0.size(); ++i) {
    EXPECT_EQ(r.converted.f0[i], 2 * r.source.f0[i]);
    top = std::max(top, r.converted.f0[i]);
  }
  EXPECT_GT(top, vocoder::kF0Ceil);
  EXPECT_EQ(r.audio.samples.size(), clip.samples.size());
}
