// Command-line front end: analyze, synth, corpus make, train, convert, eval, grid.
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "stc/toolkit.hpp"

namespace {

using namespace stc;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Domain technique(const std::string& name) {
  if (auto d = try_parse_domain(name)) return *d;
  throw UsageError("unknown technique '" + name + "' (expected one of: chest, falsetto, whistle, raspy)");
}

void write_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Singing technique conversion toolkit"};
  app.require_subcommand(1);

  // analyze
  std::string an_in, an_out, an_domain;
  bool an_norm = false;
  auto* analyze = app.add_subcommand("analyze", "Vocoder analysis of a WAV file into an STCF feature file");
  analyze->add_option("wav", an_in, "Input WAV")->required()->check(CLI::ExistingFile);
  analyze->add_option("-o,--output", an_out, "Output STCF path")->required();
  analyze->add_option("--domain", an_domain, "Technique label; also stores the 60-dim feature chunk");
  analyze->add_flag("--peak-normalize", an_norm, "Peak-normalize before analysis");

  // synth
  std::string sy_in, sy_out;
  std::uint64_t sy_seed = 0;
  auto* synth = app.add_subcommand("synth", "Synthesize a WAV file from an STCF file");
  synth->add_option("stcf", sy_in, "Input STCF")->required()->check(CLI::ExistingFile);
  synth->add_option("-o,--output", sy_out, "Output WAV")->required();
  synth->add_option("--seed", sy_seed, "Noise seed");

  // corpus make
  std::string co_spec, co_out = "corpus";
  std::uint64_t co_seed = 0;
  auto* corpus_cmd = app.add_subcommand("corpus", "Synthetic corpus tools");
  corpus_cmd->require_subcommand(1);
  auto* corpus_make = corpus_cmd->add_subcommand("make", "Generate the synthetic four-technique corpus");
  corpus_make->add_option("--spec", co_spec, "Corpus spec JSON (defaults apply to missing keys)");
  corpus_make->add_option("--seed", co_seed, "Random seed");
  corpus_make->add_option("-o,--output", co_out, "Output directory")->capture_default_str();

  // train
  trainer::TrainConfig tc = trainer::desk_config();
  std::string tr_corpus, tr_out = "model.stck", tr_log, tr_resume;
  int divisor = tc.generator.channel_divisor;
  auto* train = app.add_subcommand("train", "Train a StarGAN converter");
  train->add_option("--depth", tc.generator.depth, "Bottleneck depth")->check(CLI::IsMember({2, 3, 4}))->capture_default_str();
  train->add_option("--iters", tc.iterations, "Iterations")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--corpus", tr_corpus, "Corpus directory")->required();
  train->add_option("-o,--output", tr_out, "Checkpoint path")->capture_default_str();
  train->add_option("--log", tr_log, "Metric CSV (default: <output>.csv)");
  train->add_option("--seed", tc.seed, "Seed")->capture_default_str();
  train->add_option("--divisor", divisor, "Channel divisor")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--lr", tc.lr0, "Initial learning rate")->capture_default_str();
  train->add_option("--batch", tc.batch_size, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--lambda-cls", tc.loss.cls, "Classification loss weight")->capture_default_str();
  train->add_option("--lambda-rec", tc.loss.rec, "Reconstruction loss weight")->capture_default_str();
  train->add_flag("--cycle", tc.loss.cycle, "Add a cycle-consistency loss");
  train->add_flag("--invert-ratio", tc.invert_ratio, "Update D every iteration and G every third");
  train->add_option("--snapshot-every", tc.snapshot_every, "Snapshot interval (0 = off)")->capture_default_str();
  train->add_option("--resume", tr_resume, "Resume from a snapshot")->check(CLI::ExistingFile);

  // convert
  std::string cv_in, cv_target, cv_ckpt, cv_out;
  double cv_shift = 0;
  auto* convert = app.add_subcommand("convert", "Convert the technique of a WAV file");
  convert->add_option("wav", cv_in, "Input WAV")->required()->check(CLI::ExistingFile);
  convert->add_option("--target", cv_target, "Target technique: chest, falsetto, whistle, raspy")->required();
  convert->add_option("--ckpt", cv_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  convert->add_option("--shift", cv_shift, "Pitch shift in semitones")->capture_default_str();
  convert->add_option("-o,--output", cv_out, "Output WAV (default: <input>_<target>.wav)");

  // eval
  std::string ev_ckpt, ev_corpus, ev_out;
  toolkit::ClassifierConfig cls_cfg;
  int ev_crops = 3;
  auto* eval = app.add_subcommand("eval", "Objective evaluation of a checkpoint on the held-out split");
  eval->add_option("--ckpt", ev_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--corpus", ev_corpus, "Corpus directory")->required();
  eval->add_option("-o,--output", ev_out, "Metrics JSON (default: stdout)");
  eval->add_option("--classifier-iters", cls_cfg.iterations, "Classifier training iterations")->capture_default_str();
  eval->add_option("--crops-per-clip", ev_crops, "Evaluation crops per held-out clip")->capture_default_str();

  // grid
  std::string gr_corpus, gr_out = "report.json", gr_csv;
  toolkit::GridConfig gc;
  gc.base = trainer::desk_config();
  auto* grid = app.add_subcommand("grid", "Train and evaluate every bottleneck depth");
  grid->add_option("--corpus", gr_corpus, "Corpus directory")->required();
  grid->add_option("--iters", gc.base.iterations, "Iterations per model")->check(CLI::PositiveNumber)->capture_default_str();
  grid->add_option("-o,--output", gr_out, "Report JSON")->capture_default_str();
  grid->add_option("--csv", gr_csv, "Also write a per-pair CSV table");
  grid->add_option("--seeds", gc.seeds, "Seeds")->capture_default_str();
  grid->add_option("--depths", gc.depths, "Depths")->check(CLI::IsMember({2, 3, 4}))->capture_default_str();
  grid->add_option("--divisor", divisor, "Channel divisor")->check(CLI::PositiveNumber);
  grid->add_option("--ckpt-dir", gc.checkpoint_dir, "Keep every trained model in this directory");
  grid->add_option("--classifier-iters", gc.classifier.iterations, "Classifier training iterations")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*analyze) {
      AudioClip clip = ingest(read_wav(an_in), an_norm);
      if (clip.sample_rate != vocoder::kSampleRate) clip = resample(clip, vocoder::kSampleRate);
      const auto frames = vocoder::analyze(clip);
      if (!an_domain.empty()) {
        const auto feats = features::encode(frames, technique(an_domain));
        stcf::write(an_out, frames, &feats);
      } else {
        stcf::write(an_out, frames, nullptr);
      }
      std::cout << "analyzed " << frames.size() << " frames -> " << an_out << "\n";
    } else if (*synth) {
      const auto file = stcf::read(sy_in);
      const auto clip = vocoder::synthesize(file.frames, sy_seed);
      write_wav(clip, sy_out);
      std::cout << "synthesized " << clip.samples.size() << " samples -> " << sy_out << "\n";
    } else if (*corpus_make) {
      const auto spec = co_spec.empty() ? corpus::default_spec() : corpus::spec_from_json(read_json(co_spec));
      const auto idx = corpus::make_synthetic_corpus(spec, co_seed, co_out);
      std::cout << "wrote " << idx.clips.size() << " clips to " << co_out << "\n";
    } else if (*train) {
      tc.generator.channel_divisor = tc.discriminator.channel_divisor = divisor;
      const auto data = trainer::load_training_data(corpus::load_index(tr_corpus));
      trainer::Trainer tr(tc, data);
      trainer::TrainOutputs out;
      out.checkpoint = tr_out;
      out.log = tr_log.empty() ? tr_out + ".csv" : tr_log;
      if (!tr_resume.empty()) out.resume_from = tr_resume;
      const long every = std::max(1L, tc.iterations / 20);
      trainer::train(tr, out, [&](const trainer::Metrics& m) {
        if (m.iter % every == 0 || m.iter == tc.iterations)
          std::cerr << "iter " << m.iter << "/" << tc.iterations << " lr " << m.lr << " g_rec "
                    << (m.g_rec ? std::to_string(*m.g_rec) : "-") << "\n";
      });
      std::cout << "checkpoint -> " << tr_out << ", log -> " << out.log << "\n";
    } else if (*convert) {
      toolkit::ConversionRequest req;
      req.input = cv_in;
      req.target = technique(cv_target);
      req.checkpoint = cv_ckpt;
      req.pitch_shift_semitones = cv_shift;
      req.output = cv_out.empty()
                       ? std::filesystem::path(cv_in).replace_extension().string() + "_" + cv_target + ".wav"
                       : cv_out;
      const auto r = toolkit::convert_file(req);
      std::cout << "converted " << r.converted.frames() << " frames -> " << req.output.string() << "\n";
    } else if (*eval) {
      auto model = toolkit::load_model(ev_ckpt);
      const auto data = trainer::load_training_data(corpus::load_index(ev_corpus));
      cls_cfg.channel_divisor = model.config.channel_divisor;
      auto cls = toolkit::train_classifier(data.train, cls_cfg);
      const auto crops = toolkit::eval_crops(data.holdout, 400, ev_crops);
      auto j = toolkit::to_json(toolkit::eval_conversion(*model.generator, data.stats, crops, *cls));
      j["classifier_holdout_accuracy"] = toolkit::classifier_accuracy(*cls, crops);
      j["bottleneck"] = model.manifest.value("bottleneck", "");
      write_json(j, ev_out);
    } else if (*grid) {
      gc.base.generator.channel_divisor = gc.base.discriminator.channel_divisor = divisor;
      gc.classifier.channel_divisor = divisor;
      const auto data = trainer::load_training_data(corpus::load_index(gr_corpus));
      const auto rep = toolkit::run_bottleneck_grid(data, gc, [](const toolkit::GridCell& c) {
        std::cerr << "depth " << c.depth << " seed " << c.seed << (c.ok ? " ok" : " FAILED: " + c.error)
                  << " recon_l1 " << c.eval.recon_l1 << " (" << c.runtime_s << " s)\n";
      });
      write_json(rep.json, gr_out);
      if (!gr_csv.empty()) {
        std::ofstream csv(gr_csv, std::ios::trunc);
        if (!csv) throw IoError("cannot write " + gr_csv);
        csv << "bottleneck,src,tgt,mcd,cls_acc\n";
        for (const auto& row : rep.json["rows"])
          for (const auto& p : row["pairs"])
            csv << row["bottleneck"].get<std::string>() << ',' << p["src"].get<std::string>() << ','
                << p["tgt"].get<std::string>() << ',' << p["mcd"].get<double>() << ','
                << p["cls_acc"].get<double>() << "\n";
      }
      std::cout << "report -> " << gr_out << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
