#pragma once

// Command-line surface: synth-data, featurize, train, caption, eval.
// Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "secap/audio.hpp"
#include "secap/checkpoint.hpp"
#include "secap/dataset.hpp"
#include "secap/evaluate.hpp"
#include "secap/training.hpp"

namespace secap::cli {

inline constexpr int kOk = 0;
inline constexpr int kValidation = 1;
inline constexpr int kRuntime = 2;

/// Bad user input, caught before any output is written.
class ValidationError : public Error {
 public:
  using Error::Error;
};

namespace fs = std::filesystem;

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void refuse_overwrite(const fs::path& p, bool force) {
  if (!force && fs::exists(p)) throw ValidationError(p.string() + " exists; pass --force to overwrite");
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ValidationError(what + " not found: " + p.string());
}

inline std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("SECAP_SEED");
  if (!s || !*s) return std::nullopt;
  std::uint64_t v = 0;
  if (!detail::parse_value(std::string(s), v)) throw ValidationError(std::string("SECAP_SEED is not an integer: ") + s);
  return v;
}

inline ModelConfig model_config_from(const std::string& path) {
  return path.empty() ? ModelConfig{} : ModelConfig::parse(read_text(path));
}

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline int synth_data(const fs::path& out_dir, const std::string& config, std::optional<std::size_t> items,
                      std::optional<std::uint64_t> seed, bool force, Streams io) {
  auto cfg = data::SynthConfig::defaults();
  if (!config.empty()) {
    try {
      cfg = nlohmann::json::parse(read_text(config)).get<data::SynthConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("synth config " + config + ": " + e.what());
    }
  }
  if (items) cfg.items_per_category = *items;
  if (seed) cfg.seed = *seed;
  if (auto s = env_seed()) cfg.seed = *s;
  cfg.validate();
  refuse_overwrite(out_dir / "manifest.jsonl", force);
  if (!force && fs::exists(out_dir / "wav") && !fs::is_empty(out_dir / "wav"))
    throw ValidationError((out_dir / "wav").string() + " is not empty; pass --force to overwrite");
  const auto res = data::synth_dataset(cfg, out_dir);
  io.out << res.records.size() << " records -> " << res.manifest.string() << "\n";
  return kOk;
}

inline int featurize(const fs::path& input, const fs::path& output, const std::string& model_cfg, bool force,
                     Streams io) {
  const auto mcfg = model_config_from(model_cfg);
  require_file(input, "input audio");
  refuse_overwrite(output, force);
  audio::SpeechFeatures f;
  try {
    const auto w = audio::load_wav(input);
    mcfg.feat.validate(w.sample_rate);
    f = audio::mel_features(w, mcfg.feat);
  } catch (const audio::WavError& e) {
    throw ValidationError(e.what());
  }
  audio::save_precomputed(output, f);
  io.out << f.frames.rows() << " x " << f.frames.cols() << " features -> " << output.string() << "\n";
  return kOk;
}

struct TrainArgs {
  int stage = 0;
  fs::path manifest, out, metrics;
  std::string config, model_config, init, resume;
  std::optional<std::size_t> steps;
  bool force = false;
};

inline int train(const TrainArgs& a, Streams io) {
  RunOptions opt;
  try {
    opt.train = a.config.empty() ? TrainConfig::parse("", a.stage) : TrainConfig::parse(read_text(a.config), a.stage);
    if (a.steps) opt.train.steps = *a.steps;
    if (auto s = env_seed()) opt.train.seed = *s;
    opt.model = model_config_from(a.model_config);
  } catch (const ConfigError& e) {
    throw ValidationError(e.what());
  }
  require_file(a.manifest, "manifest");
  if (!a.init.empty() && !a.resume.empty()) throw ValidationError("--init and --resume are mutually exclusive");
  if (!a.init.empty()) require_file(a.init, "init checkpoint");
  if (!a.resume.empty()) require_file(a.resume, "resume checkpoint");
  refuse_overwrite(a.out, a.force);
  if (!a.metrics.empty() && a.resume.empty()) refuse_overwrite(a.metrics, a.force);
  opt.manifest = a.manifest;
  opt.out_checkpoint = a.out;
  opt.metrics_csv = a.metrics;
  if (!a.init.empty()) opt.init_checkpoint = a.init;
  if (!a.resume.empty()) opt.resume_checkpoint = a.resume;
  opt.log = [&](const std::string& s) { io.err << s << "\n"; };
  const auto res = run_training(opt);
  io.out << "trained to step " << res.final_step << " -> " << a.out.string() << "\n";
  return kOk;
}

struct CaptionArgs {
  fs::path checkpoint, input, manifest, out;
  std::string split;
  std::string prompt_file;
  std::size_t max_len = 64;
  bool force = false;
};

inline int caption(const CaptionArgs& a, Streams io) {
  require_file(a.checkpoint, "checkpoint");
  if (a.input.empty() == a.manifest.empty()) throw ValidationError("give exactly one of --input or --manifest");
  if (!a.manifest.empty() && a.out.empty()) throw ValidationError("--manifest needs --out");
  if (!a.out.empty()) refuse_overwrite(a.out, a.force);
  const auto bank = a.prompt_file.empty() ? PromptBank(default_prompts()) : PromptBank::load(a.prompt_file);
  const auto model = model_from_checkpoint(load_checkpoint(a.checkpoint));
  const auto& prompt = bank.inference_prompt();
  model.vocab().tokenize(prompt);

  if (!a.input.empty()) {
    require_file(a.input, "input");
    audio::SpeechFeatures f;
    try {
      f = audio::load_features(a.input, model.config().feat);
    } catch (const std::exception& e) {
      throw ValidationError(e.what());
    }
    io.out << model.caption(f, prompt, a.max_len) << "\n";
    return kOk;
  }

  require_file(a.manifest, "manifest");
  auto records = data::read_manifest(a.manifest);
  std::vector<data::CaptionRecord> selected;
  std::vector<audio::SpeechFeatures> feats;
  std::vector<std::string> problems;
  for (const auto& r : records) {
    if (!a.split.empty() && r.split != a.split) continue;
    try {
      feats.push_back(audio::load_features(data::resolve_audio(r, a.manifest), model.config().feat));
      selected.push_back(r);
    } catch (const std::exception& e) {
      problems.push_back("record '" + r.id + "': " + e.what());
    }
  }
  if (!problems.empty()) throw data::ManifestError(std::move(problems));
  const auto base = fs::absolute(a.manifest).parent_path();
  const auto out_dir = fs::absolute(a.out).parent_path();
  for (std::size_t i = 0; i < selected.size(); ++i) {
    auto& r = selected[i];
    if (!fs::path(r.audio).is_absolute()) r.audio = fs::relative(base / r.audio, out_dir).generic_string();
    r.captions = {model.caption(feats[i], prompt, a.max_len)};
  }
  data::write_manifest(selected, a.out);
  io.out << selected.size() << " captions -> " << a.out.string() << "\n";
  return kOk;
}

inline int eval(const fs::path& pred, const fs::path& ref, const fs::path& out, const std::string& tokenization,
                bool force, Streams io) {
  metrics::Tokenization tok;
  try {
    tok = metrics::parse_tokenization(tokenization);
  } catch (const Error& e) {
    throw ValidationError(e.what());
  }
  require_file(pred, "prediction manifest");
  require_file(ref, "reference manifest");
  refuse_overwrite(out, force);
  const auto report = metrics::evaluate_manifest(data::read_manifest(pred), data::read_manifest(ref), tok);
  std::ofstream f(out, std::ios::binary);
  if (!f) throw Error("cannot write " + out.string());
  f << metrics::report_csv(report);
  char line[200];
  std::snprintf(line, sizeof line, "bleu1=%.4f bleu4=%.4f rouge_l=%.4f cider=%.4f (%zu items)\n",
                report.corpus.bleu1, report.corpus.bleu4, report.corpus.rouge_l, report.corpus.cider,
                report.items.size());
  io.out << line;
  return kOk;
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Streams io{out, err};
  CLI::App app{"speech emotion captioning"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth-data", "generate the synthetic emotion-speech dataset");
  fs::path synth_out;
  std::string synth_cfg;
  std::optional<std::size_t> synth_items;
  std::optional<std::uint64_t> synth_seed;
  bool synth_force = false;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--config", synth_cfg, "synthesis config (JSON)");
  synth->add_option("--items-per-category", synth_items);
  synth->add_option("--seed", synth_seed);
  synth->add_flag("--force", synth_force, "overwrite existing outputs");

  auto* feat = app.add_subcommand("featurize", "WAV to a log-mel feature file");
  fs::path feat_in, feat_out;
  std::string feat_cfg;
  bool feat_force = false;
  feat->add_option("--input", feat_in)->required();
  feat->add_option("--output", feat_out)->required();
  feat->add_option("--model-config", feat_cfg, "model config (featurizer keys)");
  feat->add_flag("--force", feat_force);

  auto* tr = app.add_subcommand("train", "run stage 1 or stage 2 training");
  TrainArgs ta;
  tr->add_option("--stage", ta.stage)->required()->check(CLI::IsMember({1, 2}));
  tr->add_option("--manifest", ta.manifest)->required();
  tr->add_option("--out", ta.out, "final checkpoint")->required();
  tr->add_option("--metrics", ta.metrics, "metrics CSV");
  tr->add_option("--config", ta.config, "training config (key = value)");
  tr->add_option("--model-config", ta.model_config, "model config (key = value)");
  tr->add_option("--init", ta.init, "start from another stage's checkpoint");
  tr->add_option("--resume", ta.resume, "continue an interrupted run");
  tr->add_option("--steps", ta.steps);
  tr->add_flag("--force", ta.force);

  auto* cap = app.add_subcommand("caption", "describe the emotion in speech");
  CaptionArgs ca;
  cap->add_option("--checkpoint", ca.checkpoint)->required();
  cap->add_option("--input", ca.input, "WAV or feature file");
  cap->add_option("--manifest", ca.manifest, "caption every record of a manifest");
  cap->add_option("--out", ca.out, "prediction manifest (with --manifest)");
  cap->add_option("--split", ca.split, "only records of this split");
  cap->add_option("--prompts", ca.prompt_file, "prompt bank file");
  cap->add_option("--max-len", ca.max_len)->check(CLI::PositiveNumber);
  cap->add_flag("--force", ca.force);

  auto* ev = app.add_subcommand("eval", "score predictions against references");
  fs::path ev_pred, ev_ref, ev_out = "report.csv";
  std::string ev_tok = "auto";
  bool ev_force = false;
  ev->add_option("--pred", ev_pred)->required();
  ev->add_option("--ref", ev_ref)->required();
  ev->add_option("--out", ev_out, "report CSV");
  ev->add_option("--tokenization", ev_tok, "auto, word or char");
  ev->add_flag("--force", ev_force);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kValidation;
  }

  try {
    if (synth->parsed()) return synth_data(synth_out, synth_cfg, synth_items, synth_seed, synth_force, io);
    if (feat->parsed()) return featurize(feat_in, feat_out, feat_cfg, feat_force, io);
    if (tr->parsed()) return train(ta, io);
    if (cap->parsed()) return caption(ca, io);
    if (ev->parsed()) return eval(ev_pred, ev_ref, ev_out, ev_tok, ev_force, io);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const data::ManifestError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const VocabError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << "\n";
    return kRuntime;
  }
  return kValidation;
}

}  // namespace secap::cli
