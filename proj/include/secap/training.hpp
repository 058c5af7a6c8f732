#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "secap/checkpoint.hpp"
#include "secap/config.hpp"
#include "secap/dataset.hpp"
#include "secap/decoder.hpp"
#include "secap/miestim.hpp"
#include "secap/model.hpp"
#include "secap/sccl.hpp"

namespace secap {

struct TrainConfig {
  int stage = 1;
  std::uint64_t seed = 1;
  std::size_t steps = 400;
  double lr = 1e-3;
  double clip_norm = 5.0;
  // stage 1
  std::size_t n_categories = 4;
  std::size_t k_per_category = 4;
  double w_t1 = 0.1;
  double w_t2 = 1.0;
  sccl::Weights sccl;
  double varnet_lr = 1e-3;
  // stage 2
  std::size_t batch_size = 8;
  std::size_t decoder_pretrain_steps = 0;
  double decoder_pretrain_lr = 1e-3;
  std::size_t max_caption_len = 64;
  // shared
  bool random_caption = true;
  std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::string prompt_file;              // empty: built-in bank
  bool freeze_featurizer_projection = false;
  bool freeze_qformer = false;
  bool freeze_varnet = false;
  bool freeze_decoder_core = true;
  bool freeze_output_projection = true;

  static TrainConfig defaults(int stage) {
    TrainConfig c;
    c.stage = stage;
    if (stage == 2) {
      c.steps = 1500;
      c.lr = 5e-4;
      c.decoder_pretrain_steps = 600;
      c.freeze_varnet = true;
      c.freeze_decoder_core = true;
      c.freeze_output_projection = false;
    }
    return c;
  }

  FieldTable fields() {
    FieldTable t;
    t.bind("stage", stage);
    t.bind("seed", seed);
    t.bind("steps", steps);
    t.bind("lr", lr);
    t.bind("clip_norm", clip_norm);
    t.bind("n_categories", n_categories);
    t.bind("k_per_category", k_per_category);
    t.bind("w_t1", w_t1);
    t.bind("w_t2", w_t2);
    t.bind("sccl_w1", sccl.w1);
    t.bind("sccl_w2", sccl.w2);
    t.bind("sccl_w3", sccl.w3);
    t.bind("sccl_margin", sccl.margin);
    t.bind("varnet_lr", varnet_lr);
    t.bind("batch_size", batch_size);
    t.bind("decoder_pretrain_steps", decoder_pretrain_steps);
    t.bind("decoder_pretrain_lr", decoder_pretrain_lr);
    t.bind("max_caption_len", max_caption_len);
    t.bind("random_caption", random_caption);
    t.bind("checkpoint_interval", checkpoint_interval);
    t.bind("prompt_file", prompt_file);
    t.bind("freeze_featurizer_projection", freeze_featurizer_projection);
    t.bind("freeze_qformer", freeze_qformer);
    t.bind("freeze_varnet", freeze_varnet);
    t.bind("freeze_decoder_core", freeze_decoder_core);
    t.bind("freeze_output_projection", freeze_output_projection);
    return t;
  }

  std::string dump() const {
    TrainConfig c = *this;
    return c.fields().dump();
  }

  /// Stage-dependent defaults first, then the file's keys. stage_override
  /// (the command line) wins over a `stage` key in the text.
  static TrainConfig parse(const std::string& text, std::optional<int> stage_override = std::nullopt) {
    const auto kvs = parse_key_values(text);
    int stage = 1;
    for (const auto& kv : kvs)
      if (kv.key == "stage" && !detail::parse_value(kv.value, stage))
        throw ConfigError({"line " + std::to_string(kv.line) + ": bad value '" + kv.value + "' for 'stage'"});
    if (stage_override) stage = *stage_override;
    if (stage != 1 && stage != 2) throw ConfigError({"stage must be 1 or 2, got " + std::to_string(stage)});
    TrainConfig c = defaults(stage);
    c.fields().apply(kvs);
    c.stage = stage;
    c.validate();
    return c;
  }

  bool frozen(ParamGroup g) const {
    switch (g) {
      case ParamGroup::FeaturizerProjection: return freeze_featurizer_projection;
      case ParamGroup::QFormer: return freeze_qformer;
      case ParamGroup::VarNet: return freeze_varnet;
      case ParamGroup::DecoderCore: return freeze_decoder_core;
      case ParamGroup::OutputProjection: return freeze_output_projection;
    }
    return true;
  }

  void validate() const {
    std::vector<std::string> p;
    if (stage != 1 && stage != 2) p.push_back("stage must be 1 or 2");
    if (stage == 1 && n_categories * k_per_category < 2) p.push_back("stage 1 needs n_categories * k_per_category >= 2");
    if (stage == 1 && (n_categories == 0 || k_per_category == 0)) p.push_back("n_categories and k_per_category must be positive");
    if (stage == 2 && batch_size == 0) p.push_back("stage 2 needs batch_size >= 1");
    if (!(lr >= 0) || !(varnet_lr >= 0) || !(decoder_pretrain_lr >= 0)) p.push_back("learning rates must be nonnegative");
    if (!(w_t1 >= 0) || !(w_t2 >= 0)) p.push_back("w_t1 and w_t2 must be nonnegative");
    if (max_caption_len == 0) p.push_back("max_caption_len must be positive");
    try {
      sccl.validate();
    } catch (const Error& e) {
      p.push_back(e.what());
    }
    if (!p.empty()) throw ConfigError(std::move(p));
  }
};

// ------------------------------------------------------------------- data

struct PreparedItem {
  std::string id;
  audio::SpeechFeatures feats;
  int category = -1;
  std::vector<int> transcription;
  std::vector<std::vector<int>> captions;
  std::vector<std::string> caption_text;
};

struct PreparedData {
  std::vector<std::string> category_names;  // sorted
  std::vector<PreparedItem> items;
  std::vector<std::size_t> train;            // indices into items
  std::vector<std::size_t> held_out;         // val + test
};

/// Character vocabulary over every transcription, caption and prompt.
inline Vocab build_vocab(const std::vector<data::CaptionRecord>& records, const std::vector<std::string>& prompts) {
  std::vector<std::string> texts(prompts);
  for (const auto& r : records) {
    texts.push_back(r.transcription);
    texts.insert(texts.end(), r.captions.begin(), r.captions.end());
  }
  return Vocab::from_texts(texts);
}

inline std::vector<std::string> category_names(const std::vector<data::CaptionRecord>& records) {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(r.emotion_category);
  return {s.begin(), s.end()};
}

/// Training records are split=="train"; a manifest with no split labels at
/// all trains on everything.
inline bool is_training_record(const data::CaptionRecord& r, bool any_split) {
  return any_split ? r.split == "train" : true;
}

/// Every problem that would stop training, gathered before anything is
/// written. Loads features as part of the check.
inline PreparedData prepare_data(const std::vector<data::CaptionRecord>& records,
                                 const std::filesystem::path& manifest_path, const TrainConfig& cfg,
                                 const ModelConfig& mcfg, const Vocab& vocab, const std::vector<std::string>& prompts) {
  std::vector<std::string> problems;
  if (records.empty()) problems.push_back("manifest has no records");
  const bool any_split = std::any_of(records.begin(), records.end(), [](const auto& r) { return !r.split.empty(); });

  PreparedData out;
  out.category_names = category_names(records);
  std::set<std::string> ids;
  std::map<int, std::size_t> train_per_cat;
  for (const auto& r : records) {
    const std::string where = "record '" + r.id + "'";
    if (r.id.empty()) problems.push_back("record with empty id");
    if (!ids.insert(r.id).second) problems.push_back(where + ": duplicate id");
    if (r.emotion_category.empty()) problems.push_back(where + ": empty emotion_category");
    if (!r.split.empty() && r.split != "train" && r.split != "val" && r.split != "test")
      problems.push_back(where + ": unknown split '" + r.split + "'");
    PreparedItem it;
    it.id = r.id;
    it.category = static_cast<int>(std::lower_bound(out.category_names.begin(), out.category_names.end(),
                                                    r.emotion_category) -
                                   out.category_names.begin());
    try {
      it.feats = audio::load_features(data::resolve_audio(r, manifest_path), mcfg.feat);
      if (it.feats.frames.rows() == 0) problems.push_back(where + ": audio yields no frames");
      if (it.feats.frames.cols() != mcfg.feat.mel_bins)
        problems.push_back(where + ": features have width " + std::to_string(it.feats.frames.cols()) + ", model expects " +
                           std::to_string(mcfg.feat.mel_bins));
    } catch (const std::exception& e) {
      problems.push_back(where + ": " + e.what());
    }
    try {
      if (cfg.stage == 1) {
        if (r.transcription.empty()) problems.push_back(where + ": empty transcription");
        else it.transcription = vocab.tokenize(r.transcription);
        if (it.transcription.size() > mcfg.max_text_len) problems.push_back(where + ": transcription too long");
      }
      for (const auto& c : r.captions) {
        if (c.empty()) {
          problems.push_back(where + ": empty caption");
          continue;
        }
        it.captions.push_back(vocab.tokenize(c));
        it.caption_text.push_back(c);
        if (cfg.stage == 1 && it.captions.back().size() > mcfg.max_text_len)
          problems.push_back(where + ": caption too long for the Q-Former");
      }
    } catch (const std::exception& e) {
      problems.push_back(where + ": " + e.what());
    }
    const std::size_t idx = out.items.size();
    if (is_training_record(r, any_split)) {
      out.train.push_back(idx);
      ++train_per_cat[it.category];
    } else {
      out.held_out.push_back(idx);
    }
    out.items.push_back(std::move(it));
  }
  if (!records.empty() && out.train.empty()) problems.push_back("no training records (split == \"train\")");
  if (cfg.stage == 1 && !out.train.empty()) {
    if (train_per_cat.size() < cfg.n_categories)
      problems.push_back("stage 1 needs " + std::to_string(cfg.n_categories) + " categories in the training split, found " +
                         std::to_string(train_per_cat.size()));
    std::size_t eligible = 0;
    for (const auto& [c, n] : train_per_cat) {
      if (n >= cfg.k_per_category) ++eligible;
      else
        problems.push_back("category '" + out.category_names[static_cast<std::size_t>(c)] + "' has " +
                           std::to_string(n) + " training records, k_per_category is " +
                           std::to_string(cfg.k_per_category));
    }
    (void)eligible;
  }
  if (cfg.stage == 2) {
    std::size_t longest_prompt = 0;
    for (const auto& p : prompts) longest_prompt = std::max(longest_prompt, utf8::decode(p).size());
    for (std::size_t i : out.train)
      for (const auto& c : out.items[i].captions)
        if (1 + mcfg.n_q + longest_prompt + c.size() > mcfg.max_positions) {
          problems.push_back("record '" + out.items[i].id + "': caption exceeds decoder position capacity");
          break;
        }
  }
  if (!problems.empty()) throw data::ManifestError(std::move(problems));
  return out;
}

// ---------------------------------------------------------------- trainer

struct Stage1Report {
  double u = 0;     // vCLUB estimate after the VarNet ascent step
  double l = 0;     // SCCL loss
  double total = 0;  // w_t1 u + w_t2 l
  double varnet_loglik = 0;
};

struct MetricRow {
  std::uint64_t step = 0;
  double loss_total = 0;
  std::optional<double> loss_mi, loss_sccl, loss_ce;
  double wall_ms = 0;
};

inline std::string metrics_header() { return "step,loss_total,loss_mi,loss_sccl,loss_ce,wall_ms\n"; }

inline std::string metrics_line(const MetricRow& r) {
  auto f = [](std::optional<double> v) {
    if (!v) return std::string();
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", *v);
    return std::string(b);
  };
  char wall[32];
  std::snprintf(wall, sizeof wall, "%.3f", r.wall_ms);
  return std::to_string(r.step) + "," + f(r.loss_total) + "," + f(r.loss_mi) + "," + f(r.loss_sccl) + "," +
         f(r.loss_ce) + "," + wall + "\n";
}

class Trainer {
 public:
  Trainer(Model model, TrainConfig cfg, std::shared_ptr<const PreparedData> data, PromptBank prompts)
      : model_(std::move(model)),
        cfg_(std::move(cfg)),
        data_(std::move(data)),
        prompts_(std::move(prompts)),
        opt_(AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8, cfg_.clip_norm}),
        varnet_opt_(AdamConfig{cfg_.varnet_lr, 0.9, 0.999, 1e-8, cfg_.clip_norm}),
        rng_(cfg_.seed) {
    cfg_.validate();
    for (const auto& p : prompts_.prompts()) prompt_ids_.push_back(model_.vocab().tokenize(p));
    train_categories_.reserve(data_->train.size());
    for (std::size_t i : data_->train) train_categories_.push_back(data_->items[i].category);
  }

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const PreparedData& data() const { return *data_; }
  std::uint64_t step() const { return step_; }
  std::mt19937_64& rng() { return rng_; }
  bool decoder_pretrained() const { return decoder_pretrained_; }
  void set_decoder_pretrained(bool v) { decoder_pretrained_ = v; }

  /// N x K training indices, grouped by category.
  std::vector<std::size_t> sample_stage1_batch() {
    const auto local = sccl::sample_contrastive_batch(train_categories_, cfg_.n_categories, cfg_.k_per_category, rng_,
                                                      data_->category_names);
    std::vector<std::size_t> out;
    for (std::size_t i : local) out.push_back(data_->train[i]);
    return out;
  }

  std::vector<std::size_t> sample_stage2_batch(std::mt19937_64& rng) const {
    auto pool = data_->train;
    const std::size_t b = std::min(cfg_.batch_size, pool.size());
    for (std::size_t i = 0; i < b; ++i) std::swap(pool[i], pool[i + sccl::uniform_index(rng, pool.size() - i)]);
    pool.resize(b);
    return pool;
  }

  const std::vector<int>& pick_caption(const PreparedItem& it, std::mt19937_64& rng) const {
    return cfg_.random_caption ? it.captions[sccl::uniform_index(rng, it.captions.size())] : it.captions.front();
  }

  /// Pooled Q_e, Q_t and Q_c rows plus labels for a stage-1 batch. Caption
  /// choices draw from rng.
  struct Stage1Inputs {
    ad::Var e, t, c;
    std::vector<int> category;
  };
  Stage1Inputs stage1_inputs(const std::vector<std::size_t>& batch, std::mt19937_64& rng) const {
    std::vector<ad::Var> es, ts, cs;
    Stage1Inputs in;
    const auto& qf = model_.qformer();
    for (std::size_t idx : batch) {
      const auto& it = data_->items.at(idx);
      es.push_back(ad::mean_rows(qf.encode_speech(it.feats)));
      ts.push_back(ad::mean_rows(qf.encode_text(it.transcription, TextKind::Transcription).rows));
      cs.push_back(ad::mean_rows(qf.encode_text(pick_caption(it, rng), TextKind::Caption).rows));
      in.category.push_back(it.category);
    }
    in.e = ad::concat_rows(es);
    in.t = ad::concat_rows(ts);
    in.c = ad::concat_rows(cs);
    return in;
  }

  /// One VarNet ascent step, then one descent step on w_t1 U + w_t2 L.
  Stage1Report stage1_step(const std::vector<std::size_t>& batch) {
    if (cfg_.stage != 1) throw Error("stage1_step called in stage " + std::to_string(cfg_.stage));
    auto& ps = model_.params();
    ps.zero_grad();
    const auto in = stage1_inputs(batch, rng_);
    Stage1Report rep;
    if (!cfg_.freeze_varnet)
      rep.varnet_loglik = mi::train_varnet_step(model_.varnet(), ps, varnet_opt_, in.t.value(), in.e.value());
    const auto u = mi::club_upper_bound(model_.varnet(), in.t, in.e);
    const auto l = sccl::sccl_loss({in.e, in.c, in.category}, cfg_.sccl);
    const auto total = ad::add(ad::scale(u, cfg_.w_t1), ad::scale(l, cfg_.w_t2));
    rep.u = u.item();
    rep.l = l.item();
    rep.total = total.item();
    if (!std::isfinite(rep.u) || !std::isfinite(rep.l) || !std::isfinite(rep.total))
      throw mi::NonFiniteLossError("non-finite stage-1 loss at step " + std::to_string(step_ + 1) +
                                   ": U=" + std::to_string(rep.u) + " L=" + std::to_string(rep.l) +
                                   " L_T1=" + std::to_string(rep.total));
    ad::backward(total);
    opt_.step(ps, [&](ParamGroup g) { return g == ParamGroup::VarNet || cfg_.frozen(g); });
    ps.zero_grad();
    ++step_;
    return rep;
  }

  Stage1Report stage1_step() { return stage1_step(sample_stage1_batch()); }

  /// Mean teacher-forced CE over the batch. When l_slot_zero, the
  /// L-Embedding is replaced by zeros (decoder language-model pretraining).
  ad::Var caption_loss(const std::vector<std::size_t>& batch, std::mt19937_64& rng, bool l_slot_zero) const {
    std::vector<ad::Var> losses;
    const auto& dec = model_.decoder();
    const auto& mc = model_.config();
    for (std::size_t idx : batch) {
      const auto& it = data_->items.at(idx);
      const auto l = l_slot_zero ? ad::constant(Tensor(mc.n_q, mc.d_dec, 0.0)) : model_.l_embedding(it.feats);
      const auto& prompt = prompt_ids_[prompts_.draw(rng)];
      const auto& caption = pick_caption(it, rng);
      losses.push_back(dec.teacher_forced_loss(dec.assemble_input(l, prompt, caption)));
    }
    return ad::scale(ad::sum(ad::concat_rows(losses)), 1.0 / static_cast<double>(losses.size()));
  }

  double stage2_step(const std::vector<std::size_t>& batch) {
    if (cfg_.stage != 2) throw Error("stage2_step called in stage " + std::to_string(cfg_.stage));
    auto& ps = model_.params();
    ps.zero_grad();
    const auto loss = caption_loss(batch, rng_, false);
    const double v = loss.item();
    if (!std::isfinite(v))
      throw mi::NonFiniteLossError("non-finite stage-2 CE at step " + std::to_string(step_ + 1) + ": " +
                                   std::to_string(v));
    ad::backward(loss);
    opt_.step(ps, [&](ParamGroup g) { return cfg_.frozen(g); });
    ps.zero_grad();
    ++step_;
    return v;
  }

  double stage2_step() { return stage2_step(sample_stage2_batch(rng_)); }

  /// Trains only the decoder core on captions with a zero L-slot. Uses its
  /// own optimizer and a stream derived from the seed, so it does not touch
  /// the main trajectory. Returns the per-step losses.
  std::vector<double> pretrain_decoder(std::size_t steps) {
    std::vector<double> out;
    Adam opt(AdamConfig{cfg_.decoder_pretrain_lr, 0.9, 0.999, 1e-8, cfg_.clip_norm});
    std::mt19937_64 rng(data::splitmix64(cfg_.seed ^ 0xDEC0DE5ull));
    auto& ps = model_.params();
    for (std::size_t s = 0; s < steps; ++s) {
      ps.zero_grad();
      const auto loss = caption_loss(sample_stage2_batch(rng), rng, true);
      if (!std::isfinite(loss.item()))
        throw mi::NonFiniteLossError("non-finite decoder pretraining loss at step " + std::to_string(s + 1));
      out.push_back(loss.item());
      ad::backward(loss);
      opt.step(ps, [](ParamGroup g) { return g != ParamGroup::DecoderCore; });
    }
    ps.zero_grad();
    decoder_pretrained_ = true;
    return out;
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.step = step_;
    ck.model_config = model_.config().dump();
    ck.train_config = cfg_.dump();
    ck.vocab = vocab_to_string(model_.vocab());
    std::ostringstream rs;
    rs << rng_;
    ck.rng_state = rs.str();
    ck.counters["adam.t"] = opt_.step_count();
    ck.counters["varnet_adam.t"] = varnet_opt_.step_count();
    ck.counters["decoder_pretrained"] = decoder_pretrained_ ? 1 : 0;
    ck.counters["stage"] = static_cast<std::uint64_t>(cfg_.stage);
    store_tensors(ck, model_.params(), {&opt_, &varnet_opt_});
    return ck;
  }

  /// Full state restore for resuming an interrupted run of the same stage.
  void resume(const Checkpoint& ck) {
    if (ck.counters.count("stage") && ck.counters.at("stage") != static_cast<std::uint64_t>(cfg_.stage))
      throw Error("cannot resume a stage-" + std::to_string(ck.counters.at("stage")) + " checkpoint in stage " +
                  std::to_string(cfg_.stage));
    restore_params(ck, model_.params());
    restore_moments(ck, model_.params(), opt_, [](ParamGroup g) { return g != ParamGroup::VarNet; });
    restore_moments(ck, model_.params(), varnet_opt_, [](ParamGroup g) { return g == ParamGroup::VarNet; });
    opt_.set_step_count(counter(ck, "adam.t"));
    varnet_opt_.set_step_count(counter(ck, "varnet_adam.t"));
    decoder_pretrained_ = counter(ck, "decoder_pretrained") != 0;
    std::istringstream rs(ck.rng_state);
    rs >> rng_;
    if (!rs) throw CheckpointError(CheckpointError::Kind::Format, "unreadable RNG state in checkpoint");
    step_ = ck.step;
  }

  /// Weights (and the pretraining flag) from another stage's checkpoint;
  /// optimizer, RNG and step start fresh.
  void init_from(const Checkpoint& ck) {
    restore_params(ck, model_.params());
    decoder_pretrained_ = counter(ck, "decoder_pretrained") != 0;
  }

 private:
  static std::uint64_t counter(const Checkpoint& ck, const std::string& k) {
    auto it = ck.counters.find(k);
    return it == ck.counters.end() ? 0 : it->second;
  }

  Model model_;
  TrainConfig cfg_;
  std::shared_ptr<const PreparedData> data_;
  PromptBank prompts_;
  std::vector<std::vector<int>> prompt_ids_;
  Adam opt_;
  Adam varnet_opt_;
  std::mt19937_64 rng_;
  std::vector<int> train_categories_;
  std::uint64_t step_ = 0;
  bool decoder_pretrained_ = false;
};

// ------------------------------------------------------------- run loop

struct RunOptions {
  std::filesystem::path manifest;
  std::filesystem::path out_checkpoint;
  std::filesystem::path metrics_csv;  // empty: no log
  std::optional<std::filesystem::path> init_checkpoint;
  std::optional<std::filesystem::path> resume_checkpoint;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t model_seed_offset = 0x5EED;
  std::function<void(const std::string&)> log;
};

struct RunResult {
  std::vector<MetricRow> rows;
  std::uint64_t final_step = 0;
};

inline PromptBank load_prompt_bank(const TrainConfig& cfg) {
  return cfg.prompt_file.empty() ? PromptBank(default_prompts()) : PromptBank::load(cfg.prompt_file);
}

/// Checkpoint written every checkpoint_interval steps next to the final one.
inline std::filesystem::path interval_checkpoint_path(const std::filesystem::path& out, std::uint64_t step) {
  return std::filesystem::path(out.string() + ".step" + std::to_string(step));
}

inline RunResult run_training(const RunOptions& opt) {
  const auto& cfg = opt.train;
  cfg.validate();
  const auto records = data::read_manifest(opt.manifest);
  const auto prompts = load_prompt_bank(cfg);

  std::optional<Checkpoint> start;
  if (opt.resume_checkpoint) start = load_checkpoint(*opt.resume_checkpoint);
  else if (opt.init_checkpoint) start = load_checkpoint(*opt.init_checkpoint);

  ModelConfig mcfg = start ? ModelConfig::parse(start->model_config) : opt.model;
  Vocab vocab = start ? vocab_from_string(start->vocab) : build_vocab(records, prompts.prompts());
  auto data = std::make_shared<const PreparedData>(prepare_data(records, opt.manifest, cfg, mcfg, vocab, prompts.prompts()));

  Trainer trainer(Model::create(mcfg, std::move(vocab), cfg.seed ^ opt.model_seed_offset), cfg, data, prompts);
  if (opt.resume_checkpoint) trainer.resume(*start);
  else if (opt.init_checkpoint) trainer.init_from(*start);

  auto say = [&](const std::string& s) {
    if (opt.log) opt.log(s);
  };
  if (cfg.stage == 2 && !trainer.decoder_pretrained() && cfg.decoder_pretrain_steps > 0) {
    const auto losses = trainer.pretrain_decoder(cfg.decoder_pretrain_steps);
    say("decoder pretraining: " + std::to_string(losses.size()) + " steps, final CE " + std::to_string(losses.back()));
  }

  std::ofstream metrics;
  if (!opt.metrics_csv.empty()) {
    const bool append = opt.resume_checkpoint && std::filesystem::exists(opt.metrics_csv);
    metrics.open(opt.metrics_csv, append ? std::ios::app : std::ios::trunc);
    if (!metrics) throw Error("cannot write metrics log " + opt.metrics_csv.string());
    if (!append) metrics << metrics_header();
  }

  RunResult res;
  using clock = std::chrono::steady_clock;
  while (trainer.step() < cfg.steps) {
    const auto t0 = clock::now();
    MetricRow row;
    if (cfg.stage == 1) {
      const auto r = trainer.stage1_step();
      row.loss_total = r.total;
      row.loss_mi = r.u;
      row.loss_sccl = r.l;
    } else {
      row.loss_total = trainer.stage2_step();
      row.loss_ce = row.loss_total;
    }
    row.step = trainer.step();
    row.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    if (metrics) metrics << metrics_line(row) << std::flush;
    res.rows.push_back(row);
    if (cfg.checkpoint_interval > 0 && row.step % cfg.checkpoint_interval == 0 && row.step < cfg.steps)
      save_checkpoint(trainer.checkpoint(), interval_checkpoint_path(opt.out_checkpoint, row.step));
    if (row.step % 50 == 0) say("step " + std::to_string(row.step) + " loss " + std::to_string(row.loss_total));
  }
  save_checkpoint(trainer.checkpoint(), opt.out_checkpoint);
  res.final_step = trainer.step();
  return res;
}

// ------------------------------------------------------------ diagnostics

/// True when `word` appears in text as a whole word (letters only).
inline bool contains_word(const std::string& text, const std::string& word) {
  std::string cur;
  auto flush = [&] {
    const bool hit = cur == word;
    cur.clear();
    return hit;
  };
  for (char ch : text) {
    if (std::isalpha(static_cast<unsigned char>(ch))) cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    else if (flush()) return true;
  }
  return flush();
}

/// Fraction of items whose greedy caption names their own category.
inline double keyword_accuracy(const Model& model, const PreparedData& data, const std::vector<std::size_t>& items,
                               const std::string& prompt, std::size_t max_len) {
  if (items.empty()) throw Error("keyword_accuracy: no items");
  std::size_t hits = 0;
  for (std::size_t i : items) {
    const auto& it = data.items.at(i);
    if (contains_word(model.caption(it.feats, prompt, max_len),
                      data.category_names.at(static_cast<std::size_t>(it.category))))
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

struct Separation {
  double within = 0, across = 0;
  double gap() const { return within - across; }
};

/// Mean pairwise cosine of pooled Q_e within and across categories.
inline Separation pooled_separation(const Model& model, const PreparedData& data, const std::vector<std::size_t>& items) {
  ad::NoGradGuard guard;
  std::vector<std::vector<double>> e;
  std::vector<int> cat;
  for (std::size_t i : items) {
    const auto p = ad::mean_rows(model.qformer().encode_speech(data.items.at(i).feats)).value();
    double n = 0;
    for (double v : p.data()) n += v * v;
    n = std::sqrt(n);
    std::vector<double> u(p.data().begin(), p.data().end());
    for (auto& v : u) v /= n;
    e.push_back(std::move(u));
    cat.push_back(data.items.at(i).category);
  }
  double ws = 0, as = 0;
  std::size_t wn = 0, an = 0;
  for (std::size_t a = 0; a < e.size(); ++a)
    for (std::size_t b = a + 1; b < e.size(); ++b) {
      double c = 0;
      for (std::size_t k = 0; k < e[a].size(); ++k) c += e[a][k] * e[b][k];
      if (cat[a] == cat[b]) ws += c, ++wn;
      else as += c, ++an;
    }
  if (wn == 0 || an == 0) throw Error("pooled_separation: need pairs within and across categories");
  return {ws / static_cast<double>(wn), as / static_cast<double>(an)};
}

}  // namespace secap
