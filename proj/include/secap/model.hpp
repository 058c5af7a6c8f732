#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "secap/audio.hpp"
#include "secap/config.hpp"
#include "secap/decoder.hpp"
#include "secap/miestim.hpp"
#include "secap/params.hpp"
#include "secap/qformer.hpp"
#include "secap/vocab.hpp"

namespace secap {

struct ModelConfig {
  audio::FeatConfig feat;
  std::size_t n_q = 8;
  std::size_t d_q = 64;
  std::size_t qformer_layers = 2;
  std::size_t qformer_ffn = 256;
  std::size_t max_text_len = 256;
  std::size_t d_dec = 64;
  std::size_t decoder_layers = 2;
  std::size_t decoder_ffn = 256;
  std::size_t max_positions = 256;
  std::size_t varnet_hidden = 64;

  FieldTable fields() {
    FieldTable t;
    t.bind("window_length", feat.window_length);
    t.bind("hop_length", feat.hop_length);
    t.bind("mel_bins", feat.mel_bins);
    t.bind("fmin", feat.fmin);
    t.bind("fmax", feat.fmax);
    t.bind("log_floor", feat.log_floor);
    t.bind("n_q", n_q);
    t.bind("d_q", d_q);
    t.bind("qformer_layers", qformer_layers);
    t.bind("qformer_ffn", qformer_ffn);
    t.bind("max_text_len", max_text_len);
    t.bind("d_dec", d_dec);
    t.bind("decoder_layers", decoder_layers);
    t.bind("decoder_ffn", decoder_ffn);
    t.bind("max_positions", max_positions);
    t.bind("varnet_hidden", varnet_hidden);
    return t;
  }
  std::string dump() const {
    ModelConfig c = *this;
    return c.fields().dump();
  }
  static ModelConfig parse(const std::string& text, bool allow_unknown = false) {
    ModelConfig c;
    c.fields().apply(parse_key_values(text), allow_unknown);
    c.validate();
    return c;
  }

  void validate() const {
    std::vector<std::string> p;
    if (n_q == 0) p.push_back("n_q must be positive");
    if (d_q == 0 || d_dec == 0) p.push_back("d_q and d_dec must be positive");
    if (qformer_ffn == 0 || decoder_ffn == 0) p.push_back("ffn widths must be positive");
    if (max_positions < n_q + 3) p.push_back("max_positions too small for the L-Embedding");
    if (!p.empty()) throw ConfigError(std::move(p));
  }

  QFormerConfig qformer(std::size_t vocab) const {
    return {n_q, d_q, d_q, d_q, feat.mel_bins, qformer_layers, qformer_ffn, vocab, max_text_len};
  }
  DecoderConfig decoder(std::size_t vocab) const {
    return {d_dec, decoder_layers, decoder_ffn, max_positions, vocab};
  }
  mi::VarNetConfig varnet() const { return {d_q, d_q, varnet_hidden}; }
};

/// Every trainable piece of the pipeline over one parameter store. Movable,
/// not copyable: the sub-modules hold handles into the store.
class Model {
 public:
  static Model create(const ModelConfig& cfg, Vocab vocab, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    m.vocab_ = std::move(vocab);
    const std::size_t v = m.vocab_.size();
    std::mt19937_64 rng(seed);
    m.qformer_ = QFormer::create(m.params_, cfg.qformer(v), rng);
    m.proj_ = create_projection(m.params_, cfg.d_q, cfg.d_dec, rng);
    m.decoder_ = Decoder::create(m.params_, cfg.decoder(v), rng);
    m.varnet_ = mi::VarNet::create(m.params_, cfg.varnet(), rng);
    snap_to_f32(m.params_);
    return m;
  }

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const QFormer& qformer() const { return qformer_; }
  const Affine& projection() const { return proj_; }
  const Decoder& decoder() const { return decoder_; }
  const mi::VarNet& varnet() const { return varnet_; }

  ad::Var l_embedding(const audio::SpeechFeatures& f) const { return project(qformer_.encode_speech(f), proj_); }

  std::string caption(const audio::SpeechFeatures& f, const std::string& prompt, std::size_t max_len) const {
    ad::NoGradGuard guard;
    return decoder_.generate_greedy(l_embedding(f), vocab_.tokenize(prompt), vocab_, max_len);
  }

 private:
  Model() = default;

  ModelConfig cfg_;
  Vocab vocab_;
  ParameterStore params_;
  QFormer qformer_;
  Affine proj_;
  Decoder decoder_;
  mi::VarNet varnet_;
};

}  // namespace secap
