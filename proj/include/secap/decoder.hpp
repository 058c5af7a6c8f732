#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "secap/autodiff.hpp"
#include "secap/params.hpp"
#include "secap/qformer.hpp"
#include "secap/sccl.hpp"
#include "secap/vocab.hpp"

namespace secap {

struct DecoderConfig {
  std::size_t d_dec = 64;
  std::size_t layers = 2;
  std::size_t ffn = 256;
  std::size_t max_positions = 256;
  std::size_t vocab = 0;
};

/// Row ranges of an assembled decoder input: BOS, L-Embedding, prompt and
/// (training only) caption, contiguous and in that order.
struct DecoderLayout {
  std::size_t l_rows = 0;
  std::size_t prompt_len = 0;
  std::size_t caption_len = 0;
  bool has_caption = false;

  std::size_t l_begin() const { return 1; }
  std::size_t prompt_begin() const { return 1 + l_rows; }
  std::size_t caption_begin() const { return 1 + l_rows + prompt_len; }
  std::size_t length() const { return 1 + l_rows + prompt_len + caption_len; }
  /// Rows whose next-token prediction is scored: the last prompt row and
  /// every caption row (the final one predicts EOS).
  std::size_t loss_begin() const { return caption_begin() - 1; }
  std::size_t loss_positions() const { return has_caption ? caption_len + 1 : 0; }

  bool operator==(const DecoderLayout&) const = default;
};

inline void to_json(nlohmann::json& j, const DecoderLayout& l) {
  j = nlohmann::json{{"l_rows", l.l_rows},
                     {"prompt_len", l.prompt_len},
                     {"caption_len", l.caption_len},
                     {"has_caption", l.has_caption}};
}

inline void from_json(const nlohmann::json& j, DecoderLayout& l) {
  j.at("l_rows").get_to(l.l_rows);
  j.at("prompt_len").get_to(l.prompt_len);
  j.at("caption_len").get_to(l.caption_len);
  j.at("has_caption").get_to(l.has_caption);
}

struct DecoderInput {
  ad::Var rows;  // length x d_dec, positions included
  DecoderLayout layout;
  std::vector<int> targets;  // caption ids followed by EOS
};

struct DecoderLayer {
  LayerNormWeights ln_attn, ln_ffn;
  AttentionWeights attn;
  ad::Var wo;
  FeedForward ffn;
};

class Decoder {
 public:
  Decoder() = default;

  static Decoder create(ParameterStore& ps, const DecoderConfig& cfg, std::mt19937_64& rng) {
    if (cfg.vocab == 0) throw Error("DecoderConfig.vocab must be set");
    const auto G = ParamGroup::DecoderCore;
    const std::size_t d = cfg.d_dec;
    ps.add("decoder.tok_emb", init::normal(cfg.vocab, d, 1.0, rng), G);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = "decoder.l" + std::to_string(l) + ".";
      for (const char* ln : {"ln_attn", "ln_ffn"}) {
        ps.add(p + ln + ".g", init::ones(d), G);
        ps.add(p + ln + ".b", init::zeros(d), G);
      }
      ps.add(p + "attn.wq", init::xavier(d, d, rng), G);
      ps.add(p + "attn.wk", init::xavier(d, d, rng), G);
      ps.add(p + "attn.wv", init::xavier(d, d, rng), G);
      ps.add(p + "attn.wo", init::xavier(d, d, rng), G);
      ps.add(p + "ffn.w1", init::xavier(d, cfg.ffn, rng), G);
      ps.add(p + "ffn.b1", init::zeros(cfg.ffn), G);
      ps.add(p + "ffn.w2", init::xavier(cfg.ffn, d, rng), G);
      ps.add(p + "ffn.b2", init::zeros(d), G);
    }
    ps.add("decoder.ln_out.g", init::ones(d), G);
    ps.add("decoder.ln_out.b", init::zeros(d), G);
    ps.add("decoder.head.w", init::xavier(d, cfg.vocab, rng), G);
    ps.add("decoder.head.b", init::zeros(cfg.vocab), G);
    return bind(ps, cfg);
  }

  static Decoder bind(const ParameterStore& ps, const DecoderConfig& cfg) {
    Decoder dec;
    dec.cfg_ = cfg;
    dec.tok_emb_ = ps.get("decoder.tok_emb");
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = "decoder.l" + std::to_string(l) + ".";
      DecoderLayer L;
      L.ln_attn = {ps.get(p + "ln_attn.g"), ps.get(p + "ln_attn.b")};
      L.ln_ffn = {ps.get(p + "ln_ffn.g"), ps.get(p + "ln_ffn.b")};
      L.attn = {ps.get(p + "attn.wq"), ps.get(p + "attn.wk"), ps.get(p + "attn.wv")};
      L.wo = ps.get(p + "attn.wo");
      L.ffn = {ps.get(p + "ffn.w1"), ps.get(p + "ffn.b1"), ps.get(p + "ffn.w2"), ps.get(p + "ffn.b2")};
      dec.layers_.push_back(L);
    }
    dec.ln_out_ = {ps.get("decoder.ln_out.g"), ps.get("decoder.ln_out.b")};
    dec.head_ = {ps.get("decoder.head.w"), ps.get("decoder.head.b")};
    dec.positions_ = sinusoidal_positions(cfg.max_positions, cfg.d_dec);
    return dec;
  }

  const DecoderConfig& config() const { return cfg_; }

  ad::Var embed(const std::vector<int>& ids) const { return ad::gather_rows(tok_emb_, ids); }

  /// BOS, then l_embedding rows, then prompt, then the caption if given.
  /// Positions run contiguously across all segments.
  DecoderInput assemble_input(const ad::Var& l_embedding, const std::vector<int>& prompt,
                              const std::optional<std::vector<int>>& caption = std::nullopt) const {
    if (prompt.empty()) throw Error("assemble_input: empty prompt");
    if (l_embedding.cols() != cfg_.d_dec)
      throw ShapeError("assemble_input: L-Embedding width " + std::to_string(l_embedding.cols()) + ", decoder " +
                       std::to_string(cfg_.d_dec));
    DecoderInput in;
    in.layout.l_rows = l_embedding.rows();
    in.layout.prompt_len = prompt.size();
    in.layout.has_caption = caption.has_value();
    in.layout.caption_len = caption ? caption->size() : 0;
    if (in.layout.length() > cfg_.max_positions)
      throw Error("decoder input of length " + std::to_string(in.layout.length()) + " exceeds " +
                  std::to_string(cfg_.max_positions) + " positions");

    std::vector<ad::Var> parts{embed({Vocab::kBos}), l_embedding, embed(prompt)};
    if (caption && !caption->empty()) parts.push_back(embed(*caption));
    if (caption) {
      in.targets = *caption;
      in.targets.push_back(Vocab::kEos);
    }
    in.rows = ad::add(ad::concat_rows(parts), ad::constant(slice_rows(positions_, 0, in.layout.length())));
    return in;
  }

  /// Final hidden states (after the output norm), one row per position.
  ad::Var hidden(const ad::Var& rows) const {
    auto x = rows;
    for (const auto& L : layers_) {
      x = x + ad::matmul(self_attend(L.ln_attn(x), L.attn, /*causal=*/true), L.wo);
      x = x + L.ffn(L.ln_ffn(x));
    }
    return ln_out_(x);
  }

  ad::Var logits(const ad::Var& rows) const { return head_(hidden(rows)); }

  /// Mean next-token cross-entropy over the caption rows and the final EOS.
  ad::Var teacher_forced_loss(const DecoderInput& in) const {
    if (!in.layout.has_caption) throw Error("teacher_forced_loss: input has no caption segment");
    const auto h = hidden(in.rows);
    const auto scored = ad::slice_rows(h, in.layout.loss_begin(), in.layout.length());
    return ad::cross_entropy_rows(head_(scored), in.targets);
  }

  /// Iterative argmax decoding; ties go to the lowest id. Stops at EOS or
  /// after max_len symbols.
  std::vector<int> generate_greedy_ids(const ad::Var& l_embedding, const std::vector<int>& prompt,
                                       std::size_t max_len) const {
    ad::NoGradGuard guard;
    const auto l = ad::detach(l_embedding);
    std::vector<int> out;
    while (out.size() < max_len) {
      const auto in = assemble_input(l, prompt, out);
      const auto h = hidden(in.rows);
      const auto last = head_(ad::slice_rows(h, in.layout.length() - 1, in.layout.length())).value();
      int best = 0;
      for (std::size_t c = 1; c < last.cols(); ++c)
        if (last[c] > last[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
      if (best == Vocab::kEos) break;
      out.push_back(best);
    }
    return out;
  }

  std::string generate_greedy(const ad::Var& l_embedding, const std::vector<int>& prompt, const Vocab& vocab,
                              std::size_t max_len) const {
    return vocab.detokenize(generate_greedy_ids(l_embedding, prompt, max_len));
  }

 private:
  DecoderConfig cfg_;
  ad::Var tok_emb_;
  std::vector<DecoderLayer> layers_;
  LayerNormWeights ln_out_;
  Affine head_;
  Tensor positions_;
};

// ------------------------------------------------------------ prompt bank

inline const std::vector<std::string>& default_prompts() {
  static const std::vector<std::string> bank = {
      "describe the speaker's emotion in one sentence:",
      "portray the speaker's emotion in a single sentence:",
      "in one sentence, how does the speaker feel?",
      "sum up the speaker's emotion in one sentence:",
      "tell me the speaker's emotion in a sentence:",
      "state the emotion in this voice in one sentence:",
      "what emotion does the speaker convey? one sentence:",
      "characterize the speaker's feeling in one line:",
      "give a one-sentence account of the speaker's mood:",
      "describe how the speaker sounds emotionally:",
      "in a single sentence, describe the voice's emotion:",
      "write one sentence about the speaker's emotion:",
      "capture the speaker's emotional state in a sentence:",
      "explain the speaker's mood in one sentence:",
      "one sentence on the emotion of this speech:",
      "describe the emotion heard in this speech:",
      "portray the mood of the speaker briefly:",
      "how is the speaker feeling? answer in one sentence:",
      "summarize the emotional tone of the speaker:",
      "put the speaker's emotion into one sentence:",
      "describe the feeling behind this voice:",
      "what is the speaker's emotional tone? one line:",
      "in one line, portray the speaker's emotion:",
      "name and describe the speaker's emotion:",
      "give the speaker's emotion as one sentence:",
      "briefly describe the emotion of the speaker:",
      "express the speaker's emotion in a sentence:",
      "describe the speaker's affect in one sentence:",
      "one sentence: the emotion in the speaker's voice",
      "report the speaker's emotion in a short sentence:",
  };
  return bank;
}

class PromptBank {
 public:
  explicit PromptBank(std::vector<std::string> prompts) : prompts_(std::move(prompts)) {
    if (prompts_.empty()) throw Error("prompt bank is empty");
  }

  /// One prompt per non-empty line, UTF-8.
  static PromptBank load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read prompt bank " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) lines.push_back(line);
    }
    return PromptBank(std::move(lines));
  }

  std::size_t size() const { return prompts_.size(); }
  const std::vector<std::string>& prompts() const { return prompts_; }
  const std::string& at(std::size_t i) const { return prompts_.at(i); }

  /// Uniform training-time draw.
  std::size_t draw(std::mt19937_64& rng) const { return sccl::uniform_index(rng, prompts_.size()); }

  /// Inference always uses the first prompt.
  const std::string& inference_prompt() const { return prompts_.front(); }

 private:
  std::vector<std::string> prompts_;
};

}  // namespace secap
