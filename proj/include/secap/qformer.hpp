#pragma once

// Bridge network: learnable queries self-attend, then cross-attend over the
// (projected) speech frames, giving a fixed n_q x d_q embedding. The text
// branch reuses the same stack with cross-attention skipped.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "secap/audio.hpp"
#include "secap/autodiff.hpp"
#include "secap/params.hpp"

namespace secap {

struct QFormerConfig {
  std::size_t n_q = 8;
  std::size_t d_q = 64;
  std::size_t d_k = 64;
  std::size_t d_kv = 64;  // width of projected speech frames
  std::size_t d_s = 40;   // raw feature width
  std::size_t layers = 2;
  std::size_t ffn = 256;
  std::size_t vocab = 0;
  std::size_t max_text_len = 256;
};

struct AttentionWeights {
  ad::Var wq, wk, wv;
};

struct LayerNormWeights {
  ad::Var gain, bias;
  ad::Var operator()(const ad::Var& x) const { return ad::layer_norm(x, gain, bias); }
};

struct FeedForward {
  ad::Var w1, b1, w2, b2;
  ad::Var operator()(const ad::Var& x) const {
    return ad::add_row(ad::matmul(ad::relu(ad::add_row(ad::matmul(x, w1), b1)), w2), b2);
  }
};

struct Affine {
  ad::Var w, b;
  ad::Var operator()(const ad::Var& x) const {
    if (x.cols() != w.rows())
      throw ShapeError("affine: input width " + std::to_string(x.cols()) + " but weight is " +
                       shape_str(w.shape()));
    return ad::add_row(ad::matmul(x, w), b);
  }
};

/// softmax((x Wq)(x Wk)^T / sqrt(d_k)) (x Wv)
inline ad::Var self_attend(const ad::Var& x, const AttentionWeights& w, bool causal = false) {
  if (x.cols() != w.wq.rows())
    throw ShapeError("self_attend: input width " + std::to_string(x.cols()) + " but W_q is " +
                     shape_str(w.wq.shape()));
  const auto q = ad::matmul(x, w.wq);
  const auto k = ad::matmul(x, w.wk);
  const auto v = ad::matmul(x, w.wv);
  const double s = 1.0 / std::sqrt(static_cast<double>(w.wk.cols()));
  return ad::matmul(ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), s), causal), v);
}

/// softmax((a Wq)(S Wk)^T / sqrt(d_k)) (S Wv); queries from a, keys and
/// values from the speech frames s.
inline ad::Var cross_attend(const ad::Var& a, const ad::Var& s, const AttentionWeights& w) {
  if (a.cols() != w.wq.rows())
    throw ShapeError("cross_attend: query width " + std::to_string(a.cols()) + " but W_q is " +
                     shape_str(w.wq.shape()));
  if (s.cols() != w.wk.rows())
    throw ShapeError("cross_attend: frame width " + std::to_string(s.cols()) + " but W_k is " +
                     shape_str(w.wk.shape()));
  const auto q = ad::matmul(a, w.wq);
  const auto k = ad::matmul(s, w.wk);
  const auto v = ad::matmul(s, w.wv);
  const double sc = 1.0 / std::sqrt(static_cast<double>(w.wk.cols()));
  return ad::matmul(ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), sc)), v);
}

/// Standard sinusoidal table, rows = positions.
inline Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  Tensor pe(length, dim);
  for (std::size_t p = 0; p < length; ++p)
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(p, i) = (i % 2 == 0) ? std::sin(static_cast<double>(p) * rate) : std::cos(static_cast<double>(p) * rate);
    }
  return pe;
}

inline Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  Tensor out(end - begin, t.cols());
  std::copy(t.data().begin() + static_cast<long>(begin * t.cols()),
            t.data().begin() + static_cast<long>(end * t.cols()), out.data().begin());
  return out;
}

enum class TextKind { Transcription, Caption };

struct TextEmbedding {
  ad::Var rows;
  TextKind kind;
};

struct QFormerLayer {
  LayerNormWeights ln_self, ln_cross, ln_ffn;
  AttentionWeights self_attn, cross_attn;
  FeedForward ffn;
};

class QFormer {
 public:
  QFormer() = default;

  /// Registers fresh parameters under "qformer.*" and "feat_proj.*".
  static QFormer create(ParameterStore& ps, const QFormerConfig& cfg, std::mt19937_64& rng) {
    if (cfg.vocab == 0) throw Error("QFormerConfig.vocab must be set");
    const auto G = ParamGroup::QFormer;
    ps.add("feat_proj.w", init::xavier(cfg.d_s, cfg.d_kv, rng), ParamGroup::FeaturizerProjection);
    ps.add("feat_proj.b", init::zeros(cfg.d_kv), ParamGroup::FeaturizerProjection);
    ps.add("qformer.queries", init::normal(cfg.n_q, cfg.d_q, 1.0, rng), G);
    ps.add("qformer.tok_emb", init::normal(cfg.vocab, cfg.d_q, 1.0, rng), G);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = "qformer.l" + std::to_string(l) + ".";
      for (const char* ln : {"ln_self", "ln_cross", "ln_ffn"}) {
        ps.add(p + ln + ".g", init::ones(cfg.d_q), G);
        ps.add(p + ln + ".b", init::zeros(cfg.d_q), G);
      }
      ps.add(p + "self.wq", init::xavier(cfg.d_q, cfg.d_k, rng), G);
      ps.add(p + "self.wk", init::xavier(cfg.d_q, cfg.d_k, rng), G);
      ps.add(p + "self.wv", init::xavier(cfg.d_q, cfg.d_q, rng), G);
      ps.add(p + "cross.wq", init::xavier(cfg.d_q, cfg.d_k, rng), G);
      ps.add(p + "cross.wk", init::xavier(cfg.d_kv, cfg.d_k, rng), G);
      ps.add(p + "cross.wv", init::xavier(cfg.d_kv, cfg.d_q, rng), G);
      ps.add(p + "ffn.w1", init::xavier(cfg.d_q, cfg.ffn, rng), G);
      ps.add(p + "ffn.b1", init::zeros(cfg.ffn), G);
      ps.add(p + "ffn.w2", init::xavier(cfg.ffn, cfg.d_q, rng), G);
      ps.add(p + "ffn.b2", init::zeros(cfg.d_q), G);
    }
    ps.add("qformer.ln_out.g", init::ones(cfg.d_q), G);
    ps.add("qformer.ln_out.b", init::zeros(cfg.d_q), G);
    return bind(ps, cfg);
  }

  static QFormer bind(const ParameterStore& ps, const QFormerConfig& cfg) {
    QFormer q;
    q.cfg_ = cfg;
    q.feat_proj_ = {ps.get("feat_proj.w"), ps.get("feat_proj.b")};
    q.queries_ = ps.get("qformer.queries");
    q.tok_emb_ = ps.get("qformer.tok_emb");
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = "qformer.l" + std::to_string(l) + ".";
      auto ln = [&](const std::string& n) { return LayerNormWeights{ps.get(p + n + ".g"), ps.get(p + n + ".b")}; };
      QFormerLayer L;
      L.ln_self = ln("ln_self");
      L.ln_cross = ln("ln_cross");
      L.ln_ffn = ln("ln_ffn");
      L.self_attn = {ps.get(p + "self.wq"), ps.get(p + "self.wk"), ps.get(p + "self.wv")};
      L.cross_attn = {ps.get(p + "cross.wq"), ps.get(p + "cross.wk"), ps.get(p + "cross.wv")};
      L.ffn = {ps.get(p + "ffn.w1"), ps.get(p + "ffn.b1"), ps.get(p + "ffn.w2"), ps.get(p + "ffn.b2")};
      q.layers_.push_back(L);
    }
    q.ln_out_ = {ps.get("qformer.ln_out.g"), ps.get("qformer.ln_out.b")};
    q.positions_ = sinusoidal_positions(cfg.max_text_len, cfg.d_q);
    return q;
  }

  const QFormerConfig& config() const { return cfg_; }
  const std::vector<QFormerLayer>& layers() const { return layers_; }

  /// Returns the Q-Embedding, always n_q x d_q.
  ad::Var encode_speech(const ad::Var& frames) const {
    if (frames.cols() != cfg_.d_s)
      throw ShapeError("encode_speech: feature width " + std::to_string(frames.cols()) + ", expected " +
                       std::to_string(cfg_.d_s));
    const auto s = feat_proj_(frames);
    auto x = queries_;
    for (const auto& L : layers_) {
      x = x + self_attend(L.ln_self(x), L.self_attn);
      x = x + cross_attend(L.ln_cross(x), s, L.cross_attn);
      x = x + L.ffn(L.ln_ffn(x));
    }
    return ln_out_(x);
  }

  ad::Var encode_speech(const audio::SpeechFeatures& f) const { return encode_speech(ad::constant(f.frames)); }

  TextEmbedding encode_text(const std::vector<int>& tokens, TextKind kind) const {
    if (tokens.empty()) throw Error("encode_text: empty token sequence");
    if (tokens.size() > cfg_.max_text_len)
      throw Error("encode_text: " + std::to_string(tokens.size()) + " tokens exceed capacity " +
                  std::to_string(cfg_.max_text_len));
    for (int t : tokens)
      if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab)
        throw Error("encode_text: unknown token id " + std::to_string(t));
    auto x = ad::add(ad::gather_rows(tok_emb_, tokens), ad::constant(slice_rows(positions_, 0, tokens.size())));
    for (const auto& L : layers_) {
      x = x + self_attend(L.ln_self(x), L.self_attn);
      x = x + L.ffn(L.ln_ffn(x));
    }
    return {ln_out_(x), kind};
  }

 private:
  QFormerConfig cfg_;
  Affine feat_proj_;
  ad::Var queries_;
  ad::Var tok_emb_;
  std::vector<QFormerLayer> layers_;
  LayerNormWeights ln_out_;
  Tensor positions_;
};

/// Maps Q-Embedding rows into the decoder's input width (the L-Embedding).
inline Affine create_projection(ParameterStore& ps, std::size_t d_q, std::size_t d_dec, std::mt19937_64& rng) {
  ps.add("proj.w", init::xavier(d_q, d_dec, rng), ParamGroup::OutputProjection);
  ps.add("proj.b", init::zeros(d_dec), ParamGroup::OutputProjection);
  return {ps.get("proj.w"), ps.get("proj.b")};
}

inline ad::Var project(const ad::Var& q_embedding, const Affine& proj) { return proj(q_embedding); }

}  // namespace secap
