#pragma once

// Objective caption metrics: BLEU-1/4, ROUGE-L and corpus CIDEr.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "secap/tensor.hpp"
#include "secap/vocab.hpp"

namespace secap::metrics {

using Tokens = std::vector<std::string>;

struct TokenizedPair {
  Tokens candidate;
  std::vector<Tokens> references;
};

enum class Tokenization { Auto, Word, Char };

inline Tokenization parse_tokenization(std::string_view s) {
  if (s == "auto") return Tokenization::Auto;
  if (s == "word") return Tokenization::Word;
  if (s == "char") return Tokenization::Char;
  throw Error("unknown tokenization '" + std::string(s) + "' (expected auto, word or char)");
}

inline Tokens tokenize_words(std::string_view text) {
  Tokens out;
  std::istringstream is{std::string(text)};
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

/// One token per code point, whitespace dropped.
inline Tokens tokenize_chars(std::string_view text) {
  Tokens out;
  for (char32_t c : utf8::decode(text)) {
    if (c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == 0x3000) continue;
    std::string s;
    utf8::append(s, c);
    out.push_back(std::move(s));
  }
  return out;
}

/// Auto picks characters when the text contains ideographic script.
inline Tokens tokenize(std::string_view text, Tokenization mode) {
  if (mode == Tokenization::Auto) {
    const auto cps = utf8::decode(text);
    mode = std::any_of(cps.begin(), cps.end(), utf8::is_ideographic) ? Tokenization::Char : Tokenization::Word;
  }
  return mode == Tokenization::Char ? tokenize_chars(text) : tokenize_words(text);
}

using NgramCounts = std::map<Tokens, std::size_t>;

inline NgramCounts ngrams(const Tokens& toks, std::size_t n) {
  NgramCounts out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[Tokens(toks.begin() + static_cast<long>(i),
                                                                 toks.begin() + static_cast<long>(i + n))];
  return out;
}

/// Sentence BLEU up to n_max with clipped n-gram precision and the
/// closest-reference-length brevity penalty (ties to the shorter length).
///
/// Smoothing: for n >= 2, a level with zero matches contributes
/// 1 / (2 * candidate_length) instead of 0. A zero unigram precision
/// (or an empty candidate) yields 0.
inline double bleu(const TokenizedPair& pair, std::size_t n_max) {
  if (n_max == 0) throw Error("bleu: n_max must be positive");
  if (pair.references.empty()) throw Error("bleu: no references");
  const std::size_t c = pair.candidate.size();
  if (c == 0) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= n_max; ++n) {
    const auto cand = ngrams(pair.candidate, n);
    std::map<Tokens, std::size_t> max_ref;
    for (const auto& ref : pair.references)
      for (const auto& [g, k] : ngrams(ref, n)) max_ref[g] = std::max(max_ref[g], k);
    std::size_t matched = 0, total = 0;
    for (const auto& [g, k] : cand) {
      total += k;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(k, it->second);
    }
    double p;
    if (matched == 0) {
      if (n == 1) return 0.0;
      p = 1.0 / (2.0 * static_cast<double>(c));
    } else {
      p = static_cast<double>(matched) / static_cast<double>(total);
    }
    log_sum += std::log(p);
  }

  std::size_t r = pair.references.front().size();
  for (const auto& ref : pair.references) {
    const auto d = [&](std::size_t len) { return len > c ? len - c : c - len; };
    if (d(ref.size()) < d(r) || (d(ref.size()) == d(r) && ref.size() < r)) r = ref.size();
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(n_max));
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// LCS F-measure with beta = 1, maximised over references.
inline double rouge_l(const TokenizedPair& pair) {
  if (pair.references.empty()) throw Error("rouge_l: no references");
  double best = 0.0;
  for (const auto& ref : pair.references) {
    if (pair.candidate.empty() || ref.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(pair.candidate, ref));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(pair.candidate.size());
    const double r = lcs / static_cast<double>(ref.size());
    best = std::max(best, 2.0 * p * r / (p + r));
  }
  return best;
}

struct CiderResult {
  std::vector<double> per_item;
  double mean = 0.0;
};

/// Corpus CIDEr. For n = 1..4, n-gram counts are weighted by
/// idf(g) = ln(num_items / max(1, df(g))), where df counts the items whose
/// reference set contains g. Each item scores the mean over n of the average
/// TF-IDF cosine against its references, times 10. A zero vector at some n
/// contributes 0 there.
inline CiderResult cider(const std::vector<TokenizedPair>& corpus) {
  if (corpus.size() < 2) throw Error("cider: corpus needs at least 2 items, got " + std::to_string(corpus.size()));
  constexpr std::size_t kMaxN = 4;
  const double num_items = static_cast<double>(corpus.size());

  std::map<Tokens, std::size_t> df;
  for (const auto& item : corpus) {
    if (item.references.empty()) throw Error("cider: item without references");
    std::set<Tokens> seen;
    for (const auto& ref : item.references)
      for (std::size_t n = 1; n <= kMaxN; ++n)
        for (const auto& [g, _] : ngrams(ref, n)) seen.insert(g);
    for (const auto& g : seen) ++df[g];
  }

  auto idf = [&](const Tokens& g) {
    auto it = df.find(g);
    const double d = it == df.end() ? 1.0 : static_cast<double>(it->second);
    return std::log(num_items / d);
  };
  using Vec = std::map<Tokens, double>;
  auto vectorize = [&](const Tokens& toks, std::size_t n) {
    Vec v;
    for (const auto& [g, k] : ngrams(toks, n)) v[g] = static_cast<double>(k) * idf(g);
    return v;
  };
  auto cos = [](const Vec& a, const Vec& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [g, x] : a) {
      na += x * x;
      auto it = b.find(g);
      if (it != b.end()) dot += x * it->second;
    }
    for (const auto& [_, y] : b) nb += y * y;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  CiderResult out;
  for (const auto& item : corpus) {
    double score = 0.0;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      const auto cv = vectorize(item.candidate, n);
      double acc = 0.0;
      for (const auto& ref : item.references) acc += cos(cv, vectorize(ref, n));
      score += acc / static_cast<double>(item.references.size());
    }
    out.per_item.push_back(10.0 * score / static_cast<double>(kMaxN));
  }
  for (double s : out.per_item) out.mean += s;
  out.mean /= num_items;
  return out;
}

struct ItemScores {
  std::string id;
  double bleu1 = 0, bleu4 = 0, rouge_l = 0, cider = 0;
};

struct EvalReport {
  std::vector<ItemScores> items;
  ItemScores corpus{"__corpus__"};
};

/// Scores aligned (id, candidate, references) triples.
inline EvalReport evaluate(const std::vector<std::string>& ids, const std::vector<TokenizedPair>& pairs) {
  if (ids.size() != pairs.size()) throw Error("evaluate: ids and pairs differ in length");
  EvalReport rep;
  CiderResult cd;
  if (pairs.size() >= 2) cd = cider(pairs);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ItemScores s{ids[i], bleu(pairs[i], 1), bleu(pairs[i], 4), rouge_l(pairs[i]),
                 pairs.size() >= 2 ? cd.per_item[i] : 0.0};
    rep.corpus.bleu1 += s.bleu1;
    rep.corpus.bleu4 += s.bleu4;
    rep.corpus.rouge_l += s.rouge_l;
    rep.corpus.cider += s.cider;
    rep.items.push_back(std::move(s));
  }
  if (!pairs.empty()) {
    const double n = static_cast<double>(pairs.size());
    rep.corpus.bleu1 /= n;
    rep.corpus.bleu4 /= n;
    rep.corpus.rouge_l /= n;
    rep.corpus.cider /= n;
  }
  return rep;
}

/// Header `id,bleu1,bleu4,rouge_l,cider`, one row per item, then __corpus__.
inline std::string report_csv(const EvalReport& rep) {
  std::string out = "id,bleu1,bleu4,rouge_l,cider\n";
  auto row = [&](const ItemScores& s) {
    char buf[160];
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f\n", s.bleu1, s.bleu4, s.rouge_l, s.cider);
    out += s.id;
    out += buf;
  };
  for (const auto& s : rep.items) row(s);
  row(rep.corpus);
  return out;
}

}  // namespace secap::metrics
