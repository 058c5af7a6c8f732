#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "secap/autodiff.hpp"

namespace secap::sccl {

class BatchLayoutError : public Error {
 public:
  using Error::Error;
};

struct Weights {
  double w1 = 1.0;      // own caption
  double w2 = 0.5;      // same-category captions
  double w3 = 1.0;      // other-category captions
  double margin = 0.2;  // hinge for negatives

  void validate() const {
    if (w1 < 0 || w2 < 0 || w3 < 0 || (w1 == 0 && w2 == 0 && w3 == 0))
      throw Error("SCCL weights must be nonnegative with at least one positive");
    if (margin < -1.0 || margin > 1.0) throw Error("SCCL margin must lie in [-1, 1]");
  }
};

/// N categories x K items. Row i of e pairs with row i of c; category[i]
/// labels both.
struct ContrastiveBatch {
  ad::Var e;  // pooled speech embeddings, NK x d
  ad::Var c;  // pooled caption embeddings, NK x d
  std::vector<int> category;
};

namespace detail {

inline ad::Var row_norms(const ad::Var& x) {
  return ad::sqrt(ad::matmul(ad::square(x), ad::constant(Tensor(x.cols(), 1, 1.0))));
}

inline void check_nonzero(const ad::Var& norms, const char* what) {
  for (double v : norms.value().data())
    if (!(v > 0.0)) throw Error(std::string(what) + ": zero-norm pooled vector");
}

}  // namespace detail

/// Each row scaled to unit length.
inline ad::Var l2_normalize_rows(const ad::Var& x, const char* what = "l2_normalize_rows") {
  const auto norms = detail::row_norms(x);
  detail::check_nonzero(norms, what);
  return ad::div(x, ad::matmul(norms, ad::constant(Tensor(1, x.cols(), 1.0))));
}

/// Cosine similarity of two row vectors.
inline ad::Var cosine(const ad::Var& a, const ad::Var& b) {
  const auto dot = ad::sum(ad::mul(a, b));
  const auto na = ad::sqrt(ad::sum(ad::square(a)));
  const auto nb = ad::sqrt(ad::sum(ad::square(b)));
  if (!(na.item() > 0.0) || !(nb.item() > 0.0)) throw Error("cosine: zero-norm pooled vector");
  return ad::div(dot, ad::mul(na, nb));
}

/// Cosine between the row means of two embedding matrices.
inline ad::Var pooled_cosine(const ad::Var& a, const ad::Var& b) {
  if (a.cols() != b.cols())
    throw ShapeError("pooled_cosine: widths " + std::to_string(a.cols()) + " and " + std::to_string(b.cols()));
  return cosine(ad::mean_rows(a), ad::mean_rows(b));
}

/// Returns (N, K) or throws if the layout is not K items for each of N
/// categories.
inline std::pair<std::size_t, std::size_t> check_layout(const std::vector<int>& category) {
  if (category.empty()) throw BatchLayoutError("contrastive batch is empty");
  std::map<int, std::size_t> counts;
  for (int c : category) ++counts[c];
  const std::size_t k = counts.begin()->second;
  for (const auto& [cat, n] : counts)
    if (n != k)
      throw BatchLayoutError("category " + std::to_string(cat) + " has " + std::to_string(n) + " items, expected " +
                             std::to_string(k));
  return {counts.size(), k};
}

/// Sum over anchors e_i of
///   w1 (1 - S(e_i, c_i)) + w2 sum_{same category, j != i} (1 - S(e_i, c_j))
///   + w3 sum_{other category} relu(S(e_i, c_j) - m).
inline ad::Var sccl_loss(const ContrastiveBatch& batch, const Weights& w) {
  w.validate();
  check_layout(batch.category);
  const std::size_t n = batch.category.size();
  if (batch.e.rows() != n || batch.c.rows() != n || batch.e.cols() != batch.c.cols())
    throw BatchLayoutError("contrastive batch: e " + shape_str(batch.e.shape()) + ", c " +
                           shape_str(batch.c.shape()) + " for " + std::to_string(n) + " labels");

  const auto sim = ad::matmul_nt(l2_normalize_rows(batch.e, "sccl_loss"), l2_normalize_rows(batch.c, "sccl_loss"));
  Tensor own(n, n), same(n, n), other(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j)
        own(i, j) = w.w1;
      else if (batch.category[i] == batch.category[j])
        same(i, j) = w.w2;
      else
        other(i, j) = w.w3;
    }
  Tensor pos = own;
  pos += same;
  const double pos_total = std::accumulate(pos.data().begin(), pos.data().end(), 0.0);
  // sum pos_ij (1 - S_ij) = sum(pos) - sum(pos * S)
  const auto attract = ad::add_scalar(ad::scale(ad::sum(ad::mul(sim, ad::constant(std::move(pos)))), -1.0), pos_total);
  const auto repel = ad::sum(ad::mul(ad::relu(ad::add_scalar(sim, -w.margin)), ad::constant(std::move(other))));
  return ad::add(attract, repel);
}

/// Deterministic index draw in [0, n) from a 64-bit engine.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
}

/// Picks N categories and K distinct items from each. categories[i] is the
/// category of dataset item i. Output is grouped by category in ascending
/// category order.
inline std::vector<std::size_t> sample_contrastive_batch(const std::vector<int>& categories, std::size_t n_cat,
                                                         std::size_t k, std::mt19937_64& rng,
                                                         const std::vector<std::string>& category_names = {}) {
  if (n_cat == 0 || k == 0) throw BatchLayoutError("N and K must be positive");
  std::map<int, std::vector<std::size_t>> by_cat;
  for (std::size_t i = 0; i < categories.size(); ++i) by_cat[categories[i]].push_back(i);
  if (by_cat.size() < n_cat)
    throw BatchLayoutError("need " + std::to_string(n_cat) + " categories, dataset has " +
                           std::to_string(by_cat.size()));
  std::vector<int> cats;
  for (const auto& [c, _] : by_cat) cats.push_back(c);
  for (std::size_t i = 0; i < n_cat; ++i) std::swap(cats[i], cats[i + uniform_index(rng, cats.size() - i)]);
  cats.resize(n_cat);
  std::sort(cats.begin(), cats.end());

  std::vector<std::size_t> out;
  out.reserve(n_cat * k);
  for (int c : cats) {
    auto pool = by_cat[c];
    if (pool.size() < k) {
      const std::string name = (c >= 0 && static_cast<std::size_t>(c) < category_names.size())
                                   ? category_names[static_cast<std::size_t>(c)]
                                   : std::to_string(c);
      throw BatchLayoutError("category '" + name + "' has " + std::to_string(pool.size()) + " records, need " +
                             std::to_string(k));
    }
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<long>(k));
  }
  return out;
}

}  // namespace secap::sccl
