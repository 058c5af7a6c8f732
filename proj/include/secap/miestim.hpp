#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "secap/autodiff.hpp"
#include "secap/params.hpp"

namespace secap::mi {

class InvalidTableError : public Error {
 public:
  using Error::Error;
};

/// Joint probability table p(row, col).
struct JointTable {
  Tensor probs;
};

/// Exact discrete mutual information in nats, with 0 ln 0 = 0.
inline double mi_discrete(const JointTable& t) {
  const auto& p = t.probs;
  double total = 0.0;
  for (double v : p.data()) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidTableError("joint table has a negative or non-finite entry");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw InvalidTableError("joint table sums to " + std::to_string(total) + ", expected 1");
  std::vector<double> pr(p.rows(), 0.0), pc(p.cols(), 0.0);
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j) {
      pr[i] += p(i, j);
      pc[j] += p(i, j);
    }
  double mi = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j)
      if (p(i, j) > 0.0) mi += p(i, j) * std::log(p(i, j) / (pr[i] * pc[j]));
  return std::max(mi, 0.0);
}

inline constexpr double kLogVarMin = -8.0;
inline constexpr double kLogVarMax = 8.0;

struct VarNetConfig {
  std::size_t x_dim = 64;
  std::size_t y_dim = 64;
  std::size_t hidden = 64;
};

/// Diagonal-Gaussian conditional q(y | x): two small perceptrons giving the
/// mean and the (clamped) log-variance.
struct VarNet {
  VarNetConfig cfg;
  ad::Var mu_w1, mu_b1, mu_w2, mu_b2;
  ad::Var lv_w1, lv_b1, lv_w2, lv_b2;

  static VarNet create(ParameterStore& ps, const VarNetConfig& cfg, std::mt19937_64& rng) {
    const auto G = ParamGroup::VarNet;
    ps.add("varnet.mu.w1", init::xavier(cfg.x_dim, cfg.hidden, rng), G);
    ps.add("varnet.mu.b1", init::zeros(cfg.hidden), G);
    ps.add("varnet.mu.w2", init::xavier(cfg.hidden, cfg.y_dim, rng), G);
    ps.add("varnet.mu.b2", init::zeros(cfg.y_dim), G);
    ps.add("varnet.lv.w1", init::xavier(cfg.x_dim, cfg.hidden, rng), G);
    ps.add("varnet.lv.b1", init::zeros(cfg.hidden), G);
    ps.add("varnet.lv.w2", init::xavier(cfg.hidden, cfg.y_dim, rng), G);
    ps.add("varnet.lv.b2", init::zeros(cfg.y_dim), G);
    return bind(ps, cfg);
  }

  static VarNet bind(const ParameterStore& ps, const VarNetConfig& cfg) {
    return {cfg,
            ps.get("varnet.mu.w1"),
            ps.get("varnet.mu.b1"),
            ps.get("varnet.mu.w2"),
            ps.get("varnet.mu.b2"),
            ps.get("varnet.lv.w1"),
            ps.get("varnet.lv.b1"),
            ps.get("varnet.lv.w2"),
            ps.get("varnet.lv.b2")};
  }

  ad::Var mean(const ad::Var& x) const {
    return ad::add_row(ad::matmul(ad::relu(ad::add_row(ad::matmul(x, mu_w1), mu_b1)), mu_w2), mu_b2);
  }

  ad::Var log_variance(const ad::Var& x) const {
    const auto raw = ad::add_row(ad::matmul(ad::relu(ad::add_row(ad::matmul(x, lv_w1), lv_b1)), lv_w2), lv_b2);
    return ad::clamp(raw, kLogVarMin, kLogVarMax);
  }
};

namespace detail {

inline ad::Var row_sums(const ad::Var& x) { return ad::matmul(x, ad::constant(Tensor(x.cols(), 1, 1.0))); }

inline ad::Var broadcast_rows(const ad::Var& row, std::size_t n) {
  return ad::matmul(ad::constant(Tensor(n, 1, 1.0)), row);
}

inline void check_pairs(const VarNet& v, const ad::Var& xs, const ad::Var& ys) {
  if (xs.cols() != v.cfg.x_dim || ys.cols() != v.cfg.y_dim || xs.rows() != ys.rows())
    throw ShapeError("varnet: x " + shape_str(xs.shape()) + ", y " + shape_str(ys.shape()) + " for net " +
                     std::to_string(v.cfg.x_dim) + "->" + std::to_string(v.cfg.y_dim));
}

}  // namespace detail

/// log q(y_i | x_i) for each aligned row pair; returns n x 1.
inline ad::Var varnet_loglik(const VarNet& v, const ad::Var& xs, const ad::Var& ys) {
  detail::check_pairs(v, xs, ys);
  const auto mu = v.mean(xs);
  const auto lv = v.log_variance(xs);
  const auto inv = ad::exp(ad::scale(lv, -1.0));
  const auto resid = ad::square(ad::sub(ys, mu));
  const auto quad = detail::row_sums(ad::mul(resid, inv));
  const double c = -0.5 * static_cast<double>(v.cfg.y_dim) * std::log(2.0 * std::numbers::pi);
  return ad::add_scalar(ad::scale(ad::add(detail::row_sums(lv), quad), -0.5), c);
}

/// vCLUB estimate (1/n^2) sum_i sum_j [log q(y_i|x_i) - log q(y_j|x_i)].
///
/// The inner mean over j of log q(y_j|x_i) is a quadratic in y_j, so it is
/// taken in closed form from the first two column moments of ys; the result
/// equals the pairwise double sum exactly while costing O(n d).
inline ad::Var club_upper_bound(const VarNet& v, const ad::Var& xs, const ad::Var& ys) {
  detail::check_pairs(v, xs, ys);
  const std::size_t n = xs.rows();
  if (n < 2) throw Error("club_upper_bound: need at least 2 pairs, got " + std::to_string(n));
  const auto mu = v.mean(xs);
  const auto inv = ad::exp(ad::scale(v.log_variance(xs), -1.0));

  // -1/2 sum_d inv (y_i - mu_i)^2
  const auto matched = detail::row_sums(ad::mul(ad::square(ad::sub(ys, mu)), inv));
  // mean_j (y_j - mu_i)^2 = m2 - 2 m1 mu_i + mu_i^2
  const auto m1 = detail::broadcast_rows(ad::mean_rows(ys), n);
  const auto m2 = detail::broadcast_rows(ad::mean_rows(ad::square(ys)), n);
  const auto spread = ad::add(ad::sub(m2, ad::scale(ad::mul(m1, mu), 2.0)), ad::square(mu));
  const auto marginal = detail::row_sums(ad::mul(spread, inv));
  return ad::scale(ad::sum(ad::sub(marginal, matched)), 0.5 / static_cast<double>(n));
}

class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

/// One ascent step on the mean aligned log-likelihood, touching only the
/// VarNet group of ps. Returns the pre-step mean log-likelihood.
inline double train_varnet_step(const VarNet& v, ParameterStore& ps, Adam& opt, const Tensor& xs, const Tensor& ys) {
  if (xs.rows() == 0) throw Error("train_varnet_step: empty batch");
  ps.zero_grad();
  const auto ll = ad::mean(varnet_loglik(v, ad::constant(xs), ad::constant(ys)));
  const double value = ll.item();
  if (!std::isfinite(value))
    throw NonFiniteLossError("train_varnet_step: non-finite log-likelihood " + std::to_string(value) + " over " +
                             std::to_string(xs.rows()) + " pairs");
  ad::backward(ad::scale(ll, -1.0));
  opt.step(ps, [](ParamGroup g) { return g != ParamGroup::VarNet; });
  ps.zero_grad();
  return value;
}

}  // namespace secap::mi
