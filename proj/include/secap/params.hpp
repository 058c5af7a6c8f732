#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>

#include "secap/autodiff.hpp"

namespace secap {

/// Freeze granularity for training.
enum class ParamGroup : std::uint8_t { FeaturizerProjection, QFormer, VarNet, DecoderCore, OutputProjection };

inline constexpr std::array<ParamGroup, 5> kAllGroups = {ParamGroup::FeaturizerProjection, ParamGroup::QFormer,
                                                         ParamGroup::VarNet, ParamGroup::DecoderCore,
                                                         ParamGroup::OutputProjection};

inline std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::FeaturizerProjection: return "featurizer_projection";
    case ParamGroup::QFormer: return "qformer";
    case ParamGroup::VarNet: return "varnet";
    case ParamGroup::DecoderCore: return "decoder_core";
    case ParamGroup::OutputProjection: return "output_projection";
  }
  return "?";
}

struct ParamEntry {
  ad::Var var;
  ParamGroup group;
};

/// Named trainable tensors, iterated in lexicographic name order.
class ParameterStore {
 public:
  ad::Var add(const std::string& name, Tensor init, ParamGroup group) {
    if (entries_.count(name)) throw Error("duplicate parameter name " + name);
    auto v = ad::parameter(std::move(init));
    entries_.emplace(name, ParamEntry{v, group});
    return v;
  }

  const ad::Var& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter " + name);
    return it->second.var;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const std::map<std::string, ParamEntry>& entries() const { return entries_; }
  std::map<std::string, ParamEntry>& entries() { return entries_; }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.var.zero_grad();
  }

  std::map<std::string, Tensor> grads() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, e] : entries_)
      out[name] = e.var.grad().empty() ? Tensor(e.var.shape(), 0.0) : e.var.grad();
    return out;
  }

  std::size_t count(ParamGroup g) const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_)
      if (e.group == g) n += e.var.value().size();
    return n;
  }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.var.value().size();
    return n;
  }

 private:
  std::map<std::string, ParamEntry> entries_;
};

namespace init {

inline Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(fan_in, fan_out);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

inline Tensor normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

inline Tensor zeros(std::size_t cols) { return Tensor(1, cols, 0.0); }
inline Tensor ones(std::size_t cols) { return Tensor(1, cols, 1.0); }

}  // namespace init

/// Round to the nearest float32. Live weights and optimizer moments are kept
/// on the float32 grid so that a float32 checkpoint resumes bit-exactly.
inline double to_f32_grid(double v) { return static_cast<double>(static_cast<float>(v)); }

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
};

struct AdamMoments {
  Tensor m;
  Tensor v;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t step_count() const { return t_; }
  void set_step_count(std::uint64_t t) { t_ = t; }
  std::map<std::string, AdamMoments>& moments() { return moments_; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }

  /// One update of every parameter whose group is not frozen. Returns the
  /// pre-clip global gradient norm over the updated parameters.
  template <class IsFrozen>
  double step(ParameterStore& params, IsFrozen&& frozen) {
    double sq = 0.0;
    for (auto& [name, e] : params.entries()) {
      if (frozen(e.group) || e.var.grad().empty()) continue;
      for (double g : e.var.grad().data()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, e] : params.entries()) {
      if (frozen(e.group) || e.var.grad().empty()) continue;
      auto& mom = moments_[name];
      Tensor& w = e.var.mutable_value();
      if (mom.m.empty()) {
        mom.m = Tensor(w.shape(), 0.0);
        mom.v = Tensor(w.shape(), 0.0);
      }
      const Tensor& g = e.var.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * clip;
        mom.m[i] = to_f32_grid(cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * gi);
        mom.v[i] = to_f32_grid(cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * gi * gi);
        const double mhat = mom.m[i] / bc1;
        const double vhat = mom.v[i] / bc2;
        w[i] = to_f32_grid(w[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
    return norm;
  }

  double step(ParameterStore& params) {
    return step(params, [](ParamGroup) { return false; });
  }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

/// Snap every parameter onto the float32 grid.
inline void snap_to_f32(ParameterStore& params) {
  for (auto& [_, e] : params.entries())
    for (auto& v : e.var.mutable_value().data()) v = to_f32_grid(v);
}

}  // namespace secap
