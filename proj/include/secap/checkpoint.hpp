#pragma once

// Binary layout, little-endian:
//   "SECK" u32 version
//   u64 step
//   str model_config, str train_config, str vocab (UTF-8), str rng_state
//   u32 n_counters, n x (str name, u64 value)
//   u32 header_crc                         (CRC32 of everything above)
//   u32 n_tensors, n x (str name, u32 rank, rank x u32 dim, f32 payload, u32 crc)
// where str is u32 length + bytes and each tensor crc covers its payload.
// Tensors appear in lexicographic name order: "param/<name>" for weights,
// "adam.m/<name>" and "adam.v/<name>" for optimizer moments.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <zlib.h>

#include "secap/model.hpp"
#include "secap/params.hpp"

namespace secap {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Kind { Io, Format, Version, Checksum, ShapeDrift };
  CheckpointError(Kind k, const std::string& msg) : Error(msg), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::string model_config;
  std::string train_config;
  std::string vocab;
  std::string rng_state;
  std::map<std::string, std::uint64_t> counters;
  std::map<std::string, Tensor> tensors;
};

namespace detail {

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  std::string buf;
};

class Reader {
 public:
  explicit Reader(std::string data) : d_(std::move(data)) {}
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, d_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  const char* at(std::size_t p) const { return d_.data() + p; }
  bool done() const { return pos_ == d_.size(); }

 private:
  void need(std::size_t n) const {
    if (d_.size() - pos_ < n)
      throw CheckpointError(CheckpointError::Kind::Format,
                            "checkpoint truncated at byte " + std::to_string(pos_) + " (needs " + std::to_string(n) +
                                " more)");
  }
  std::string d_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc(const void* p, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, static_cast<const Bytef*>(p), static_cast<uInt>(n)));
}

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  detail::Writer w;
  w.raw("SECK", 4);
  w.u32(kCheckpointVersion);
  w.u64(ck.step);
  w.str(ck.model_config);
  w.str(ck.train_config);
  w.str(ck.vocab);
  w.str(ck.rng_state);
  w.u32(static_cast<std::uint32_t>(ck.counters.size()));
  for (const auto& [k, v] : ck.counters) {
    w.str(k);
    w.u64(v);
  }
  w.u32(detail::crc(w.buf.data(), w.buf.size()));
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  std::vector<float> payload;
  for (const auto& [name, t] : ck.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    payload.assign(t.data().begin(), t.data().end());
    w.raw(payload.data(), payload.size() * 4);
    w.u32(detail::crc(payload.data(), payload.size() * 4));
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot write checkpoint " + tmp);
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot read checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::Reader r(std::move(bytes));
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "SECK", 4) != 0)
    throw CheckpointError(CheckpointError::Kind::Format, path.string() + " is not a checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointError::Kind::Version, "checkpoint version " + std::to_string(version) +
                                                              ", this build reads " +
                                                              std::to_string(kCheckpointVersion));
  Checkpoint ck;
  ck.step = r.u64();
  ck.model_config = r.str();
  ck.train_config = r.str();
  ck.vocab = r.str();
  ck.rng_state = r.str();
  const auto n_counters = r.u32();
  for (std::uint32_t i = 0; i < n_counters; ++i) {
    auto k = r.str();
    ck.counters[k] = r.u64();
  }
  const auto header_end = r.pos();
  if (r.u32() != detail::crc(r.at(0), header_end))
    throw CheckpointError(CheckpointError::Kind::Checksum, "checkpoint header checksum mismatch");
  const auto n = r.u32();
  std::vector<float> payload;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = r.str();
    const auto rank = r.u32();
    if (rank == 0 || rank > 4)
      throw CheckpointError(CheckpointError::Kind::Format, "tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(r.u32());
      count *= shape.back();
    }
    payload.resize(count);
    r.raw(payload.data(), count * 4);
    if (r.u32() != detail::crc(payload.data(), count * 4))
      throw CheckpointError(CheckpointError::Kind::Checksum, "checksum mismatch in tensor '" + name + "'");
    ck.tensors.emplace(std::move(name), Tensor(shape, std::vector<double>(payload.begin(), payload.end())));
  }
  if (!r.done()) throw CheckpointError(CheckpointError::Kind::Format, "trailing bytes after last tensor");
  return ck;
}

inline std::string vocab_to_string(const Vocab& v) { return v.symbols_utf8(); }
inline Vocab vocab_from_string(const std::string& s) { return Vocab(utf8::decode(s)); }

/// Parameters and optimizer moments into a checkpoint skeleton.
inline void store_tensors(Checkpoint& ck, const ParameterStore& ps, const std::vector<const Adam*>& optimizers) {
  for (const auto& [name, e] : ps.entries()) ck.tensors["param/" + name] = e.var.value();
  for (const Adam* opt : optimizers)
    for (const auto& [name, mom] : opt->moments()) {
      ck.tensors["adam.m/" + name] = mom.m;
      ck.tensors["adam.v/" + name] = mom.v;
    }
}

/// Copies checkpoint weights into ps. Every parameter must be present with
/// the same shape.
inline void restore_params(const Checkpoint& ck, ParameterStore& ps) {
  for (auto& [name, e] : ps.entries()) {
    auto it = ck.tensors.find("param/" + name);
    if (it == ck.tensors.end())
      throw CheckpointError(CheckpointError::Kind::ShapeDrift, "checkpoint lacks tensor '" + name + "'");
    if (it->second.shape() != e.var.value().shape())
      throw CheckpointError(CheckpointError::Kind::ShapeDrift,
                            "tensor '" + name + "' has shape " + shape_str(it->second.shape()) + " in checkpoint, " +
                                shape_str(e.var.value().shape()) + " in model");
    e.var.mutable_value() = it->second;
  }
  for (const auto& [key, _] : ck.tensors)
    if (key.starts_with("param/") && !ps.contains(key.substr(6)))
      throw CheckpointError(CheckpointError::Kind::ShapeDrift, "checkpoint tensor '" + key.substr(6) +
                                                                   "' has no counterpart in the model");
}

/// Restores the moments of the parameters in ps that `owns` selects.
template <class Owns>
inline void restore_moments(const Checkpoint& ck, const ParameterStore& ps, Adam& opt, Owns&& owns) {
  opt.moments().clear();
  for (const auto& [name, e] : ps.entries()) {
    if (!owns(e.group)) continue;
    auto m = ck.tensors.find("adam.m/" + name);
    auto v = ck.tensors.find("adam.v/" + name);
    if (m == ck.tensors.end() || v == ck.tensors.end()) continue;
    if (m->second.shape() != e.var.value().shape() || v->second.shape() != e.var.value().shape())
      throw CheckpointError(CheckpointError::Kind::ShapeDrift, "optimizer moments of '" + name + "' have the wrong shape");
    opt.moments()[name] = {m->second, v->second};
  }
}

/// Rebuilds the model described by a checkpoint's config snapshot.
inline Model model_from_checkpoint(const Checkpoint& ck) {
  auto model = Model::create(ModelConfig::parse(ck.model_config), vocab_from_string(ck.vocab), 0);
  restore_params(ck, model.params());
  return model;
}

}  // namespace secap
