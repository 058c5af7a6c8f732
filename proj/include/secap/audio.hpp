#pragma once

#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "secap/tensor.hpp"

namespace secap::audio {

class WavError : public Error {
 public:
  enum class Kind { MissingFile, NotWav, UnsupportedEncoding, Multichannel, Truncated };
  WavError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
  Kind kind;
};

class FeatureFileError : public Error {
 public:
  enum class Kind { Parse, Version, DimensionMismatch, NonFinite };
  FeatureFileError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
  Kind kind;
};

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  std::uint32_t sample_rate = 16000;
};

/// Time-major features: frames(t, k) is feature k of frame t.
struct SpeechFeatures {
  Tensor frames;
  double frame_hop = 0.01;  // seconds

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }
};

struct FeatConfig {
  std::size_t window_length = 400;
  std::size_t hop_length = 160;
  std::size_t mel_bins = 40;
  double fmin = 20.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;

  void validate(std::uint32_t sample_rate) const {
    if (hop_length == 0 || hop_length > window_length) throw Error("FeatConfig: need 0 < hop_length <= window_length");
    if (mel_bins == 0) throw Error("FeatConfig: mel_bins must be positive");
    if (!(fmin < fmax) || fmax > sample_rate / 2.0) throw Error("FeatConfig: need fmin < fmax <= sample_rate/2");
    if (!(log_floor > 0.0)) throw Error("FeatConfig: log_floor must be positive");
  }
};

// ------------------------------------------------------------------ WAV IO

namespace detail {

template <class T>
T read_le(const unsigned char* p) {
  static_assert(std::endian::native == std::endian::little, "little-endian host assumed");
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <class T>
void write_le(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host assumed");
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Reads 16-bit PCM mono RIFF/WAVE.
inline Waveform load_wav(const std::filesystem::path& path) {
  using K = WavError::Kind;
  if (!std::filesystem::exists(path)) throw WavError(K::MissingFile, "wav file not found: " + path.string());
  const auto bytes = detail::slurp(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw WavError(K::NotWav, "not a RIFF/WAVE file: " + path.string());

  std::optional<std::uint32_t> rate;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    const auto len = detail::read_le<std::uint32_t>(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size())
      throw WavError(K::Truncated, "chunk '" + id + "' runs past end of " + path.string());
    if (id == "fmt ") {
      if (len < 16) throw WavError(K::NotWav, "fmt chunk too short in " + path.string());
      const auto format = detail::read_le<std::uint16_t>(bytes.data() + body);
      const auto channels = detail::read_le<std::uint16_t>(bytes.data() + body + 2);
      const auto bits = detail::read_le<std::uint16_t>(bytes.data() + body + 14);
      if (format != 1 || bits != 16)
        throw WavError(K::UnsupportedEncoding, "only 16-bit PCM is supported (format " + std::to_string(format) +
                                                   ", " + std::to_string(bits) + " bits): " + path.string());
      if (channels != 1)
        throw WavError(K::Multichannel, "expected mono, got " + std::to_string(channels) + " channels: " +
                                            path.string());
      rate = detail::read_le<std::uint32_t>(bytes.data() + body + 4);
    } else if (id == "data") {
      if (!rate) throw WavError(K::NotWav, "data chunk before fmt chunk in " + path.string());
      Waveform w;
      w.sample_rate = *rate;
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = detail::read_le<std::int16_t>(bytes.data() + body + 2 * i) / 32768.0;
      return w;
    }
    pos = body + len + (len & 1u);
  }
  throw WavError(K::NotWav, "no data chunk in " + path.string());
}

inline std::int16_t quantize_pcm16(double s) {
  const double v = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

inline void save_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  detail::write_le<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  detail::write_le<std::uint32_t>(out, 16);
  detail::write_le<std::uint16_t>(out, 1);
  detail::write_le<std::uint16_t>(out, 1);
  detail::write_le<std::uint32_t>(out, w.sample_rate);
  detail::write_le<std::uint32_t>(out, w.sample_rate * 2);
  detail::write_le<std::uint16_t>(out, 2);
  detail::write_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  detail::write_le<std::uint32_t>(out, data_bytes);
  for (double s : w.samples) detail::write_le<std::int16_t>(out, quantize_pcm16(s));
  if (!out) throw Error("write failed: " + path.string());
}

// ----------------------------------------------------------------- log-mel

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

inline std::size_t frame_count(std::size_t num_samples, std::size_t window, std::size_t hop) {
  if (num_samples < window) return 0;
  return 1 + (num_samples - window) / hop;
}

/// Triangular filters on the mel scale. Filter m spans edges[m]..edges[m+2]
/// (Hz) and peaks at edges[m+1].
class MelFilterbank {
 public:
  MelFilterbank(const FeatConfig& cfg, std::uint32_t sample_rate) {
    n_fft_ = 1;
    while (n_fft_ < cfg.window_length) n_fft_ <<= 1;
    const std::size_t bins = n_fft_ / 2 + 1;
    const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
    edges_hz_.resize(cfg.mel_bins + 2);
    for (std::size_t i = 0; i < edges_hz_.size(); ++i)
      edges_hz_[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.mel_bins + 1));
    weights_ = Tensor(cfg.mel_bins, bins);
    for (std::size_t m = 0; m < cfg.mel_bins; ++m) {
      const double l = edges_hz_[m], c = edges_hz_[m + 1], r = edges_hz_[m + 2];
      for (std::size_t k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft_);
        double w = 0.0;
        if (f > l && f <= c)
          w = (f - l) / (c - l);
        else if (f > c && f < r)
          w = (r - f) / (r - c);
        weights_(m, k) = w;
      }
    }
  }

  std::size_t n_fft() const { return n_fft_; }
  const Tensor& weights() const { return weights_; }
  double lower_edge(std::size_t m) const { return edges_hz_[m]; }
  double center(std::size_t m) const { return edges_hz_[m + 1]; }
  double upper_edge(std::size_t m) const { return edges_hz_[m + 2]; }

 private:
  std::size_t n_fft_ = 0;
  std::vector<double> edges_hz_;
  Tensor weights_;
};

namespace detail {

// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k)));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

}  // namespace detail

/// Hann window, magnitude spectrum (zero-padded to a power of two),
/// triangular mel filterbank, natural log floored at log_floor.
inline SpeechFeatures mel_features(const Waveform& w, const FeatConfig& cfg) {
  cfg.validate(w.sample_rate);
  if (w.samples.size() < cfg.window_length)
    throw Error("mel_features: need at least " + std::to_string(cfg.window_length) + " samples, got " +
                std::to_string(w.samples.size()));
  const MelFilterbank fb(cfg, w.sample_rate);
  const std::size_t frames = frame_count(w.samples.size(), cfg.window_length, cfg.hop_length);
  const std::size_t bins = fb.n_fft() / 2 + 1;

  std::vector<double> hann(cfg.window_length);
  for (std::size_t i = 0; i < hann.size(); ++i)
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                   static_cast<double>(cfg.window_length - 1));

  SpeechFeatures out;
  out.frames = Tensor(frames, cfg.mel_bins);
  out.frame_hop = static_cast<double>(cfg.hop_length) / w.sample_rate;
  std::vector<std::complex<double>> buf(fb.n_fft());
  std::vector<double> mag(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    const std::size_t start = t * cfg.hop_length;
    for (std::size_t i = 0; i < cfg.window_length; ++i) buf[i] = w.samples[start + i] * hann[i];
    detail::fft(buf);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::abs(buf[k]);
    for (std::size_t m = 0; m < cfg.mel_bins; ++m) {
      double e = 0.0;
      auto row = fb.weights().row_span(m);
      for (std::size_t k = 0; k < bins; ++k) e += row[k] * mag[k];
      out.frames(t, m) = std::log(std::max(e, cfg.log_floor));
    }
  }
  return out;
}

// ------------------------------------------------------ precomputed files
//
// "SEFT" magic, u32 version (1), u32 frames, u32 dim, then frames*dim
// little-endian float32 values, row-major.

inline constexpr std::uint32_t kFeatureFileVersion = 1;

inline void save_precomputed(const std::filesystem::path& path, const SpeechFeatures& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out.write("SEFT", 4);
  detail::write_le<std::uint32_t>(out, kFeatureFileVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.num_frames()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.dim()));
  for (double v : f.frames.data()) detail::write_le<float>(out, static_cast<float>(v));
  if (!out) throw Error("write failed: " + path.string());
}

/// expected_dim, when given, is the dataset's configured feature width.
inline SpeechFeatures load_precomputed(const std::filesystem::path& path,
                                       std::optional<std::size_t> expected_dim = std::nullopt) {
  using K = FeatureFileError::Kind;
  if (!std::filesystem::exists(path)) throw FeatureFileError(K::Parse, "feature file not found: " + path.string());
  const auto bytes = detail::slurp(path);
  auto need = [&](std::size_t offset, std::size_t n, const char* what) {
    if (bytes.size() < offset + n)
      throw FeatureFileError(K::Parse, std::string("truncated feature file ") + path.string() + ": " + what +
                                           " expected at byte offset " + std::to_string(offset) + ", file has " +
                                           std::to_string(bytes.size()) + " bytes");
  };
  need(0, 4, "magic");
  if (std::memcmp(bytes.data(), "SEFT", 4) != 0)
    throw FeatureFileError(K::Parse, "bad magic at byte offset 0 in " + path.string());
  need(4, 12, "header");
  const auto version = detail::read_le<std::uint32_t>(bytes.data() + 4);
  if (version != kFeatureFileVersion)
    throw FeatureFileError(K::Version, "feature file version " + std::to_string(version) + ", expected " +
                                           std::to_string(kFeatureFileVersion) + ": " + path.string());
  const auto frames = detail::read_le<std::uint32_t>(bytes.data() + 8);
  const auto dim = detail::read_le<std::uint32_t>(bytes.data() + 12);
  if (frames == 0 || dim == 0) throw FeatureFileError(K::Parse, "zero extent in header of " + path.string());
  if (expected_dim && dim != *expected_dim)
    throw FeatureFileError(K::DimensionMismatch, "feature dim " + std::to_string(dim) + " but dataset expects " +
                                                     std::to_string(*expected_dim) + ": " + path.string());
  const std::size_t payload = static_cast<std::size_t>(frames) * dim * 4;
  need(16, payload, "payload");
  SpeechFeatures f;
  f.frames = Tensor(frames, dim);
  for (std::size_t i = 0; i < f.frames.size(); ++i) {
    const float v = detail::read_le<float>(bytes.data() + 16 + 4 * i);
    if (!std::isfinite(v))
      throw FeatureFileError(K::NonFinite, "non-finite value at element " + std::to_string(i) + " (byte offset " +
                                               std::to_string(16 + 4 * i) + ") in " + path.string());
    f.frames[i] = v;
  }
  return f;
}

/// WAV paths are featurised with cfg; anything else is read as a feature file.
inline SpeechFeatures load_features(const std::filesystem::path& path, const FeatConfig& cfg) {
  if (path.extension() == ".wav") return mel_features(load_wav(path), cfg);
  return load_precomputed(path, cfg.mel_bins);
}

}  // namespace secap::audio
