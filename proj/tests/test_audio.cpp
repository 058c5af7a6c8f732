#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "secap/audio.hpp"
#include "test_util.hpp"

using namespace secap;
using namespace secap::audio;
using secap::test::TempDir;

namespace {

Waveform sine(double hz, std::size_t n, double amp = 0.5, std::uint32_t sr = 16000) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2 * std::numbers::pi * hz * i / sr);
  return w;
}

// Minimal independent RIFF writer for fixtures the library did not produce.
void write_raw_wav(const std::filesystem::path& p, const std::vector<std::int16_t>& s, std::uint16_t channels = 1,
                   std::uint16_t bits = 16) {
  std::ofstream f(p, std::ios::binary);
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  const std::uint32_t data_len = static_cast<std::uint32_t>(s.size() * 2);
  f.write("RIFF", 4);
  u32(36 + data_len);
  f.write("WAVEfmt ", 8);
  u32(16);
  u16(1);
  u16(channels);
  u32(16000);
  u32(16000 * 2 * channels);
  u16(static_cast<std::uint16_t>(2 * channels));
  u16(bits);
  f.write("data", 4);
  u32(data_len);
  f.write(reinterpret_cast<const char*>(s.data()), data_len);
}

}  // namespace

TEST(Wav, SilenceLoadsAsZeros) {
  TempDir d("wav");
  write_raw_wav(d / "s.wav", std::vector<std::int16_t>(16000, 0));
  const auto w = load_wav(d / "s.wav");
  EXPECT_EQ(w.sample_rate, 16000u);
  ASSERT_EQ(w.samples.size(), 16000u);
  for (double v : w.samples) EXPECT_EQ(v, 0.0);
}

TEST(Wav, ScaleIsOneOver32768) {
  TempDir d("wav");
  write_raw_wav(d / "c.wav", std::vector<std::int16_t>(100, 16384));
  for (double v : load_wav(d / "c.wav").samples) EXPECT_EQ(v, 0.5);
}

TEST(Wav, SineRoundTripWithinOneLsb) {
  TempDir d("wav");
  const auto w = sine(440, 16000, 0.8);
  save_wav(d / "a.wav", w);
  const auto r = load_wav(d / "a.wav");
  ASSERT_EQ(r.samples.size(), w.samples.size());
  double worst = 0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) worst = std::max(worst, std::abs(r.samples[i] - w.samples[i]));
  EXPECT_LT(worst, 1.0 / 32768);
}

TEST(Wav, DistinctErrors) {
  TempDir d("wav");
  auto kind_of = [](const std::filesystem::path& p) {
    try {
      load_wav(p);
    } catch (const WavError& e) {
      return e.kind;
    }
    ADD_FAILURE() << "no error for " << p;
    return WavError::Kind::NotWav;
  };
  EXPECT_EQ(kind_of(d / "missing.wav"), WavError::Kind::MissingFile);
  std::ofstream(d / "junk.wav") << "hello there, not audio";
  EXPECT_EQ(kind_of(d / "junk.wav"), WavError::Kind::NotWav);
  write_raw_wav(d / "st.wav", std::vector<std::int16_t>(10, 0), 2);
  EXPECT_EQ(kind_of(d / "st.wav"), WavError::Kind::Multichannel);
  write_raw_wav(d / "b8.wav", std::vector<std::int16_t>(10, 0), 1, 8);
  EXPECT_EQ(kind_of(d / "b8.wav"), WavError::Kind::UnsupportedEncoding);
  write_raw_wav(d / "t.wav", std::vector<std::int16_t>(100, 1));
  std::filesystem::resize_file(d / "t.wav", 60);
  EXPECT_EQ(kind_of(d / "t.wav"), WavError::Kind::Truncated);
}

TEST(Mel, FrameCountExample) {
  const auto f = mel_features(sine(300, 16000), FeatConfig{});
  EXPECT_EQ(f.num_frames(), 98u);
  EXPECT_EQ(f.dim(), 40u);
}

TEST(Mel, FrameCountFormulaProperty) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const std::size_t window = 1 + rng() % 600;
    const std::size_t hop = 1 + rng() % window;
    const std::size_t n = rng() % 5000;
    const std::size_t expect = n < window ? 0 : 1 + (n - window) / hop;
    EXPECT_EQ(frame_count(n, window, hop), expect);
  }
}

TEST(Mel, SilenceHitsFloor) {
  Waveform w;
  w.samples.assign(4000, 0.0);
  const FeatConfig cfg;
  const auto f = mel_features(w, cfg);
  for (double v : f.frames.data()) EXPECT_EQ(v, std::log(cfg.log_floor));
}

TEST(Mel, SinePeaksInBracketingFilter) {
  const FeatConfig cfg;
  const auto f = mel_features(sine(440, 16000), cfg);
  // Filter edges from the mel formula, computed here independently.
  const double lo = 2595 * std::log10(1 + cfg.fmin / 700), hi = 2595 * std::log10(1 + cfg.fmax / 700);
  auto edge = [&](std::size_t i) { return 700 * (std::pow(10, (lo + (hi - lo) * i / (cfg.mel_bins + 1.0)) / 2595) - 1); };
  for (std::size_t t = 0; t < f.num_frames(); ++t) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < cfg.mel_bins; ++m)
      if (f.frames(t, m) > f.frames(t, best)) best = m;
    EXPECT_LT(edge(best), 440.0);
    EXPECT_GT(edge(best + 2), 440.0);
  }
}

TEST(Mel, DoublingAmplitudeAddsLn2AboveFloor) {
  const FeatConfig cfg;
  auto w = sine(523, 6000, 0.3);
  std::mt19937_64 rng(5);
  for (auto& s : w.samples) s += 0.01 * std::normal_distribution<double>()(rng);
  auto w2 = w;
  for (auto& s : w2.samples) s *= 2;
  const auto a = mel_features(w, cfg), b = mel_features(w2, cfg);
  const double floor = std::log(cfg.log_floor);
  for (std::size_t i = 0; i < a.frames.size(); ++i)
    if (a.frames[i] > floor && b.frames[i] > floor) {
      EXPECT_NEAR(b.frames[i] - a.frames[i], std::log(2.0), 1e-9);
    }
}

TEST(Mel, Deterministic) {
  const auto w = sine(200, 5000);
  EXPECT_EQ(mel_features(w, FeatConfig{}).frames, mel_features(w, FeatConfig{}).frames);
}

TEST(Mel, ConfigValidation) {
  FeatConfig c;
  c.hop_length = 0;
  EXPECT_THROW(c.validate(16000), Error);
  c = FeatConfig{};
  c.hop_length = 500;
  EXPECT_THROW(c.validate(16000), Error);
  c = FeatConfig{};
  c.fmax = 9000;
  EXPECT_THROW(c.validate(16000), Error);
  EXPECT_THROW(mel_features(sine(100, 100), FeatConfig{}), Error);
}

TEST(FeatureFile, RoundTripIsFloat32Exact) {
  TempDir d("feat");
  std::mt19937_64 rng(1);
  SpeechFeatures f;
  f.frames = secap::test::random_tensor(7, 40, rng);
  for (auto& v : f.frames.data()) v = static_cast<float>(v);
  save_precomputed(d / "x.seft", f);
  EXPECT_EQ(load_precomputed(d / "x.seft", 40).frames, f.frames);
}

TEST(FeatureFile, DimensionMismatch) {
  TempDir d("feat");
  SpeechFeatures f;
  f.frames = Tensor(3, 40, 1.0);
  save_precomputed(d / "x.seft", f);
  try {
    load_precomputed(d / "x.seft", 80);
    FAIL();
  } catch (const FeatureFileError& e) {
    EXPECT_EQ(e.kind, FeatureFileError::Kind::DimensionMismatch);
  }
}

TEST(FeatureFile, TruncationNamesByteOffset) {
  TempDir d("feat");
  SpeechFeatures f;
  f.frames = Tensor(3, 40, 1.0);
  save_precomputed(d / "x.seft", f);
  std::filesystem::resize_file(d / "x.seft", 100);
  try {
    load_precomputed(d / "x.seft");
    FAIL();
  } catch (const FeatureFileError& e) {
    EXPECT_EQ(e.kind, FeatureFileError::Kind::Parse);
    EXPECT_NE(std::string(e.what()).find("byte offset 16"), std::string::npos) << e.what();
  }
}

TEST(FeatureFile, LoadFeaturesDispatchesOnExtension) {
  TempDir d("feat");
  const auto w = sine(250, 8000);
  save_wav(d / "a.wav", w);
  const auto from_wav = load_features(d / "a.wav", FeatConfig{});
  save_precomputed(d / "a.seft", from_wav);
  const auto from_file = load_features(d / "a.seft", FeatConfig{});
  EXPECT_EQ(from_file.num_frames(), from_wav.num_frames());
  EXPECT_LT(max_abs_diff(from_file.frames, from_wav.frames), 1e-5);
}
