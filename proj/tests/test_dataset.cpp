#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "secap/audio.hpp"
#include "secap/dataset.hpp"
#include "test_util.hpp"

using namespace secap;
using namespace secap::data;
using secap::test::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SynthConfig small(std::size_t per_category) {
  auto c = SynthConfig::defaults();
  c.items_per_category = per_category;
  return c;
}

// Mean over loud 40 ms frames of the autocorrelation peak lag in 60..500 Hz.
double f0_estimate(const audio::Waveform& w) {
  const std::size_t frame = w.sample_rate / 25, hop = frame / 2;
  const std::size_t min_lag = w.sample_rate / 500, max_lag = w.sample_rate / 60;
  double peak = 0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  double sum = 0;
  int count = 0;
  for (std::size_t start = 0; start + frame + max_lag < w.samples.size(); start += hop) {
    double energy = 0;
    for (std::size_t i = 0; i < frame; ++i) energy = std::max(energy, std::abs(w.samples[start + i]));
    if (energy < 0.5 * peak) continue;
    double best = -1;
    std::size_t best_lag = 0;
    for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
      double acc = 0;
      for (std::size_t i = 0; i < frame; ++i) acc += w.samples[start + i] * w.samples[start + i + lag];
      if (acc > best) {
        best = acc;
        best_lag = lag;
      }
    }
    sum += static_cast<double>(w.sample_rate) / static_cast<double>(best_lag);
    ++count;
  }
  return count ? sum / count : 0.0;
}

}  // namespace

TEST(Synth, SameSeedIsByteIdentical) {
  TempDir a("synth_a"), b("synth_b");
  const auto cfg = small(3);
  const auto ra = synth_dataset(cfg, a.path());
  const auto rb = synth_dataset(cfg, b.path());
  EXPECT_EQ(slurp(ra.manifest), slurp(rb.manifest));
  for (const auto& r : ra.records) EXPECT_EQ(slurp(a / r.audio), slurp(b / r.audio)) << r.id;
}

TEST(Synth, DifferentSeedDiffers) {
  TempDir a("synth_a"), b("synth_b");
  auto cfg = small(3);
  const auto ra = synth_dataset(cfg, a.path());
  cfg.seed = 99;
  const auto rb = synth_dataset(cfg, b.path());
  EXPECT_NE(slurp(ra.manifest), slurp(rb.manifest));
}

TEST(Synth, CountsAndSplits) {
  TempDir d("synth");
  const auto res = synth_dataset(small(10), d.path());
  ASSERT_EQ(res.records.size(), 40u);
  std::map<std::string, int> per_cat, per_split;
  std::set<std::string> ids;
  for (const auto& r : res.records) {
    ++per_cat[r.emotion_category];
    ++per_split[r.split];
    ids.insert(r.id);
    EXPECT_EQ(r.captions.size(), 3u);
    for (const auto& c : r.captions) {
      EXPECT_NE(c.find(r.emotion_category), std::string::npos) << c;
      EXPECT_EQ(c.find("{i}"), std::string::npos);
    }
    EXPECT_TRUE(std::filesystem::exists(d / r.audio));
  }
  EXPECT_EQ(ids.size(), 40u);
  for (const auto& n : {"calm", "happy", "angry", "sad"}) EXPECT_EQ(per_cat[n], 10);
  EXPECT_EQ(per_split["train"], 36);
  EXPECT_EQ(per_split["val"], 2);
  EXPECT_EQ(per_split["test"], 2);
  EXPECT_EQ(read_manifest(res.manifest), res.records);
}

TEST(Synth, IntensityFollowsEnergy) {
  TempDir d("synth");
  const auto cats = SynthConfig::defaults().categories;
  for (const auto& r : synth_dataset(small(10), d.path()).records) {
    const auto& spec = *std::find_if(cats.begin(), cats.end(),
                                     [&](const CategorySpec& c) { return c.name == r.emotion_category; });
    const double e = r.extra.at("energy").get<double>();
    const double frac = (e - spec.energy.lo) / (spec.energy.hi - spec.energy.lo);
    const std::string word = frac < 1.0 / 3 ? "slightly" : frac < 2.0 / 3 ? "fairly" : "very";
    EXPECT_NE(r.captions[0].find(word), std::string::npos) << r.captions[0] << " energy " << e;
  }
}

TEST(Synth, HighPitchCategoryEstimatesHigher) {
  TempDir d("synth");
  const auto res = synth_dataset(small(10), d.path());
  std::vector<double> happy, calm;
  for (const auto& r : res.records) {
    const double f0 = f0_estimate(audio::load_wav(d / r.audio));
    if (r.emotion_category == "happy") happy.push_back(f0);
    if (r.emotion_category == "calm") calm.push_back(f0);
  }
  int above = 0, pairs = 0;
  for (double h : happy)
    for (double c : calm) {
      above += h > c;
      ++pairs;
    }
  EXPECT_GE(above, static_cast<int>(std::ceil(0.95 * pairs))) << above << "/" << pairs;
}

TEST(Synth, TranscriptionIndependentOfCategory) {
  TempDir d("synth");
  const auto cfg = SynthConfig::defaults();
  const auto res = synth_dataset(cfg, d.path());
  std::map<std::string, std::map<std::string, double>> table;
  std::map<std::string, double> row_tot, col_tot;
  for (const auto& r : res.records) {
    table[r.emotion_category][r.transcription] += 1;
    row_tot[r.emotion_category] += 1;
    col_tot[r.transcription] += 1;
  }
  const double n = static_cast<double>(res.records.size());
  double chi2 = 0;
  for (const auto& [cat, rt] : row_tot)
    for (const auto& [tr, ct] : col_tot) {
      const double expect = rt * ct / n;
      const double obs = table[cat].count(tr) ? table[cat][tr] : 0.0;
      chi2 += (obs - expect) * (obs - expect) / expect;
    }
  const double dof = static_cast<double>((row_tot.size() - 1) * (col_tot.size() - 1));
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), chi2));
  EXPECT_GT(p, 0.01) << "chi2=" << chi2 << " dof=" << dof;
}

TEST(Synth, ConfigValidation) {
  auto c = SynthConfig::defaults();
  EXPECT_NO_THROW(c.validate());
  c.categories[1].pitch_hz = c.categories[0].pitch_hz;
  c.categories[1].energy = c.categories[0].energy;
  c.categories[1].rate = c.categories[0].rate;
  try {
    c.validate();
    FAIL();
  } catch (const ManifestError& e) {
    EXPECT_NE(std::string(e.what()).find("overlap on every acoustic axis"), std::string::npos);
  }
  c = SynthConfig::defaults();
  c.categories.clear();
  EXPECT_THROW(c.validate(), ManifestError);
  c = SynthConfig::defaults();
  c.categories[0].templates.clear();
  EXPECT_THROW(c.validate(), ManifestError);
}

TEST(Synth, ConfigJsonRoundTrip) {
  const auto c = SynthConfig::defaults();
  const json j = c;
  const auto back = j.get<SynthConfig>();
  EXPECT_EQ(json(back).dump(), j.dump());
  const auto partial = json::parse(R"({"items_per_category": 7})").get<SynthConfig>();
  EXPECT_EQ(partial.items_per_category, 7u);
  EXPECT_EQ(partial.categories.size(), 4u);
}

TEST(Manifest, RoundTripPreservesUnknownFields) {
  TempDir d("manifest");
  CaptionRecord r{"x1", "a.wav", "hello", {"one, two", "three"}, "calm", "train", ordered_json::object()};
  r.extra["speaker"] = "s7";
  r.extra["nested"] = ordered_json::parse(R"({"b": 1, "a": [1, 2]})");
  CaptionRecord s{"x2", "/abs/b.seft", "bye", {"只有一句"}, "sad", "", ordered_json::object()};
  write_manifest({r, s}, d / "m.jsonl");
  const auto back = read_manifest(d / "m.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], r);
  EXPECT_EQ(back[1], s);
  EXPECT_EQ(resolve_audio(back[0], d / "m.jsonl"), d / "a.wav");
  EXPECT_EQ(resolve_audio(back[1], d / "m.jsonl"), std::filesystem::path("/abs/b.seft"));
}

TEST(Manifest, EmptyFileIsValid) {
  TempDir d("manifest");
  std::ofstream(d / "e.jsonl").close();
  EXPECT_TRUE(read_manifest(d / "e.jsonl").empty());
  std::ofstream(d / "blank.jsonl") << "\n  \n";
  EXPECT_TRUE(read_manifest(d / "blank.jsonl").empty());
}

TEST(Manifest, ErrorsNameLineAndField) {
  TempDir d("manifest");
  std::ofstream(d / "bad.jsonl")
      << R"({"id":"a","audio":"a.wav","transcription":"t","captions":["c"],"emotion_category":"calm"})" << "\n"
      << R"({"id":"b","audio":"b.wav","transcription":"t","emotion_category":"calm"})" << "\n"
      << "not json\n"
      << R"({"id":"c","audio":"c.wav","transcription":"t","captions":[],"emotion_category":"calm"})" << "\n";
  try {
    read_manifest(d / "bad.jsonl");
    FAIL();
  } catch (const ManifestError& e) {
    ASSERT_EQ(e.problems().size(), 3u) << e.what();
    EXPECT_EQ(e.problems()[0], "line 2: missing field 'captions'");
    EXPECT_EQ(e.problems()[1].rfind("line 3: parse error", 0), 0u);
    EXPECT_EQ(e.problems()[2].rfind("line 4:", 0), 0u);
  }
  EXPECT_THROW(read_manifest(d / "missing.jsonl"), ManifestError);
}
