#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "secap/audio.hpp"
#include "secap/sccl.hpp"

namespace secap::data {

using nlohmann::json;
using nlohmann::ordered_json;

struct CaptionRecord {
  std::string id;
  std::string audio;  // WAV or feature path, relative to the manifest directory unless absolute
  std::string transcription;
  std::vector<std::string> captions;
  std::string emotion_category;
  std::string split;     // train | val | test, may be empty
  ordered_json extra = ordered_json::object();  // unknown fields, preserved verbatim

  bool operator==(const CaptionRecord& o) const {
    return id == o.id && audio == o.audio && transcription == o.transcription && captions == o.captions &&
           emotion_category == o.emotion_category && split == o.split && extra == o.extra;
  }
};

/// Aggregated validation failure; what() lists every problem.
class ManifestError : public Error {
 public:
  explicit ManifestError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "manifest invalid (" + std::to_string(p.size()) + " problem" + (p.size() == 1 ? "" : "s") + ")";
    for (const auto& m : p) s += "\n  " + m;
    return s;
  }
  std::vector<std::string> problems_;
};

inline ordered_json to_json_line(const CaptionRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["audio"] = r.audio;
  j["transcription"] = r.transcription;
  j["captions"] = r.captions;
  j["emotion_category"] = r.emotion_category;
  j["split"] = r.split;
  for (const auto& [k, v] : r.extra.items()) j[k] = v;
  return j;
}

inline void write_manifest(const std::vector<CaptionRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  for (const auto& r : records) out << to_json_line(r).dump() << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

/// JSONL, one record per line. Every malformed line is reported, with its
/// 1-based line number, before throwing.
inline std::vector<CaptionRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError({"cannot read manifest " + path.string()});
  std::vector<CaptionRecord> out;
  std::vector<std::string> problems;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno);
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      problems.push_back(where + ": parse error: " + e.what());
      continue;
    }
    if (!j.is_object()) {
      problems.push_back(where + ": not a JSON object");
      continue;
    }
    CaptionRecord r;
    bool ok = true;
    auto str_field = [&](const char* key, std::string& dst, bool required) {
      if (!j.contains(key)) {
        if (required) {
          problems.push_back(where + ": missing field '" + key + "'");
          ok = false;
        }
        return;
      }
      if (!j[key].is_string()) {
        problems.push_back(where + ": field '" + key + "' must be a string");
        ok = false;
        return;
      }
      dst = j[key].get<std::string>();
    };
    str_field("id", r.id, true);
    str_field("audio", r.audio, true);
    str_field("transcription", r.transcription, true);
    str_field("emotion_category", r.emotion_category, true);
    str_field("split", r.split, false);
    if (!j.contains("captions")) {
      problems.push_back(where + ": missing field 'captions'");
      ok = false;
    } else if (!j["captions"].is_array() || j["captions"].empty()) {
      problems.push_back(where + ": field 'captions' must be a non-empty array");
      ok = false;
    } else {
      for (const auto& c : j["captions"]) {
        if (!c.is_string()) {
          problems.push_back(where + ": field 'captions' must hold strings");
          ok = false;
          break;
        }
        r.captions.push_back(c.get<std::string>());
      }
    }
    for (const auto& [k, v] : j.items())
      if (k != "id" && k != "audio" && k != "transcription" && k != "captions" && k != "emotion_category" &&
          k != "split")
        r.extra[k] = v;
    if (ok) out.push_back(std::move(r));
  }
  if (!problems.empty()) throw ManifestError(std::move(problems));
  return out;
}

inline std::filesystem::path resolve_audio(const CaptionRecord& r, const std::filesystem::path& manifest_path) {
  std::filesystem::path p(r.audio);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

// --------------------------------------------------------------- synthesis

struct Range {
  double lo = 0, hi = 0;
  bool disjoint(const Range& o) const { return hi < o.lo || o.hi < lo; }
};

struct CategorySpec {
  std::string name;  // also the emotion word used in captions
  Range pitch_hz;
  Range energy;       // peak amplitude
  Range rate;         // syllables per second
  std::vector<std::string> templates;  // "{i}" is replaced by the intensity adverb
};

struct SynthConfig {
  std::vector<CategorySpec> categories;
  std::size_t items_per_category = 50;
  std::vector<std::string> transcriptions;
  std::uint64_t seed = 1234;
  std::uint32_t sample_rate = 16000;

  static SynthConfig defaults() {
    SynthConfig c;
    c.categories = {
        {"calm",
         {110, 140},
         {0.15, 0.25},
         {3.0, 4.0},
         {"{i} calm, soft and even.", "the voice is {i} calm.", "a {i} calm, relaxed tone."}},
        {"happy",
         {300, 360},
         {0.45, 0.60},
         {4.5, 5.5},
         {"{i} happy, bright and lively.", "the voice is {i} happy.", "a {i} happy, cheerful tone."}},
        {"angry",
         {220, 270},
         {0.65, 0.85},
         {6.0, 7.0},
         {"{i} angry, loud and fast.", "the voice is {i} angry.", "a {i} angry, tense tone."}},
        {"sad",
         {160, 190},
         {0.05, 0.12},
         {2.0, 2.8},
         {"{i} sad, low and slow.", "the voice is {i} sad.", "a {i} sad, heavy tone."}},
    };
    c.transcriptions = {"see you soon",          "the bus is late",       "open the window",
                        "we won the game today", "it is raining again",   "my phone is dead",
                        "where are my keys",     "lunch is ready now",    "call me back later",
                        "the door is locked",    "time to go home",       "the tea got cold"};
    return c;
  }

  void validate() const {
    std::vector<std::string> problems;
    if (categories.empty()) problems.push_back("no categories");
    if (items_per_category == 0) problems.push_back("items_per_category must be positive");
    if (transcriptions.empty()) problems.push_back("transcription pool is empty");
    if (sample_rate == 0) problems.push_back("sample_rate must be positive");
    for (const auto& c : categories) {
      if (c.name.empty()) problems.push_back("category with empty name");
      if (c.templates.empty()) problems.push_back("category '" + c.name + "' has no caption templates");
      for (const Range* r : {&c.pitch_hz, &c.energy, &c.rate})
        if (!(r->lo > 0) || r->lo > r->hi) problems.push_back("category '" + c.name + "' has an invalid range");
      if (c.energy.hi > 1.0) problems.push_back("category '" + c.name + "' energy exceeds 1");
      if (c.pitch_hz.hi * 6 >= sample_rate / 2.0) problems.push_back("category '" + c.name + "' pitch too high");
    }
    for (std::size_t a = 0; a < categories.size(); ++a)
      for (std::size_t b = a + 1; b < categories.size(); ++b) {
        const auto& x = categories[a];
        const auto& y = categories[b];
        if (x.name == y.name) problems.push_back("duplicate category '" + x.name + "'");
        if (!x.pitch_hz.disjoint(y.pitch_hz) && !x.energy.disjoint(y.energy) && !x.rate.disjoint(y.rate))
          problems.push_back("categories '" + x.name + "' and '" + y.name + "' overlap on every acoustic axis");
      }
    if (!problems.empty()) throw ManifestError(std::move(problems));
  }

  std::vector<std::string> category_names() const {
    std::vector<std::string> n;
    for (const auto& c : categories) n.push_back(c.name);
    return n;
  }
};

inline void to_json(json& j, const Range& r) { j = json::array({r.lo, r.hi}); }
inline void from_json(const json& j, Range& r) {
  r.lo = j.at(0).get<double>();
  r.hi = j.at(1).get<double>();
}
inline void to_json(json& j, const CategorySpec& c) {
  j = json{{"name", c.name}, {"pitch_hz", c.pitch_hz}, {"energy", c.energy}, {"rate", c.rate},
           {"templates", c.templates}};
}
inline void from_json(const json& j, CategorySpec& c) {
  j.at("name").get_to(c.name);
  j.at("pitch_hz").get_to(c.pitch_hz);
  j.at("energy").get_to(c.energy);
  j.at("rate").get_to(c.rate);
  j.at("templates").get_to(c.templates);
}
inline void to_json(json& j, const SynthConfig& c) {
  j = json{{"categories", c.categories}, {"items_per_category", c.items_per_category},
           {"transcriptions", c.transcriptions}, {"seed", c.seed}, {"sample_rate", c.sample_rate}};
}
/// Missing keys keep their defaults.
inline void from_json(const json& j, SynthConfig& c) {
  c = SynthConfig::defaults();
  if (j.contains("categories")) j.at("categories").get_to(c.categories);
  if (j.contains("items_per_category")) j.at("items_per_category").get_to(c.items_per_category);
  if (j.contains("transcriptions")) j.at("transcriptions").get_to(c.transcriptions);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("sample_rate")) j.at("sample_rate").get_to(c.sample_rate);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline double draw(std::mt19937_64& rng, const Range& r) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return r.lo + (r.hi - r.lo) * u;
}

inline std::string intensity_word(double fraction) {
  if (fraction < 1.0 / 3.0) return "slightly";
  if (fraction < 2.0 / 3.0) return "fairly";
  return "very";
}

inline std::size_t word_count(const std::string& s) {
  std::istringstream is(s);
  std::size_t n = 0;
  for (std::string w; is >> w;) ++n;
  return n;
}

/// Harmonic-plus-noise syllable train: one voiced syllable per word of the
/// transcription (so content leaks into timing), pitch, loudness and rate
/// drawn from the category.
inline audio::Waveform render_utterance(double pitch, double energy, double rate, std::size_t syllables,
                                        std::uint32_t sample_rate, std::mt19937_64& rng) {
  constexpr int kHarmonics = 6;
  double harmonic_sum = 0.0;
  for (int h = 1; h <= kHarmonics; ++h) harmonic_sum += 1.0 / h;
  const double sr = static_cast<double>(sample_rate);
  const auto pad = static_cast<std::size_t>(0.05 * sr);
  const auto syl_len = static_cast<std::size_t>(sr / rate);
  const auto voiced = static_cast<std::size_t>(0.75 * static_cast<double>(syl_len));
  audio::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(2 * pad + syllables * syl_len, 0.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  double phase = 0.0;
  for (std::size_t s = 0; s < syllables; ++s) {
    const double f0 = pitch * (1.0 + 0.03 * (2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0));
    const std::size_t start = pad + s * syl_len;
    for (std::size_t i = 0; i < voiced; ++i) {
      const double env = std::sin(std::numbers::pi * static_cast<double>(i) / static_cast<double>(voiced));
      phase += 2.0 * std::numbers::pi * f0 / sr;
      double v = 0.0;
      for (int h = 1; h <= kHarmonics; ++h) v += std::sin(h * phase) / h;
      w.samples[start + i] = energy * env * v / harmonic_sum;
    }
  }
  for (auto& x : w.samples) x = std::clamp(x + 0.003 * noise(rng), -1.0, 1.0);
  return w;
}

struct SynthResult {
  std::vector<CaptionRecord> records;
  std::filesystem::path manifest;
};

/// Writes wav/<id>.wav and manifest.jsonl under out_dir. A pure function of
/// cfg: every item draws from its own stream derived from (seed, index), and
/// the 90/5/5 split comes from a seeded shuffle.
inline SynthResult synth_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                                 std::size_t captions_per_item = 3) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "wav", ec);
  if (ec) throw Error("cannot create output directory " + out_dir.string() + ": " + ec.message());

  SynthResult res;
  std::size_t index = 0;
  for (const auto& cat : cfg.categories) {
    for (std::size_t k = 0; k < cfg.items_per_category; ++k, ++index) {
      std::mt19937_64 rng(splitmix64(cfg.seed ^ splitmix64(index + 1)));
      const double pitch = draw(rng, cat.pitch_hz);
      const double energy = draw(rng, cat.energy);
      const double rate = draw(rng, cat.rate);
      const auto& text = cfg.transcriptions[sccl::uniform_index(rng, cfg.transcriptions.size())];
      const std::string intensity = intensity_word((energy - cat.energy.lo) / (cat.energy.hi - cat.energy.lo + 1e-12));

      CaptionRecord r;
      char idbuf[32];
      std::snprintf(idbuf, sizeof idbuf, "item_%04zu", index);
      r.id = idbuf;
      r.audio = "wav/" + r.id + ".wav";
      r.transcription = text;
      r.emotion_category = cat.name;
      const std::size_t first = sccl::uniform_index(rng, cat.templates.size());
      for (std::size_t c = 0; c < std::min(captions_per_item, cat.templates.size()); ++c) {
        std::string t = cat.templates[(first + c) % cat.templates.size()];
        for (std::size_t at; (at = t.find("{i}")) != std::string::npos;) t.replace(at, 3, intensity);
        r.captions.push_back(std::move(t));
      }
      r.extra["pitch_hz"] = pitch;
      r.extra["energy"] = energy;
      r.extra["rate"] = rate;
      const auto wav = render_utterance(pitch, energy, rate, word_count(text), cfg.sample_rate, rng);
      audio::save_wav(out_dir / r.audio, wav);
      res.records.push_back(std::move(r));
    }
  }

  std::vector<std::size_t> order(res.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 split_rng(splitmix64(cfg.seed ^ 0x5EC5EC5EC5EC5ECull));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[sccl::uniform_index(split_rng, i)]);
  const std::size_t n = order.size();
  const std::size_t n_train = (n * 90) / 100;
  const std::size_t n_val = (n * 5) / 100;
  for (std::size_t i = 0; i < n; ++i)
    res.records[order[i]].split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");

  res.manifest = out_dir / "manifest.jsonl";
  write_manifest(res.records, res.manifest);
  return res;
}

}  // namespace secap::data
