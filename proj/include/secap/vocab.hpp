#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "secap/tensor.hpp"

namespace secap {

namespace utf8 {

/// Decodes UTF-8 into code points; malformed bytes map to U+FFFD.
inline std::u32string decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      cp = c;
    } else if ((c >> 5) == 0x6) {
      cp = c & 0x1F;
      extra = 1;
    } else if ((c >> 4) == 0xE) {
      cp = c & 0x0F;
      extra = 2;
    } else if ((c >> 3) == 0x1E) {
      cp = c & 0x07;
      extra = 3;
    } else {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    if (i + static_cast<std::size_t>(extra) >= s.size()) {
      out.push_back(0xFFFD);
      break;
    }
    bool ok = true;
    for (int k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
      if ((cc >> 6) != 0x2) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

inline void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string encode(std::u32string_view s) {
  std::string out;
  for (char32_t c : s) append(out, c);
  return out;
}

/// CJK ideographs, kana, hangul and CJK punctuation.
inline bool is_ideographic(char32_t c) {
  return (c >= 0x3000 && c <= 0x30FF) || (c >= 0x3400 && c <= 0x4DBF) || (c >= 0x4E00 && c <= 0x9FFF) ||
         (c >= 0xAC00 && c <= 0xD7AF) || (c >= 0xF900 && c <= 0xFAFF) || (c >= 0xFF00 && c <= 0xFFEF);
}

}  // namespace utf8

class VocabError : public Error {
 public:
  using Error::Error;
};

/// Character-level vocabulary. Ids 0..2 are PAD, BOS, EOS; text symbols
/// follow in code-point order.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kNumSpecial = 3;

  Vocab() = default;

  static Vocab from_texts(const std::vector<std::string>& texts) {
    std::set<char32_t> chars;
    for (const auto& t : texts)
      for (char32_t c : utf8::decode(t)) chars.insert(c);
    return Vocab(std::u32string(chars.begin(), chars.end()));
  }

  /// symbols: the text alphabet, in id order.
  explicit Vocab(std::u32string symbols) : symbols_(std::move(symbols)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (!ids_.emplace(symbols_[i], static_cast<int>(i) + kNumSpecial).second)
        throw VocabError("duplicate vocabulary symbol");
    }
  }

  std::size_t size() const { return symbols_.size() + kNumSpecial; }
  const std::u32string& symbols() const { return symbols_; }
  std::string symbols_utf8() const { return utf8::encode(symbols_); }

  bool contains(char32_t c) const { return ids_.count(c) != 0; }

  int id(char32_t c) const {
    auto it = ids_.find(c);
    return it == ids_.end() ? -1 : it->second;
  }

  std::vector<int> tokenize(std::string_view text) const {
    const auto cps = utf8::decode(text);
    std::vector<int> out;
    out.reserve(cps.size());
    for (std::size_t i = 0; i < cps.size(); ++i) {
      auto it = ids_.find(cps[i]);
      if (it == ids_.end()) {
        std::string ch;
        utf8::append(ch, cps[i]);
        throw VocabError("character '" + ch + "' at offset " + std::to_string(i) + " is not in the vocabulary");
      }
      out.push_back(it->second);
    }
    return out;
  }

  /// Stops at the first EOS; PAD and BOS are skipped.
  std::string detokenize(const std::vector<int>& ids) const {
    std::u32string out;
    for (int id : ids) {
      if (id == kEos) break;
      if (id == kPad || id == kBos) continue;
      if (id < kNumSpecial || static_cast<std::size_t>(id) >= size())
        throw VocabError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
      out.push_back(symbols_[static_cast<std::size_t>(id - kNumSpecial)]);
    }
    return utf8::encode(out);
  }

  bool operator==(const Vocab& o) const { return symbols_ == o.symbols_; }

 private:
  std::u32string symbols_;
  std::map<char32_t, int> ids_;
};

}  // namespace secap
