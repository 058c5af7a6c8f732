#pragma once

#include <map>
#include <string>
#include <vector>

#include "secap/dataset.hpp"
#include "secap/metrics.hpp"

namespace secap::metrics {

/// Scores the first caption of each prediction against every caption of the
/// reference with the same id, in reference order. Any id present on only
/// one side is an error; all of them are listed.
inline EvalReport evaluate_manifest(const std::vector<data::CaptionRecord>& pred,
                                    const std::vector<data::CaptionRecord>& ref, Tokenization tok) {
  std::map<std::string, const data::CaptionRecord*> by_id;
  std::vector<std::string> problems;
  for (const auto& p : pred)
    if (!by_id.emplace(p.id, &p).second) problems.push_back("duplicate prediction id '" + p.id + "'");
  std::map<std::string, bool> seen;
  for (const auto& r : ref) {
    if (seen.count(r.id)) problems.push_back("duplicate reference id '" + r.id + "'");
    seen[r.id] = true;
    if (!by_id.count(r.id)) problems.push_back("missing prediction for id '" + r.id + "'");
  }
  for (const auto& p : pred)
    if (!seen.count(p.id)) problems.push_back("extra prediction id '" + p.id + "' not in references");
  if (!problems.empty()) throw data::ManifestError(std::move(problems));

  std::vector<std::string> ids;
  std::vector<TokenizedPair> pairs;
  for (const auto& r : ref) {
    TokenizedPair tp;
    tp.candidate = tokenize(by_id.at(r.id)->captions.front(), tok);
    for (const auto& c : r.captions) tp.references.push_back(tokenize(c, tok));
    ids.push_back(r.id);
    pairs.push_back(std::move(tp));
  }
  return evaluate(ids, pairs);
}

}  // namespace secap::metrics
