// Copyright 2026 The MedQA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "medqa/augment.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "medqa/error.h"
#include "medqa/random.h"
#include "medqa/text.h"

namespace medqa {
namespace {

using nlohmann::json;

json parse_document(std::string_view document, const char* what) {
  try {
    return json::parse(document);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string(what) + ": " + e.what());
  }
}

}  // namespace

SynonymLexicon::SynonymLexicon(
    const std::map<std::string, std::vector<std::string>>& raw) {
  for (const auto& [word, synonyms] : raw) {
    const std::string key = text::ascii_lower(word);
    std::vector<std::string>& list = entries_[key];
    for (const std::string& s : synonyms) {
      if (text::ascii_lower(s) == key || s.empty()) continue;
      if (std::find(list.begin(), list.end(), s) == list.end()) list.push_back(s);
    }
    if (list.empty()) entries_.erase(key);
  }
}

SynonymLexicon SynonymLexicon::from_json(std::string_view document) {
  const json doc = parse_document(document, "synonym lexicon");
  if (!doc.is_object()) {
    throw Error(ErrorCode::kFormat, "synonym lexicon must be a JSON object");
  }
  try {
    return SynonymLexicon(doc.get<std::map<std::string, std::vector<std::string>>>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("synonym lexicon: ") + e.what());
  }
}

const std::vector<std::string>* SynonymLexicon::find(std::string_view word) const {
  const auto it = entries_.find(text::ascii_lower(word));
  return it == entries_.end() ? nullptr : &it->second;
}

DictionaryPivotTranslator::DictionaryPivotTranslator(
    const std::map<std::string, std::string>& forward) {
  for (const auto& [src, dst] : forward) {
    const std::string s = text::ascii_lower(src);
    const std::string d = text::ascii_lower(dst);
    forward_[s] = d;
    // Iteration is in key order, so the first writer is the smallest source.
    backward_.emplace(d, s);
  }
}

DictionaryPivotTranslator DictionaryPivotTranslator::from_json(
    std::string_view document) {
  const json doc = parse_document(document, "pivot dictionary");
  if (!doc.is_object()) {
    throw Error(ErrorCode::kFormat, "pivot dictionary must be a JSON object");
  }
  try {
    return DictionaryPivotTranslator(doc.get<std::map<std::string, std::string>>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("pivot dictionary: ") + e.what());
  }
}

std::string DictionaryPivotTranslator::translate(
    std::string_view input, TranslationDirection direction) const {
  const auto& table = direction == TranslationDirection::kForward ? forward_ : backward_;
  std::string out;
  out.reserve(input.size());
  for (const text::Piece& piece : text::split_words(input)) {
    if (piece.is_word) {
      if (auto it = table.find(text::ascii_lower(piece.text)); it != table.end()) {
        out += it->second;
        continue;
      }
    }
    out += piece.text;
  }
  return out;
}

QAPair synonym_replace(const QAPair& pair, const SynonymLexicon& lexicon, double rate,
                       std::uint64_t seed) {
  Rng rng(seed);
  std::string question;
  question.reserve(pair.question.size());
  for (const text::Piece& piece : text::split_words(pair.question)) {
    const std::vector<std::string>* synonyms =
        piece.is_word ? lexicon.find(piece.text) : nullptr;
    if (synonyms != nullptr && rng.uniform() < rate) {
      question += (*synonyms)[rng.below(synonyms->size())];
    } else {
      question += piece.text;
    }
  }
  QAPair out = pair;
  out.question = std::move(question);
  out.provenance = Provenance::kSynonymAug;
  out.id = pair.id + "~syn" + std::to_string(seed);
  return out;
}

QAPair back_translate(const QAPair& pair, const Translator& translator) {
  QAPair out = pair;
  const std::string pivot =
      translator.translate(pair.question, TranslationDirection::kForward);
  out.question = translator.translate(pivot, TranslationDirection::kBackward);
  out.provenance = Provenance::kBackTransAug;
  out.id = pair.id + "~bt";
  return out;
}

Corpus balance_by_duplication(const Corpus& corpus, const SynonymLexicon& lexicon,
                              double rate, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
    const QAPair& p = corpus.pairs[i];
    if (!p.qtype) {
      throw Error(ErrorCode::kMissingLabel, "pair '" + p.id + "' has no qtype");
    }
    members[*p.qtype].push_back(i);
  }
  std::size_t majority = 0;
  for (const auto& [label, idx] : members) majority = std::max(majority, idx.size());

  Corpus out = corpus;
  Rng rng(seed);
  for (const auto& [label, idx] : members) {
    for (std::size_t n = idx.size(); n < majority; ++n) {
      const QAPair& parent = corpus.pairs[idx[rng.below(idx.size())]];
      QAPair copy = synonym_replace(parent, lexicon, rate, rng.next());
      copy.provenance = Provenance::kSyntheticBalance;
      copy.id = parent.id + "~bal" + std::to_string(n - idx.size() + 1);
      out.pairs.push_back(std::move(copy));
    }
  }
  out.stats.per_qtype.clear();
  for (const QAPair& p : out.pairs) ++out.stats.per_qtype[*p.qtype];
  return out;
}

std::vector<EmbeddingPoint> smote(std::span<const EmbeddingPoint> points,
                                  const SmoteOptions& options) {
  if (options.k < 1) throw Error(ErrorCode::kInvalidConfig, "SMOTE k must be >= 1");
  std::vector<EmbeddingPoint> out(points.begin(), points.end());
  if (points.empty()) return out;
  const std::size_t dim = points.front().vector.size();
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].vector.size() != dim) {
      throw Error(ErrorCode::kDimensionMismatch, "SMOTE points differ in dimension");
    }
    for (double v : points[i].vector) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kInvalidConfig, "SMOTE point has a non-finite entry");
      }
    }
    members[points[i].class_label].push_back(i);
  }
  for (const auto& [label, idx] : members) {
    if (idx.size() < options.target_count && idx.size() < options.k + 1) {
      throw Error(ErrorCode::kTooFewPoints,
                  "class '" + label + "' has " + std::to_string(idx.size()) +
                      " points, needs at least k + 1 = " +
                      std::to_string(options.k + 1));
    }
  }

  const auto squared_distance = [&](std::size_t a, std::size_t b) {
    double acc = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = points[a].vector[d] - points[b].vector[d];
      acc += diff * diff;
    }
    return acc;
  };

  Rng rng(options.seed);
  for (const auto& [label, idx] : members) {
    if (idx.size() >= options.target_count) continue;
    // k nearest same-class neighbours of every member, ties by input order.
    std::vector<std::vector<std::size_t>> neighbours(idx.size());
    for (std::size_t m = 0; m < idx.size(); ++m) {
      std::vector<std::size_t> others;
      for (std::size_t o = 0; o < idx.size(); ++o) {
        if (o != m) others.push_back(idx[o]);
      }
      std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
        return squared_distance(idx[m], a) < squared_distance(idx[m], b);
      });
      others.resize(options.k);
      neighbours[m] = std::move(others);
    }
    for (std::size_t n = idx.size(), m = 0; n < options.target_count;
         ++n, m = (m + 1) % idx.size()) {
      const EmbeddingPoint& x = points[idx[m]];
      const EmbeddingPoint& nn = points[neighbours[m][rng.below(options.k)]];
      const double lambda = options.fixed_lambda ? *options.fixed_lambda : rng.uniform();
      EmbeddingPoint synthetic{std::vector<double>(dim), label, std::nullopt};
      for (std::size_t d = 0; d < dim; ++d) {
        synthetic.vector[d] = x.vector[d] + lambda * (nn.vector[d] - x.vector[d]);
      }
      out.push_back(std::move(synthetic));
    }
  }
  return out;
}

}  // namespace medqa
