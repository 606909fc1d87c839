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

#ifndef MEDQA_AUGMENT_H_
#define MEDQA_AUGMENT_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medqa/corpus.h"

namespace medqa {

inline constexpr double kDefaultSynonymRate = 0.15;
inline constexpr std::size_t kDefaultSmoteNeighbors = 5;

// Case-folded word -> deduplicated synonyms, never containing the word itself.
class SynonymLexicon {
 public:
  SynonymLexicon() = default;
  // Drops self-mappings and duplicates; words left without synonyms vanish.
  explicit SynonymLexicon(const std::map<std::string, std::vector<std::string>>& raw);

  static SynonymLexicon from_json(std::string_view document);

  const std::vector<std::string>* find(std::string_view word) const;
  const std::map<std::string, std::vector<std::string>>& entries() const {
    return entries_;
  }

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

enum class TranslationDirection { kForward, kBackward };

// External paraphrasing hook. Implementations report failures by throwing
// medqa::Error(kTranslatorFailure). Bundled implementations are stateless
// after construction and safe for concurrent calls.
class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::string translate(std::string_view text,
                                TranslationDirection direction) const = 0;
};

class IdentityTranslator final : public Translator {
 public:
  std::string translate(std::string_view text, TranslationDirection) const override {
    return std::string(text);
  }
};

// Word-for-word pivot dictionary. Forward uses the loaded table; backward uses
// its inverse, where a pivot word reached from several sources maps back to
// the lexicographically smallest one. Lookups are case-folded; words without
// an entry pass through unchanged.
class DictionaryPivotTranslator final : public Translator {
 public:
  explicit DictionaryPivotTranslator(const std::map<std::string, std::string>& forward);
  static DictionaryPivotTranslator from_json(std::string_view document);

  std::string translate(std::string_view text,
                        TranslationDirection direction) const override;

 private:
  std::map<std::string, std::string> forward_;
  std::map<std::string, std::string> backward_;
};

// Each question word found in the lexicon is replaced, with probability
// `rate`, by a uniformly chosen synonym. The answer is untouched.
QAPair synonym_replace(const QAPair& pair, const SynonymLexicon& lexicon, double rate,
                       std::uint64_t seed);

// Round-trips the question through the translator.
QAPair back_translate(const QAPair& pair, const Translator& translator);

// Pads every class up to the size of the largest one with synonym-augmented
// copies of uniformly chosen members. Originals keep their order; synthetic
// pairs follow, grouped by class in label order. Throws MissingLabel.
Corpus balance_by_duplication(const Corpus& corpus, const SynonymLexicon& lexicon,
                              double rate, std::uint64_t seed);

struct EmbeddingPoint {
  std::vector<double> vector;
  std::string class_label;
  std::optional<std::string> source_id;  // empty for synthetic points

  friend bool operator==(const EmbeddingPoint&, const EmbeddingPoint&) = default;
};

struct SmoteOptions {
  std::size_t k = kDefaultSmoteNeighbors;
  // Every class below this count is oversampled up to it.
  std::size_t target_count = 0;
  std::uint64_t seed = 0;
  // Replaces the sampled interpolation weight; for tests.
  std::optional<double> fixed_lambda;
};

// Returns the input points followed by the synthetic ones. A synthetic point
// is x + lambda * (nn - x) where nn is one of x's k nearest same-class
// neighbours; members of a class are visited round-robin in input order.
// Throws TooFewPoints when an oversampled class has fewer than k + 1 points.
std::vector<EmbeddingPoint> smote(std::span<const EmbeddingPoint> points,
                                  const SmoteOptions& options);

}  // namespace medqa

#endif  // MEDQA_AUGMENT_H_
