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

#ifndef MEDQA_TOKENIZER_H_
#define MEDQA_TOKENIZER_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "medqa/corpus.h"

namespace medqa {

using TokenId = std::int32_t;

// Reserved ids. Specials occupy the first slots of every vocabulary, then the
// 256 single-byte symbols, then one id per distinct merged symbol.
struct SpecialTokens {
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kMask = 2;
  static constexpr TokenId kBos = 3;
  static constexpr TokenId kEos = 4;
  static constexpr std::size_t kCount = 5;
};

inline constexpr TokenId kFirstByteId = static_cast<TokenId>(SpecialTokens::kCount);
inline constexpr std::size_t kBaseVocabSize = SpecialTokens::kCount + 256;
inline constexpr std::size_t kDefaultVocabSize = 1024;

using MergeRule = std::pair<std::string, std::string>;

// Byte-level BPE vocabulary. Immutable once built; merges are stored in rank
// order and the vocabulary is rebuilt from them deterministically.
class TokenizerModel {
 public:
  // Validates that every merge's constituents already exist when the merge is
  // reached. Throws InvalidModel otherwise.
  static TokenizerModel from_merges(std::vector<MergeRule> merges);

  std::size_t vocab_size() const { return symbols_.size(); }
  std::span<const MergeRule> merges() const { return merges_; }

  // Byte string for a token id. Specials map to an empty string.
  const std::string& symbol(TokenId id) const;
  std::optional<TokenId> lookup(std::string_view symbol) const;

  static bool is_special(TokenId id) {
    return id >= 0 && id < static_cast<TokenId>(SpecialTokens::kCount);
  }

  // Merge rank of (left, right), or nullopt when no rule exists.
  std::optional<std::pair<std::size_t, TokenId>> merge_of(TokenId left,
                                                          TokenId right) const;

  // Free-form provenance recorded in the serialized model.
  std::string config_hash;

  friend bool operator==(const TokenizerModel& a, const TokenizerModel& b) {
    return a.merges_ == b.merges_ && a.config_hash == b.config_hash;
  }

 private:
  TokenizerModel();

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<MergeRule> merges_;
  // (left << 32 | right) -> (rank, merged id)
  std::unordered_map<std::uint64_t, std::pair<std::size_t, TokenId>> merge_table_;
};

// Splits text into pretokens: a run of non-whitespace together with one
// directly preceding ASCII space, or a run of other whitespace. Concatenating
// the pieces gives back the input; merges never cross piece boundaries.
std::vector<std::string_view> pretokenize(std::string_view text);

// Greedy pair-frequency BPE over the pretokenized texts. Ties go to the
// lexicographically smallest (left, right) byte pair; training stops at
// vocab_size or when no pair occurs at least twice.
TokenizerModel train_tokenizer(std::span<const std::string> texts,
                               std::size_t vocab_size);

// Trains on the templated rendering of every pair. The seed is accepted for
// interface stability; greedy BPE does not sample.
TokenizerModel train_tokenizer(const Corpus& corpus, std::size_t vocab_size,
                               std::uint64_t seed);

std::vector<TokenId> encode(const TokenizerModel& model, std::string_view text,
                            bool add_bos_eos = false);

// Throws IdOutOfRange for ids outside [0, vocab_size).
std::string decode(const TokenizerModel& model, std::span<const TokenId> ids);

// Versioned JSON document; save(load(save(m))) is byte-identical.
std::string save_tokenizer(const TokenizerModel& model);
TokenizerModel load_tokenizer(std::string_view document);

}  // namespace medqa

#endif  // MEDQA_TOKENIZER_H_
