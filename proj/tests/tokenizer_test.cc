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

#include "medqa/tokenizer.h"

#include <gtest/gtest.h>

#include <map>
#include <string>
#include <vector>

#include "medqa/random.h"
#include "test_util.h"

namespace medqa {
namespace {

// Independent reference trainer for ASCII text whose only whitespace is ' '.
// Words carry their preceding space; pair counts are recomputed from scratch
// after every merge.
std::vector<MergeRule> reference_bpe(const std::vector<std::string>& texts, std::size_t vocab) {
  std::vector<std::vector<std::string>> words;
  for (const std::string& t : texts) {
    std::string current;
    for (char c : t) {
      if (c == ' ' && !current.empty() && current != " ") {
        words.push_back({});
        for (char b : current) words.back().push_back(std::string(1, b));
        current.clear();
      }
      current.push_back(c);
    }
    if (!current.empty() && current != " ") {
      words.push_back({});
      for (char b : current) words.back().push_back(std::string(1, b));
    }
  }
  std::vector<MergeRule> merges;
  std::map<std::string, int> known;
  std::size_t size = kBaseVocabSize;
  while (size < vocab) {
    std::map<MergeRule, std::size_t> counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.size(); ++i) ++counts[{w[i], w[i + 1]}];
    }
    // std::map orders pairs lexicographically, so the first maximum wins ties.
    const MergeRule* best = nullptr;
    std::size_t best_n = 1;
    for (const auto& [p, n] : counts) {
      if (n > best_n) {
        best = &p;
        best_n = n;
      }
    }
    if (best == nullptr) break;
    const MergeRule rule = *best;
    merges.push_back(rule);
    const std::string merged = rule.first + rule.second;
    if (merged.size() > 1 && known.emplace(merged, 0).second) ++size;
    for (auto& w : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (i + 1 < w.size() && w[i] == rule.first && w[i + 1] == rule.second) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(w[i]);
        }
      }
      w.swap(next);
    }
  }
  return merges;
}

std::string random_utf8_line(Rng& rng) {
  static const char* kPieces[] = {"a", "b", "ab", " ", "  ", "\t", "\xC3\xA9", "\xE2\x80\x83",
                                  "\xF0\x9F\x98\x80", "\xE6\xBC\xA2", "x", "-", "\xC2\xA0", "?"};
  std::string s;
  const std::size_t n = rng.below(24);
  for (std::size_t i = 0; i < n; ++i) s += kPieces[rng.below(std::size(kPieces))];
  return s;
}

TEST(TrainTokenizer, FirstMergeOnRepeatedPair) {
  const std::vector<std::string> texts = {"ab ab ab"};
  const TokenizerModel m = train_tokenizer(texts, kBaseVocabSize + 1);
  ASSERT_FALSE(m.merges().empty());
  EXPECT_EQ(m.merges()[0], MergeRule("a", "b"));
  EXPECT_EQ(reference_bpe(texts, kBaseVocabSize + 1)[0], MergeRule("a", "b"));
}

TEST(TrainTokenizer, RejectsTinyVocabulary) {
  const std::vector<std::string> texts = {"ab"};
  EXPECT_ERROR_CODE(train_tokenizer(texts, 10), ErrorCode::kVocabTooSmall);
  EXPECT_ERROR_CODE(train_tokenizer(texts, kBaseVocabSize), ErrorCode::kVocabTooSmall);
}

TEST(TrainTokenizer, StopsWhenNoPairRepeats) {
  const std::vector<std::string> texts = {"abcdef"};
  EXPECT_TRUE(train_tokenizer(texts, 1000).merges().empty());
}

TEST(TrainTokenizer, MatchesReferenceTrainerOnRandomCorpora) {
  const char* words[] = {"the", "then", "cat", "cats", "at", "a", "hat", "than", "that"};
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    std::vector<std::string> texts;
    for (std::size_t line = 0; line < 1 + rng.below(6); ++line) {
      std::string t;
      for (std::size_t w = 0; w < 1 + rng.below(8); ++w) {
        if (!t.empty()) t += ' ';
        t += words[rng.below(std::size(words))];
      }
      texts.push_back(t);
    }
    const std::size_t vocab = kBaseVocabSize + 1 + rng.below(20);
    const TokenizerModel m = train_tokenizer(texts, vocab);
    const auto expected = reference_bpe(texts, vocab);
    ASSERT_EQ(std::vector<MergeRule>(m.merges().begin(), m.merges().end()), expected)
        << "seed " << seed;
    EXPECT_LE(m.vocab_size(), vocab);
  }
}

TEST(TrainTokenizer, IsByteIdenticalAcrossRuns) {
  Corpus c;
  c.pairs = {{"1", "What causes gout?", "Uric acid.", std::nullopt, Provenance::kOriginal},
             {"2", "What causes anemia?", "Low iron.", std::nullopt, Provenance::kOriginal}};
  EXPECT_EQ(save_tokenizer(train_tokenizer(c, 300, 1)), save_tokenizer(train_tokenizer(c, 300, 1)));
}

TEST(TokenizerModel, IdsAreDenseWithSpecialsFirst) {
  const std::vector<std::string> texts = {"hello hello hello world world"};
  const TokenizerModel m = train_tokenizer(texts, 300);
  EXPECT_EQ(m.symbol(SpecialTokens::kPad), "");
  EXPECT_TRUE(TokenizerModel::is_special(SpecialTokens::kEos));
  EXPECT_FALSE(TokenizerModel::is_special(kFirstByteId));
  EXPECT_EQ(m.symbol(kFirstByteId + 'h'), "h");
  for (std::size_t id = kBaseVocabSize; id < m.vocab_size(); ++id) {
    const auto found = m.lookup(m.symbol(static_cast<TokenId>(id)));
    ASSERT_TRUE(found.has_value());
    EXPECT_EQ(*found, static_cast<TokenId>(id));
  }
}

TEST(TokenizerModel, RejectsMergeOfUnknownSymbols) {
  EXPECT_ERROR_CODE(TokenizerModel::from_merges({{"ab", "c"}}), ErrorCode::kInvalidModel);
  EXPECT_NO_THROW(TokenizerModel::from_merges({{"a", "b"}, {"ab", "c"}}));
}

TEST(Encode, EmptyTextGivesNoTokens) {
  const TokenizerModel m = TokenizerModel::from_merges({});
  EXPECT_TRUE(encode(m, "").empty());
  EXPECT_EQ(encode(m, "", true),
            (std::vector<TokenId>{SpecialTokens::kBos, SpecialTokens::kEos}));
}

TEST(Encode, AppliesMergeToRepeatedPair) {
  const TokenizerModel m = TokenizerModel::from_merges({{"a", "b"}});
  const auto ids = encode(m, "abab");
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(m.symbol(ids[0]), "ab");
  EXPECT_EQ(ids[0], ids[1]);
}

TEST(Encode, AppliesMergesByRank) {
  // "bc" outranks "ab", so "abc" becomes a + bc rather than ab + c.
  const TokenizerModel m = TokenizerModel::from_merges({{"b", "c"}, {"a", "b"}});
  const auto ids = encode(m, "abc");
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(m.symbol(ids[0]), "a");
  EXPECT_EQ(m.symbol(ids[1]), "bc");
}

TEST(Encode, MergesNeverCrossPretokens) {
  const TokenizerModel m = TokenizerModel::from_merges({{"a", "b"}});
  EXPECT_EQ(encode(m, "a b").size(), 3u);
}

TEST(Pretokenize, PiecesConcatenateToInput) {
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const std::string s = random_utf8_line(rng);
    std::string joined;
    for (std::string_view p : pretokenize(s)) {
      EXPECT_FALSE(p.empty());
      joined += p;
    }
    EXPECT_EQ(joined, s);
  }
  const auto pieces = pretokenize("ab  cd");
  ASSERT_EQ(pieces.size(), 3u);
  EXPECT_EQ(pieces[0], "ab");
  EXPECT_EQ(pieces[1], " ");
  EXPECT_EQ(pieces[2], " cd");
}

TEST(Decode, EmptyAndOutOfRange) {
  const TokenizerModel m = TokenizerModel::from_merges({{"a", "b"}});
  EXPECT_EQ(decode(m, std::vector<TokenId>{}), "");
  const std::vector<TokenId> bad{static_cast<TokenId>(m.vocab_size())};
  EXPECT_ERROR_CODE(decode(m, bad), ErrorCode::kIdOutOfRange);
  const std::vector<TokenId> negative{-1};
  EXPECT_ERROR_CODE(decode(m, negative), ErrorCode::kIdOutOfRange);
}

TEST(Decode, SpecialsRenderEmpty) {
  const TokenizerModel m = TokenizerModel::from_merges({});
  EXPECT_EQ(decode(m, encode(m, "hi", true)), "hi");
}

TEST(RoundTrip, RandomUtf8AndCompression) {
  std::vector<std::string> training;
  Rng rng(11);
  for (int i = 0; i < 200; ++i) training.push_back(random_utf8_line(rng));
  const TokenizerModel m = train_tokenizer(training, 400);
  for (int i = 0; i < 300; ++i) {
    const std::string s = random_utf8_line(rng);
    const auto ids = encode(m, s);
    EXPECT_EQ(decode(m, ids), s);
    EXPECT_LE(ids.size(), s.size());
  }
}

TEST(RoundTrip, ArbitraryBytesSurviveEncoding) {
  const TokenizerModel m = TokenizerModel::from_merges({{"a", "b"}});
  std::string all;
  for (int b = 0; b < 256; ++b) all.push_back(static_cast<char>(b));
  EXPECT_EQ(decode(m, encode(m, all)), all);
}

TEST(Serialization, SaveLoadIsByteExact) {
  std::vector<std::string> training = {"na\xC3\xAFve caf\xC3\xA9 caf\xC3\xA9 \"quote\" \"quote\"",
                                       "tab\ttab\ttab 100% 100%"};
  TokenizerModel m = train_tokenizer(training, 300);
  m.config_hash = "abc123";
  const std::string saved = save_tokenizer(m);
  const TokenizerModel loaded = load_tokenizer(saved);
  EXPECT_EQ(loaded, m);
  EXPECT_EQ(save_tokenizer(loaded), saved);
  EXPECT_EQ(encode(loaded, training[1]), encode(m, training[1]));
}

TEST(Serialization, RejectsCorruptDocuments) {
  EXPECT_ANY_THROW(load_tokenizer("not json"));
  const TokenizerModel m = TokenizerModel::from_merges({{"a", "b"}});
  std::string saved = save_tokenizer(m);
  const auto pos = saved.find("\"vocab_size\"");
  ASSERT_NE(pos, std::string::npos);
  saved.replace(saved.find_first_of("0123456789", pos), 3, "999");
  EXPECT_ANY_THROW(load_tokenizer(saved));
}

}  // namespace
}  // namespace medqa
