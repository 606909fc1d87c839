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

#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <map>
#include <set>

#include "medqa/random.h"
#include "test_util.h"

namespace medqa {
namespace {

using Raw = std::map<std::string, std::vector<std::string>>;
using Pivot = std::map<std::string, std::string>;

QAPair pair(std::string id, std::string q, std::optional<std::string> type = std::nullopt) {
  return {std::move(id), std::move(q), "Some answer.", std::move(type), Provenance::kOriginal};
}

class FailingTranslator final : public Translator {
 public:
  std::string translate(std::string_view, TranslationDirection) const override {
    throw Error(ErrorCode::kTranslatorFailure, "service unavailable");
  }
};

// Smallest residual of `s` against every segment between two same-class
// inputs: max_d |s_d - (a_d + lambda (b_d - a_d))| with lambda clamped to [0, 1].
double distance_to_nearest_segment(const EmbeddingPoint& s,
                                   const std::vector<EmbeddingPoint>& inputs) {
  double best = INFINITY;
  for (const auto& a : inputs) {
    for (const auto& b : inputs) {
      if (a.class_label != s.class_label || b.class_label != s.class_label) continue;
      double num = 0.0;
      double den = 0.0;
      for (std::size_t d = 0; d < s.vector.size(); ++d) {
        num += (s.vector[d] - a.vector[d]) * (b.vector[d] - a.vector[d]);
        den += (b.vector[d] - a.vector[d]) * (b.vector[d] - a.vector[d]);
      }
      const double lambda = den > 0 ? std::clamp(num / den, 0.0, 1.0) : 0.0;
      double worst = 0.0;
      for (std::size_t d = 0; d < s.vector.size(); ++d) {
        const double expected = a.vector[d] + lambda * (b.vector[d] - a.vector[d]);
        worst = std::max(worst, std::abs(s.vector[d] - expected));
      }
      best = std::min(best, worst);
    }
  }
  return best;
}

TEST(SynonymLexicon, DropsSelfMappingsAndDuplicates) {
  const SynonymLexicon lex(Raw{{"Causes", {"causes", "leads to", "leads to"}}, {"x", {"x"}}});
  const auto* found = lex.find("CAUSES");
  ASSERT_NE(found, nullptr);
  EXPECT_EQ(*found, std::vector<std::string>{"leads to"});
  EXPECT_EQ(lex.find("x"), nullptr);
}

TEST(SynonymReplace, ForcedSubstitution) {
  const SynonymLexicon lex(Raw{{"causes", {"leads to"}}});
  const QAPair out = synonym_replace(pair("p", "What causes X?"), lex, 1.0, 3);
  EXPECT_EQ(out.question, "What leads to X?");
  EXPECT_EQ(out.answer, "Some answer.");
  EXPECT_EQ(out.provenance, Provenance::kSynonymAug);
  EXPECT_NE(out.id, "p");
  EXPECT_EQ(out.id.rfind("p~", 0), 0u);
}

TEST(SynonymReplace, RateZeroKeepsQuestion) {
  const SynonymLexicon lex(Raw{{"causes", {"leads to"}}});
  const QAPair out = synonym_replace(pair("p", "What causes X?"), lex, 0.0, 3);
  EXPECT_EQ(out.question, "What causes X?");
  EXPECT_EQ(out.provenance, Provenance::kSynonymAug);
}

TEST(SynonymReplace, AbsentWordsUnchanged) {
  const SynonymLexicon lex(Raw{{"treats", {"cures"}}});
  EXPECT_EQ(synonym_replace(pair("p", "What causes X?"), lex, 1.0, 3).question,
            "What causes X?");
}

TEST(SynonymReplace, DeterministicPerSeed) {
  const SynonymLexicon lex(Raw{{"a", {"b", "c", "d"}}, {"e", {"f", "g"}}});
  const QAPair p = pair("p", "a e a e a e a e");
  EXPECT_EQ(synonym_replace(p, lex, 0.5, 42), synonym_replace(p, lex, 0.5, 42));
}

TEST(BackTranslate, IdentityTranslatorKeepsQuestion) {
  const QAPair out = back_translate(pair("p", "What causes X?"), IdentityTranslator{});
  EXPECT_EQ(out.question, "What causes X?");
  EXPECT_EQ(out.provenance, Provenance::kBackTransAug);
}

TEST(BackTranslate, PivotDictionaryMatchesHandApplication) {
  const DictionaryPivotTranslator t(Pivot{{"causes", "verursacht"}});
  EXPECT_EQ(t.translate("What causes X?", TranslationDirection::kForward), "What verursacht X?");
  EXPECT_EQ(back_translate(pair("p", "What causes X?"), t).question, "What causes X?");
}

TEST(BackTranslate, CollidingPivotMapsBackToSmallestSource) {
  const DictionaryPivotTranslator t(Pivot{{"causes", "causa"}, {"cause", "causa"}});
  // forward: causes -> causa; backward: causa -> min("cause", "causes").
  EXPECT_EQ(back_translate(pair("p", "What causes X?"), t).question, "What cause X?");
}

TEST(BackTranslate, PropagatesTranslatorFailure) {
  EXPECT_ERROR_CODE(back_translate(pair("p", "q"), FailingTranslator{}),
                    ErrorCode::kTranslatorFailure);
}

TEST(Balance, EqualizesClassCountsAndKeepsOriginals) {
  Corpus c;
  for (int i = 0; i < 4; ++i) c.pairs.push_back(pair("a" + std::to_string(i), "qa" + std::to_string(i), "A"));
  for (int i = 0; i < 2; ++i) c.pairs.push_back(pair("b" + std::to_string(i), "qb" + std::to_string(i), "B"));
  const SynonymLexicon lex(Raw{{"qb0", {"alt"}}});
  const Corpus out = balance_by_duplication(c, lex, 1.0, 5);
  std::map<std::string, int> counts;
  for (const QAPair& p : out.pairs) ++counts[*p.qtype];
  EXPECT_EQ(counts, (std::map<std::string, int>{{"A", 4}, {"B", 4}}));
  ASSERT_EQ(out.pairs.size(), 8u);
  for (std::size_t i = 0; i < c.pairs.size(); ++i) EXPECT_EQ(out.pairs[i], c.pairs[i]);
  for (std::size_t i = c.pairs.size(); i < out.pairs.size(); ++i) {
    EXPECT_EQ(out.pairs[i].provenance, Provenance::kSyntheticBalance);
    EXPECT_EQ(out.pairs[i].qtype, "B");
  }
  EXPECT_EQ(out.stats.per_qtype.at("B"), 4u);
}

TEST(Balance, BalancedCorpusUnchanged) {
  Corpus c;
  c.pairs = {pair("1", "x", "A"), pair("2", "y", "B")};
  EXPECT_EQ(balance_by_duplication(c, SynonymLexicon{}, 0.5, 1).pairs, c.pairs);
}

TEST(Balance, MissingLabelIsAnError) {
  Corpus c;
  c.pairs = {pair("1", "x", "A"), pair("2", "y")};
  EXPECT_ERROR_CODE(balance_by_duplication(c, SynonymLexicon{}, 0.5, 1), ErrorCode::kMissingLabel);
}

TEST(Balance, IdsStayUnique) {
  Corpus c;
  c.pairs = {pair("1", "x", "A"), pair("2", "y", "A"), pair("3", "z", "A"), pair("4", "w", "B")};
  const Corpus out = balance_by_duplication(c, SynonymLexicon{}, 0.5, 1);
  std::set<std::string> ids;
  for (const QAPair& p : out.pairs) EXPECT_TRUE(ids.insert(p.id).second) << p.id;
}

TEST(Smote, MidpointWithForcedLambda) {
  const std::vector<EmbeddingPoint> pts = {{{0, 0}, "m", "a"}, {{1, 1}, "m", "b"}};
  SmoteOptions opt;
  opt.k = 1;
  opt.target_count = 3;
  opt.fixed_lambda = 0.5;
  const auto out = smote(pts, opt);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[2].vector, (std::vector<double>{0.5, 0.5}));
  EXPECT_FALSE(out[2].source_id.has_value());
  EXPECT_EQ(out[0], pts[0]);
  EXPECT_EQ(out[1], pts[1]);
}

TEST(Smote, TooFewPointsWhenKEqualsClassSize) {
  const std::vector<EmbeddingPoint> pts = {{{0, 0}, "m", "a"}, {{1, 1}, "m", "b"}};
  SmoteOptions opt;
  opt.k = 2;
  opt.target_count = 4;
  EXPECT_ERROR_CODE(smote(pts, opt), ErrorCode::kTooFewPoints);
}

TEST(Smote, DimensionMismatch) {
  const std::vector<EmbeddingPoint> pts = {{{0, 0}, "m", "a"}, {{1}, "m", "b"}};
  EXPECT_ERROR_CODE(smote(pts, {}), ErrorCode::kDimensionMismatch);
}

TEST(Smote, SyntheticsLieOnSameClassSegments) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<EmbeddingPoint> pts;
    for (int i = 0; i < 5; ++i) {
      pts.push_back({{rng.normal(), rng.normal(), rng.normal()}, "minor", "m" + std::to_string(i)});
    }
    for (int i = 0; i < 15; ++i) {
      pts.push_back({{rng.normal(), rng.normal(), rng.normal()}, "major", "M" + std::to_string(i)});
    }
    SmoteOptions opt;
    opt.k = 2;
    opt.target_count = 15;
    opt.seed = seed;
    const auto out = smote(pts, opt);
    ASSERT_EQ(out.size(), pts.size() + 10);
    for (std::size_t i = pts.size(); i < out.size(); ++i) {
      EXPECT_EQ(out[i].class_label, "minor");
      EXPECT_LT(distance_to_nearest_segment(out[i], pts), 1e-12) << "seed " << seed;
    }
    EXPECT_EQ(smote(pts, opt), out);
  }
}

}  // namespace
}  // namespace medqa
