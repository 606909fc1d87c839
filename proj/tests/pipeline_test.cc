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

#include "medqa/pipeline.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "grad_check.h"
#include "medqa/random.h"
#include "test_util.h"

namespace medqa::pipeline {
namespace {

QAPair qa(std::string id, std::string q, std::string a) {
  return {std::move(id), std::move(q), std::move(a), std::nullopt, Provenance::kOriginal};
}

std::vector<QAPair> toy_pairs() {
  return {qa("a", "What causes gout?", "Uric acid."),
          qa("a~syn1", "What leads to gout?", "Uric acid."),
          qa("b", "What treats anemia?", "Iron."),
          qa("c", "What prevents flu?", "Vaccines."),
          qa("d", "What causes anemia?", "Low iron.")};
}

nn::ArchConfig byte_arch(nn::Head head, std::size_t max_seq_len = 64) {
  nn::ArchConfig a;
  a.vocab_size = kBaseVocabSize;
  a.d_model = 8;
  a.n_heads = 2;
  a.n_layers = 1;
  a.d_ff = 8;
  a.max_seq_len = max_seq_len;
  a.head = head;
  return a;
}

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

struct Ranked {
  double score;
  std::string id;
};

// Ranking oracle: cosine of the raw vectors, sorted by (-cosine, id).
std::vector<Ranked> brute_force_top_k(const std::vector<std::vector<double>>& vectors,
                                      const std::vector<std::string>& ids,
                                      const std::vector<double>& query, std::size_t k) {
  const auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  std::vector<Ranked> scored;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    double dot = 0.0;
    for (std::size_t d = 0; d < query.size(); ++d) dot += vectors[i][d] * query[d];
    scored.push_back({dot / (norm(vectors[i]) * norm(query)), ids[i]});
  }
  std::sort(scored.begin(), scored.end(), [](const Ranked& a, const Ranked& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  scored.resize(std::min(k, scored.size()));
  return scored;
}

TEST(RootId, StripsAugmentationSuffix) {
  EXPECT_EQ(root_id("q01~syn3"), "q01");
  EXPECT_EQ(root_id("q01~bt~x"), "q01");
  EXPECT_EQ(root_id("q01"), "q01");
}

TEST(TemplateExamples, WrapsTemplateInBosEos) {
  const TokenizerModel tok = TokenizerModel::from_merges({});
  const auto pairs = toy_pairs();
  const auto ex = template_examples(tok, pairs);
  ASSERT_EQ(ex.size(), pairs.size());
  EXPECT_EQ(ex[0].tokens.front(), SpecialTokens::kBos);
  EXPECT_EQ(ex[0].tokens.back(), SpecialTokens::kEos);
  EXPECT_EQ(decode(tok, ex[0].tokens), format_template(pairs[0]));
}

TEST(EmbeddingIndex, StoresUnitVectorsAndRejectsBadInput) {
  EmbeddingIndex index(3);
  const std::vector<double> v = {3.0, 0.0, 4.0};
  index.add("x", v);
  EXPECT_EQ(index.vector(0)[0], 0.6);
  EXPECT_EQ(index.vector(0)[2], 0.8);
  const std::vector<double> zero = {0.0, 0.0, 0.0};
  EXPECT_ERROR_CODE(index.add("z", zero), ErrorCode::kDegenerateEmbedding);
  const std::vector<double> nan = {NAN, 1.0, 0.0};
  EXPECT_ERROR_CODE(index.add("n", nan), ErrorCode::kDegenerateEmbedding);
  const std::vector<double> short_v = {1.0};
  EXPECT_ERROR_CODE(index.add("s", short_v), ErrorCode::kDimensionMismatch);
  EXPECT_ERROR_CODE(index.add("x", v), ErrorCode::kInvalidPair);
  EXPECT_ERROR_CODE(index.top_k(short_v, 1), ErrorCode::kDimensionMismatch);
  EXPECT_EQ(index.size(), 1u);
}

TEST(EmbeddingIndex, TopKMatchesBruteForceOnRandomIndexes) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t dim = 1 + rng.below(6);
    const std::size_t n = 1 + rng.below(40);
    EmbeddingIndex index(dim);
    std::vector<std::vector<double>> vectors;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
      // Duplicated vectors exercise the id tie-break.
      vectors.push_back(i > 0 && rng.below(4) == 0 ? vectors[rng.below(i)]
                                                  : random_vector(rng, dim));
      ids.push_back("id" + std::to_string(rng.below(1000)) + "_" + std::to_string(i));
      index.add(ids.back(), vectors.back());
    }
    for (std::size_t e = 0; e < n; ++e) {
      double s = 0.0;
      for (double x : index.vector(e)) s += x * x;
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    const auto query = random_vector(rng, dim);
    const std::size_t k = rng.below(n + 2);
    const auto hits = index.top_k(query, k);
    const auto expected = brute_force_top_k(vectors, ids, query, k);
    ASSERT_EQ(hits.size(), expected.size()) << "seed " << seed;
    for (std::size_t i = 0; i < hits.size(); ++i) {
      EXPECT_NEAR(hits[i].score, expected[i].score, 1e-12) << "seed " << seed;
      // Rounding may reorder distinct vectors whose cosines agree to 1e-12;
      // exact duplicates tie in both rankings and must resolve by id.
      const bool near_tie =
          (i > 0 && expected[i - 1].score - expected[i].score < 1e-12 &&
           expected[i - 1].score != expected[i].score) ||
          (i + 1 < expected.size() && expected[i].score - expected[i + 1].score < 1e-12 &&
           expected[i].score != expected[i + 1].score);
      if (!near_tie) {
        EXPECT_EQ(index.id(hits[i].entry), expected[i].id) << "seed " << seed;
      }
    }
  }
}

TEST(EmbeddingIndex, SkipPredicateExcludesEntries) {
  EmbeddingIndex index(2);
  const std::vector<double> a = {1.0, 0.0};
  const std::vector<double> b = {0.9, 0.1};
  index.add("a", a);
  index.add("b", b);
  const auto hits = index.top_k(a, 2, [](std::size_t e) { return e == 0; });
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].entry, 1u);
}

TEST(EmbeddingIndex, SaveLoadRoundTrip) {
  EmbeddingIndex index(2);
  const std::vector<double> a = {1.0, 2.0};
  const std::vector<double> b = {-3.0, 0.5};
  index.add("a", a);
  index.add("b", b);
  const nlohmann::json meta = {{"encoder_hash", "abc"}};
  const std::string bytes = index.save(meta);
  nlohmann::json back_meta;
  const EmbeddingIndex back = EmbeddingIndex::load(bytes, &back_meta);
  EXPECT_EQ(back, index);
  EXPECT_EQ(back_meta, meta);
  EXPECT_EQ(back.save(meta), bytes);
  EXPECT_ERROR_CODE(EmbeddingIndex::load("nope"), ErrorCode::kFormat);
}

TEST(RenderPrompt, ZeroExemplarsIsQuestionPrompt) {
  EXPECT_EQ(render_prompt({}, "Why?"), format_question_prompt("Why?"));
  const std::vector<Exemplar> ex = {{"a", "Q1", "A1"}, {"b", "Q2", "A2"}};
  EXPECT_EQ(render_prompt(ex, "Why?"),
            "Question: Q1 ; Answer: A1\nQuestion: Q2 ; Answer: A2\nQuestion: Why? ; Answer:");
}

EmbeddingIndex index_of(const std::vector<QAPair>& pairs, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingIndex index(4);
  for (const QAPair& p : pairs) index.add(p.id, random_vector(rng, 4));
  return index;
}

TEST(GeneratePrompts, SingletonGetsNoExemplars) {
  const std::vector<QAPair> one = {qa("x", "Why?", "Because.")};
  const auto prompts = generate_prompts(index_of(one, 1), one, 1);
  ASSERT_EQ(prompts.size(), 1u);
  EXPECT_TRUE(prompts[0].exemplars.empty());
  EXPECT_EQ(prompts[0].rendered, format_question_prompt("Why?"));
  EXPECT_EQ(prompts[0].target_answer, "Because.");
}

TEST(GeneratePrompts, NeverLeaksTargetAnswer) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<QAPair> pairs = toy_pairs();
    pairs.push_back(qa("e", "What causes gout?", "Diet."));  // same question, other root
    const EmbeddingIndex index = index_of(pairs, seed);
    for (std::size_t k : {0u, 1u, 2u, 5u}) {
      const auto prompts = generate_prompts(index, pairs, k);
      ASSERT_EQ(prompts.size(), pairs.size());
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        EXPECT_LE(prompts[i].exemplars.size(), k);
        for (const Exemplar& e : prompts[i].exemplars) {
          EXPECT_NE(root_id(e.id), root_id(pairs[i].id));
          EXPECT_NE(e.question, pairs[i].question);
        }
        EXPECT_EQ(prompts[i].rendered,
                  render_prompt(prompts[i].exemplars, pairs[i].question));
      }
    }
  }
}

TEST(GeneratePrompts, PairsMissingFromIndexAreAnError) {
  const auto pairs = toy_pairs();
  const std::vector<QAPair> some(pairs.begin(), pairs.begin() + 2);
  EXPECT_ERROR_CODE(generate_prompts(index_of(some, 1), pairs, 1),
                    ErrorCode::kMissingPrerequisite);
}

TEST(PromptForQuestion, RootExclusionReproducesTrainingPrompts) {
  const TokenizerModel tok = TokenizerModel::from_merges({});
  const nn::ArchConfig arch = byte_arch(nn::Head::kEmbedding);
  const nn::ModelParams enc = testing::random_params(arch, 8);
  const auto pairs = toy_pairs();
  const EmbeddingIndex index = build_index(enc, arch, tok, pairs);
  for (std::size_t k : {1u, 2u, 3u}) {
    const auto prompts = generate_prompts(index, pairs, k);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto query = embed_text(enc, arch, tok, pairs[i].question);
      const PromptRecord r = prompt_for_question(index, pairs, query, pairs[i].question, k,
                                                 root_id(pairs[i].id));
      EXPECT_EQ(r.exemplars, prompts[i].exemplars) << pairs[i].id << " k=" << k;
      EXPECT_EQ(r.rendered, prompts[i].rendered);
    }
  }
  // Without the exclusion the synonym copy of "a" is a candidate for "a".
  const auto query = embed_text(enc, arch, tok, pairs[0].question);
  const PromptRecord open = prompt_for_question(index, pairs, query, pairs[0].question, 5);
  bool sibling = false;
  for (const Exemplar& e : open.exemplars) sibling |= e.id == "a~syn1";
  EXPECT_TRUE(sibling);
}

TEST(PromptsJsonl, RoundTrip) {
  const auto pairs = toy_pairs();
  auto prompts = generate_prompts(index_of(pairs, 3), pairs, 2);
  prompts[1].target_answer.reset();
  EXPECT_EQ(read_prompts_jsonl(write_prompts_jsonl(prompts)), prompts);
}

TEST(FinetuneExample, MaskCoversAnswerAndEos) {
  const TokenizerModel tok = TokenizerModel::from_merges({});
  PromptRecord r;
  r.id = "x";
  r.target_question = "Q?";
  r.rendered = format_question_prompt("Q?");
  r.target_answer = "Ab.";
  const train::Example e = finetune_example(tok, r, 64);
  const std::string prompt = "Question: Q? ; Answer:";
  // BOS + prompt bytes, then " Ab." (4 bytes) and EOS.
  ASSERT_EQ(e.tokens.size(), 1 + prompt.size() + 4 + 1);
  std::vector<std::uint8_t> expected(e.tokens.size(), 0);
  std::fill(expected.end() - 5, expected.end(), 1);
  EXPECT_EQ(e.loss_mask, expected);
  EXPECT_EQ(decode(tok, e.tokens), prompt + " Ab.");
  EXPECT_EQ(e.tokens.back(), SpecialTokens::kEos);
  r.target_answer.reset();
  EXPECT_ERROR_CODE(finetune_example(tok, r, 64), ErrorCode::kMissingLabel);
}

TEST(FinetuneExample, DropsTrailingExemplarsToFit) {
  const TokenizerModel tok = TokenizerModel::from_merges({});
  PromptRecord r;
  r.target_question = "Q?";
  r.exemplars = {{"a", "Short?", "Yes."}, {"b", std::string(80, 'x'), "No."}};
  r.rendered = render_prompt(r.exemplars, r.target_question);
  r.target_answer = "Ab.";
  const train::Example e = finetune_example(tok, r, 64);
  EXPECT_LE(e.tokens.size(), 64u);
  const std::vector<Exemplar> first(r.exemplars.begin(), r.exemplars.begin() + 1);
  EXPECT_EQ(decode(tok, e.tokens), render_prompt(first, "Q?") + " Ab.");
}

TEST(FinetuneDecoder, EmptyPromptsAreAnError) {
  const TokenizerModel tok = TokenizerModel::from_merges({});
  const nn::ArchConfig arch = byte_arch(nn::Head::kCausal);
  train::TrainConfig cfg;
  cfg.total_steps = 2;
  EXPECT_ERROR_CODE(finetune_decoder(nn::ModelParams::zeros(arch), arch, tok, {}, cfg),
                    ErrorCode::kEmptyTrainingSet);
}

TEST(Pretrain, ForcesHeadAndReducesLoss) {
  const TokenizerModel tok = TokenizerModel::from_merges({});
  const auto pairs = toy_pairs();
  train::TrainConfig cfg;
  cfg.total_steps = 30;
  cfg.init_lr = 0.2;
  cfg.batch_size = 5;
  nn::ArchConfig arch = byte_arch(nn::Head::kEmbedding);
  const auto r = pretrain_decoder(nn::ModelParams::initialize(arch, 1), arch, tok, pairs, cfg);
  EXPECT_LT(r.log.steps.back().loss, r.log.steps.front().loss);
  const auto e = pretrain_encoder(nn::ModelParams::initialize(arch, 2), arch, tok, pairs, cfg);
  EXPECT_EQ(e.log.steps.size(), 30u);
}

TEST(EmbedText, TruncatesToMaxSeqLen) {
  const TokenizerModel tok = TokenizerModel::from_merges({});
  const nn::ArchConfig arch = byte_arch(nn::Head::kMlm, 8);
  const nn::ModelParams p = testing::random_params(arch, 4);
  const auto long_text = embed_text(p, arch, tok, std::string(100, 'a'));
  EXPECT_EQ(long_text.size(), arch.d_model);
  // Only the first six bytes survive next to BOS and EOS.
  EXPECT_EQ(long_text, embed_text(p, arch, tok, "aaaaaab"));
}

TEST(Answer, IsDeterministicAndBoundedByMaxLength) {
  const TokenizerModel tok = TokenizerModel::from_merges({});
  const auto pairs = toy_pairs();
  const nn::ArchConfig enc_arch = byte_arch(nn::Head::kEmbedding);
  const nn::ArchConfig dec_arch = byte_arch(nn::Head::kCausal);
  const nn::ModelParams enc = testing::random_params(enc_arch, 5);
  const nn::ModelParams dec = testing::random_params(dec_arch, 6);
  const EmbeddingIndex index = build_index(enc, enc_arch, tok, pairs);
  EXPECT_EQ(index.size(), pairs.size());
  const AnswerContext ctx{enc, enc_arch, dec, dec_arch, tok, index, pairs};
  const std::string a = answer(ctx, "What causes flu?", 1, 40);
  EXPECT_EQ(a, answer(ctx, "What causes flu?", 1, 40));
  EXPECT_LE(a.size(), 40u);
  // A zero decoder predicts PAD, which decodes to nothing.
  const nn::ModelParams zero = nn::ModelParams::zeros(dec_arch);
  const AnswerContext silent{enc, enc_arch, zero, dec_arch, tok, index, pairs};
  EXPECT_EQ(answer(silent, "What causes flu?", 2, 60), "");
}

}  // namespace
}  // namespace medqa::pipeline
