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

#ifndef MEDQA_EVAL_H_
#define MEDQA_EVAL_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medqa/corpus.h"
#include "medqa/nn.h"
#include "medqa/pipeline.h"
#include "medqa/tokenizer.h"

// Precision under a retrieval-with-abstention protocol. Each test question is
// embedded and matched to its top-1 index entry by cosine. A score below the
// threshold abstains; otherwise the prediction is a TP when the match rule
// accepts it and an FP when it does not. Precision is absent when nothing was
// predicted.
namespace medqa::eval {

// tp / (tp + fp); nullopt when tp + fp = 0.
std::optional<double> precision(std::size_t tp, std::size_t fp);

enum class MatchRule { kExactId, kTokenF1 };

std::string_view match_rule_name(MatchRule rule);
MatchRule parse_match_rule(std::string_view name);

inline constexpr double kDefaultThreshold = 0.0;
inline constexpr double kDefaultF1Threshold = 0.8;

struct EvalConfig {
  double threshold = kDefaultThreshold;  // tau in [-1, 1]
  MatchRule match_rule = MatchRule::kExactId;
  double f1_threshold = kDefaultF1Threshold;  // theta in (0, 1]

  // Throws InvalidConfig.
  void validate() const;
};

// SQuAD-style F1 over lowercase alphanumeric tokens. Two empty token lists
// score 1.
double token_f1(std::string_view prediction, std::string_view gold);

enum class Outcome { kTruePositive, kFalsePositive, kAbstained };

std::string_view outcome_name(Outcome o);

struct QueryTrace {
  std::string question_id;
  std::optional<std::string> retrieved_id;
  double score = 0.0;
  Outcome outcome = Outcome::kAbstained;
};

struct RetrievalResult {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t abstained = 0;
  std::vector<QueryTrace> trace;  // sorted by question id
};

// Scores precomputed query embeddings against the index. ExactId accepts a
// retrieved pair whose root id equals the test pair's root id; TokenF1 compares
// the retrieved pair's answer (looked up in `pool`) with the gold answer.
// Throws DimensionMismatch.
RetrievalResult evaluate_retrieval(const pipeline::EmbeddingIndex& index,
                                   std::span<const QAPair> pool,
                                   std::span<const std::vector<double>> queries,
                                   std::span<const QAPair> testset, const EvalConfig& cfg);

// Embeds each test question with the encoder, then scores as above.
RetrievalResult evaluate_retrieval(const nn::ModelParams& encoder, const nn::ArchConfig& arch,
                                   const TokenizerModel& tokenizer,
                                   const pipeline::EmbeddingIndex& index,
                                   std::span<const QAPair> pool,
                                   std::span<const QAPair> testset, const EvalConfig& cfg);

// Generates an answer per question and grades it against the gold answer with
// TokenF1. An empty generation abstains.
RetrievalResult evaluate_generation(const pipeline::AnswerContext& ctx,
                                    std::span<const QAPair> testset, std::size_t k,
                                    const EvalConfig& cfg);

// exp of the mean per-token NLL over all next-token positions of the
// sequences. Throws EmptyTestSet.
double evaluate_perplexity(const nn::ModelParams& decoder, const nn::ArchConfig& arch,
                           std::span<const std::vector<TokenId>> sequences);

struct ReportRow {
  std::string name;
  std::optional<double> precision;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t abstained = 0;
  std::optional<double> perplexity;
  std::uint64_t seed = 0;
  std::string config_hash;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct ReferenceRow {
  std::string_view name;
  double precision;
};

inline constexpr std::string_view kReferenceLabel = "paper-reported, not reproduced";

// Published precision figures shown beside every report for comparison only.
std::span<const ReferenceRow> reference_rows();

struct Report {
  std::string mode;        // "retrieval" or "generation"
  std::string match_rule;  // match_rule_name of the rule used
  std::vector<ReportRow> rows;

  friend bool operator==(const Report&, const Report&) = default;
};

struct ReportDocument {
  std::string json;
  std::string table;
};

// JSON {mode, match_rule, rows:[...], reference:[{name, precision, label}]} and a
// two-column text table of rows sorted by precision descending (stable, absent
// last) followed by the labeled reference block. Throws NoRows.
ReportDocument emit_report(const Report& report);

// Inverse of emit_report(...).json. Throws Format.
Report parse_report(std::string_view json);

}  // namespace medqa::eval

#endif  // MEDQA_EVAL_H_
