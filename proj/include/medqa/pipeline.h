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

#ifndef MEDQA_PIPELINE_H_
#define MEDQA_PIPELINE_H_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "medqa/corpus.h"
#include "medqa/nn.h"
#include "medqa/tokenizer.h"
#include "medqa/train.h"

namespace medqa::pipeline {

// Stage order: encoder pretraining (MLM) -> decoder pretraining (causal, plain
// templates) -> prompt generation -> fine-tuning on prompts.

// The part of a pair id before the first '~'. Augmented copies share the root
// of the pair they were derived from.
std::string_view root_id(std::string_view id);

// [BOS] + encode(format_template(pair)) + [EOS] per pair.
std::vector<train::Example> template_examples(const TokenizerModel& tokenizer,
                                              std::span<const QAPair> pairs);

// MLM training of `init` on the templated pairs. The head is forced to MLM.
train::FitResult pretrain_encoder(nn::ModelParams init, const nn::ArchConfig& arch,
                                  const TokenizerModel& tokenizer,
                                  std::span<const QAPair> pairs,
                                  const train::TrainConfig& cfg,
                                  const train::FitOptions& options = {});

// Causal training of `init` on the templated pairs. The head is forced to Causal.
train::FitResult pretrain_decoder(nn::ModelParams init, const nn::ArchConfig& arch,
                                  const TokenizerModel& tokenizer,
                                  std::span<const QAPair> pairs,
                                  const train::TrainConfig& cfg,
                                  const train::FitOptions& options = {});

// Mean-pooled encoder state of [BOS] + encode(text) + [EOS], truncated to
// max_seq_len.
std::vector<double> embed_text(const nn::ModelParams& encoder, const nn::ArchConfig& arch,
                               const TokenizerModel& tokenizer, std::string_view text);

struct Hit {
  std::size_t entry;
  double score;  // cosine similarity
};

// Unit-normalized vectors keyed by unique pair id. Queries scan every entry.
class EmbeddingIndex {
 public:
  explicit EmbeddingIndex(std::size_t dim = 0) : dim_(dim) {}

  // Stores vector / ||vector||. Throws DegenerateEmbedding on a zero or
  // non-finite vector, DimensionMismatch on a wrong length and InvalidPair on
  // a duplicate id.
  void add(std::string id, std::span<const double> vector);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::string& id(std::size_t entry) const { return ids_[entry]; }
  std::span<const double> vector(std::size_t entry) const {
    return {values_.data() + entry * dim_, dim_};
  }
  std::optional<std::size_t> find(std::string_view id) const;

  // Entries ranked by cosine with the query, descending, ties to the smaller
  // id; entries rejected by `skip` are never returned. At most k hits.
  // Throws DimensionMismatch.
  template <typename Skip>
  std::vector<Hit> top_k(std::span<const double> query, std::size_t k, Skip skip) const;
  std::vector<Hit> top_k(std::span<const double> query, std::size_t k) const {
    return top_k(query, k, [](std::size_t) { return false; });
  }

  // Tensor file of kind "index"; meta carries the ids and `meta`.
  std::string save(const nlohmann::json& meta = nlohmann::json::object()) const;
  static EmbeddingIndex load(std::string_view bytes, nlohmann::json* meta = nullptr);

  friend bool operator==(const EmbeddingIndex&, const EmbeddingIndex&) = default;

 private:
  std::vector<double> scores(std::span<const double> query) const;
  std::vector<Hit> rank(std::vector<double> scores, std::size_t k,
                        const std::vector<bool>& skipped) const;

  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<double> values_;
};

template <typename Skip>
std::vector<Hit> EmbeddingIndex::top_k(std::span<const double> query, std::size_t k,
                                       Skip skip) const {
  std::vector<bool> skipped(size());
  for (std::size_t e = 0; e < size(); ++e) skipped[e] = skip(e);
  return rank(scores(query), k, skipped);
}

// Embeds every question. An empty pair list gives an empty index.
EmbeddingIndex build_index(const nn::ModelParams& encoder, const nn::ArchConfig& arch,
                           const TokenizerModel& tokenizer, std::span<const QAPair> pairs);

struct Exemplar {
  std::string id;
  std::string question;
  std::string answer;

  friend bool operator==(const Exemplar&, const Exemplar&) = default;
};

struct PromptRecord {
  std::string id;
  std::string target_question;
  std::vector<Exemplar> exemplars;
  std::string rendered;
  std::optional<std::string> target_answer;

  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

// Exemplar lines "Question: q ; Answer: a" joined by newlines, then
// "Question: <target> ; Answer:" on the last line.
std::string render_prompt(std::span<const Exemplar> exemplars, std::string_view target_question);

// For each pair, the k nearest indexed pairs by question cosine. Candidates
// sharing the target's root id or its exact question are excluded, so no
// prompt carries its own answer. Every pair must be present in the index.
std::vector<PromptRecord> generate_prompts(const EmbeddingIndex& index,
                                           std::span<const QAPair> pairs, std::size_t k);

// Prompt for a free-standing question: nearest indexed pairs from `pool`
// (looked up by id), skipping any whose question equals `question` and, when
// exclude_root is non-empty, any whose root id equals it. Passing a pair's
// root id reproduces the exemplar choice generate_prompts made for it.
PromptRecord prompt_for_question(const EmbeddingIndex& index, std::span<const QAPair> pool,
                                 std::span<const double> query, std::string_view question,
                                 std::size_t k, std::string_view exclude_root = {});

std::string write_prompts_jsonl(std::span<const PromptRecord> records);
std::vector<PromptRecord> read_prompts_jsonl(std::string_view text);

// [BOS] + encode(rendered) + encode(" " + answer) + [EOS]; loss_mask covers
// the answer tokens and EOS. Trailing exemplars are dropped while the
// sequence exceeds max_seq_len. Throws MissingLabel without an answer.
train::Example finetune_example(const TokenizerModel& tokenizer, const PromptRecord& record,
                                std::size_t max_seq_len);

// Causal training with loss on answer positions only. Throws EmptyTrainingSet.
train::FitResult finetune_decoder(nn::ModelParams decoder, const nn::ArchConfig& arch,
                                  const TokenizerModel& tokenizer,
                                  std::span<const PromptRecord> prompts,
                                  const train::TrainConfig& cfg,
                                  const train::FitOptions& options = {});

struct AnswerContext {
  const nn::ModelParams& encoder;
  nn::ArchConfig encoder_arch;
  const nn::ModelParams& decoder;
  nn::ArchConfig decoder_arch;
  const TokenizerModel& tokenizer;
  const EmbeddingIndex& index;
  std::span<const QAPair> pool;
};

// Retrieves exemplars, greedily decodes after the prompt and returns the
// continuation text with surrounding whitespace trimmed. max_length bounds the
// whole sequence, prompt included. exclude_root is forwarded to
// prompt_for_question.
std::string answer(const AnswerContext& ctx, std::string_view question, std::size_t k,
                   std::size_t max_length = nn::kDefaultMaxLength,
                   std::string_view exclude_root = {});

}  // namespace medqa::pipeline

#endif  // MEDQA_PIPELINE_H_
