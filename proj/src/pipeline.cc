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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include "medqa/error.h"
#include "medqa/kernels.h"
#include "medqa/tensor_file.h"
#include "medqa/text.h"

namespace medqa::pipeline {
namespace {

nn::ArchConfig with_head(nn::ArchConfig arch, nn::Head head) {
  arch.head = head;
  return arch;
}

std::vector<TokenId> bounded(std::vector<TokenId> tokens, std::size_t max_len) {
  if (tokens.size() > max_len) {
    tokens.resize(max_len);
    tokens.back() = SpecialTokens::kEos;
  }
  return tokens;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && text::whitespace_length(s, b) > 0) b += text::whitespace_length(s, b);
  while (e > b) {
    // Step back over one UTF-8 sequence and test whether it is whitespace.
    std::size_t start = e - 1;
    while (start > b && (static_cast<unsigned char>(s[start]) & 0xC0) == 0x80) --start;
    if (text::whitespace_length(s, start) != e - start) break;
    e = start;
  }
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::string_view root_id(std::string_view id) { return id.substr(0, id.find('~')); }

std::vector<train::Example> template_examples(const TokenizerModel& tokenizer,
                                              std::span<const QAPair> pairs) {
  std::vector<train::Example> out;
  out.reserve(pairs.size());
  for (const QAPair& p : pairs) {
    out.push_back({encode(tokenizer, format_template(p), true), {}});
  }
  return out;
}

train::FitResult pretrain_encoder(nn::ModelParams init, const nn::ArchConfig& arch,
                                  const TokenizerModel& tokenizer,
                                  std::span<const QAPair> pairs,
                                  const train::TrainConfig& cfg,
                                  const train::FitOptions& options) {
  const auto data = template_examples(tokenizer, pairs);
  return train::fit(std::move(init), with_head(arch, nn::Head::kMlm), cfg,
                    train::Objective::kMlm, data, options);
}

train::FitResult pretrain_decoder(nn::ModelParams init, const nn::ArchConfig& arch,
                                  const TokenizerModel& tokenizer,
                                  std::span<const QAPair> pairs,
                                  const train::TrainConfig& cfg,
                                  const train::FitOptions& options) {
  const auto data = template_examples(tokenizer, pairs);
  return train::fit(std::move(init), with_head(arch, nn::Head::kCausal), cfg,
                    train::Objective::kCausal, data, options);
}

std::vector<double> embed_text(const nn::ModelParams& encoder, const nn::ArchConfig& arch,
                               const TokenizerModel& tokenizer, std::string_view text) {
  const auto tokens = bounded(encode(tokenizer, text, true), arch.max_seq_len);
  return nn::embed(encoder, arch, tokens);
}

void EmbeddingIndex::add(std::string id, std::span<const double> vector) {
  if (vector.size() != dim_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "vector of length " + std::to_string(vector.size()) + " in index of dim " +
                    std::to_string(dim_));
  }
  if (find(id)) throw Error(ErrorCode::kInvalidPair, "duplicate index id '" + id + "'");
  const double norm = std::sqrt(kernels::sum_squares(vector));
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorCode::kDegenerateEmbedding, "embedding of '" + id + "' has no direction");
  }
  for (double v : vector) values_.push_back(v / norm);
  ids_.push_back(std::move(id));
}

std::optional<std::size_t> EmbeddingIndex::find(std::string_view id) const {
  const auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

std::vector<double> EmbeddingIndex::scores(std::span<const double> query) const {
  if (query.size() != dim_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "query of length " + std::to_string(query.size()) + " against index dim " +
                    std::to_string(dim_));
  }
  const double norm = std::sqrt(kernels::sum_squares(query));
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorCode::kDegenerateEmbedding, "query embedding has no direction");
  }
  std::vector<double> unit(query.begin(), query.end());
  for (double& v : unit) v /= norm;
  std::vector<double> out(size());
  for (std::size_t e = 0; e < size(); ++e) out[e] = kernels::dot(unit, vector(e));
  return out;
}

std::vector<Hit> EmbeddingIndex::rank(std::vector<double> scores, std::size_t k,
                                      const std::vector<bool>& skipped) const {
  std::vector<std::size_t> order;
  for (std::size_t e = 0; e < size(); ++e) {
    if (!skipped[e]) order.push_back(e);
  }
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids_[a] < ids_[b];
  };
  const std::size_t n = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    better);
  std::vector<Hit> hits;
  for (std::size_t i = 0; i < n; ++i) hits.push_back({order[i], scores[order[i]]});
  return hits;
}

std::string EmbeddingIndex::save(const nlohmann::json& meta) const {
  TensorFile file;
  file.kind = "index";
  file.meta = {{"dim", dim_}, {"ids", ids_}, {"meta", meta}};
  file.arrays.push_back({"vectors", {size(), dim_}, values_});
  return write_tensor_file(file);
}

EmbeddingIndex EmbeddingIndex::load(std::string_view bytes, nlohmann::json* meta) {
  const TensorFile file = read_tensor_file(bytes);
  if (file.kind != "index" || file.arrays.size() != 1) {
    throw Error(ErrorCode::kFormat, "tensor file is not an embedding index");
  }
  EmbeddingIndex index;
  try {
    index.dim_ = file.meta.at("dim").get<std::size_t>();
    index.ids_ = file.meta.at("ids").get<std::vector<std::string>>();
    if (meta != nullptr) *meta = file.meta.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("index header: ") + e.what());
  }
  index.values_ = file.arrays[0].values;
  if (index.values_.size() != index.ids_.size() * index.dim_) {
    throw Error(ErrorCode::kFormat, "index vectors do not match its ids");
  }
  return index;
}

EmbeddingIndex build_index(const nn::ModelParams& encoder, const nn::ArchConfig& arch,
                           const TokenizerModel& tokenizer, std::span<const QAPair> pairs) {
  EmbeddingIndex index(arch.d_model);
  for (const QAPair& p : pairs) index.add(p.id, embed_text(encoder, arch, tokenizer, p.question));
  return index;
}

std::string render_prompt(std::span<const Exemplar> exemplars,
                          std::string_view target_question) {
  std::string out;
  for (const Exemplar& e : exemplars) {
    out += "Question: " + e.question + " ; Answer: " + e.answer + "\n";
  }
  out += format_question_prompt(target_question);
  return out;
}

namespace {

std::vector<Exemplar> exemplars_from(const EmbeddingIndex& index,
                                     const std::unordered_map<std::string, const QAPair*>& by_id,
                                     const std::vector<Hit>& hits) {
  std::vector<Exemplar> out;
  for (const Hit& h : hits) {
    const auto it = by_id.find(index.id(h.entry));
    if (it == by_id.end()) {
      throw Error(ErrorCode::kMissingPrerequisite,
                  "index entry '" + index.id(h.entry) + "' has no pair in the pool");
    }
    out.push_back({it->second->id, it->second->question, it->second->answer});
  }
  return out;
}

std::unordered_map<std::string, const QAPair*> pairs_by_id(std::span<const QAPair> pairs) {
  std::unordered_map<std::string, const QAPair*> out;
  for (const QAPair& p : pairs) out.emplace(p.id, &p);
  return out;
}

}  // namespace

std::vector<PromptRecord> generate_prompts(const EmbeddingIndex& index,
                                           std::span<const QAPair> pairs, std::size_t k) {
  const auto by_id = pairs_by_id(pairs);
  std::vector<PromptRecord> out;
  out.reserve(pairs.size());
  for (const QAPair& target : pairs) {
    const auto entry = index.find(target.id);
    if (!entry) {
      throw Error(ErrorCode::kMissingPrerequisite,
                  "pair '" + target.id + "' is not in the embedding index");
    }
    const std::string_view root = root_id(target.id);
    const auto skip = [&](std::size_t e) {
      if (root_id(index.id(e)) == root) return true;
      const auto it = by_id.find(index.id(e));
      return it != by_id.end() && it->second->question == target.question;
    };
    const auto hits = k == 0 ? std::vector<Hit>{} : index.top_k(index.vector(*entry), k, skip);
    PromptRecord record;
    record.id = target.id;
    record.target_question = target.question;
    record.exemplars = exemplars_from(index, by_id, hits);
    record.rendered = render_prompt(record.exemplars, target.question);
    record.target_answer = target.answer;
    out.push_back(std::move(record));
  }
  return out;
}

PromptRecord prompt_for_question(const EmbeddingIndex& index, std::span<const QAPair> pool,
                                 std::span<const double> query, std::string_view question,
                                 std::size_t k, std::string_view exclude_root) {
  const auto by_id = pairs_by_id(pool);
  const auto skip = [&](std::size_t e) {
    if (!exclude_root.empty() && root_id(index.id(e)) == exclude_root) return true;
    const auto it = by_id.find(index.id(e));
    return it != by_id.end() && it->second->question == question;
  };
  const auto hits = k == 0 ? std::vector<Hit>{} : index.top_k(query, k, skip);
  PromptRecord record;
  record.target_question = std::string(question);
  record.exemplars = exemplars_from(index, by_id, hits);
  record.rendered = render_prompt(record.exemplars, question);
  return record;
}

std::string write_prompts_jsonl(std::span<const PromptRecord> records) {
  std::string out;
  for (const PromptRecord& r : records) {
    nlohmann::json ex = nlohmann::json::array();
    for (const Exemplar& e : r.exemplars) {
      ex.push_back({{"id", e.id}, {"q", e.question}, {"a", e.answer}});
    }
    nlohmann::json j = {{"id", r.id},
                        {"target_question", r.target_question},
                        {"exemplars", ex},
                        {"rendered", r.rendered}};
    if (r.target_answer) j["target_answer"] = *r.target_answer;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<PromptRecord> read_prompts_jsonl(std::string_view text) {
  std::vector<PromptRecord> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      PromptRecord r;
      r.id = j.at("id").get<std::string>();
      r.target_question = j.at("target_question").get<std::string>();
      for (const auto& e : j.at("exemplars")) {
        r.exemplars.push_back({e.at("id").get<std::string>(), e.at("q").get<std::string>(),
                               e.at("a").get<std::string>()});
      }
      r.rendered = j.at("rendered").get<std::string>();
      if (j.contains("target_answer")) r.target_answer = j["target_answer"].get<std::string>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kMalformedRecord,
                  "prompt line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

train::Example finetune_example(const TokenizerModel& tokenizer, const PromptRecord& record,
                                std::size_t max_seq_len) {
  if (!record.target_answer) {
    throw Error(ErrorCode::kMissingLabel, "prompt '" + record.id + "' has no target answer");
  }
  std::vector<TokenId> answer_tokens = encode(tokenizer, " " + *record.target_answer);
  answer_tokens.push_back(SpecialTokens::kEos);

  std::span<const Exemplar> exemplars = record.exemplars;
  std::vector<TokenId> prompt;
  for (;;) {
    prompt = encode(tokenizer, render_prompt(exemplars, record.target_question));
    prompt.insert(prompt.begin(), SpecialTokens::kBos);
    if (prompt.size() + answer_tokens.size() <= max_seq_len || exemplars.empty()) break;
    exemplars = exemplars.first(exemplars.size() - 1);
  }
  train::Example ex;
  ex.tokens = prompt;
  ex.tokens.insert(ex.tokens.end(), answer_tokens.begin(), answer_tokens.end());
  ex.loss_mask.assign(ex.tokens.size(), 0);
  std::fill(ex.loss_mask.begin() + static_cast<std::ptrdiff_t>(prompt.size()),
            ex.loss_mask.end(), 1);
  return ex;
}

train::FitResult finetune_decoder(nn::ModelParams decoder, const nn::ArchConfig& arch,
                                  const TokenizerModel& tokenizer,
                                  std::span<const PromptRecord> prompts,
                                  const train::TrainConfig& cfg,
                                  const train::FitOptions& options) {
  if (prompts.empty()) throw Error(ErrorCode::kEmptyTrainingSet, "no prompts to fine-tune on");
  std::vector<train::Example> data;
  data.reserve(prompts.size());
  for (const PromptRecord& r : prompts) {
    data.push_back(finetune_example(tokenizer, r, arch.max_seq_len));
  }
  return train::fit(std::move(decoder), with_head(arch, nn::Head::kCausal), cfg,
                    train::Objective::kCausal, data, options);
}

std::string answer(const AnswerContext& ctx, std::string_view question, std::size_t k,
                   std::size_t max_length, std::string_view exclude_root) {
  const nn::ArchConfig dec = with_head(ctx.decoder_arch, nn::Head::kCausal);
  const std::size_t limit = std::min(max_length, dec.max_seq_len);
  const auto query = embed_text(ctx.encoder, with_head(ctx.encoder_arch, nn::Head::kEmbedding),
                                ctx.tokenizer, question);
  const PromptRecord record =
      prompt_for_question(ctx.index, ctx.pool, query, question, k, exclude_root);

  std::span<const Exemplar> exemplars = record.exemplars;
  std::vector<TokenId> prompt;
  for (;;) {
    prompt = encode(ctx.tokenizer, render_prompt(exemplars, question));
    prompt.insert(prompt.begin(), SpecialTokens::kBos);
    if (prompt.size() < limit || exemplars.empty()) break;
    exemplars = exemplars.first(exemplars.size() - 1);
  }
  if (prompt.size() >= limit) {
    throw Error(ErrorCode::kInvalidConfig, "question does not fit in max_length tokens");
  }
  const auto generated = nn::greedy_generate(ctx.decoder, dec, prompt, limit);
  std::span<const TokenId> continuation(generated.begin() + static_cast<std::ptrdiff_t>(prompt.size()),
                                        generated.end());
  if (!continuation.empty() && continuation.back() == SpecialTokens::kEos) {
    continuation = continuation.first(continuation.size() - 1);
  }
  return trim(decode(ctx.tokenizer, continuation));
}

}  // namespace medqa::pipeline
