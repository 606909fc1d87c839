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

#include "medqa/eval.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "medqa/error.h"
#include "medqa/text.h"

namespace medqa::eval {
namespace {

constexpr std::array<ReferenceRow, 4> kReferenceRows = {{
    {"Sentence-T5", 0.702},
    {"Phi-3 + LoRA", 0.718},
    {"Gemma-2b + LoRA", 0.721},
    {"Sentence-T5 + Mistral 7B + Pretrain", 0.762},
}};

void sort_trace(RetrievalResult& result) {
  std::stable_sort(result.trace.begin(), result.trace.end(),
                   [](const QueryTrace& a, const QueryTrace& b) {
                     return a.question_id < b.question_id;
                   });
}

void count(RetrievalResult& result, QueryTrace trace) {
  switch (trace.outcome) {
    case Outcome::kTruePositive: ++result.tp; break;
    case Outcome::kFalsePositive: ++result.fp; break;
    case Outcome::kAbstained: ++result.abstained; break;
  }
  result.trace.push_back(std::move(trace));
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_double(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string format_precision(const std::optional<double>& p) {
  if (!p) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << *p;
  return os.str();
}

}  // namespace

std::optional<double> precision(std::size_t tp, std::size_t fp) {
  if (tp + fp == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

std::string_view match_rule_name(MatchRule rule) {
  return rule == MatchRule::kExactId ? "exact_id" : "token_f1";
}

MatchRule parse_match_rule(std::string_view name) {
  if (name == "exact_id") return MatchRule::kExactId;
  if (name == "token_f1") return MatchRule::kTokenF1;
  throw Error(ErrorCode::kInvalidConfig, "unknown match rule: " + std::string(name));
}

void EvalConfig::validate() const {
  if (!(threshold >= -1.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "threshold must lie in [-1, 1]");
  }
  if (!(f1_threshold > 0.0 && f1_threshold <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "f1_threshold must lie in (0, 1]");
  }
}

double token_f1(std::string_view prediction, std::string_view gold) {
  const auto pred = text::normalized_tokens(prediction);
  const auto ref = text::normalized_tokens(gold);
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;
  std::map<std::string, std::size_t> remaining;
  for (const std::string& t : ref) ++remaining[t];
  std::size_t common = 0;
  for (const std::string& t : pred) {
    auto it = remaining.find(t);
    if (it != remaining.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(pred.size());
  const double r = static_cast<double>(common) / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

std::string_view outcome_name(Outcome o) {
  switch (o) {
    case Outcome::kTruePositive: return "tp";
    case Outcome::kFalsePositive: return "fp";
    case Outcome::kAbstained: return "abstained";
  }
  return "abstained";
}

RetrievalResult evaluate_retrieval(const pipeline::EmbeddingIndex& index,
                                   std::span<const QAPair> pool,
                                   std::span<const std::vector<double>> queries,
                                   std::span<const QAPair> testset, const EvalConfig& cfg) {
  cfg.validate();
  if (queries.size() != testset.size()) {
    throw Error(ErrorCode::kShapeMismatch, "one query embedding is needed per test pair");
  }
  std::unordered_map<std::string_view, const QAPair*> by_id;
  for (const QAPair& p : pool) by_id.emplace(p.id, &p);

  RetrievalResult result;
  for (std::size_t i = 0; i < testset.size(); ++i) {
    const QAPair& item = testset[i];
    QueryTrace trace{item.id, std::nullopt, 0.0, Outcome::kAbstained};
    const auto hits = index.top_k(queries[i], 1);
    if (!hits.empty()) {
      trace.score = hits[0].score;
      if (hits[0].score >= cfg.threshold) {
        const std::string& rid = index.id(hits[0].entry);
        trace.retrieved_id = rid;
        bool accepted = false;
        if (cfg.match_rule == MatchRule::kExactId) {
          accepted = pipeline::root_id(rid) == pipeline::root_id(item.id);
        } else {
          const auto it = by_id.find(rid);
          if (it == by_id.end()) {
            throw Error(ErrorCode::kMissingPrerequisite,
                        "retrieved id '" + rid + "' has no pair in the pool");
          }
          accepted = token_f1(it->second->answer, item.answer) >= cfg.f1_threshold;
        }
        trace.outcome = accepted ? Outcome::kTruePositive : Outcome::kFalsePositive;
      }
    }
    count(result, std::move(trace));
  }
  sort_trace(result);
  return result;
}

RetrievalResult evaluate_retrieval(const nn::ModelParams& encoder, const nn::ArchConfig& arch,
                                   const TokenizerModel& tokenizer,
                                   const pipeline::EmbeddingIndex& index,
                                   std::span<const QAPair> pool,
                                   std::span<const QAPair> testset, const EvalConfig& cfg) {
  if (arch.d_model != index.dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "encoder width " + std::to_string(arch.d_model) + " != index dim " +
                    std::to_string(index.dim()));
  }
  std::vector<std::vector<double>> queries;
  queries.reserve(testset.size());
  for (const QAPair& p : testset) {
    queries.push_back(pipeline::embed_text(encoder, arch, tokenizer, p.question));
  }
  return evaluate_retrieval(index, pool, queries, testset, cfg);
}

RetrievalResult evaluate_generation(const pipeline::AnswerContext& ctx,
                                    std::span<const QAPair> testset, std::size_t k,
                                    const EvalConfig& cfg) {
  cfg.validate();
  RetrievalResult result;
  for (const QAPair& item : testset) {
    const std::string generated = pipeline::answer(ctx, item.question, k);
    QueryTrace trace{item.id, std::nullopt, 0.0, Outcome::kAbstained};
    if (!generated.empty()) {
      trace.score = token_f1(generated, item.answer);
      trace.outcome = trace.score >= cfg.f1_threshold ? Outcome::kTruePositive
                                                      : Outcome::kFalsePositive;
    }
    count(result, std::move(trace));
  }
  sort_trace(result);
  return result;
}

double evaluate_perplexity(const nn::ModelParams& decoder, const nn::ArchConfig& arch,
                           std::span<const std::vector<TokenId>> sequences) {
  std::vector<train::Example> examples;
  for (const auto& s : sequences) {
    if (s.size() >= 2) examples.push_back({s, {}});
  }
  if (examples.empty()) {
    throw Error(ErrorCode::kEmptyTestSet, "perplexity needs a sequence of length >= 2");
  }
  return train::heldout_perplexity(decoder, arch, train::Objective::kCausal, examples);
}

std::span<const ReferenceRow> reference_rows() { return kReferenceRows; }

ReportDocument emit_report(const Report& report) {
  if (report.rows.empty()) throw Error(ErrorCode::kNoRows, "report has no rows");

  nlohmann::json rows = nlohmann::json::array();
  for (const ReportRow& r : report.rows) {
    rows.push_back({{"name", r.name},
                    {"precision", optional_json(r.precision)},
                    {"tp", r.tp},
                    {"fp", r.fp},
                    {"abstained", r.abstained},
                    {"perplexity", optional_json(r.perplexity)},
                    {"seed", r.seed},
                    {"config_hash", r.config_hash}});
  }
  nlohmann::json reference = nlohmann::json::array();
  for (const ReferenceRow& r : kReferenceRows) {
    reference.push_back({{"name", r.name}, {"precision", r.precision}, {"label", kReferenceLabel}});
  }
  const nlohmann::json doc = {{"mode", report.mode},
                              {"match_rule", report.match_rule},
                              {"rows", rows},
                              {"reference", reference}};

  std::vector<const ReportRow*> sorted;
  for (const ReportRow& r : report.rows) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const ReportRow* a, const ReportRow* b) {
    if (a->precision && b->precision) return *a->precision > *b->precision;
    return a->precision.has_value() && !b->precision.has_value();
  });

  std::size_t width = std::string_view("Model").size();
  for (const ReportRow* r : sorted) width = std::max(width, r->name.size());
  for (const ReferenceRow& r : kReferenceRows) width = std::max(width, r.name.size());
  const auto line = [&](std::string_view name, std::string_view value) {
    std::string out(name);
    out.append(width - name.size() + 2, ' ');
    out += value;
    out.push_back('\n');
    return out;
  };

  std::string table = "mode: " + report.mode + ", match rule: " + report.match_rule + "\n";
  table += line("Model", "Precision");
  table += std::string(width + 2 + std::string_view("Precision").size(), '-') + "\n";
  for (const ReportRow* r : sorted) table += line(r->name, format_precision(r->precision));
  table += "\nReference (" + std::string(kReferenceLabel) + ")\n";
  for (const ReferenceRow& r : kReferenceRows) {
    table += line(r.name, format_precision(r.precision));
  }
  return {doc.dump(2) + "\n", table};
}

Report parse_report(std::string_view json) {
  try {
    const nlohmann::json doc = nlohmann::json::parse(json);
    Report report;
    report.mode = doc.at("mode").get<std::string>();
    report.match_rule = doc.at("match_rule").get<std::string>();
    for (const nlohmann::json& r : doc.at("rows")) {
      ReportRow row;
      row.name = r.at("name").get<std::string>();
      row.precision = optional_double(r.at("precision"));
      row.tp = r.at("tp").get<std::size_t>();
      row.fp = r.at("fp").get<std::size_t>();
      row.abstained = r.at("abstained").get<std::size_t>();
      row.perplexity = optional_double(r.at("perplexity"));
      row.seed = r.at("seed").get<std::uint64_t>();
      row.config_hash = r.at("config_hash").get<std::string>();
      report.rows.push_back(std::move(row));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("report: ") + e.what());
  }
}

}  // namespace medqa::eval
