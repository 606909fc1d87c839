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

#include "cli/commands.h"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "medqa/augment.h"
#include "medqa/error.h"
#include "medqa/eval.h"
#include "medqa/hash.h"
#include "medqa/pipeline.h"
#include "medqa/random.h"
#include "medqa/tokenizer.h"

namespace medqa::cli {
namespace fs = std::filesystem;
namespace {

constexpr std::uint64_t kSynonymStream = 201;
constexpr std::uint64_t kBalanceStream = 202;
constexpr std::uint64_t kSplitStream = 203;
constexpr std::uint64_t kEncoderInitStream = 301;
constexpr std::uint64_t kDecoderInitStream = 302;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string read_artifact(const fs::path& path, Stage producer) {
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kMissingPrerequisite,
                path.string() + " does not exist; run `medqa train --stage " +
                    std::string(stage_name(producer)) + "` first");
  }
  return read_file(path);
}

std::string read_split(const fs::path& path) {
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kMissingPrerequisite,
                path.string() + " does not exist; run `medqa prepare` first");
  }
  return read_file(path);
}

void write_file(const fs::path& path, std::string_view bytes) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string content_hash(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

// True when --no-overwrite is set and every output already exists.
bool skip_stage(const Context& ctx, std::string_view name, const std::vector<fs::path>& outputs) {
  if (!ctx.no_overwrite) return false;
  for (const fs::path& p : outputs) {
    if (!fs::exists(p)) return false;
  }
  if (ctx.out) *ctx.out << name << ": outputs exist, skipped\n";
  return true;
}

void say(const Context& ctx, const std::string& line) {
  if (ctx.out) *ctx.out << line << '\n';
}

nlohmann::json stats_json(const CorpusStats& s) {
  return {{"total", s.total},
          {"dropped_incomplete", s.dropped_incomplete},
          {"dropped_duplicate", s.dropped_duplicate},
          {"per_qtype", s.per_qtype}};
}

struct Paths {
  fs::path dir;
  fs::path train() const { return dir / "train.jsonl"; }
  fs::path val() const { return dir / "val.jsonl"; }
  fs::path test() const { return dir / "test.jsonl"; }
  fs::path stats() const { return dir / "stats.json"; }
  fs::path tokenizer() const { return dir / "tokenizer.json"; }
  fs::path encoder() const { return dir / "encoder.ckpt"; }
  fs::path decoder() const { return dir / "decoder.ckpt"; }
  fs::path index() const { return dir / "index.bin"; }
  fs::path prompts() const { return dir / "prompts.jsonl"; }
  fs::path finetuned() const { return dir / "finetuned.ckpt"; }
  fs::path log(std::string_view stage) const { return dir / (std::string(stage) + "_log.jsonl"); }
  fs::path summary(std::string_view stage) const {
    return dir / (std::string(stage) + "_summary.json");
  }
};

struct LoadedTokenizer {
  TokenizerModel model;
  std::string hash;
};

LoadedTokenizer load_tokenizer_artifact(const Paths& paths) {
  const std::string bytes = read_artifact(paths.tokenizer(), Stage::kTokenizer);
  return {load_tokenizer(bytes), content_hash(bytes)};
}

struct LoadedCheckpoint {
  nn::Checkpoint ckpt;
  std::string hash;
};

LoadedCheckpoint load_checkpoint_artifact(const fs::path& path, Stage producer) {
  const std::string bytes = read_artifact(path, producer);
  return {nn::load_checkpoint(bytes), content_hash(bytes)};
}

void require_hash(const nlohmann::json& meta, const std::string& key, const std::string& actual,
                  const fs::path& artifact) {
  const std::string recorded = meta.value(key, std::string());
  if (recorded != actual) {
    throw Error(ErrorCode::kInvalidConfig,
                artifact.string() + " was built against a different " +
                    key.substr(0, key.rfind('_')) + " (recorded " + recorded + ", found " +
                    actual + "); rerun the stages after it");
  }
}

std::vector<TokenId> bounded_template(const TokenizerModel& tok, const QAPair& p,
                                      std::size_t max_len) {
  std::vector<TokenId> ids = encode(tok, format_template(p), true);
  if (ids.size() > max_len) ids.resize(max_len);
  return ids;
}

void write_training_outputs(const Paths& paths, std::string_view stage,
                            const train::TrainLog& log, nlohmann::json summary) {
  write_file(paths.log(stage), log.to_jsonl());
  nlohmann::json s = log.summary();
  s.update(summary);
  write_file(paths.summary(stage), s.dump(2) + "\n");
}

train::FitOptions checkpoint_options(const Paths& paths, std::string_view stage,
                                     const nn::ArchConfig& arch, const nlohmann::json& meta,
                                     std::size_t total_steps) {
  train::FitOptions options;
  options.on_checkpoint = [=](std::size_t step, const nn::ModelParams& params) {
    if (step == total_steps) return;  // the final checkpoint is the stage artifact
    nlohmann::json m = meta;
    m["step"] = step;
    write_file(paths.dir / (std::string(stage) + ".step" + std::to_string(step) + ".ckpt"),
               nn::save_checkpoint(params, arch, m));
  };
  return options;
}

void train_tokenizer_stage(const RunConfig& cfg, const Paths& paths, const Context& ctx) {
  if (skip_stage(ctx, "train tokenizer", {paths.tokenizer()})) return;
  const std::vector<QAPair> train = read_jsonl(read_split(paths.train()));
  Corpus corpus{train, {}};
  TokenizerModel model = train_tokenizer(corpus, cfg.vocab_size, cfg.seed);
  model.config_hash = cfg.hash();
  write_file(paths.tokenizer(), save_tokenizer(model));
  say(ctx, "train tokenizer: " + std::to_string(model.vocab_size()) + " symbols -> " +
               paths.tokenizer().string());
}

void train_encoder_stage(const RunConfig& cfg, const Paths& paths, const Context& ctx) {
  if (skip_stage(ctx, "train encoder", {paths.encoder()})) return;
  const LoadedTokenizer tok = load_tokenizer_artifact(paths);
  const std::vector<QAPair> train = read_jsonl(read_split(paths.train()));
  nn::ArchConfig arch = cfg.encoder.arch;
  arch.vocab_size = tok.model.vocab_size();
  const nlohmann::json meta = {{"stage", "encoder"},
                               {"config_hash", cfg.hash()},
                               {"tokenizer_hash", tok.hash},
                               {"seed", cfg.seed}};
  auto options = checkpoint_options(paths, "encoder", arch, meta, cfg.encoder.train.total_steps);
  auto result = pipeline::pretrain_encoder(
      nn::ModelParams::initialize(arch, derive_seed(cfg.seed, kEncoderInitStream)), arch,
      tok.model, train, cfg.encoder.train, options);
  write_file(paths.encoder(), nn::save_checkpoint(result.params, arch, meta));
  write_training_outputs(paths, "encoder", result.log, {{"config_hash", cfg.hash()}});
  say(ctx, "train encoder: " + std::to_string(result.log.steps.size()) + " steps -> " +
               paths.encoder().string());
}

void train_decoder_stage(const RunConfig& cfg, const Paths& paths, const Context& ctx) {
  if (skip_stage(ctx, "train decoder", {paths.decoder()})) return;
  const LoadedTokenizer tok = load_tokenizer_artifact(paths);
  const std::vector<QAPair> train = read_jsonl(read_split(paths.train()));
  const std::vector<QAPair> val = read_jsonl(read_split(paths.val()));
  nn::ArchConfig arch = cfg.decoder.arch;
  arch.vocab_size = tok.model.vocab_size();
  const nlohmann::json meta = {{"stage", "decoder"},
                               {"config_hash", cfg.hash()},
                               {"tokenizer_hash", tok.hash},
                               {"seed", cfg.seed}};
  const auto heldout = pipeline::template_examples(tok.model, val);
  auto options = checkpoint_options(paths, "decoder", arch, meta, cfg.decoder.train.total_steps);
  options.heldout = heldout;
  auto result = pipeline::pretrain_decoder(
      nn::ModelParams::initialize(arch, derive_seed(cfg.seed, kDecoderInitStream)), arch,
      tok.model, train, cfg.decoder.train, options);
  write_file(paths.decoder(), nn::save_checkpoint(result.params, arch, meta));
  nlohmann::json extra = {{"config_hash", cfg.hash()}};
  if (result.log.epochs.size() >= 2) {
    const double before = result.log.epochs.front().heldout_perplexity;
    const double after = result.log.epochs.back().heldout_perplexity;
    extra["heldout_perplexity_initial"] = before;
    extra["heldout_perplexity_final"] = after;
    extra["heldout_perplexity_reduction"] = 1.0 - after / before;
  }
  write_training_outputs(paths, "decoder", result.log, extra);
  say(ctx, "train decoder: " + std::to_string(result.log.steps.size()) + " steps -> " +
               paths.decoder().string());
}

void train_prompts_stage(const RunConfig& cfg, const Paths& paths, const Context& ctx) {
  if (skip_stage(ctx, "train prompts", {paths.index(), paths.prompts()})) return;
  const LoadedTokenizer tok = load_tokenizer_artifact(paths);
  const LoadedCheckpoint enc = load_checkpoint_artifact(paths.encoder(), Stage::kEncoder);
  require_hash(enc.ckpt.metadata, "tokenizer_hash", tok.hash, paths.encoder());
  const std::vector<QAPair> train = read_jsonl(read_split(paths.train()));
  const pipeline::EmbeddingIndex index =
      pipeline::build_index(enc.ckpt.params, enc.ckpt.arch, tok.model, train);
  const auto prompts = pipeline::generate_prompts(index, train, cfg.prompt_k);
  write_file(paths.index(), index.save({{"config_hash", cfg.hash()},
                                        {"encoder_hash", enc.hash},
                                        {"tokenizer_hash", tok.hash}}));
  write_file(paths.prompts(), pipeline::write_prompts_jsonl(prompts));
  say(ctx, "train prompts: " + std::to_string(prompts.size()) + " prompts -> " +
               paths.prompts().string());
}

void train_finetune_stage(const RunConfig& cfg, const Paths& paths, const Context& ctx) {
  if (skip_stage(ctx, "train finetune", {paths.finetuned()})) return;
  const LoadedTokenizer tok = load_tokenizer_artifact(paths);
  const LoadedCheckpoint dec = load_checkpoint_artifact(paths.decoder(), Stage::kDecoder);
  require_hash(dec.ckpt.metadata, "tokenizer_hash", tok.hash, paths.decoder());
  const std::string prompt_bytes = read_artifact(paths.prompts(), Stage::kPrompts);
  std::vector<pipeline::PromptRecord> prompts = pipeline::read_prompts_jsonl(prompt_bytes);
  if (cfg.finetune_subset > 0 && prompts.size() > cfg.finetune_subset) {
    prompts.resize(cfg.finetune_subset);
  }
  const nlohmann::json meta = {{"stage", "finetune"},
                               {"config_hash", cfg.hash()},
                               {"tokenizer_hash", tok.hash},
                               {"decoder_hash", dec.hash},
                               {"prompts_hash", content_hash(prompt_bytes)},
                               {"seed", cfg.seed}};
  auto options = checkpoint_options(paths, "finetune", dec.ckpt.arch, meta,
                                    cfg.finetune.total_steps);
  auto result = pipeline::finetune_decoder(dec.ckpt.params, dec.ckpt.arch, tok.model, prompts,
                                           cfg.finetune, options);
  write_file(paths.finetuned(), nn::save_checkpoint(result.params, dec.ckpt.arch, meta));
  write_training_outputs(paths, "finetune", result.log,
                         {{"config_hash", cfg.hash()}, {"prompts", prompts.size()}});
  say(ctx, "train finetune: " + std::to_string(result.log.steps.size()) + " steps on " +
               std::to_string(prompts.size()) + " prompts -> " + paths.finetuned().string());
}

std::string trace_jsonl(const eval::RetrievalResult& r) {
  std::string out;
  for (const eval::QueryTrace& t : r.trace) {
    nlohmann::json j = {{"question_id", t.question_id},
                        {"retrieved_id", t.retrieved_id ? nlohmann::json(*t.retrieved_id)
                                                        : nlohmann::json(nullptr)},
                        {"score", t.score},
                        {"outcome", eval::outcome_name(t.outcome)}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::kTokenizer: return "tokenizer";
    case Stage::kEncoder: return "encoder";
    case Stage::kDecoder: return "decoder";
    case Stage::kPrompts: return "prompts";
    case Stage::kFinetune: return "finetune";
  }
  return "tokenizer";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : {Stage::kTokenizer, Stage::kEncoder, Stage::kDecoder, Stage::kPrompts,
                  Stage::kFinetune}) {
    if (stage_name(s) == name) return s;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown stage: " + std::string(name));
}

RunConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc;
  const std::string text = read_file(path);
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, path.string() + ": " + e.what());
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  if (const char* seed = std::getenv("MEDQA_SEED"); seed != nullptr && *seed != '\0') {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(seed, &used);
      if (used != std::string_view(seed).size()) throw std::invalid_argument("trailing text");
      doc["seed"] = static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidConfig,
                  "MEDQA_SEED must be an unsigned integer, got '" + std::string(seed) + "'");
    }
  }
  return parse_run_config(doc, path.parent_path());
}

void cmd_prepare(const RunConfig& cfg, const Context& ctx) {
  const Paths paths{cfg.output_dir};
  if (skip_stage(ctx, "prepare", {paths.train(), paths.val(), paths.test(), paths.stats()})) {
    return;
  }
  const Corpus parsed =
      parse_corpus(read_file(cfg.corpus.path), cfg.corpus.format, {cfg.corpus.strict});
  const Corpus cleaned = clean(parsed);

  SynonymLexicon lexicon;
  if (!cfg.augment.lexicon.empty()) lexicon = SynonymLexicon::from_json(read_file(cfg.augment.lexicon));

  Corpus augmented = cleaned;
  const auto differs = [](const QAPair& a, const QAPair& b) {
    return a.question != b.question || a.answer != b.answer;
  };
  if (cfg.augment.synonym) {
    const std::uint64_t base = derive_seed(cfg.seed, kSynonymStream);
    for (std::size_t i = 0; i < cleaned.pairs.size(); ++i) {
      QAPair s = synonym_replace(cleaned.pairs[i], lexicon, cfg.augment.synonym_rate,
                                 derive_seed(base, i));
      if (differs(s, cleaned.pairs[i])) augmented.pairs.push_back(std::move(s));
    }
  }
  if (cfg.augment.back_translation) {
    const auto pivot = DictionaryPivotTranslator::from_json(read_file(cfg.augment.pivot));
    for (const QAPair& p : cleaned.pairs) {
      QAPair b = back_translate(p, pivot);
      if (differs(b, p)) augmented.pairs.push_back(std::move(b));
    }
  }
  if (cfg.augment.balance) {
    augmented = balance_by_duplication(augmented, lexicon, cfg.augment.synonym_rate,
                                       derive_seed(cfg.seed, kBalanceStream));
  }
  augmented = clean(augmented);

  // Split whole root-id groups so augmented copies stay with their parent.
  std::vector<std::string> roots;
  std::map<std::string, std::size_t> group_of;
  for (const QAPair& p : augmented.pairs) {
    const std::string root(pipeline::root_id(p.id));
    if (group_of.emplace(root, roots.size()).second) roots.push_back(root);
  }
  std::vector<std::size_t> order(roots.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, kSplitStream));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t g = roots.size();
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.corpus.split.val * static_cast<double>(g)));
  const auto n_test = std::min(
      g - std::min(g, n_val),
      static_cast<std::size_t>(std::llround(cfg.corpus.split.test * static_cast<double>(g))));
  const std::size_t n_train = g - std::min(g, n_val) - n_test;
  std::vector<int> split_of(g);
  for (std::size_t rank = 0; rank < g; ++rank) {
    split_of[order[rank]] = rank < n_train ? 0 : (rank < n_train + n_val ? 1 : 2);
  }
  std::vector<QAPair> splits[3];
  for (const QAPair& p : augmented.pairs) {
    splits[split_of[group_of.at(std::string(pipeline::root_id(p.id)))]].push_back(p);
  }

  std::map<std::string, std::size_t> per_provenance;
  for (const QAPair& p : augmented.pairs) ++per_provenance[std::string(provenance_name(p.provenance))];
  const nlohmann::json stats = {
      {"config_hash", cfg.hash()},
      {"parse", stats_json(cleaned.stats)},
      {"augmented", {{"pairs", augmented.pairs.size()},
                     {"dropped_duplicate", augmented.stats.dropped_duplicate},
                     {"per_provenance", per_provenance},
                     {"per_qtype", augmented.stats.per_qtype}}},
      {"splits", {{"train", splits[0].size()}, {"val", splits[1].size()}, {"test", splits[2].size()}}}};
  write_file(paths.train(), write_jsonl(splits[0]));
  write_file(paths.val(), write_jsonl(splits[1]));
  write_file(paths.test(), write_jsonl(splits[2]));
  write_file(paths.stats(), stats.dump(2) + "\n");
  say(ctx, "prepare: " + std::to_string(splits[0].size()) + "/" +
               std::to_string(splits[1].size()) + "/" + std::to_string(splits[2].size()) +
               " train/val/test pairs -> " + cfg.output_dir.string());
}

void cmd_train(const RunConfig& cfg, Stage stage, const Context& ctx) {
  const Paths paths{cfg.output_dir};
  switch (stage) {
    case Stage::kTokenizer: return train_tokenizer_stage(cfg, paths, ctx);
    case Stage::kEncoder: return train_encoder_stage(cfg, paths, ctx);
    case Stage::kDecoder: return train_decoder_stage(cfg, paths, ctx);
    case Stage::kPrompts: return train_prompts_stage(cfg, paths, ctx);
    case Stage::kFinetune: return train_finetune_stage(cfg, paths, ctx);
  }
}

void cmd_eval(const RunConfig& cfg, EvalMode mode, const Context& ctx) {
  const Paths paths{cfg.output_dir};
  const std::string name = mode == EvalMode::kRetrieval ? "retrieval" : "generation";
  const fs::path json_path = paths.dir / ("report_" + name + ".json");
  const fs::path text_path = paths.dir / ("report_" + name + ".txt");
  const fs::path trace_path = paths.dir / ("trace_" + name + ".jsonl");
  if (skip_stage(ctx, "eval " + name, {json_path, text_path, trace_path})) return;

  const LoadedTokenizer tok = load_tokenizer_artifact(paths);
  const LoadedCheckpoint enc = load_checkpoint_artifact(paths.encoder(), Stage::kEncoder);
  require_hash(enc.ckpt.metadata, "tokenizer_hash", tok.hash, paths.encoder());
  nlohmann::json index_meta;
  const auto index = pipeline::EmbeddingIndex::load(
      read_artifact(paths.index(), Stage::kPrompts), &index_meta);
  require_hash(index_meta, "encoder_hash", enc.hash, paths.index());
  const std::vector<QAPair> pool = read_jsonl(read_split(paths.train()));
  const std::vector<QAPair> test = read_jsonl(read_split(paths.test()));

  const bool generation = mode == EvalMode::kGeneration;
  const LoadedCheckpoint dec = generation
                                   ? load_checkpoint_artifact(paths.finetuned(), Stage::kFinetune)
                                   : load_checkpoint_artifact(paths.decoder(), Stage::kDecoder);
  require_hash(dec.ckpt.metadata, "tokenizer_hash", tok.hash,
               generation ? paths.finetuned() : paths.decoder());

  eval::EvalConfig ecfg = cfg.eval;
  eval::RetrievalResult result;
  if (generation) {
    ecfg.match_rule = eval::MatchRule::kTokenF1;
    const pipeline::AnswerContext actx{enc.ckpt.params, enc.ckpt.arch, dec.ckpt.params,
                                       dec.ckpt.arch,   tok.model,     index,
                                       pool};
    result = eval::evaluate_generation(actx, test, cfg.prompt_k, ecfg);
  } else {
    result = eval::evaluate_retrieval(enc.ckpt.params, enc.ckpt.arch, tok.model, index, pool,
                                      test, ecfg);
  }

  std::vector<std::vector<TokenId>> sequences;
  for (const QAPair& p : test) {
    sequences.push_back(bounded_template(tok.model, p, dec.ckpt.arch.max_seq_len));
  }
  std::optional<double> ppl;
  if (!sequences.empty()) ppl = eval::evaluate_perplexity(dec.ckpt.params, dec.ckpt.arch, sequences);

  eval::Report report;
  report.mode = name;
  report.match_rule = std::string(eval::match_rule_name(ecfg.match_rule));
  report.rows.push_back({generation ? "encoder retrieval + fine-tuned decoder"
                                    : "encoder retrieval (top-1)",
                         eval::precision(result.tp, result.fp), result.tp, result.fp,
                         result.abstained, ppl, cfg.seed, cfg.hash()});
  const eval::ReportDocument doc = eval::emit_report(report);
  write_file(json_path, doc.json);
  write_file(text_path, doc.table);
  write_file(trace_path, trace_jsonl(result));
  if (ctx.out) *ctx.out << doc.table;
}

void cmd_report(const RunConfig& cfg, const std::vector<fs::path>& inputs, const Context& ctx) {
  const Paths paths{cfg.output_dir};
  std::vector<fs::path> files = inputs;
  if (files.empty()) {
    for (const char* mode : {"retrieval", "generation"}) {
      const fs::path p = paths.dir / ("report_" + std::string(mode) + ".json");
      if (fs::exists(p)) files.push_back(p);
    }
  }
  if (files.empty()) {
    throw Error(ErrorCode::kMissingPrerequisite,
                "no report files in " + paths.dir.string() + "; run `medqa eval` first");
  }
  eval::Report merged;
  std::vector<std::string> modes;
  std::vector<std::string> rules;
  for (const fs::path& f : files) {
    const eval::Report r = eval::parse_report(read_file(f));
    modes.push_back(r.mode);
    rules.push_back(r.match_rule);
    for (eval::ReportRow row : r.rows) {
      row.name = r.mode + ": " + row.name;
      merged.rows.push_back(std::move(row));
    }
  }
  const auto join = [](const std::vector<std::string>& v) {
    std::string out;
    for (const std::string& s : v) out += (out.empty() ? "" : "+") + s;
    return out;
  };
  merged.mode = join(modes);
  merged.match_rule = join(rules);
  const eval::ReportDocument doc = eval::emit_report(merged);
  if (skip_stage(ctx, "report", {paths.dir / "report.json", paths.dir / "report.txt"})) return;
  write_file(paths.dir / "report.json", doc.json);
  write_file(paths.dir / "report.txt", doc.table);
  if (ctx.out) *ctx.out << doc.table;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Medical question answering pipeline: prepare, train, eval, report"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::vector<std::string> overrides;
  bool no_overwrite = false;
  app.add_option("-c,--config", config_path, "JSON run configuration")->required();
  app.add_option("--set", overrides, "Override a config key, e.g. --set decoder.pretrain.total_steps=50");
  app.add_flag("--no-overwrite", no_overwrite, "Skip commands whose outputs already exist");

  CLI::App* prepare = app.add_subcommand("prepare", "Parse, clean, augment and split the corpus");
  CLI::App* train = app.add_subcommand("train", "Run one training stage");
  std::string stage;
  train->add_option("--stage", stage, "tokenizer | encoder | decoder | prompts | finetune")
      ->required()
      ->check(CLI::IsMember({"tokenizer", "encoder", "decoder", "prompts", "finetune"}));
  CLI::App* evaluate = app.add_subcommand("eval", "Score the trained artifacts on the test split");
  std::string mode;
  evaluate->add_option("--mode", mode, "retrieval | generation")
      ->required()
      ->check(CLI::IsMember({"retrieval", "generation"}));
  CLI::App* report = app.add_subcommand("report", "Merge report files into one table");
  std::vector<std::string> report_inputs;
  report->add_option("inputs", report_inputs, "Report JSON files (default: all in output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUser;
  }

  std::string command = "config";
  try {
    const RunConfig cfg = load_config(config_path, overrides);
    const Context ctx{no_overwrite, &out};
    if (prepare->parsed()) {
      command = "prepare";
      cmd_prepare(cfg, ctx);
    } else if (train->parsed()) {
      command = "train " + stage;
      cmd_train(cfg, parse_stage(stage), ctx);
    } else if (evaluate->parsed()) {
      command = "eval " + mode;
      cmd_eval(cfg, mode == "retrieval" ? EvalMode::kRetrieval : EvalMode::kGeneration, ctx);
    } else {
      command = "report";
      cmd_report(cfg, std::vector<fs::path>(report_inputs.begin(), report_inputs.end()), ctx);
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "medqa: " << command << ": " << e.what() << '\n';
    switch (e.code()) {
      case ErrorCode::kInvalidConfig:
      case ErrorCode::kMissingPrerequisite:
      case ErrorCode::kIo:
      case ErrorCode::kFormat:
      case ErrorCode::kMalformedRecord:
      case ErrorCode::kInvalidUtf8:
      case ErrorCode::kMissingLabel:
      case ErrorCode::kVocabTooSmall:
        return kExitUser;
      default:
        return kExitInternal;
    }
  } catch (const std::exception& e) {
    err << "medqa: " << command << ": internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace medqa::cli
