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

#ifndef MEDQA_CLI_CONFIG_H_
#define MEDQA_CLI_CONFIG_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "medqa/corpus.h"
#include "medqa/eval.h"
#include "medqa/nn.h"
#include "medqa/train.h"

namespace medqa::cli {

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct CorpusConfig {
  std::filesystem::path path;
  CorpusFormat format = CorpusFormat::kJsonLines;
  bool strict = true;
  SplitRatios split;
};

struct AugmentConfig {
  bool synonym = false;
  std::filesystem::path lexicon;
  double synonym_rate = 0.15;
  bool back_translation = false;
  std::filesystem::path pivot;
  bool balance = false;
};

// Per-stage architecture and optimizer settings. vocab_size always comes from
// the trained tokenizer; per-stage seeds derive from the global seed.
struct ModelConfig {
  nn::ArchConfig arch;
  train::TrainConfig train;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  CorpusConfig corpus;
  AugmentConfig augment;
  std::size_t vocab_size = kDefaultVocabSize;
  ModelConfig encoder;
  ModelConfig decoder;
  train::TrainConfig finetune;
  // Fine-tune on the first N prompts only (0 = all).
  std::size_t finetune_subset = 0;
  std::size_t prompt_k = 1;
  eval::EvalConfig eval;
  std::size_t max_length = nn::kDefaultMaxLength;

  // Canonical form of the document that produced this config.
  nlohmann::json canonical;
  // Hash of the canonical form without output_dir.
  std::string hash() const;
};

// Sets the dotted key in `doc` to `value`, parsed as JSON when it is valid
// JSON and taken as a string otherwise. Throws InvalidConfig.
void apply_override(nlohmann::json& doc, std::string_view assignment);

// Validates every section and rejects unknown keys. Relative paths resolve
// against base_dir. Throws InvalidConfig.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

}  // namespace medqa::cli

#endif  // MEDQA_CLI_CONFIG_H_
