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

#ifndef MEDQA_CLI_COMMANDS_H_
#define MEDQA_CLI_COMMANDS_H_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "cli/config.h"

namespace medqa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUser = 2;

enum class Stage { kTokenizer, kEncoder, kDecoder, kPrompts, kFinetune };
enum class EvalMode { kRetrieval, kGeneration };

std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view name);

struct Context {
  bool no_overwrite = false;
  std::ostream* out = nullptr;
};

// Reads the JSON config, applies --set overrides and then MEDQA_SEED.
RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides);

void cmd_prepare(const RunConfig& cfg, const Context& ctx);
void cmd_train(const RunConfig& cfg, Stage stage, const Context& ctx);
void cmd_eval(const RunConfig& cfg, EvalMode mode, const Context& ctx);
// Merges report JSON files (default: every report_*.json present) into
// report.json and report.txt.
void cmd_report(const RunConfig& cfg, const std::vector<std::filesystem::path>& inputs,
                const Context& ctx);

// Full command line. Returns kExitOk, kExitInternal or kExitUser.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace medqa::cli

#endif  // MEDQA_CLI_COMMANDS_H_
