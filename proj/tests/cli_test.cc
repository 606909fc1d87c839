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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "medqa/corpus.h"
#include "test_util.h"

namespace medqa::cli {
namespace {

namespace fs = std::filesystem;
using testing::read_text;
using testing::scratch_dir;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "medqa");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

// A ten-pair corpus and a configuration small enough to train in seconds.
fs::path tiny_project(const std::string& name) {
  const fs::path dir = scratch_dir(name);
  const std::string corpus = read_text(fs::path(MEDQA_DATA_DIR) / "toy_corpus.jsonl");
  std::istringstream lines(corpus);
  std::string line;
  std::string first_ten;
  for (int i = 0; i < 10 && std::getline(lines, line); ++i) first_ten += line + "\n";
  write(dir / "corpus.jsonl", first_ten);
  const nlohmann::json cfg = {
      {"seed", 3},
      {"output_dir", "out"},
      {"corpus", {{"path", "corpus.jsonl"}}},
      {"tokenizer", {{"vocab_size", 300}}},
      {"encoder",
       {{"arch", {{"d_model", 8}, {"n_heads", 2}, {"n_layers", 1}, {"d_ff", 8}, {"max_seq_len", 48}}},
        {"train", {{"total_steps", 3}, {"batch_size", 4}}}}},
      {"decoder",
       {{"arch", {{"d_model", 8}, {"n_heads", 2}, {"n_layers", 1}, {"d_ff", 8}, {"max_seq_len", 96}}},
        {"pretrain", {{"total_steps", 3}, {"batch_size", 4}}},
        {"finetune", {{"total_steps", 3}, {"batch_size", 4}, {"subset", 4}}}}},
      {"prompts", {{"k", 1}}},
      {"eval", {{"max_length", 96}}}};
  write(dir / "config.json", cfg.dump(2));
  return dir;
}

std::string config_arg(const fs::path& dir) { return (dir / "config.json").string(); }

TEST(Cli, MissingConfigFileExitsWithUserError) {
  const Outcome o = invoke({"-c", "/nonexistent/medqa.json", "prepare"});
  EXPECT_EQ(o.code, kExitUser);
  EXPECT_NE(o.err.find("/nonexistent/medqa.json"), std::string::npos) << o.err;
}

TEST(Cli, MissingCorpusNamesThePath) {
  const fs::path dir = tiny_project("missing_corpus");
  fs::remove(dir / "corpus.jsonl");
  const Outcome o = invoke({"-c", config_arg(dir), "prepare"});
  EXPECT_EQ(o.code, kExitUser);
  EXPECT_NE(o.err.find((dir / "corpus.jsonl").string()), std::string::npos) << o.err;
}

TEST(Cli, UnknownConfigKeyIsRejected) {
  const fs::path dir = tiny_project("unknown_key");
  const Outcome o = invoke({"-c", config_arg(dir), "--set", "encoder.train.learning_rate=0.1",
                            "prepare"});
  EXPECT_EQ(o.code, kExitUser);
  EXPECT_NE(o.err.find("learning_rate"), std::string::npos) << o.err;
}

TEST(Cli, UnknownSubcommandOrStageIsAUsageError) {
  const fs::path dir = tiny_project("usage");
  EXPECT_NE(invoke({"-c", config_arg(dir), "frobnicate"}).code, kExitOk);
  EXPECT_EQ(invoke({"-c", config_arg(dir), "train", "--stage", "nope"}).code, kExitUser);
}

TEST(Cli, TenPairsSplitEightOneOne) {
  const fs::path dir = tiny_project("split");
  const Outcome o = invoke({"-c", config_arg(dir), "prepare"});
  ASSERT_EQ(o.code, kExitOk) << o.err;
  EXPECT_EQ(read_jsonl(read_text(dir / "out" / "train.jsonl")).size(), 8u);
  EXPECT_EQ(read_jsonl(read_text(dir / "out" / "val.jsonl")).size(), 1u);
  EXPECT_EQ(read_jsonl(read_text(dir / "out" / "test.jsonl")).size(), 1u);
  const auto stats = nlohmann::json::parse(read_text(dir / "out" / "stats.json"));
  EXPECT_EQ(stats["splits"]["train"], 8);
}

TEST(Cli, StageBeforeItsPrerequisiteFails) {
  const fs::path dir = tiny_project("prereq");
  ASSERT_EQ(invoke({"-c", config_arg(dir), "prepare"}).code, kExitOk);
  const Outcome o = invoke({"-c", config_arg(dir), "train", "--stage", "prompts"});
  EXPECT_EQ(o.code, kExitUser);
  EXPECT_NE(o.err.find("MissingPrerequisite"), std::string::npos) << o.err;
}

TEST(Cli, SetOverrideAndSeedEnvironment) {
  const fs::path dir = tiny_project("overrides");
  ::unsetenv("MEDQA_SEED");
  RunConfig cfg = load_config(dir / "config.json", {"encoder.train.total_steps=7"});
  EXPECT_EQ(cfg.encoder.train.total_steps, 7u);
  EXPECT_EQ(cfg.seed, 3u);
  ::setenv("MEDQA_SEED", "41", 1);
  cfg = load_config(dir / "config.json", {"seed=5"});
  EXPECT_EQ(cfg.seed, 41u);
  ::setenv("MEDQA_SEED", "x", 1);
  EXPECT_ERROR_CODE(load_config(dir / "config.json", {}), ErrorCode::kInvalidConfig);
  ::unsetenv("MEDQA_SEED");
  EXPECT_NE(load_config(dir / "config.json", {"seed=5"}).hash(),
            load_config(dir / "config.json", {}).hash());
  EXPECT_EQ(load_config(dir / "config.json", {"output_dir=elsewhere"}).hash(),
            load_config(dir / "config.json", {}).hash());
}

TEST(Cli, NoOverwriteSkipsCompletedCommands) {
  const fs::path dir = tiny_project("no_overwrite");
  ASSERT_EQ(invoke({"-c", config_arg(dir), "prepare"}).code, kExitOk);
  write(dir / "out" / "stats.json", "sentinel");
  ASSERT_EQ(invoke({"-c", config_arg(dir), "--no-overwrite", "prepare"}).code, kExitOk);
  EXPECT_EQ(read_text(dir / "out" / "stats.json"), "sentinel");
  ASSERT_EQ(invoke({"-c", config_arg(dir), "prepare"}).code, kExitOk);
  EXPECT_NE(read_text(dir / "out" / "stats.json"), "sentinel");
}

TEST(Cli, FullPipelineProducesReports) {
  const fs::path dir = tiny_project("full");
  const std::string c = config_arg(dir);
  ASSERT_EQ(invoke({"-c", c, "prepare"}).code, kExitOk);
  for (const char* stage : {"tokenizer", "encoder", "decoder", "prompts", "finetune"}) {
    const Outcome o = invoke({"-c", c, "train", "--stage", stage});
    ASSERT_EQ(o.code, kExitOk) << stage << ": " << o.err;
  }
  for (const char* mode : {"retrieval", "generation"}) {
    const Outcome o = invoke({"-c", c, "eval", "--mode", mode});
    ASSERT_EQ(o.code, kExitOk) << mode << ": " << o.err;
  }
  const auto gen = nlohmann::json::parse(read_text(dir / "out" / "report_generation.json"));
  EXPECT_EQ(gen["match_rule"], "token_f1");
  const auto ret = nlohmann::json::parse(read_text(dir / "out" / "report_retrieval.json"));
  EXPECT_EQ(ret["match_rule"], "exact_id");
  ASSERT_EQ(invoke({"-c", c, "report"}).code, kExitOk);
  const std::string table = read_text(dir / "out" / "report.txt");
  EXPECT_NE(table.find("paper-reported, not reproduced"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "out" / "trace_retrieval.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "out" / "decoder_summary.json"));

  // A retrained upstream artifact invalidates everything built on it.
  ASSERT_EQ(invoke({"-c", c, "--set", "encoder.train.total_steps=4", "train", "--stage",
                    "encoder"}).code,
            kExitOk);
  const Outcome stale = invoke({"-c", c, "eval", "--mode", "retrieval"});
  EXPECT_EQ(stale.code, kExitUser);
  EXPECT_NE(stale.err.find("InvalidConfig"), std::string::npos) << stale.err;
}

}  // namespace
}  // namespace medqa::cli
