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

#include "cli/config.h"

#include <cmath>
#include <set>

#include "medqa/error.h"
#include "medqa/hash.h"
#include "medqa/random.h"

namespace medqa::cli {
namespace {

[[noreturn]] void fail(const std::string& message) {
  throw Error(ErrorCode::kInvalidConfig, message);
}

// Reads keys from one JSON object, records the effective value of each in
// `out`, and rejects keys it was never asked for.
class Section {
 public:
  Section(const nlohmann::json& doc, std::string path) : path_(std::move(path)) {
    if (!doc.is_object()) fail(label() + " must be an object");
    doc_ = &doc;
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    T value = fallback;
    if (doc_->contains(key)) {
      try {
        value = (*doc_)[key].get<T>();
      } catch (const nlohmann::json::exception&) {
        fail(label(key) + " has the wrong type");
      }
    }
    out_[key] = value;
    return value;
  }

  template <typename T>
  T require(const std::string& key) {
    if (!doc_->contains(key)) fail(label(key) + " is required");
    return get<T>(key, T{});
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const nlohmann::json kEmpty = nlohmann::json::object();
    return Section(doc_->contains(key) ? (*doc_)[key] : kEmpty, label(key));
  }

  void adopt(const std::string& key, Section& child) {
    child.finish();
    out_[key] = child.out_;
  }

  void finish() const {
    for (const auto& [key, value] : doc_->items()) {
      if (!seen_.count(key)) fail("unknown key " + label(key));
    }
  }

  const nlohmann::json& out() const { return out_; }

 private:
  std::string label(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : "'" + path_ + "'";
    return "'" + (path_.empty() ? key : path_ + "." + key) + "'";
  }

  const nlohmann::json* doc_;
  std::string path_;
  std::set<std::string> seen_;
  nlohmann::json out_ = nlohmann::json::object();
};

nn::ArchConfig read_arch(Section& s) {
  nn::ArchConfig a;
  a.d_model = s.get<std::size_t>("d_model", a.d_model);
  a.n_heads = s.get<std::size_t>("n_heads", a.n_heads);
  a.n_layers = s.get<std::size_t>("n_layers", a.n_layers);
  a.d_ff = s.get<std::size_t>("d_ff", a.d_ff);
  a.max_seq_len = s.get<std::size_t>("max_seq_len", a.max_seq_len);
  return a;
}

train::TrainConfig read_train(Section& s) {
  train::TrainConfig t;
  t.init_lr = s.get<double>("init_lr", t.init_lr);
  t.total_steps = s.get<std::size_t>("total_steps", t.total_steps);
  t.warmup_steps = s.get<std::size_t>("warmup_steps", t.warmup_steps);
  t.schedule = train::parse_schedule(
      s.get<std::string>("schedule", std::string(train::schedule_name(t.schedule))));
  t.clip_c = s.get<double>("clip_c", t.clip_c);
  t.batch_size = s.get<std::size_t>("batch_size", t.batch_size);
  t.keep_prob = s.get<double>("keep_prob", t.keep_prob);
  t.weight_decay = s.get<double>("weight_decay", t.weight_decay);
  t.momentum = s.get<double>("momentum", t.momentum);
  t.mask_rate = s.get<double>("mask_rate", t.mask_rate);
  t.checkpoint_interval = s.get<std::size_t>("checkpoint_interval", t.checkpoint_interval);
  return t;
}

nlohmann::json* walk(nlohmann::json& doc, std::string_view path) {
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = path.find('.', start);
    const std::string key(path.substr(start, dot - start));
    if (key.empty()) fail("empty component in override key '" + std::string(path) + "'");
    if (!node->is_object()) fail("override key '" + std::string(path) + "' crosses a value");
    node = &(*node)[key];
    if (dot == std::string_view::npos) return node;
    start = dot + 1;
  }
}

}  // namespace

std::string RunConfig::hash() const {
  // Where artifacts are written does not affect their content.
  nlohmann::json hashed = canonical;
  hashed.erase("output_dir");
  return hex64(fnv1a64(hashed.dump()));
}

void apply_override(nlohmann::json& doc, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    fail("override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string_view value = assignment.substr(eq + 1);
  nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = std::string(value);
  *walk(doc, assignment.substr(0, eq)) = std::move(parsed);
}

RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };

  RunConfig cfg;
  Section root(doc, "");
  cfg.seed = root.get<std::uint64_t>("seed", 0);
  cfg.output_dir = resolve(root.require<std::string>("output_dir"));

  {
    Section s = root.child("corpus");
    cfg.corpus.path = resolve(s.require<std::string>("path"));
    const auto format = s.get<std::string>("format", "jsonl");
    if (format == "jsonl") {
      cfg.corpus.format = CorpusFormat::kJsonLines;
    } else if (format == "csv") {
      cfg.corpus.format = CorpusFormat::kCsv;
    } else {
      fail("'corpus.format' must be jsonl or csv");
    }
    cfg.corpus.strict = s.get<bool>("strict", true);
    Section split = s.child("split");
    cfg.corpus.split.train = split.get<double>("train", 0.8);
    cfg.corpus.split.val = split.get<double>("val", 0.1);
    cfg.corpus.split.test = split.get<double>("test", 0.1);
    s.adopt("split", split);
    root.adopt("corpus", s);
    const SplitRatios& r = cfg.corpus.split;
    if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
      fail("'corpus.split' ratios must be nonnegative and sum to 1");
    }
  }
  {
    Section s = root.child("augment");
    cfg.augment.synonym = s.get<bool>("synonym", false);
    const auto lexicon = s.get<std::string>("lexicon", "");
    cfg.augment.synonym_rate = s.get<double>("synonym_rate", 0.15);
    cfg.augment.back_translation = s.get<bool>("back_translation", false);
    const auto pivot = s.get<std::string>("pivot", "");
    cfg.augment.balance = s.get<bool>("balance", false);
    root.adopt("augment", s);
    if ((cfg.augment.synonym || cfg.augment.balance) && lexicon.empty()) {
      fail("'augment.lexicon' is required for synonym replacement and balancing");
    }
    if (cfg.augment.back_translation && pivot.empty()) {
      fail("'augment.pivot' is required for back translation");
    }
    if (!(cfg.augment.synonym_rate >= 0.0 && cfg.augment.synonym_rate <= 1.0)) {
      fail("'augment.synonym_rate' must lie in [0, 1]");
    }
    if (!lexicon.empty()) cfg.augment.lexicon = resolve(lexicon);
    if (!pivot.empty()) cfg.augment.pivot = resolve(pivot);
  }
  {
    Section s = root.child("tokenizer");
    cfg.vocab_size = s.get<std::size_t>("vocab_size", kDefaultVocabSize);
    root.adopt("tokenizer", s);
    if (cfg.vocab_size <= kBaseVocabSize) {
      fail("'tokenizer.vocab_size' must exceed " + std::to_string(kBaseVocabSize));
    }
  }
  const auto read_model = [&](const std::string& key, ModelConfig& m,
                              train::TrainConfig* finetune, std::size_t* subset) {
    Section s = root.child(key);
    Section arch = s.child("arch");
    m.arch = read_arch(arch);
    s.adopt("arch", arch);
    Section tr = s.child(finetune ? "pretrain" : "train");
    m.train = read_train(tr);
    s.adopt(finetune ? "pretrain" : "train", tr);
    if (finetune) {
      Section ft = s.child("finetune");
      *finetune = read_train(ft);
      *subset = ft.get<std::size_t>("subset", 0);
      s.adopt("finetune", ft);
    }
    root.adopt(key, s);
    m.arch.vocab_size = cfg.vocab_size;
  };
  read_model("encoder", cfg.encoder, nullptr, nullptr);
  read_model("decoder", cfg.decoder, &cfg.finetune, &cfg.finetune_subset);
  cfg.encoder.arch.head = nn::Head::kMlm;
  cfg.decoder.arch.head = nn::Head::kCausal;
  {
    Section s = root.child("prompts");
    cfg.prompt_k = s.get<std::size_t>("k", 1);
    root.adopt("prompts", s);
  }
  {
    Section s = root.child("eval");
    cfg.eval.threshold = s.get<double>("threshold", eval::kDefaultThreshold);
    cfg.eval.match_rule = eval::parse_match_rule(
        s.get<std::string>("match_rule", std::string(eval::match_rule_name(cfg.eval.match_rule))));
    cfg.eval.f1_threshold = s.get<double>("f1_threshold", eval::kDefaultF1Threshold);
    cfg.max_length = s.get<std::size_t>("max_length", nn::kDefaultMaxLength);
    root.adopt("eval", s);
  }
  root.finish();

  cfg.encoder.arch.validate();
  cfg.decoder.arch.validate();
  cfg.encoder.train.validate();
  cfg.decoder.train.validate();
  cfg.finetune.validate();
  cfg.eval.validate();
  if (cfg.max_length < 2 || cfg.max_length > cfg.decoder.arch.max_seq_len) {
    fail("'eval.max_length' must lie in [2, decoder.arch.max_seq_len]");
  }

  // Seeds: one stream per consumer so stages never share random draws.
  cfg.encoder.train.seed = derive_seed(cfg.seed, 101);
  cfg.decoder.train.seed = derive_seed(cfg.seed, 102);
  cfg.finetune.seed = derive_seed(cfg.seed, 103);
  cfg.canonical = root.out();
  return cfg;
}

}  // namespace medqa::cli
