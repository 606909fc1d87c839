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

#ifndef MEDQA_CORPUS_H_
#define MEDQA_CORPUS_H_

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace medqa {

enum class Provenance { kOriginal, kSynonymAug, kBackTransAug, kSyntheticBalance };

std::string_view provenance_name(Provenance p);
Provenance parse_provenance(std::string_view name);

struct QAPair {
  std::string id;
  std::string question;
  std::string answer;
  std::optional<std::string> qtype;
  Provenance provenance = Provenance::kOriginal;

  friend bool operator==(const QAPair&, const QAPair&) = default;
};

// Bookkeeping for parse and clean. After any of those operations
//   total == pairs.size() + dropped_incomplete + dropped_duplicate.
// Augmentation appends pairs without touching these counts.
struct CorpusStats {
  std::size_t total = 0;
  std::size_t dropped_incomplete = 0;
  std::size_t dropped_duplicate = 0;
  std::map<std::string, std::size_t> per_qtype;

  friend bool operator==(const CorpusStats&, const CorpusStats&) = default;
};

struct Corpus {
  std::vector<QAPair> pairs;
  CorpusStats stats;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

enum class CorpusFormat { kJsonLines, kCsv };

struct ParseOptions {
  // Strict mode raises MalformedRecord; lenient mode drops the record and
  // counts it as incomplete.
  bool strict = true;
};

// Records become pairs in input order. Ids come from the "id" field when
// present, otherwise from a content hash; repeated ids get a "~N" suffix.
Corpus parse_corpus(std::string_view input, CorpusFormat format,
                    ParseOptions options = {});

// Collapses whitespace runs to one space and trims every text field, drops
// pairs with an empty question or answer, then drops later duplicates under
// case-folded comparison. Idempotent.
Corpus clean(const Corpus& corpus);

// "Question: <q> ; Answer: <a>". Throws InvalidPair on empty fields.
std::string format_template(const QAPair& pair);

// Same prefix without the answer; used to open generation prompts.
std::string format_question_prompt(std::string_view question);

// JSON-lines writer/reader for QAPair records with provenance, used for the
// prepared train/val/test splits.
std::string write_jsonl(const std::vector<QAPair>& pairs);
std::vector<QAPair> read_jsonl(std::string_view text);

}  // namespace medqa

#endif  // MEDQA_CORPUS_H_
