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

#include "medqa/corpus.h"

#include <set>
#include <unordered_set>
#include <utility>

#include <nlohmann/json.hpp>

#include "medqa/error.h"
#include "medqa/hash.h"
#include "medqa/text.h"

namespace medqa {
namespace {

using nlohmann::json;

struct RawRecord {
  std::size_t line;
  std::optional<std::string> id;
  std::optional<std::string> question;
  std::optional<std::string> answer;
  std::optional<std::string> qtype;
  bool well_formed = true;
};

std::optional<std::string> string_field(const json& obj, const char* key,
                                        bool* ok) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  *ok = false;
  return std::nullopt;
}

std::vector<RawRecord> read_json_lines(std::string_view input) {
  std::vector<RawRecord> records;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < input.size()) {
    std::size_t end = input.find('\n', pos);
    if (end == std::string_view::npos) end = input.size();
    std::string_view line = input.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    RawRecord rec{line_no, {}, {}, {}, {}};
    const json obj = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (obj.is_discarded() || !obj.is_object()) {
      rec.well_formed = false;
    } else {
      rec.id = string_field(obj, "id", &rec.well_formed);
      rec.question = string_field(obj, "q", &rec.well_formed);
      rec.answer = string_field(obj, "a", &rec.well_formed);
      rec.qtype = string_field(obj, "type", &rec.well_formed);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// RFC 4180 style: comma separated, double-quote quoting, "" escapes a quote,
// quoted fields may span lines.
struct CsvRow {
  std::size_t line;
  std::vector<std::string> fields;
  bool ok = true;
};

std::vector<CsvRow> read_csv_rows(std::string_view input) {
  std::vector<CsvRow> rows;
  std::size_t pos = 0;
  std::size_t line_no = 1;
  while (pos < input.size()) {
    CsvRow row{line_no, {}};
    std::string field;
    bool in_quotes = false;
    bool row_done = false;
    while (!row_done) {
      if (pos >= input.size()) {
        if (in_quotes) row.ok = false;
        row.fields.push_back(std::move(field));
        break;
      }
      const char c = input[pos++];
      if (in_quotes) {
        if (c == '"') {
          if (pos < input.size() && input[pos] == '"') {
            field.push_back('"');
            ++pos;
          } else {
            in_quotes = false;
          }
        } else {
          if (c == '\n') ++line_no;
          field.push_back(c);
        }
        continue;
      }
      switch (c) {
        case '"':
          in_quotes = true;
          break;
        case ',':
          row.fields.push_back(std::move(field));
          field.clear();
          break;
        case '\r':
          break;
        case '\n':
          ++line_no;
          row.fields.push_back(std::move(field));
          row_done = true;
          break;
        default:
          field.push_back(c);
      }
    }
    const bool blank = row.fields.size() == 1 && row.fields[0].empty();
    if (!blank) rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<RawRecord> read_csv(std::string_view input) {
  std::vector<RawRecord> records;
  const std::vector<CsvRow> rows = read_csv_rows(input);
  if (rows.empty()) return records;

  int q_col = -1, a_col = -1, type_col = -1, id_col = -1;
  const CsvRow& header = rows.front();
  for (std::size_t i = 0; i < header.fields.size(); ++i) {
    const std::string name = text::normalize_whitespace(header.fields[i]);
    const int col = static_cast<int>(i);
    if (name == "q") q_col = col;
    else if (name == "a") a_col = col;
    else if (name == "type") type_col = col;
    else if (name == "id") id_col = col;
  }
  if (q_col < 0 || a_col < 0) {
    throw Error(ErrorCode::kMalformedRecord,
                "line 1: CSV header must name columns q and a");
  }
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const CsvRow& row = rows[r];
    RawRecord rec{row.line, {}, {}, {}, {}};
    rec.well_formed = row.ok && row.fields.size() == header.fields.size();
    if (rec.well_formed) {
      rec.question = row.fields[q_col];
      rec.answer = row.fields[a_col];
      if (type_col >= 0 && !row.fields[type_col].empty()) {
        rec.qtype = row.fields[type_col];
      }
      if (id_col >= 0 && !row.fields[id_col].empty()) rec.id = row.fields[id_col];
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void recount_qtypes(Corpus& corpus) {
  corpus.stats.per_qtype.clear();
  for (const QAPair& p : corpus.pairs) {
    if (p.qtype) ++corpus.stats.per_qtype[*p.qtype];
  }
}

}  // namespace

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kOriginal: return "original";
    case Provenance::kSynonymAug: return "synonym";
    case Provenance::kBackTransAug: return "back_translation";
    case Provenance::kSyntheticBalance: return "synthetic_balance";
  }
  return "original";
}

Provenance parse_provenance(std::string_view name) {
  for (Provenance p : {Provenance::kOriginal, Provenance::kSynonymAug,
                       Provenance::kBackTransAug, Provenance::kSyntheticBalance}) {
    if (provenance_name(p) == name) return p;
  }
  throw Error(ErrorCode::kFormat, "unknown provenance: " + std::string(name));
}

Corpus parse_corpus(std::string_view input, CorpusFormat format,
                    ParseOptions options) {
  if (const std::size_t bad = text::find_invalid_utf8(input);
      bad != std::string_view::npos) {
    throw Error(ErrorCode::kInvalidUtf8,
                "input is not valid UTF-8 at byte " + std::to_string(bad));
  }
  const std::vector<RawRecord> records =
      format == CorpusFormat::kJsonLines ? read_json_lines(input) : read_csv(input);

  Corpus corpus;
  std::unordered_set<std::string> used_ids;
  for (const RawRecord& rec : records) {
    ++corpus.stats.total;
    if (!rec.well_formed || !rec.question || !rec.answer) {
      if (options.strict) {
        throw Error(ErrorCode::kMalformedRecord,
                    "line " + std::to_string(rec.line) +
                        ": record is missing a required field or is not parseable");
      }
      ++corpus.stats.dropped_incomplete;
      continue;
    }
    QAPair pair;
    pair.question = *rec.question;
    pair.answer = *rec.answer;
    pair.qtype = rec.qtype;
    std::string id = rec.id ? *rec.id
                            : "h" + hex64(fnv1a64(pair.question + '\x1f' + pair.answer));
    if (used_ids.contains(id)) {
      std::size_t n = 2;
      while (used_ids.contains(id + "~" + std::to_string(n))) ++n;
      id += "~" + std::to_string(n);
    }
    used_ids.insert(id);
    pair.id = std::move(id);
    corpus.pairs.push_back(std::move(pair));
  }
  recount_qtypes(corpus);
  return corpus;
}

Corpus clean(const Corpus& corpus) {
  Corpus out;
  out.stats = corpus.stats;
  std::set<std::string> seen;
  for (const QAPair& p : corpus.pairs) {
    QAPair q = p;
    q.question = text::normalize_whitespace(p.question);
    q.answer = text::normalize_whitespace(p.answer);
    if (q.qtype) {
      q.qtype = text::normalize_whitespace(*q.qtype);
      if (q.qtype->empty()) q.qtype.reset();
    }
    if (q.question.empty() || q.answer.empty()) {
      ++out.stats.dropped_incomplete;
      continue;
    }
    std::string key = text::ascii_lower(q.question) + '\x1f' + text::ascii_lower(q.answer);
    if (!seen.insert(std::move(key)).second) {
      ++out.stats.dropped_duplicate;
      continue;
    }
    out.pairs.push_back(std::move(q));
  }
  recount_qtypes(out);
  return out;
}

std::string format_template(const QAPair& pair) {
  if (pair.question.empty() || pair.answer.empty()) {
    throw Error(ErrorCode::kInvalidPair,
                "pair '" + pair.id + "' has an empty question or answer");
  }
  return "Question: " + pair.question + " ; Answer: " + pair.answer;
}

std::string format_question_prompt(std::string_view question) {
  return "Question: " + std::string(question) + " ; Answer:";
}

std::string write_jsonl(const std::vector<QAPair>& pairs) {
  std::string out;
  for (const QAPair& p : pairs) {
    json obj = {{"id", p.id},
                {"q", p.question},
                {"a", p.answer},
                {"provenance", provenance_name(p.provenance)}};
    if (p.qtype) obj["type"] = *p.qtype;
    out += obj.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<QAPair> read_jsonl(std::string_view input) {
  std::vector<QAPair> pairs;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < input.size()) {
    std::size_t end = input.find('\n', pos);
    if (end == std::string_view::npos) end = input.size();
    const std::string_view line = input.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const json obj = json::parse(line);
      QAPair p;
      p.id = obj.at("id").get<std::string>();
      p.question = obj.at("q").get<std::string>();
      p.answer = obj.at("a").get<std::string>();
      if (obj.contains("type")) p.qtype = obj.at("type").get<std::string>();
      if (obj.contains("provenance")) {
        p.provenance = parse_provenance(obj.at("provenance").get<std::string>());
      }
      pairs.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedRecord,
                  "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

}  // namespace medqa
