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

#include "medqa/tokenizer.h"

#include <limits>
#include <map>

#include <nlohmann/json.hpp>

#include "medqa/error.h"
#include "medqa/text.h"

namespace medqa {
namespace {

constexpr int kFormatVersion = 1;

constexpr const char* kSpecialNames[SpecialTokens::kCount] = {"PAD", "UNK", "MASK",
                                                             "BOS", "EOS"};

std::uint64_t pair_key(TokenId left, TokenId right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
         static_cast<std::uint32_t>(right);
}

// Symbols may hold partial UTF-8 sequences, so they are percent-encoded in
// the JSON document: printable ASCII other than '%' is kept literally.
std::string percent_encode(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : bytes) {
    if (c > 0x20 && c < 0x7F && c != '%') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xF]);
    }
  }
  return out;
}

std::string percent_decode(std::string_view s) {
  const auto hex_value = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '%') {
      out.push_back(s[i]);
      continue;
    }
    if (i + 2 >= s.size()) {
      throw Error(ErrorCode::kInvalidModel, "truncated percent escape");
    }
    const int hi = hex_value(s[i + 1]);
    const int lo = hex_value(s[i + 2]);
    if (hi < 0 || lo < 0) throw Error(ErrorCode::kInvalidModel, "bad percent escape");
    out.push_back(static_cast<char>(hi * 16 + lo));
    i += 2;
  }
  return out;
}

// Applies merges to one pretoken in rank order.
void merge_pretoken(const TokenizerModel& model, std::string_view piece,
                    std::vector<TokenId>& out) {
  std::vector<TokenId> symbols;
  symbols.reserve(piece.size());
  for (unsigned char c : piece) symbols.push_back(kFirstByteId + c);

  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    TokenId best_left = 0, best_right = 0, best_merged = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      if (auto m = model.merge_of(symbols[i], symbols[i + 1]);
          m && m->first < best_rank) {
        best_rank = m->first;
        best_left = symbols[i];
        best_right = symbols[i + 1];
        best_merged = m->second;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    std::vector<TokenId> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == best_left &&
          symbols[i + 1] == best_right) {
        next.push_back(best_merged);
        ++i;
      } else {
        next.push_back(symbols[i]);
      }
    }
    symbols.swap(next);
  }
  out.insert(out.end(), symbols.begin(), symbols.end());
}

}  // namespace

TokenizerModel::TokenizerModel() {
  symbols_.reserve(kBaseVocabSize);
  for (std::size_t i = 0; i < SpecialTokens::kCount; ++i) symbols_.emplace_back();
  for (int b = 0; b < 256; ++b) {
    symbols_.emplace_back(1, static_cast<char>(b));
    ids_.emplace(symbols_.back(), static_cast<TokenId>(symbols_.size() - 1));
  }
}

TokenizerModel TokenizerModel::from_merges(std::vector<MergeRule> merges) {
  TokenizerModel model;
  for (std::size_t rank = 0; rank < merges.size(); ++rank) {
    const auto& [left, right] = merges[rank];
    const auto l = model.lookup(left);
    const auto r = model.lookup(right);
    if (!l || !r) {
      throw Error(ErrorCode::kInvalidModel,
                  "merge " + std::to_string(rank) +
                      " references a symbol that does not exist yet");
    }
    const std::uint64_t key = pair_key(*l, *r);
    if (model.merge_table_.contains(key)) {
      throw Error(ErrorCode::kInvalidModel,
                  "merge " + std::to_string(rank) + " repeats an earlier rule");
    }
    std::string merged = left + right;
    TokenId merged_id;
    if (auto existing = model.lookup(merged)) {
      merged_id = *existing;
    } else {
      merged_id = static_cast<TokenId>(model.symbols_.size());
      model.symbols_.push_back(merged);
      model.ids_.emplace(std::move(merged), merged_id);
    }
    model.merge_table_.emplace(key, std::make_pair(rank, merged_id));
  }
  model.merges_ = std::move(merges);
  return model;
}

const std::string& TokenizerModel::symbol(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw Error(ErrorCode::kIdOutOfRange, "token id " + std::to_string(id));
  }
  return symbols_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> TokenizerModel::lookup(std::string_view symbol) const {
  const auto it = ids_.find(std::string(symbol));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::pair<std::size_t, TokenId>> TokenizerModel::merge_of(
    TokenId left, TokenId right) const {
  const auto it = merge_table_.find(pair_key(left, right));
  if (it == merge_table_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> pieces;
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (text::whitespace_length(text, pos) > 0) {
      std::size_t end = pos;
      std::size_t last = pos;
      while (end < text.size()) {
        const std::size_t len = text::whitespace_length(text, end);
        if (len == 0) break;
        last = end;
        end += len;
      }
      const bool space_prefixes_word =
          end < text.size() && last == end - 1 && text[last] == ' ';
      if (!space_prefixes_word) {
        pieces.push_back(text.substr(pos, end - pos));
        pos = end;
        continue;
      }
      if (last > pos) pieces.push_back(text.substr(pos, last - pos));
      pos = last;
    }
    std::size_t end = pos + (text[pos] == ' ' ? 1 : 0);
    while (end < text.size() && text::whitespace_length(text, end) == 0) ++end;
    pieces.push_back(text.substr(pos, end - pos));
    pos = end;
  }
  return pieces;
}

TokenizerModel train_tokenizer(std::span<const std::string> texts,
                               std::size_t vocab_size) {
  if (vocab_size < kBaseVocabSize + 1) {
    throw Error(ErrorCode::kVocabTooSmall,
                "vocab_size " + std::to_string(vocab_size) + " < " +
                    std::to_string(kBaseVocabSize + 1));
  }
  // Unique word pretokens with multiplicities; whitespace runs are skipped.
  std::map<std::string, std::size_t> word_counts;
  for (const std::string& t : texts) {
    for (std::string_view piece : pretokenize(t)) {
      const std::size_t body = piece.front() == ' ' ? 1 : 0;
      if (body < piece.size() && text::whitespace_length(piece, body) == 0) {
        ++word_counts[std::string(piece)];
      }
    }
  }

  std::vector<std::string> symbols;  // id -> bytes, training-local mirror
  std::map<std::string, TokenId> ids;
  for (std::size_t i = 0; i < SpecialTokens::kCount; ++i) symbols.emplace_back();
  for (int b = 0; b < 256; ++b) {
    symbols.emplace_back(1, static_cast<char>(b));
    ids.emplace(symbols.back(), static_cast<TokenId>(symbols.size() - 1));
  }

  struct Word {
    std::vector<TokenId> symbols;
    std::size_t count;
  };
  std::vector<Word> words;
  words.reserve(word_counts.size());
  for (const auto& [w, n] : word_counts) {
    Word word{{}, n};
    for (unsigned char c : w) word.symbols.push_back(kFirstByteId + c);
    words.push_back(std::move(word));
  }

  std::vector<MergeRule> merges;
  while (symbols.size() < vocab_size) {
    std::map<std::pair<TokenId, TokenId>, std::size_t> pair_counts;
    for (const Word& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }
    const std::pair<TokenId, TokenId>* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [p, n] : pair_counts) {
      if (n < best_count || n < 2) continue;
      if (n > best_count) {
        best = &p;
        best_count = n;
        continue;
      }
      // Equal counts: lexicographically smallest (left, right) byte strings.
      const auto& bl = symbols[best->first];
      const auto& br = symbols[best->second];
      const auto& cl = symbols[p.first];
      const auto& cr = symbols[p.second];
      if (cl < bl || (cl == bl && cr < br)) best = &p;
    }
    if (best == nullptr) break;

    const TokenId left = best->first;
    const TokenId right = best->second;
    std::string merged = symbols[left] + symbols[right];
    merges.emplace_back(symbols[left], symbols[right]);
    TokenId merged_id;
    if (auto it = ids.find(merged); it != ids.end()) {
      merged_id = it->second;
    } else {
      merged_id = static_cast<TokenId>(symbols.size());
      symbols.push_back(merged);
      ids.emplace(std::move(merged), merged_id);
    }
    for (Word& w : words) {
      if (w.symbols.size() < 2) continue;
      std::vector<TokenId> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == left &&
            w.symbols[i + 1] == right) {
          next.push_back(merged_id);
          ++i;
        } else {
          next.push_back(w.symbols[i]);
        }
      }
      w.symbols.swap(next);
    }
  }
  return TokenizerModel::from_merges(std::move(merges));
}

TokenizerModel train_tokenizer(const Corpus& corpus, std::size_t vocab_size,
                               std::uint64_t /*seed*/) {
  std::vector<std::string> texts;
  texts.reserve(corpus.pairs.size());
  for (const QAPair& p : corpus.pairs) texts.push_back(format_template(p));
  return train_tokenizer(texts, vocab_size);
}

std::vector<TokenId> encode(const TokenizerModel& model, std::string_view text,
                            bool add_bos_eos) {
  std::vector<TokenId> ids;
  ids.reserve(text.size() + 2);
  if (add_bos_eos) ids.push_back(SpecialTokens::kBos);
  for (std::string_view piece : pretokenize(text)) merge_pretoken(model, piece, ids);
  if (add_bos_eos) ids.push_back(SpecialTokens::kEos);
  return ids;
}

std::string decode(const TokenizerModel& model, std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) out += model.symbol(id);
  return out;
}

std::string save_tokenizer(const TokenizerModel& model) {
  using nlohmann::json;
  std::string out = "{\n";
  out += "  \"version\": " + std::to_string(kFormatVersion) + ",\n";
  out += "  \"vocab_size\": " + std::to_string(model.vocab_size()) + ",\n";
  out += "  \"config_hash\": " + json(model.config_hash).dump() + ",\n";
  out += "  \"specials\": {";
  for (std::size_t i = 0; i < SpecialTokens::kCount; ++i) {
    out += (i ? ", \"" : "\"") + std::string(kSpecialNames[i]) +
           "\": " + std::to_string(i);
  }
  out += "},\n  \"merges\": [";
  const auto merges = model.merges();
  for (std::size_t i = 0; i < merges.size(); ++i) {
    out += i ? ",\n    [" : "\n    [";
    out += json(percent_encode(merges[i].first)).dump() + ", " +
           json(percent_encode(merges[i].second)).dump() + "]";
  }
  out += merges.empty() ? "]\n}\n" : "\n  ]\n}\n";
  return out;
}

TokenizerModel load_tokenizer(std::string_view document) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidModel, std::string("tokenizer JSON: ") + e.what());
  }
  try {
    if (doc.at("version").get<int>() != kFormatVersion) {
      throw Error(ErrorCode::kInvalidModel, "unsupported tokenizer version");
    }
    const json& specials = doc.at("specials");
    if (specials.size() != SpecialTokens::kCount) {
      throw Error(ErrorCode::kInvalidModel, "unexpected special-token table");
    }
    for (std::size_t i = 0; i < SpecialTokens::kCount; ++i) {
      if (specials.at(kSpecialNames[i]).get<std::size_t>() != i) {
        throw Error(ErrorCode::kInvalidModel, "unexpected special-token table");
      }
    }
    std::vector<MergeRule> merges;
    for (const json& m : doc.at("merges")) {
      if (!m.is_array() || m.size() != 2) {
        throw Error(ErrorCode::kInvalidModel, "merge entries must be pairs");
      }
      merges.emplace_back(percent_decode(m[0].get<std::string>()),
                          percent_decode(m[1].get<std::string>()));
    }
    TokenizerModel model = TokenizerModel::from_merges(std::move(merges));
    model.config_hash = doc.value("config_hash", "");
    if (doc.at("vocab_size").get<std::size_t>() != model.vocab_size()) {
      throw Error(ErrorCode::kInvalidModel, "vocab_size does not match merges");
    }
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidModel, std::string("tokenizer JSON: ") + e.what());
  }
}

}  // namespace medqa
