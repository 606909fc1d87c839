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

#ifndef MEDQA_TEXT_H_
#define MEDQA_TEXT_H_

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace medqa::text {

// Byte offset of the first invalid sequence, or npos when the input is
// well-formed UTF-8 (no overlongs, surrogates or code points past U+10FFFF).
std::size_t find_invalid_utf8(std::string_view s);

// Length in bytes of a Unicode whitespace code point starting at s[pos], or 0.
std::size_t whitespace_length(std::string_view s, std::size_t pos);

// Collapses every run of Unicode whitespace to a single ASCII space and trims.
std::string normalize_whitespace(std::string_view s);

std::string ascii_lower(std::string_view s);

// A piece of text that is either a word (ASCII alphanumerics, apostrophes,
// hyphens, and any non-ASCII bytes) or a run of everything else. Joining the
// pieces reproduces the input exactly.
struct Piece {
  std::string text;
  bool is_word;
};
std::vector<Piece> split_words(std::string_view s);

// Lowercased alphanumeric tokens, used for token-level F1.
std::vector<std::string> normalized_tokens(std::string_view s);

}  // namespace medqa::text

#endif  // MEDQA_TEXT_H_
