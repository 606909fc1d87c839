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

#ifndef MEDQA_TENSOR_FILE_H_
#define MEDQA_TENSOR_FILE_H_

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

// Versioned binary container shared by checkpoints and embedding indexes.
//
//   bytes 0..7    magic "MEDQATF1"
//   bytes 8..15   header length H, little-endian uint64
//   bytes 16..    H bytes of JSON: {version, kind, meta,
//                   arrays: [{name, shape, offset, count}]}
//   then          every array as little-endian IEEE-754 binary64, offsets
//                 relative to the end of the header
namespace medqa {

inline constexpr int kTensorFileVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct TensorFile {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;
};

std::string write_tensor_file(const TensorFile& file);

// Throws Error(kFormat) on a bad magic, version, manifest or truncated data.
TensorFile read_tensor_file(std::string_view bytes);

}  // namespace medqa

#endif  // MEDQA_TENSOR_FILE_H_
