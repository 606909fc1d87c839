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

#include "medqa/tensor_file.h"

#include <bit>
#include <cstdint>
#include <cstring>

#include "medqa/error.h"

namespace medqa {
namespace {

constexpr char kMagic[8] = {'M', 'E', 'D', 'Q', 'A', 'T', 'F', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view bytes, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  return v;
}

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

std::string write_tensor_file(const TensorFile& file) {
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const NamedArray& a : file.arrays) {
    if (element_count(a.shape) != a.values.size()) {
      throw Error(ErrorCode::kShapeMismatch, "array '" + a.name + "' shape/size mismatch");
    }
    manifest.push_back({{"name", a.name},
                        {"shape", a.shape},
                        {"offset", offset},
                        {"count", a.values.size()}});
    offset += a.values.size() * sizeof(double);
  }
  const nlohmann::json header = {{"version", kTensorFileVersion},
                                 {"kind", file.kind},
                                 {"meta", file.meta},
                                 {"arrays", manifest}};
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_u64(out, header_text.size());
  out += header_text;
  out.reserve(out.size() + offset);
  for (const NamedArray& a : file.arrays) {
    for (double v : a.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

TensorFile read_tensor_file(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kFormat, "not a tensor file (bad magic)");
  }
  const std::uint64_t header_len = get_u64(bytes, 8);
  if (header_len > bytes.size() - 16) {
    throw Error(ErrorCode::kFormat, "tensor file header is truncated");
  }
  TensorFile file;
  try {
    const nlohmann::json header = nlohmann::json::parse(bytes.substr(16, header_len));
    if (header.at("version").get<int>() != kTensorFileVersion) {
      throw Error(ErrorCode::kFormat, "unsupported tensor file version");
    }
    file.kind = header.at("kind").get<std::string>();
    file.meta = header.at("meta");
    const std::string_view data = bytes.substr(16 + header_len);
    for (const nlohmann::json& entry : header.at("arrays")) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (count != element_count(a.shape) || offset % 8 != 0 ||
          offset > data.size() || count > (data.size() - offset) / 8) {
        throw Error(ErrorCode::kFormat, "array '" + a.name + "' has a bad manifest entry");
      }
      a.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        a.values[i] = std::bit_cast<double>(get_u64(data, offset + 8 * i));
      }
      file.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("tensor file header: ") + e.what());
  }
  return file;
}

}  // namespace medqa
