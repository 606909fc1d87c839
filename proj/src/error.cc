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

#include "medqa/error.h"

#include <cstdio>

#include "medqa/hash.h"

namespace medqa {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedRecord: return "MalformedRecord";
    case ErrorCode::kInvalidUtf8: return "InvalidUtf8";
    case ErrorCode::kInvalidPair: return "InvalidPair";
    case ErrorCode::kVocabTooSmall: return "VocabTooSmall";
    case ErrorCode::kIdOutOfRange: return "IdOutOfRange";
    case ErrorCode::kInvalidModel: return "InvalidModel";
    case ErrorCode::kTranslatorFailure: return "TranslatorFailure";
    case ErrorCode::kMissingLabel: return "MissingLabel";
    case ErrorCode::kTooFewPoints: return "TooFewPoints";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNoMaskedPositions: return "NoMaskedPositions";
    case ErrorCode::kSequenceTooShort: return "SequenceTooShort";
    case ErrorCode::kCacheMismatch: return "CacheMismatch";
    case ErrorCode::kWrongHead: return "WrongHead";
    case ErrorCode::kStepOutOfRange: return "StepOutOfRange";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kEmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::kDegenerateEmbedding: return "DegenerateEmbedding";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kEmptyTestSet: return "EmptyTestSet";
    case ErrorCode::kNoRows: return "NoRows";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kMissingPrerequisite: return "MissingPrerequisite";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kFormat: return "Format";
  }
  return "Unknown";
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf, 16);
}

}  // namespace medqa
