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

#include <cstdlib>
#include <string>

#include "medqa/error.h"
#include "medqa/kernels.h"

namespace medqa::kernels {
namespace {

constexpr KernelTable kScalarTable{Isa::kScalar, &scalar::dot, &scalar::axpy,
                                   &scalar::scale, &scalar::sum_squares};
#if MEDQA_HAVE_AVX2_KERNELS
constexpr KernelTable kAvx2Table{Isa::kAvx2, &avx2::dot, &avx2::axpy,
                                 &avx2::scale, &avx2::sum_squares};
#endif

const KernelTable* select_initial() {
  if (const char* env = std::getenv("MEDQA_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return &kScalarTable;
    if (want == "avx2" && isa_supported(Isa::kAvx2)) return &table_for(Isa::kAvx2);
  }
  if (isa_supported(Isa::kAvx2)) return &table_for(Isa::kAvx2);
  return &kScalarTable;
}

const KernelTable*& current() {
  static const KernelTable* table = select_initial();
  return table;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if MEDQA_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

std::string_view isa_name(Isa isa) {
  return isa == Isa::kAvx2 ? "avx2" : "scalar";
}

const KernelTable& table_for(Isa isa) {
#if MEDQA_HAVE_AVX2_KERNELS
  if (isa == Isa::kAvx2) return kAvx2Table;
#endif
  (void)isa;
  return kScalarTable;
}

const KernelTable& active() { return *current(); }

void set_active(Isa isa) {
  if (!isa_supported(isa)) {
    throw Error(ErrorCode::kInvalidConfig,
                "kernel ISA not supported on this CPU: " + std::string(isa_name(isa)));
  }
  current() = &table_for(isa);
}

}  // namespace medqa::kernels
