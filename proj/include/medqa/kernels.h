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

#ifndef MEDQA_KERNELS_H_
#define MEDQA_KERNELS_H_

#include <cstddef>
#include <span>
#include <string_view>

// Dense double-precision inner loops used by the transformer, clipping and
// retrieval. Each kernel has a portable scalar reference and an AVX2+FMA
// variant; the active variant is chosen once at startup from CPUID and may be
// pinned with MEDQA_KERNELS=scalar|avx2.
//
// The scalar variants accumulate strictly left to right. The AVX2 variants
// use four independent lanes plus FMA, so reductions agree with the scalar
// path to rounding only. Within one variant every call is deterministic.
namespace medqa::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // x *= a
  void (*scale)(double a, double* x, std::size_t n);
  double (*sum_squares)(const double* x, std::size_t n);
};

namespace scalar {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double a, double* x, std::size_t n);
double sum_squares(const double* x, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define MEDQA_HAVE_AVX2_KERNELS 1
namespace avx2 {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double a, double* x, std::size_t n);
double sum_squares(const double* x, std::size_t n);
}  // namespace avx2
#endif

bool isa_supported(Isa isa);
std::string_view isa_name(Isa isa);

const KernelTable& table_for(Isa isa);

// The table selected for this process.
const KernelTable& active();

// Overrides the selection; intended for equivalence tests and benchmarks.
// Throws medqa::Error(kInvalidConfig) if the CPU lacks the ISA.
void set_active(Isa isa);

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}

inline void scale(double a, std::span<double> x) {
  active().scale(a, x.data(), x.size());
}

inline double sum_squares(std::span<const double> x) {
  return active().sum_squares(x.data(), x.size());
}

}  // namespace medqa::kernels

#endif  // MEDQA_KERNELS_H_
