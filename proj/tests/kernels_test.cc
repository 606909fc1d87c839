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

#include "medqa/kernels.h"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "medqa/random.h"

namespace medqa::kernels {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal() * std::exp2(static_cast<double>(rng.below(9)) - 4.0);
  return v;
}

long double exact_dot(const std::vector<double>& x, const std::vector<double>& y) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += static_cast<long double>(x[i]) * static_cast<long double>(y[i]);
  }
  return acc;
}

double abs_dot(const std::vector<double>& x, const std::vector<double>& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(x[i] * y[i]);
  return acc;
}

class KernelIsaTest : public ::testing::TestWithParam<Isa> {
 protected:
  void SetUp() override {
    if (!isa_supported(GetParam())) GTEST_SKIP() << isa_name(GetParam()) << " unavailable";
  }
  const KernelTable& table() const { return table_for(GetParam()); }
};

TEST_P(KernelIsaTest, DotMatchesExtendedPrecisionOracle) {
  Rng rng(1);
  for (std::size_t n = 0; n <= 67; ++n) {
    const auto x = random_vector(rng, n);
    const auto y = random_vector(rng, n);
    const double got = table().dot(x.data(), y.data(), n);
    const double bound = static_cast<double>(n + 1) * kEps * abs_dot(x, y);
    EXPECT_LE(std::abs(static_cast<long double>(got) - exact_dot(x, y)), bound) << "n=" << n;
  }
}

TEST_P(KernelIsaTest, SumSquaresEqualsSelfDot) {
  Rng rng(2);
  for (std::size_t n = 0; n <= 40; ++n) {
    const auto x = random_vector(rng, n);
    EXPECT_EQ(table().sum_squares(x.data(), n), table().dot(x.data(), x.data(), n));
  }
}

TEST_P(KernelIsaTest, ScaleIsElementwiseProduct) {
  Rng rng(3);
  for (std::size_t n = 0; n <= 21; ++n) {
    auto x = random_vector(rng, n);
    const auto before = x;
    table().scale(-0.37, x.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(x[i], before[i] * -0.37);
  }
}

TEST_P(KernelIsaTest, AxpyWithinOneRoundingOfExact) {
  Rng rng(4);
  for (std::size_t n = 0; n <= 37; ++n) {
    const auto x = random_vector(rng, n);
    auto y = random_vector(rng, n);
    const auto y0 = y;
    table().axpy(1.7, x.data(), y.data(), n);
    for (std::size_t i = 0; i < n; ++i) {
      const long double exact = 1.7L * x[i] + static_cast<long double>(y0[i]);
      EXPECT_LE(std::abs(y[i] - exact), 2 * kEps * (std::abs(1.7 * x[i]) + std::abs(y0[i])));
    }
  }
}

TEST_P(KernelIsaTest, ZeroLengthIsNeutral) {
  double y = 5.0;
  EXPECT_EQ(table().dot(nullptr, nullptr, 0), 0.0);
  EXPECT_EQ(table().sum_squares(nullptr, 0), 0.0);
  table().axpy(2.0, nullptr, &y, 0);
  table().scale(2.0, &y, 0);
  EXPECT_EQ(y, 5.0);
}

INSTANTIATE_TEST_SUITE_P(AllIsas, KernelIsaTest, ::testing::Values(Isa::kScalar, Isa::kAvx2),
                         [](const auto& info) { return std::string(isa_name(info.param)); });

TEST(KernelEquivalence, Avx2AgreesWithScalarToRounding) {
  if (!isa_supported(Isa::kAvx2)) GTEST_SKIP() << "avx2 unavailable";
  const KernelTable& s = table_for(Isa::kScalar);
  const KernelTable& v = table_for(Isa::kAvx2);
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.below(300);
    const auto x = random_vector(rng, n);
    const auto y = random_vector(rng, n);
    const double bound = 2.0 * static_cast<double>(n + 1) * kEps * abs_dot(x, y);
    EXPECT_NEAR(s.dot(x.data(), y.data(), n), v.dot(x.data(), y.data(), n), bound);
    EXPECT_NEAR(s.sum_squares(x.data(), n), v.sum_squares(x.data(), n),
                2.0 * static_cast<double>(n + 1) * kEps * abs_dot(x, x));
  }
}

TEST(KernelDispatch, SetActiveSwitchesTable) {
  const Isa original = active().isa;
  set_active(Isa::kScalar);
  EXPECT_EQ(active().isa, Isa::kScalar);
  const std::vector<double> x{1.0, 2.0, 3.0};
  EXPECT_EQ(dot(x, x), 14.0);
  set_active(original);
  EXPECT_EQ(active().isa, original);
}

TEST(KernelDispatch, ScalarIsAlwaysSupported) {
  EXPECT_TRUE(isa_supported(Isa::kScalar));
  EXPECT_EQ(isa_name(Isa::kScalar), "scalar");
}

}  // namespace
}  // namespace medqa::kernels
