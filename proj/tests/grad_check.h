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

#ifndef MEDQA_TESTS_GRAD_CHECK_H_
#define MEDQA_TESTS_GRAD_CHECK_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "medqa/nn.h"
#include "medqa/random.h"

namespace medqa::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t entries = 0;
};

// |a - n| / max(|a|, |n|, 1e-6); the floor keeps near-zero gradients from
// dominating through cancellation noise.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Compares `analytic` against the fourth-order central difference of `loss`
// with step h at every entry of every array; truncation error is O(h^4).
inline GradCheckResult gradient_check(const nn::ModelParams& params,
                                      const nn::Gradients& analytic,
                                      const std::function<double(const nn::ModelParams&)>& loss,
                                      double h = 1e-4) {
  GradCheckResult result;
  nn::ModelParams probe = params;
  auto probe_arrays = probe.arrays();
  const auto grad_arrays = analytic.arrays();
  for (std::size_t a = 0; a < probe_arrays.size(); ++a) {
    nn::Tensor& t = *probe_arrays[a].second;
    const nn::Tensor& g = *grad_arrays[a].second;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t.data[i];
      const auto at = [&](double offset) {
        t.data[i] = saved + offset;
        return loss(probe);
      };
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      t.data[i] = saved;
      const double err = relative_error(g.data[i], numeric);
      ++result.entries;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_entry = probe_arrays[a].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

// Parameters with O(1) entries so every path carries a visible gradient.
inline nn::ModelParams random_params(const nn::ArchConfig& arch, std::uint64_t seed,
                                     double scale = 0.3) {
  nn::ModelParams p = nn::ModelParams::zeros(arch);
  Rng rng(seed);
  for (auto& [name, t] : p.arrays()) {
    const bool gain = name.find("gain") != std::string::npos;
    for (double& v : t->data) v = (gain ? 1.0 : 0.0) + scale * rng.normal();
  }
  return p;
}

}  // namespace medqa::testing

#endif  // MEDQA_TESTS_GRAD_CHECK_H_
