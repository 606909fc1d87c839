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

#ifndef MEDQA_TRAIN_H_
#define MEDQA_TRAIN_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medqa/nn.h"
#include "medqa/random.h"

namespace medqa::train {

using nn::ArchConfig;
using nn::Gradients;
using nn::ModelParams;

enum class Schedule { kLinear, kCosine };
enum class Objective { kMlm, kCausal };

std::string_view schedule_name(Schedule s);
Schedule parse_schedule(std::string_view name);
std::string_view objective_name(Objective o);

struct TrainConfig {
  double init_lr = 0.1;
  std::size_t total_steps = 1000;
  std::size_t warmup_steps = 0;
  Schedule schedule = Schedule::kLinear;
  double clip_c = 1.0;
  std::size_t batch_size = 8;
  double keep_prob = 1.0;
  std::uint64_t seed = 0;
  // Decoupled decay, applied as p -= lr * weight_decay * p before the step.
  double weight_decay = 0.0;
  // Classical momentum coefficient; 0 gives plain SGD.
  double momentum = 0.0;
  // Fraction of non-special positions selected for MLM prediction.
  double mask_rate = 0.15;
  // Emit a checkpoint every this many steps (0 = only at completion).
  std::size_t checkpoint_interval = 0;

  // Throws InvalidConfig.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);

// Warm-up ramps linearly from 0 to init_lr over warmup_steps. After it,
// Linear decays as init_lr * (1 - t'/T') and Cosine as
// init_lr * (1 + cos(pi * t'/T')) / 2 with t' = t - warmup, T' = total - warmup.
// With no warm-up Linear is exactly init_lr * (1 - t / total_steps).
// Throws StepOutOfRange for t > total_steps.
double lr_at(const TrainConfig& cfg, std::size_t t);

double global_norm(const Gradients& g);

// Divides every entry by max(1, ||g|| / c) using the joint L2 norm of all
// arrays. The result has norm <= c and is returned unchanged when ||g|| <= c.
// Throws NonFiniteGradient.
Gradients clip_gradients(Gradients g, double c);

// params - lr * grads. Throws ShapeMismatch.
ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double lr);

struct StepRecord {
  std::size_t step;
  double lr;
  double loss;
  double grad_norm;  // before clipping
  bool clipped;
};

struct EpochRecord {
  std::size_t epoch;
  std::size_t step;  // steps completed when measured
  double heldout_perplexity;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  // One JSON object per step record.
  std::string to_jsonl() const;
  nlohmann::json summary() const;
};

// One training sequence. For causal fine-tuning, loss_mask marks the
// positions whose tokens are predicted; empty means every position.
struct Example {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> loss_mask;
};

// Masks mask_rate of each sequence's non-special positions (at least one per
// batch): 80% become MASK, 10% a random non-special id, 10% stay unchanged.
nn::Batch make_mlm_batch(std::span<const Example> examples, std::size_t vocab_size,
                         double mask_rate, Rng& rng);

nn::Batch make_causal_batch(std::span<const Example> examples);

// exp of the mean per-token NLL over the examples, evaluated without dropout
// in batches. MLM uses a fixed masking seed so repeated calls agree.
double heldout_perplexity(const ModelParams& params, const ArchConfig& arch,
                          Objective objective, std::span<const Example> examples,
                          double mask_rate = 0.15);

struct FitOptions {
  // Held-out split scored before training and after every epoch.
  std::span<const Example> heldout;
  // Called every checkpoint_interval steps and after the final step.
  std::function<void(std::size_t step, const ModelParams&)> on_checkpoint;
};

struct FitResult {
  ModelParams params;
  TrainLog log;
};

// total_steps iterations of forward -> loss -> backward -> clip -> lr_at ->
// SGD over seeded-shuffled minibatches. Sequences longer than max_seq_len are
// truncated. Deterministic for a given (params, cfg, data).
FitResult fit(ModelParams params, const ArchConfig& arch, const TrainConfig& cfg,
              Objective objective, std::span<const Example> data,
              const FitOptions& options = {});

}  // namespace medqa::train

#endif  // MEDQA_TRAIN_H_
