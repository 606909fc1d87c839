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

#include "medqa/train.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>

#include "medqa/error.h"
#include "medqa/kernels.h"

namespace medqa::train {
namespace {

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kMaskStream = 2;
constexpr std::uint64_t kDropoutStream = 3;
constexpr std::uint64_t kHeldoutMaskSeed = 0x5eed;
constexpr std::size_t kEvalBatch = 16;

std::vector<Example> truncated(std::span<const Example> data, std::size_t max_len) {
  std::vector<Example> out(data.begin(), data.end());
  for (Example& e : out) {
    if (e.tokens.size() > max_len) e.tokens.resize(max_len);
    if (e.loss_mask.size() > max_len) e.loss_mask.resize(max_len);
  }
  return out;
}

bool has_target(const Example& e, Objective objective) {
  if (objective == Objective::kMlm) {
    return std::any_of(e.tokens.begin(), e.tokens.end(),
                       [](TokenId id) { return !TokenizerModel::is_special(id); });
  }
  if (e.tokens.size() < 2) return false;
  if (e.loss_mask.empty()) return true;
  return std::any_of(e.loss_mask.begin() + 1, e.loss_mask.end(),
                     [](std::uint8_t m) { return m != 0; });
}

}  // namespace

std::string_view schedule_name(Schedule s) {
  return s == Schedule::kCosine ? "cosine" : "linear";
}

Schedule parse_schedule(std::string_view name) {
  if (name == "linear") return Schedule::kLinear;
  if (name == "cosine") return Schedule::kCosine;
  throw Error(ErrorCode::kInvalidConfig, "unknown schedule: " + std::string(name));
}

std::string_view objective_name(Objective o) {
  return o == Objective::kMlm ? "mlm" : "causal";
}

void TrainConfig::validate() const {
  const auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidConfig, what);
  };
  if (!(init_lr > 0.0) || !std::isfinite(init_lr)) fail("init_lr must be positive");
  if (total_steps > 0 && warmup_steps >= total_steps) {
    fail("warmup_steps must be smaller than total_steps");
  }
  if (!(clip_c > 0.0)) fail("clip_c must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(keep_prob > 0.0) || keep_prob > 1.0) fail("keep_prob must lie in (0, 1]");
  if (weight_decay < 0.0) fail("weight_decay must be nonnegative");
  if (momentum < 0.0 || momentum >= 1.0) fail("momentum must lie in [0, 1)");
  if (!(mask_rate > 0.0) || mask_rate > 1.0) fail("mask_rate must lie in (0, 1]");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"init_lr", cfg.init_lr},
          {"total_steps", cfg.total_steps},
          {"warmup_steps", cfg.warmup_steps},
          {"schedule", schedule_name(cfg.schedule)},
          {"clip_c", cfg.clip_c},
          {"batch_size", cfg.batch_size},
          {"keep_prob", cfg.keep_prob},
          {"seed", cfg.seed},
          {"weight_decay", cfg.weight_decay},
          {"momentum", cfg.momentum},
          {"mask_rate", cfg.mask_rate},
          {"checkpoint_interval", cfg.checkpoint_interval}};
}

double lr_at(const TrainConfig& cfg, std::size_t t) {
  if (t > cfg.total_steps) {
    throw Error(ErrorCode::kStepOutOfRange,
                "step " + std::to_string(t) + " > total_steps " +
                    std::to_string(cfg.total_steps));
  }
  if (t < cfg.warmup_steps) {
    return cfg.init_lr * static_cast<double>(t) / static_cast<double>(cfg.warmup_steps);
  }
  const double progress = static_cast<double>(t - cfg.warmup_steps) /
                          static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  if (cfg.schedule == Schedule::kLinear) return cfg.init_lr * (1.0 - progress);
  return cfg.init_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_norm(const Gradients& g) {
  double total = 0.0;
  for (const auto& [name, t] : g.arrays()) total += kernels::sum_squares(t->data);
  return std::sqrt(total);
}

Gradients clip_gradients(Gradients g, double c) {
  if (!(c > 0.0)) throw Error(ErrorCode::kInvalidConfig, "clip threshold must be positive");
  for (const auto& [name, t] : g.arrays()) {
    for (double v : t->data) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kNonFiniteGradient, "non-finite entry in " + name);
      }
    }
  }
  const double norm = global_norm(g);
  if (!std::isfinite(norm)) {
    throw Error(ErrorCode::kNonFiniteGradient, "gradient norm overflows");
  }
  double divisor = std::max(1.0, norm / c);
  if (divisor == 1.0) return g;

  const Gradients original = g;
  for (;;) {
    auto dst = g.arrays();
    const auto src = original.arrays();
    for (std::size_t a = 0; a < dst.size(); ++a) {
      const auto& in = src[a].second->data;
      auto& out = dst[a].second->data;
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] / divisor;
    }
    // Rounding can leave the norm a few ulps above c; nudge until it is not.
    if (global_norm(g) <= c) return g;
    divisor = std::nextafter(divisor, INFINITY);
  }
}

ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double lr) {
  if (!params.same_shape(grads)) {
    throw Error(ErrorCode::kShapeMismatch, "gradients do not match parameters");
  }
  ModelParams out = params;
  auto dst = out.arrays();
  const auto src = grads.arrays();
  for (std::size_t a = 0; a < dst.size(); ++a) {
    auto& p = dst[a].second->data;
    const auto& g = src[a].second->data;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = p[i] - lr * g[i];
  }
  return out;
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const StepRecord& s : steps) {
    out += nlohmann::json{{"step", s.step},
                          {"lr", s.lr},
                          {"loss", s.loss},
                          {"grad_norm_pre_clip", s.grad_norm},
                          {"clipped", s.clipped}}
               .dump();
    out.push_back('\n');
  }
  return out;
}

nlohmann::json TrainLog::summary() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const EpochRecord& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"step", e.step},
                           {"heldout_perplexity", e.heldout_perplexity}});
  }
  nlohmann::json s = {{"steps", steps.size()}, {"epochs", epochs_json}};
  if (!steps.empty()) {
    s["first_loss"] = steps.front().loss;
    s["last_loss"] = steps.back().loss;
  }
  return s;
}

nn::Batch make_causal_batch(std::span<const Example> examples) {
  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(examples.size());
  bool any_mask = false;
  for (const Example& e : examples) {
    seqs.push_back(e.tokens);
    any_mask = any_mask || !e.loss_mask.empty();
  }
  nn::Batch batch = nn::Batch::from_sequences(seqs);
  if (any_mask) {
    batch.loss_mask.assign(batch.rows * batch.seq_len, 0);
    for (std::size_t r = 0; r < examples.size(); ++r) {
      const Example& e = examples[r];
      for (std::size_t t = 0; t < e.tokens.size(); ++t) {
        batch.loss_mask[batch.index(r, t)] = e.loss_mask.empty() ? 1 : e.loss_mask[t];
      }
    }
  }
  return batch;
}

nn::Batch make_mlm_batch(std::span<const Example> examples, std::size_t vocab_size,
                         double mask_rate, Rng& rng) {
  std::vector<std::vector<TokenId>> seqs;
  for (const Example& e : examples) seqs.push_back(e.tokens);
  nn::Batch batch = nn::Batch::from_sequences(seqs);

  std::vector<std::pair<std::size_t, std::size_t>> eligible;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t t = 0; t < seqs[r].size(); ++t) {
      if (TokenizerModel::is_special(seqs[r][t])) continue;
      eligible.emplace_back(r, t);
      if (rng.uniform() < mask_rate) batch.masked.push_back({r, t, seqs[r][t]});
    }
  }
  if (batch.masked.empty()) {
    if (eligible.empty()) {
      throw Error(ErrorCode::kNoMaskedPositions, "batch has no maskable tokens");
    }
    const auto [r, t] = eligible[rng.below(eligible.size())];
    batch.masked.push_back({r, t, seqs[r][t]});
  }
  const std::size_t first_regular = SpecialTokens::kCount;
  for (const nn::MaskedTarget& m : batch.masked) {
    const double u = rng.uniform();
    TokenId& slot = batch.tokens[batch.index(m.row, m.position)];
    if (u < 0.8) {
      slot = SpecialTokens::kMask;
    } else if (u < 0.9) {
      slot = static_cast<TokenId>(first_regular + rng.below(vocab_size - first_regular));
    }
  }
  return batch;
}

double heldout_perplexity(const ModelParams& params, const ArchConfig& arch,
                          Objective objective, std::span<const Example> examples,
                          double mask_rate) {
  ArchConfig head_arch = arch;
  head_arch.head = objective == Objective::kMlm ? nn::Head::kMlm : nn::Head::kCausal;
  std::vector<Example> data = truncated(examples, arch.max_seq_len);
  std::erase_if(data, [&](const Example& e) { return !has_target(e, objective); });
  if (data.empty()) throw Error(ErrorCode::kEmptyTestSet, "no scorable held-out examples");

  Rng rng(kHeldoutMaskSeed);
  double total_nll = 0.0;
  std::size_t total_count = 0;
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    const std::span<const Example> chunk(data.data() + start,
                                         std::min(kEvalBatch, data.size() - start));
    const nn::Batch batch = objective == Objective::kMlm
                                ? make_mlm_batch(chunk, arch.vocab_size, mask_rate, rng)
                                : make_causal_batch(chunk);
    const nn::ForwardResult fr = nn::forward(params, head_arch, batch);
    const nn::LossResult lr = objective == Objective::kMlm
                                  ? nn::loss_mlm(fr.output, batch, arch.vocab_size)
                                  : nn::loss_causal(fr.output, batch, arch.vocab_size);
    total_nll += lr.loss * static_cast<double>(lr.count);
    total_count += lr.count;
  }
  return nn::perplexity(total_nll / static_cast<double>(total_count));
}

FitResult fit(ModelParams params, const ArchConfig& arch, const TrainConfig& cfg,
              Objective objective, std::span<const Example> data,
              const FitOptions& options) {
  cfg.validate();
  arch.validate();
  if (!params.same_shape(ModelParams::zeros(arch))) {
    throw Error(ErrorCode::kShapeMismatch, "parameters do not match the architecture");
  }
  FitResult result{std::move(params), {}};
  if (cfg.total_steps == 0) return result;

  std::vector<Example> examples = truncated(data, arch.max_seq_len);
  std::erase_if(examples, [&](const Example& e) { return !has_target(e, objective); });
  if (examples.empty()) {
    throw Error(ErrorCode::kEmptyTrainingSet, "no trainable examples");
  }
  ArchConfig head_arch = arch;
  head_arch.head = objective == Objective::kMlm ? nn::Head::kMlm : nn::Head::kCausal;

  const auto score_heldout = [&](std::size_t epoch, std::size_t step) {
    if (options.heldout.empty()) return;
    result.log.epochs.push_back(
        {epoch, step,
         heldout_perplexity(result.params, arch, objective, options.heldout,
                            cfg.mask_rate)});
  };

  Rng shuffle_rng(derive_seed(cfg.seed, kShuffleStream));
  Rng mask_rng(derive_seed(cfg.seed, kMaskStream));
  std::vector<std::size_t> order(examples.size());
  std::size_t cursor = order.size();
  std::size_t epoch = 0;
  std::vector<Example> batch_examples;
  std::optional<Gradients> velocity;
  if (cfg.momentum > 0.0) velocity = ModelParams::zeros(arch);

  score_heldout(0, 0);
  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    if (cursor >= order.size()) {
      if (epoch > 0) score_heldout(epoch, step);
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[shuffle_rng.below(i)]);
      }
      cursor = 0;
      ++epoch;
    }
    batch_examples.clear();
    for (std::size_t b = 0; b < cfg.batch_size && cursor < order.size(); ++b) {
      batch_examples.push_back(examples[order[cursor++]]);
    }

    const nn::Batch batch =
        objective == Objective::kMlm
            ? make_mlm_batch(batch_examples, arch.vocab_size, cfg.mask_rate, mask_rng)
            : make_causal_batch(batch_examples);
    const nn::DropoutConfig dropout{cfg.keep_prob,
                                    derive_seed(cfg.seed ^ kDropoutStream, step), true};
    const nn::ForwardResult fr = nn::forward(result.params, head_arch, batch, dropout);
    const nn::LossResult loss = objective == Objective::kMlm
                                    ? nn::loss_mlm(fr.output, batch, arch.vocab_size)
                                    : nn::loss_causal(fr.output, batch, arch.vocab_size);
    Gradients grads = nn::backward(result.params, head_arch, fr.cache, loss.logit_grad);
    const double norm = global_norm(grads);
    grads = clip_gradients(std::move(grads), cfg.clip_c);
    const double lr = lr_at(cfg, step);

    auto p_arrays = result.params.arrays();
    const auto g_arrays = grads.arrays();
    std::vector<std::pair<std::string, nn::Tensor*>> v_arrays;
    if (velocity) v_arrays = velocity->arrays();
    for (std::size_t a = 0; a < p_arrays.size(); ++a) {
      auto& p = p_arrays[a].second->data;
      const auto& g = g_arrays[a].second->data;
      if (cfg.weight_decay > 0.0) kernels::scale(1.0 - lr * cfg.weight_decay, p);
      if (velocity) {
        auto& v = v_arrays[a].second->data;
        kernels::scale(cfg.momentum, v);
        kernels::axpy(1.0, g, v);
        kernels::axpy(-lr, v, p);
      } else {
        kernels::axpy(-lr, g, p);
      }
    }

    result.log.steps.push_back({step, lr, loss.loss, norm, norm > cfg.clip_c});
    const bool last = step + 1 == cfg.total_steps;
    if (options.on_checkpoint &&
        (last || (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0))) {
      options.on_checkpoint(step + 1, result.params);
    }
  }
  score_heldout(epoch, cfg.total_steps);
  return result;
}

}  // namespace medqa::train
