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

#ifndef MEDQA_NN_H_
#define MEDQA_NN_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "medqa/tokenizer.h"

namespace medqa::nn {

// Output head. Causal attends to positions <= t only; MLM and Embedding
// attend bidirectionally. Embedding returns mean-pooled final states.
enum class Head { kMlm, kCausal, kEmbedding };

std::string_view head_name(Head head);
Head parse_head(std::string_view name);

struct ArchConfig {
  std::size_t vocab_size = kDefaultVocabSize;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 256;
  std::size_t max_seq_len = 128;
  Head head = Head::kCausal;

  // Throws InvalidConfig.
  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

nlohmann::json to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const nlohmann::json& j);

// Dense row-major array.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);

  std::size_t size() const { return data.size(); }
  std::span<double> row(std::size_t i) {
    const std::size_t width = shape.back();
    return {data.data() + i * width, width};
  }
  std::span<const double> row(std::size_t i) const {
    const std::size_t width = shape.back();
    return {data.data() + i * width, width};
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Pre-layer-norm block: x += Attn(LN1(x)); x += FFN(LN2(x)). Projections map
// row vectors as y = x W with W stored [in][out]. The output projection is
// tied to the token embedding.
struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor w_q, w_k, w_v, w_o;
  Tensor ln2_gain, ln2_bias;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ModelParams {
  Tensor token_embedding;     // [vocab, d_model]
  Tensor position_embedding;  // [max_seq_len, d_model]
  std::vector<LayerParams> layers;
  Tensor final_ln_gain, final_ln_bias;

  // All-zero arrays shaped for arch (layer-norm gains included).
  static ModelParams zeros(const ArchConfig& arch);
  // N(0, 0.02^2) matrices and embeddings, unit gains, zero biases.
  static ModelParams initialize(const ArchConfig& arch, std::uint64_t seed);

  // Every array with a stable dotted name, in serialization order.
  std::vector<std::pair<std::string, Tensor*>> arrays();
  std::vector<std::pair<std::string, const Tensor*>> arrays() const;

  bool same_shape(const ModelParams& other) const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

using Gradients = ModelParams;

struct MaskedTarget {
  std::size_t row;
  std::size_t position;
  TokenId original;

  friend bool operator==(const MaskedTarget&, const MaskedTarget&) = default;
};

struct Batch {
  std::size_t rows = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> tokens;   // rows * seq_len
  std::vector<std::uint8_t> valid;  // 1 for real tokens, 0 for padding
  // MLM: positions whose original ids are predicted.
  std::vector<MaskedTarget> masked;
  // Causal: when non-empty, only positions t with loss_mask[t] != 0 are
  // counted as next-token targets.
  std::vector<std::uint8_t> loss_mask;

  // Right-pads each sequence with PAD to the longest one.
  static Batch from_sequences(std::span<const std::vector<TokenId>> sequences);

  std::size_t index(std::size_t row, std::size_t t) const { return row * seq_len + t; }

  // Throws ShapeMismatch.
  void validate(const ArchConfig& arch) const;
};

// Inverted dropout: keep_prob is the probability of keeping an activation.
struct DropoutConfig {
  double keep_prob = 1.0;
  std::uint64_t seed = 0;
  bool train_mode = false;

  bool active() const { return train_mode && keep_prob < 1.0; }
};

// Returns a copy with each entry zeroed with probability 1 - keep_prob and the
// survivors divided by keep_prob; identity in eval mode or when keep_prob = 1.
std::vector<double> dropout_apply(std::span<const double> activations,
                                  const DropoutConfig& config);

// Per-row activations saved by forward for the backward pass.
struct RowCache;
struct ForwardCache {
  ArchConfig arch;
  std::size_t rows = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> valid;
  std::vector<RowCache> row_caches;

  ForwardCache();
  ~ForwardCache();
  ForwardCache(ForwardCache&&) noexcept;
  ForwardCache& operator=(ForwardCache&&) noexcept;
};

struct ForwardResult {
  // Logits [rows, seq_len, vocab] for MLM/Causal, pooled states
  // [rows, d_model] for Embedding.
  std::vector<double> output;
  ForwardCache cache;
};

ForwardResult forward(const ModelParams& params, const ArchConfig& arch,
                      const Batch& batch, const DropoutConfig& dropout = {});

// Exact gradients of a scalar loss given its gradient w.r.t. forward's output.
// Throws CacheMismatch when the cache or gradient does not match.
Gradients backward(const ModelParams& params, const ArchConfig& arch,
                   const ForwardCache& cache, std::span<const double> output_grad);

struct LossResult {
  double loss = 0.0;             // mean negative log-likelihood
  std::vector<double> logit_grad;  // same layout as the logits
  std::size_t count = 0;         // number of predicted positions
};

// Mean over masked positions of -log softmax(logits)[original].
// Throws NoMaskedPositions.
LossResult loss_mlm(std::span<const double> logits, const Batch& batch,
                    std::size_t vocab_size);

// Mean over valid positions t >= 1 of -log softmax(logits[t-1])[token t].
// Throws SequenceTooShort when no such position exists.
LossResult loss_causal(std::span<const double> logits, const Batch& batch,
                       std::size_t vocab_size);

double perplexity(double mean_nll);

// log-softmax of one row, stabilized by the row maximum.
void log_softmax(std::span<const double> logits, std::span<double> out);

inline constexpr std::size_t kDefaultMaxLength = 100;

// Appends argmax tokens (ties to the smallest id) until EOS or until the
// sequence holds max_length tokens. Throws WrongHead unless Causal.
std::vector<TokenId> greedy_generate(const ModelParams& params, const ArchConfig& arch,
                                     std::span<const TokenId> prompt,
                                     std::size_t max_length = kDefaultMaxLength);

// Mean-pooled final hidden state of one sequence under an Embedding head.
std::vector<double> embed(const ModelParams& params, const ArchConfig& arch,
                          std::span<const TokenId> tokens);

// Checkpoint: versioned tensor file carrying the architecture, every
// parameter array and caller metadata; save -> load is bit-exact.
std::string save_checkpoint(const ModelParams& params, const ArchConfig& arch,
                            const nlohmann::json& metadata);

struct Checkpoint {
  ModelParams params;
  ArchConfig arch;
  nlohmann::json metadata;
};
Checkpoint load_checkpoint(std::string_view bytes);

}  // namespace medqa::nn

#endif  // MEDQA_NN_H_
