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

#include "medqa/nn.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "medqa/error.h"
#include "medqa/kernels.h"
#include "medqa/random.h"
#include "medqa/tensor_file.h"

namespace medqa::nn {

struct LayerCache {
  std::vector<double> x_in;
  std::vector<double> ln1_xhat, ln1_rstd, a;
  std::vector<double> q, k, v;
  std::vector<double> probs;  // [heads, T, T]
  std::vector<double> ctx;
  std::vector<double> attn_mask;
  std::vector<double> ln2_xhat, ln2_rstd, b;
  std::vector<double> f1, g;
  std::vector<double> ff_mask;
};

struct RowCache {
  std::vector<double> emb_mask;
  std::vector<LayerCache> layers;
  std::vector<double> final_xhat, final_rstd, y;
};

ForwardCache::ForwardCache() = default;
ForwardCache::~ForwardCache() = default;
ForwardCache::ForwardCache(ForwardCache&&) noexcept = default;
ForwardCache& ForwardCache::operator=(ForwardCache&&) noexcept = default;

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

// y[t] = bias + x[t] W for t in [0, rows); W is [in][out].
void linear(std::span<const double> x, std::size_t rows, const Tensor& w,
            const Tensor* bias, std::span<double> y) {
  const std::size_t in = w.shape[0];
  const std::size_t out = w.shape[1];
  for (std::size_t t = 0; t < rows; ++t) {
    std::span<double> yt = y.subspan(t * out, out);
    if (bias != nullptr) {
      std::copy(bias->data.begin(), bias->data.end(), yt.begin());
    } else {
      std::fill(yt.begin(), yt.end(), 0.0);
    }
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = x[t * in + i];
      if (xi != 0.0) kernels::axpy(xi, w.row(i), yt);
    }
  }
}

// Accumulates dW, dbias and dx for linear().
void linear_backward(std::span<const double> x, std::span<const double> dy,
                     std::size_t rows, const Tensor& w, Tensor& dw, Tensor* dbias,
                     std::span<double> dx) {
  const std::size_t in = w.shape[0];
  const std::size_t out = w.shape[1];
  for (std::size_t t = 0; t < rows; ++t) {
    std::span<const double> dyt = dy.subspan(t * out, out);
    if (dbias != nullptr) kernels::axpy(1.0, dyt, dbias->data);
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = x[t * in + i];
      if (xi != 0.0) kernels::axpy(xi, dyt, dw.row(i));
      dx[t * in + i] += kernels::dot(dyt, w.row(i));
    }
  }
}

void layer_norm(std::span<const double> x, std::size_t rows, std::size_t d,
                const Tensor& gain, const Tensor& bias, std::vector<double>& xhat,
                std::vector<double>& rstd, std::span<double> y) {
  xhat.resize(rows * d);
  rstd.resize(rows);
  for (std::size_t t = 0; t < rows; ++t) {
    const double* xt = x.data() + t * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += xt[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xt[i] - mean) * (xt[i] - mean);
    var /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[t] = r;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (xt[i] - mean) * r;
      xhat[t * d + i] = h;
      y[t * d + i] = h * gain.data[i] + bias.data[i];
    }
  }
}

// dx += LN'(dy); dgain, dbias accumulated.
void layer_norm_backward(std::span<const double> dy, std::size_t rows, std::size_t d,
                         const std::vector<double>& xhat, const std::vector<double>& rstd,
                         const Tensor& gain, Tensor& dgain, Tensor& dbias,
                         std::span<double> dx) {
  std::vector<double> dxhat(d);
  for (std::size_t t = 0; t < rows; ++t) {
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double g = dy[t * d + i];
      const double h = xhat[t * d + i];
      dgain.data[i] += g * h;
      dbias.data[i] += g;
      dxhat[i] = g * gain.data[i];
      mean_dxhat += dxhat[i];
      mean_dxhat_xhat += dxhat[i] * h;
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) {
      dx[t * d + i] +=
          rstd[t] * (dxhat[i] - mean_dxhat - xhat[t * d + i] * mean_dxhat_xhat);
    }
  }
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + th) +
         0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// Inverted-dropout multipliers (0 or 1/keep) drawn from a dedicated stream.
std::vector<double> dropout_mask(std::size_t n, const DropoutConfig& cfg,
                                 std::uint64_t stream) {
  std::vector<double> mask(n);
  Rng rng(derive_seed(cfg.seed, stream));
  const double survivor = 1.0 / cfg.keep_prob;
  for (double& m : mask) m = rng.uniform() < cfg.keep_prob ? survivor : 0.0;
  return mask;
}

void apply_mask(std::span<double> x, const std::vector<double>& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
}

bool attends(const ForwardCache& c, std::size_t row, std::size_t i, std::size_t j) {
  if (!c.valid[row * c.seq_len + j]) return false;
  return c.arch.head != Head::kCausal || j <= i;
}

std::size_t count_valid(const std::uint8_t* valid, std::size_t n) {
  std::size_t count = 0;
  for (std::size_t t = 0; t < n; ++t) count += valid[t] ? 1 : 0;
  return count;
}

Tensor normal_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = kInitStd * rng.normal();
  return t;
}

Tensor filled_tensor(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

}  // namespace

std::string_view head_name(Head head) {
  switch (head) {
    case Head::kMlm: return "mlm";
    case Head::kCausal: return "causal";
    case Head::kEmbedding: return "embedding";
  }
  return "causal";
}

Head parse_head(std::string_view name) {
  if (name == "mlm") return Head::kMlm;
  if (name == "causal") return Head::kCausal;
  if (name == "embedding") return Head::kEmbedding;
  throw Error(ErrorCode::kInvalidConfig, "unknown head: " + std::string(name));
}

void ArchConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0) {
    throw Error(ErrorCode::kInvalidConfig, "architecture dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw Error(ErrorCode::kInvalidConfig, "d_model must be divisible by n_heads");
  }
  if (max_seq_len < 2) {
    throw Error(ErrorCode::kInvalidConfig, "max_seq_len must be at least 2");
  }
}

nlohmann::json to_json(const ArchConfig& arch) {
  return {{"vocab_size", arch.vocab_size}, {"d_model", arch.d_model},
          {"n_heads", arch.n_heads},       {"n_layers", arch.n_layers},
          {"d_ff", arch.d_ff},             {"max_seq_len", arch.max_seq_len},
          {"head", head_name(arch.head)}};
}

ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig arch;
  arch.vocab_size = j.at("vocab_size").get<std::size_t>();
  arch.d_model = j.at("d_model").get<std::size_t>();
  arch.n_heads = j.at("n_heads").get<std::size_t>();
  arch.n_layers = j.at("n_layers").get<std::size_t>();
  arch.d_ff = j.at("d_ff").get<std::size_t>();
  arch.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  arch.head = parse_head(j.at("head").get<std::string>());
  arch.validate();
  return arch;
}

Tensor::Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  data.assign(n, 0.0);
}

ModelParams ModelParams::zeros(const ArchConfig& arch) {
  arch.validate();
  const std::size_t d = arch.d_model;
  ModelParams p;
  p.token_embedding = Tensor({arch.vocab_size, d});
  p.position_embedding = Tensor({arch.max_seq_len, d});
  p.layers.resize(arch.n_layers);
  for (LayerParams& l : p.layers) {
    l.ln1_gain = Tensor({d});
    l.ln1_bias = Tensor({d});
    l.w_q = Tensor({d, d});
    l.w_k = Tensor({d, d});
    l.w_v = Tensor({d, d});
    l.w_o = Tensor({d, d});
    l.ln2_gain = Tensor({d});
    l.ln2_bias = Tensor({d});
    l.ff_w1 = Tensor({d, arch.d_ff});
    l.ff_b1 = Tensor({arch.d_ff});
    l.ff_w2 = Tensor({arch.d_ff, d});
    l.ff_b2 = Tensor({d});
  }
  p.final_ln_gain = Tensor({d});
  p.final_ln_bias = Tensor({d});
  return p;
}

ModelParams ModelParams::initialize(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  const std::size_t d = arch.d_model;
  Rng rng(seed);
  ModelParams p;
  p.token_embedding = normal_tensor({arch.vocab_size, d}, rng);
  p.position_embedding = normal_tensor({arch.max_seq_len, d}, rng);
  p.layers.resize(arch.n_layers);
  for (LayerParams& l : p.layers) {
    l.ln1_gain = filled_tensor({d}, 1.0);
    l.ln1_bias = Tensor({d});
    l.w_q = normal_tensor({d, d}, rng);
    l.w_k = normal_tensor({d, d}, rng);
    l.w_v = normal_tensor({d, d}, rng);
    l.w_o = normal_tensor({d, d}, rng);
    l.ln2_gain = filled_tensor({d}, 1.0);
    l.ln2_bias = Tensor({d});
    l.ff_w1 = normal_tensor({d, arch.d_ff}, rng);
    l.ff_b1 = Tensor({arch.d_ff});
    l.ff_w2 = normal_tensor({arch.d_ff, d}, rng);
    l.ff_b2 = Tensor({d});
  }
  p.final_ln_gain = filled_tensor({d}, 1.0);
  p.final_ln_bias = Tensor({d});
  return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::arrays() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("token_embedding", &token_embedding);
  out.emplace_back("position_embedding", &position_embedding);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string prefix = "layers." + std::to_string(i) + ".";
    LayerParams& l = layers[i];
    out.emplace_back(prefix + "ln1.gain", &l.ln1_gain);
    out.emplace_back(prefix + "ln1.bias", &l.ln1_bias);
    out.emplace_back(prefix + "attn.w_q", &l.w_q);
    out.emplace_back(prefix + "attn.w_k", &l.w_k);
    out.emplace_back(prefix + "attn.w_v", &l.w_v);
    out.emplace_back(prefix + "attn.w_o", &l.w_o);
    out.emplace_back(prefix + "ln2.gain", &l.ln2_gain);
    out.emplace_back(prefix + "ln2.bias", &l.ln2_bias);
    out.emplace_back(prefix + "ff.w1", &l.ff_w1);
    out.emplace_back(prefix + "ff.b1", &l.ff_b1);
    out.emplace_back(prefix + "ff.w2", &l.ff_w2);
    out.emplace_back(prefix + "ff.b2", &l.ff_b2);
  }
  out.emplace_back("final_ln.gain", &final_ln_gain);
  out.emplace_back("final_ln.bias", &final_ln_bias);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::arrays() const {
  auto mutable_arrays = const_cast<ModelParams*>(this)->arrays();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mutable_arrays.size());
  for (auto& [name, t] : mutable_arrays) out.emplace_back(std::move(name), t);
  return out;
}

bool ModelParams::same_shape(const ModelParams& other) const {
  const auto a = arrays();
  const auto b = other.arrays();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].second->shape != b[i].second->shape) return false;
  }
  return true;
}

Batch Batch::from_sequences(std::span<const std::vector<TokenId>> sequences) {
  Batch b;
  b.rows = sequences.size();
  for (const auto& s : sequences) b.seq_len = std::max(b.seq_len, s.size());
  b.tokens.assign(b.rows * b.seq_len, SpecialTokens::kPad);
  b.valid.assign(b.rows * b.seq_len, 0);
  for (std::size_t r = 0; r < b.rows; ++r) {
    for (std::size_t t = 0; t < sequences[r].size(); ++t) {
      b.tokens[b.index(r, t)] = sequences[r][t];
      b.valid[b.index(r, t)] = 1;
    }
  }
  return b;
}

void Batch::validate(const ArchConfig& arch) const {
  const auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kShapeMismatch, what);
  };
  if (rows == 0 || seq_len == 0) fail("batch is empty");
  if (seq_len > arch.max_seq_len) {
    fail("sequence length " + std::to_string(seq_len) + " exceeds max_seq_len " +
         std::to_string(arch.max_seq_len));
  }
  if (tokens.size() != rows * seq_len || valid.size() != rows * seq_len) {
    fail("token/validity arrays do not match rows x seq_len");
  }
  if (!loss_mask.empty() && loss_mask.size() != rows * seq_len) {
    fail("loss mask does not match rows x seq_len");
  }
  for (TokenId id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= arch.vocab_size) {
      fail("token id " + std::to_string(id) + " outside the vocabulary");
    }
  }
  for (const MaskedTarget& m : masked) {
    if (m.row >= rows || m.position >= seq_len || !valid[index(m.row, m.position)]) {
      fail("masked position does not index a real token");
    }
    if (m.original < 0 || static_cast<std::size_t>(m.original) >= arch.vocab_size) {
      fail("masked original id outside the vocabulary");
    }
  }
}

std::vector<double> dropout_apply(std::span<const double> activations,
                                  const DropoutConfig& config) {
  if (config.keep_prob <= 0.0 || config.keep_prob > 1.0) {
    throw Error(ErrorCode::kInvalidConfig, "keep_prob must lie in (0, 1]");
  }
  std::vector<double> out(activations.begin(), activations.end());
  if (!config.active()) return out;
  Rng rng(config.seed);
  for (double& v : out) v = rng.uniform() < config.keep_prob ? v / config.keep_prob : 0.0;
  return out;
}

ForwardResult forward(const ModelParams& params, const ArchConfig& arch,
                      const Batch& batch, const DropoutConfig& dropout) {
  arch.validate();
  batch.validate(arch);
  if (params.token_embedding.shape != std::vector<std::size_t>{arch.vocab_size, arch.d_model} ||
      params.layers.size() != arch.n_layers ||
      params.position_embedding.shape[0] != arch.max_seq_len ||
      (arch.n_layers > 0 && params.layers[0].ff_b1.size() != arch.d_ff)) {
    throw Error(ErrorCode::kShapeMismatch, "parameters do not match the architecture");
  }
  if (dropout.keep_prob <= 0.0 || dropout.keep_prob > 1.0) {
    throw Error(ErrorCode::kInvalidConfig, "keep_prob must lie in (0, 1]");
  }

  const std::size_t T = batch.seq_len;
  const std::size_t d = arch.d_model;
  const std::size_t H = arch.n_heads;
  const std::size_t dh = arch.head_dim();
  const std::size_t V = arch.vocab_size;
  const std::size_t F = arch.d_ff;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.arch = arch;
  cache.rows = batch.rows;
  cache.seq_len = T;
  cache.tokens = batch.tokens;
  cache.valid = batch.valid;
  cache.row_caches.resize(batch.rows);

  const bool emit_logits = arch.head != Head::kEmbedding;
  result.output.assign(emit_logits ? batch.rows * T * V : batch.rows * d, 0.0);

  for (std::size_t r = 0; r < batch.rows; ++r) {
    RowCache& rc = cache.row_caches[r];
    const std::uint64_t stream_base = static_cast<std::uint64_t>(r) << 16;

    std::vector<double> x(T * d);
    for (std::size_t t = 0; t < T; ++t) {
      const auto e = params.token_embedding.row(batch.tokens[batch.index(r, t)]);
      const auto p = params.position_embedding.row(t);
      for (std::size_t i = 0; i < d; ++i) x[t * d + i] = e[i] + p[i];
    }
    if (dropout.active()) {
      rc.emb_mask = dropout_mask(T * d, dropout, stream_base);
      apply_mask(x, rc.emb_mask);
    }

    rc.layers.resize(arch.n_layers);
    for (std::size_t l = 0; l < arch.n_layers; ++l) {
      const LayerParams& lp = params.layers[l];
      LayerCache& lc = rc.layers[l];
      lc.x_in = x;

      lc.a.assign(T * d, 0.0);
      layer_norm(x, T, d, lp.ln1_gain, lp.ln1_bias, lc.ln1_xhat, lc.ln1_rstd, lc.a);
      lc.q.assign(T * d, 0.0);
      lc.k.assign(T * d, 0.0);
      lc.v.assign(T * d, 0.0);
      linear(lc.a, T, lp.w_q, nullptr, lc.q);
      linear(lc.a, T, lp.w_k, nullptr, lc.k);
      linear(lc.a, T, lp.w_v, nullptr, lc.v);

      lc.probs.assign(H * T * T, 0.0);
      lc.ctx.assign(T * d, 0.0);
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < T; ++i) {
          double* prow = lc.probs.data() + (h * T + i) * T;
          const std::span<const double> qi(lc.q.data() + i * d + h * dh, dh);
          double max_score = -INFINITY;
          for (std::size_t j = 0; j < T; ++j) {
            if (!attends(cache, r, i, j)) continue;
            const std::span<const double> kj(lc.k.data() + j * d + h * dh, dh);
            prow[j] = kernels::dot(qi, kj) * scale;
            max_score = std::max(max_score, prow[j]);
          }
          if (max_score == -INFINITY) continue;  // nothing to attend to
          double denom = 0.0;
          for (std::size_t j = 0; j < T; ++j) {
            if (!attends(cache, r, i, j)) continue;
            prow[j] = std::exp(prow[j] - max_score);
            denom += prow[j];
          }
          const std::span<double> ci(lc.ctx.data() + i * d + h * dh, dh);
          for (std::size_t j = 0; j < T; ++j) {
            if (!attends(cache, r, i, j)) continue;
            prow[j] /= denom;
            kernels::axpy(prow[j], std::span<const double>(lc.v.data() + j * d + h * dh, dh),
                          ci);
          }
        }
      }

      std::vector<double> attn_out(T * d);
      linear(lc.ctx, T, lp.w_o, nullptr, attn_out);
      if (dropout.active()) {
        lc.attn_mask = dropout_mask(T * d, dropout, stream_base | (1 + 2 * l));
        apply_mask(attn_out, lc.attn_mask);
      }
      for (std::size_t i = 0; i < T * d; ++i) x[i] += attn_out[i];

      lc.b.assign(T * d, 0.0);
      layer_norm(x, T, d, lp.ln2_gain, lp.ln2_bias, lc.ln2_xhat, lc.ln2_rstd, lc.b);
      lc.f1.assign(T * F, 0.0);
      linear(lc.b, T, lp.ff_w1, &lp.ff_b1, lc.f1);
      lc.g.resize(T * F);
      for (std::size_t i = 0; i < T * F; ++i) lc.g[i] = gelu(lc.f1[i]);
      std::vector<double> ff_out(T * d);
      linear(lc.g, T, lp.ff_w2, &lp.ff_b2, ff_out);
      if (dropout.active()) {
        lc.ff_mask = dropout_mask(T * d, dropout, stream_base | (2 + 2 * l));
        apply_mask(ff_out, lc.ff_mask);
      }
      for (std::size_t i = 0; i < T * d; ++i) x[i] += ff_out[i];
    }

    rc.y.assign(T * d, 0.0);
    layer_norm(x, T, d, params.final_ln_gain, params.final_ln_bias, rc.final_xhat,
               rc.final_rstd, rc.y);

    if (emit_logits) {
      for (std::size_t t = 0; t < T; ++t) {
        const std::span<const double> yt(rc.y.data() + t * d, d);
        double* out = result.output.data() + (r * T + t) * V;
        for (std::size_t v = 0; v < V; ++v) {
          out[v] = kernels::dot(yt, params.token_embedding.row(v));
        }
      }
    } else {
      const std::size_t n = count_valid(batch.valid.data() + r * T, T);
      if (n == 0) continue;
      const std::span<double> pooled(result.output.data() + r * d, d);
      for (std::size_t t = 0; t < T; ++t) {
        if (!batch.valid[batch.index(r, t)]) continue;
        kernels::axpy(1.0 / static_cast<double>(n),
                      std::span<const double>(rc.y.data() + t * d, d), pooled);
      }
    }
  }
  return result;
}

Gradients backward(const ModelParams& params, const ArchConfig& arch,
                   const ForwardCache& cache, std::span<const double> output_grad) {
  if (!(cache.arch == arch) || cache.row_caches.size() != cache.rows ||
      cache.tokens.size() != cache.rows * cache.seq_len) {
    throw Error(ErrorCode::kCacheMismatch, "cache was produced for a different model");
  }
  const std::size_t T = cache.seq_len;
  const std::size_t d = arch.d_model;
  const std::size_t H = arch.n_heads;
  const std::size_t dh = arch.head_dim();
  const std::size_t V = arch.vocab_size;
  const std::size_t F = arch.d_ff;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool logits_head = arch.head != Head::kEmbedding;
  const std::size_t expected = logits_head ? cache.rows * T * V : cache.rows * d;
  if (output_grad.size() != expected) {
    throw Error(ErrorCode::kCacheMismatch, "output gradient has the wrong size");
  }

  Gradients grads = ModelParams::zeros(arch);
  std::vector<double> dx(T * d);
  for (std::size_t r = 0; r < cache.rows; ++r) {
    const RowCache& rc = cache.row_caches[r];
    if (rc.layers.size() != arch.n_layers) {
      throw Error(ErrorCode::kCacheMismatch, "cache layer count mismatch");
    }
    std::vector<double> dy(T * d, 0.0);
    if (logits_head) {
      for (std::size_t t = 0; t < T; ++t) {
        const double* g = output_grad.data() + (r * T + t) * V;
        const std::span<const double> yt(rc.y.data() + t * d, d);
        const std::span<double> dyt(dy.data() + t * d, d);
        for (std::size_t v = 0; v < V; ++v) {
          if (g[v] == 0.0) continue;
          kernels::axpy(g[v], params.token_embedding.row(v), dyt);
          kernels::axpy(g[v], yt, grads.token_embedding.row(v));
        }
      }
    } else {
      const std::size_t n = count_valid(cache.valid.data() + r * T, T);
      if (n > 0) {
        const std::span<const double> gp(output_grad.data() + r * d, d);
        for (std::size_t t = 0; t < T; ++t) {
          if (!cache.valid[r * T + t]) continue;
          kernels::axpy(1.0 / static_cast<double>(n), gp,
                        std::span<double>(dy.data() + t * d, d));
        }
      }
    }

    std::fill(dx.begin(), dx.end(), 0.0);
    layer_norm_backward(dy, T, d, rc.final_xhat, rc.final_rstd, params.final_ln_gain,
                        grads.final_ln_gain, grads.final_ln_bias, dx);

    for (std::size_t li = arch.n_layers; li-- > 0;) {
      const LayerParams& lp = params.layers[li];
      LayerParams& lg = grads.layers[li];
      const LayerCache& lc = rc.layers[li];

      // Feed-forward sublayer; dx is the gradient of the block output.
      std::vector<double> dff(dx);
      apply_mask(dff, lc.ff_mask);
      std::vector<double> dg(T * F, 0.0);
      linear_backward(lc.g, dff, T, lp.ff_w2, lg.ff_w2, &lg.ff_b2, dg);
      for (std::size_t i = 0; i < T * F; ++i) dg[i] *= gelu_grad(lc.f1[i]);
      std::vector<double> db(T * d, 0.0);
      linear_backward(lc.b, dg, T, lp.ff_w1, lg.ff_w1, &lg.ff_b1, db);
      layer_norm_backward(db, T, d, lc.ln2_xhat, lc.ln2_rstd, lp.ln2_gain, lg.ln2_gain,
                          lg.ln2_bias, dx);

      // Attention sublayer; dx is now the gradient of the mid-block residual.
      std::vector<double> dattn(dx);
      apply_mask(dattn, lc.attn_mask);
      std::vector<double> dctx(T * d, 0.0);
      linear_backward(lc.ctx, dattn, T, lp.w_o, lg.w_o, nullptr, dctx);

      std::vector<double> dq(T * d, 0.0), dk(T * d, 0.0), dv(T * d, 0.0);
      std::vector<double> dp(T);
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < T; ++i) {
          const double* prow = lc.probs.data() + (h * T + i) * T;
          const std::span<const double> dci(dctx.data() + i * d + h * dh, dh);
          double weighted = 0.0;
          for (std::size_t j = 0; j < T; ++j) {
            if (!attends(cache, r, i, j)) continue;
            dp[j] = kernels::dot(dci, std::span<const double>(lc.v.data() + j * d + h * dh, dh));
            weighted += prow[j] * dp[j];
            kernels::axpy(prow[j], dci, std::span<double>(dv.data() + j * d + h * dh, dh));
          }
          const std::span<const double> qi(lc.q.data() + i * d + h * dh, dh);
          const std::span<double> dqi(dq.data() + i * d + h * dh, dh);
          for (std::size_t j = 0; j < T; ++j) {
            if (!attends(cache, r, i, j)) continue;
            const double ds = prow[j] * (dp[j] - weighted) * scale;
            if (ds == 0.0) continue;
            kernels::axpy(ds, std::span<const double>(lc.k.data() + j * d + h * dh, dh), dqi);
            kernels::axpy(ds, qi, std::span<double>(dk.data() + j * d + h * dh, dh));
          }
        }
      }
      std::vector<double> da(T * d, 0.0);
      linear_backward(lc.a, dq, T, lp.w_q, lg.w_q, nullptr, da);
      linear_backward(lc.a, dk, T, lp.w_k, lg.w_k, nullptr, da);
      linear_backward(lc.a, dv, T, lp.w_v, lg.w_v, nullptr, da);
      layer_norm_backward(da, T, d, lc.ln1_xhat, lc.ln1_rstd, lp.ln1_gain, lg.ln1_gain,
                          lg.ln1_bias, dx);
    }

    apply_mask(dx, rc.emb_mask);
    for (std::size_t t = 0; t < T; ++t) {
      const std::span<const double> dxt(dx.data() + t * d, d);
      kernels::axpy(1.0, dxt, grads.token_embedding.row(cache.tokens[r * T + t]));
      kernels::axpy(1.0, dxt, grads.position_embedding.row(t));
    }
  }
  return grads;
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  double max_logit = -INFINITY;
  for (double v : logits) max_logit = std::max(max_logit, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - max_logit);
  const double lse = max_logit + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

namespace {

// Adds -log p(target) for one position and writes (softmax - onehot) / n
// into grad after the caller fixes n; here grad gets softmax - onehot.
double accumulate_nll(std::span<const double> row, TokenId target,
                      std::span<double> grad, std::vector<double>& scratch) {
  scratch.resize(row.size());
  log_softmax(row, scratch);
  for (std::size_t v = 0; v < row.size(); ++v) grad[v] += std::exp(scratch[v]);
  grad[static_cast<std::size_t>(target)] -= 1.0;
  return -scratch[static_cast<std::size_t>(target)];
}

void check_logits(std::span<const double> logits, const Batch& batch,
                  std::size_t vocab_size) {
  if (logits.size() != batch.rows * batch.seq_len * vocab_size) {
    throw Error(ErrorCode::kShapeMismatch, "logits do not match the batch");
  }
}

}  // namespace

LossResult loss_mlm(std::span<const double> logits, const Batch& batch,
                    std::size_t vocab_size) {
  check_logits(logits, batch, vocab_size);
  if (batch.masked.empty()) {
    throw Error(ErrorCode::kNoMaskedPositions, "batch has no masked positions");
  }
  LossResult result;
  result.logit_grad.assign(logits.size(), 0.0);
  std::vector<double> scratch;
  double total = 0.0;
  for (const MaskedTarget& m : batch.masked) {
    const std::size_t off = batch.index(m.row, m.position) * vocab_size;
    total += accumulate_nll(logits.subspan(off, vocab_size), m.original,
                            std::span<double>(result.logit_grad).subspan(off, vocab_size),
                            scratch);
  }
  result.count = batch.masked.size();
  const double inv = 1.0 / static_cast<double>(result.count);
  for (double& g : result.logit_grad) g *= inv;
  result.loss = total * inv;
  return result;
}

LossResult loss_causal(std::span<const double> logits, const Batch& batch,
                       std::size_t vocab_size) {
  check_logits(logits, batch, vocab_size);
  if (batch.seq_len < 2) {
    throw Error(ErrorCode::kSequenceTooShort, "causal loss needs sequences of length >= 2");
  }
  LossResult result;
  result.logit_grad.assign(logits.size(), 0.0);
  std::vector<double> scratch;
  double total = 0.0;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t t = 1; t < batch.seq_len; ++t) {
      const std::size_t here = batch.index(r, t);
      if (!batch.valid[here] || !batch.valid[here - 1]) continue;
      if (!batch.loss_mask.empty() && !batch.loss_mask[here]) continue;
      const std::size_t off = (here - 1) * vocab_size;
      total += accumulate_nll(logits.subspan(off, vocab_size), batch.tokens[here],
                              std::span<double>(result.logit_grad).subspan(off, vocab_size),
                              scratch);
      ++result.count;
    }
  }
  if (result.count == 0) {
    throw Error(ErrorCode::kSequenceTooShort, "batch has no next-token targets");
  }
  const double inv = 1.0 / static_cast<double>(result.count);
  for (double& g : result.logit_grad) g *= inv;
  result.loss = total * inv;
  return result;
}

double perplexity(double mean_nll) { return std::exp(mean_nll); }

std::vector<TokenId> greedy_generate(const ModelParams& params, const ArchConfig& arch,
                                     std::span<const TokenId> prompt,
                                     std::size_t max_length) {
  if (arch.head != Head::kCausal) {
    throw Error(ErrorCode::kWrongHead, "generation requires a causal head");
  }
  if (prompt.empty() || prompt.size() >= max_length || max_length > arch.max_seq_len) {
    throw Error(ErrorCode::kInvalidConfig,
                "need 0 < prompt length < max_length <= max_seq_len");
  }
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  const std::size_t V = arch.vocab_size;
  while (seq.size() < max_length) {
    const std::vector<std::vector<TokenId>> one{seq};
    const ForwardResult fr = forward(params, arch, Batch::from_sequences(one));
    const double* last = fr.output.data() + (seq.size() - 1) * V;
    const TokenId next = static_cast<TokenId>(std::max_element(last, last + V) - last);
    seq.push_back(next);
    if (next == SpecialTokens::kEos) break;
  }
  return seq;
}

std::vector<double> embed(const ModelParams& params, const ArchConfig& arch,
                          std::span<const TokenId> tokens) {
  ArchConfig embedding_arch = arch;
  embedding_arch.head = Head::kEmbedding;
  const std::vector<std::vector<TokenId>> one{
      std::vector<TokenId>(tokens.begin(), tokens.end())};
  return forward(params, embedding_arch, Batch::from_sequences(one)).output;
}

std::string save_checkpoint(const ModelParams& params, const ArchConfig& arch,
                            const nlohmann::json& metadata) {
  TensorFile file;
  file.kind = "checkpoint";
  file.meta = {{"arch", to_json(arch)}, {"metadata", metadata}};
  for (const auto& [name, t] : params.arrays()) {
    file.arrays.push_back({name, t->shape, t->data});
  }
  return write_tensor_file(file);
}

Checkpoint load_checkpoint(std::string_view bytes) {
  TensorFile file = read_tensor_file(bytes);
  if (file.kind != "checkpoint") {
    throw Error(ErrorCode::kFormat, "tensor file is a '" + file.kind + "', not a checkpoint");
  }
  Checkpoint ckpt;
  try {
    ckpt.arch = arch_from_json(file.meta.at("arch"));
    ckpt.metadata = file.meta.at("metadata");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("checkpoint header: ") + e.what());
  }
  ckpt.params = ModelParams::zeros(ckpt.arch);
  auto arrays = ckpt.params.arrays();
  if (arrays.size() != file.arrays.size()) {
    throw Error(ErrorCode::kFormat, "checkpoint array count does not match its architecture");
  }
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    NamedArray& src = file.arrays[i];
    if (src.name != arrays[i].first || src.shape != arrays[i].second->shape) {
      throw Error(ErrorCode::kFormat, "checkpoint array '" + src.name + "' is out of place");
    }
    arrays[i].second->data = std::move(src.values);
  }
  return ckpt;
}

}  // namespace medqa::nn
