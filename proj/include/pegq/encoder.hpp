/**
 * Copyright 2026 The pegquant Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pegq/layers.hpp"
#include "pegq/tensor.hpp"

namespace pegq {

/// Shape of a BERT-like post-norm encoder with a pooled classification head.
struct EncoderConfig {
  std::size_t layers = 4;
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_len = 32;
  std::size_t vocab = 1000;
  std::size_t classes = 2;
  std::int32_t pad_id = 0;

  std::size_t d_head() const { return d / heads; }
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct EncoderLayer {
  Linear query, key, value, output;
  LayerNorm attn_ln;
  Linear fc1, fc2;
  LayerNorm ffn_ln;
};

struct EncoderModel {
  EncoderConfig config;
  TensorF word_embeddings;      // (vocab, d)
  TensorF position_embeddings;  // (max_len, d)
  LayerNorm embedding_ln;
  std::vector<EncoderLayer> layers;
  Linear pooler;  // (d, d), tanh, applied to position 0
  Linear head;    // (classes, d)

  /// Every trainable tensor, in a fixed order, with a hierarchical name.
  struct ParamRef {
    std::string name;
    std::span<float> values;
    Shape shape;
  };
  std::vector<ParamRef> parameters();
  std::size_t parameter_count() const;

  /// Same structure, all zeros.
  EncoderModel zeros_like() const;
};

/// Gaussian init (std \p init_std) for weights and embeddings, zero biases, unit LayerNorm gains.
EncoderModel init_encoder(const EncoderConfig& config, std::uint64_t seed, float init_std = 0.02f);

/// (B, T) token ids, row-major.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> ids;

  std::int32_t at(std::size_t b, std::size_t t) const { return ids[b * seq + t]; }
};

/// Where a site sits in the graph.
enum class SiteKind { kWeight, kActivation };

struct SiteInfo {
  std::string name;
  SiteKind kind;
  std::string family;  // name with the layer index replaced by '*'
};

/// Every quantizer site of the model: activations first in graph order, then weights.
std::vector<SiteInfo> enumerate_sites(const EncoderConfig& config);
std::vector<std::string> activation_site_names(const EncoderConfig& config);

namespace site {
std::string layer(std::size_t l, const char* suffix);
inline constexpr const char* kEmbeddingSum = "embeddings.sum";
inline constexpr const char* kEmbeddingLn = "embeddings.ln_output";
inline constexpr const char* kPoolerDense = "pooler.dense";
inline constexpr const char* kPoolerActivation = "pooler.activation";
inline constexpr const char* kHeadOutput = "head.output";
// Per-layer suffixes, used as layer.<l>.<suffix>.
inline constexpr const char* kQuery = "attn.query";
inline constexpr const char* kKey = "attn.key";
inline constexpr const char* kValue = "attn.value";
inline constexpr const char* kSoftmaxInput = "attn.softmax_input";
inline constexpr const char* kSoftmaxOutput = "attn.softmax_output";
inline constexpr const char* kContext = "attn.context";
inline constexpr const char* kAttnOutput = "attn.output";
inline constexpr const char* kAttnResidual = "attn.residual_sum";
inline constexpr const char* kFfnInput = "ffn.input";
inline constexpr const char* kFfnIntermediate = "ffn.intermediate";
inline constexpr const char* kFfnOutput = "ffn.output";
inline constexpr const char* kFfnResidual = "ffn.residual_sum";
inline constexpr const char* kFfnLnOutput = "ffn.ln_output";
}  // namespace site

/// Called at every activation site with the tensor about to flow on. The
/// visitor may replace it (fake quantization) or just read it. \p keep marks
/// elements that belong to real (non-pad) positions; it is empty when the
/// batch has no padding.
using SiteVisitor = std::function<void(const std::string& site, TensorF& t, std::span<const std::uint8_t> keep)>;

struct ForwardOutput {
  TensorF hidden;  // (B, T, d)
  TensorF logits;  // (B, classes)
};

/// Full-precision forward. \p visitor, when set, sees every activation site.
ForwardOutput forward(const EncoderModel& model, const TokenBatch& tokens, const SiteVisitor& visitor = {});

/// Per layer and head, the attention probability given to key \p token_index,
/// averaged over (non-pad) query positions and the batch. Shape (L, h).
TensorF attention_mass_on_token(const EncoderModel& model, const TokenBatch& tokens, std::size_t token_index);

/// Softmax over \p logits restricted to keys with keep[j] != 0.
void masked_softmax(std::span<const float> logits, std::span<const std::uint8_t> key_keep, std::span<float> out);

}  // namespace pegq
