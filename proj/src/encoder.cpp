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

#include "pegq/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "encoder_internal.hpp"
#include "pegq/error.hpp"

namespace pegq {

void EncoderConfig::validate() const {
  if (layers == 0 || d == 0 || heads == 0 || d_ff == 0 || max_len == 0 || vocab == 0 || classes == 0) {
    throw ConfigError("encoder config extents must be positive");
  }
  if (d % heads != 0) throw ConfigError("embedding width must be divisible by the head count");
  if (pad_id < 0 || static_cast<std::size_t>(pad_id) >= vocab) throw ConfigError("pad id outside vocabulary");
}

namespace {

void push_linear(std::vector<EncoderModel::ParamRef>& out, const std::string& name, Linear& lin) {
  out.push_back({name + ".weight", lin.weight.mutable_data(), lin.weight.shape()});
  out.push_back({name + ".bias", lin.bias, Shape{lin.bias.size()}});
}

void push_ln(std::vector<EncoderModel::ParamRef>& out, const std::string& name, LayerNorm& ln) {
  out.push_back({name + ".gamma", ln.gamma, Shape{ln.gamma.size()}});
  out.push_back({name + ".beta", ln.beta, Shape{ln.beta.size()}});
}

}  // namespace

std::vector<EncoderModel::ParamRef> EncoderModel::parameters() {
  std::vector<ParamRef> out;
  out.push_back({"embeddings.word.weight", word_embeddings.mutable_data(), word_embeddings.shape()});
  out.push_back({"embeddings.position.weight", position_embeddings.mutable_data(), position_embeddings.shape()});
  push_ln(out, "embeddings.ln", embedding_ln);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    auto& layer = layers[l];
    push_linear(out, p + "attn.query", layer.query);
    push_linear(out, p + "attn.key", layer.key);
    push_linear(out, p + "attn.value", layer.value);
    push_linear(out, p + "attn.output", layer.output);
    push_ln(out, p + "attn.ln", layer.attn_ln);
    push_linear(out, p + "ffn.fc1", layer.fc1);
    push_linear(out, p + "ffn.fc2", layer.fc2);
    push_ln(out, p + "ffn.ln", layer.ffn_ln);
  }
  push_linear(out, "pooler", pooler);
  push_linear(out, "head", head);
  return out;
}

std::size_t EncoderModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : const_cast<EncoderModel*>(this)->parameters()) n += p.values.size();
  return n;
}

EncoderModel EncoderModel::zeros_like() const {
  EncoderModel z = *this;
  for (auto& p : z.parameters()) std::fill(p.values.begin(), p.values.end(), 0.0f);
  return z;
}

EncoderModel init_encoder(const EncoderConfig& config, std::uint64_t seed, float init_std) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, init_std);
  auto gaussian = [&](Shape s) {
    TensorF t(std::move(s));
    for (float& v : t.mutable_data()) v = normal(rng);
    return t;
  };
  auto linear = [&](std::size_t out, std::size_t in) {
    return Linear{gaussian(Shape{out, in}), std::vector<float>(out, 0.0f)};
  };
  const std::size_t d = config.d;
  EncoderModel m;
  m.config = config;
  m.word_embeddings = gaussian(Shape{config.vocab, d});
  m.position_embeddings = gaussian(Shape{config.max_len, d});
  m.embedding_ln = identity_layernorm(d);
  for (std::size_t l = 0; l < config.layers; ++l) {
    EncoderLayer layer;
    layer.query = linear(d, d);
    layer.key = linear(d, d);
    layer.value = linear(d, d);
    layer.output = linear(d, d);
    layer.attn_ln = identity_layernorm(d);
    layer.fc1 = linear(config.d_ff, d);
    layer.fc2 = linear(d, config.d_ff);
    layer.ffn_ln = identity_layernorm(d);
    m.layers.push_back(std::move(layer));
  }
  m.pooler = linear(d, d);
  m.head = linear(config.classes, d);
  return m;
}

namespace site {
std::string layer(std::size_t l, const char* suffix) { return "layer." + std::to_string(l) + "." + suffix; }
}  // namespace site

namespace {

constexpr const char* kLayerActivationSuffixes[] = {
    site::kQuery,        site::kKey,       site::kValue,           site::kSoftmaxInput, site::kSoftmaxOutput,
    site::kContext,      site::kAttnOutput, site::kAttnResidual,   site::kFfnInput,     site::kFfnIntermediate,
    site::kFfnOutput,    site::kFfnResidual, site::kFfnLnOutput};

constexpr const char* kLayerWeightSuffixes[] = {"attn.query.weight", "attn.key.weight", "attn.value.weight",
                                                "attn.output.weight", "ffn.fc1.weight", "ffn.fc2.weight"};

}  // namespace

std::vector<SiteInfo> enumerate_sites(const EncoderConfig& config) {
  std::vector<SiteInfo> out;
  auto global = [&](const std::string& name, SiteKind kind) { out.push_back({name, kind, name}); };
  global(site::kEmbeddingSum, SiteKind::kActivation);
  global(site::kEmbeddingLn, SiteKind::kActivation);
  for (std::size_t l = 0; l < config.layers; ++l) {
    for (const char* s : kLayerActivationSuffixes) {
      out.push_back({site::layer(l, s), SiteKind::kActivation, std::string("layer.*.") + s});
    }
  }
  global(site::kPoolerDense, SiteKind::kActivation);
  global(site::kPoolerActivation, SiteKind::kActivation);
  global(site::kHeadOutput, SiteKind::kActivation);

  global("embeddings.word.weight", SiteKind::kWeight);
  global("embeddings.position.weight", SiteKind::kWeight);
  for (std::size_t l = 0; l < config.layers; ++l) {
    for (const char* s : kLayerWeightSuffixes) {
      out.push_back({site::layer(l, s), SiteKind::kWeight, std::string("layer.*.") + s});
    }
  }
  global("pooler.weight", SiteKind::kWeight);
  global("head.weight", SiteKind::kWeight);
  return out;
}

std::vector<std::string> activation_site_names(const EncoderConfig& config) {
  std::vector<std::string> out;
  for (const auto& s : enumerate_sites(config)) {
    if (s.kind == SiteKind::kActivation) out.push_back(s.name);
  }
  return out;
}

void masked_softmax(std::span<const float> logits, std::span<const std::uint8_t> key_keep, std::span<float> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (key_keep.empty() || key_keep[j]) mx = std::max<double>(mx, logits[j]);
  }
  double sum = 0.0;
  std::vector<double> e(logits.size(), 0.0);
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (key_keep.empty() || key_keep[j]) {
      e[j] = std::exp(static_cast<double>(logits[j]) - mx);
      sum += e[j];
    }
  }
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] = static_cast<float>(e[j] / sum);
}

namespace detail {

TensorF layer_norm_with_stats(const LayerNorm& ln, const TensorF& x, TensorF* norm, std::vector<double>* inv_std) {
  const std::size_t d = x.shape().last();
  if (d != ln.width()) throw Error("layernorm width does not match input");
  TensorF n(x.shape());
  TensorF out(x.shape());
  if (inv_std) inv_std->assign(x.rows(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto src = x.row(r);
    double mean = 0.0;
    for (float v : src) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (float v : src) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + ln.eps);
    if (inv_std) (*inv_std)[r] = inv;
    auto nr = n.mutable_row(r);
    auto dst = out.mutable_row(r);
    for (std::size_t j = 0; j < d; ++j) {
      nr[j] = static_cast<float>((src[j] - mean) * inv);
      dst[j] = nr[j] * ln.gamma[j] + ln.beta[j];
    }
  }
  if (norm) *norm = std::move(n);
  return out;
}

namespace {

struct Masks {
  bool padded = false;
  std::vector<std::uint8_t> token;  // (B*T)

  std::vector<std::uint8_t> rows(std::size_t width) const {
    if (!padded) return {};
    std::vector<std::uint8_t> m(token.size() * width);
    for (std::size_t r = 0; r < token.size(); ++r) std::fill_n(m.begin() + r * width, width, token[r]);
    return m;
  }

  std::vector<std::uint8_t> attention(std::size_t batch, std::size_t heads, std::size_t seq) const {
    if (!padded) return {};
    std::vector<std::uint8_t> m(batch * heads * seq * seq);
    std::size_t i = 0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t q = 0; q < seq; ++q)
          for (std::size_t k = 0; k < seq; ++k) m[i++] = token[b * seq + q] && token[b * seq + k];
    return m;
  }
};

}  // namespace

ForwardOutput forward_impl(const EncoderModel& model, const TokenBatch& tokens, const SiteVisitor& visitor,
                           Tape* tape) {
  const EncoderConfig& cfg = model.config;
  const std::size_t B = tokens.batch, T = tokens.seq, d = cfg.d, H = cfg.heads, dh = cfg.d_head();
  const std::size_t N = B * T;
  if (B == 0 || T == 0 || tokens.ids.size() != N) throw Error("token batch shape is inconsistent");
  if (T > cfg.max_len) throw Error("sequence length exceeds the model's maximum");

  Masks masks;
  masks.token.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    const std::int32_t id = tokens.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab) throw Error("token id outside vocabulary");
    masks.token[i] = id != cfg.pad_id;
    masks.padded |= !masks.token[i];
  }
  const std::vector<std::uint8_t> row_keep_d = masks.rows(d);

  auto visit = [&](const char* name_c, const std::string& name_s, TensorF& t, std::span<const std::uint8_t> keep) {
    const std::string& name = name_c ? std::string(name_c) : name_s;
    if (tape) tape->site_inputs[name] = t;
    if (visitor) visitor(name, t, keep);
  };
  auto visit_layer = [&](std::size_t l, const char* suffix, TensorF& t, std::span<const std::uint8_t> keep) {
    visit(nullptr, site::layer(l, suffix), t, keep);
  };

  if (tape) {
    tape->tokens = tokens;
    tape->token_keep = masks.token;
    tape->layers.assign(cfg.layers, {});
    tape->site_inputs.clear();
  }

  // Embeddings.
  TensorF x(Shape{N, d});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      auto w = model.word_embeddings.row(static_cast<std::size_t>(tokens.at(b, t)));
      auto p = model.position_embeddings.row(t);
      auto dst = x.mutable_row(b * T + t);
      for (std::size_t j = 0; j < d; ++j) dst[j] = w[j] + p[j];
    }
  }
  visit(site::kEmbeddingSum, {}, x, row_keep_d);
  x = layer_norm_with_stats(model.embedding_ln, x, tape ? &tape->emb_ln_norm : nullptr,
                            tape ? &tape->emb_ln_inv_std : nullptr);
  visit(site::kEmbeddingLn, {}, x, row_keep_d);

  const std::vector<std::uint8_t> attn_keep = masks.attention(B, H, T);
  const std::vector<std::uint8_t> row_keep_ff = masks.rows(cfg.d_ff);
  const float inv_sqrt_dh = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const EncoderLayer& layer = model.layers[l];
    LayerTape* lt = tape ? &tape->layers[l] : nullptr;
    if (lt) lt->x = x;

    TensorF q = layer.query.forward(x);
    visit_layer(l, site::kQuery, q, row_keep_d);
    TensorF k = layer.key.forward(x);
    visit_layer(l, site::kKey, k, row_keep_d);
    TensorF v = layer.value.forward(x);
    visit_layer(l, site::kValue, v, row_keep_d);

    TensorF logits(Shape{B, H, T, T});
    {
      auto dst = logits.mutable_data();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t i = 0; i < T; ++i) {
            const float* qi = q.row(b * T + i).data() + h * dh;
            for (std::size_t j = 0; j < T; ++j) {
              const float* kj = k.row(b * T + j).data() + h * dh;
              float s = 0.0f;
              for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
              dst[((b * H + h) * T + i) * T + j] = s * inv_sqrt_dh;
            }
          }
    }
    visit_layer(l, site::kSoftmaxInput, logits, attn_keep);

    TensorF probs(logits.shape());
    for (std::size_t b = 0; b < B; ++b) {
      std::span<const std::uint8_t> key_keep;
      if (masks.padded) key_keep = std::span<const std::uint8_t>(masks.token).subspan(b * T, T);
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < T; ++i) {
          const std::size_t r = (b * H + h) * T + i;
          masked_softmax(logits.row(r), key_keep, probs.mutable_row(r));
        }
    }
    if (lt) lt->probs_raw = probs;
    visit_layer(l, site::kSoftmaxOutput, probs, attn_keep);

    TensorF ctx(Shape{N, d});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < T; ++i) {
          auto p = probs.row((b * H + h) * T + i);
          float* out = ctx.mutable_row(b * T + i).data() + h * dh;
          for (std::size_t j = 0; j < T; ++j) {
            const float pj = p[j];
            if (pj == 0.0f) continue;
            const float* vj = v.row(b * T + j).data() + h * dh;
            for (std::size_t c = 0; c < dh; ++c) out[c] += pj * vj[c];
          }
        }
    visit_layer(l, site::kContext, ctx, row_keep_d);

    TensorF attn = layer.output.forward(ctx);
    visit_layer(l, site::kAttnOutput, attn, row_keep_d);
    TensorF s1 = add(x, attn);
    visit_layer(l, site::kAttnResidual, s1, row_keep_d);
    TensorF x1 = layer_norm_with_stats(layer.attn_ln, s1, lt ? &lt->ln1_norm : nullptr, lt ? &lt->ln1_inv_std : nullptr);
    visit_layer(l, site::kFfnInput, x1, row_keep_d);

    TensorF hpre = layer.fc1.forward(x1);
    TensorF g = gelu(hpre);
    visit_layer(l, site::kFfnIntermediate, g, row_keep_ff);
    TensorF y = layer.fc2.forward(g);
    visit_layer(l, site::kFfnOutput, y, row_keep_d);
    TensorF s2 = add(x1, y);
    visit_layer(l, site::kFfnResidual, s2, row_keep_d);
    TensorF x2 = layer_norm_with_stats(layer.ffn_ln, s2, lt ? &lt->ln2_norm : nullptr, lt ? &lt->ln2_inv_std : nullptr);
    visit_layer(l, site::kFfnLnOutput, x2, row_keep_d);

    if (lt) {
      lt->q = std::move(q);
      lt->k = std::move(k);
      lt->v = std::move(v);
      lt->probs = std::move(probs);
      lt->ctx = std::move(ctx);
      lt->x1 = x1;
      lt->h = std::move(hpre);
      lt->g = std::move(g);
    }
    x = std::move(x2);
  }

  TensorF pooled_in(Shape{B, d});
  for (std::size_t b = 0; b < B; ++b) {
    auto src = x.row(b * T);
    std::copy(src.begin(), src.end(), pooled_in.mutable_row(b).begin());
  }
  TensorF dense = model.pooler.forward(pooled_in);
  visit(site::kPoolerDense, {}, dense, {});
  TensorF act(dense.shape());
  for (std::size_t i = 0; i < act.size(); ++i) act[i] = std::tanh(dense[i]);
  visit(site::kPoolerActivation, {}, act, {});
  TensorF logits = model.head.forward(act);
  visit(site::kHeadOutput, {}, logits, {});

  if (tape) {
    tape->final_hidden = x;
    tape->pooled_in = std::move(pooled_in);
    tape->pool_dense = std::move(dense);
    tape->pool_act = std::move(act);
  }
  return {x.reshaped(Shape{B, T, d}), std::move(logits)};
}

}  // namespace detail

ForwardOutput forward(const EncoderModel& model, const TokenBatch& tokens, const SiteVisitor& visitor) {
  return detail::forward_impl(model, tokens, visitor, nullptr);
}

TensorF attention_mass_on_token(const EncoderModel& model, const TokenBatch& tokens, std::size_t token_index) {
  if (token_index >= tokens.seq) throw Error("token index outside the sequence");
  const std::size_t L = model.config.layers, H = model.config.heads, T = tokens.seq;
  TensorF mass(Shape{L, H});
  std::vector<double> sum(L * H, 0.0);
  std::vector<double> count(L * H, 0.0);
  SiteVisitor visitor = [&](const std::string& name, TensorF& t, std::span<const std::uint8_t>) {
    const std::string suffix = std::string(".") + site::kSoftmaxOutput;
    if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) return;
    const std::size_t l = std::stoul(name.substr(6, name.find('.', 6) - 6));
    for (std::size_t b = 0; b < tokens.batch; ++b) {
      if (tokens.at(b, token_index) == model.config.pad_id) continue;
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < T; ++i) {
          if (tokens.at(b, i) == model.config.pad_id) continue;
          sum[l * H + h] += t[((b * H + h) * T + i) * T + token_index];
          count[l * H + h] += 1.0;
        }
    }
  };
  forward(model, tokens, visitor);
  for (std::size_t i = 0; i < L * H; ++i) mass[i] = static_cast<float>(count[i] > 0 ? sum[i] / count[i] : 0.0);
  return mass;
}

}  // namespace pegq
