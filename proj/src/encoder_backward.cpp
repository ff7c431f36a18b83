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

#include <cmath>
#include <string>

#include "encoder_internal.hpp"
#include "pegq/error.hpp"
#include "pegq/qat.hpp"

namespace pegq {

double cross_entropy(const TensorF& logits, std::span<const std::int32_t> labels) {
  const std::size_t B = logits.rows(), C = logits.shape().last();
  if (labels.size() != B) throw Error("label count does not match the batch");
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    auto row = logits.row(b);
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= C) throw Error("label outside the class range");
    double mx = row[0];
    for (float v : row) mx = std::max<double>(mx, v);
    double z = 0.0;
    for (float v : row) z += std::exp(v - mx);
    total += std::log(z) + mx - row[static_cast<std::size_t>(labels[b])];
  }
  return total / static_cast<double>(B);
}

namespace {

struct Backward {
  const QuantConfig& config;
  const detail::Tape& tape;
  Gradients& grads;
  LsqOptions lsq;

  void site(const std::string& name, TensorF& grad) {
    const SiteSettings& st = config.resolve(name, SiteKind::kActivation);
    if (!st.enabled) return;
    const TensorF& u = tape.site_inputs.at(name);
    accumulate(name, lsq_backward_scale(grad, u, *st.params, lsq));
    grad = ste_backward_input(grad, u, *st.params);
  }
  void site(std::size_t l, const char* suffix, TensorF& grad) { site(site::layer(l, suffix), grad); }

  void accumulate(const std::string& name, const std::vector<double>& g) {
    auto& dst = grads.scales[name];
    if (dst.empty()) dst.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
};

TensorF linear_backward(const Linear& lin, const TensorF& x, const TensorF& dy, Linear& g) {
  const std::size_t N = dy.rows(), out = lin.out_features(), in = lin.in_features();
  TensorF dw(Shape{out, in});
  matmul_tn(dy.data().data(), x.data().data(), dw.mutable_data().data(), out, N, in);
  auto gw = g.weight.mutable_data();
  for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += dw[i];
  if (!g.bias.empty()) {
    for (std::size_t r = 0; r < N; ++r) {
      auto row = dy.row(r);
      for (std::size_t o = 0; o < out; ++o) g.bias[o] += row[o];
    }
  }
  TensorF dx(Shape{N, in});
  matmul_nn(dy.data().data(), lin.weight.data().data(), dx.mutable_data().data(), N, out, in);
  return dx;
}

TensorF layer_norm_backward(const LayerNorm& ln, const TensorF& norm, const std::vector<double>& inv_std,
                            const TensorF& dy, LayerNorm& g) {
  const std::size_t N = dy.rows(), d = ln.width();
  TensorF dx(dy.shape());
  std::vector<double> dn(d);
  for (std::size_t r = 0; r < N; ++r) {
    auto gy = dy.row(r);
    auto n = norm.row(r);
    double mean_dn = 0.0, mean_dnn = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dn[j] = static_cast<double>(gy[j]) * ln.gamma[j];
      g.gamma[j] += gy[j] * n[j];
      g.beta[j] += gy[j];
      mean_dn += dn[j];
      mean_dnn += dn[j] * n[j];
    }
    mean_dn /= static_cast<double>(d);
    mean_dnn /= static_cast<double>(d);
    auto out = dx.mutable_row(r);
    for (std::size_t j = 0; j < d; ++j) {
      out[j] = static_cast<float>(inv_std[r] * (dn[j] - mean_dn - n[j] * mean_dnn));
    }
  }
  return dx;
}

void add_into(TensorF& dst, const TensorF& src) {
  auto d = dst.mutable_data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

Gradients compute_gradients(const EncoderModel& model, const TokenBatch& tokens, std::span<const std::int32_t> labels,
                            const QuantConfig& config, LsqOptions lsq) {
  require_finalized(model.config, config);
  const EncoderConfig& cfg = model.config;
  const EncoderModel qm = quantize_weights(model, config);
  detail::Tape tape;
  const ForwardOutput out = detail::forward_impl(qm, tokens, quantizing_visitor(config), &tape);

  Gradients grads;
  grads.loss = cross_entropy(out.logits, labels);
  grads.params = model.zeros_like();
  EncoderModel& G = grads.params;
  Backward bw{config, tape, grads, lsq};

  const std::size_t B = tokens.batch, T = tokens.seq, C = cfg.classes, d = cfg.d, H = cfg.heads, dh = cfg.d_head();
  const std::size_t N = B * T;

  TensorF dlogits(Shape{B, C});
  for (std::size_t b = 0; b < B; ++b) {
    auto row = out.logits.row(b);
    double mx = row[0];
    for (float v : row) mx = std::max<double>(mx, v);
    double z = 0.0;
    for (float v : row) z += std::exp(v - mx);
    auto g = dlogits.mutable_row(b);
    for (std::size_t c = 0; c < C; ++c) {
      const double p = std::exp(row[c] - mx) / z;
      g[c] = static_cast<float>((p - (static_cast<std::int32_t>(c) == labels[b] ? 1.0 : 0.0)) / static_cast<double>(B));
    }
  }

  bw.site(site::kHeadOutput, dlogits);
  TensorF dact = linear_backward(qm.head, tape.pool_act, dlogits, G.head);
  bw.site(site::kPoolerActivation, dact);
  {
    const TensorF& act = tape.site_inputs.at(site::kPoolerActivation);
    for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= 1.0f - act[i] * act[i];
  }
  bw.site(site::kPoolerDense, dact);
  const TensorF dpooled = linear_backward(qm.pooler, tape.pooled_in, dact, G.pooler);

  TensorF dx(Shape{N, d});
  for (std::size_t b = 0; b < B; ++b) {
    auto src = dpooled.row(b);
    std::copy(src.begin(), src.end(), dx.mutable_row(b * T).begin());
  }

  const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (std::size_t li = cfg.layers; li-- > 0;) {
    const detail::LayerTape& lt = tape.layers[li];
    const EncoderLayer& layer = qm.layers[li];
    EncoderLayer& gl = G.layers[li];

    bw.site(li, site::kFfnLnOutput, dx);
    TensorF ds2 = layer_norm_backward(layer.ffn_ln, lt.ln2_norm, lt.ln2_inv_std, dx, gl.ffn_ln);
    bw.site(li, site::kFfnResidual, ds2);
    TensorF dx1 = ds2;
    TensorF dy = std::move(ds2);
    bw.site(li, site::kFfnOutput, dy);
    TensorF dg = linear_backward(layer.fc2, lt.g, dy, gl.fc2);
    bw.site(li, site::kFfnIntermediate, dg);
    for (std::size_t i = 0; i < dg.size(); ++i) dg[i] *= gelu_grad(lt.h[i]);
    add_into(dx1, linear_backward(layer.fc1, lt.x1, dg, gl.fc1));
    bw.site(li, site::kFfnInput, dx1);

    TensorF ds1 = layer_norm_backward(layer.attn_ln, lt.ln1_norm, lt.ln1_inv_std, dx1, gl.attn_ln);
    bw.site(li, site::kAttnResidual, ds1);
    TensorF dxin = ds1;
    TensorF dattn = std::move(ds1);
    bw.site(li, site::kAttnOutput, dattn);
    TensorF dctx = linear_backward(layer.output, lt.ctx, dattn, gl.output);
    bw.site(li, site::kContext, dctx);

    TensorF dprobs(lt.probs.shape());
    TensorF dv(Shape{N, d});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < T; ++i) {
          const std::size_t r = (b * H + h) * T + i;
          auto p = lt.probs.row(r);
          auto dp = dprobs.mutable_row(r);
          const float* gc = dctx.row(b * T + i).data() + h * dh;
          for (std::size_t j = 0; j < T; ++j) {
            const float* vj = lt.v.row(b * T + j).data() + h * dh;
            float* dvj = dv.mutable_row(b * T + j).data() + h * dh;
            float s = 0.0f;
            for (std::size_t c = 0; c < dh; ++c) {
              s += gc[c] * vj[c];
              dvj[c] += p[j] * gc[c];
            }
            dp[j] = s;
          }
        }
    bw.site(li, site::kSoftmaxOutput, dprobs);

    TensorF dlog(dprobs.shape());
    const TensorF& raw = lt.probs_raw;
    for (std::size_t r = 0; r < dlog.rows(); ++r) {
      auto p = raw.row(r);
      auto dp = dprobs.row(r);
      double s = 0.0;
      for (std::size_t j = 0; j < T; ++j) s += static_cast<double>(p[j]) * dp[j];
      auto dst = dlog.mutable_row(r);
      for (std::size_t j = 0; j < T; ++j) dst[j] = static_cast<float>(p[j] * (dp[j] - s));
    }
    bw.site(li, site::kSoftmaxInput, dlog);

    TensorF dq(Shape{N, d}), dk(Shape{N, d});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < T; ++i) {
          auto gl_row = dlog.row(((b * H + h) * T + i));
          const float* qi = lt.q.row(b * T + i).data() + h * dh;
          float* dqi = dq.mutable_row(b * T + i).data() + h * dh;
          for (std::size_t j = 0; j < T; ++j) {
            const float w = gl_row[j] * scale;
            if (w == 0.0f) continue;
            const float* kj = lt.k.row(b * T + j).data() + h * dh;
            float* dkj = dk.mutable_row(b * T + j).data() + h * dh;
            for (std::size_t c = 0; c < dh; ++c) {
              dqi[c] += w * kj[c];
              dkj[c] += w * qi[c];
            }
          }
        }
    bw.site(li, site::kQuery, dq);
    bw.site(li, site::kKey, dk);
    bw.site(li, site::kValue, dv);
    add_into(dxin, linear_backward(layer.query, lt.x, dq, gl.query));
    add_into(dxin, linear_backward(layer.key, lt.x, dk, gl.key));
    add_into(dxin, linear_backward(layer.value, lt.x, dv, gl.value));
    dx = std::move(dxin);
  }

  bw.site(site::kEmbeddingLn, dx);
  TensorF demb = layer_norm_backward(qm.embedding_ln, tape.emb_ln_norm, tape.emb_ln_inv_std, dx, G.embedding_ln);
  bw.site(site::kEmbeddingSum, demb);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      auto src = demb.row(b * T + t);
      auto w = G.word_embeddings.mutable_row(static_cast<std::size_t>(tokens.at(b, t)));
      auto p = G.position_embeddings.mutable_row(t);
      for (std::size_t j = 0; j < d; ++j) {
        w[j] += src[j];
        p[j] += src[j];
      }
    }

  // Weight quantizers: gradients above are with respect to the quantized
  // weights; map them back through STE and collect scale gradients.
  auto model_params = const_cast<EncoderModel&>(model).parameters();
  auto grad_params = G.parameters();
  for (std::size_t i = 0; i < model_params.size(); ++i) {
    const std::string& name = model_params[i].name;
    if (name.size() < 7 || name.compare(name.size() - 7, 7, ".weight") != 0) continue;
    const SiteSettings& st = config.resolve(name, SiteKind::kWeight);
    if (!st.enabled) continue;
    const auto& mv = model_params[i].values;
    auto& gv = grad_params[i].values;
    const TensorF w(model_params[i].shape, std::vector<float>(mv.begin(), mv.end()));
    TensorF g(grad_params[i].shape, std::vector<float>(gv.begin(), gv.end()));
    bw.accumulate(name, lsq_backward_scale(g, w, *st.params, lsq));
    g = ste_backward_input(g, w, *st.params);
    std::copy(g.data().begin(), g.data().end(), gv.begin());
  }
  return grads;
}

}  // namespace pegq
