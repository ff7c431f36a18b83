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

#include "pegq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pegq/error.hpp"

namespace pegq {

bool is_supported_bit_width(int bits) {
  switch (bits) {
    case 2: case 3: case 4: case 6: case 8: case 16:
      return true;
    default:
      return false;
  }
}

double round_half_away(double v) { return std::round(v); }

void QParams::validate() const {
  if (!is_supported_bit_width(bits)) throw ConfigError("unsupported bit-width " + std::to_string(bits));
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("quantization scale must be positive and finite");
  if (zero_point < 0 || zero_point > qmax()) {
    throw ConfigError("zero-point " + std::to_string(zero_point) + " outside [0, " + std::to_string(qmax()) + "]");
  }
  if (symmetric && zero_point != (std::int32_t{1} << (bits - 1))) {
    throw ConfigError("symmetric grid requires zero-point 2^(b-1)");
  }
}

QParams QParams::from_range(double min, double max, int bits, bool symmetric) {
  if (!is_supported_bit_width(bits)) throw ConfigError("unsupported bit-width " + std::to_string(bits));
  if (!(min <= max)) throw ConfigError("range minimum exceeds maximum");
  QParams p;
  p.bits = bits;
  p.symmetric = symmetric;
  if (symmetric) {
    const double bound = std::max(std::abs(min), std::abs(max));
    const double levels = static_cast<double>((std::int32_t{1} << (bits - 1)) - 1);
    p.scale = bound > 0.0 ? bound / levels : kDegenerateScale;
    p.zero_point = std::int32_t{1} << (bits - 1);
    return p;
  }
  const double lo = std::min(min, 0.0);
  const double hi = std::max(max, 0.0);
  if (hi == lo) {
    p.scale = kDegenerateScale;
    p.zero_point = 0;
    return p;
  }
  p.scale = (hi - lo) / static_cast<double>(p.qmax());
  p.zero_point = static_cast<std::int32_t>(std::clamp(round_half_away(-lo / p.scale), 0.0, double(p.qmax())));
  return p;
}

std::int32_t quantize_value(float x, const QParams& p) {
  const double q = round_half_away(static_cast<double>(x) / p.scale) + p.zero_point;
  return static_cast<std::int32_t>(std::clamp(q, 0.0, static_cast<double>(p.qmax())));
}

float dequantize_value(std::int32_t q, const QParams& p) {
  return static_cast<float>(p.scale * static_cast<double>(q - p.zero_point));
}

const char* to_string(Granularity g) {
  switch (g) {
    case Granularity::kPerTensor: return "per_tensor";
    case Granularity::kPerEmbedding: return "per_embedding";
    case Granularity::kPerEmbeddingGroup: return "per_embedding_group";
  }
  return "?";
}

GranularParams GranularParams::per_tensor(QParams p) {
  p.validate();
  GranularParams g;
  g.granularity_ = Granularity::kPerTensor;
  g.params_ = {p};
  return g;
}

GranularParams GranularParams::per_embedding(std::vector<QParams> params) {
  if (params.empty()) throw ConfigError("per-embedding parameters need d >= 1 entries");
  for (const auto& p : params) p.validate();
  GranularParams g;
  g.granularity_ = Granularity::kPerEmbedding;
  g.params_ = std::move(params);
  return g;
}

GranularParams GranularParams::per_group(std::vector<QParams> params, GroupSpec groups) {
  if (params.size() != groups.groups()) {
    throw ConfigError("per-group parameters: " + std::to_string(params.size()) + " entries for " +
                      std::to_string(groups.groups()) + " groups");
  }
  for (const auto& p : params) p.validate();
  GranularParams g;
  g.granularity_ = Granularity::kPerEmbeddingGroup;
  g.params_ = std::move(params);
  g.groups_ = std::move(groups);
  return g;
}

std::size_t GranularParams::slot_of(std::size_t dim) const {
  switch (granularity_) {
    case Granularity::kPerTensor: return 0;
    case Granularity::kPerEmbedding: return dim;
    case Granularity::kPerEmbeddingGroup: return groups_->group_of(dim);
  }
  return 0;
}

void GranularParams::check_width(std::size_t d) const {
  if (params_.empty()) throw ConfigError("quantization parameters are not initialized");
  std::size_t want = d;
  switch (granularity_) {
    case Granularity::kPerTensor: return;
    case Granularity::kPerEmbedding: want = params_.size(); break;
    case Granularity::kPerEmbeddingGroup: want = groups_->width(); break;
  }
  if (want != d) {
    throw ConfigError(std::string(to_string(granularity_)) + " parameters cover " + std::to_string(want) +
                      " embedding dims, tensor has " + std::to_string(d));
  }
}

namespace {

std::size_t last_extent(const TensorF& x) {
  if (x.shape().rank() == 0) throw Error("cannot quantize a rank-0 tensor");
  return x.shape().last();
}

// Per-dim parameter pointers so the inner loops avoid the granularity switch.
std::vector<const QParams*> expand(const GranularParams& p, std::size_t d) {
  p.check_width(d);
  std::vector<const QParams*> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = &p.for_dim(j);
  return out;
}

void check_same_shape(const TensorF& a, const TensorF& b) {
  if (!(a.shape() == b.shape())) throw Error("gradient and input shapes differ");
}

}  // namespace

QTensor quantize(const TensorF& x, const QParams& p) { return quantize(x, GranularParams::per_tensor(p)); }

QTensor quantize(const TensorF& x, const GranularParams& p) {
  const std::size_t d = last_extent(x);
  auto slots = expand(p, d);
  QTensor q{x.shape(), std::vector<std::int32_t>(x.size()), p};
  auto src = x.data();
  for (std::size_t i = 0; i < src.size(); ++i) q.values[i] = quantize_value(src[i], *slots[i % d]);
  return q;
}

TensorF dequantize(const QTensor& q) {
  const std::size_t d = q.shape.last();
  auto slots = expand(q.params, d);
  TensorF out(q.shape);
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = dequantize_value(q.values[i], *slots[i % d]);
  return out;
}

TensorF fake_quantize(const TensorF& x, const QParams& p) {
  p.validate();
  TensorF out(x.shape());
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fake_quantize_value(src[i], p);
  return out;
}

TensorF fake_quantize(const TensorF& x, const GranularParams& p) {
  const std::size_t d = last_extent(x);
  auto slots = expand(p, d);
  TensorF out(x.shape());
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fake_quantize_value(src[i], *slots[i % d]);
  return out;
}

TensorF ste_backward_input(const TensorF& grad_out, const TensorF& x, const QParams& p) {
  return ste_backward_input(grad_out, x, GranularParams::per_tensor(p));
}

TensorF ste_backward_input(const TensorF& grad_out, const TensorF& x, const GranularParams& p) {
  check_same_shape(grad_out, x);
  const std::size_t d = last_extent(x);
  auto slots = expand(p, d);
  TensorF out(x.shape());
  auto src = x.data();
  auto g = grad_out.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const QParams& q = *slots[i % d];
    const double idx = round_half_away(static_cast<double>(src[i]) / q.scale) + q.zero_point;
    dst[i] = (idx >= 0.0 && idx <= q.qmax()) ? g[i] : 0.0f;
  }
  return out;
}

double lsq_scale_derivative(float x, const QParams& p) {
  const double u = static_cast<double>(x) / p.scale;
  const double r = round_half_away(u);
  const double idx = r + p.zero_point;
  if (idx < 0.0) return -static_cast<double>(p.zero_point);
  if (idx > p.qmax()) return static_cast<double>(p.qmax() - p.zero_point);
  return r - u;
}

namespace {

double lsq_grad_scale(const QParams& p, std::size_t n, const LsqOptions& opts) {
  if (!opts.gradient_scaling || n == 0) return 1.0;
  const double qmax_pos = p.symmetric ? double((std::int32_t{1} << (p.bits - 1)) - 1) : double(p.qmax());
  return 1.0 / std::sqrt(static_cast<double>(n) * qmax_pos);
}

}  // namespace

double lsq_backward_scale(const TensorF& grad_out, const TensorF& x, const QParams& p, LsqOptions opts) {
  return lsq_backward_scale(grad_out, x, GranularParams::per_tensor(p), opts)[0];
}

std::vector<double> lsq_backward_scale(const TensorF& grad_out, const TensorF& x, const GranularParams& p,
                                       LsqOptions opts) {
  check_same_shape(grad_out, x);
  const std::size_t d = last_extent(x);
  p.check_width(d);
  std::vector<double> grads(p.params().size(), 0.0);
  std::vector<std::size_t> counts(p.params().size(), 0);
  std::vector<std::size_t> slot(d);
  for (std::size_t j = 0; j < d; ++j) slot[j] = p.slot_of(j);
  auto src = x.data();
  auto g = grad_out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t s = slot[i % d];
    grads[s] += static_cast<double>(g[i]) * lsq_scale_derivative(src[i], p.params()[s]);
    ++counts[s];
  }
  for (std::size_t s = 0; s < grads.size(); ++s) grads[s] *= lsq_grad_scale(p.params()[s], counts[s], opts);
  return grads;
}

}  // namespace pegq
