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

#include "pegq/layers.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "pegq/error.hpp"

namespace pegq {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
}  // namespace

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

}  // namespace

void matmul_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  Map(c, m, n).noalias() = ConstMap(a, m, k) * ConstMap(b, n, k).transpose();
}

void matmul_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  Map(c, m, n).noalias() = ConstMap(a, m, k) * ConstMap(b, k, n);
}

void matmul_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  Map(c, m, n).noalias() = ConstMap(a, k, m).transpose() * ConstMap(b, k, n);
}

TensorF Linear::forward(const TensorF& x) const {
  if (weight.shape().rank() != 2) throw Error("linear weight must be rank 2");
  const std::size_t din = in_features();
  const std::size_t dout = out_features();
  if (x.shape().last() != din) throw Error("linear input width does not match weight");
  if (!bias.empty() && bias.size() != dout) throw Error("linear bias length does not match weight");
  TensorF y(x.shape().with_last(dout));
  matmul_nt(x.data().data(), weight.data().data(), y.mutable_data().data(), x.rows(), din, dout);
  if (!bias.empty()) {
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto row = y.mutable_row(r);
      for (std::size_t o = 0; o < dout; ++o) row[o] += bias[o];
    }
  }
  return y;
}

TensorF LayerNorm::normalize(const TensorF& x) const {
  const std::size_t d = x.shape().last();
  if (d != gamma.size() || d != beta.size()) throw Error("layernorm width does not match input");
  TensorF out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto src = x.row(r);
    auto dst = out.mutable_row(r);
    double mean = 0.0;
    for (float v : src) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (float v : src) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<float>((src[j] - mean) * inv);
  }
  return out;
}

TensorF LayerNorm::forward(const TensorF& x) const {
  TensorF out = normalize(x);
  const std::size_t d = gamma.size();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.mutable_row(r);
    for (std::size_t j = 0; j < d; ++j) row[j] = row[j] * gamma[j] + beta[j];
  }
  return out;
}

LayerNorm identity_layernorm(std::size_t d) { return LayerNorm{std::vector<float>(d, 1.0f), std::vector<float>(d, 0.0f)}; }

float gelu(float x) {
  const double v = x;
  return static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
}

float gelu_grad(float x) {
  const double v = x;
  const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
  const double pdf = std::exp(-0.5 * v * v) * std::numbers::inv_sqrtpi * kInvSqrt2;
  return static_cast<float>(cdf + v * pdf);
}

TensorF gelu(const TensorF& x) {
  TensorF out(x.shape());
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = gelu(src[i]);
  return out;
}

TensorF add(const TensorF& a, const TensorF& b) {
  if (!(a.shape() == b.shape())) throw Error("elementwise add of mismatched shapes");
  TensorF out = a;
  auto dst = out.mutable_data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return out;
}

}  // namespace pegq
