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

#include <vector>

#include "pegq/tensor.hpp"

namespace pegq {

/// y = x W^T + b. weight is (d_out, d_in); bias is empty or d_out long.
struct Linear {
  TensorF weight;
  std::vector<float> bias;

  std::size_t in_features() const { return weight.shape()[1]; }
  std::size_t out_features() const { return weight.shape()[0]; }
  TensorF forward(const TensorF& x) const;

  friend bool operator==(const Linear&, const Linear&) = default;
};

/// LayerNorm over the last axis with gain and bias.
struct LayerNorm {
  std::vector<float> gamma;
  std::vector<float> beta;
  double eps = 1e-12;

  std::size_t width() const { return gamma.size(); }
  TensorF forward(const TensorF& x) const;
  /// Normalized values before gain and bias.
  TensorF normalize(const TensorF& x) const;

  friend bool operator==(const LayerNorm&, const LayerNorm&) = default;
};

LayerNorm identity_layernorm(std::size_t d);

/// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
float gelu(float x);
float gelu_grad(float x);
TensorF gelu(const TensorF& x);

/// a + b elementwise; shapes must match.
TensorF add(const TensorF& a, const TensorF& b);

/// Row-major float GEMM helpers: C (m, n) = A (m, k) * B^T where B is (n, k).
void matmul_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);
/// C (m, n) = A (m, k) * B (k, n).
void matmul_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);
/// C (m, n) = A^T * B, A (k, m), B (k, n).
void matmul_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);

}  // namespace pegq
