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
#include <span>
#include <vector>

#include "pegq/quant.hpp"
#include "pegq/tensor.hpp"

namespace pegq {

/// What a 32-bit accumulator does when a partial sum leaves its range.
enum class OverflowPolicy { kChecked, kSaturating };

OverflowPolicy default_overflow_policy();

/// Largest inner dimension for which b <= 8 operands provably fit a 32-bit
/// accumulator: 2^15 * 128 * 255 < 2^31.
inline constexpr std::size_t kSafeInnerDim8Bit = std::size_t{1} << 15;

/// Integer accumulators of a per-tensor matmul plus the single factor s_w * s_x
/// that maps them back to reals.
struct IntMatmulResult {
  Shape shape;
  std::vector<std::int32_t> acc;
  double combined_scale = 1.0;
  std::size_t rescale_ops = 1;

  /// float(acc * combined_scale), elementwise.
  TensorF dequantize() const;
};

/// Result of a path that rescales inside the reduction.
struct RescaledMatmul {
  TensorF values;
  std::size_t rescale_ops = 0;
};

/// y = x W^T with W (d_out, d) symmetric per-tensor and x (..., d) per-tensor.
/// The activation zero-point is folded through precomputed weight row sums, so
/// the inner loop is integer-only.
IntMatmulResult qmatmul_per_tensor(const QTensor& w, const QTensor& x,
                                   OverflowPolicy policy = default_overflow_policy());

/// Per-embedding activations: every term carries its own s_x[j]; d rescale events.
RescaledMatmul qmatmul_per_embedding(const QTensor& w, const QTensor& x,
                                     OverflowPolicy policy = default_overflow_policy());

/// Per-embedding-group activations: K integer partial sums, each rescaled once
/// and summed in group order.
RescaledMatmul qmatmul_peg(const QTensor& w, const QTensor& x, OverflowPolicy policy = default_overflow_policy());

/// Elementwise float(sum_g acc_g * combined_scale_g) in the given order. This is
/// the merge step shared by qmatmul_peg and its per-tensor rewrite.
TensorF sum_rescaled(std::span<const IntMatmulResult> parts);

/// quantize(result.dequantize(), target).
QTensor requantize(const IntMatmulResult& result, const QParams& target);
QTensor requantize(const TensorF& values, const GranularParams& target);

/// Dequantizes both operands, adds in real arithmetic, requantizes onto \p target.
QTensor qadd_residual(const QTensor& a, const QTensor& b, const GranularParams& target);

}  // namespace pegq
