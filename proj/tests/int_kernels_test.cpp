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

#include <gtest/gtest.h>

#include <random>

#include "pegq/error.hpp"
#include "pegq/int_kernels.hpp"
#include "pegq/layers.hpp"
#include "test_util.hpp"

namespace pegq {
namespace {

QTensor quantize_weight(const TensorF& w, int bits = 8) {
  const Range r = min_max(w);
  return quantize(w, QParams::from_range(r.min, r.max, bits, true));
}

QTensor quantize_act(const TensorF& x) {
  const Range r = min_max(x);
  return quantize(x, QParams::from_range(r.min, r.max, 8, false));
}

TensorF reference(const QTensor& w, const QTensor& x) {
  const TensorF wd = dequantize(w), xd = dequantize(x);
  Linear l{wd, {}};
  return l.forward(xd);
}

TEST(IntKernels, PerTensorMatchesDequantizedMatmul) {
  std::mt19937_64 rng(21);
  const QTensor w = quantize_weight(testing::random_tensor(Shape{6, 10}, rng));
  const QTensor x = quantize_act(testing::uniform_tensor(Shape{4, 10}, rng, -1.0f, 3.0f));
  const IntMatmulResult r = qmatmul_per_tensor(w, x);
  EXPECT_EQ(r.rescale_ops, 1u);
  EXPECT_LT(testing::max_rel_diff(r.dequantize(), reference(w, x)), 1e-5);
}

TEST(IntKernels, RejectsAsymmetricOrGroupedWeights) {
  std::mt19937_64 rng(22);
  const TensorF w = testing::random_tensor(Shape{3, 4}, rng);
  const QTensor x = quantize_act(testing::random_tensor(Shape{2, 4}, rng));
  EXPECT_THROW(qmatmul_per_tensor(quantize(w, QParams::from_range(-2, 2, 8, false)), x), ConfigError);
  EXPECT_THROW(qmatmul_per_tensor(quantize_weight(w), quantize_act(testing::random_tensor(Shape{2, 5}, rng))), Error);
}

TEST(IntKernels, CheckedOverflowThrowsSaturatingClamps) {
  // 16-bit operands at full scale overflow int32 after a handful of terms.
  const std::size_t d = 8;
  const TensorF w(Shape{1, d}, std::vector<float>(d, 1.0f));
  const TensorF x(Shape{1, d}, std::vector<float>(d, 1.0f));
  const QTensor wq = quantize(w, QParams::from_range(-1, 1, 16, true));
  const QTensor xq = quantize(x, QParams::from_range(0, 1, 16, false));
  EXPECT_THROW(qmatmul_per_tensor(wq, xq, OverflowPolicy::kChecked), Error);
  const IntMatmulResult sat = qmatmul_per_tensor(wq, xq, OverflowPolicy::kSaturating);
  EXPECT_EQ(sat.acc[0], std::numeric_limits<std::int32_t>::max());
}

TEST(IntKernels, EightBitSafeInnerDimNeverOverflows) {
  const std::size_t d = 4096;
  const TensorF w(Shape{1, d}, std::vector<float>(d, -1.0f));
  const TensorF x(Shape{1, d}, std::vector<float>(d, 1.0f));
  const QTensor wq = quantize_weight(w);
  const QTensor xq = quantize(x, QParams::from_range(0, 1, 8, false));
  EXPECT_NO_THROW(qmatmul_per_tensor(wq, xq, OverflowPolicy::kChecked));
}

TEST(IntKernels, SumRescaledAddsParts) {
  std::mt19937_64 rng(23);
  const QTensor w = quantize_weight(testing::random_tensor(Shape{3, 5}, rng));
  const QTensor x1 = quantize_act(testing::random_tensor(Shape{2, 5}, rng));
  const QTensor x2 = quantize_act(testing::random_tensor(Shape{2, 5}, rng, 4.0f));
  const std::vector<IntMatmulResult> parts{qmatmul_per_tensor(w, x1), qmatmul_per_tensor(w, x2)};
  const TensorF s = sum_rescaled(parts);
  const TensorF a = parts[0].dequantize(), b = parts[1].dequantize();
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], a[i] + b[i], 1e-5 * (1 + std::abs(s[i])));
}

TEST(IntKernels, ResidualAddRequantizes) {
  std::mt19937_64 rng(24);
  const QTensor a = quantize_act(testing::random_tensor(Shape{2, 4}, rng));
  const QTensor b = quantize_act(testing::random_tensor(Shape{2, 4}, rng));
  const GranularParams target = GranularParams::per_tensor(QParams::from_range(-6, 6, 8, false));
  const QTensor s = qadd_residual(a, b, target);
  EXPECT_EQ(dequantize(s), fake_quantize(add(dequantize(a), dequantize(b)), target));
}

}  // namespace
}  // namespace pegq
