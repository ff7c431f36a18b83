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
#include "pegq/layers.hpp"
#include "pegq/tensor.hpp"
#include "test_util.hpp"

namespace pegq {
namespace {

TEST(Shape, NumelAndWithLast) {
  const Shape s{2, 3, 4};
  EXPECT_EQ(s.numel(), 24u);
  EXPECT_EQ(s.last(), 4u);
  EXPECT_EQ(s.with_last(7), (Shape{2, 3, 7}));
}

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(TensorF(Shape{2, 2}, std::vector<float>(3)), Error);
}

TEST(Tensor, MinMaxAndPerEmbedding) {
  const TensorF t(Shape{1, 2, 2}, {1, 2, -3, 4});
  const Range r = min_max(t);
  EXPECT_EQ(r.min, -3.0);
  EXPECT_EQ(r.max, 4.0);
  auto [lo, hi] = per_embedding_min_max(t);
  EXPECT_EQ(lo, (std::vector<double>{-3, 2}));
  EXPECT_EQ(hi, (std::vector<double>{1, 4}));
}

TEST(Tensor, MeanStdIsPopulation) {
  const std::vector<float> v{1, 2, 3, 4};
  const MeanStd m = mean_std(v);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.std, std::sqrt(1.25));
}

TEST(Tensor, SliceConcatRoundTrip) {
  std::mt19937_64 rng(1);
  const TensorF t = testing::random_tensor(Shape{3, 4, 5}, rng);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::size_t n = t.shape()[axis];
    const std::vector<TensorF> parts{slice(t, axis, 0, 1), slice(t, axis, 1, n)};
    EXPECT_EQ(concat(parts, axis), t);
  }
}

TEST(Tensor, GatherLastPermutes) {
  const TensorF t(Shape{2, 3}, {0, 1, 2, 3, 4, 5});
  const std::vector<std::size_t> idx{2, 0, 1};
  EXPECT_EQ(gather_last(t, idx), TensorF(Shape{2, 3}, {2, 0, 1, 5, 3, 4}));
}

TEST(Layers, LinearMatchesNaive) {
  std::mt19937_64 rng(2);
  Linear l{testing::random_tensor(Shape{5, 7}, rng), std::vector<float>(5, 0.5f)};
  const TensorF x = testing::random_tensor(Shape{3, 7}, rng);
  const TensorF y = l.forward(x);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t o = 0; o < 5; ++o) {
      double s = 0.5;
      for (std::size_t j = 0; j < 7; ++j) s += double(l.weight[o * 7 + j]) * x[r * 7 + j];
      EXPECT_NEAR(y[r * 5 + o], s, 1e-5);
    }
  }
}

TEST(Layers, LayerNormNormalizesRows) {
  std::mt19937_64 rng(3);
  const TensorF x = testing::random_tensor(Shape{4, 16}, rng, 3.0f);
  const TensorF y = identity_layernorm(16).forward(x);
  for (std::size_t r = 0; r < 4; ++r) {
    const MeanStd m = mean_std(y.row(r));
    EXPECT_NEAR(m.mean, 0.0, 1e-5);
    EXPECT_NEAR(m.std, 1.0, 1e-4);
  }
}

TEST(Layers, GeluGradMatchesFiniteDifference) {
  for (float x : {-3.0f, -1.0f, -0.2f, 0.0f, 0.5f, 2.0f}) {
    const double h = 1e-3;
    const double fd = (gelu(float(x + h)) - gelu(float(x - h))) / (2 * h);
    EXPECT_NEAR(gelu_grad(x), fd, 1e-3);
  }
}

TEST(Layers, MatmulVariantsAgree) {
  std::mt19937_64 rng(4);
  const TensorF a = testing::random_tensor(Shape{3, 4}, rng);
  const TensorF b = testing::random_tensor(Shape{5, 4}, rng);
  std::vector<float> nt(15), nn(15), tn(15);
  matmul_nt(a.data().data(), b.data().data(), nt.data(), 3, 4, 5);
  std::vector<float> bt(20), at(12);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) bt[j * 5 + i] = b[i * 4 + j];
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) at[j * 3 + i] = a[i * 4 + j];
  matmul_nn(a.data().data(), bt.data(), nn.data(), 3, 4, 5);
  matmul_tn(at.data(), bt.data(), tn.data(), 3, 4, 5);
  for (std::size_t i = 0; i < 15; ++i) {
    EXPECT_NEAR(nt[i], nn[i], 1e-5);
    EXPECT_NEAR(nt[i], tn[i], 1e-5);
  }
}

}  // namespace
}  // namespace pegq
