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
#include "pegq/peg.hpp"
#include "pegq/range_estimator.hpp"
#include "test_util.hpp"

namespace pegq {
namespace {

FfnBlock random_block(std::size_t d, std::size_t d_ff, std::mt19937_64& rng) {
  FfnBlock b;
  b.ln_in = identity_layernorm(d);
  for (std::size_t j = 0; j < d; ++j) {
    b.ln_in.gamma[j] = 1.0f + 0.1f * float(j % 7);
    b.ln_in.beta[j] = 0.01f * float(j % 5);
  }
  b.fc1 = Linear{testing::random_tensor(Shape{d_ff, d}, rng, 0.2f), std::vector<float>(d_ff, 0.05f)};
  b.fc2 = Linear{testing::random_tensor(Shape{d, d_ff}, rng, 0.2f), std::vector<float>(d, -0.02f)};
  b.ln_out = identity_layernorm(d);
  return b;
}

TEST(GroupSpec, ValidatesAndInverts) {
  EXPECT_THROW(GroupSpec(10, 3), ConfigError);
  EXPECT_THROW(GroupSpec(2, std::vector<std::size_t>{0, 0, 1, 2}), ConfigError);
  const GroupSpec g(2, std::vector<std::size_t>{2, 0, 3, 1});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g.perm()[g.inv_perm()[i]], i);
  EXPECT_EQ(g.group_of(2), 0u);
  EXPECT_EQ(g.group_of(3), 1u);
  EXPECT_TRUE(GroupSpec(4, 2).is_identity());
}

TEST(RangePermutation, IsolatesOutlierDims) {
  std::mt19937_64 rng(31);
  TensorF calib = testing::random_tensor(Shape{2, 8, 12}, rng);
  for (std::size_t r = 0; r < calib.rows(); ++r) {
    calib.mutable_row(r)[3] *= 50.0f;
    calib.mutable_row(r)[7] *= 60.0f;
    calib.mutable_row(r)[10] *= 70.0f;
  }
  const GroupSpec g = build_range_permutation(calib, 4);
  EXPECT_EQ(g.group_of(3), 3u);
  EXPECT_EQ(g.group_of(7), 3u);
  EXPECT_EQ(g.group_of(10), 3u);
  const auto ranges = embedding_ranges(calib);
  for (std::size_t i = 1; i < 12; ++i) EXPECT_LE(ranges[g.perm()[i - 1]], ranges[g.perm()[i]]);
}

TEST(PegOverhead, Formula) {
  EXPECT_EQ(peg_overhead(768, 6), 804u);
  EXPECT_EQ(peg_overhead(768, 1), 774u);
}

TEST(Split, MergeInvertsSplit) {
  std::mt19937_64 rng(32);
  const TensorF x = testing::random_tensor(Shape{3, 12}, rng);
  const GroupSpec g = build_range_permutation(embedding_ranges(x), 3);
  EXPECT_EQ(merge_groups(split_by_groups(x, g), g), x);
}

TEST(Split, LinearPartsSumToWhole) {
  std::mt19937_64 rng(33);
  const Linear l{testing::random_tensor(Shape{5, 6}, rng), std::vector<float>(5, 0.3f)};
  const TensorF x = testing::random_tensor(Shape{4, 6}, rng);
  const GroupSpec g(3, std::vector<std::size_t>{5, 1, 0, 4, 2, 3});
  const auto parts = split_linear_by_input_groups(l, g);
  const auto xs = split_by_groups(x, g);
  TensorF sum = parts[0].forward(xs[0]);
  for (std::size_t k = 1; k < 3; ++k) sum = add(sum, parts[k].forward(xs[k]));
  EXPECT_LT(testing::max_rel_diff(sum, l.forward(x)), 1e-6);
}

TEST(Permutation, FfnBlockEquivariant) {
  std::mt19937_64 rng(34);
  const FfnBlock b = random_block(12, 24, rng);
  const TensorF v = testing::random_tensor(Shape{5, 12}, rng);
  const GroupSpec g = build_range_permutation(embedding_ranges(v), 4);
  const TensorF ref = ffn_block_forward(b, v);
  const TensorF got = permuted_ffn_block_forward(permute_ffn_block(b, g.perm()), g, v);
  EXPECT_LT(testing::max_rel_diff(got, ref), 1e-6);
}

TEST(GroupedMatmul, CollapsesToPerTensorAndPerEmbedding) {
  std::mt19937_64 rng(35);
  const std::size_t d = 8;
  const TensorF w = testing::random_tensor(Shape{5, d}, rng);
  const Range wr = min_max(w);
  const QTensor wq = quantize(w, QParams::from_range(wr.min, wr.max, 8, true));
  const TensorF x = testing::random_tensor(Shape{3, d}, rng);
  const Range xr = min_max(x);
  const QParams px = QParams::from_range(xr.min, xr.max, 8, false);

  const RescaledMatmul k1 = qmatmul_peg(wq, quantize(x, GranularParams::per_group({px}, GroupSpec(d, 1))));
  const IntMatmulResult pt = qmatmul_per_tensor(wq, quantize(x, px));
  EXPECT_EQ(k1.rescale_ops, 1u);
  EXPECT_LT(testing::max_rel_diff(k1.values, pt.dequantize()), 1e-6);

  RangeEstimator e({}, QuantLayout::per_embedding(d));
  e.observe(x);
  const GranularParams pe = e.finalize(8, false);
  std::vector<QParams> per_dim(pe.params().begin(), pe.params().end());
  const RescaledMatmul kd = qmatmul_peg(wq, quantize(x, GranularParams::per_group(per_dim, GroupSpec(d, d))));
  const RescaledMatmul emb = qmatmul_per_embedding(wq, quantize(x, pe));
  EXPECT_EQ(kd.rescale_ops, d);
  EXPECT_EQ(emb.rescale_ops, d);
  EXPECT_LT(testing::max_rel_diff(kd.values, emb.values), 1e-6);
}

TEST(PegFfn, RewriteIsBitExact) {
  std::mt19937_64 rng(36);
  const std::size_t d = 12, d_ff = 24;
  const FfnBlock b = random_block(d, d_ff, rng);
  TensorF x = testing::random_tensor(Shape{6, d}, rng);
  for (std::size_t r = 0; r < x.rows(); ++r) x.mutable_row(r)[2] *= 40.0f;
  for (bool permute : {false, true}) {
    const GroupSpec g = permute ? build_range_permutation(embedding_ranges(x), 3) : GroupSpec(d, 3);
    const PegFfnQuant q = calibrate_peg_ffn(b.fc1, b.fc2, x, g);
    EXPECT_EQ(peg_ffn_forward_per_tensor(b.fc1, b.fc2, x, g, q), peg_ffn_forward_native(b.fc1, b.fc2, x, g, q));
  }
}

TEST(PegFfn, RejectsMismatchedSpec) {
  std::mt19937_64 rng(37);
  const FfnBlock b = random_block(8, 16, rng);
  const TensorF x = testing::random_tensor(Shape{2, 8}, rng);
  const PegFfnQuant q = calibrate_peg_ffn(b.fc1, b.fc2, x, GroupSpec(8, 2));
  EXPECT_THROW(peg_ffn_forward_native(b.fc1, b.fc2, x, GroupSpec(8, 4), q), ConfigError);
}

}  // namespace
}  // namespace pegq
