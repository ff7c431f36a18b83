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

#include <limits>

#include "pegq/error.hpp"
#include "pegq/outliers.hpp"
#include "pegq/quant_config.hpp"
#include "test_models.hpp"

namespace pegq {
namespace {

TEST(Outliers, PlantedDumpFlagsExactlyPlantedDims) {
  OutlierDumpSpec spec;
  spec.sequences = 4;
  spec.outlier_dims = {3, 17, 50};
  spec.outlier_tokens = {0, 9};
  spec.seed = 5;
  const TensorF t = make_outlier_dump(spec);
  const OutlierReport r = detect_outliers(t, 6.0);
  EXPECT_EQ(r.flagged_dims(), spec.outlier_dims);
  EXPECT_EQ(r.cells.size(), 4u * 2 * 3);
  for (std::size_t j : spec.outlier_dims) EXPECT_EQ(r.dim_sequences[j], 4u);
}

TEST(Outliers, SigmaLimits) {
  OutlierDumpSpec spec;
  spec.tokens = 16;
  spec.dims = 8;
  const TensorF t = make_outlier_dump(spec);
  EXPECT_TRUE(detect_outliers(t, std::numeric_limits<double>::infinity()).cells.empty());
  EXPECT_TRUE(detect_outliers(t, 1e9).cells.empty());
  const MeanStd ms = mean_std(t);
  std::size_t off_mean = 0;
  for (float v : t.data()) off_mean += static_cast<double>(v) != ms.mean;
  EXPECT_EQ(detect_outliers(t, 0.0).cells.size(), off_mean);
}

TEST(Outliers, PooledScopeUsesAllSequences) {
  // Sequence 1 has std 1 on its own; pooled with the all-zero sequence the std is sqrt(0.5).
  const TensorF t(Shape{2, 2, 2}, {0, 0, 0, 0, 1, -1, 1, -1});
  EXPECT_EQ(detect_outliers(t, 0.5, StatsScope::kPerSequence).cells.size(), 4u);
  EXPECT_EQ(detect_outliers(t, 1.2, StatsScope::kPerSequence).cells.size(), 0u);
  EXPECT_EQ(detect_outliers(t, 1.2, StatsScope::kPooled).cells.size(), 4u);
  EXPECT_EQ(detect_outliers(t, 1.42, StatsScope::kPooled).cells.size(), 0u);
}

TEST(Outliers, CellsOrderedBySeqTokenDim) {
  OutlierDumpSpec spec;
  spec.sequences = 3;
  spec.outlier_dims = {40, 2};
  spec.outlier_tokens = {7, 1};
  const OutlierReport r = detect_outliers(make_outlier_dump(spec));
  for (std::size_t i = 1; i < r.cells.size(); ++i) {
    const auto& a = r.cells[i - 1];
    const auto& b = r.cells[i];
    EXPECT_LT(std::tie(a.seq, a.token, a.dim), std::tie(b.seq, b.token, b.dim));
  }
}

TEST(Outliers, RejectsWrongRank) { EXPECT_THROW(detect_outliers(TensorF(Shape{4, 4})), Error); }

TEST(TokenRanges, HandExample) {
  const TensorF t(Shape{1, 2, 2}, {1, 2, -3, 4});
  const auto r = token_ranges(t);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].min, 1.0f);
  EXPECT_EQ(r[0].max, 2.0f);
  EXPECT_EQ(r[1].min, -3.0f);
  EXPECT_EQ(r[1].max, 4.0f);
}

TEST(TokenRanges, ConstantTensor) {
  const TensorF t(Shape{2, 3, 4}, std::vector<float>(24, 1.5f));
  for (const auto& r : token_ranges(t)) EXPECT_EQ(r.min, r.max);
}

// A gated plant on [SEP] in a trained toy model appears as a structured outlier.
TEST(Outliers, GatedModelPlantIsDetected) {
  EncoderConfig c = testing::tiny_config();
  c.d = 64;
  c.heads = 4;
  c.d_ff = 128;
  c.max_len = 16;
  c.vocab = 40;
  SyntheticTask task;
  task.min_len = 6;
  const Dataset data = make_dataset(c, task, 64, 81);
  const EncoderModel base = init_encoder(c, 82, 0.05f);
  OutlierPlant plant;
  plant.layer = 0;
  plant.dims = {7, 30, 61};
  plant.magnitude = 60.0;
  PlantRecord rec;
  const EncoderModel m = inject_outlier_model(base, data.tokens, plant, &rec);
  TensorF out;
  forward(m, data.tokens, [&](const std::string& n, TensorF& t, auto) {
    if (n == site::layer(0, site::kFfnOutput)) out = t.reshaped(Shape{data.tokens.batch, data.tokens.seq, c.d});
  });
  const OutlierReport r = detect_outliers(out, 6.0);
  EXPECT_EQ(r.flagged_dims(), plant.dims);
}

}  // namespace
}  // namespace pegq
