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

#include <cmath>
#include <set>

#include "pegq/encoder.hpp"
#include "pegq/error.hpp"
#include "test_models.hpp"

namespace pegq {
namespace {

TEST(Encoder, ConfigValidation) {
  EncoderConfig c = testing::tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Encoder, SiteRoster) {
  EncoderConfig c;
  c.layers = 12;
  c.d = 768;
  c.heads = 12;
  c.d_ff = 3072;
  const auto acts = activation_site_names(c);
  EXPECT_EQ(acts.size(), 161u);
  EXPECT_EQ(std::set<std::string>(acts.begin(), acts.end()).size(), acts.size());
  std::size_t weights = 0;
  for (const auto& s : enumerate_sites(c)) weights += s.kind == SiteKind::kWeight;
  EXPECT_EQ(weights, 12u * 6 + 4);
}

TEST(Encoder, ForwardShapesAndVisitorOrder) {
  const EncoderConfig c = testing::tiny_config();
  const EncoderModel m = init_encoder(c, 1);
  const Dataset data = testing::tiny_data(c, 3, 2);
  std::vector<std::string> seen;
  const ForwardOutput out = forward(m, data.tokens, [&](const std::string& n, TensorF&, auto) { seen.push_back(n); });
  EXPECT_EQ(out.hidden.shape(), (Shape{3, data.tokens.seq, c.d}));
  EXPECT_EQ(out.logits.shape(), (Shape{3, c.classes}));
  EXPECT_EQ(seen, activation_site_names(c));
}

TEST(Encoder, PaddingDoesNotLeakIntoRealPositions) {
  const EncoderConfig c = testing::tiny_config();
  const EncoderModel m = init_encoder(c, 3, 0.2f);
  TokenBatch a{1, 5, {1, 6, 7, 2, 0}};
  TokenBatch b{1, 7, {1, 6, 7, 2, 0, 0, 0}};
  const ForwardOutput oa = forward(m, a), ob = forward(m, b);
  for (std::size_t k = 0; k < c.classes; ++k) EXPECT_NEAR(oa.logits[k], ob.logits[k], 1e-5);
}

TEST(Encoder, VisitorCanReplaceActivations) {
  const EncoderConfig c = testing::tiny_config();
  const EncoderModel m = init_encoder(c, 4, 0.2f);
  const Dataset data = testing::tiny_data(c, 2, 5);
  const ForwardOutput out = forward(m, data.tokens, [](const std::string& n, TensorF& t, auto) {
    if (n == site::kHeadOutput) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 7.0f);
  });
  for (float v : out.logits.data()) EXPECT_EQ(v, 7.0f);
}

TEST(Encoder, MaskedSoftmax) {
  const std::vector<float> logits{1, 2, 3};
  const std::vector<std::uint8_t> keep{1, 0, 1};
  std::vector<float> out(3);
  masked_softmax(logits, keep, out);
  EXPECT_EQ(out[1], 0.0f);
  EXPECT_NEAR(out[0] + out[2], 1.0f, 1e-6);
  EXPECT_NEAR(out[2] / out[0], std::exp(2.0f), 1e-4);
}

TEST(Encoder, AttentionMassIsAProbability) {
  const EncoderConfig c = testing::tiny_config();
  const EncoderModel m = init_encoder(c, 6, 0.2f);
  const Dataset data = testing::tiny_data(c, 4, 7);
  for (std::size_t t = 0; t < data.tokens.seq; ++t) {
    const TensorF mass = attention_mass_on_token(m, data.tokens, t);
    for (std::size_t i = 0; i < mass.size(); ++i) {
      EXPECT_GE(mass[i], 0.0f);
      EXPECT_LE(mass[i], 1.0f);
    }
  }
  EXPECT_THROW(attention_mass_on_token(m, data.tokens, data.tokens.seq), Error);
}

TEST(Encoder, ParametersCoverTheModel) {
  const EncoderConfig c = testing::tiny_config();
  EncoderModel m = init_encoder(c, 8);
  std::size_t total = 0;
  for (const auto& p : m.parameters()) total += p.values.size();
  EXPECT_EQ(total, m.parameter_count());
  const EncoderModel z = m.zeros_like();
  EXPECT_EQ(z.parameter_count(), m.parameter_count());
}

}  // namespace
}  // namespace pegq
