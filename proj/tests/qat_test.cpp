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
#include <map>
#include <random>

#include "pegq/error.hpp"
#include "pegq/qat.hpp"
#include "pegq/quant_config.hpp"
#include "test_models.hpp"

namespace pegq {
namespace {

double loss_of(const EncoderModel& m, const Dataset& d, const SiteVisitor& v = {}) {
  return cross_entropy(forward(m, d.tokens, v).logits, d.labels);
}

TEST(CrossEntropy, UniformLogits) {
  const TensorF logits(Shape{2, 2}, {0, 0, 3, 3});
  const std::vector<std::int32_t> labels{0, 1};
  EXPECT_NEAR(cross_entropy(logits, labels), std::log(2.0), 1e-12);
  const std::vector<std::int32_t> bad{0, 2};
  EXPECT_THROW(cross_entropy(logits, bad), Error);
}

TEST(Gradients, Fp32MatchesFiniteDifferences) {
  const EncoderConfig c = testing::tiny_config();
  EncoderModel m = init_encoder(c, 21, 0.3f);
  const Dataset d = testing::tiny_data(c, 6, 22);
  const Gradients g = compute_gradients(m, d.tokens, d.labels, QuantConfig::disabled());
  EXPECT_NEAR(g.loss, loss_of(m, d), 1e-9);

  EncoderModel grads = g.params;
  auto params = m.parameters();
  auto gparams = grads.parameters();
  std::mt19937_64 rng(23);
  int checked = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values;
    for (int s = 0; s < 3; ++s) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(0, p.size() - 1)(rng);
      const float orig = p[j];
      const float h = 1e-2f;
      p[j] = orig + h;
      const double up = loss_of(m, d);
      p[j] = orig - h;
      const double down = loss_of(m, d);
      p[j] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double an = gparams[i].values[j];
      EXPECT_NEAR(an, fd, 2e-2 * std::max(std::abs(fd), std::abs(an)) + 2e-4) << params[i].name << "[" << j << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

// Linearization of every quantizer around the base point: rounding residuals
// and clip states are frozen, so the loss is smooth in the scale of one site.
class FrozenQuantizer {
 public:
  explicit FrozenQuantizer(const QuantConfig& config) : config_(config) {}

  SiteVisitor recorder() {
    return [this](const std::string& name, TensorF& t, std::span<const std::uint8_t>) { apply(name, t, true); };
  }
  SiteVisitor replay(std::string target, double target_scale) {
    target_ = std::move(target);
    target_scale_ = target_scale;
    return [this](const std::string& name, TensorF& t, std::span<const std::uint8_t>) { apply(name, t, false); };
  }

 private:
  void apply(const std::string& name, TensorF& t, bool record) {
    const SiteSettings& st = config_.resolve(name, SiteKind::kActivation);
    if (!st.enabled) return;
    const GranularParams& gp = *st.params;
    const std::size_t d = t.shape().last();
    auto& delta = delta_[name];
    auto& state = state_[name];
    if (record) {
      delta.resize(t.size());
      state.resize(t.size());
    }
    auto x = t.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const QParams& p = gp.for_dim(i % d);
      if (record) {
        const double u = x[i] / p.scale;
        const double idx = round_half_away(u) + p.zero_point;
        delta[i] = round_half_away(u) - u;
        state[i] = idx < 0 ? 1 : (idx > p.qmax() ? 2 : 0);
      }
      const double s = (!record && name == target_) ? target_scale_ : p.scale;
      switch (state[i]) {
        case 0: x[i] = static_cast<float>(x[i] + s * delta[i]); break;
        case 1: x[i] = static_cast<float>(s * (0 - p.zero_point)); break;
        default: x[i] = static_cast<float>(s * (p.qmax() - p.zero_point)); break;
      }
    }
  }

  const QuantConfig& config_;
  std::map<std::string, std::vector<double>> delta_;
  std::map<std::string, std::vector<std::uint8_t>> state_;
  std::string target_;
  double target_scale_ = 1.0;
};

TEST(Gradients, ActivationScaleMatchesFrozenSurrogate) {
  const EncoderConfig c = testing::tiny_config();
  const EncoderModel m = init_encoder(c, 31, 0.3f);
  const Dataset d = testing::tiny_data(c, 8, 32);
  QuantConfig q = QuantConfig::uniform(8, 4);
  calibrate(m, std::span(&d.tokens, 1), q);
  const Gradients g = compute_gradients(m, d.tokens, d.labels, q);
  const EncoderModel qm = quantize_weights(m, q);

  FrozenQuantizer frozen(q);
  const double base = loss_of(qm, d, frozen.recorder());
  EXPECT_NEAR(base, g.loss, 1e-6);

  for (const std::string& name : {std::string(site::kEmbeddingSum), site::layer(0, site::kFfnOutput),
                                 site::layer(0, site::kAttnResidual), std::string(site::kPoolerDense),
                                 std::string(site::kHeadOutput)}) {
    const double s = q.resolve(name, SiteKind::kActivation).params->params()[0].scale;
    const double h = 1e-2 * s;
    const double up = loss_of(qm, d, frozen.replay(name, s + h));
    const double down = loss_of(qm, d, frozen.replay(name, s - h));
    const double fd = (up - down) / (2 * h);
    const double an = g.scales.at(name)[0];
    EXPECT_NEAR(an, fd, 1e-2 * std::max(std::abs(fd), std::abs(an)) + 1e-4) << name;
  }
}

TEST(Schedule, WarmupThenLinearDecay) {
  EXPECT_DOUBLE_EQ(lr_multiplier(0, 100, 0.1), 0.1);
  EXPECT_DOUBLE_EQ(lr_multiplier(9, 100, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(lr_multiplier(10, 100, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(lr_multiplier(55, 100, 0.1), 0.5);
  EXPECT_DOUBLE_EQ(lr_multiplier(100, 100, 0.1), 0.0);
}

TEST(Qat, ZeroLearningRateLeavesModelAndScales) {
  const EncoderConfig c = testing::tiny_config();
  EncoderModel m = init_encoder(c, 41, 0.3f);
  const EncoderModel before = m;
  const Dataset d = testing::tiny_data(c, 8, 42);
  QuantConfig q = QuantConfig::uniform(8, 8);
  calibrate(m, std::span(&d.tokens, 1), q);
  const QuantConfig q0 = q;
  QatOptions opt;
  opt.lr = 0.0;
  opt.scale_lr = 0.0;
  opt.total_steps = 3;
  OptimizerState st = init_optimizer(m);
  for (int i = 0; i < 3; ++i) qat_train_step(m, q, d.tokens, d.labels, st, opt);
  auto a = m.parameters();
  auto b = const_cast<EncoderModel&>(before).parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(std::equal(a[i].values.begin(), a[i].values.end(), b[i].values.begin()));
  EXPECT_EQ(q, q0);
}

TEST(Qat, DisabledConfigEqualsFp32Training) {
  const EncoderConfig c = testing::tiny_config();
  const Dataset d = testing::tiny_data(c, 64, 51);
  TrainOptions opt;
  opt.steps = 40;
  opt.batch_size = 16;
  opt.optimizer.lr = 1e-2;
  EncoderModel a = init_encoder(c, 52, 0.1f), b = a;
  QuantConfig disabled = QuantConfig::disabled();
  const auto la = train(a, d, opt);
  const auto lb = train(b, d, opt, &disabled);
  EXPECT_EQ(la, lb);
  EXPECT_EQ(a.parameters()[0].shape, b.parameters()[0].shape);
  EXPECT_EQ(forward(a, d.tokens).logits, forward(b, d.tokens).logits);
  const double head = (la[0] + la[1] + la[2] + la[3]) / 4, tail = (la[36] + la[37] + la[38] + la[39]) / 4;
  EXPECT_LT(tail, head);
}

TEST(Qat, LearnedScalesStayPositive) {
  const EncoderConfig c = testing::tiny_config();
  EncoderModel m = init_encoder(c, 61, 0.3f);
  const Dataset d = testing::tiny_data(c, 16, 62);
  QuantConfig q = QuantConfig::uniform(4, 4);
  calibrate(m, std::span(&d.tokens, 1), q);
  QatOptions opt;
  opt.scale_lr = 0.5;
  opt.total_steps = 5;
  OptimizerState st = init_optimizer(m);
  for (int i = 0; i < 5; ++i) qat_train_step(m, q, d.tokens, d.labels, st, opt);
  for (const auto& [name, s] : q.sites) {
    if (!s.params) continue;
    for (const auto& p : s.params->params()) EXPECT_GE(p.scale, kDegenerateScale) << name;
  }
  EXPECT_NO_THROW(require_finalized(c, q));
}

}  // namespace
}  // namespace pegq
