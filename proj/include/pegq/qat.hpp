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
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pegq/encoder.hpp"
#include "pegq/quant.hpp"
#include "pegq/quant_config.hpp"

namespace pegq {

/// Mean softmax cross-entropy of (B, C) logits.
double cross_entropy(const TensorF& logits, std::span<const std::int32_t> labels);

/// Gradients of the mean cross-entropy. params mirrors the model layout; scales
/// holds one entry per parameter slot of every enabled site (activations and
/// weights), keyed by site name.
struct Gradients {
  EncoderModel params;
  std::map<std::string, std::vector<double>> scales;
  double loss = 0.0;
};

/// Fake-quantized forward and manual backward. Sites pass gradients through the
/// straight-through estimator; scale gradients use the learned-step-size rule.
Gradients compute_gradients(const EncoderModel& model, const TokenBatch& tokens, std::span<const std::int32_t> labels,
                            const QuantConfig& config, LsqOptions lsq = {});

struct QatOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Scales are updated multiplicatively (Adam on log s) with this rate.
  double scale_lr = 1e-3;
  bool learn_scales = true;
  std::size_t total_steps = 1;
  double warmup_fraction = 0.1;
  LsqOptions lsq;
  /// Runs after every update, e.g. to pin hand-set parameters.
  std::function<void(EncoderModel&)> post_step;
};

/// Linear warmup over the first warmup_fraction of total_steps, then linear
/// decay to zero at total_steps.
double lr_multiplier(std::size_t step, std::size_t total_steps, double warmup_fraction);

struct OptimizerState {
  std::size_t step = 0;
  EncoderModel m, v;
  std::map<std::string, std::vector<double>> scale_m, scale_v;
};

OptimizerState init_optimizer(const EncoderModel& model);

/// One joint update of weights and (optionally) scales. Returns the loss before
/// the update. A non-finite loss throws Error naming the step.
double qat_train_step(EncoderModel& model, QuantConfig& config, const TokenBatch& tokens,
                      std::span<const std::int32_t> labels, OptimizerState& state, const QatOptions& options);

}  // namespace pegq
