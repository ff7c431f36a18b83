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

#include "pegq/qat.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "pegq/error.hpp"

namespace pegq {

double lr_multiplier(std::size_t step, std::size_t total_steps, double warmup_fraction) {
  if (total_steps == 0 || step >= total_steps) return 0.0;
  const auto warm = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warm) return static_cast<double>(step + 1) / static_cast<double>(warm);
  return static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warm);
}

OptimizerState init_optimizer(const EncoderModel& model) {
  OptimizerState s;
  s.m = model.zeros_like();
  s.v = model.zeros_like();
  return s;
}

double qat_train_step(EncoderModel& model, QuantConfig& config, const TokenBatch& tokens,
                      std::span<const std::int32_t> labels, OptimizerState& state, const QatOptions& options) {
  Gradients grads = compute_gradients(model, tokens, labels, config, options.lsq);
  const double mult = lr_multiplier(state.step, options.total_steps, options.warmup_fraction);
  if (!std::isfinite(grads.loss)) {
    throw Error(fmt::format("non-finite loss {} at step {} (lr multiplier {:.4f}, batch {}x{})", grads.loss,
                            state.step, mult, tokens.batch, tokens.seq));
  }
  const std::size_t t = ++state.step;
  const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(t));
  const double lr = options.lr * mult;

  auto params = model.parameters();
  auto g = grads.params.parameters();
  auto m = state.m.parameters();
  auto v = state.v.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[i].values[j]) + options.weight_decay * p[j];
      const double mj = options.beta1 * m[i].values[j] + (1.0 - options.beta1) * gj;
      const double vj = options.beta2 * v[i].values[j] + (1.0 - options.beta2) * gj * gj;
      m[i].values[j] = static_cast<float>(mj);
      v[i].values[j] = static_cast<float>(vj);
      if (lr != 0.0) p[j] = static_cast<float>(p[j] - lr * (mj / bc1) / (std::sqrt(vj / bc2) + options.eps));
    }
  }

  if (options.learn_scales) {
    const double slr = options.scale_lr * mult;
    for (const auto& [name, sg] : grads.scales) {
      auto it = config.sites.find(name);
      if (it == config.sites.end() || !it->second.params) continue;
      auto& qp = it->second.params->mutable_params();
      auto& ms = state.scale_m[name];
      auto& vs = state.scale_v[name];
      if (ms.empty()) {
        ms.assign(sg.size(), 0.0);
        vs.assign(sg.size(), 0.0);
      }
      for (std::size_t k = 0; k < sg.size(); ++k) {
        const double gl = sg[k] * qp[k].scale;  // d loss / d log s
        ms[k] = options.beta1 * ms[k] + (1.0 - options.beta1) * gl;
        vs[k] = options.beta2 * vs[k] + (1.0 - options.beta2) * gl * gl;
        if (slr == 0.0) continue;
        const double step = slr * (ms[k] / bc1) / (std::sqrt(vs[k] / bc2) + options.eps);
        qp[k].scale = std::max(qp[k].scale * std::exp(-step), kDegenerateScale);
      }
    }
  }
  if (options.post_step) options.post_step(model);
  return grads.loss;
}

}  // namespace pegq
