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
#include <optional>
#include <vector>

#include "pegq/encoder.hpp"
#include "pegq/qat.hpp"
#include "pegq/quant_config.hpp"

namespace pegq {

/// Co-occurrence task: label 1 iff both marker tokens appear in the sequence.
/// Sequences are [CLS] content... [SEP] [PAD]...
struct SyntheticTask {
  std::int32_t cls_id = 1;
  std::int32_t sep_id = 2;
  std::int32_t marker_a = 3;
  std::int32_t marker_b = 4;
  std::int32_t first_content = 5;
  std::size_t min_len = 8;  // including CLS and SEP
};

struct Dataset {
  TokenBatch tokens;
  std::vector<std::int32_t> labels;

  std::size_t size() const { return labels.size(); }
  Dataset slice(std::size_t begin, std::size_t count) const;
};

/// Balanced dataset of \p n sequences of length config.max_len.
Dataset make_dataset(const EncoderConfig& config, const SyntheticTask& task, std::size_t n, std::uint64_t seed);

/// Fraction of correct argmax predictions; quantized when \p qconfig is set.
double accuracy(const EncoderModel& model, const Dataset& data, const QuantConfig* qconfig = nullptr,
                std::size_t batch_size = 256);

struct TrainOptions {
  std::size_t steps = 300;
  std::size_t batch_size = 32;
  QatOptions optimizer;  // total_steps is overridden by steps
  std::uint64_t seed = 0;
};

/// Minibatch training with shuffling. \p qconfig null means full precision.
/// Returns the per-step losses.
std::vector<double> train(EncoderModel& model, const Dataset& data, const TrainOptions& options,
                          QuantConfig* qconfig = nullptr);

/// Hand-set FFN parameters that make a few embedding dimensions of one layer's
/// FFN output very large.
struct OutlierPlant {
  std::size_t layer = 0;
  std::vector<std::size_t> dims;
  double magnitude = 60.0;  // outlier value / bulk range of the FFN output
  /// Gated plant: one FFN unit fires only on tokens equal to gate_token and
  /// writes the outliers there. Ungated plant: the outliers go into the fc2
  /// bias and appear on every token.
  bool gated = true;
  std::int32_t gate_token = 2;
  std::size_t unit = 0;  // FFN unit used by the gate; defaults to the last one
};

/// The FFN entries written by a plant, so they can be re-applied.
struct PlantRecord {
  std::size_t layer = 0;
  std::size_t unit = 0;
  bool gated = true;
  std::vector<float> fc1_row;
  float fc1_bias = 0.0f;
  std::vector<std::size_t> dims;
  std::vector<float> values;  // fc2 column entries (gated) or fc2 bias entries
  double bulk_range = 0.0;

  void apply(EncoderModel& model) const;
};

/// Builds the plant from statistics of \p probe (FP32 activations of \p model).
PlantRecord plan_outlier_plant(const EncoderModel& model, const TokenBatch& probe, const OutlierPlant& plant);

/// Copy of \p model with the plant applied.
EncoderModel inject_outlier_model(const EncoderModel& model, const TokenBatch& probe, const OutlierPlant& plant,
                                  PlantRecord* record = nullptr);

/// Trained FP32 encoder on the co-occurrence task plus a gated outlier plant in
/// the last layer, applied after training.
struct PlantedTaskOptions {
  EncoderConfig config = [] {
    EncoderConfig c;
    c.layers = 2;
    c.d = 96;
    c.heads = 4;
    c.d_ff = 384;
    c.max_len = 24;
    c.vocab = 100;
    return c;
  }();
  SyntheticTask task = [] {
    SyntheticTask t;
    t.min_len = 6;
    return t;
  }();
  std::size_t train_size = 4000;
  std::size_t test_size = 1000;
  std::size_t calib_size = 256;
  std::size_t train_steps = 200;
  double lr = 1e-3;
  std::vector<std::size_t> outlier_dims = {5, 40, 77};
  double magnitude = 300.0;
  std::uint64_t seed = 7;
};

struct PlantedTask {
  EncoderModel fp32_model;  // before the plant
  EncoderModel model;       // with the plant
  PlantRecord plant;
  Dataset train, test, calib;
};

PlantedTask build_planted_task(const PlantedTaskOptions& options);

}  // namespace pegq
