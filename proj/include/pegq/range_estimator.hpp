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
#include <optional>
#include <string>
#include <span>
#include <vector>

#include "pegq/group_spec.hpp"
#include "pegq/quant.hpp"
#include "pegq/tensor.hpp"

namespace pegq {

enum class EstimatorKind { kCurrentMinMax, kRunningMinMax, kMse };

const char* to_string(EstimatorKind k);
EstimatorKind estimator_from_string(const std::string& name);

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::kCurrentMinMax;
  double momentum = 0.9;
  int grid_points = 100;
  double alpha_min = 0.1;
  std::size_t max_elements = std::size_t{1} << 24;

  void validate() const;
  friend bool operator==(const EstimatorConfig&, const EstimatorConfig&) = default;
};

/// How parameter slots map onto the last axis of observed tensors.
struct QuantLayout {
  Granularity granularity = Granularity::kPerTensor;
  std::size_t width = 0;  // 0 for per-tensor
  std::optional<GroupSpec> groups;

  static QuantLayout per_tensor() { return {}; }
  static QuantLayout per_embedding(std::size_t d) { return {Granularity::kPerEmbedding, d, std::nullopt}; }
  static QuantLayout per_group(GroupSpec g) {
    const std::size_t d = g.width();
    return {Granularity::kPerEmbeddingGroup, d, std::move(g)};
  }

  std::size_t slots() const;
  std::size_t slot_of(std::size_t dim) const;
  GranularParams wrap(std::vector<QParams> params) const;
};

/// Result of a clipping-range search for one parameter slot.
struct MseSearchResult {
  double alpha = 1.0;
  double error = 0.0;
  QParams params;
};

/// Candidate shrink factor i of n, linear in [alpha_min, 1]; i = n - 1 is exactly 1.
double mse_candidate_alpha(int i, int n, double alpha_min);

/// Searches [alpha * min, alpha * max] over the candidate grid for the smallest
/// sum of squared fake-quantization errors. Ties go to the wider range.
MseSearchResult mse_search(std::span<const float> values, double min, double max, int bits, bool symmetric,
                           int grid_points, double alpha_min);

/// Static range estimation state for one quantizer.
class RangeEstimator {
 public:
  RangeEstimator() = default;
  RangeEstimator(EstimatorConfig config, QuantLayout layout);

  /// Folds one calibration batch in. \p keep, when non-empty, masks elements
  /// (nonzero = observed) and must match the tensor size.
  void observe(const TensorF& t, std::span<const std::uint8_t> keep = {});

  /// Throws if nothing was observed.
  GranularParams finalize(int bits, bool symmetric) const;

  /// Per-slot alpha picked by the MSE search; empty for min-max estimators.
  std::vector<double> mse_alphas(int bits, bool symmetric) const;

  const EstimatorConfig& config() const { return config_; }
  const QuantLayout& layout() const { return layout_; }
  std::size_t observed_batches() const { return batches_; }
  const std::vector<double>& running_min() const { return min_; }
  const std::vector<double>& running_max() const { return max_; }

 private:
  std::vector<MseSearchResult> search(int bits, bool symmetric) const;

  EstimatorConfig config_;
  QuantLayout layout_;
  std::size_t batches_ = 0;
  std::vector<double> min_;
  std::vector<double> max_;
  std::vector<std::vector<float>> samples_;  // per slot, Mse only
  std::size_t stored_ = 0;
};

}  // namespace pegq
