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

#include "pegq/range_estimator.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "pegq/error.hpp"

namespace pegq {

const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::kCurrentMinMax: return "current_minmax";
    case EstimatorKind::kRunningMinMax: return "running_minmax";
    case EstimatorKind::kMse: return "mse";
  }
  return "?";
}

EstimatorKind estimator_from_string(const std::string& name) {
  if (name == "current_minmax" || name == "minmax") return EstimatorKind::kCurrentMinMax;
  if (name == "running_minmax") return EstimatorKind::kRunningMinMax;
  if (name == "mse") return EstimatorKind::kMse;
  throw ConfigError("unknown range estimator '" + name + "'");
}

void EstimatorConfig::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("running min-max momentum must lie in [0, 1)");
  if (grid_points < 1) throw ConfigError("MSE grid needs at least one candidate");
  if (!(alpha_min > 0.0 && alpha_min <= 1.0)) throw ConfigError("MSE alpha_min must lie in (0, 1]");
}

std::size_t QuantLayout::slots() const {
  switch (granularity) {
    case Granularity::kPerTensor: return 1;
    case Granularity::kPerEmbedding: return width;
    case Granularity::kPerEmbeddingGroup: return groups->groups();
  }
  return 1;
}

std::size_t QuantLayout::slot_of(std::size_t dim) const {
  switch (granularity) {
    case Granularity::kPerTensor: return 0;
    case Granularity::kPerEmbedding: return dim;
    case Granularity::kPerEmbeddingGroup: return groups->group_of(dim);
  }
  return 0;
}

GranularParams QuantLayout::wrap(std::vector<QParams> params) const {
  switch (granularity) {
    case Granularity::kPerTensor: return GranularParams::per_tensor(params.at(0));
    case Granularity::kPerEmbedding: return GranularParams::per_embedding(std::move(params));
    case Granularity::kPerEmbeddingGroup: return GranularParams::per_group(std::move(params), *groups);
  }
  throw ConfigError("bad granularity");
}

double mse_candidate_alpha(int i, int n, double alpha_min) {
  if (n <= 1 || i >= n - 1) return 1.0;
  return alpha_min + (1.0 - alpha_min) * static_cast<double>(i) / static_cast<double>(n - 1);
}

MseSearchResult mse_search(std::span<const float> values, double min, double max, int bits, bool symmetric,
                           int grid_points, double alpha_min) {
  MseSearchResult best;
  best.error = std::numeric_limits<double>::infinity();
  for (int i = grid_points - 1; i >= 0; --i) {
    const double alpha = mse_candidate_alpha(i, grid_points, alpha_min);
    const QParams p = QParams::from_range(alpha * min, alpha * max, bits, symmetric);
    double err = 0.0;
    for (float v : values) {
      const double e = static_cast<double>(v) - fake_quantize_value(v, p);
      err += e * e;
    }
    if (err < best.error) best = {alpha, err, p};
  }
  return best;
}

RangeEstimator::RangeEstimator(EstimatorConfig config, QuantLayout layout)
    : config_(config), layout_(std::move(layout)) {
  config_.validate();
  if (layout_.granularity != Granularity::kPerTensor && layout_.width == 0) {
    throw ConfigError("per-embedding layouts need a width");
  }
}

void RangeEstimator::observe(const TensorF& t, std::span<const std::uint8_t> keep) {
  if (t.empty()) throw Error("cannot observe an empty tensor");
  if (!keep.empty() && keep.size() != t.size()) throw Error("observation mask size does not match tensor");
  const std::size_t d = t.shape().last();
  if (layout_.granularity != Granularity::kPerTensor && d != layout_.width) {
    throw ConfigError("observed tensor has last extent " + std::to_string(d) + ", estimator expects " +
                      std::to_string(layout_.width));
  }
  const std::size_t n_slots = layout_.slots();
  std::vector<std::size_t> slot(d);
  for (std::size_t j = 0; j < d; ++j) slot[j] = layout_.slot_of(j);

  std::vector<double> lo(n_slots, std::numeric_limits<double>::infinity());
  std::vector<double> hi(n_slots, -std::numeric_limits<double>::infinity());
  auto src = t.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!keep.empty() && !keep[i]) continue;
    const std::size_t s = slot[i % d];
    lo[s] = std::min<double>(lo[s], src[i]);
    hi[s] = std::max<double>(hi[s], src[i]);
  }
  for (std::size_t s = 0; s < n_slots; ++s) {
    if (lo[s] > hi[s]) return;  // fully masked slot: skip the batch
  }

  if (config_.kind == EstimatorKind::kMse) {
    std::size_t kept = keep.empty() ? src.size() : static_cast<std::size_t>(std::count_if(keep.begin(), keep.end(), [](auto k) { return k != 0; }));
    if (stored_ + kept > config_.max_elements) {
      throw ConfigError("MSE estimator exceeded its calibration buffer of " + std::to_string(config_.max_elements) +
                        " elements");
    }
    samples_.resize(n_slots);
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (!keep.empty() && !keep[i]) continue;
      samples_[slot[i % d]].push_back(src[i]);
    }
    stored_ += kept;
  }

  if (batches_ == 0 || config_.kind == EstimatorKind::kCurrentMinMax) {
    min_ = std::move(lo);
    max_ = std::move(hi);
  } else if (config_.kind == EstimatorKind::kRunningMinMax) {
    const double m = config_.momentum;
    for (std::size_t s = 0; s < n_slots; ++s) {
      min_[s] = m * min_[s] + (1.0 - m) * lo[s];
      max_[s] = m * max_[s] + (1.0 - m) * hi[s];
    }
  } else {
    for (std::size_t s = 0; s < n_slots; ++s) {
      min_[s] = std::min(min_[s], lo[s]);
      max_[s] = std::max(max_[s], hi[s]);
    }
  }
  ++batches_;
}

std::vector<MseSearchResult> RangeEstimator::search(int bits, bool symmetric) const {
  std::vector<MseSearchResult> out;
  for (std::size_t s = 0; s < min_.size(); ++s) {
    out.push_back(mse_search(samples_[s], min_[s], max_[s], bits, symmetric, config_.grid_points, config_.alpha_min));
  }
  return out;
}

GranularParams RangeEstimator::finalize(int bits, bool symmetric) const {
  if (batches_ == 0) throw ConfigError("range estimator finalized before observing any batch");
  std::vector<QParams> params;
  if (config_.kind == EstimatorKind::kMse) {
    for (const auto& r : search(bits, symmetric)) params.push_back(r.params);
  } else {
    for (std::size_t s = 0; s < min_.size(); ++s) params.push_back(QParams::from_range(min_[s], max_[s], bits, symmetric));
  }
  return layout_.wrap(std::move(params));
}

std::vector<double> RangeEstimator::mse_alphas(int bits, bool symmetric) const {
  if (config_.kind != EstimatorKind::kMse || batches_ == 0) return {};
  std::vector<double> out;
  for (const auto& r : search(bits, symmetric)) out.push_back(r.alpha);
  return out;
}

}  // namespace pegq
