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
#include <vector>

#include "pegq/tensor.hpp"

namespace pegq {

/// Statistics used by the k-sigma rule: one mean/std per (T, d) sequence slice,
/// or one pair pooled over the whole tensor.
enum class StatsScope { kPerSequence, kPooled };

struct OutlierCell {
  std::size_t seq = 0, token = 0, dim = 0;
  float value = 0.0f;
};

struct OutlierReport {
  double sigma = 6.0;
  StatsScope scope = StatsScope::kPerSequence;
  std::size_t sequences = 0, tokens = 0, dims = 0;
  std::vector<OutlierCell> cells;          // ordered by (seq, token, dim)
  std::vector<std::size_t> dim_hits;       // flagged cells per dim
  std::vector<std::size_t> dim_sequences;  // sequences in which the dim was flagged

  std::vector<std::size_t> flagged_dims() const;
};

/// Flags cells with |x - mean| > k * std for a rank-3 (S, T, d) tensor.
OutlierReport detect_outliers(const TensorF& t, double k = 6.0, StatsScope scope = StatsScope::kPerSequence);

struct TokenRange {
  std::size_t seq = 0, token = 0;
  float min = 0.0f, max = 0.0f;
};

/// Min and max over the embedding axis for every (seq, token) of a rank-3 tensor.
std::vector<TokenRange> token_ranges(const TensorF& t);

/// Standard-normal bulk with planted cells: value bulk + magnitude at every
/// (outlier_token, outlier_dim) of each sequence.
struct OutlierDumpSpec {
  std::size_t sequences = 1, tokens = 128, dims = 64;
  std::vector<std::size_t> outlier_dims;
  std::vector<std::size_t> outlier_tokens;
  double magnitude = 60.0;
  std::uint64_t seed = 0;
};

TensorF make_outlier_dump(const OutlierDumpSpec& spec);

}  // namespace pegq
