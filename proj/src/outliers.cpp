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

#include "pegq/outliers.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pegq/error.hpp"

namespace pegq {

std::vector<std::size_t> OutlierReport::flagged_dims() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < dim_hits.size(); ++j) {
    if (dim_hits[j] > 0) out.push_back(j);
  }
  return out;
}

OutlierReport detect_outliers(const TensorF& t, double k, StatsScope scope) {
  if (t.shape().rank() != 3) throw Error("outlier detection needs a rank-3 (S, T, d) tensor");
  if (!(k >= 0.0)) throw ConfigError("sigma multiplier must be non-negative");
  OutlierReport r;
  r.sigma = k;
  r.scope = scope;
  r.sequences = t.shape()[0];
  r.tokens = t.shape()[1];
  r.dims = t.shape()[2];
  r.dim_hits.assign(r.dims, 0);
  r.dim_sequences.assign(r.dims, 0);
  const std::size_t per_seq = r.tokens * r.dims;
  auto data = t.data();
  MeanStd pooled{};
  if (scope == StatsScope::kPooled) pooled = mean_std(data);
  std::vector<std::uint8_t> seen(r.dims);
  for (std::size_t s = 0; s < r.sequences; ++s) {
    auto slice = data.subspan(s * per_seq, per_seq);
    const MeanStd ms = scope == StatsScope::kPooled ? pooled : mean_std(slice);
    const double limit = k * ms.std;
    std::fill(seen.begin(), seen.end(), 0);
    for (std::size_t i = 0; i < per_seq; ++i) {
      if (!(std::abs(static_cast<double>(slice[i]) - ms.mean) > limit)) continue;
      const std::size_t dim = i % r.dims;
      r.cells.push_back({s, i / r.dims, dim, slice[i]});
      ++r.dim_hits[dim];
      if (!seen[dim]) {
        seen[dim] = 1;
        ++r.dim_sequences[dim];
      }
    }
  }
  return r;
}

std::vector<TokenRange> token_ranges(const TensorF& t) {
  if (t.shape().rank() != 3) throw Error("token ranges need a rank-3 (S, T, d) tensor");
  const std::size_t S = t.shape()[0], T = t.shape()[1];
  std::vector<TokenRange> out;
  out.reserve(S * T);
  for (std::size_t r = 0; r < S * T; ++r) {
    auto row = t.row(r);
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    out.push_back({r / T, r % T, *lo, *hi});
  }
  return out;
}

TensorF make_outlier_dump(const OutlierDumpSpec& spec) {
  for (std::size_t d : spec.outlier_dims) {
    if (d >= spec.dims) throw ConfigError("outlier dim out of range");
  }
  for (std::size_t tk : spec.outlier_tokens) {
    if (tk >= spec.tokens) throw ConfigError("outlier token out of range");
  }
  TensorF t(Shape{spec.sequences, spec.tokens, spec.dims});
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (float& v : t.mutable_data()) v = normal(rng);
  for (std::size_t s = 0; s < spec.sequences; ++s)
    for (std::size_t tk : spec.outlier_tokens)
      for (std::size_t d : spec.outlier_dims) t[(s * spec.tokens + tk) * spec.dims + d] += static_cast<float>(spec.magnitude);
  return t;
}

}  // namespace pegq
