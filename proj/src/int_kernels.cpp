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

#include "pegq/int_kernels.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "pegq/error.hpp"

namespace pegq {

OverflowPolicy default_overflow_policy() {
#if defined(PEGQ_SATURATING_ACCUMULATOR)
  return OverflowPolicy::kSaturating;
#else
  return OverflowPolicy::kChecked;
#endif
}

namespace {

inline std::int32_t acc_add(std::int32_t a, std::int64_t b, OverflowPolicy policy) {
  const std::int64_t s = static_cast<std::int64_t>(a) + b;
  constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
  constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
  if (s < lo || s > hi) {
    if (policy == OverflowPolicy::kChecked) throw Error("32-bit accumulator overflow");
    return static_cast<std::int32_t>(std::clamp(s, lo, hi));
  }
  return static_cast<std::int32_t>(s);
}

// Signed weight grid (W^Z - z_w) with per-row sums for zero-point folding.
struct PreparedWeight {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> values;
  std::vector<std::int64_t> row_sums;
  double scale = 1.0;
};

PreparedWeight prepare_weight(const QTensor& w) {
  if (w.shape.rank() != 2) throw Error("weight must be a (d_out, d_in) tensor");
  if (w.params.granularity() != Granularity::kPerTensor) throw ConfigError("integer kernels need per-tensor weights");
  const QParams& p = w.params.params()[0];
  if (!p.symmetric) throw ConfigError("integer kernels need symmetric weights");
  PreparedWeight pw;
  pw.rows = w.shape[0];
  pw.cols = w.shape[1];
  pw.scale = p.scale;
  pw.values.resize(w.values.size());
  pw.row_sums.assign(pw.rows, 0);
  for (std::size_t r = 0; r < pw.rows; ++r) {
    for (std::size_t c = 0; c < pw.cols; ++c) {
      const std::int32_t v = w.values[r * pw.cols + c] - p.zero_point;
      pw.values[r * pw.cols + c] = v;
      pw.row_sums[r] += v;
    }
  }
  return pw;
}

void check_inner(const PreparedWeight& w, const QTensor& x) {
  if (x.shape.last() != w.cols) {
    throw Error("inner dimensions differ: weight has " + std::to_string(w.cols) + " columns, activation has " +
                std::to_string(x.shape.last()));
  }
}

}  // namespace

TensorF IntMatmulResult::dequantize() const {
  TensorF out(shape);
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(static_cast<double>(acc[i]) * combined_scale);
  return out;
}

IntMatmulResult qmatmul_per_tensor(const QTensor& w, const QTensor& x, OverflowPolicy policy) {
  const PreparedWeight pw = prepare_weight(w);
  check_inner(pw, x);
  if (x.params.granularity() != Granularity::kPerTensor) throw ConfigError("per-tensor matmul needs per-tensor activations");
  const QParams& px = x.params.params()[0];
  const std::size_t d = pw.cols;
  const std::size_t n = x.values.size() / d;

  IntMatmulResult out;
  out.shape = x.shape.with_last(pw.rows);
  out.acc.assign(n * pw.rows, 0);
  out.combined_scale = pw.scale * px.scale;
  out.rescale_ops = 1;
  for (std::size_t r = 0; r < n; ++r) {
    const std::int32_t* xr = x.values.data() + r * d;
    for (std::size_t o = 0; o < pw.rows; ++o) {
      const std::int32_t* wr = pw.values.data() + o * d;
      std::int32_t acc = 0;
      for (std::size_t j = 0; j < d; ++j) acc = acc_add(acc, static_cast<std::int64_t>(wr[j]) * xr[j], policy);
      acc = acc_add(acc, -static_cast<std::int64_t>(px.zero_point) * pw.row_sums[o], policy);
      out.acc[r * pw.rows + o] = acc;
    }
  }
  return out;
}

RescaledMatmul qmatmul_per_embedding(const QTensor& w, const QTensor& x, OverflowPolicy) {
  const PreparedWeight pw = prepare_weight(w);
  check_inner(pw, x);
  const std::size_t d = pw.cols;
  x.params.check_width(d);
  std::vector<double> scale(d);
  std::vector<std::int32_t> zero(d);
  for (std::size_t j = 0; j < d; ++j) {
    scale[j] = pw.scale * x.params.for_dim(j).scale;
    zero[j] = x.params.for_dim(j).zero_point;
  }
  const std::size_t n = x.values.size() / d;
  RescaledMatmul out{TensorF(x.shape.with_last(pw.rows)), d};
  auto dst = out.values.mutable_data();
  for (std::size_t r = 0; r < n; ++r) {
    const std::int32_t* xr = x.values.data() + r * d;
    for (std::size_t o = 0; o < pw.rows; ++o) {
      const std::int32_t* wr = pw.values.data() + o * d;
      double sum = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        // Single-term products always fit; the rescale happens per term.
        sum += scale[j] * static_cast<double>(static_cast<std::int64_t>(wr[j]) * (xr[j] - zero[j]));
      }
      dst[r * pw.rows + o] = static_cast<float>(sum);
    }
  }
  return out;
}

RescaledMatmul qmatmul_peg(const QTensor& w, const QTensor& x, OverflowPolicy policy) {
  const PreparedWeight pw = prepare_weight(w);
  check_inner(pw, x);
  const std::size_t d = pw.cols;
  if (x.params.granularity() != Granularity::kPerEmbeddingGroup) {
    throw ConfigError("grouped matmul needs per-embedding-group activations");
  }
  x.params.check_width(d);
  const GroupSpec& groups = *x.params.groups();
  const std::size_t k = groups.groups();
  std::vector<double> scale(k);
  for (std::size_t g = 0; g < k; ++g) scale[g] = pw.scale * x.params.params()[g].scale;

  const std::size_t n = x.values.size() / d;
  RescaledMatmul out{TensorF(x.shape.with_last(pw.rows)), k};
  auto dst = out.values.mutable_data();
  for (std::size_t r = 0; r < n; ++r) {
    const std::int32_t* xr = x.values.data() + r * d;
    for (std::size_t o = 0; o < pw.rows; ++o) {
      const std::int32_t* wr = pw.values.data() + o * d;
      double sum = 0.0;
      for (std::size_t g = 0; g < k; ++g) {
        const std::int32_t z = x.params.params()[g].zero_point;
        std::int32_t acc = 0;
        std::int64_t row_sum = 0;
        for (std::size_t j : groups.members(g)) {
          acc = acc_add(acc, static_cast<std::int64_t>(wr[j]) * xr[j], policy);
          row_sum += wr[j];
        }
        acc = acc_add(acc, -static_cast<std::int64_t>(z) * row_sum, policy);
        sum += static_cast<double>(acc) * scale[g];
      }
      dst[r * pw.rows + o] = static_cast<float>(sum);
    }
  }
  return out;
}

TensorF sum_rescaled(std::span<const IntMatmulResult> parts) {
  if (parts.empty()) throw Error("nothing to sum");
  for (const auto& p : parts) {
    if (!(p.shape == parts[0].shape)) throw Error("partial results disagree in shape");
  }
  TensorF out(parts[0].shape);
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    double sum = 0.0;
    for (const auto& p : parts) sum += static_cast<double>(p.acc[i]) * p.combined_scale;
    dst[i] = static_cast<float>(sum);
  }
  return out;
}

QTensor requantize(const IntMatmulResult& result, const QParams& target) {
  return quantize(result.dequantize(), target);
}

QTensor requantize(const TensorF& values, const GranularParams& target) { return quantize(values, target); }

QTensor qadd_residual(const QTensor& a, const QTensor& b, const GranularParams& target) {
  if (!(a.shape == b.shape)) throw Error("residual operands differ in shape");
  TensorF sum = dequantize(a);
  const TensorF rhs = dequantize(b);
  auto dst = sum.mutable_data();
  auto src = rhs.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return quantize(sum, target);
}

}  // namespace pegq
