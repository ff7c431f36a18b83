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

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pegq/group_spec.hpp"
#include "pegq/tensor.hpp"

namespace pegq {

/// Scale used when an observed range collapses to the single value zero.
inline constexpr double kDegenerateScale = 1e-8;

bool is_supported_bit_width(int bits);

/// Round half away from zero. Every quantizer in the library rounds this way.
double round_half_away(double v);

/// Uniform affine grid on the unsigned integers [0, 2^b - 1].
///
/// Symmetric grids fix the zero-point to 2^(b-1), which is the signed grid
/// [-2^(b-1), 2^(b-1) - 1] shifted onto the unsigned range.
struct QParams {
  int bits = 8;
  double scale = 1.0;
  std::int32_t zero_point = 0;
  bool symmetric = false;

  std::int32_t qmax() const { return (std::int32_t{1} << bits) - 1; }
  /// Throws ConfigError if any invariant is violated.
  void validate() const;

  /// Min-max parameters for an observed range.
  ///
  /// Asymmetric: the range is widened to contain zero, then
  /// s = (max - min) / (2^b - 1), z = clip(round(-min / s), 0, 2^b - 1).
  /// Symmetric: s = max(|min|, |max|) / (2^(b-1) - 1), z = 2^(b-1).
  /// A range that collapses to zero uses kDegenerateScale.
  static QParams from_range(double min, double max, int bits, bool symmetric);

  friend bool operator==(const QParams&, const QParams&) = default;
};

std::int32_t quantize_value(float x, const QParams& p);
float dequantize_value(std::int32_t q, const QParams& p);
inline float fake_quantize_value(float x, const QParams& p) { return dequantize_value(quantize_value(x, p), p); }

enum class Granularity { kPerTensor, kPerEmbedding, kPerEmbeddingGroup };

const char* to_string(Granularity g);

/// Quantization parameters at one of the three granularities. Per-embedding and
/// per-group parameters broadcast along the last axis.
class GranularParams {
 public:
  GranularParams() = default;
  static GranularParams per_tensor(QParams p);
  static GranularParams per_embedding(std::vector<QParams> params);
  static GranularParams per_group(std::vector<QParams> params, GroupSpec groups);

  Granularity granularity() const { return granularity_; }
  std::span<const QParams> params() const { return params_; }
  std::vector<QParams>& mutable_params() { return params_; }
  const GroupSpec* groups() const { return groups_ ? &*groups_ : nullptr; }

  /// Parameter slot that governs embedding dimension \p dim.
  std::size_t slot_of(std::size_t dim) const;
  const QParams& for_dim(std::size_t dim) const { return params_[slot_of(dim)]; }

  /// Throws unless the parameters apply to a last axis of width \p d.
  void check_width(std::size_t d) const;

  friend bool operator==(const GranularParams&, const GranularParams&) = default;

 private:
  Granularity granularity_ = Granularity::kPerTensor;
  std::vector<QParams> params_;
  std::optional<GroupSpec> groups_;
};

/// Integer payload with the parameters that produced it. Values lie in [0, 2^b - 1].
struct QTensor {
  Shape shape;
  std::vector<std::int32_t> values;
  GranularParams params;
};

QTensor quantize(const TensorF& x, const QParams& p);
QTensor quantize(const TensorF& x, const GranularParams& p);
TensorF dequantize(const QTensor& q);

TensorF fake_quantize(const TensorF& x, const QParams& p);
TensorF fake_quantize(const TensorF& x, const GranularParams& p);

/// Straight-through estimator: grad_out passes where the rounded grid index is
/// not clipped, zero elsewhere.
TensorF ste_backward_input(const TensorF& grad_out, const TensorF& x, const QParams& p);
TensorF ste_backward_input(const TensorF& grad_out, const TensorF& x, const GranularParams& p);

struct LsqOptions {
  /// Multiply by 1 / sqrt(N * Q_max) as in the original learned-step-size recipe.
  bool gradient_scaling = false;
};

/// Per-element d(x_hat)/ds: round(x/s) - x/s inside the grid, -z below, 2^b - 1 - z above.
double lsq_scale_derivative(float x, const QParams& p);

/// grad_out-weighted sum of lsq_scale_derivative over the tensor.
double lsq_backward_scale(const TensorF& grad_out, const TensorF& x, const QParams& p, LsqOptions opts = {});

/// One scale gradient per parameter slot.
std::vector<double> lsq_backward_scale(const TensorF& grad_out, const TensorF& x, const GranularParams& p,
                                       LsqOptions opts = {});

}  // namespace pegq
