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
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace pegq {

/// Dense extents. Activations use (B, T, d), weights use (d_out, d_in).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t last() const { return dims_.back(); }
  std::size_t numel() const { return numel_; }
  const std::vector<std::size_t>& dims() const { return dims_; }

  /// Same shape with the last extent replaced.
  Shape with_last(std::size_t extent) const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::size_t numel_ = 0;
};

/// Row-major float tensor. Values are finite.
class TensorF {
 public:
  TensorF() = default;
  /// Zero-filled.
  explicit TensorF(Shape shape);
  /// Takes ownership of \p data; rejects length mismatch and non-finite values.
  TensorF(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const float> data() const { return data_; }
  std::span<float> mutable_data() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  /// Number of vectors along the last axis (numel / last extent).
  std::size_t rows() const { return shape_.rank() == 0 ? 0 : size() / shape_.last(); }
  std::span<const float> row(std::size_t r) const;
  std::span<float> mutable_row(std::size_t r);

  TensorF reshaped(Shape shape) const;

  friend bool operator==(const TensorF&, const TensorF&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

struct Range {
  double min = 0.0;
  double max = 0.0;
};

/// Exact elementwise min and max. Throws on an empty tensor.
Range min_max(const TensorF& t);

/// Per-embedding ranges of a (B, T, d) tensor: component j reduces over all B*T positions.
std::pair<std::vector<double>, std::vector<double>> per_embedding_min_max(const TensorF& t);

/// Same reduction for any rank >= 1, over the last axis.
std::pair<std::vector<double>, std::vector<double>> last_axis_min_max(const TensorF& t);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Population mean / standard deviation (divide by n). Requires >= 2 elements.
MeanStd mean_std(std::span<const float> values);
inline MeanStd mean_std(const TensorF& t) { return mean_std(t.data()); }

/// Half-open slice [begin, end) along \p axis.
TensorF slice(const TensorF& t, std::size_t axis, std::size_t begin, std::size_t end);

/// Concatenates along \p axis; all other extents must agree.
TensorF concat(std::span<const TensorF> parts, std::size_t axis);

/// out[..., i] = t[..., index[i]] along the last axis.
TensorF gather_last(const TensorF& t, std::span<const std::size_t> index);

}  // namespace pegq
