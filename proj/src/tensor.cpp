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

#include "pegq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pegq/error.hpp"

namespace pegq {

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw Error("shape must have rank >= 1");
  std::size_t n = 1;
  for (std::size_t e : dims_) {
    if (e == 0) throw Error("shape extents must be >= 1");
    if (__builtin_mul_overflow(n, e, &n)) throw Error("shape element count overflows");
  }
  numel_ = n;
}

Shape Shape::with_last(std::size_t extent) const {
  auto dims = dims_;
  dims.back() = extent;
  return Shape(std::move(dims));
}

TensorF::TensorF(Shape shape) : shape_(std::move(shape)), data_(shape_.numel(), 0.0f) {}

TensorF::TensorF(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw Error("tensor data length " + std::to_string(data_.size()) + " does not match shape element count " +
                std::to_string(shape_.numel()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) throw Error("non-finite tensor value at flat index " + std::to_string(i));
  }
}

std::span<const float> TensorF::row(std::size_t r) const {
  const std::size_t w = shape_.last();
  return std::span<const float>(data_).subspan(r * w, w);
}

std::span<float> TensorF::mutable_row(std::size_t r) {
  const std::size_t w = shape_.last();
  return std::span<float>(data_).subspan(r * w, w);
}

TensorF TensorF::reshaped(Shape shape) const {
  if (shape.numel() != size()) throw Error("reshape changes element count");
  TensorF out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

Range min_max(const TensorF& t) {
  if (t.empty()) throw Error("min_max of an empty tensor");
  float lo = t[0];
  float hi = t[0];
  for (float v : t.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

std::pair<std::vector<double>, std::vector<double>> last_axis_min_max(const TensorF& t) {
  if (t.empty()) throw Error("min_max of an empty tensor");
  const std::size_t d = t.shape().last();
  std::vector<double> lo(d), hi(d);
  auto first = t.row(0);
  std::copy(first.begin(), first.end(), lo.begin());
  std::copy(first.begin(), first.end(), hi.begin());
  for (std::size_t r = 1; r < t.rows(); ++r) {
    auto row = t.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      lo[j] = std::min<double>(lo[j], row[j]);
      hi[j] = std::max<double>(hi[j], row[j]);
    }
  }
  return {std::move(lo), std::move(hi)};
}

std::pair<std::vector<double>, std::vector<double>> per_embedding_min_max(const TensorF& t) {
  if (t.shape().rank() != 3) throw Error("per-embedding ranges need a (B, T, d) tensor");
  return last_axis_min_max(t);
}

MeanStd mean_std(std::span<const float> values) {
  if (values.size() < 2) throw Error("mean/std needs at least two elements");
  double sum = 0.0;
  for (float v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (float v : values) {
    const double c = v - mean;
    sq += c * c;
  }
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

namespace {

// outer = product of extents before axis, inner = product after axis.
std::pair<std::size_t, std::size_t> split_at(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.rank(); ++a) inner *= s[a];
  return {outer, inner};
}

}  // namespace

TensorF slice(const TensorF& t, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = t.shape();
  if (axis >= s.rank()) throw Error("slice axis out of range");
  if (begin >= end || end > s[axis]) throw Error("invalid slice bounds");
  auto dims = s.dims();
  dims[axis] = end - begin;
  TensorF out{Shape(dims)};
  auto [outer, inner] = split_at(s, axis);
  const std::size_t src_block = s[axis] * inner;
  const std::size_t dst_block = (end - begin) * inner;
  auto src = t.data();
  auto dst = out.mutable_data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(src.begin() + o * src_block + begin * inner, dst_block, dst.begin() + o * dst_block);
  }
  return out;
}

TensorF concat(std::span<const TensorF> parts, std::size_t axis) {
  if (parts.empty()) throw Error("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.rank()) throw Error("concat axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.rank() != s0.rank()) throw Error("concat rank mismatch");
    for (std::size_t a = 0; a < s.rank(); ++a) {
      if (a != axis && s[a] != s0[a]) throw Error("concat extent mismatch");
    }
    total += s[axis];
  }
  auto dims = s0.dims();
  dims[axis] = total;
  TensorF out{Shape(dims)};
  auto [outer, inner] = split_at(s0, axis);
  auto dst = out.mutable_data();
  std::size_t offset = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (const auto& p : parts) {
      const std::size_t block = p.shape()[axis] * inner;
      std::copy_n(p.data().begin() + o * block, block, dst.begin() + offset);
      offset += block;
    }
  }
  return out;
}

TensorF gather_last(const TensorF& t, std::span<const std::size_t> index) {
  const std::size_t d = t.shape().last();
  TensorF out{t.shape().with_last(index.size())};
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto src = t.row(r);
    auto dst = out.mutable_row(r);
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= d) throw Error("gather index out of range");
      dst[i] = src[index[i]];
    }
  }
  return out;
}

}  // namespace pegq
