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

#include "pegq/peg.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "pegq/error.hpp"
#include "pegq/int_kernels.hpp"
#include "pegq/range_estimator.hpp"

namespace pegq {

std::vector<double> embedding_ranges(const TensorF& calib) {
  auto [lo, hi] = last_axis_min_max(calib);
  std::vector<double> r(lo.size());
  for (std::size_t j = 0; j < r.size(); ++j) r[j] = hi[j] - lo[j];
  return r;
}

GroupSpec build_range_permutation(const TensorF& calib, std::size_t k) {
  if (calib.shape().rank() != 3) throw Error("range permutation needs a (B, T, d) calibration tensor");
  return build_range_permutation(embedding_ranges(calib), k);
}

GroupSpec build_range_permutation(std::span<const double> ranges, std::size_t k) {
  const std::size_t d = ranges.size();
  if (k == 0 || d % k != 0) {
    throw ConfigError("group count " + std::to_string(k) + " does not divide embedding width " + std::to_string(d));
  }
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ranges[a] < ranges[b]; });
  return GroupSpec(k, std::move(order));
}

std::size_t peg_overhead(std::size_t d, std::size_t k) {
  if (d == 0 || k == 0) throw ConfigError("PEG overhead needs d >= 1 and K >= 1");
  return d + 2 * 3 * k;
}

std::vector<TensorF> split_by_groups(const TensorF& x, const GroupSpec& spec) {
  if (x.shape().last() != spec.width()) throw Error("tensor width does not match group spec");
  std::vector<TensorF> parts;
  parts.reserve(spec.groups());
  for (std::size_t g = 0; g < spec.groups(); ++g) parts.push_back(gather_last(x, spec.members(g)));
  return parts;
}

TensorF merge_groups(std::span<const TensorF> parts, const GroupSpec& spec) {
  if (parts.size() != spec.groups()) throw Error("merge needs one part per group");
  const TensorF permuted = concat(parts, parts[0].shape().rank() - 1);
  if (permuted.shape().last() != spec.width()) throw Error("merged width does not match group spec");
  return gather_last(permuted, spec.inv_perm());
}

std::vector<Linear> split_linear_by_input_groups(const Linear& layer, const GroupSpec& spec) {
  if (layer.in_features() != spec.width()) throw Error("linear input width does not match group spec");
  std::vector<Linear> out;
  for (std::size_t g = 0; g < spec.groups(); ++g) {
    Linear part{gather_last(layer.weight, spec.members(g)), {}};
    if (g == 0) part.bias = layer.bias;
    out.push_back(std::move(part));
  }
  return out;
}

std::vector<Linear> split_linear_by_output_groups(const Linear& layer, const GroupSpec& spec) {
  if (layer.out_features() != spec.width()) throw Error("linear output width does not match group spec");
  const std::size_t din = layer.in_features();
  std::vector<Linear> out;
  for (std::size_t g = 0; g < spec.groups(); ++g) {
    auto rows = spec.members(g);
    Linear part{TensorF(Shape{rows.size(), din}), {}};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = layer.weight.row(rows[i]);
      std::copy(src.begin(), src.end(), part.weight.mutable_row(i).begin());
      if (!layer.bias.empty()) part.bias.push_back(layer.bias[rows[i]]);
    }
    out.push_back(std::move(part));
  }
  return out;
}

void FfnBlock::validate() const {
  const std::size_t d = ln_in.width();
  if (ln_out.width() != d || fc1.in_features() != d || fc2.out_features() != d ||
      fc2.in_features() != fc1.out_features()) {
    throw Error("inconsistent FFN block shapes");
  }
}

TensorF ffn_block_forward(const FfnBlock& block, const TensorF& v) {
  block.validate();
  const TensorF x1 = block.ln_in.forward(v);
  const TensorF y = block.fc2.forward(gelu(block.fc1.forward(x1)));
  return block.ln_out.forward(add(x1, y));
}

namespace {

std::vector<float> permute_vec(const std::vector<float>& v, std::span<const std::size_t> perm) {
  if (v.empty()) return {};
  if (v.size() != perm.size()) throw Error("permutation length does not match parameter vector");
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out[i] = v[perm[i]];
  return out;
}

void check_groups(const GranularParams& p, const GroupSpec& spec, const char* what) {
  if (p.granularity() != Granularity::kPerEmbeddingGroup || !(*p.groups() == spec)) {
    throw ConfigError(std::string("FFN ") + what + " quantizer is not grouped by the given spec");
  }
}

void add_bias(TensorF& t, std::span<const float> bias) {
  if (bias.empty()) return;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.mutable_row(r);
    for (std::size_t o = 0; o < row.size(); ++o) row[o] += bias[o];
  }
}

void check_ffn(const Linear& fc1, const Linear& fc2, const TensorF& x, const GroupSpec& spec, const PegFfnQuant& q) {
  if (fc1.in_features() != spec.width() || fc2.out_features() != spec.width() ||
      fc2.in_features() != fc1.out_features() || x.shape().last() != spec.width()) {
    throw Error("FFN shapes do not match the group spec");
  }
  check_groups(q.input, spec, "input");
  check_groups(q.output, spec, "output");
  check_groups(q.sum, spec, "residual-sum");
}

}  // namespace

FfnBlock permute_ffn_block(const FfnBlock& block, std::span<const std::size_t> perm) {
  block.validate();
  if (perm.size() != block.ln_in.width()) throw Error("permutation length does not match FFN width");
  FfnBlock out = block;
  out.ln_in.gamma = permute_vec(block.ln_in.gamma, perm);
  out.ln_in.beta = permute_vec(block.ln_in.beta, perm);
  out.fc1.weight = gather_last(block.fc1.weight, perm);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    auto src = block.fc2.weight.row(perm[i]);
    std::copy(src.begin(), src.end(), out.fc2.weight.mutable_row(i).begin());
  }
  out.fc2.bias = permute_vec(block.fc2.bias, perm);
  return out;
}

TensorF permuted_ffn_block_forward(const FfnBlock& permuted, const GroupSpec& spec, const TensorF& v) {
  permuted.validate();
  const TensorF x1 = permuted.ln_in.forward(gather_last(v, spec.perm()));
  const TensorF y = permuted.fc2.forward(gelu(permuted.fc1.forward(x1)));
  return permuted.ln_out.forward(gather_last(add(x1, y), spec.inv_perm()));
}

PegFfnQuant calibrate_peg_ffn(const Linear& fc1, const Linear& fc2, const TensorF& calib_x, const GroupSpec& spec,
                              int weight_bits, int act_bits) {
  auto weight_params = [&](const TensorF& w) {
    const Range r = min_max(w);
    return QParams::from_range(r.min, r.max, weight_bits, true);
  };
  auto grouped = [&](const TensorF& t) {
    RangeEstimator est({}, QuantLayout::per_group(spec));
    est.observe(t);
    return est.finalize(act_bits, false);
  };
  const TensorF h = fc1.forward(calib_x);
  const TensorF g = gelu(h);
  const TensorF y = fc2.forward(g);
  const Range gr = min_max(g);
  PegFfnQuant q;
  q.fc1_weight = weight_params(fc1.weight);
  q.fc2_weight = weight_params(fc2.weight);
  q.input = grouped(calib_x);
  q.intermediate = QParams::from_range(gr.min, gr.max, act_bits, false);
  q.output = grouped(y);
  q.sum = grouped(add(calib_x, y));
  return q;
}

TensorF peg_ffn_forward_native(const Linear& fc1, const Linear& fc2, const TensorF& x, const GroupSpec& spec,
                               const PegFfnQuant& q) {
  check_ffn(fc1, fc2, x, spec, q);
  const QTensor xq = quantize(x, q.input);
  TensorF h = qmatmul_peg(quantize(fc1.weight, q.fc1_weight), xq).values;
  add_bias(h, fc1.bias);
  const QTensor gq = quantize(gelu(h), q.intermediate);
  TensorF y = qmatmul_per_tensor(quantize(fc2.weight, q.fc2_weight), gq).dequantize();
  add_bias(y, fc2.bias);
  const TensorF sum = add(dequantize(xq), fake_quantize(y, q.output));
  return fake_quantize(sum, q.sum);
}

TensorF peg_ffn_forward_per_tensor(const Linear& fc1, const Linear& fc2, const TensorF& x, const GroupSpec& spec,
                                   const PegFfnQuant& q) {
  check_ffn(fc1, fc2, x, spec, q);
  const std::size_t k = spec.groups();
  const std::vector<TensorF> streams = split_by_groups(x, spec);
  const std::vector<Linear> fc1_parts = split_linear_by_input_groups(fc1, spec);
  const std::vector<Linear> fc2_parts = split_linear_by_output_groups(fc2, spec);

  std::vector<QTensor> xq;
  std::vector<IntMatmulResult> partial;
  for (std::size_t g = 0; g < k; ++g) {
    xq.push_back(quantize(streams[g], q.input.params()[g]));
    partial.push_back(qmatmul_per_tensor(quantize(fc1_parts[g].weight, q.fc1_weight), xq.back()));
  }
  TensorF h = sum_rescaled(partial);
  add_bias(h, fc1.bias);
  const QTensor gq = quantize(gelu(h), q.intermediate);

  std::vector<TensorF> sums;
  for (std::size_t g = 0; g < k; ++g) {
    TensorF y = qmatmul_per_tensor(quantize(fc2_parts[g].weight, q.fc2_weight), gq).dequantize();
    add_bias(y, fc2_parts[g].bias);
    const TensorF sum = add(dequantize(xq[g]), fake_quantize(y, q.output.params()[g]));
    sums.push_back(fake_quantize(sum, q.sum.params()[g]));
  }
  return merge_groups(sums, spec);
}

}  // namespace pegq
