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
#include <span>
#include <vector>

#include "pegq/group_spec.hpp"
#include "pegq/layers.hpp"
#include "pegq/quant.hpp"
#include "pegq/tensor.hpp"

namespace pegq {

/// Per-dimension dynamic range r_j = max - min over all leading positions.
std::vector<double> embedding_ranges(const TensorF& calib);

/// Sorts embedding dims by ascending range (ties: lower index first) and cuts
/// the order into k evenly sized groups. \p calib is (B, T, d).
GroupSpec build_range_permutation(const TensorF& calib, std::size_t k);
GroupSpec build_range_permutation(std::span<const double> ranges, std::size_t k);

/// Extra parameters per attention layer: d permutation indices plus a scale
/// and zero-point per group for the FFN input, output and residual sum.
std::size_t peg_overhead(std::size_t d, std::size_t k);

/// x[..., members(g)] for every group g.
std::vector<TensorF> split_by_groups(const TensorF& x, const GroupSpec& spec);
/// Inverse of split_by_groups.
TensorF merge_groups(std::span<const TensorF> parts, const GroupSpec& spec);

/// Column blocks W[:, members(g)]. Summing the block outputs gives W x + b; the
/// bias rides on block 0.
std::vector<Linear> split_linear_by_input_groups(const Linear& layer, const GroupSpec& spec);

/// Row blocks W[members(g), :] with matching bias slices. merge_groups on the
/// block outputs gives W x + b.
std::vector<Linear> split_linear_by_output_groups(const Linear& layer, const GroupSpec& spec);

/// Post-norm feed-forward sub-block: out = ln_out(x1 + fc2(gelu(fc1(x1)))), x1 = ln_in(v).
struct FfnBlock {
  LayerNorm ln_in;
  Linear fc1;
  Linear fc2;
  LayerNorm ln_out;

  void validate() const;
  friend bool operator==(const FfnBlock&, const FfnBlock&) = default;
};

TensorF ffn_block_forward(const FfnBlock& block, const TensorF& v);

/// Reorders ln_in gain/bias, fc1 columns and fc2 rows (and bias) by \p perm:
/// new[i] = old[perm[i]]. ln_out is untouched.
FfnBlock permute_ffn_block(const FfnBlock& block, std::span<const std::size_t> perm);

/// Runs a block produced by permute_ffn_block(block, spec.perm()): the input is
/// permuted on entry and the residual sum is inverse-permuted before ln_out.
TensorF permuted_ffn_block_forward(const FfnBlock& permuted, const GroupSpec& spec, const TensorF& v);

/// Quantizers of one FFN for grouped simulation. input/output/sum must be
/// per-embedding-group and share one GroupSpec.
struct PegFfnQuant {
  QParams fc1_weight;
  QParams fc2_weight;
  GranularParams input;
  QParams intermediate;
  GranularParams output;
  GranularParams sum;
};

/// Min-max calibration of every quantizer in PegFfnQuant on FP32 activations
/// of \p calib_x (the FFN input, ..., d).
PegFfnQuant calibrate_peg_ffn(const Linear& fc1, const Linear& fc2, const TensorF& calib_x, const GroupSpec& spec,
                              int weight_bits = 8, int act_bits = 8);

/// Grouped FFN with native per-embedding-group kernels. Returns the quantized
/// residual sum x_hat + y_hat, (..., d), in original dimension order.
TensorF peg_ffn_forward_native(const Linear& fc1, const Linear& fc2, const TensorF& x, const GroupSpec& spec,
                               const PegFfnQuant& q);

/// The same computation expressed only with per-tensor quantizers: permute,
/// split into K streams, K column-split fc1 layers whose outputs are summed,
/// K row-split fc2 layers whose outputs are concatenated, inverse permute.
TensorF peg_ffn_forward_per_tensor(const Linear& fc1, const Linear& fc2, const TensorF& x, const GroupSpec& spec,
                                   const PegFfnQuant& q);

}  // namespace pegq
