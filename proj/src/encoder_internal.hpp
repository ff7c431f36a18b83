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
#include <string>
#include <unordered_map>
#include <vector>

#include "pegq/encoder.hpp"

namespace pegq::detail {

// Values kept from a forward pass for the backward pass. "post" tensors are the
// values that flowed on after the site visitor ran.
struct LayerTape {
  TensorF x;                 // layer input (N, d)
  TensorF q, k, v;           // (N, d)
  TensorF probs_raw, probs;  // (B, h, T, T)
  TensorF ctx;               // (N, d)
  TensorF ln1_norm;
  std::vector<double> ln1_inv_std;
  TensorF x1;  // (N, d)
  TensorF h;   // fc1 pre-activation
  TensorF g;   // gelu output after its site
  TensorF ln2_norm;
  std::vector<double> ln2_inv_std;
};

struct Tape {
  TokenBatch tokens;
  std::vector<std::uint8_t> token_keep;  // (B*T)
  TensorF emb_ln_norm;
  std::vector<double> emb_ln_inv_std;
  std::vector<LayerTape> layers;
  TensorF final_hidden;  // (N, d)
  TensorF pooled_in;     // (B, d)
  TensorF pool_dense;    // after site
  TensorF pool_act;      // after site
  // Site tensors before the visitor ran, keyed by site name.
  std::unordered_map<std::string, TensorF> site_inputs;
};

ForwardOutput forward_impl(const EncoderModel& model, const TokenBatch& tokens, const SiteVisitor& visitor,
                           Tape* tape);

// LayerNorm that also reports the normalized values and 1/std per row.
TensorF layer_norm_with_stats(const LayerNorm& ln, const TensorF& x, TensorF* norm, std::vector<double>* inv_std);

}  // namespace pegq::detail
