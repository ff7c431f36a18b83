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
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pegq/encoder.hpp"
#include "pegq/quant.hpp"
#include "pegq/range_estimator.hpp"

namespace pegq {

/// Settings of one quantizer site. params is filled by calibrate().
struct SiteSettings {
  bool enabled = true;
  int bits = 8;
  bool symmetric = false;
  EstimatorConfig estimator;
  Granularity granularity = Granularity::kPerTensor;
  std::size_t groups = 1;  // K, per-embedding-group only
  bool permute = false;    // range-based permutation, per-embedding-group only
  std::optional<GranularParams> params;

  friend bool operator==(const SiteSettings&, const SiteSettings&) = default;
};

/// Per-site quantization ledger over the encoder graph. Sites without an
/// explicit entry take the default for their kind; a missing default makes
/// resolve() fail.
class QuantConfig {
 public:
  std::optional<SiteSettings> weight_default;
  std::optional<SiteSettings> activation_default;
  std::map<std::string, SiteSettings> sites;

  /// Symmetric min-max weights at \p weight_bits, asymmetric current min-max
  /// activations at \p act_bits. A bit-width of 0 disables that kind.
  static QuantConfig uniform(int weight_bits, int act_bits);
  static QuantConfig disabled() { return uniform(0, 0); }

  const SiteSettings& resolve(const std::string& name, SiteKind kind) const;
  /// Explicit entry for \p name, materialized from the default if needed.
  SiteSettings& entry(const std::string& name, SiteKind kind);

  /// Human-readable JSON with a format tag and version.
  std::string to_text() const;
  static QuantConfig from_text(const std::string& text);
  void save(const std::string& path) const;
  static QuantConfig load(const std::string& path);

  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

/// JSON text of one site's finalized parameters.
std::string granular_params_to_text(const GranularParams& params);
GranularParams granular_params_from_text(const std::string& text);

/// Serialization of a group plan (permutation, K, and optional per-group ranges).
std::string group_spec_to_text(const GroupSpec& spec, std::span<const Range> group_ranges = {});
GroupSpec group_spec_from_text(const std::string& text);

/// Static range estimation for every enabled site. Activation ranges come from
/// FP32 forward passes over \p batches. Per-embedding-group sites with
/// permute=true get a range-based permutation; the FFN input, output and
/// residual-sum sites of a layer share the permutation built from that layer's
/// residual-sum ranges.
void calibrate(const EncoderModel& model, std::span<const TokenBatch> batches, QuantConfig& config);

/// Copy of the model with every enabled weight site fake-quantized.
EncoderModel quantize_weights(const EncoderModel& model, const QuantConfig& config);

/// Visitor that fake-quantizes enabled activation sites. Throws ConfigError
/// for an enabled site without finalized parameters.
SiteVisitor quantizing_visitor(const QuantConfig& config);

/// Forward with fake quantization at every enabled site.
ForwardOutput forward_quantized(const EncoderModel& model, const TokenBatch& tokens, const QuantConfig& config);

/// Checks that every enabled site of the graph has finalized parameters.
void require_finalized(const EncoderConfig& graph, const QuantConfig& config);

struct SiteError {
  std::string site;
  double mse = 0.0;
  double sqnr_db = 0.0;
  std::size_t elements = 0;
};

/// Quantization error of each enabled activation site during a quantized forward.
std::vector<SiteError> site_errors(const EncoderModel& model, const TokenBatch& tokens, const QuantConfig& config);

// ---------------------------------------------------------------------------
// Mixed precision

struct MixedPrecisionPolicy {
  bool ffn_residual_sum = false;  // every layer's FFN residual sum
  bool ffn_input_output = false;  // every layer's FFN input and output
  bool final_output = false;      // the classifier output, with the MSE estimator
  int bits = 16;

  bool empty() const { return !ffn_residual_sum && !ffn_input_output && !final_output; }
};

struct MixedPrecisionResult {
  QuantConfig config;
  std::vector<std::string> promoted;
  std::size_t activation_sites = 0;
  double promoted_fraction = 0.0;
  /// Entries as they were before promotion (nullopt: there was no explicit entry).
  std::map<std::string, std::optional<SiteSettings>> previous;
};

/// Promotes the policy's site families to policy.bits. Promoted sites lose their
/// finalized parameters and need calibrate() again.
MixedPrecisionResult assign_mixed_precision(const QuantConfig& config, const EncoderConfig& graph,
                                            const MixedPrecisionPolicy& policy);
QuantConfig revert_mixed_precision(const MixedPrecisionResult& result);

// ---------------------------------------------------------------------------
// Leave-one-out ablation

/// Named activation groups: softmax_input, sum_of_embeddings,
/// self_attention_output, softmax_output, residual_after_ffn, plus
/// all_activations. Unknown names throw ConfigError.
std::vector<std::string> ablation_group_sites(const EncoderConfig& graph, const std::string& group);
const std::vector<std::string>& standard_ablation_groups();

struct AblationRow {
  std::string excluded;  // "none" for the fully quantized baseline
  double score = 0.0;
  std::size_t rank = 0;  // 1 = best among the excluded groups; 0 for the baseline
};

using EvalFn = std::function<double(const EncoderModel&, const QuantConfig&)>;

/// Baseline row, then one row per group (that group left unquantized) sorted by
/// descending score, ties by name.
std::vector<AblationRow> leave_one_out_ablation(const EncoderModel& model, const QuantConfig& config,
                                                std::span<const std::string> groups, const EvalFn& eval);

}  // namespace pegq
