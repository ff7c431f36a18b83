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

#include "pegq/quant_config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pegq/error.hpp"
#include "pegq/peg.hpp"

namespace pegq {

using nlohmann::json;

namespace {

constexpr const char* kConfigFormat = "pegq.quant_config";
constexpr const char* kPlanFormat = "pegq.peg_plan";
constexpr int kFormatVersion = 1;

Granularity granularity_from_string(const std::string& s) {
  if (s == "per_tensor") return Granularity::kPerTensor;
  if (s == "per_embedding") return Granularity::kPerEmbedding;
  if (s == "per_embedding_group") return Granularity::kPerEmbeddingGroup;
  throw ConfigError("unknown granularity '" + s + "'");
}

json qparams_json(const QParams& p) {
  return {{"bits", p.bits}, {"scale", p.scale}, {"zero_point", p.zero_point}, {"symmetric", p.symmetric}};
}

QParams qparams_from(const json& j) {
  QParams p;
  p.bits = j.at("bits").get<int>();
  p.scale = j.at("scale").get<double>();
  p.zero_point = j.at("zero_point").get<std::int32_t>();
  p.symmetric = j.at("symmetric").get<bool>();
  p.validate();
  return p;
}

json granular_json(const GranularParams& g) {
  json out{{"granularity", to_string(g.granularity())}};
  json list = json::array();
  for (const auto& p : g.params()) list.push_back(qparams_json(p));
  out["qparams"] = std::move(list);
  if (g.groups()) {
    out["groups"] = g.groups()->groups();
    out["perm"] = g.groups()->perm();
  }
  return out;
}

GranularParams granular_from(const json& j) {
  const Granularity kind = granularity_from_string(j.at("granularity").get<std::string>());
  std::vector<QParams> params;
  for (const auto& p : j.at("qparams")) params.push_back(qparams_from(p));
  switch (kind) {
    case Granularity::kPerTensor:
      if (params.size() != 1) throw ConfigError("per-tensor parameters need exactly one entry");
      return GranularParams::per_tensor(params[0]);
    case Granularity::kPerEmbedding:
      return GranularParams::per_embedding(std::move(params));
    case Granularity::kPerEmbeddingGroup:
      return GranularParams::per_group(
          std::move(params), GroupSpec(j.at("groups").get<std::size_t>(), j.at("perm").get<std::vector<std::size_t>>()));
  }
  throw ConfigError("bad granularity");
}

json estimator_json(const EstimatorConfig& e) {
  return {{"kind", to_string(e.kind)},
          {"momentum", e.momentum},
          {"grid_points", e.grid_points},
          {"alpha_min", e.alpha_min},
          {"max_elements", e.max_elements}};
}

EstimatorConfig estimator_from(const json& j) {
  EstimatorConfig e;
  e.kind = estimator_from_string(j.at("kind").get<std::string>());
  e.momentum = j.value("momentum", e.momentum);
  e.grid_points = j.value("grid_points", e.grid_points);
  e.alpha_min = j.value("alpha_min", e.alpha_min);
  e.max_elements = j.value("max_elements", e.max_elements);
  e.validate();
  return e;
}

json site_json(const SiteSettings& s) {
  json out{{"enabled", s.enabled},
           {"bits", s.bits},
           {"symmetric", s.symmetric},
           {"estimator", estimator_json(s.estimator)},
           {"granularity", to_string(s.granularity)},
           {"groups", s.groups},
           {"permute", s.permute}};
  if (s.params) out["params"] = granular_json(*s.params);
  return out;
}

SiteSettings site_from(const json& j) {
  SiteSettings s;
  s.enabled = j.value("enabled", true);
  s.bits = j.value("bits", 8);
  if (!is_supported_bit_width(s.bits)) throw ConfigError("unsupported bit-width " + std::to_string(s.bits));
  s.symmetric = j.value("symmetric", false);
  if (j.contains("estimator")) s.estimator = estimator_from(j.at("estimator"));
  s.granularity = granularity_from_string(j.value("granularity", std::string("per_tensor")));
  s.groups = j.value("groups", std::size_t{1});
  s.permute = j.value("permute", false);
  if (j.contains("params") && !j.at("params").is_null()) s.params = granular_from(j.at("params"));
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

QuantConfig QuantConfig::uniform(int weight_bits, int act_bits) {
  QuantConfig c;
  SiteSettings w;
  w.enabled = weight_bits > 0;
  w.bits = weight_bits > 0 ? weight_bits : 8;
  w.symmetric = true;
  SiteSettings a;
  a.enabled = act_bits > 0;
  a.bits = act_bits > 0 ? act_bits : 8;
  a.symmetric = false;
  if (!is_supported_bit_width(w.bits) || !is_supported_bit_width(a.bits)) throw ConfigError("unsupported bit-width");
  c.weight_default = w;
  c.activation_default = a;
  return c;
}

const SiteSettings& QuantConfig::resolve(const std::string& name, SiteKind kind) const {
  if (auto it = sites.find(name); it != sites.end()) return it->second;
  const auto& def = kind == SiteKind::kWeight ? weight_default : activation_default;
  if (!def) throw ConfigError("site '" + name + "' has no entry and the config has no default for its kind");
  return *def;
}

SiteSettings& QuantConfig::entry(const std::string& name, SiteKind kind) {
  if (auto it = sites.find(name); it != sites.end()) return it->second;
  return sites.emplace(name, resolve(name, kind)).first->second;
}

std::string QuantConfig::to_text() const {
  json j{{"format", kConfigFormat}, {"version", kFormatVersion}};
  j["weight_default"] = weight_default ? site_json(*weight_default) : json(nullptr);
  j["activation_default"] = activation_default ? site_json(*activation_default) : json(nullptr);
  json s = json::object();
  for (const auto& [name, settings] : sites) s[name] = site_json(settings);
  j["sites"] = std::move(s);
  return j.dump(2) + "\n";
}

QuantConfig QuantConfig::from_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("quant config is not valid JSON: ") + e.what());
  }
  try {
    if (j.value("format", std::string()) != kConfigFormat) throw ConfigError("not a quant config (format tag)");
    if (j.value("version", 0) != kFormatVersion) throw ConfigError("unsupported quant config version");
    QuantConfig c;
    if (j.contains("weight_default") && !j["weight_default"].is_null()) c.weight_default = site_from(j["weight_default"]);
    if (j.contains("activation_default") && !j["activation_default"].is_null()) {
      c.activation_default = site_from(j["activation_default"]);
    }
    if (j.contains("sites")) {
      for (const auto& [name, s] : j["sites"].items()) c.sites.emplace(name, site_from(s));
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed quant config: ") + e.what());
  }
}

void QuantConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << to_text();
}

QuantConfig QuantConfig::load(const std::string& path) { return from_text(read_file(path)); }

std::string granular_params_to_text(const GranularParams& params) {
  json j = granular_json(params);
  j["format"] = "pegq.params";
  j["version"] = kFormatVersion;
  return j.dump(2) + "\n";
}

GranularParams granular_params_from_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.value("format", std::string()) != "pegq.params") throw ConfigError("not a parameter file (format tag)");
    if (j.value("version", 0) != kFormatVersion) throw ConfigError("unsupported parameter file version");
    return granular_from(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed parameter file: ") + e.what());
  }
}

std::string group_spec_to_text(const GroupSpec& spec, std::span<const Range> group_ranges) {
  json j{{"format", kPlanFormat}, {"version", kFormatVersion}, {"d", spec.width()}, {"groups", spec.groups()}};
  j["perm"] = spec.perm();
  json groups = json::array();
  for (std::size_t g = 0; g < spec.groups(); ++g) {
    auto m = spec.members(g);
    json entry{{"members", std::vector<std::size_t>(m.begin(), m.end())}};
    if (!group_ranges.empty()) {
      entry["min"] = group_ranges[g].min;
      entry["max"] = group_ranges[g].max;
    }
    groups.push_back(std::move(entry));
  }
  j["group_members"] = std::move(groups);
  return j.dump(2) + "\n";
}

GroupSpec group_spec_from_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.value("format", std::string()) != kPlanFormat) throw ConfigError("not a PEG plan (format tag)");
    if (j.value("version", 0) != kFormatVersion) throw ConfigError("unsupported PEG plan version");
    return GroupSpec(j.at("groups").get<std::size_t>(), j.at("perm").get<std::vector<std::size_t>>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed PEG plan: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

namespace {

const TensorF& weight_by_site(const EncoderModel& m, const std::string& name) {
  if (name == "embeddings.word.weight") return m.word_embeddings;
  if (name == "embeddings.position.weight") return m.position_embeddings;
  if (name == "pooler.weight") return m.pooler.weight;
  if (name == "head.weight") return m.head.weight;
  const std::size_t l = std::stoul(name.substr(6, name.find('.', 6) - 6));
  const EncoderLayer& layer = m.layers.at(l);
  const std::string rest = name.substr(name.find('.', 6) + 1);
  if (rest == "attn.query.weight") return layer.query.weight;
  if (rest == "attn.key.weight") return layer.key.weight;
  if (rest == "attn.value.weight") return layer.value.weight;
  if (rest == "attn.output.weight") return layer.output.weight;
  if (rest == "ffn.fc1.weight") return layer.fc1.weight;
  if (rest == "ffn.fc2.weight") return layer.fc2.weight;
  throw ConfigError("unknown weight site '" + name + "'");
}

TensorF& weight_by_site(EncoderModel& m, const std::string& name) {
  return const_cast<TensorF&>(weight_by_site(static_cast<const EncoderModel&>(m), name));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// For FFN input/output/residual-sum sites, the residual-sum site of the same
// layer; otherwise the site itself.
std::string permutation_source(const std::string& name) {
  for (const char* s : {site::kFfnInput, site::kFfnOutput, site::kFfnResidual}) {
    const std::string suffix = std::string(".") + s;
    if (ends_with(name, suffix)) return name.substr(0, name.size() - suffix.size()) + "." + site::kFfnResidual;
  }
  return name;
}

struct DimRanges {
  std::vector<double> lo, hi;
  void observe(const TensorF& t, std::span<const std::uint8_t> keep) {
    const std::size_t d = t.shape().last();
    if (lo.empty()) {
      lo.assign(d, std::numeric_limits<double>::infinity());
      hi.assign(d, -std::numeric_limits<double>::infinity());
    }
    auto src = t.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (!keep.empty() && !keep[i]) continue;
      lo[i % d] = std::min<double>(lo[i % d], src[i]);
      hi[i % d] = std::max<double>(hi[i % d], src[i]);
    }
  }
  std::vector<double> ranges() const {
    std::vector<double> r(lo.size());
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = hi[j] - lo[j];
    return r;
  }
};

QuantLayout layout_for(const SiteSettings& s, std::size_t width, const std::optional<GroupSpec>& plan) {
  switch (s.granularity) {
    case Granularity::kPerTensor: return QuantLayout::per_tensor();
    case Granularity::kPerEmbedding: return QuantLayout::per_embedding(width);
    case Granularity::kPerEmbeddingGroup:
      if (plan) {
        if (plan->width() != width) throw ConfigError("group plan width does not match site width");
        return QuantLayout::per_group(*plan);
      }
      return QuantLayout::per_group(GroupSpec(width, s.groups));
  }
  throw ConfigError("bad granularity");
}

}  // namespace

void calibrate(const EncoderModel& model, std::span<const TokenBatch> batches, QuantConfig& config) {
  const std::vector<SiteInfo> sites = enumerate_sites(model.config);

  for (const auto& s : sites) {
    if (s.kind != SiteKind::kWeight) continue;
    const SiteSettings& st = config.resolve(s.name, s.kind);
    if (!st.enabled) continue;
    if (st.granularity != Granularity::kPerTensor) throw ConfigError("weight site '" + s.name + "' must be per-tensor");
    RangeEstimator est(st.estimator, QuantLayout::per_tensor());
    est.observe(weight_by_site(model, s.name));
    config.entry(s.name, s.kind).params = est.finalize(st.bits, st.symmetric);
  }

  if (batches.empty()) throw ConfigError("activation calibration needs at least one batch");

  // Range-based permutations, built once from FP32 calibration ranges.
  std::map<std::string, std::string> source_of;  // site -> permutation source
  std::map<std::string, DimRanges> source_ranges;
  for (const auto& s : sites) {
    if (s.kind != SiteKind::kActivation) continue;
    const SiteSettings& st = config.resolve(s.name, s.kind);
    if (st.enabled && st.granularity == Granularity::kPerEmbeddingGroup && st.permute) {
      source_of[s.name] = permutation_source(s.name);
      source_ranges[source_of[s.name]];
    }
  }
  if (!source_ranges.empty()) {
    SiteVisitor collect = [&](const std::string& name, TensorF& t, std::span<const std::uint8_t> keep) {
      if (auto it = source_ranges.find(name); it != source_ranges.end()) it->second.observe(t, keep);
    };
    for (const auto& b : batches) forward(model, b, collect);
  }
  std::map<std::string, GroupSpec> plans;
  for (const auto& [name, source] : source_of) {
    const SiteSettings& st = config.resolve(name, SiteKind::kActivation);
    plans.emplace(name, build_range_permutation(source_ranges.at(source).ranges(), st.groups));
  }

  std::map<std::string, RangeEstimator> estimators;
  SiteVisitor observe = [&](const std::string& name, TensorF& t, std::span<const std::uint8_t> keep) {
    const SiteSettings& st = config.resolve(name, SiteKind::kActivation);
    if (!st.enabled) return;
    auto it = estimators.find(name);
    if (it == estimators.end()) {
      std::optional<GroupSpec> plan;
      if (auto p = plans.find(name); p != plans.end()) plan = p->second;
      it = estimators.emplace(name, RangeEstimator(st.estimator, layout_for(st, t.shape().last(), plan))).first;
    }
    it->second.observe(t, keep);
  };
  for (const auto& b : batches) forward(model, b, observe);
  for (const auto& [name, est] : estimators) {
    const SiteSettings& st = config.resolve(name, SiteKind::kActivation);
    config.entry(name, SiteKind::kActivation).params = est.finalize(st.bits, st.symmetric);
  }
}

void require_finalized(const EncoderConfig& graph, const QuantConfig& config) {
  for (const auto& s : enumerate_sites(graph)) {
    const SiteSettings& st = config.resolve(s.name, s.kind);
    if (st.enabled && !st.params) throw ConfigError("site '" + s.name + "' is enabled but has no finalized range");
  }
}

EncoderModel quantize_weights(const EncoderModel& model, const QuantConfig& config) {
  EncoderModel out = model;
  for (const auto& s : enumerate_sites(model.config)) {
    if (s.kind != SiteKind::kWeight) continue;
    const SiteSettings& st = config.resolve(s.name, s.kind);
    if (!st.enabled) continue;
    if (!st.params) throw ConfigError("weight site '" + s.name + "' has no finalized range");
    TensorF& w = weight_by_site(out, s.name);
    w = fake_quantize(w, *st.params);
  }
  return out;
}

SiteVisitor quantizing_visitor(const QuantConfig& config) {
  return [config](const std::string& name, TensorF& t, std::span<const std::uint8_t>) {
    const SiteSettings& st = config.resolve(name, SiteKind::kActivation);
    if (!st.enabled) return;
    if (!st.params) throw ConfigError("site '" + name + "' is enabled but has no finalized range");
    t = fake_quantize(t, *st.params);
  };
}

ForwardOutput forward_quantized(const EncoderModel& model, const TokenBatch& tokens, const QuantConfig& config) {
  require_finalized(model.config, config);
  return forward(quantize_weights(model, config), tokens, quantizing_visitor(config));
}

std::vector<SiteError> site_errors(const EncoderModel& model, const TokenBatch& tokens, const QuantConfig& config) {
  require_finalized(model.config, config);
  std::vector<SiteError> out;
  const SiteVisitor quant = quantizing_visitor(config);
  SiteVisitor visitor = [&](const std::string& name, TensorF& t, std::span<const std::uint8_t> keep) {
    const SiteSettings& st = config.resolve(name, SiteKind::kActivation);
    if (!st.enabled) return;
    const TensorF before = t;
    quant(name, t, keep);
    double sig = 0.0, err = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!keep.empty() && !keep[i]) continue;
      const double e = static_cast<double>(before[i]) - t[i];
      sig += static_cast<double>(before[i]) * before[i];
      err += e * e;
      ++n;
    }
    SiteError se{name, n ? err / static_cast<double>(n) : 0.0, 0.0, n};
    se.sqnr_db = err > 0.0 ? 10.0 * std::log10(sig / err) : std::numeric_limits<double>::infinity();
    out.push_back(std::move(se));
  };
  forward(quantize_weights(model, config), tokens, visitor);
  return out;
}

// ---------------------------------------------------------------------------

MixedPrecisionResult assign_mixed_precision(const QuantConfig& config, const EncoderConfig& graph,
                                            const MixedPrecisionPolicy& policy) {
  if (!is_supported_bit_width(policy.bits)) throw ConfigError("unsupported mixed-precision bit-width");
  MixedPrecisionResult r;
  r.config = config;
  std::set<std::string> wanted;
  if (policy.ffn_residual_sum) wanted.insert(std::string("layer.*.") + site::kFfnResidual);
  if (policy.ffn_input_output) {
    wanted.insert(std::string("layer.*.") + site::kFfnInput);
    wanted.insert(std::string("layer.*.") + site::kFfnOutput);
  }
  if (policy.final_output) wanted.insert(site::kHeadOutput);

  for (const auto& s : enumerate_sites(graph)) {
    if (s.kind != SiteKind::kActivation) continue;
    ++r.activation_sites;
    if (!wanted.count(s.family)) continue;
    auto it = config.sites.find(s.name);
    r.previous[s.name] = it == config.sites.end() ? std::nullopt : std::optional<SiteSettings>(it->second);
    SiteSettings& e = r.config.entry(s.name, s.kind);
    e.bits = policy.bits;
    if (s.name == site::kHeadOutput) e.estimator.kind = EstimatorKind::kMse;
    e.params.reset();
    r.promoted.push_back(s.name);
  }
  r.promoted_fraction =
      r.activation_sites ? static_cast<double>(r.promoted.size()) / static_cast<double>(r.activation_sites) : 0.0;
  return r;
}

QuantConfig revert_mixed_precision(const MixedPrecisionResult& result) {
  QuantConfig c = result.config;
  for (const auto& [name, prev] : result.previous) {
    if (prev) {
      c.sites[name] = *prev;
    } else {
      c.sites.erase(name);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& standard_ablation_groups() {
  static const std::vector<std::string> groups = {"softmax_input", "sum_of_embeddings", "self_attention_output",
                                                  "softmax_output", "residual_after_ffn"};
  return groups;
}

std::vector<std::string> ablation_group_sites(const EncoderConfig& graph, const std::string& group) {
  // Optional "@l1,l2" suffix restricts a per-layer group to those layers.
  std::string base = group;
  std::set<std::size_t> only_layers;
  if (auto at = group.find('@'); at != std::string::npos) {
    base = group.substr(0, at);
    std::stringstream ss(group.substr(at + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        only_layers.insert(std::stoul(item));
      } catch (const std::exception&) {
        throw ConfigError("bad layer list in ablation group '" + group + "'");
      }
    }
  }
  std::string family;
  if (base == "softmax_input") family = std::string("layer.*.") + site::kSoftmaxInput;
  else if (base == "sum_of_embeddings") family = site::kEmbeddingSum;
  else if (base == "self_attention_output") family = std::string("layer.*.") + site::kAttnOutput;
  else if (base == "softmax_output") family = std::string("layer.*.") + site::kSoftmaxOutput;
  else if (base == "residual_after_ffn") family = std::string("layer.*.") + site::kFfnResidual;
  else if (base != "all_activations") throw ConfigError("unknown ablation group '" + group + "'");

  std::vector<std::string> out;
  for (const auto& s : enumerate_sites(graph)) {
    if (s.kind != SiteKind::kActivation) continue;
    if (!family.empty() && s.family != family) continue;
    if (!only_layers.empty()) {
      if (s.name.rfind("layer.", 0) != 0) continue;
      const std::size_t l = std::stoul(s.name.substr(6, s.name.find('.', 6) - 6));
      if (!only_layers.count(l)) continue;
    }
    out.push_back(s.name);
  }
  return out;
}

std::vector<AblationRow> leave_one_out_ablation(const EncoderModel& model, const QuantConfig& config,
                                                std::span<const std::string> groups, const EvalFn& eval) {
  std::vector<std::vector<std::string>> members;
  for (const auto& g : groups) members.push_back(ablation_group_sites(model.config, g));

  std::vector<AblationRow> rows;
  rows.push_back({"none", eval(model, config), 0});
  std::vector<AblationRow> excluded;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    QuantConfig c = config;
    for (const auto& name : members[i]) c.entry(name, SiteKind::kActivation).enabled = false;
    excluded.push_back({groups[i], eval(model, c), 0});
  }
  std::sort(excluded.begin(), excluded.end(), [](const AblationRow& a, const AblationRow& b) {
    return a.score != b.score ? a.score > b.score : a.excluded < b.excluded;
  });
  for (std::size_t i = 0; i < excluded.size(); ++i) {
    excluded[i].rank = i + 1;
    rows.push_back(std::move(excluded[i]));
  }
  return rows;
}

}  // namespace pegq
