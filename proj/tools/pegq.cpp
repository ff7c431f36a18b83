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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "pegq/error.hpp"
#include "pegq/model_file.hpp"
#include "pegq/outliers.hpp"
#include "pegq/peg.hpp"
#include "pegq/quant_config.hpp"
#include "pegq/range_estimator.hpp"
#include "pegq/synthetic_task.hpp"
#include "pegq/tensor_file.hpp"

namespace {

using namespace pegq;

constexpr int kExitFormat = 2;
constexpr int kExitConfig = 3;

std::string num(double v) { return fmt::format("{:.9g}", v); }

class CsvFile {
 public:
  explicit CsvFile(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot write '" + path + "'");
  }
  template <typename... Args>
  void line(fmt::format_string<Args...> f, Args&&... args) {
    out_ << fmt::format(f, std::forward<Args>(args)...) << '\n';
  }

 private:
  std::ofstream out_;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

Granularity parse_granularity(const std::string& s) {
  if (s == "per_tensor") return Granularity::kPerTensor;
  if (s == "per_embedding") return Granularity::kPerEmbedding;
  if (s == "per_embedding_group" || s == "peg") return Granularity::kPerEmbeddingGroup;
  throw ConfigError("unknown granularity '" + s + "'");
}

// Token ids stored as an f32 (B, T) TensorFile.
TokenBatch read_tokens(const std::string& path) {
  const TensorF t = read_tensor_file(path);
  if (t.shape().rank() != 2) throw FormatError("token file must be rank 2 (batch, seq)");
  TokenBatch b;
  b.batch = t.shape()[0];
  b.seq = t.shape()[1];
  b.ids.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != std::floor(t[i]) || t[i] < 0.0f || t[i] > 2147483647.0f) {
      throw FormatError(fmt::format("token file holds a non-integer id at element {}", i));
    }
    b.ids[i] = static_cast<std::int32_t>(t[i]);
  }
  return b;
}

std::vector<std::int32_t> read_labels(const std::string& path, std::size_t batch) {
  const TensorF t = read_tensor_file(path);
  if (t.shape().rank() != 1 || t.size() != batch) throw FormatError("label file must be rank 1 with one label per sequence");
  std::vector<std::int32_t> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != std::floor(t[i]) || t[i] < 0.0f) throw FormatError(fmt::format("bad label at element {}", i));
    out[i] = static_cast<std::int32_t>(t[i]);
  }
  return out;
}

TensorF tokens_tensor(const TokenBatch& b) {
  std::vector<float> v(b.ids.begin(), b.ids.end());
  return TensorF(Shape{b.batch, b.seq}, std::move(v));
}

TensorF labels_tensor(const std::vector<std::int32_t>& labels) {
  std::vector<float> v(labels.begin(), labels.end());
  return TensorF(Shape{labels.size()}, std::move(v));
}

std::string sanitize(const std::string& name) {
  std::string s = name;
  for (char& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) c = '_';
  }
  return s;
}

// Loads a quantization config; calibrates it when --calibrate tokens are given.
QuantConfig prepare_config(const EncoderModel& model, const std::string& qconfig_path, const std::string& calib_path) {
  QuantConfig q = QuantConfig::load(qconfig_path);
  if (!calib_path.empty()) {
    const TokenBatch cal = read_tokens(calib_path);
    calibrate(model, std::span(&cal, 1), q);
  }
  require_finalized(model.config, q);
  return q;
}

double score(const EncoderModel& model, const TokenBatch& tokens, const std::vector<std::int32_t>& labels,
             const QuantConfig& q) {
  Dataset d;
  d.tokens = tokens;
  d.labels = labels;
  return accuracy(model, d, &q);
}

// ---------------------------------------------------------------------------

struct OutliersArgs {
  std::string input, out, summary;
  double sigma = 6.0;
  bool pooled = false;
};

int run_outliers(const OutliersArgs& a) {
  TensorFileInfo info;
  const TensorF t = read_tensor_file(a.input, &info);
  if (t.shape().rank() != 3) throw FormatError("outliers needs a rank-3 (sequence, token, dim) tensor");
  const OutlierReport r = detect_outliers(t, a.sigma, a.pooled ? StatsScope::kPooled : StatsScope::kPerSequence);
  const std::string header = fmt::format("# crc={} sigma={} stats={} shape={}x{}x{}", info.has_crc ? "present" : "absent",
                                         num(a.sigma), a.pooled ? "pooled" : "per_sequence", r.sequences, r.tokens, r.dims);
  {
    CsvFile csv(a.out);
    csv.line("{}", header);
    csv.line("seq,token,dim,value");
    for (const auto& c : r.cells) csv.line("{},{},{},{}", c.seq, c.token, c.dim, num(c.value));
  }
  auto emit_summary = [&](auto&& sink) {
    sink(header);
    sink(std::string("dim,hits,sequences"));
    for (std::size_t j = 0; j < r.dims; ++j) {
      if (r.dim_hits[j]) sink(fmt::format("{},{},{}", j, r.dim_hits[j], r.dim_sequences[j]));
    }
  };
  if (!a.summary.empty()) {
    CsvFile csv(a.summary);
    emit_summary([&](const std::string& s) { csv.line("{}", s); });
  }
  emit_summary([](const std::string& s) { std::cout << s << '\n'; });
  return 0;
}

struct TokenRangesArgs {
  std::string input, out;
};

int run_token_ranges(const TokenRangesArgs& a) {
  const TensorF t = read_tensor_file(a.input);
  if (t.shape().rank() != 3) throw FormatError("token-ranges needs a rank-3 (sequence, token, dim) tensor");
  CsvFile csv(a.out);
  csv.line("seq,token,min,max");
  for (const auto& r : token_ranges(t)) csv.line("{},{},{},{}", r.seq, r.token, num(r.min), num(r.max));
  return 0;
}

struct PegPlanArgs {
  std::string input, out;
  std::size_t k = 1;
  bool no_permute = false;
};

int run_peg_plan(const PegPlanArgs& a) {
  const TensorF t = read_tensor_file(a.input);
  const std::size_t d = t.shape().last();
  if (a.k == 0 || d % a.k != 0) throw ConfigError(fmt::format("K={} does not divide d={}", a.k, d));
  const GroupSpec spec = a.no_permute ? GroupSpec(d, a.k) : build_range_permutation(embedding_ranges(t), a.k);
  const auto [mins, maxs] = last_axis_min_max(t);
  std::vector<Range> group_ranges(spec.groups());
  for (std::size_t g = 0; g < spec.groups(); ++g) {
    auto members = spec.members(g);
    double lo = mins[members[0]], hi = maxs[members[0]];
    for (std::size_t dim : members) {
      lo = std::min(lo, mins[dim]);
      hi = std::max(hi, maxs[dim]);
    }
    group_ranges[g] = Range{lo, hi};
  }
  write_text(a.out, group_spec_to_text(spec, group_ranges));
  for (std::size_t g = 0; g < spec.groups(); ++g) {
    std::cout << fmt::format("group {} range [{}, {}]\n", g, num(group_ranges[g].min), num(group_ranges[g].max));
  }
  return 0;
}

struct EstimateArgs {
  std::string input, out, estimator = "current_minmax", granularity = "per_tensor";
  int bits = 8;
  bool symmetric = false, permute = false;
  std::size_t k = 1;
  double momentum = 0.9;
  std::size_t grid_points = 100;
};

GranularParams estimate(const TensorF& t, const EstimateArgs& a) {
  EstimatorConfig ec;
  ec.kind = estimator_from_string(a.estimator);
  ec.momentum = a.momentum;
  ec.grid_points = a.grid_points;
  ec.validate();
  const std::size_t d = t.shape().last();
  QuantLayout layout = QuantLayout::per_tensor();
  switch (parse_granularity(a.granularity)) {
    case Granularity::kPerTensor: break;
    case Granularity::kPerEmbedding: layout = QuantLayout::per_embedding(d); break;
    case Granularity::kPerEmbeddingGroup:
      if (a.k == 0 || d % a.k != 0) throw ConfigError(fmt::format("K={} does not divide d={}", a.k, d));
      layout = QuantLayout::per_group(a.permute ? build_range_permutation(embedding_ranges(t), a.k) : GroupSpec(d, a.k));
      break;
  }
  RangeEstimator est(ec, layout);
  // The leading axis indexes calibration batches.
  const std::size_t batches = t.shape().rank() > 1 ? t.shape()[0] : 1;
  const std::size_t per = t.size() / batches;
  std::vector<std::size_t> dims = t.shape().dims();
  if (batches > 1) dims.erase(dims.begin());
  for (std::size_t b = 0; b < batches; ++b) {
    auto src = t.data().subspan(b * per, per);
    est.observe(TensorF(Shape(dims), std::vector<float>(src.begin(), src.end())));
  }
  return est.finalize(a.bits, a.symmetric);
}

int run_estimate_ranges(const EstimateArgs& a) {
  const TensorF t = read_tensor_file(a.input);
  const GranularParams p = estimate(t, a);
  write_text(a.out, granular_params_to_text(p));
  for (std::size_t i = 0; i < p.params().size(); ++i) {
    const QParams& q = p.params()[i];
    std::cout << fmt::format("slot {} scale {} zero_point {}\n", i, num(q.scale), q.zero_point);
  }
  return 0;
}

struct QuantizeArgs {
  EstimateArgs est;
  std::string params, error_csv;
};

int run_quantize(const QuantizeArgs& a) {
  const TensorF t = read_tensor_file(a.est.input);
  const GranularParams p = a.params.empty() ? estimate(t, a.est) : granular_params_from_text(read_text(a.params));
  const TensorF fq = fake_quantize(t, p);
  write_tensor_file(a.est.out, fq);
  double err = 0.0, sig = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double e = static_cast<double>(t[i]) - fq[i];
    err += e * e;
    sig += static_cast<double>(t[i]) * t[i];
  }
  const double mse = err / static_cast<double>(t.size());
  const double sqnr = err > 0.0 ? 10.0 * std::log10(sig / err) : INFINITY;
  std::cout << fmt::format("mse {} sqnr_db {}\n", num(mse), num(sqnr));
  if (!a.error_csv.empty()) {
    CsvFile csv(a.error_csv);
    csv.line("elements,mse,sqnr_db");
    csv.line("{},{},{}", t.size(), num(mse), num(sqnr));
  }
  return 0;
}

struct SimulateArgs {
  std::string model, qconfig, input, labels, calibrate, dump_sites, out, save_qconfig;
};

int run_simulate(const SimulateArgs& a) {
  const EncoderModel model = load_model(a.model);
  const TokenBatch tokens = read_tokens(a.input);
  const QuantConfig q = prepare_config(model, a.qconfig, a.calibrate);
  if (!a.save_qconfig.empty()) q.save(a.save_qconfig);
  const auto errors = site_errors(model, tokens, q);
  std::optional<double> metric;
  if (!a.labels.empty()) metric = score(model, tokens, read_labels(a.labels, tokens.batch), q);

  if (!a.dump_sites.empty()) {
    std::filesystem::create_directories(a.dump_sites);
    const EncoderModel qm = quantize_weights(model, q);
    const SiteVisitor quant = quantizing_visitor(q);
    forward(qm, tokens, [&](const std::string& name, TensorF& t, std::span<const std::uint8_t> keep) {
      quant(name, t, keep);
      write_tensor_file((std::filesystem::path(a.dump_sites) / (sanitize(name) + ".qt")).string(), t);
    });
  }
  auto emit = [&](auto&& sink) {
    sink(std::string("site,mse,sqnr_db,elements"));
    for (const auto& e : errors) sink(fmt::format("{},{},{},{}", e.site, num(e.mse), num(e.sqnr_db), e.elements));
    if (metric) sink(fmt::format("# accuracy={}", num(*metric)));
  };
  if (!a.out.empty()) {
    CsvFile csv(a.out);
    emit([&](const std::string& s) { csv.line("{}", s); });
  }
  if (metric) std::cout << fmt::format("accuracy {}\n", num(*metric));
  std::cout << fmt::format("{} quantized activation sites\n", errors.size());
  return 0;
}

struct AblateArgs {
  std::string model, qconfig, input, labels, calibrate, out;
  std::vector<std::string> groups;
  bool standard = false;
};

int run_ablate(const AblateArgs& a) {
  const EncoderModel model = load_model(a.model);
  const TokenBatch tokens = read_tokens(a.input);
  const auto labels = read_labels(a.labels, tokens.batch);
  const QuantConfig q = prepare_config(model, a.qconfig, a.calibrate);
  std::vector<std::string> groups = a.groups;
  if (a.standard) groups.insert(groups.end(), standard_ablation_groups().begin(), standard_ablation_groups().end());
  for (const auto& g : groups) ablation_group_sites(model.config, g);  // validate names before any evaluation
  const EvalFn eval = [&](const EncoderModel& m, const QuantConfig& c) { return score(m, tokens, labels, c); };
  const auto rows = leave_one_out_ablation(model, q, groups, eval);
  CsvFile csv(a.out);
  csv.line("excluded_group,score,rank");
  for (const auto& r : rows) {
    csv.line("{},{},{}", r.excluded, num(r.score), r.rank);
    std::cout << fmt::format("{:<24} {}\n", r.excluded, num(r.score));
  }
  return 0;
}

struct SynthArgs {
  std::string out_dir;
  double magnitude = 300.0;
  std::size_t steps = 200;
  std::uint64_t seed = 7;
};

int run_synth(const SynthArgs& a) {
  PlantedTaskOptions opt;
  opt.magnitude = a.magnitude;
  opt.train_steps = a.steps;
  opt.seed = a.seed;
  const PlantedTask task = build_planted_task(opt);
  namespace fs = std::filesystem;
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  save_model((dir / "model.bin").string(), task.model);
  save_model((dir / "model_fp32.bin").string(), task.fp32_model);
  write_tensor_file((dir / "test_tokens.qt").string(), tokens_tensor(task.test.tokens));
  write_tensor_file((dir / "test_labels.qt").string(), labels_tensor(task.test.labels));
  write_tensor_file((dir / "calib_tokens.qt").string(), tokens_tensor(task.calib.tokens));
  QuantConfig::uniform(8, 8).save((dir / "w8a8.json").string());
  QuantConfig::disabled().save((dir / "fp32.json").string());
  // FFN output of the planted layer over the calibration set, for the diagnostics.
  const std::string site_name = site::layer(task.model.config.layers - 1, site::kFfnOutput);
  TensorF dump;
  forward(task.model, task.calib.tokens, [&](const std::string& name, TensorF& t, std::span<const std::uint8_t>) {
    if (name == site_name) dump = t.reshaped(Shape{task.calib.tokens.batch, task.calib.tokens.seq, t.shape().last()});
  });
  write_tensor_file((dir / "ffn_output.qt").string(), dump);
  std::cout << fmt::format("fp32 accuracy {} (before plant {})\n", num(accuracy(task.model, task.test)),
                           num(accuracy(task.fp32_model, task.test)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pegq: quantization simulation and outlier diagnostics for toy transformer encoders"};
  app.require_subcommand(1);

  OutliersArgs oa;
  auto* outliers = app.add_subcommand("outliers", "flag cells beyond k standard deviations of the mean");
  outliers->add_option("input", oa.input, "rank-3 TensorFile")->required();
  outliers->add_option("--sigma", oa.sigma, "sigma multiplier")->capture_default_str();
  outliers->add_flag("--pooled", oa.pooled, "pool statistics over all sequences");
  outliers->add_option("--out", oa.out, "flagged cells CSV")->required();
  outliers->add_option("--summary", oa.summary, "per-dim hit counts CSV");

  TokenRangesArgs ta;
  auto* ranges = app.add_subcommand("token-ranges", "per-token min and max over the embedding axis");
  ranges->add_option("input", ta.input, "rank-3 TensorFile")->required();
  ranges->add_option("--out", ta.out, "CSV output")->required();

  PegPlanArgs pa;
  auto* plan = app.add_subcommand("peg-plan", "range-based permutation and grouping for PEG");
  plan->add_option("input", pa.input, "calibration TensorFile (last axis = embedding)")->required();
  plan->add_option("--k", pa.k, "number of groups")->required();
  plan->add_flag("--no-permute", pa.no_permute, "contiguous groups without sorting");
  plan->add_option("--out", pa.out, "JSON plan")->required();

  EstimateArgs ea;
  auto add_estimator_options = [](CLI::App* c, EstimateArgs& e) {
    c->add_option("--estimator", e.estimator, "current_minmax | running_minmax | mse")->capture_default_str();
    c->add_option("--bits", e.bits, "bit-width")->capture_default_str();
    c->add_flag("--symmetric", e.symmetric, "symmetric grid");
    c->add_option("--granularity", e.granularity, "per_tensor | per_embedding | per_embedding_group")
        ->capture_default_str();
    c->add_option("--k", e.k, "groups for per_embedding_group")->capture_default_str();
    c->add_flag("--permute", e.permute, "range-based permutation for per_embedding_group");
    c->add_option("--momentum", e.momentum, "running min-max momentum")->capture_default_str();
    c->add_option("--grid-points", e.grid_points, "MSE candidates")->capture_default_str();
  };
  auto* est = app.add_subcommand("estimate-ranges", "static range estimation; the leading axis indexes batches");
  est->add_option("input", ea.input, "TensorFile")->required();
  add_estimator_options(est, ea);
  est->add_option("--out", ea.out, "JSON parameters")->required();

  QuantizeArgs qa;
  auto* quant = app.add_subcommand("quantize", "fake-quantize a tensor");
  quant->add_option("input", qa.est.input, "TensorFile")->required();
  add_estimator_options(quant, qa.est);
  quant->add_option("--params", qa.params, "JSON parameters from estimate-ranges");
  quant->add_option("--out", qa.est.out, "output TensorFile")->required();
  quant->add_option("--error-csv", qa.error_csv, "MSE/SQNR CSV");

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "quantized forward with per-site errors and task metric");
  sim->add_option("--model", sa.model, "model bundle")->required();
  sim->add_option("--qconfig", sa.qconfig, "QuantConfig JSON")->required();
  sim->add_option("--input", sa.input, "token TensorFile (batch, seq)")->required();
  sim->add_option("--labels", sa.labels, "label TensorFile (batch)");
  sim->add_option("--calibrate", sa.calibrate, "calibration token TensorFile");
  sim->add_option("--save-qconfig", sa.save_qconfig, "write the calibrated config");
  sim->add_option("--dump-sites", sa.dump_sites, "directory for per-site TensorFiles");
  sim->add_option("--out", sa.out, "per-site CSV");

  AblateArgs aa;
  auto* abl = app.add_subcommand("ablate", "leave-one-out activation quantizer ablation");
  abl->add_option("--model", aa.model, "model bundle")->required();
  abl->add_option("--qconfig", aa.qconfig, "QuantConfig JSON")->required();
  abl->add_option("--input", aa.input, "token TensorFile (batch, seq)")->required();
  abl->add_option("--labels", aa.labels, "label TensorFile (batch)")->required();
  abl->add_option("--calibrate", aa.calibrate, "calibration token TensorFile");
  abl->add_option("--groups", aa.groups, "site groups (comma separated)")->delimiter(',');
  abl->add_flag("--standard", aa.standard, "add the five standard groups");
  abl->add_option("--out", aa.out, "CSV output")->required();

  SynthArgs ya;
  auto* synth = app.add_subcommand("synth", "train the toy encoder and write a planted-outlier model and data");
  synth->add_option("--out-dir", ya.out_dir, "output directory")->required();
  synth->add_option("--magnitude", ya.magnitude, "outlier size / FFN output bulk range")->capture_default_str();
  synth->add_option("--steps", ya.steps, "training steps")->capture_default_str();
  synth->add_option("--seed", ya.seed, "seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*outliers) return run_outliers(oa);
    if (*ranges) return run_token_ranges(ta);
    if (*plan) return run_peg_plan(pa);
    if (*est) return run_estimate_ranges(ea);
    if (*quant) return run_quantize(qa);
    if (*sim) return run_simulate(sa);
    if (*abl) return run_ablate(aa);
    if (*synth) return run_synth(ya);
  } catch (const FormatError& e) {
    std::cerr << "input format error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
