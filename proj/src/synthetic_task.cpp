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

#include "pegq/synthetic_task.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "pegq/error.hpp"

namespace pegq {

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw Error("dataset slice out of range");
  Dataset out;
  out.tokens.batch = count;
  out.tokens.seq = tokens.seq;
  out.tokens.ids.assign(tokens.ids.begin() + static_cast<std::ptrdiff_t>(begin * tokens.seq),
                        tokens.ids.begin() + static_cast<std::ptrdiff_t>((begin + count) * tokens.seq));
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return out;
}

Dataset make_dataset(const EncoderConfig& config, const SyntheticTask& task, std::size_t n, std::uint64_t seed) {
  const std::size_t T = config.max_len;
  if (task.min_len < 4 || task.min_len > T) throw ConfigError("task min_len must lie in [4, max_len]");
  if (task.first_content >= static_cast<std::int32_t>(config.vocab)) throw ConfigError("vocabulary has no content tokens");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len_dist(task.min_len, T);
  std::uniform_int_distribution<std::int32_t> content(task.first_content, static_cast<std::int32_t>(config.vocab) - 1);
  Dataset d;
  d.tokens.batch = n;
  d.tokens.seq = T;
  d.tokens.ids.assign(n * T, config.pad_id);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t label = static_cast<std::int32_t>(rng() & 1u);
    const std::size_t len = len_dist(rng);
    std::int32_t* row = d.tokens.ids.data() + i * T;
    row[0] = task.cls_id;
    for (std::size_t t = 1; t + 1 < len; ++t) row[t] = content(rng);
    row[len - 1] = task.sep_id;
    std::uniform_int_distribution<std::size_t> pos(1, len - 2);
    const std::size_t pa = pos(rng);
    std::size_t pb = pos(rng);
    while (pb == pa) pb = pos(rng);
    if (label == 1) {
      row[pa] = task.marker_a;
      row[pb] = task.marker_b;
    } else {
      switch (rng() % 3) {
        case 0: break;
        case 1: row[pa] = task.marker_a; break;
        default: row[pb] = task.marker_b; break;
      }
    }
    d.labels[i] = label;
  }
  return d;
}

double accuracy(const EncoderModel& model, const Dataset& data, const QuantConfig* qconfig, std::size_t batch_size) {
  if (data.size() == 0) throw Error("empty dataset");
  EncoderModel qm;
  SiteVisitor visitor;
  if (qconfig) {
    require_finalized(model.config, *qconfig);
    qm = quantize_weights(model, *qconfig);
    visitor = quantizing_visitor(*qconfig);
  }
  const EncoderModel& used = qconfig ? qm : model;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const Dataset part = data.slice(b, std::min(batch_size, data.size() - b));
    const TensorF logits = forward(used, part.tokens, visitor).logits;
    for (std::size_t i = 0; i < part.size(); ++i) {
      auto row = logits.row(i);
      const auto pred = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += pred == part.labels[i];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<double> train(EncoderModel& model, const Dataset& data, const TrainOptions& options, QuantConfig* qconfig) {
  if (options.batch_size == 0 || options.batch_size > data.size()) throw ConfigError("bad training batch size");
  QuantConfig fp = QuantConfig::disabled();
  QuantConfig& config = qconfig ? *qconfig : fp;
  QatOptions opt = options.optimizer;
  opt.total_steps = options.steps;
  OptimizerState state = init_optimizer(model);
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t T = data.tokens.seq;

  std::vector<double> losses;
  losses.reserve(options.steps);
  Dataset batch;
  batch.tokens.batch = options.batch_size;
  batch.tokens.seq = T;
  batch.tokens.ids.resize(options.batch_size * T);
  batch.labels.resize(options.batch_size);
  for (std::size_t step = 0; step < options.steps; ++step) {
    for (std::size_t i = 0; i < options.batch_size; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t src = order[cursor++];
      std::copy_n(data.tokens.ids.begin() + static_cast<std::ptrdiff_t>(src * T), T,
                  batch.tokens.ids.begin() + static_cast<std::ptrdiff_t>(i * T));
      batch.labels[i] = data.labels[src];
    }
    losses.push_back(qat_train_step(model, config, batch.tokens, batch.labels, state, opt));
  }
  return losses;
}

// ---------------------------------------------------------------------------

void PlantRecord::apply(EncoderModel& model) const {
  EncoderLayer& l = model.layers.at(layer);
  if (gated) {
    const std::size_t d_in = l.fc1.in_features();
    std::copy(fc1_row.begin(), fc1_row.end(), l.fc1.weight.mutable_row(unit).begin());
    l.fc1.bias[unit] = fc1_bias;
    const std::size_t d_ff = l.fc2.in_features();
    for (std::size_t j = 0; j < d_in; ++j) l.fc2.weight[j * d_ff + unit] = 0.0f;
    for (std::size_t i = 0; i < dims.size(); ++i) l.fc2.weight[dims[i] * d_ff + unit] = values[i];
  } else {
    for (std::size_t i = 0; i < dims.size(); ++i) l.fc2.bias[dims[i]] = values[i];
  }
}

PlantRecord plan_outlier_plant(const EncoderModel& model, const TokenBatch& probe, const OutlierPlant& plant) {
  const EncoderConfig& cfg = model.config;
  if (plant.layer >= cfg.layers) throw ConfigError("plant layer out of range");
  if (plant.dims.empty()) throw ConfigError("plant needs at least one dimension");
  for (std::size_t d : plant.dims) {
    if (d >= cfg.d) throw ConfigError("plant dimension out of range");
  }
  if (!(plant.magnitude > 0.0)) throw ConfigError("plant magnitude must be positive");

  const std::string in_name = site::layer(plant.layer, site::kFfnInput);
  const std::string out_name = site::layer(plant.layer, site::kFfnOutput);
  TensorF x1, y;
  forward(model, probe, [&](const std::string& name, TensorF& t, std::span<const std::uint8_t>) {
    if (name == in_name) x1 = t;
    if (name == out_name) y = t;
  });

  PlantRecord rec;
  rec.layer = plant.layer;
  rec.gated = plant.gated;
  rec.unit = plant.gated ? (plant.unit ? plant.unit : cfg.d_ff - 1) : 0;
  if (rec.unit >= cfg.d_ff) throw ConfigError("plant unit out of range");
  rec.dims = plant.dims;

  // Bulk range of the FFN output over real tokens and non-planted dims.
  std::vector<std::uint8_t> planted(cfg.d, 0);
  for (std::size_t d : plant.dims) planted[d] = 1;
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    if (probe.ids[r] == cfg.pad_id) continue;
    auto row = y.row(r);
    for (std::size_t j = 0; j < cfg.d; ++j) {
      if (planted[j]) continue;
      lo = any ? std::min<double>(lo, row[j]) : row[j];
      hi = any ? std::max<double>(hi, row[j]) : row[j];
      any = true;
    }
  }
  rec.bulk_range = hi - lo;
  if (!(rec.bulk_range > 0.0)) throw ConfigError("FFN output has no spread on the probe batch");
  const double target = plant.magnitude * rec.bulk_range;

  if (!plant.gated) {
    rec.values.assign(plant.dims.size(), static_cast<float>(target));
    return rec;
  }

  // Direction separating gate tokens from the rest in the FFN input.
  std::vector<double> mu_g(cfg.d, 0.0), mu_o(cfg.d, 0.0);
  std::size_t n_g = 0, n_o = 0;
  for (std::size_t r = 0; r < x1.rows(); ++r) {
    const std::int32_t id = probe.ids[r];
    if (id == cfg.pad_id) continue;
    auto row = x1.row(r);
    auto& mu = id == plant.gate_token ? mu_g : mu_o;
    for (std::size_t j = 0; j < cfg.d; ++j) mu[j] += row[j];
    (id == plant.gate_token ? n_g : n_o) += 1;
  }
  if (n_g == 0 || n_o == 0) throw ConfigError("probe batch needs gate tokens and other tokens");
  std::vector<double> w(cfg.d);
  double norm = 0.0;
  for (std::size_t j = 0; j < cfg.d; ++j) {
    w[j] = mu_g[j] / static_cast<double>(n_g) - mu_o[j] / static_cast<double>(n_o);
    norm += w[j] * w[j];
  }
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) throw ConfigError("gate tokens are indistinguishable in the FFN input");
  for (double& v : w) v /= norm;

  double gate_min = std::numeric_limits<double>::infinity(), other_max = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < x1.rows(); ++r) {
    const std::int32_t id = probe.ids[r];
    if (id == cfg.pad_id) continue;
    auto row = x1.row(r);
    double p = 0.0;
    for (std::size_t j = 0; j < cfg.d; ++j) p += w[j] * row[j];
    if (id == plant.gate_token) {
      gate_min = std::min(gate_min, p);
    } else {
      other_max = std::max(other_max, p);
    }
  }
  const double theta = 0.5 * (gate_min + other_max);
  const double margin = std::max(0.5 * (gate_min - other_max), 1e-3);
  const double kappa = 6.0 / margin;
  rec.fc1_row.resize(cfg.d);
  for (std::size_t j = 0; j < cfg.d; ++j) rec.fc1_row[j] = static_cast<float>(kappa * w[j]);
  rec.fc1_bias = static_cast<float>(-kappa * theta);

  double gate_mean = 0.0;
  for (std::size_t r = 0; r < x1.rows(); ++r) {
    if (probe.ids[r] != plant.gate_token) continue;
    auto row = x1.row(r);
    double p = rec.fc1_bias;
    for (std::size_t j = 0; j < cfg.d; ++j) p += static_cast<double>(rec.fc1_row[j]) * row[j];
    gate_mean += gelu(static_cast<float>(p));
  }
  gate_mean /= static_cast<double>(n_g);
  rec.values.assign(plant.dims.size(), static_cast<float>(target / gate_mean));
  return rec;
}

EncoderModel inject_outlier_model(const EncoderModel& model, const TokenBatch& probe, const OutlierPlant& plant,
                                  PlantRecord* record) {
  const PlantRecord rec = plan_outlier_plant(model, probe, plant);
  EncoderModel out = model;
  rec.apply(out);
  if (record) *record = rec;
  return out;
}

PlantedTask build_planted_task(const PlantedTaskOptions& options) {
  PlantedTask out;
  out.train = make_dataset(options.config, options.task, options.train_size, options.seed * 1000 + 1);
  out.test = make_dataset(options.config, options.task, options.test_size, options.seed * 1000 + 2);
  out.calib = make_dataset(options.config, options.task, options.calib_size, options.seed * 1000 + 3);
  out.fp32_model = init_encoder(options.config, options.seed, 0.05f);
  TrainOptions train_opts;
  train_opts.steps = options.train_steps;
  train_opts.optimizer.lr = options.lr;
  train_opts.seed = options.seed;
  train(out.fp32_model, out.train, train_opts);
  OutlierPlant plant;
  plant.layer = options.config.layers - 1;
  plant.dims = options.outlier_dims;
  plant.magnitude = options.magnitude;
  plant.gated = true;
  plant.gate_token = options.task.sep_id;
  out.model = inject_outlier_model(out.fp32_model, out.calib.tokens, plant, &out.plant);
  return out;
}

}  // namespace pegq
