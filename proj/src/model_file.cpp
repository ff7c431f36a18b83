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

#include "pegq/model_file.hpp"

#include <cstring>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "pegq/error.hpp"
#include "pegq/tensor_file.hpp"

namespace pegq {

using nlohmann::json;

namespace {

constexpr char kModelMagic[8] = {'P', 'E', 'G', 'Q', 'M', 'D', 'L', '1'};

json config_json(const EncoderConfig& c) {
  return {{"layers", c.layers}, {"d", c.d},         {"heads", c.heads},     {"d_ff", c.d_ff},
          {"max_len", c.max_len}, {"vocab", c.vocab}, {"classes", c.classes}, {"pad_id", c.pad_id}};
}

EncoderConfig config_from(const json& j) {
  EncoderConfig c;
  c.layers = j.at("layers").get<std::size_t>();
  c.d = j.at("d").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.vocab = j.at("vocab").get<std::size_t>();
  c.classes = j.at("classes").get<std::size_t>();
  c.pad_id = j.at("pad_id").get<std::int32_t>();
  c.validate();
  return c;
}

}  // namespace

std::string encoder_config_to_json(const EncoderConfig& config) { return config_json(config).dump(2) + "\n"; }

EncoderConfig encoder_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed encoder config: ") + e.what());
  }
}

std::vector<std::uint8_t> encode_model(const EncoderModel& model) {
  auto params = const_cast<EncoderModel&>(model).parameters();
  std::vector<std::vector<std::uint8_t>> blobs;
  json table = json::array();
  for (const auto& p : params) {
    blobs.push_back(encode_tensor(TensorF(p.shape, std::vector<float>(p.values.begin(), p.values.end())), true));
    table.push_back({{"name", p.name}, {"bytes", blobs.back().size()}});
  }
  const json header{{"format", "pegq.model"}, {"version", 1}, {"config", config_json(model.config)}, {"tensors", table}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kModelMagic, kModelMagic + 8);
  const auto n = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& b : blobs) out.insert(out.end(), b.begin(), b.end());
  return out;
}

EncoderModel decode_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kModelMagic, 8) != 0) {
    throw FormatError("bad model magic at offset 0 (expected PEGQMDL1)");
  }
  std::uint32_t n = 0;
  for (int i = 3; i >= 0; --i) n = (n << 8) | bytes[8 + i];
  if (bytes.size() < 12 + static_cast<std::size_t>(n)) throw FormatError("truncated model header at offset 12");
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + n);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model header at offset 12 is not valid JSON: ") + e.what());
  }
  EncoderModel model;
  try {
    if (header.value("format", std::string()) != "pegq.model" || header.value("version", 0) != 1) {
      throw FormatError("unsupported model header format or version");
    }
    model = init_encoder(config_from(header.at("config")), 0).zeros_like();
    auto params = model.parameters();
    const json& table = header.at("tensors");
    if (table.size() != params.size()) {
      throw FormatError(fmt::format("model has {} tensors, the config needs {}", table.size(), params.size()));
    }
    std::size_t offset = 12 + n;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string name = table[i].at("name").get<std::string>();
      const auto size = table[i].at("bytes").get<std::size_t>();
      if (name != params[i].name) throw FormatError("model tensor '" + name + "' is out of order or unknown");
      if (offset + size > bytes.size()) throw FormatError(fmt::format("tensor '{}' at offset {} is truncated", name, offset));
      TensorF t;
      try {
        t = decode_tensor(bytes.subspan(offset, size));
      } catch (const FormatError& e) {
        throw FormatError(fmt::format("tensor '{}' at offset {}: {}", name, offset, e.what()));
      }
      if (t.shape() != params[i].shape) throw FormatError("tensor '" + name + "' has the wrong shape");
      std::copy(t.data().begin(), t.data().end(), params[i].values.begin());
      offset += size;
    }
    if (offset != bytes.size()) throw FormatError(fmt::format("unexpected trailing bytes at offset {}", offset));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model header: ") + e.what());
  }
  return model;
}

void save_model(const std::string& path, const EncoderModel& model) { write_binary_file(path, encode_model(model)); }

EncoderModel load_model(const std::string& path) { return decode_model(read_binary_file(path)); }

}  // namespace pegq
