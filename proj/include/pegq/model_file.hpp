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
#include <span>
#include <string>
#include <vector>

#include "pegq/encoder.hpp"

namespace pegq {

/// Model bundle: "PEGQMDL1" | u32 LE header length | JSON header (config and
/// tensor table) | one TensorFile blob per parameter, in header order.
std::vector<std::uint8_t> encode_model(const EncoderModel& model);
EncoderModel decode_model(std::span<const std::uint8_t> bytes);

void save_model(const std::string& path, const EncoderModel& model);
EncoderModel load_model(const std::string& path);

std::string encoder_config_to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const std::string& text);

}  // namespace pegq
