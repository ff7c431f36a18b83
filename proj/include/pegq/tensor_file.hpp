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

#include "pegq/tensor.hpp"

namespace pegq {

/// Binary tensor container:
///   "QTNSR1" | u8 dtype (0 = f32) | u8 rank | rank x u64 LE extents |
///   row-major LE f32 payload | optional u32 LE CRC32 of the payload.
inline constexpr char kTensorMagic[6] = {'Q', 'T', 'N', 'S', 'R', '1'};
inline constexpr std::uint8_t kDtypeF32 = 0;

struct TensorFileInfo {
  bool has_crc = false;
  std::uint32_t crc = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_tensor(const TensorF& t, bool with_crc = true);
/// Throws FormatError naming the byte offset of the first problem.
TensorF decode_tensor(std::span<const std::uint8_t> bytes, TensorFileInfo* info = nullptr);

void write_tensor_file(const std::string& path, const TensorF& t, bool with_crc = true);
TensorF read_tensor_file(const std::string& path, TensorFileInfo* info = nullptr);

std::vector<std::uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace pegq
