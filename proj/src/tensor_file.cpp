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

#include "pegq/tensor_file.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <fmt/format.h>
#include <zlib.h>

#include "pegq/error.hpp"

namespace pegq {

static_assert(std::numeric_limits<float>::is_iec559, "f32 payloads need IEEE-754 floats");

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_tensor(const TensorF& t, bool with_crc) {
  const Shape& s = t.shape();
  if (s.rank() > 255) throw FormatError("rank does not fit in a byte");
  std::vector<std::uint8_t> out;
  out.reserve(8 + 8 * s.rank() + 4 * t.size() + 4);
  out.insert(out.end(), kTensorMagic, kTensorMagic + 6);
  out.push_back(kDtypeF32);
  out.push_back(static_cast<std::uint8_t>(s.rank()));
  for (std::size_t i = 0; i < s.rank(); ++i) put_u64(out, s[i]);
  const std::size_t payload_at = out.size();
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (with_crc) {
    const std::uint32_t crc = crc32_of(std::span(out).subspan(payload_at));
    put_u32(out, crc);
  }
  return out;
}

TensorF decode_tensor(std::span<const std::uint8_t> bytes, TensorFileInfo* info) {
  auto need = [&](std::size_t offset, std::size_t n, const char* what) {
    if (bytes.size() < offset + n) {
      throw FormatError(fmt::format("truncated tensor file: {} needs bytes [{}, {}) but the file has {}", what, offset,
                                    offset + n, bytes.size()));
    }
  };
  need(0, 8, "header");
  if (std::memcmp(bytes.data(), kTensorMagic, 6) != 0) throw FormatError("bad magic at offset 0 (expected QTNSR1)");
  if (bytes[6] != kDtypeF32) throw FormatError(fmt::format("unsupported dtype {} at offset 6", bytes[6]));
  const std::size_t rank = bytes[7];
  if (rank == 0) throw FormatError("rank 0 at offset 7");
  need(8, 8 * rank, "extents");
  std::vector<std::size_t> extents(rank);
  std::size_t numel = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::uint64_t e = get_u64(bytes.data() + 8 + 8 * i);
    if (e == 0) throw FormatError(fmt::format("zero extent at offset {}", 8 + 8 * i));
    if (e > std::numeric_limits<std::size_t>::max() / numel ||
        e * numel > (std::numeric_limits<std::size_t>::max() - 64) / 4) {
      throw FormatError(fmt::format("extent at offset {} overflows the element count", 8 + 8 * i));
    }
    extents[i] = static_cast<std::size_t>(e);
    numel *= extents[i];
  }
  const std::size_t payload_at = 8 + 8 * rank;
  const std::size_t payload_len = 4 * numel;
  need(payload_at, payload_len, "payload");
  const std::size_t tail = bytes.size() - payload_at - payload_len;
  TensorFileInfo local;
  if (tail == 4) {
    local.has_crc = true;
    local.crc = get_u32(bytes.data() + payload_at + payload_len);
    const std::uint32_t actual = crc32_of(bytes.subspan(payload_at, payload_len));
    if (actual != local.crc) {
      throw FormatError(fmt::format("CRC mismatch at offset {}: stored {:08x}, payload {:08x}", payload_at + payload_len,
                                    local.crc, actual));
    }
  } else if (tail != 0) {
    throw FormatError(fmt::format("{} unexpected trailing bytes at offset {}", tail, payload_at + payload_len));
  }
  std::vector<float> data(numel);
  for (std::size_t i = 0; i < numel; ++i) {
    data[i] = std::bit_cast<float>(get_u32(bytes.data() + payload_at + 4 * i));
    if (!std::isfinite(data[i])) throw FormatError(fmt::format("non-finite value at offset {}", payload_at + 4 * i));
  }
  if (info) *info = local;
  return TensorF(Shape(std::move(extents)), std::move(data));
}

std::vector<std::uint8_t> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_binary_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

void write_tensor_file(const std::string& path, const TensorF& t, bool with_crc) {
  write_binary_file(path, encode_tensor(t, with_crc));
}

TensorF read_tensor_file(const std::string& path, TensorFileInfo* info) {
  const auto bytes = read_binary_file(path);
  return decode_tensor(bytes, info);
}

}  // namespace pegq
