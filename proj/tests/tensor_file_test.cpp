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

#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

#include "pegq/error.hpp"
#include "pegq/model_file.hpp"
#include "pegq/tensor_file.hpp"
#include "test_models.hpp"
#include "test_util.hpp"

namespace pegq {
namespace {

std::vector<std::uint8_t> le64(std::uint64_t v) {
  std::vector<std::uint8_t> out(8);
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
  return out;
}

TEST(TensorFile, ExactLayout) {
  const TensorF t(Shape{2, 1}, {1.0f, -2.5f});
  const auto bytes = encode_tensor(t, false);
  std::vector<std::uint8_t> want{'Q', 'T', 'N', 'S', 'R', '1', 0, 2};
  for (std::uint64_t e : {2u, 1u}) {
    const auto b = le64(e);
    want.insert(want.end(), b.begin(), b.end());
  }
  for (float f : {1.0f, -2.5f}) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) want.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  EXPECT_EQ(bytes, want);
  const auto with = encode_tensor(t, true);
  ASSERT_EQ(with.size(), want.size() + 4);
  const std::uint32_t crc = crc32_of(std::span(want).subspan(want.size() - 8));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(with[want.size() + i], static_cast<std::uint8_t>(crc >> (8 * i)));
}

TEST(TensorFile, Crc32KnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_of(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())), 0xCBF43926u);
}

TEST(TensorFile, RandomRoundTripIsBitExact) {
  std::mt19937_64 rng(71);
  std::uniform_int_distribution<std::uint32_t> bits;
  for (int iter = 0; iter < 200; ++iter) {
    const std::size_t rank = 1 + iter % 4;
    std::vector<std::size_t> dims;
    for (std::size_t r = 0; r < rank; ++r) dims.push_back(1 + rng() % 5);
    TensorF t{Shape(dims)};
    for (float& v : t.mutable_data()) {
      do v = std::bit_cast<float>(bits(rng));
      while (!std::isfinite(v));
    }
    TensorFileInfo info;
    const bool crc = iter % 2 == 0;
    const TensorF back = decode_tensor(encode_tensor(t, crc), &info);
    EXPECT_EQ(info.has_crc, crc);
    ASSERT_EQ(back.shape(), t.shape());
    EXPECT_EQ(std::memcmp(back.data().data(), t.data().data(), t.size() * 4), 0);
  }
}

TEST(TensorFile, RejectsCorruption) {
  const TensorF t(Shape{3}, {1, 2, 3});
  auto good = encode_tensor(t, true);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_tensor(bad_magic), FormatError);
  auto bad_dtype = good;
  bad_dtype[6] = 1;
  EXPECT_THROW(decode_tensor(bad_dtype), FormatError);
  auto bad_crc = good;
  bad_crc[20] ^= 1;
  EXPECT_THROW(decode_tensor(bad_crc), FormatError);
  auto truncated = good;
  truncated.resize(18);
  EXPECT_THROW(decode_tensor(truncated), FormatError);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_tensor(trailing), FormatError);
  auto nan = encode_tensor(t, false);
  for (std::size_t i = 16; i < 20; ++i) nan[i] = 0xFF;
  EXPECT_THROW(decode_tensor(nan), FormatError);
  EXPECT_THROW(TensorF(Shape{1}, {std::numeric_limits<float>::infinity()}), Error);
}

TEST(ModelFile, RoundTripIsExact) {
  const EncoderModel m = init_encoder(testing::tiny_config(), 72, 0.3f);
  const auto bytes = encode_model(m);
  EncoderModel back = decode_model(bytes);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(encode_model(back), bytes);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_model(bad), FormatError);
}

TEST(ModelFile, ConfigJsonRoundTrip) {
  const EncoderConfig c = testing::tiny_config();
  EXPECT_EQ(encoder_config_from_json(encoder_config_to_json(c)), c);
}

}  // namespace
}  // namespace pegq
