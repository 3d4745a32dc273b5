/*
 * Copyright 2026 The ptools Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <string>

#include "pt/chunk.hpp"

namespace {

std::string random_bytes(uint32_t seed, size_t n) {
  std::mt19937 rng(seed);
  std::string s(n, '\0');
  for (auto& c : s) c = char(rng() & 0xff);
  return s;
}

}  // namespace

TEST_CASE("chunk wire format: field layout") {
  pt::Chunk c;
  c.index = 0x01020304;
  c.last = true;
  c.raw_len = 3;
  c.payload = "abc";
  std::string wire = pt::encode_chunk(c);
  REQUIRE(wire.size() == 4 + 1 + 4 + 3);
  // index, little-endian
  CHECK(uint8_t(wire[0]) == 0x04);
  CHECK(uint8_t(wire[1]) == 0x03);
  CHECK(uint8_t(wire[2]) == 0x02);
  CHECK(uint8_t(wire[3]) == 0x01);
  // flags byte: bit0 last, bit1 compressed, bit2 poisoned
  CHECK(uint8_t(wire[4]) == 0x01);
  // raw_len, little-endian
  CHECK(uint8_t(wire[5]) == 0x03);
  CHECK(uint8_t(wire[6]) == 0x00);
  CHECK(wire.substr(9) == "abc");
}

TEST_CASE("chunk round-trip: random chunks (property)") {
  std::mt19937 rng(42);
  for (int i = 0; i < 200; ++i) {
    std::string raw = random_bytes(uint32_t(i), rng() % 4096);
    bool compress = rng() % 2 == 0;
    pt::Chunk c = pt::make_chunk(uint32_t(i), rng() % 2 == 0, raw, compress);
    pt::Chunk back = pt::decode_chunk(pt::encode_chunk(c));
    CHECK(back.index == c.index);
    CHECK(back.last == c.last);
    CHECK(back.compressed == c.compressed);
    CHECK(back.poisoned == c.poisoned);
    CHECK(back.raw_len == raw.size());
    CHECK(pt::chunk_data(back) == raw);
  }
}

TEST_CASE("compressible data is stored compressed, incompressible stored raw") {
  std::string text(8192, 'a');
  pt::Chunk compressed = pt::make_chunk(0, true, text, true);
  CHECK(compressed.compressed);
  CHECK(compressed.payload.size() < text.size());
  CHECK(pt::chunk_data(compressed) == text);

  std::string noise = random_bytes(7, 8192);
  pt::Chunk stored = pt::make_chunk(0, true, noise, true);
  CHECK_FALSE(stored.compressed);
  CHECK(stored.payload == noise);
}

TEST_CASE("compression disabled stores raw regardless") {
  std::string text(4096, 'z');
  pt::Chunk c = pt::make_chunk(3, false, text, false);
  CHECK_FALSE(c.compressed);
  CHECK(c.payload == text);
}

TEST_CASE("empty chunk encodes and round-trips") {
  pt::Chunk c = pt::make_chunk(0, true, "", true);
  CHECK_FALSE(c.compressed);
  CHECK(c.raw_len == 0);
  pt::Chunk back = pt::decode_chunk(pt::encode_chunk(c));
  CHECK(back.last);
  CHECK(pt::chunk_data(back).empty());
}

TEST_CASE("poisoned flag survives the wire") {
  pt::Chunk c;
  c.index = 9;
  c.last = true;
  c.poisoned = true;
  pt::Chunk back = pt::decode_chunk(pt::encode_chunk(c));
  CHECK(back.poisoned);
  CHECK(back.last);
}

TEST_CASE("malformed chunks are protocol errors") {
  CHECK_THROWS_AS(pt::decode_chunk(""), pt::ProtocolError);
  CHECK_THROWS_AS(pt::decode_chunk("ab"), pt::ProtocolError);
  // uncompressed length must agree with raw_len
  pt::Chunk c;
  c.raw_len = 10;
  c.payload = "short";
  CHECK_THROWS_AS(pt::decode_chunk(pt::encode_chunk(c)), pt::ProtocolError);
  // corrupt compressed payload
  pt::Chunk z = pt::make_chunk(0, true, std::string(4096, 'q'), true);
  REQUIRE(z.compressed);
  z.payload[2] = char(z.payload[2] ^ 0x55);
  pt::Chunk back = pt::decode_chunk(pt::encode_chunk(z));
  CHECK_THROWS_AS(pt::chunk_data(back), pt::ProtocolError);
}
