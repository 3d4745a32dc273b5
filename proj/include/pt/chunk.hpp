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

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <zlib.h>

#include "pt/bytesio.hpp"
#include "pt/error.hpp"

namespace pt {

/// One framed unit of the pipelined broadcast stream.
///
/// Wire format: index (4 bytes LE) | flags byte | raw_len (4 bytes LE) |
/// payload.  Flag bits: 0 last, 1 compressed, 2 poisoned (stream aborted at
/// the source; receivers discard the transfer).
struct Chunk {
  uint32_t index = 0;
  bool last = false;
  bool compressed = false;
  bool poisoned = false;
  uint32_t raw_len = 0;
  std::string payload;
};

inline std::string encode_chunk(const Chunk& c) {
  std::string out;
  put_u32(out, c.index);
  uint8_t flags = (c.last ? 1 : 0) | (c.compressed ? 2 : 0) | (c.poisoned ? 4 : 0);
  out.push_back(char(flags));
  put_u32(out, c.raw_len);
  out += c.payload;
  return out;
}

inline Chunk decode_chunk(std::string_view wire) {
  ByteReader r(wire);
  Chunk c;
  c.index = r.u32();
  std::string_view flags_and_rest = r.rest();
  if (flags_and_rest.empty())
    throw ProtocolError("chunk too short");
  uint8_t flags = uint8_t(flags_and_rest[0]);
  c.last = flags & 1;
  c.compressed = flags & 2;
  c.poisoned = flags & 4;
  ByteReader r2(flags_and_rest.substr(1));
  c.raw_len = r2.u32();
  c.payload.assign(r2.rest());
  if (!c.compressed && c.payload.size() != c.raw_len)
    throw ProtocolError("chunk payload length disagrees with raw_len");
  return c;
}

/// Deflate one chunk's worth of data.  Returns false (and leaves `out`
/// unspecified) when compression would not shrink it, so the caller stores
/// the raw bytes instead.
inline bool deflate_chunk(std::string_view raw, std::string& out) {
  uLongf bound = ::compressBound(uLong(raw.size()));
  out.resize(bound);
  int rc = ::compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                       reinterpret_cast<const Bytef*>(raw.data()),
                       uLong(raw.size()), Z_BEST_SPEED);
  if (rc != Z_OK) return false;
  if (bound >= raw.size()) return false;
  out.resize(bound);
  return true;
}

inline std::string inflate_chunk(std::string_view compressed, uint32_t raw_len) {
  std::string out(raw_len, '\0');
  uLongf len = raw_len;
  int rc = ::uncompress(reinterpret_cast<Bytef*>(out.data()), &len,
                        reinterpret_cast<const Bytef*>(compressed.data()),
                        uLong(compressed.size()));
  if (rc != Z_OK || len != raw_len)
    throw ProtocolError("corrupt compressed chunk");
  return out;
}

/// Build a chunk from raw data, compressing when requested and profitable.
inline Chunk make_chunk(uint32_t index, bool last, std::string_view raw,
                        bool want_compress) {
  Chunk c;
  c.index = index;
  c.last = last;
  c.raw_len = uint32_t(raw.size());
  std::string packed;
  if (want_compress && !raw.empty() && deflate_chunk(raw, packed)) {
    c.compressed = true;
    c.payload = std::move(packed);
  } else {
    c.payload.assign(raw.data(), raw.size());
  }
  return c;
}

/// Recover the raw bytes carried by a chunk.
inline std::string chunk_data(const Chunk& c) {
  if (c.compressed) return inflate_chunk(c.payload, c.raw_len);
  return c.payload;
}

}  // namespace pt
