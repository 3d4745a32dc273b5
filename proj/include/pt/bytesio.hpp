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
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "pt/error.hpp"

namespace pt {

// Byte buffers are std::string throughout: cheap to move, plays well with
// string_view, and the transport does not care about signedness.

inline void put_u32(std::string& out, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  out.append(b, 4);
}

inline void put_u64(std::string& out, uint64_t v) {
  put_u32(out, uint32_t(v & 0xffffffffu));
  put_u32(out, uint32_t(v >> 32));
}

inline void put_i64(std::string& out, int64_t v) { put_u64(out, uint64_t(v)); }

inline void put_bytes(std::string& out, std::string_view s) {
  put_u32(out, uint32_t(s.size()));
  out.append(s.data(), s.size());
}

/// Cursor over an immutable byte buffer.  Throws ProtocolError on underrun.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  uint32_t u32() {
    need(4);
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(data_.data()) + pos_;
    pos_ += 4;
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
           uint32_t(p[3]) << 24;
  }

  uint64_t u64() {
    uint64_t lo = u32();
    uint64_t hi = u32();
    return lo | (hi << 32);
  }

  int64_t i64() { return int64_t(u64()); }

  std::string_view bytes() {
    uint32_t n = u32();
    need(n);
    std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string_view rest() {
    std::string_view s = data_.substr(pos_);
    pos_ = data_.size();
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(size_t n) const {
    if (pos_ + n > data_.size())
      throw ProtocolError("truncated message");
  }
  std::string_view data_;
  size_t pos_ = 0;
};

/// Content digest used for integrity checks: CRC-32 plus length.
struct Digest {
  uint32_t crc = 0;
  uint64_t length = 0;
  bool operator==(const Digest&) const = default;
};

inline Digest digest_of(std::string_view data) {
  Digest d;
  d.crc = uint32_t(::crc32(0L, reinterpret_cast<const Bytef*>(data.data()),
                           uInt(data.size())));
  d.length = data.size();
  return d;
}

}  // namespace pt
