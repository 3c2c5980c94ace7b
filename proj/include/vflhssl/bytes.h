/*
 * Copyright 2026 The vflhssl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef VFLHSSL_BYTES_H_
#define VFLHSSL_BYTES_H_

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "vflhssl/errors.h"

namespace vflhssl {

// Little-endian append-only encoder.
class ByteWriter {
 public:
  void Raw(std::string_view bytes) { out_.append(bytes); }
  void U8(uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void U16(uint16_t v) { Le(v, 2); }
  void U32(uint32_t v) { Le(v, 4); }
  void U64(uint64_t v) { Le(v, 8); }
  void F64(double v) { Le(std::bit_cast<uint64_t>(v), 8); }

  const std::string& str() const { return out_; }
  std::string Take() { return std::move(out_); }

 private:
  void Le(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

// Little-endian decoder; reading past the end raises TruncatedError.
class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}

  std::string_view Raw(size_t n) {
    Need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  uint8_t U8() { return static_cast<uint8_t>(Le(1)); }
  uint16_t U16() { return static_cast<uint16_t>(Le(2)); }
  uint32_t U32() { return static_cast<uint32_t>(Le(4)); }
  uint64_t U64() { return Le(8); }
  double F64() { return std::bit_cast<double>(Le(8)); }

  size_t remaining() const { return in_.size() - pos_; }
  size_t position() const { return pos_; }

 private:
  void Need(size_t n) const {
    if (in_.size() - pos_ < n) {
      throw TruncatedError("unexpected end of data: need " + std::to_string(n) +
                           " bytes at offset " + std::to_string(pos_) + ", have " +
                           std::to_string(in_.size() - pos_));
    }
  }
  uint64_t Le(int n) {
    Need(static_cast<size_t>(n));
    uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += static_cast<size_t>(n);
    return v;
  }

  std::string_view in_;
  size_t pos_ = 0;
};

}  // namespace vflhssl

#endif  // VFLHSSL_BYTES_H_
