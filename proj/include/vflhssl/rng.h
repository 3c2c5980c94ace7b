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
#ifndef VFLHSSL_RNG_H_
#define VFLHSSL_RNG_H_

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace vflhssl {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr uint64_t Mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a tuple of
// coordinates such as (party, epoch, stream tag).
inline uint64_t DeriveSeed(uint64_t base, std::initializer_list<uint64_t> parts) {
  uint64_t s = Mix64(base);
  for (uint64_t p : parts) s = Mix64(s ^ Mix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

constexpr uint64_t StreamTag(std::string_view name) {
  uint64_t h = 1469598103934665603ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

// FNV-1a over raw bytes; used for dataset and parameter fingerprints.
inline uint64_t Fnv1a64(const void* data, size_t len, uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline Rng MakeRng(uint64_t base, std::initializer_list<uint64_t> parts) {
  return Rng(DeriveSeed(base, parts));
}

}  // namespace vflhssl

#endif  // VFLHSSL_RNG_H_
