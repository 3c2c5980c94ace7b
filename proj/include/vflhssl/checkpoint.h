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
#ifndef VFLHSSL_CHECKPOINT_H_
#define VFLHSSL_CHECKPOINT_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vflhssl/nn.h"

namespace vflhssl {

inline constexpr char kCheckpointMagic[4] = {'V', 'F', 'L', 'H'};
inline constexpr uint16_t kCheckpointVersion = 1;

struct ParameterBlob {
  std::string name;
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> values;

  bool operator==(const ParameterBlob&) const = default;
};

std::vector<ParameterBlob> ToBlobs(const NamedParameters& params);
// Overwrites `params` from `blobs`; names and shapes must match in order.
void ApplyBlobs(const std::vector<ParameterBlob>& blobs, const NamedParameters& params);

// Named-parameter blob: magic, u16 version, u32 header length, JSON header
// listing {name, rows, cols}, then little-endian f64 values in header order.
std::string EncodeParameterBlob(const std::vector<ParameterBlob>& blobs);
std::vector<ParameterBlob> DecodeParameterBlob(std::string_view bytes);

struct Checkpoint {
  uint16_t version = kCheckpointVersion;
  std::vector<std::vector<ParameterBlob>> parties;
  std::string config_fingerprint;
  std::vector<uint64_t> seeds;
  // Free-form run metadata (e.g. completed iterations).
  nlohmann::json meta = nlohmann::json::object();

  bool operator==(const Checkpoint&) const = default;
};

std::string EncodeCheckpoint(const Checkpoint& ckpt);
Checkpoint DecodeCheckpoint(std::string_view bytes);

// Writes atomically through a temporary file and rename.
void SaveCheckpoint(const std::string& path, const Checkpoint& ckpt);
// Raises FingerprintError when `expected_fingerprint` is given and differs.
Checkpoint LoadCheckpoint(const std::string& path,
                          std::optional<std::string> expected_fingerprint = std::nullopt);

uint64_t CheckpointFingerprint(const Checkpoint& ckpt);

// Writes `contents` to `path` through a temporary file and rename.
void WriteFileAtomic(const std::string& path, std::string_view contents);
std::string ReadFile(const std::string& path);

}  // namespace vflhssl

#endif  // VFLHSSL_CHECKPOINT_H_
