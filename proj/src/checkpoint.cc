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
#include "vflhssl/checkpoint.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "vflhssl/bytes.h"
#include "vflhssl/errors.h"

namespace vflhssl {

using nlohmann::json;

std::vector<ParameterBlob> ToBlobs(const NamedParameters& params) {
  std::vector<ParameterBlob> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    out.push_back({p.name, p.tensor.rows(), p.tensor.cols(), p.tensor.values()});
  }
  return out;
}

void ApplyBlobs(const std::vector<ParameterBlob>& blobs, const NamedParameters& params) {
  if (blobs.size() != params.size()) {
    throw DimensionError("blob count " + std::to_string(blobs.size()) +
                         " does not match parameter count " +
                         std::to_string(params.size()));
  }
  for (size_t i = 0; i < blobs.size(); ++i) {
    Tensor t = params[i].tensor;
    if (blobs[i].name != params[i].name || blobs[i].rows != t.rows() ||
        blobs[i].cols != t.cols()) {
      throw DimensionError("blob " + blobs[i].name + ShapeString(blobs[i].rows, blobs[i].cols) +
                           " does not match parameter " + params[i].name +
                           ShapeString(t.rows(), t.cols()));
    }
    t.mutable_values() = blobs[i].values;
  }
}

namespace {

json ShapeList(const std::vector<ParameterBlob>& blobs) {
  json list = json::array();
  for (const auto& b : blobs) list.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  return list;
}

std::string Frame(const json& header, const std::vector<const std::vector<ParameterBlob>*>& groups) {
  ByteWriter w;
  w.Raw(std::string_view(kCheckpointMagic, 4));
  w.U16(kCheckpointVersion);
  const std::string text = header.dump();
  w.U32(static_cast<uint32_t>(text.size()));
  w.Raw(text);
  for (const auto* group : groups)
    for (const auto& b : *group)
      for (double v : b.values) w.F64(v);
  return w.Take();
}

json ReadHeader(ByteReader& r) {
  const auto magic = r.Raw(4);
  if (magic != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError("bad magic bytes: not a parameter file");
  }
  const uint16_t version = r.U16();
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported format version " + std::to_string(version) +
                       " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const uint32_t len = r.U32();
  const auto text = r.Raw(len);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
}

std::vector<ParameterBlob> ReadBlobs(ByteReader& r, const json& shapes) {
  std::vector<ParameterBlob> out;
  try {
    for (const auto& s : shapes) {
      ParameterBlob b;
      b.name = s.at("name").get<std::string>();
      b.rows = s.at("rows").get<size_t>();
      b.cols = s.at("cols").get<size_t>();
      out.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed shape list: ") + e.what());
  }
  for (auto& b : out) {
    b.values.resize(b.rows * b.cols);
    for (double& v : b.values) v = r.F64();
  }
  return out;
}

}  // namespace

std::string EncodeParameterBlob(const std::vector<ParameterBlob>& blobs) {
  json header = {{"format", "parameters"}, {"params", ShapeList(blobs)}};
  return Frame(header, {&blobs});
}

std::vector<ParameterBlob> DecodeParameterBlob(std::string_view bytes) {
  ByteReader r(bytes);
  const json header = ReadHeader(r);
  if (header.value("format", "") != "parameters") {
    throw FormatError("not a parameter blob");
  }
  auto blobs = ReadBlobs(r, header.at("params"));
  if (r.remaining() != 0) throw FormatError("trailing bytes after parameter blob");
  return blobs;
}

std::string EncodeCheckpoint(const Checkpoint& ckpt) {
  json parties = json::array();
  std::vector<const std::vector<ParameterBlob>*> groups;
  for (const auto& p : ckpt.parties) {
    parties.push_back(ShapeList(p));
    groups.push_back(&p);
  }
  json header = {{"format", "checkpoint"},
                 {"party_count", ckpt.parties.size()},
                 {"parties", parties},
                 {"config_fingerprint", ckpt.config_fingerprint},
                 {"seeds", ckpt.seeds},
                 {"meta", ckpt.meta}};
  return Frame(header, groups);
}

Checkpoint DecodeCheckpoint(std::string_view bytes) {
  ByteReader r(bytes);
  const json header = ReadHeader(r);
  if (header.value("format", "") != "checkpoint") throw FormatError("not a checkpoint");
  Checkpoint ckpt;
  try {
    ckpt.config_fingerprint = header.at("config_fingerprint").get<std::string>();
    ckpt.seeds = header.at("seeds").get<std::vector<uint64_t>>();
    ckpt.meta = header.at("meta");
    const size_t count = header.at("party_count").get<size_t>();
    if (header.at("parties").size() != count) throw FormatError("party_count mismatch");
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }
  for (const auto& shapes : header.at("parties")) ckpt.parties.push_back(ReadBlobs(r, shapes));
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
  return ckpt;
}

void WriteFileAtomic(const std::string& path, std::string_view contents) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, target);
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void SaveCheckpoint(const std::string& path, const Checkpoint& ckpt) {
  WriteFileAtomic(path, EncodeCheckpoint(ckpt));
}

Checkpoint LoadCheckpoint(const std::string& path,
                          std::optional<std::string> expected_fingerprint) {
  Checkpoint ckpt = DecodeCheckpoint(ReadFile(path));
  if (expected_fingerprint && *expected_fingerprint != ckpt.config_fingerprint) {
    throw FingerprintError("checkpoint " + path + " was produced by config " +
                           ckpt.config_fingerprint + ", expected " +
                           *expected_fingerprint);
  }
  return ckpt;
}

uint64_t CheckpointFingerprint(const Checkpoint& ckpt) {
  const std::string bytes = EncodeCheckpoint(ckpt);
  return Fnv1a64(bytes.data(), bytes.size());
}

}  // namespace vflhssl
