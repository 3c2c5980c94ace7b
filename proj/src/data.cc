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
#include "vflhssl/data.h"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_set>

#include "vflhssl/checkpoint.h"
#include "vflhssl/errors.h"

namespace vflhssl {

Matrix PartyData::Gather(std::span<const SampleId> batch) const {
  Matrix out(batch.size(), features.cols);
  for (size_t i = 0; i < batch.size(); ++i) {
    auto it = row_of.find(batch[i]);
    if (it == row_of.end()) {
      throw DataError("sample id " + std::to_string(batch[i]) + " not held by party");
    }
    auto src = features.row(it->second);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void PartyData::RebuildIndex() {
  row_of.clear();
  for (size_t r = 0; r < ids.size(); ++r) {
    if (!row_of.emplace(ids[r], r).second) {
      throw DataError("duplicate sample id " + std::to_string(ids[r]));
    }
  }
}

namespace {

std::vector<SampleId> Without(const std::vector<SampleId>& ids,
                              const std::unordered_set<SampleId>& drop) {
  std::vector<SampleId> out;
  for (SampleId id : ids)
    if (!drop.count(id)) out.push_back(id);
  return out;
}

}  // namespace

std::vector<SampleId> VerticalDataset::LocalTrainIds(size_t party) const {
  const std::unordered_set<SampleId> test(test_ids.begin(), test_ids.end());
  return Without(parties.at(party).ids, test);
}

std::vector<SampleId> VerticalDataset::AlignedTrainIds() const {
  const std::unordered_set<SampleId> test(test_ids.begin(), test_ids.end());
  return Without(aligned_ids, test);
}

std::vector<SampleId> VerticalDataset::UnlabeledAlignedIds() const {
  std::unordered_set<SampleId> drop(test_ids.begin(), test_ids.end());
  drop.insert(labeled_ids.begin(), labeled_ids.end());
  std::vector<SampleId> out;
  for (SampleId id : aligned_ids)
    if (!drop.count(id) && labels.count(id)) out.push_back(id);
  return out;
}

std::vector<int64_t> VerticalDataset::LabelsOf(std::span<const SampleId> ids) const {
  std::vector<int64_t> out;
  out.reserve(ids.size());
  for (SampleId id : ids) {
    auto it = labels.find(id);
    if (it == labels.end()) {
      throw DataError("sample id " + std::to_string(id) + " has no label");
    }
    out.push_back(it->second);
  }
  return out;
}

uint64_t VerticalDataset::Fingerprint() const {
  uint64_t h = 1469598103934665603ULL;
  auto ids_hash = [&h](const std::vector<SampleId>& v) {
    const uint64_t n = v.size();
    h = Fnv1a64(&n, sizeof(n), h);
    h = Fnv1a64(v.data(), v.size() * sizeof(SampleId), h);
  };
  for (const auto& p : parties) {
    h = Fnv1a64(p.schema.vocab.data(), p.schema.vocab.size() * sizeof(size_t), h);
    h = Fnv1a64(p.features.data.data(), p.features.data.size() * sizeof(double), h);
    ids_hash(p.ids);
  }
  ids_hash(aligned_ids);
  for (const auto& u : unaligned_ids) ids_hash(u);
  ids_hash(labeled_ids);
  ids_hash(test_ids);
  for (const auto& [id, y] : labels) {
    h = Fnv1a64(&id, sizeof(id), h);
    h = Fnv1a64(&y, sizeof(y), h);
  }
  h = Fnv1a64(&num_classes, sizeof(num_classes), h);
  return h;
}

void VerticalDataset::Validate() const {
  if (parties.empty()) throw DataError("dataset has no parties");
  if (unaligned_ids.size() != parties.size()) {
    throw DataError("unaligned id lists do not match party count");
  }
  const std::unordered_set<SampleId> aligned(aligned_ids.begin(), aligned_ids.end());
  for (size_t i = 0; i < parties.size(); ++i) {
    for (SampleId id : aligned_ids) {
      if (!parties[i].has(id)) {
        throw DataError("aligned id " + std::to_string(id) + " missing at party " +
                        std::to_string(i));
      }
    }
    for (SampleId id : unaligned_ids[i]) {
      if (aligned.count(id)) {
        throw DataError("id " + std::to_string(id) + " is both aligned and unaligned");
      }
    }
    if (parties[i].ids.size() != aligned_ids.size() + unaligned_ids[i].size()) {
      throw DataError("party " + std::to_string(i) + " row count inconsistent with partition");
    }
  }
  std::unordered_set<SampleId> test(test_ids.begin(), test_ids.end());
  for (SampleId id : labeled_ids) {
    if (!aligned.count(id)) throw DataError("labeled id " + std::to_string(id) + " not aligned");
    if (test.count(id)) throw DataError("labeled id " + std::to_string(id) + " is also a test id");
    if (!labels.count(id)) throw DataError("labeled id " + std::to_string(id) + " has no label");
  }
  for (SampleId id : test_ids) {
    if (!aligned.count(id)) throw DataError("test id " + std::to_string(id) + " not aligned");
    if (!labels.count(id)) throw DataError("test id " + std::to_string(id) + " has no label");
  }
  for (const auto& [id, y] : labels) {
    if (y < 0 || static_cast<size_t>(y) >= num_classes) {
      throw DataError("label " + std::to_string(y) + " outside class range");
    }
  }
}

// ---- Synthetic generation ---------------------------------------------------

void SyntheticSpec::Validate() const {
  if (parties == 0) throw ConfigError("synthetic spec needs at least one party");
  if (feature_dims.size() != parties || noise.size() != parties) {
    throw ConfigError("feature_dims and noise must list one entry per party");
  }
  if (latent_dim == 0 || classes < 2) throw ConfigError("latent_dim > 0 and classes >= 2 required");
  for (size_t d : feature_dims) {
    if (d == 0) throw ConfigError("feature dims must be positive");
    if (categorical_per_party > d) throw ConfigError("more categorical columns than features");
  }
  if (aligned == 0) throw ConfigError("aligned count must be positive");
  if (labeled == 0 || test == 0) throw ConfigError("labeled and test counts must be positive");
  if (labeled + test > aligned) {
    throw ConfigError("labeled + test (" + std::to_string(labeled + test) +
                      ") exceeds aligned count " + std::to_string(aligned));
  }
  if (categorical_per_party > 0 && categorical_vocab < 2) {
    throw ConfigError("categorical_vocab must be at least 2");
  }
}

namespace {

Matrix GaussianMatrix(size_t rows, size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.data) v = dist(rng);
  return m;
}

// Standardizes continuous columns with statistics of the non-test rows.
void Standardize(PartyData& p, const std::unordered_set<SampleId>& test) {
  const size_t m = p.features.cols;
  p.column_std.assign(m, 0.0);
  for (size_t c = 0; c < m; ++c) {
    if (p.schema.is_categorical(c)) continue;
    double sum = 0.0, sq = 0.0;
    size_t n = 0;
    for (size_t r = 0; r < p.features.rows; ++r) {
      if (test.count(p.ids[r])) continue;
      sum += p.features(r, c);
      ++n;
    }
    if (n == 0) continue;
    const double mean = sum / static_cast<double>(n);
    for (size_t r = 0; r < p.features.rows; ++r) {
      if (test.count(p.ids[r])) continue;
      const double d = p.features(r, c) - mean;
      sq += d * d;
    }
    double sd = std::sqrt(sq / static_cast<double>(n));
    if (!(sd > 0.0)) sd = 1.0;
    for (size_t r = 0; r < p.features.rows; ++r)
      p.features(r, c) = (p.features(r, c) - mean) / sd;
    p.column_std[c] = 1.0;
  }
}

// Training-row standard deviation of each continuous column.
void ComputeColumnStd(PartyData& p, const std::unordered_set<SampleId>& test) {
  const size_t m = p.features.cols;
  p.column_std.assign(m, 0.0);
  for (size_t c = 0; c < m; ++c) {
    if (p.schema.is_categorical(c)) continue;
    double sum = 0.0, sq = 0.0;
    size_t n = 0;
    for (size_t r = 0; r < p.features.rows; ++r) {
      if (test.count(p.ids[r])) continue;
      sum += p.features(r, c);
      sq += p.features(r, c) * p.features(r, c);
      ++n;
    }
    if (n == 0) continue;
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(sq / static_cast<double>(n) - mean * mean, 0.0);
    p.column_std[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
}

}  // namespace

VerticalDataset GenerateSynthetic(const SyntheticSpec& spec) {
  spec.Validate();
  Rng rng = MakeRng(spec.seed, {StreamTag("synthetic")});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<size_t> pick_class(0, spec.classes - 1);

  const Matrix means = GaussianMatrix(spec.classes, spec.latent_dim, spec.class_separation, rng);
  std::vector<Matrix> proj, nuisance_proj, private_proj, private_means;
  for (size_t i = 0; i < spec.parties; ++i) {
    proj.push_back(GaussianMatrix(spec.feature_dims[i], spec.latent_dim,
                                  1.0 / std::sqrt(static_cast<double>(spec.latent_dim)), rng));
    if (spec.nuisance_dim > 0) {
      nuisance_proj.push_back(GaussianMatrix(
          spec.feature_dims[i], spec.nuisance_dim,
          1.0 / std::sqrt(static_cast<double>(spec.nuisance_dim)), rng));
    }
  }
  // Drawn after the shared factors so datasets without private factors keep
  // their values.
  for (size_t i = 0; i < spec.parties && spec.private_dim > 0; ++i) {
    private_means.push_back(GaussianMatrix(spec.classes, spec.private_dim, spec.private_separation, rng));
    private_proj.push_back(GaussianMatrix(spec.feature_dims[i], spec.private_dim,
                                          1.0 / std::sqrt(static_cast<double>(spec.private_dim)), rng));
  }

  auto draw_latent = [&](size_t cls) {
    std::vector<double> u(spec.latent_dim);
    for (size_t d = 0; d < spec.latent_dim; ++d) u[d] = means(cls, d) + normal(rng);
    return u;
  };
  auto observe = [&](size_t party, size_t cls, const std::vector<double>& u, std::span<double> out) {
    const Matrix& w = proj[party];
    std::vector<double> s(spec.nuisance_dim);
    for (double& v : s) v = normal(rng);
    std::vector<double> q(spec.private_dim);
    for (size_t d = 0; d < spec.private_dim; ++d) q[d] = private_means[party](cls, d) + normal(rng);
    for (size_t f = 0; f < out.size(); ++f) {
      double acc = 0.0;
      for (size_t d = 0; d < spec.latent_dim; ++d) acc += w(f, d) * u[d];
      if (spec.nuisance_dim > 0) {
        double nz = 0.0;
        for (size_t d = 0; d < spec.nuisance_dim; ++d) nz += nuisance_proj[party](f, d) * s[d];
        acc += spec.nuisance_scale * nz;
      }
      for (size_t d = 0; d < spec.private_dim; ++d) acc += private_proj[party](f, d) * q[d];
      out[f] = acc + spec.noise[party] * normal(rng);
    }
  };

  VerticalDataset data;
  data.num_classes = spec.classes;
  data.parties.resize(spec.parties);
  data.unaligned_ids.resize(spec.parties);
  const size_t per_party = spec.aligned + spec.unaligned;
  for (size_t i = 0; i < spec.parties; ++i) {
    auto& p = data.parties[i];
    p.features = Matrix(per_party, spec.feature_dims[i]);
    p.ids.resize(per_party);
    p.schema.vocab.assign(spec.feature_dims[i], 0);
    for (size_t c = 0; c < spec.feature_dims[i]; ++c)
      p.column_names.push_back("p" + std::to_string(i) + "_f" + std::to_string(c));
  }

  for (size_t a = 0; a < spec.aligned; ++a) {
    const size_t cls = pick_class(rng);
    const auto u = draw_latent(cls);
    const auto id = static_cast<SampleId>(a);
    data.aligned_ids.push_back(id);
    data.labels[id] = static_cast<int64_t>(cls);
    for (size_t i = 0; i < spec.parties; ++i) {
      data.parties[i].ids[a] = id;
      observe(i, cls, u, data.parties[i].features.row(a));
    }
  }
  for (size_t i = 0; i < spec.parties; ++i) {
    for (size_t k = 0; k < spec.unaligned; ++k) {
      const size_t cls = pick_class(rng);
      const auto u = draw_latent(cls);
      const auto id = static_cast<SampleId>(spec.aligned + i * spec.unaligned + k);
      const size_t row = spec.aligned + k;
      data.parties[i].ids[row] = id;
      data.unaligned_ids[i].push_back(id);
      observe(i, cls, u, data.parties[i].features.row(row));
    }
  }

  std::vector<SampleId> shuffled = data.aligned_ids;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  data.test_ids.assign(shuffled.begin(), shuffled.begin() + spec.test);
  data.labeled_ids.assign(shuffled.begin() + spec.test,
                          shuffled.begin() + spec.test + spec.labeled);
  const std::unordered_set<SampleId> test(data.test_ids.begin(), data.test_ids.end());

  for (auto& p : data.parties) {
    // The trailing columns become categorical by quantizing their raw values.
    const size_t m = p.features.cols;
    for (size_t c = m - spec.categorical_per_party; c < m; ++c) {
      double sq = 0.0;
      for (size_t r = 0; r < p.features.rows; ++r) sq += p.features(r, c) * p.features(r, c);
      const double sd = std::max(std::sqrt(sq / static_cast<double>(p.features.rows)), 1e-12);
      const double vocab = static_cast<double>(spec.categorical_vocab);
      for (size_t r = 0; r < p.features.rows; ++r) {
        const double t = (p.features(r, c) / sd + 2.0) / 4.0 * vocab;
        p.features(r, c) = std::clamp(std::floor(t), 0.0, vocab - 1.0);
      }
      p.schema.vocab[c] = spec.categorical_vocab;
    }
    p.RebuildIndex();
    Standardize(p, test);
  }
  data.Validate();
  return data;
}

// ---- CSV --------------------------------------------------------------------

namespace {

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable ReadCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV " + path + " is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  t.header = SplitCsvLine(line);
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = SplitCsvLine(line);
    if (cells.size() != t.header.size()) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(t.header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

bool ParseDouble(const std::string& s, double& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return errno == 0 && end == s.c_str() + s.size() && std::isfinite(out);
}

bool ParseInt(const std::string& s, int64_t& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size()) return false;
  out = v;
  return true;
}

size_t ColumnIndex(const CsvTable& t, const std::string& name, const std::string& path) {
  auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) throw DataError("CSV " + path + " lacks column '" + name + "'");
  return static_cast<size_t>(it - t.header.begin());
}

}  // namespace

VerticalDataset LoadCsv(const CsvSpec& spec) {
  if (spec.parties.empty()) throw ConfigError("CSV spec lists no party files");
  std::vector<CsvTable> tables;
  for (const auto& p : spec.parties) tables.push_back(ReadCsv(p.path));

  VerticalDataset data;
  data.parties.resize(tables.size());
  data.unaligned_ids.resize(tables.size());
  std::vector<std::vector<size_t>> feature_cols(tables.size());

  for (size_t i = 0; i < tables.size(); ++i) {
    const auto& t = tables[i];
    const auto& path = spec.parties[i].path;
    const size_t id_col = ColumnIndex(t, spec.id_column, path);
    std::optional<size_t> label_col;
    if (i == 0 && !spec.label_column.empty()) label_col = ColumnIndex(t, spec.label_column, path);
    for (const auto& name : spec.parties[i].categorical_columns) ColumnIndex(t, name, path);
    auto& p = data.parties[i];
    for (size_t c = 0; c < t.header.size(); ++c) {
      if (c == id_col || (label_col && c == *label_col)) continue;
      feature_cols[i].push_back(c);
      p.column_names.push_back(t.header[c]);
    }
    for (size_t r = 0; r < t.rows.size(); ++r) {
      int64_t id = 0;
      if (!ParseInt(t.rows[r][id_col], id)) {
        throw DataError(path + ": row " + std::to_string(r + 2) + ": non-integer id '" +
                        t.rows[r][id_col] + "'");
      }
      p.ids.push_back(id);
      if (label_col && !t.rows[r][*label_col].empty()) {
        int64_t y = 0;
        if (!ParseInt(t.rows[r][*label_col], y) || y < 0) {
          throw DataError(path + ": row " + std::to_string(r + 2) + ": bad label '" +
                          t.rows[r][*label_col] + "'");
        }
        data.labels[id] = y;
      }
    }
    p.RebuildIndex();
  }

  // Alignment by id.
  std::set<SampleId> common(data.parties[0].ids.begin(), data.parties[0].ids.end());
  for (size_t i = 1; i < data.parties.size(); ++i) {
    std::set<SampleId> next;
    for (SampleId id : data.parties[i].ids)
      if (common.count(id)) next.insert(id);
    common = std::move(next);
  }
  data.aligned_ids.assign(common.begin(), common.end());
  for (size_t i = 0; i < data.parties.size(); ++i)
    for (SampleId id : data.parties[i].ids)
      if (!common.count(id)) data.unaligned_ids[i].push_back(id);
  // Labels only matter for aligned ids.
  for (auto it = data.labels.begin(); it != data.labels.end();) {
    it = common.count(it->first) ? std::next(it) : data.labels.erase(it);
  }
  int64_t max_label = -1;
  for (const auto& [id, y] : data.labels) max_label = std::max(max_label, y);
  data.num_classes = static_cast<size_t>(std::max<int64_t>(max_label + 1, 2));

  if (spec.explicit_splits) {
    data.test_ids = spec.test_ids;
    data.labeled_ids = spec.labeled_ids;
  } else {
    std::vector<SampleId> pool;
    for (SampleId id : data.aligned_ids)
      if (data.labels.count(id)) pool.push_back(id);
    if (spec.test_count + spec.labeled_count > pool.size()) {
      throw DataError("requested " + std::to_string(spec.test_count + spec.labeled_count) +
                      " labeled/test ids but only " + std::to_string(pool.size()) +
                      " aligned labeled rows exist");
    }
    Rng rng = MakeRng(spec.seed, {StreamTag("csv-splits")});
    std::shuffle(pool.begin(), pool.end(), rng);
    data.test_ids.assign(pool.begin(), pool.begin() + spec.test_count);
    data.labeled_ids.assign(pool.begin() + spec.test_count,
                            pool.begin() + spec.test_count + spec.labeled_count);
  }
  const std::unordered_set<SampleId> test(data.test_ids.begin(), data.test_ids.end());

  for (size_t i = 0; i < tables.size(); ++i) {
    const auto& t = tables[i];
    const auto& path = spec.parties[i].path;
    auto& p = data.parties[i];
    const std::set<std::string> cat_names(spec.parties[i].categorical_columns.begin(),
                                          spec.parties[i].categorical_columns.end());
    const size_t m = feature_cols[i].size();
    p.features = Matrix(t.rows.size(), m);
    p.schema.vocab.assign(m, 0);
    for (size_t j = 0; j < m; ++j) {
      const size_t c = feature_cols[i][j];
      if (!cat_names.count(t.header[c])) {
        for (size_t r = 0; r < t.rows.size(); ++r) {
          double v = 0.0;
          if (!ParseDouble(t.rows[r][c], v)) {
            throw DataError(path + ": row " + std::to_string(r + 2) + ", column '" +
                            t.header[c] + "': non-numeric value '" + t.rows[r][c] + "'");
          }
          p.features(r, j) = v;
        }
        continue;
      }
      if (auto declared = spec.parties[i].categorical_levels.find(t.header[c]);
          declared != spec.parties[i].categorical_levels.end()) {
        const size_t n = declared->second;
        if (n == 0) throw ConfigError("column '" + t.header[c] + "' declares zero levels");
        p.schema.vocab[j] = n;
        for (size_t r = 0; r < t.rows.size(); ++r) {
          int64_t v = 0;
          if (!ParseInt(t.rows[r][c], v) || v < 0 || static_cast<size_t>(v) >= n) {
            ++data.unknown_levels;
            v = static_cast<int64_t>(n);
          }
          p.features(r, j) = static_cast<double>(v);
        }
        continue;
      }
      // Levels come from the training rows; numeric levels sort numerically.
      std::vector<std::string> levels;
      {
        std::set<std::string> seen;
        for (size_t r = 0; r < t.rows.size(); ++r)
          if (!test.count(p.ids[r])) seen.insert(t.rows[r][c]);
        levels.assign(seen.begin(), seen.end());
      }
      const bool numeric = std::all_of(levels.begin(), levels.end(), [](const std::string& s) {
        int64_t v;
        return ParseInt(s, v);
      });
      if (numeric) {
        std::sort(levels.begin(), levels.end(), [](const std::string& a, const std::string& b) {
          return std::strtoll(a.c_str(), nullptr, 10) < std::strtoll(b.c_str(), nullptr, 10);
        });
      }
      if (levels.empty()) levels.push_back("");
      std::map<std::string, size_t> code;
      for (size_t k = 0; k < levels.size(); ++k) code[levels[k]] = k;
      p.schema.vocab[j] = levels.size();
      for (size_t r = 0; r < t.rows.size(); ++r) {
        auto it = code.find(t.rows[r][c]);
        if (it == code.end()) {
          ++data.unknown_levels;
          p.features(r, j) = static_cast<double>(levels.size());
        } else {
          p.features(r, j) = static_cast<double>(it->second);
        }
      }
    }
    if (spec.standardize) {
      Standardize(p, test);
    } else {
      ComputeColumnStd(p, test);
    }
  }
  data.Validate();
  return data;
}

CsvSpec ExportCsv(const VerticalDataset& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  CsvSpec spec;
  spec.explicit_splits = true;
  spec.standardize = false;
  spec.test_ids = data.test_ids;
  spec.labeled_ids = data.labeled_ids;
  for (size_t i = 0; i < data.parties.size(); ++i) {
    const auto& p = data.parties[i];
    CsvPartySpec ps;
    ps.path = (std::filesystem::path(dir) / ("party" + std::to_string(i) + ".csv")).string();
    std::ostringstream out;
    out << spec.id_column;
    if (i == 0) out << "," << spec.label_column;
    for (size_t c = 0; c < p.column_names.size(); ++c) {
      out << "," << p.column_names[c];
      if (p.schema.is_categorical(c)) {
        ps.categorical_columns.push_back(p.column_names[c]);
        ps.categorical_levels[p.column_names[c]] = p.schema.vocab[c];
      }
    }
    out << "\n";
    char buf[64];
    for (size_t r = 0; r < p.features.rows; ++r) {
      out << p.ids[r];
      if (i == 0) {
        out << ",";
        auto it = data.labels.find(p.ids[r]);
        if (it != data.labels.end()) out << it->second;
      }
      for (size_t c = 0; c < p.features.cols; ++c) {
        if (p.schema.is_categorical(c)) {
          out << "," << static_cast<int64_t>(std::llround(p.features(r, c)));
        } else {
          std::snprintf(buf, sizeof(buf), "%.17g", p.features(r, c));
          out << "," << buf;
        }
      }
      out << "\n";
    }
    WriteFileAtomic(ps.path, out.str());
    spec.parties.push_back(std::move(ps));
  }
  return spec;
}

// ---- Augmentation & batching ------------------------------------------------

size_t CorruptedPositions(double fraction, size_t columns) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw ConfigError("corruption fraction must lie in [0, 1]");
  }
  // The small slack absorbs representation error such as 0.3 * 10.
  const double raw = std::ceil(fraction * static_cast<double>(columns) - 1e-9);
  return std::min(columns, static_cast<size_t>(std::max(raw, 0.0)));
}

Matrix Augment(const Matrix& batch, const FeatureSchema& schema,
               std::span<const double> column_std, const AugmentationPolicy& policy,
               Rng& rng) {
  if (batch.rows == 0) throw DataError("cannot augment an empty batch");
  if (batch.cols != schema.num_columns()) {
    throw DimensionError("batch width " + std::to_string(batch.cols) +
                         " does not match schema width " +
                         std::to_string(schema.num_columns()));
  }
  const size_t m = batch.cols;
  const size_t k = CorruptedPositions(policy.corruption_fraction, m);
  Matrix view = batch;
  if (k == 0) return view;
  std::vector<size_t> cols(m);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (size_t r = 0; r < batch.rows; ++r) {
    std::iota(cols.begin(), cols.end(), 0);
    // Partial Fisher-Yates: the first k entries are a uniform k-subset.
    for (size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<size_t> pick(i, m - 1);
      std::swap(cols[i], cols[pick(rng)]);
    }
    for (size_t i = 0; i < k; ++i) {
      const size_t c = cols[i];
      if (schema.is_categorical(c)) {
        view(r, c) = static_cast<double>(schema.vocab[c]);
      } else if (batch.rows > 1) {
        std::uniform_int_distribution<size_t> other(0, batch.rows - 2);
        size_t j = other(rng);
        if (j >= r) ++j;
        view(r, c) = batch(j, c);
      } else {
        const double sd = c < column_std.size() ? column_std[c] : 1.0;
        view(r, c) = batch(r, c) + sd * jitter(rng);
      }
    }
  }
  return view;
}

std::vector<std::vector<SampleId>> MakeBatches(std::span<const SampleId> ids,
                                               size_t batch_size, bool shuffle, Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<SampleId> order(ids.begin(), ids.end());
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<SampleId>> out;
  for (size_t start = 0; start < order.size(); start += batch_size) {
    const size_t end = std::min(order.size(), start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

}  // namespace vflhssl
