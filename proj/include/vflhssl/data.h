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
#ifndef VFLHSSL_DATA_H_
#define VFLHSSL_DATA_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "vflhssl/nn.h"
#include "vflhssl/rng.h"
#include "vflhssl/tensor.h"

namespace vflhssl {

using SampleId = int64_t;

// One party's feature block. Rows are addressed by sample id.
struct PartyData {
  FeatureSchema schema;
  std::vector<std::string> column_names;
  Matrix features;
  std::vector<SampleId> ids;
  std::unordered_map<SampleId, size_t> row_of;
  // Training-split standard deviation of each column (continuous columns
  // only; used by the degenerate-batch corruption fallback).
  std::vector<double> column_std;

  bool has(SampleId id) const { return row_of.count(id) > 0; }
  // Rows for `ids` in order; missing ids raise DataError.
  Matrix Gather(std::span<const SampleId> batch) const;
  void RebuildIndex();
};

struct VerticalDataset {
  std::vector<PartyData> parties;
  // Ids present at every party, ascending.
  std::vector<SampleId> aligned_ids;
  // unaligned_ids[i]: ids present only at party i.
  std::vector<std::vector<SampleId>> unaligned_ids;
  // Labeled pool for fine-tuning (subset of aligned, disjoint from test).
  std::vector<SampleId> labeled_ids;
  // Held-out aligned ids with labels; never used for training.
  std::vector<SampleId> test_ids;
  // Ground-truth label of every aligned id for which one is known. Only the
  // active party reads labeled_ids entries; the rest serve evaluation.
  std::map<SampleId, int64_t> labels;
  size_t num_classes = 0;
  // Categorical cells mapped to the corruption code during loading.
  size_t unknown_levels = 0;

  size_t num_parties() const { return parties.size(); }
  // All ids held by `party` except test ids.
  std::vector<SampleId> LocalTrainIds(size_t party) const;
  // Aligned ids except test ids.
  std::vector<SampleId> AlignedTrainIds() const;
  // Aligned, labeled by ground truth, but neither in the labeled pool nor test.
  std::vector<SampleId> UnlabeledAlignedIds() const;
  std::vector<int64_t> LabelsOf(std::span<const SampleId> ids) const;
  uint64_t Fingerprint() const;
  // Checks the partition invariants; raises DataError.
  void Validate() const;
};

struct SyntheticSpec {
  size_t latent_dim = 16;
  size_t classes = 10;
  size_t parties = 2;
  std::vector<size_t> feature_dims = {64, 64};
  std::vector<double> noise = {1.0, 1.0};
  // Class-mean spread in latent space.
  double class_separation = 1.0;
  // Width of each party's private nuisance factor (independent of class).
  size_t nuisance_dim = 0;
  double nuisance_scale = 0.0;
  // Width of each party's private class-dependent factor, visible only to
  // that party, and the spread of its class means.
  size_t private_dim = 0;
  double private_separation = 0.0;
  size_t aligned = 1600;
  // Per party.
  size_t unaligned = 2400;
  size_t labeled = 1000;
  size_t test = 500;
  size_t categorical_per_party = 0;
  size_t categorical_vocab = 8;
  uint64_t seed = 0;

  void Validate() const;
};

VerticalDataset GenerateSynthetic(const SyntheticSpec& spec);

struct CsvPartySpec {
  std::string path;
  std::vector<std::string> categorical_columns;
  // Declared level counts of integer-coded categorical columns. Codes outside
  // [0, n) map to the corruption code; undeclared columns take their levels
  // from the training rows.
  std::map<std::string, size_t> categorical_levels;
};

struct CsvSpec {
  std::vector<CsvPartySpec> parties;
  std::string id_column = "id";
  // Read from party 0's file only.
  std::string label_column = "label";
  // Explicit split assignment; when absent, test/labeled ids are drawn from
  // the labeled aligned ids using `test_count`, `labeled_count` and `seed`.
  std::vector<SampleId> test_ids;
  std::vector<SampleId> labeled_ids;
  bool explicit_splits = false;
  size_t test_count = 0;
  size_t labeled_count = 0;
  uint64_t seed = 0;
  // Z-score continuous columns with training-row statistics.
  bool standardize = true;
};

VerticalDataset LoadCsv(const CsvSpec& spec);

// Writes one CSV per party into `dir` (party0.csv, ...) and returns a spec
// that loads them back with identical splits.
CsvSpec ExportCsv(const VerticalDataset& data, const std::string& dir);

struct AugmentationPolicy {
  double corruption_fraction = 0.3;
};

// Corrupts exactly ceil(q*m) positions per row, chosen uniformly without
// replacement. Continuous positions take the same column's value from another
// uniformly chosen row of the batch; categorical positions take the
// corruption code. A single-row batch falls back to Gaussian jitter with the
// column's training std. The input is not modified.
Matrix Augment(const Matrix& batch, const FeatureSchema& schema,
               std::span<const double> column_std, const AugmentationPolicy& policy,
               Rng& rng);

size_t CorruptedPositions(double fraction, size_t columns);

// Splits ids into consecutive batches; the last partial batch is kept.
std::vector<std::vector<SampleId>> MakeBatches(std::span<const SampleId> ids,
                                               size_t batch_size, bool shuffle, Rng& rng);

}  // namespace vflhssl

#endif  // VFLHSSL_DATA_H_
