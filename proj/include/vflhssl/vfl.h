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
#ifndef VFLHSSL_VFL_H_
#define VFLHSSL_VFL_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "vflhssl/data.h"
#include "vflhssl/nn.h"
#include "vflhssl/tensor.h"
#include "vflhssl/transport.h"

namespace vflhssl {

inline constexpr size_t kActiveParty = 0;

enum class AggregatorKind { kConcat, kMean, kMax };
std::string ToString(AggregatorKind k);
AggregatorKind ParseAggregatorKind(const std::string& name);

// Combines per-party representation blocks, ordered by party id.
class Aggregator {
 public:
  explicit Aggregator(AggregatorKind kind = AggregatorKind::kConcat) : kind_(kind) {}
  Tensor Combine(const std::vector<Tensor>& parts) const;
  size_t OutputDim(const std::vector<size_t>& dims) const;
  AggregatorKind kind() const { return kind_; }

 private:
  AggregatorKind kind_;
};

// Builds one model per party of `data` (party 0 active). Each party draws its
// initialization from its own stream of `seed`. The top model is sized for
// the concatenated local backbones.
std::vector<PartyModel> BuildFederation(const VerticalDataset& data, const ModelConfig& cfg,
                                        uint64_t seed);

// Parameters a party trains during fine-tuning under `selection`.
NamedParameters EncoderParameters(const PartyModel& model, EncoderSelection selection);

struct SplitNNConfig {
  EncoderSelection selection = EncoderSelection::kLocal;
  AggregatorKind aggregator = AggregatorKind::kConcat;
  SgdOptions sgd = {0.01, 0.9, 0.0};
  size_t batch_size = 512;
  // ISO amplifier on the gradients returned to passive parties.
  double lambda_f = 0.0;
  // Re-initialize g1 for the aggregated width before training.
  bool reset_top = true;
};

// Supervised split-network training and inference over a federation.
// Passive parties send their representations to the active party, which owns
// the labels and the top model, and answers with gradients.
class SplitNNTrainer {
 public:
  SplitNNTrainer(std::vector<PartyModel>& parties, const VerticalDataset& data,
                 SplitNNConfig cfg, uint64_t seed, ExecutionMode mode = ExecutionMode::kScheduler);

  // One optimizer step at every party on `batch`, which must be a subset of
  // the labeled ids. Returns the cross-entropy loss.
  double TrainStep(std::span<const SampleId> batch);
  // One pass over `ids` in shuffled batches; returns the mean batch loss.
  double TrainEpoch(std::span<const SampleId> ids, Rng& rng);
  Matrix Logits(std::span<const SampleId> ids);
  std::vector<int64_t> Predict(std::span<const SampleId> ids);

  Network& network() { return net_; }
  const SplitNNConfig& config() const { return cfg_; }
  size_t steps() const { return steps_; }
  // The most recent gradient each passive party received (index by party).
  const std::vector<Matrix>& last_received_gradients() const { return last_grads_; }

 private:
  void CheckBatch(std::span<const SampleId> batch, bool require_labels) const;

  std::vector<PartyModel>& parties_;
  const VerticalDataset& data_;
  SplitNNConfig cfg_;
  uint64_t seed_;
  ExecutionMode mode_;
  Aggregator aggregator_;
  Network net_;
  std::vector<std::unique_ptr<SgdOptimizer>> optimizers_;
  std::unordered_set<SampleId> labeled_;
  std::vector<Matrix> last_grads_;
  size_t steps_ = 0;
};

}  // namespace vflhssl

#endif  // VFLHSSL_VFL_H_
