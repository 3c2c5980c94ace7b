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
#ifndef VFLHSSL_HSSL_H_
#define VFLHSSL_HSSL_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vflhssl/checkpoint.h"
#include "vflhssl/data.h"
#include "vflhssl/nn.h"
#include "vflhssl/ssl.h"
#include "vflhssl/transport.h"

namespace vflhssl {

struct PipelineConfig {
  double gamma = 0.5;
  size_t global_iterations = 10;
  size_t cross_epochs = 1;
  size_t local_epochs = 1;
  // Optimizer steps per cross-party exchange.
  size_t local_updates = 1;
  bool cross = true;
  bool guided_local = true;
  bool pma = true;
  // Share of the aligned training ids used by cross-party SSL.
  double aligned_fraction = 1.0;
  // Set when f_c comes from an earlier run instead of this pipeline.
  bool cross_encoder_loaded = false;
  // ISO amplifier on the active party's cross representation and PMA blob.
  double lambda_p = 0.0;
  size_t batch_size = 512;
  SgdOptions sgd = {0.05, 0.9, 0.0};
  AugmentationPolicy augmentation;

  void Validate() const;
};

enum class AblationPreset { kFedLocalSsl, kFedCssl, kFedGssl, kFedGsslStar, kFedHssl, kFedHsslStar };
std::string ToString(AblationPreset p);
AblationPreset ParseAblationPreset(const std::string& name);
// Sets the step flags (and gamma for the local-only preset) on `base`.
PipelineConfig ApplyPreset(AblationPreset preset, PipelineConfig base);
// Encoders a preset's pretrained parties fine-tune with.
EncoderSelection FinetuneSelection(AblationPreset preset);

struct TraceRecord {
  size_t iteration = 0;
  size_t party = 0;
  std::string step;
  double loss = 0.0;
  bool operator==(const TraceRecord&) const = default;
};
nlohmann::json ToJson(const TraceRecord& r);
TraceRecord TraceRecordFromJson(const nlohmann::json& j);

struct GuidedLoss {
  Tensor loss;
  // Local targets and cross-party guidance representations of both views.
  Tensor t1, t2, a1, a2;
};
// Symmetrized local SSL loss over two views of a batch, plus gamma times the
// agreement of each view's prediction with the party's own cross-party
// representation of that view under stop-gradient. Guidance is skipped when
// gamma is zero.
GuidedLoss GuidedLocalLoss(const PartyModel& m, const Matrix& v1, const Matrix& v2, double gamma,
                           const NegativeQueue* local_queue, const NegativeQueue* guide_queue);

// Collects one shared-top blob per party and returns their parameter-wise
// mean once all have arrived.
class AggregationServer {
 public:
  explicit AggregationServer(size_t expected_parties) : expected_(expected_parties) {}
  void Submit(size_t party, std::vector<ParameterBlob> blobs);
  bool complete() const;
  size_t received() const;
  // Raises ProtocolError before all parties submitted, ValidationError when
  // names or shapes disagree. Clears the round.
  std::vector<ParameterBlob> Aggregate();

 private:
  size_t expected_;
  std::vector<std::optional<std::vector<ParameterBlob>>> blobs_ =
      std::vector<std::optional<std::vector<ParameterBlob>>>(expected_);
};

struct StepCounters {
  size_t cross_steps = 0;
  size_t local_steps = 0;
  size_t pma_rounds = 0;
};

// Runs FedHSSL pretraining over a federation. The network has one endpoint
// per party plus the aggregation server (index K).
class Pretrainer {
 public:
  Pretrainer(std::vector<PartyModel>& parties, const VerticalDataset& data, PipelineConfig cfg,
             uint64_t seed, ExecutionMode mode = ExecutionMode::kScheduler);

  std::vector<TraceRecord> CrossPartyEpoch(size_t iteration, size_t epoch);
  std::vector<TraceRecord> GuidedLocalEpoch(size_t iteration, size_t epoch);
  void PartialModelAggregation(size_t iteration);
  std::vector<TraceRecord> RunIteration(size_t iteration);
  // Runs iterations [completed_iterations(), stop) where `stop` defaults to
  // the configured count.
  std::vector<TraceRecord> Run(std::optional<size_t> stop_after = std::nullopt);

  // Model parameters followed by optimizer and queue state, per party.
  std::vector<std::vector<ParameterBlob>> ExportState() const;
  void ImportState(const std::vector<std::vector<ParameterBlob>>& state,
                   size_t completed_iterations);
  size_t completed_iterations() const { return completed_; }

  // Aligned training ids used by cross-party SSL.
  const std::vector<SampleId>& cross_ids() const { return cross_ids_; }
  Network& network() { return net_; }
  const StepCounters& counters(size_t party) const { return counters_[party]; }
  const PipelineConfig& config() const { return cfg_; }
  size_t server_index() const { return parties_.size(); }

 private:
  struct PartyState {
    std::unique_ptr<SgdOptimizer> cross_opt;
    std::unique_ptr<SgdOptimizer> local_opt;
    std::unique_ptr<EmaTracker> ema;
    // MoCo dictionaries: one per peer for cross-party SSL (indexed by party
    // id), plus the local and guidance dictionaries of Step 2.
    std::vector<NegativeQueue> cross_queues;
    NegativeQueue local_queue;
    NegativeQueue guide_queue;
  };
  const NegativeQueue* Queue(const NegativeQueue& q) const;

  std::vector<PartyModel>& parties_;
  const VerticalDataset& data_;
  PipelineConfig cfg_;
  uint64_t seed_;
  ExecutionMode mode_;
  Network net_;
  std::vector<PartyState> state_;
  std::vector<StepCounters> counters_;
  std::vector<SampleId> cross_ids_;
  size_t completed_ = 0;
};

// Writes the federation state and resume metadata.
Checkpoint MakePretrainCheckpoint(const Pretrainer& trainer, const std::string& fingerprint,
                                  std::vector<uint64_t> seeds, nlohmann::json meta = {});
// Copies matching model parameters (by name) from checkpoint blobs into the
// party models; optimizer and queue entries are skipped.
void LoadModelParameters(const std::vector<std::vector<ParameterBlob>>& state,
                         std::vector<PartyModel>& parties);

}  // namespace vflhssl

#endif  // VFLHSSL_HSSL_H_
