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
#ifndef VFLHSSL_EXPERIMENT_H_
#define VFLHSSL_EXPERIMENT_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vflhssl/checkpoint.h"
#include "vflhssl/data.h"
#include "vflhssl/hssl.h"
#include "vflhssl/nn.h"
#include "vflhssl/privacy.h"
#include "vflhssl/transport.h"
#include "vflhssl/vfl.h"

namespace vflhssl {

// A named training recipe: which pretraining steps run (if any), the SSL
// variant, and the encoders used for fine-tuning.
struct Method {
  std::string name;
  bool pretrain = true;
  AblationPreset ablation = AblationPreset::kFedHssl;
  SslKind kind = SslKind::kSimSiam;
};
// Accepts fedhssl, fedhssl-star, fedgssl, fedgssl-star, fedcssl, fedlocal with
// an optional -simsiam/-byol/-moco suffix (default simsiam), and fedsplitnn.
Method ParseMethod(const std::string& name);
std::vector<std::string> KnownMethodNames();

struct DataConfig {
  bool use_csv = false;
  SyntheticSpec synthetic;
  CsvSpec csv;
};

struct FinetuneConfig {
  std::vector<size_t> labeled_counts = {200, 400, 600, 800, 1000};
  std::vector<double> lr_candidates = {0.005, 0.01, 0.03};
  size_t epochs = 30;
  size_t batch_size = 512;
  double momentum = 0.9;
  double weight_decay = 0.0;
  // Held-out share of each labeled subset used to pick the learning rate.
  double validation_fraction = 0.2;
  // Overrides the method's default encoder selection.
  std::optional<EncoderSelection> selection;
  AggregatorKind aggregator = AggregatorKind::kConcat;
  // Labeled subsets are nested prefixes of one dataset-determined order, so
  // every seed fine-tunes on the same samples. When set, each seed draws its
  // own subset instead.
  bool subset_per_seed = false;
};

struct PrivacyConfig {
  std::vector<double> lambda_f = {1.0, 5.0, 25.0};
  size_t labeled_count = 200;
  McAttackConfig attack;
  std::vector<EncoderSource> sources = {EncoderSource::kFinetunedLocal};
  // Party whose encoder the adversary controls.
  size_t adversary = 1;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DataConfig data;
  std::string method = "fedhssl-simsiam";
  ModelConfig model;
  PipelineConfig pipeline;
  FinetuneConfig finetune;
  PrivacyConfig privacy;
  std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};
  std::string output_dir = "runs";

  // Rejects unknown keys and invalid values with ConfigError.
  static ExperimentConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
  void Validate() const;
  // Re-derives the SSL variant and pipeline flags from `method`.
  void ApplyMethod();
  // Hash of the data, model and pipeline sections plus `seed`.
  std::string Fingerprint(uint64_t seed) const;
  // Hash of every section except the output directory.
  std::string RunFingerprint() const;
};

// Default desk-scale configuration for a named method.
ExperimentConfig DefaultExperiment(const std::string& method);
ExperimentConfig LoadExperimentConfig(const std::string& path);
// `spec` is "key=v1,v2,...". Supported keys: gamma, aligned, lambda_p,
// local_updates.
std::vector<std::pair<std::string, ExperimentConfig>> ExpandSweep(const ExperimentConfig& base,
                                                                  const std::string& spec);

VerticalDataset LoadExperimentData(const DataConfig& cfg);
// The "data" section of a config document describing `cfg`.
nlohmann::json DataSectionJson(const DataConfig& cfg);

struct PretrainOutcome {
  std::vector<PartyModel> parties;
  std::vector<TraceRecord> trace;
  Checkpoint checkpoint;
  size_t completed_iterations = 0;
};

// Builds the federation and runs the method's pretraining (none for the
// split-network baseline). Resumes from `resume` when given.
PretrainOutcome RunPretrain(const ExperimentConfig& cfg, const VerticalDataset& data,
                            uint64_t seed, ExecutionMode mode,
                            const std::optional<Checkpoint>& resume = std::nullopt,
                            std::optional<size_t> stop_after = std::nullopt);
// Rebuilds party models from a pretraining checkpoint.
std::vector<PartyModel> ModelsFromCheckpoint(const ExperimentConfig& cfg,
                                             const VerticalDataset& data, const Checkpoint& ckpt,
                                             uint64_t seed);

struct FinetuneOutcome {
  uint64_t seed = 0;
  size_t labeled_count = 0;
  double best_lr = 0.0;
  double validation_top1 = 0.0;
  double test_top1 = 0.0;
  std::optional<double> test_auc;
  std::optional<double> test_f1;
  std::map<double, double> validation_by_lr;
  std::vector<PartyModel> parties;
};

EncoderSelection ResolveSelection(const ExperimentConfig& cfg);

// Fine-tunes copies of `pretrained` on a seeded labeled subset for each lr
// candidate, keeps the best by validation top-1 and reports its test metrics.
FinetuneOutcome RunFinetune(const ExperimentConfig& cfg, const VerticalDataset& data,
                            const std::vector<PartyModel>& pretrained, uint64_t seed,
                            size_t labeled_count, ExecutionMode mode, double lambda_f = 0.0);

struct AttackPoint {
  double lambda_f = 0.0;
  double main_metric = 0.0;
  std::map<EncoderSource, double> recovery;
};

// Auxiliary ids the adversary knows labels for, drawn from the labeled pool
// and therefore disjoint from the test ids.
std::vector<SampleId> AttackAuxIds(const VerticalDataset& data, size_t count, uint64_t seed);

std::vector<AttackPoint> RunAttack(const ExperimentConfig& cfg, const VerticalDataset& data,
                                   const std::vector<PartyModel>& pretrained, uint64_t seed,
                                   ExecutionMode mode);
std::vector<TradeoffCurve> CurvesFromPoints(const ExperimentConfig& cfg,
                                            const std::vector<std::vector<AttackPoint>>& per_seed);

struct SummaryRow {
  size_t labeled_count = 0;
  double mean = 0.0;
  double std = 0.0;
  size_t n = 0;
};
// Sample standard deviation; zero for a single value.
SummaryRow Summarize(size_t labeled_count, const std::vector<double>& values);

// Report of fine-tuning runs over seeds and labeled counts.
struct RunReport {
  std::string method;
  std::string config_fingerprint;
  std::vector<FinetuneOutcome> rows;
  std::vector<SummaryRow> summary;
  std::map<uint64_t, std::vector<TraceRecord>> traces;
  double wall_clock_seconds = 0.0;

  void Recompute();
  // Wall clock is omitted when `include_timing` is false so reports compare
  // byte-for-byte across runs.
  nlohmann::json ToJson(bool include_timing = true) const;
  static RunReport FromJson(const nlohmann::json& j);
  std::string Csv() const;
};

// Worker count for independent seeds, from VFLHSSL_THREADS (default 1).
size_t WorkerCount();
// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first
// failure in index order.
void ParallelFor(size_t n, size_t workers, const std::function<void(size_t)>& fn);

}  // namespace vflhssl

#endif  // VFLHSSL_EXPERIMENT_H_
