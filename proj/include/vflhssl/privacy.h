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
#ifndef VFLHSSL_PRIVACY_H_
#define VFLHSSL_PRIVACY_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "vflhssl/data.h"
#include "vflhssl/nn.h"
#include "vflhssl/rng.h"
#include "vflhssl/tensor.h"

namespace vflhssl {

// ---- Isotropic Gaussian protection -----------------------------------------

enum class IsoTarget { kCrossRepr, kTopModelBlob, kFinetuneGrad };

struct IsoConfig {
  // Noise amplifier; zero disables the mechanism exactly.
  double lambda = 0.0;
  std::set<IsoTarget> targets;
  uint64_t stream = 0;

  void Validate() const;
  bool Applies(IsoTarget t) const { return lambda > 0.0 && targets.count(t) > 0; }
};

// lambda * max_row ||d_row||_2 / sqrt(m).
double IsoSigma(const Matrix& d, double lambda);
// d + N(0, sigma^2) element-wise. lambda == 0 returns d unchanged without
// consuming randomness.
Matrix IsoPerturb(const Matrix& d, double lambda, Rng& rng);

// ---- Metrics ----------------------------------------------------------------

double MetricTop1(std::span<const int64_t> predictions, std::span<const int64_t> labels);
// Mann-Whitney rank statistic for binary labels {0, 1}; ties count 1/2.
double MetricAuc(std::span<const double> scores, std::span<const int64_t> labels);
// Harmonic mean of precision and recall for the positive class 1.
double MetricF1(std::span<const int64_t> predictions, std::span<const int64_t> labels);

std::vector<int64_t> ArgmaxRows(const Matrix& logits);

// ---- Privacy-utility trade-off ----------------------------------------------

struct TradeoffPoint {
  double lambda_f = 0.0;
  double lambda_p = 0.0;
  // Main-task utility in [0, 1].
  double main_metric = 0.0;
  double recovery_acc = 0.0;
};

struct TradeoffCurve {
  std::string method;
  std::string dataset;
  std::vector<TradeoffPoint> points;
};

using PointMeasure = std::function<double(const TradeoffPoint&)>;

double MainUtility(const TradeoffPoint& p);
// 1 - recovery accuracy: distance of recovered labels from the originals.
double LabelDistance(const TradeoffPoint& p);

// Mean over the curve's points of U(point) * E(point).
double Cap(const TradeoffCurve& curve, const PointMeasure& utility = MainUtility,
           const PointMeasure& distance = LabelDistance);

// CSV columns: method,dataset,lambda_f,lambda_p,main_metric,recovery_acc.
std::string TradeoffCsv(const std::vector<TradeoffCurve>& curves);
std::vector<TradeoffCurve> ParseTradeoffCsv(const std::string& text);

// ---- Model-completion attack ------------------------------------------------

enum class EncoderSource { kPretrainedLocal, kFinetunedLocal, kPretrainedCrossPlusLocal };
std::string ToString(EncoderSource s);
EncoderSource ParseEncoderSource(const std::string& name);

struct McAttackConfig {
  size_t aux_labeled_count = 80;
  std::vector<size_t> head_hidden = {64};
  size_t epochs = 100;
  double learning_rate = 0.05;
  size_t batch_size = 32;
  EncoderSource source = EncoderSource::kFinetunedLocal;
  uint64_t seed = 0;
};

struct McAttackResult {
  double recovery_accuracy = 0.0;
  size_t aux_count = 0;
  size_t eval_count = 0;
};

// Frozen feature extractor of the adversary: raw rows -> representation rows.
using FrozenEncoder = std::function<Matrix(const Matrix&)>;

// Representation used by the adversary for the given source.
FrozenEncoder MakeFrozenEncoder(const PartyModel& model, EncoderSource source,
                                EncoderSelection finetune_selection);

// Trains an inference head on frozen encoder outputs of labeled auxiliary rows
// and reports label-recovery accuracy on the evaluation rows.
McAttackResult McAttack(const FrozenEncoder& encoder, const PartyData& adversary,
                        std::span<const SampleId> aux_ids,
                        std::span<const int64_t> aux_labels,
                        std::span<const SampleId> eval_ids,
                        std::span<const int64_t> eval_labels, size_t num_classes,
                        const McAttackConfig& cfg);

}  // namespace vflhssl

#endif  // VFLHSSL_PRIVACY_H_
