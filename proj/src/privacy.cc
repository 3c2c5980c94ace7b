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
#include "vflhssl/privacy.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "vflhssl/errors.h"

namespace vflhssl {

void IsoConfig::Validate() const {
  if (lambda < 0.0 || !std::isfinite(lambda)) {
    throw ConfigError("ISO lambda must be a non-negative finite number");
  }
}

double IsoSigma(const Matrix& d, double lambda) {
  if (lambda < 0.0) throw ConfigError("ISO lambda must be non-negative");
  if (d.rows == 0 || d.cols == 0) throw DimensionError("ISO input must be non-empty");
  double max_norm = 0.0;
  for (size_t r = 0; r < d.rows; ++r) {
    double sq = 0.0;
    for (double v : d.row(r)) sq += v * v;
    max_norm = std::max(max_norm, std::sqrt(sq));
  }
  return lambda * max_norm / std::sqrt(static_cast<double>(d.cols));
}

Matrix IsoPerturb(const Matrix& d, double lambda, Rng& rng) {
  const double sigma = IsoSigma(d, lambda);
  if (lambda == 0.0) return d;
  std::normal_distribution<double> standard(0.0, 1.0);
  Matrix out = d;
  for (double& v : out.data) v += sigma * standard(rng);
  return out;
}

// ---- Metrics ----------------------------------------------------------------

namespace {

void RequireSameLength(size_t a, size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": " + std::to_string(a) +
                         " predictions vs " + std::to_string(b) + " labels");
  }
  if (a == 0) throw UndefinedMetricError(std::string(what) + " of an empty set");
}

}  // namespace

double MetricTop1(std::span<const int64_t> predictions, std::span<const int64_t> labels) {
  RequireSameLength(predictions.size(), labels.size(), "top-1");
  size_t hits = 0;
  for (size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double MetricAuc(std::span<const double> scores, std::span<const int64_t> labels) {
  RequireSameLength(scores.size(), labels.size(), "AUC");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  size_t pos = 0, neg = 0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // Tied block shares the average of ranks i+1..j.
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k) {
      const int64_t y = labels[order[k]];
      if (y != 0 && y != 1) throw ValidationError("AUC requires binary labels");
      if (y == 1) {
        pos_rank_sum += rank;
        ++pos;
      } else {
        ++neg;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) {
    throw UndefinedMetricError("AUC is undefined when only one class is present");
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double MetricF1(std::span<const int64_t> predictions, std::span<const int64_t> labels) {
  RequireSameLength(predictions.size(), labels.size(), "F1");
  size_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if ((labels[i] != 0 && labels[i] != 1) || (predictions[i] != 0 && predictions[i] != 1)) {
      throw ValidationError("F1 requires binary labels and predictions");
    }
    if (predictions[i] == 1 && labels[i] == 1) ++tp;
    if (predictions[i] == 1 && labels[i] == 0) ++fp;
    if (predictions[i] == 0 && labels[i] == 1) ++fn;
  }
  if (tp + fp + fn == 0) {
    throw UndefinedMetricError("F1 is undefined without any positive label or prediction");
  }
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

std::vector<int64_t> ArgmaxRows(const Matrix& logits) {
  std::vector<int64_t> out(logits.rows);
  for (size_t r = 0; r < logits.rows; ++r) {
    auto row = logits.row(r);
    out[r] = static_cast<int64_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

// ---- CAP --------------------------------------------------------------------

double MainUtility(const TradeoffPoint& p) { return p.main_metric; }

double LabelDistance(const TradeoffPoint& p) { return 1.0 - p.recovery_acc; }

double Cap(const TradeoffCurve& curve, const PointMeasure& utility,
           const PointMeasure& distance) {
  if (curve.points.empty()) throw ValidationError("CAP of an empty trade-off curve");
  std::set<double> lambdas;
  double total = 0.0;
  for (const auto& p : curve.points) {
    if (!lambdas.insert(p.lambda_f).second) {
      throw ValidationError("trade-off curve repeats lambda_f " + std::to_string(p.lambda_f));
    }
    const double u = utility(p);
    if (u < 0.0 || u > 1.0) throw ValidationError("utility outside [0, 1]");
    total += u * distance(p);
  }
  return total / static_cast<double>(curve.points.size());
}

std::string TradeoffCsv(const std::vector<TradeoffCurve>& curves) {
  std::ostringstream out;
  out << "method,dataset,lambda_f,lambda_p,main_metric,recovery_acc\n";
  char buf[256];
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g", p.lambda_f, p.lambda_p,
                    p.main_metric, p.recovery_acc);
      out << c.method << "," << c.dataset << "," << buf << "\n";
    }
  }
  return out.str();
}

std::vector<TradeoffCurve> ParseTradeoffCsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      line != "method,dataset,lambda_f,lambda_p,main_metric,recovery_acc") {
    throw FormatError("trade-off CSV header mismatch");
  }
  std::vector<TradeoffCurve> curves;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw FormatError("trade-off CSV row needs 6 cells: " + line);
    TradeoffPoint p;
    try {
      p.lambda_f = std::stod(cells[2]);
      p.lambda_p = std::stod(cells[3]);
      p.main_metric = std::stod(cells[4]);
      p.recovery_acc = std::stod(cells[5]);
    } catch (const std::exception&) {
      throw FormatError("non-numeric trade-off CSV row: " + line);
    }
    auto it = std::find_if(curves.begin(), curves.end(), [&](const TradeoffCurve& c) {
      return c.method == cells[0] && c.dataset == cells[1];
    });
    if (it == curves.end()) {
      curves.push_back({cells[0], cells[1], {}});
      it = std::prev(curves.end());
    }
    it->points.push_back(p);
  }
  return curves;
}

// ---- MC attack --------------------------------------------------------------

std::string ToString(EncoderSource s) {
  switch (s) {
    case EncoderSource::kPretrainedLocal:
      return "pretrained_local";
    case EncoderSource::kFinetunedLocal:
      return "finetuned_local";
    case EncoderSource::kPretrainedCrossPlusLocal:
      return "pretrained_cross_plus_local";
  }
  return "unknown";
}

EncoderSource ParseEncoderSource(const std::string& name) {
  if (name == "pretrained_local") return EncoderSource::kPretrainedLocal;
  if (name == "finetuned_local") return EncoderSource::kFinetunedLocal;
  if (name == "pretrained_cross_plus_local") return EncoderSource::kPretrainedCrossPlusLocal;
  throw ConfigError("unknown encoder source '" + name + "'");
}

FrozenEncoder MakeFrozenEncoder(const PartyModel& model, EncoderSource source,
                                EncoderSelection finetune_selection) {
  EncoderSelection selection = EncoderSelection::kLocal;
  switch (source) {
    case EncoderSource::kPretrainedLocal:
      selection = EncoderSelection::kLocal;
      break;
    case EncoderSource::kFinetunedLocal:
      selection = finetune_selection;
      break;
    case EncoderSource::kPretrainedCrossPlusLocal:
      selection = EncoderSelection::kLocalAndCross;
      break;
  }
  return [&model, selection](const Matrix& x) {
    return model.Representation(x, selection).matrix();
  };
}

McAttackResult McAttack(const FrozenEncoder& encoder, const PartyData& adversary,
                        std::span<const SampleId> aux_ids,
                        std::span<const int64_t> aux_labels,
                        std::span<const SampleId> eval_ids,
                        std::span<const int64_t> eval_labels, size_t num_classes,
                        const McAttackConfig& cfg) {
  if (aux_ids.size() != aux_labels.size() || eval_ids.size() != eval_labels.size()) {
    throw DimensionError("attack ids and labels differ in length");
  }
  if (aux_ids.size() < num_classes) {
    throw ValidationError("auxiliary set (" + std::to_string(aux_ids.size()) +
                          ") is smaller than the number of classes (" +
                          std::to_string(num_classes) + ")");
  }
  if (eval_ids.empty()) throw ValidationError("attack evaluation set is empty");
  const std::unordered_set<SampleId> aux_set(aux_ids.begin(), aux_ids.end());
  for (SampleId id : eval_ids) {
    if (aux_set.count(id)) {
      throw ValidationError("auxiliary and evaluation sets overlap at id " + std::to_string(id));
    }
  }

  Matrix aux_x = encoder(adversary.Gather(aux_ids));
  Matrix eval_x = encoder(adversary.Gather(eval_ids));
  // Column standardization with auxiliary statistics.
  for (size_t c = 0; c < aux_x.cols; ++c) {
    double mean = 0.0, sq = 0.0;
    for (size_t r = 0; r < aux_x.rows; ++r) mean += aux_x(r, c);
    mean /= static_cast<double>(aux_x.rows);
    for (size_t r = 0; r < aux_x.rows; ++r) sq += (aux_x(r, c) - mean) * (aux_x(r, c) - mean);
    double sd = std::sqrt(sq / static_cast<double>(aux_x.rows));
    if (!(sd > 1e-12)) sd = 1.0;
    for (size_t r = 0; r < aux_x.rows; ++r) aux_x(r, c) = (aux_x(r, c) - mean) / sd;
    for (size_t r = 0; r < eval_x.rows; ++r) eval_x(r, c) = (eval_x(r, c) - mean) / sd;
  }

  Rng rng = MakeRng(cfg.seed, {StreamTag("mc-attack")});
  std::vector<size_t> widths = cfg.head_hidden;
  widths.push_back(num_classes);
  Mlp head(aux_x.cols, widths, Activation::kIdentity, rng);
  NamedParameters params;
  head.Collect("head", params);
  SgdOptimizer opt(TensorsOf(params), {cfg.learning_rate, 0.9, 0.0});

  std::vector<SampleId> rows(aux_x.rows);
  std::iota(rows.begin(), rows.end(), 0);
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : MakeBatches(rows, cfg.batch_size, true, rng)) {
      Matrix bx(batch.size(), aux_x.cols);
      std::vector<int64_t> by(batch.size());
      for (size_t i = 0; i < batch.size(); ++i) {
        auto src = aux_x.row(static_cast<size_t>(batch[i]));
        std::copy(src.begin(), src.end(), bx.row(i).begin());
        by[i] = aux_labels[static_cast<size_t>(batch[i])];
      }
      Tensor loss = SoftmaxCrossEntropy(head.Forward(Tensor::Constant(std::move(bx))), by);
      loss.Backward();
      opt.Step();
    }
  }
  const auto predictions = ArgmaxRows(head.Forward(Tensor::Constant(eval_x)).matrix());
  return {MetricTop1(predictions, eval_labels), aux_ids.size(), eval_ids.size()};
}

}  // namespace vflhssl
