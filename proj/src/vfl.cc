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
#include "vflhssl/vfl.h"

#include "vflhssl/errors.h"
#include "vflhssl/privacy.h"

namespace vflhssl {

std::string ToString(AggregatorKind k) {
  switch (k) {
    case AggregatorKind::kConcat:
      return "concat";
    case AggregatorKind::kMean:
      return "mean";
    case AggregatorKind::kMax:
      return "max";
  }
  return "unknown";
}

AggregatorKind ParseAggregatorKind(const std::string& name) {
  if (name == "concat") return AggregatorKind::kConcat;
  if (name == "mean") return AggregatorKind::kMean;
  if (name == "max") return AggregatorKind::kMax;
  throw ConfigError("unknown aggregator '" + name + "'");
}

size_t Aggregator::OutputDim(const std::vector<size_t>& dims) const {
  if (dims.empty()) throw DimensionError("aggregator needs at least one block");
  if (kind_ == AggregatorKind::kConcat) {
    size_t total = 0;
    for (size_t d : dims) total += d;
    return total;
  }
  for (size_t d : dims) {
    if (d != dims[0]) {
      throw DimensionError(ToString(kind_) + " aggregator needs equal block widths, got " +
                           std::to_string(dims[0]) + " and " + std::to_string(d));
    }
  }
  return dims[0];
}

Tensor Aggregator::Combine(const std::vector<Tensor>& parts) const {
  std::vector<size_t> dims;
  for (const Tensor& t : parts) {
    if (t.rows() != parts[0].rows()) {
      throw DimensionError("aggregator blocks disagree on batch size: " +
                           std::to_string(parts[0].rows()) + " vs " + std::to_string(t.rows()));
    }
    dims.push_back(t.cols());
  }
  OutputDim(dims);
  if (parts.size() == 1) return parts[0];
  switch (kind_) {
    case AggregatorKind::kConcat:
      return ConcatCols(parts);
    case AggregatorKind::kMean: {
      Tensor acc = parts[0];
      for (size_t i = 1; i < parts.size(); ++i) acc = Add(acc, parts[i]);
      return Scale(acc, 1.0 / static_cast<double>(parts.size()));
    }
    case AggregatorKind::kMax: {
      Tensor acc = parts[0];
      for (size_t i = 1; i < parts.size(); ++i) acc = ElementwiseMax(acc, parts[i]);
      return acc;
    }
  }
  throw ConfigError("unhandled aggregator");
}

std::vector<PartyModel> BuildFederation(const VerticalDataset& data, const ModelConfig& cfg,
                                        uint64_t seed) {
  if (data.num_parties() == 0) throw DataError("dataset has no parties");
  ModelConfig c = cfg;
  if (c.top_input_dim == 0) c.top_input_dim = c.backbone.back() * data.num_parties();
  c.num_classes = data.num_classes;
  std::vector<PartyModel> parties;
  parties.reserve(data.num_parties());
  for (size_t p = 0; p < data.num_parties(); ++p) {
    Rng rng = MakeRng(seed, {p, StreamTag("init")});
    parties.push_back(BuildPartyModel(c, data.parties[p].schema,
                                      p == kActiveParty ? PartyRole::kActive : PartyRole::kPassive,
                                      rng));
  }
  return parties;
}

NamedParameters EncoderParameters(const PartyModel& model, EncoderSelection selection) {
  switch (selection) {
    case EncoderSelection::kLocal:
      return model.Parameters({ParamGroup::kLocalBottom, ParamGroup::kLocalTop});
    case EncoderSelection::kCross:
      return model.Parameters(ParamGroup::kCrossEncoder);
    case EncoderSelection::kLocalAndCross:
      return model.Parameters(
          {ParamGroup::kLocalBottom, ParamGroup::kLocalTop, ParamGroup::kCrossEncoder});
  }
  throw ConfigError("unhandled encoder selection");
}

SplitNNTrainer::SplitNNTrainer(std::vector<PartyModel>& parties, const VerticalDataset& data,
                               SplitNNConfig cfg, uint64_t seed, ExecutionMode mode)
    : parties_(parties),
      data_(data),
      cfg_(cfg),
      seed_(seed),
      mode_(mode),
      aggregator_(cfg.aggregator),
      net_(parties.size(), mode == ExecutionMode::kThreaded),
      labeled_(data.labeled_ids.begin(), data.labeled_ids.end()),
      last_grads_(parties.size()) {
  if (parties_.empty() || parties_.size() != data_.num_parties()) {
    throw ConfigError("federation has " + std::to_string(parties_.size()) +
                      " models for " + std::to_string(data_.num_parties()) + " parties");
  }
  if (!parties_[kActiveParty].has_top()) throw ConfigError("party 0 must hold the top model");
  if (cfg_.lambda_f < 0.0) throw ConfigError("lambda_f must be non-negative");
  if (cfg_.batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<size_t> dims;
  for (const PartyModel& m : parties_) dims.push_back(m.representation_dim(cfg_.selection));
  const size_t top_in = aggregator_.OutputDim(dims);
  if (cfg_.reset_top) {
    Rng rng = MakeRng(seed_, {StreamTag("top.init")});
    parties_[kActiveParty].ResetTop(top_in, rng);
  } else if (parties_[kActiveParty].top().in_dim() != top_in) {
    throw DimensionError("top model expects width " +
                         std::to_string(parties_[kActiveParty].top().in_dim()) +
                         " but the aggregated representation has " + std::to_string(top_in));
  }
  for (size_t p = 0; p < parties_.size(); ++p) {
    std::vector<Tensor> params = TensorsOf(EncoderParameters(parties_[p], cfg_.selection));
    if (p == kActiveParty) {
      for (const Tensor& t : TensorsOf(parties_[p].Parameters(ParamGroup::kTop)))
        params.push_back(t);
    }
    optimizers_.push_back(std::make_unique<SgdOptimizer>(std::move(params), cfg_.sgd));
  }
}

void SplitNNTrainer::CheckBatch(std::span<const SampleId> batch, bool require_labels) const {
  if (batch.empty()) throw ValidationError("empty batch");
  if (!require_labels) return;
  for (SampleId id : batch) {
    if (!labeled_.count(id)) {
      throw ValidationError("sample " + std::to_string(id) + " is not in the labeled set");
    }
  }
}

double SplitNNTrainer::TrainStep(std::span<const SampleId> batch) {
  CheckBatch(batch, true);
  const size_t k = parties_.size();
  std::vector<Tensor> z(k);
  double loss_value = 0.0;
  const size_t step = steps_;
  auto fn = [&](size_t p, size_t phase) {
    if (phase == 0) {
      if (p == kActiveParty) return;
      z[p] = parties_[p].Representation(data_.parties[p].Gather(batch), cfg_.selection);
      net_.Send(p, kActiveParty, WireMessage::Shaped(MsgType::kRepr, z[p].matrix()));
    } else if (phase == 1) {
      if (p != kActiveParty) return;
      std::vector<Tensor> parts(k);
      parts[kActiveParty] =
          parties_[p].Representation(data_.parties[p].Gather(batch), cfg_.selection);
      for (size_t j = 1; j < k; ++j)
        parts[j] = Tensor::Parameter(net_.Recv(p, j, MsgType::kRepr).AsMatrix());
      Tensor logits = parties_[p].TopForward(aggregator_.Combine(parts));
      const std::vector<int64_t> labels = data_.LabelsOf(batch);
      Tensor loss = SoftmaxCrossEntropy(logits, labels);
      loss.Backward();
      for (size_t j = 1; j < k; ++j) {
        Matrix g = parts[j].grad_matrix();
        if (cfg_.lambda_f > 0.0) {
          Rng rng = MakeRng(seed_, {StreamTag("iso.grad"), step, j});
          g = IsoPerturb(g, cfg_.lambda_f, rng);
        }
        net_.Send(p, j, WireMessage::Shaped(MsgType::kGrad, g));
      }
      optimizers_[p]->Step();
      loss_value = loss.item();
    } else {
      if (p == kActiveParty) return;
      Matrix g = net_.Recv(p, kActiveParty, MsgType::kGrad).AsMatrix();
      z[p].Backward(g.data);
      optimizers_[p]->Step();
      last_grads_[p] = std::move(g);
    }
  };
  RunParticipants(mode_, net_, k, 3, fn);
  ++steps_;
  return loss_value;
}

double SplitNNTrainer::TrainEpoch(std::span<const SampleId> ids, Rng& rng) {
  const auto batches = MakeBatches(ids, cfg_.batch_size, true, rng);
  double total = 0.0;
  for (const auto& b : batches) total += TrainStep(b);
  return batches.empty() ? 0.0 : total / static_cast<double>(batches.size());
}

Matrix SplitNNTrainer::Logits(std::span<const SampleId> ids) {
  CheckBatch(ids, false);
  const size_t k = parties_.size();
  Matrix out;
  auto fn = [&](size_t p, size_t phase) {
    if (phase == 0) {
      if (p == kActiveParty) return;
      Tensor z = parties_[p].Representation(data_.parties[p].Gather(ids), cfg_.selection);
      net_.Send(p, kActiveParty, WireMessage::Shaped(MsgType::kRepr, z.matrix()));
    } else {
      if (p != kActiveParty) return;
      std::vector<Tensor> parts(k);
      parts[kActiveParty] =
          parties_[p].Representation(data_.parties[p].Gather(ids), cfg_.selection);
      for (size_t j = 1; j < k; ++j)
        parts[j] = Tensor::Constant(net_.Recv(p, j, MsgType::kRepr).AsMatrix());
      out = parties_[p].TopForward(aggregator_.Combine(parts)).matrix();
    }
  };
  RunParticipants(mode_, net_, k, 2, fn);
  return out;
}

std::vector<int64_t> SplitNNTrainer::Predict(std::span<const SampleId> ids) {
  return ArgmaxRows(Logits(ids));
}

}  // namespace vflhssl
