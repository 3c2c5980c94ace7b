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
#include "vflhssl/hssl.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "vflhssl/errors.h"
#include "vflhssl/privacy.h"

namespace vflhssl {

void PipelineConfig::Validate() const {
  if (gamma < 0.0) throw ConfigError("pipeline.gamma must be non-negative");
  if (global_iterations == 0) throw ConfigError("pipeline.global_iterations must be at least 1");
  if (cross_epochs == 0 || local_epochs == 0) throw ConfigError("pipeline epochs must be at least 1");
  if (local_updates == 0) throw ConfigError("pipeline.local_updates must be at least 1");
  if (!(aligned_fraction > 0.0 && aligned_fraction <= 1.0)) {
    throw ConfigError("pipeline.aligned_fraction must lie in (0, 1]");
  }
  if (lambda_p < 0.0) throw ConfigError("pipeline.lambda_p must be non-negative");
  if (batch_size == 0) throw ConfigError("pipeline.batch_size must be positive");
  if (!cross && !guided_local && !pma) throw ConfigError("pipeline enables no step");
  if (guided_local && gamma > 0.0 && !cross && !cross_encoder_loaded) {
    throw ConfigError("guided local SSL with gamma > 0 needs cross-party SSL or a loaded cross encoder");
  }
  if (!(augmentation.corruption_fraction >= 0.0 && augmentation.corruption_fraction <= 1.0)) {
    throw ConfigError("augmentation corruption fraction must lie in [0, 1]");
  }
}

std::string ToString(AblationPreset p) {
  switch (p) {
    case AblationPreset::kFedLocalSsl:
      return "FedLocalSSL";
    case AblationPreset::kFedCssl:
      return "FedCSSL";
    case AblationPreset::kFedGssl:
      return "FedGSSL";
    case AblationPreset::kFedGsslStar:
      return "FedGSSL*";
    case AblationPreset::kFedHssl:
      return "FedHSSL";
    case AblationPreset::kFedHsslStar:
      return "FedHSSL*";
  }
  return "unknown";
}

AblationPreset ParseAblationPreset(const std::string& name) {
  for (AblationPreset p :
       {AblationPreset::kFedLocalSsl, AblationPreset::kFedCssl, AblationPreset::kFedGssl,
        AblationPreset::kFedGsslStar, AblationPreset::kFedHssl, AblationPreset::kFedHsslStar}) {
    if (ToString(p) == name) return p;
  }
  throw ConfigError("unknown ablation preset '" + name + "'");
}

PipelineConfig ApplyPreset(AblationPreset preset, PipelineConfig base) {
  switch (preset) {
    case AblationPreset::kFedLocalSsl:
      base.cross = false;
      base.guided_local = true;
      base.pma = false;
      base.gamma = 0.0;
      break;
    case AblationPreset::kFedCssl:
      base.cross = true;
      base.guided_local = false;
      base.pma = false;
      break;
    case AblationPreset::kFedGssl:
    case AblationPreset::kFedGsslStar:
      base.cross = true;
      base.guided_local = true;
      base.pma = false;
      break;
    case AblationPreset::kFedHssl:
    case AblationPreset::kFedHsslStar:
      base.cross = true;
      base.guided_local = true;
      base.pma = true;
      break;
  }
  return base;
}

EncoderSelection FinetuneSelection(AblationPreset preset) {
  switch (preset) {
    case AblationPreset::kFedLocalSsl:
    case AblationPreset::kFedGsslStar:
    case AblationPreset::kFedHsslStar:
      return EncoderSelection::kLocal;
    case AblationPreset::kFedCssl:
      return EncoderSelection::kCross;
    case AblationPreset::kFedGssl:
    case AblationPreset::kFedHssl:
      return EncoderSelection::kLocalAndCross;
  }
  return EncoderSelection::kLocal;
}

nlohmann::json ToJson(const TraceRecord& r) {
  return {{"iteration", r.iteration}, {"party", r.party}, {"step", r.step}, {"loss", r.loss}};
}

TraceRecord TraceRecordFromJson(const nlohmann::json& j) {
  try {
    TraceRecord r;
    r.iteration = j.at("iteration").get<size_t>();
    r.party = j.at("party").get<size_t>();
    r.step = j.at("step").get<std::string>();
    r.loss = j.at("loss").get<double>();
    if (j.size() != 4) throw FormatError("trace record has unexpected keys");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed trace record: ") + e.what());
  }
}

// ---- Aggregation server --------------------------------------------------------

void AggregationServer::Submit(size_t party, std::vector<ParameterBlob> blobs) {
  if (party >= expected_) throw ProtocolError("blob from unknown party " + std::to_string(party));
  if (blobs_[party]) throw ProtocolError("party " + std::to_string(party) + " submitted twice");
  blobs_[party] = std::move(blobs);
}

size_t AggregationServer::received() const {
  size_t n = 0;
  for (const auto& b : blobs_) n += b.has_value();
  return n;
}

bool AggregationServer::complete() const { return received() == expected_; }

std::vector<ParameterBlob> AggregationServer::Aggregate() {
  if (!complete()) {
    throw ProtocolError("aggregation needs " + std::to_string(expected_) + " blobs, got " +
                        std::to_string(received()));
  }
  const std::vector<ParameterBlob>& first = *blobs_[0];
  for (size_t i = 1; i < expected_; ++i) {
    const auto& other = *blobs_[i];
    if (other.size() != first.size()) throw ValidationError("parties disagree on the shared block");
    for (size_t k = 0; k < first.size(); ++k) {
      if (other[k].name != first[k].name || other[k].rows != first[k].rows ||
          other[k].cols != first[k].cols) {
        throw ValidationError("party " + std::to_string(i) + " sent " + other[k].name + " " +
                              ShapeString(other[k].rows, other[k].cols) + ", expected " +
                              first[k].name + " " + ShapeString(first[k].rows, first[k].cols));
      }
    }
  }
  // Offsets from the first blob keep equal inputs exactly unchanged.
  std::vector<ParameterBlob> mean = first;
  const double inv = 1.0 / static_cast<double>(expected_);
  for (size_t k = 0; k < mean.size(); ++k) {
    for (size_t e = 0; e < mean[k].values.size(); ++e) {
      const double base = first[k].values[e];
      double offset = 0.0;
      for (size_t i = 1; i < expected_; ++i) offset += (*blobs_[i])[k].values[e] - base;
      mean[k].values[e] = base + offset * inv;
    }
  }
  for (auto& b : blobs_) b.reset();
  return mean;
}

// ---- Pretrainer ----------------------------------------------------------------

Pretrainer::Pretrainer(std::vector<PartyModel>& parties, const VerticalDataset& data,
                       PipelineConfig cfg, uint64_t seed, ExecutionMode mode)
    : parties_(parties),
      data_(data),
      cfg_(cfg),
      seed_(seed),
      mode_(mode),
      net_(parties.size() + 1, mode == ExecutionMode::kThreaded),
      state_(parties.size()),
      counters_(parties.size()) {
  cfg_.Validate();
  if (parties_.size() != data_.num_parties() || parties_.empty()) {
    throw ConfigError("federation does not match the dataset's party count");
  }
  const size_t k = parties_.size();
  for (size_t p = 0; p < k; ++p) {
    const PartyModel& m = parties_[p];
    PartyState& s = state_[p];
    s.cross_opt = std::make_unique<SgdOptimizer>(
        TensorsOf(m.Parameters({ParamGroup::kCrossEncoder, ParamGroup::kCrossProjector,
                                ParamGroup::kCrossPredictor})),
        cfg_.sgd);
    s.local_opt = std::make_unique<SgdOptimizer>(
        TensorsOf(m.Parameters({ParamGroup::kLocalBottom, ParamGroup::kLocalTop,
                                ParamGroup::kLocalProjector, ParamGroup::kLocalPredictor})),
        cfg_.sgd);
    if (m.has_target())
      s.ema = std::make_unique<EmaTracker>(m.config().ema_momentum, m.TargetPairs());
    const SslVariant& v = m.config().variant;
    const size_t dim = m.config().projector.back();
    if (v.kind == SslKind::kMoco) {
      s.cross_queues.assign(k, NegativeQueue(v.queue_capacity, dim));
      s.local_queue = NegativeQueue(v.queue_capacity, dim);
      s.guide_queue = NegativeQueue(v.queue_capacity, dim);
    }
  }
  cross_ids_ = data_.AlignedTrainIds();
  if (cfg_.aligned_fraction < 1.0 && !cross_ids_.empty()) {
    Rng rng = MakeRng(seed_, {StreamTag("aligned.subset")});
    std::shuffle(cross_ids_.begin(), cross_ids_.end(), rng);
    const size_t keep = std::max<size_t>(
        1, static_cast<size_t>(std::ceil(cfg_.aligned_fraction * cross_ids_.size() - 1e-9)));
    cross_ids_.resize(std::min(keep, cross_ids_.size()));
    std::sort(cross_ids_.begin(), cross_ids_.end());
  }
}

const NegativeQueue* Pretrainer::Queue(const NegativeQueue& q) const {
  return parties_[0].config().variant.kind == SslKind::kMoco ? &q : nullptr;
}

std::vector<TraceRecord> Pretrainer::CrossPartyEpoch(size_t iteration, size_t epoch) {
  const size_t k = parties_.size();
  if (k < 2) throw ConfigError("cross-party SSL needs at least two parties");
  if (cross_ids_.empty()) throw ValidationError("cross-party SSL needs aligned samples");
  Rng order = MakeRng(seed_, {StreamTag("cross.order"), iteration, epoch});
  const auto batches = MakeBatches(cross_ids_, cfg_.batch_size, true, order);
  std::vector<double> loss_sum(k, 0.0);
  std::vector<Matrix> xs(k);
  std::vector<Tensor> z0(k);
  for (size_t b = 0; b < batches.size(); ++b) {
    const auto& batch = batches[b];
    auto fn = [&](size_t p, size_t phase) {
      PartyModel& m = parties_[p];
      PartyState& s = state_[p];
      if (phase == 0) {
        xs[p] = data_.parties[p].Gather(batch);
        z0[p] = m.CrossProjection(xs[p]);
        Matrix out = z0[p].matrix();
        if (p == 0) {
          if (cfg_.lambda_p > 0.0) {
            Rng rng = MakeRng(seed_, {StreamTag("iso.cross"), iteration, epoch, b});
            out = IsoPerturb(out, cfg_.lambda_p, rng);
          }
          for (size_t j = 1; j < k; ++j)
            net_.Send(0, j, WireMessage::Shaped(MsgType::kRepr, out));
        } else {
          net_.Send(p, 0, WireMessage::Shaped(MsgType::kRepr, out));
        }
        return;
      }
      std::vector<std::pair<size_t, Tensor>> targets;
      if (p == 0) {
        for (size_t j = 1; j < k; ++j)
          targets.emplace_back(j, Tensor::Constant(net_.Recv(0, j, MsgType::kRepr).AsMatrix()));
      } else {
        targets.emplace_back(0, Tensor::Constant(net_.Recv(p, 0, MsgType::kRepr).AsMatrix()));
      }
      const SslVariant& v = m.config().variant;
      for (size_t u = 0; u < cfg_.local_updates; ++u) {
        Tensor z = u == 0 ? z0[p] : m.CrossProjection(xs[p]);
        Tensor pred = m.CrossPredict(z);
        Tensor loss;
        for (const auto& [peer, t] : targets) {
          Tensor l = SslLoss(v, pred, t, Queue(s.cross_queues.empty() ? s.local_queue
                                                                      : s.cross_queues[peer]));
          loss = loss.defined() ? Add(loss, l) : l;
        }
        if (targets.size() > 1) loss = Scale(loss, 1.0 / static_cast<double>(targets.size()));
        loss.Backward();
        s.cross_opt->Step();
        ++counters_[p].cross_steps;
        if (u == 0) loss_sum[p] += loss.item();
      }
      if (v.kind == SslKind::kMoco) {
        for (const auto& [peer, t] : targets) s.cross_queues[peer].Enqueue(t.matrix());
      }
    };
    RunParticipants(mode_, net_, k, 2, fn);
  }
  std::vector<TraceRecord> out;
  for (size_t p = 0; p < k; ++p)
    out.push_back({iteration, p, "cross", loss_sum[p] / static_cast<double>(batches.size())});
  return out;
}

GuidedLoss GuidedLocalLoss(const PartyModel& m, const Matrix& v1, const Matrix& v2, double gamma,
                           const NegativeQueue* local_queue, const NegativeQueue* guide_queue) {
  const SslVariant& v = m.config().variant;
  GuidedLoss g;
  Tensor z1 = m.LocalProjection(v1);
  Tensor z2 = m.LocalProjection(v2);
  Tensor p1 = m.LocalPredict(z1);
  Tensor p2 = m.LocalPredict(z2);
  g.t1 = m.has_target() ? m.TargetProjection(v1) : z1;
  g.t2 = m.has_target() ? m.TargetProjection(v2) : z2;
  g.loss = Scale(Add(SslLoss(v, p1, g.t2, local_queue), SslLoss(v, p2, g.t1, local_queue)), 0.5);
  if (gamma > 0.0) {
    g.a1 = StopGradient(m.CrossProjection(v1));
    g.a2 = StopGradient(m.CrossProjection(v2));
    g.loss = Add(g.loss, Scale(Add(SslLoss(v, p1, g.a1, guide_queue), SslLoss(v, p2, g.a2, guide_queue)),
                               gamma));
  }
  return g;
}

std::vector<TraceRecord> Pretrainer::GuidedLocalEpoch(size_t iteration, size_t epoch) {
  const size_t k = parties_.size();
  std::vector<TraceRecord> out(k);
  auto fn = [&](size_t p, size_t) {
    PartyModel& m = parties_[p];
    PartyState& s = state_[p];
    const PartyData& pd = data_.parties[p];
    const SslVariant& v = m.config().variant;
    const bool moco = v.kind == SslKind::kMoco;
    Rng rng = MakeRng(seed_, {StreamTag("local"), p, iteration, epoch});
    const std::vector<SampleId> ids = data_.LocalTrainIds(p);
    const auto batches = MakeBatches(ids, cfg_.batch_size, true, rng);
    double total = 0.0;
    for (const auto& batch : batches) {
      const Matrix x = pd.Gather(batch);
      const Matrix v1 = Augment(x, pd.schema, pd.column_std, cfg_.augmentation, rng);
      const Matrix v2 = Augment(x, pd.schema, pd.column_std, cfg_.augmentation, rng);
      const NegativeQueue* lq = moco ? &s.local_queue : nullptr;
      const NegativeQueue* gq = moco ? &s.guide_queue : nullptr;
      GuidedLoss g = GuidedLocalLoss(m, v1, v2, cfg_.gamma, lq, gq);
      Tensor& loss = g.loss;
      loss.Backward();
      s.local_opt->Step();
      ++counters_[p].local_steps;
      if (s.ema) s.ema->Update();
      if (moco) {
        s.local_queue.Enqueue(g.t1.matrix());
        s.local_queue.Enqueue(g.t2.matrix());
        if (g.a1.defined()) {
          s.guide_queue.Enqueue(g.a1.matrix());
          s.guide_queue.Enqueue(g.a2.matrix());
        }
      }
      total += loss.item();
    }
    out[p] = {iteration, p, "guided_local",
              batches.empty() ? 0.0 : total / static_cast<double>(batches.size())};
  };
  RunParticipants(mode_, net_, k, 1, fn);
  return out;
}

void Pretrainer::PartialModelAggregation(size_t iteration) {
  const size_t k = parties_.size();
  const size_t server = server_index();
  AggregationServer agg(k);
  auto fn = [&](size_t p, size_t phase) {
    if (phase == 0 && p < k) {
      std::vector<ParameterBlob> blobs = ToBlobs(parties_[p].SharedTopParameters());
      if (p == 0 && cfg_.lambda_p > 0.0) {
        Rng rng = MakeRng(seed_, {StreamTag("iso.blob"), iteration});
        for (ParameterBlob& b : blobs)
          b.values = IsoPerturb(Matrix(b.rows, b.cols, b.values), cfg_.lambda_p, rng).data;
      }
      net_.Send(p, server, WireMessage::ModelBlob(EncodeParameterBlob(blobs)));
    } else if (phase == 1 && p == server) {
      for (size_t i = 0; i < k; ++i)
        agg.Submit(i, DecodeParameterBlob(net_.Recv(server, i, MsgType::kModelBlob).blob));
      const std::string global = EncodeParameterBlob(agg.Aggregate());
      for (size_t i = 0; i < k; ++i) net_.Send(server, i, WireMessage::ModelBlob(global));
    } else if (phase == 2 && p < k) {
      ApplyBlobs(DecodeParameterBlob(net_.Recv(p, server, MsgType::kModelBlob).blob),
                 parties_[p].SharedTopParameters());
      ++counters_[p].pma_rounds;
    }
  };
  RunParticipants(mode_, net_, k + 1, 3, fn);
}

std::vector<TraceRecord> Pretrainer::RunIteration(size_t iteration) {
  std::vector<TraceRecord> trace;
  if (cfg_.cross) {
    for (size_t e = 0; e < cfg_.cross_epochs; ++e) {
      auto r = CrossPartyEpoch(iteration, e);
      trace.insert(trace.end(), r.begin(), r.end());
    }
  }
  if (cfg_.guided_local) {
    for (size_t e = 0; e < cfg_.local_epochs; ++e) {
      auto r = GuidedLocalEpoch(iteration, e);
      trace.insert(trace.end(), r.begin(), r.end());
    }
  }
  if (cfg_.pma) PartialModelAggregation(iteration);
  completed_ = iteration + 1;
  return trace;
}

std::vector<TraceRecord> Pretrainer::Run(std::optional<size_t> stop_after) {
  const size_t stop = std::min(cfg_.global_iterations, stop_after.value_or(cfg_.global_iterations));
  std::vector<TraceRecord> trace;
  for (size_t it = completed_; it < stop; ++it) {
    auto r = RunIteration(it);
    trace.insert(trace.end(), r.begin(), r.end());
  }
  return trace;
}

namespace {

void AppendVelocities(const std::string& prefix, const SgdOptimizer& opt,
                      std::vector<ParameterBlob>& out) {
  for (size_t i = 0; i < opt.params().size(); ++i) {
    const Tensor& t = opt.params()[i];
    out.push_back({prefix + "." + std::to_string(i), t.rows(), t.cols(), opt.velocity()[i]});
  }
}

void AppendQueue(const std::string& name, const NegativeQueue& q, std::vector<ParameterBlob>& out) {
  Matrix m = q.AsMatrix();
  out.push_back({name, m.rows, q.dim(), std::move(m.data)});
}

}  // namespace

std::vector<std::vector<ParameterBlob>> Pretrainer::ExportState() const {
  std::vector<std::vector<ParameterBlob>> out;
  for (size_t p = 0; p < parties_.size(); ++p) {
    std::vector<ParameterBlob> blobs = ToBlobs(parties_[p].AllParameters());
    const PartyState& s = state_[p];
    AppendVelocities("opt.cross", *s.cross_opt, blobs);
    AppendVelocities("opt.local", *s.local_opt, blobs);
    for (size_t j = 0; j < s.cross_queues.size(); ++j)
      AppendQueue("queue.cross." + std::to_string(j), s.cross_queues[j], blobs);
    if (!s.cross_queues.empty()) {
      AppendQueue("queue.local", s.local_queue, blobs);
      AppendQueue("queue.guide", s.guide_queue, blobs);
    }
    out.push_back(std::move(blobs));
  }
  return out;
}

void Pretrainer::ImportState(const std::vector<std::vector<ParameterBlob>>& state,
                             size_t completed_iterations) {
  if (state.size() != parties_.size()) throw FormatError("checkpoint party count mismatch");
  LoadModelParameters(state, parties_);
  for (size_t p = 0; p < parties_.size(); ++p) {
    std::map<std::string, const ParameterBlob*> by_name;
    for (const ParameterBlob& b : state[p]) by_name[b.name] = &b;
    auto find = [&](const std::string& name) -> const ParameterBlob& {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError("checkpoint lacks " + name);
      return *it->second;
    };
    PartyState& s = state_[p];
    for (auto [prefix, opt] : {std::pair{std::string("opt.cross"), s.cross_opt.get()},
                               std::pair{std::string("opt.local"), s.local_opt.get()}}) {
      for (size_t i = 0; i < opt->velocity().size(); ++i) {
        const ParameterBlob& b = find(prefix + "." + std::to_string(i));
        if (b.values.size() != opt->velocity()[i].size())
          throw FormatError(b.name + " has the wrong size");
        opt->velocity()[i] = b.values;
      }
    }
    auto restore = [&](const std::string& name, NegativeQueue& q) {
      const ParameterBlob& b = find(name);
      q.Restore(Matrix(b.rows, b.cols, b.values));
    };
    for (size_t j = 0; j < s.cross_queues.size(); ++j)
      restore("queue.cross." + std::to_string(j), s.cross_queues[j]);
    if (!s.cross_queues.empty()) {
      restore("queue.local", s.local_queue);
      restore("queue.guide", s.guide_queue);
    }
  }
  completed_ = completed_iterations;
}

Checkpoint MakePretrainCheckpoint(const Pretrainer& trainer, const std::string& fingerprint,
                                  std::vector<uint64_t> seeds, nlohmann::json meta) {
  Checkpoint c;
  c.parties = trainer.ExportState();
  c.config_fingerprint = fingerprint;
  c.seeds = std::move(seeds);
  if (!meta.is_object()) meta = nlohmann::json::object();
  meta["completed_iterations"] = trainer.completed_iterations();
  c.meta = std::move(meta);
  return c;
}

void LoadModelParameters(const std::vector<std::vector<ParameterBlob>>& state,
                         std::vector<PartyModel>& parties) {
  if (state.size() != parties.size()) throw FormatError("checkpoint party count mismatch");
  for (size_t p = 0; p < parties.size(); ++p) {
    std::map<std::string, const ParameterBlob*> by_name;
    for (const ParameterBlob& b : state[p]) by_name[b.name] = &b;
    for (const NamedParameter& np : parties[p].AllParameters()) {
      auto it = by_name.find(np.name);
      if (it == by_name.end()) {
        throw FormatError("checkpoint party " + std::to_string(p) + " lacks " + np.name);
      }
      const ParameterBlob& b = *it->second;
      Tensor t = np.tensor;
      if (b.rows != t.rows() || b.cols != t.cols()) {
        throw FormatError(np.name + " is " + ShapeString(b.rows, b.cols) + " in the checkpoint, " +
                          ShapeString(t.rows(), t.cols()) + " in the model");
      }
      t.mutable_values() = b.values;
    }
  }
}

}  // namespace vflhssl
