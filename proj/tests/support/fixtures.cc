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
#include "support/fixtures.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "vflhssl/errors.h"

namespace vflhssl::testing {

SyntheticSpec TinySpec(size_t parties, size_t dim, uint64_t seed) {
  SyntheticSpec s;
  s.latent_dim = 4;
  s.classes = 3;
  s.parties = parties;
  s.feature_dims.assign(parties, dim);
  s.noise.assign(parties, 0.5);
  s.class_separation = 1.5;
  s.aligned = 160;
  s.unaligned = 40;
  s.labeled = 80;
  s.test = 40;
  s.seed = seed;
  return s;
}

ModelConfig TinyModel(SslKind kind) {
  ModelConfig m = ModelConfig::DeskScale(kind);
  m.embedding_dim = 2;
  m.backbone = {8, 6};
  m.projector = {8, 6};
  m.predictor = kind == SslKind::kMoco ? std::vector<size_t>{} : std::vector<size_t>{4, 6};
  m.variant.kind = kind;
  m.variant.queue_capacity = 32;
  return m;
}

ExperimentConfig TinyExperiment(const std::string& method, const std::string& out_dir) {
  ExperimentConfig c = DefaultExperiment(method);
  c.data.synthetic = TinySpec();
  c.model = TinyModel(c.model.variant.kind);
  c.pipeline.global_iterations = 2;
  c.pipeline.batch_size = 32;
  c.finetune.labeled_counts = {40};
  c.finetune.lr_candidates = {0.01, 0.03};
  c.finetune.epochs = 2;
  c.finetune.batch_size = 16;
  c.privacy.labeled_count = 40;
  c.privacy.attack.aux_labeled_count = 12;
  c.privacy.attack.epochs = 5;
  c.privacy.attack.head_hidden = {8};
  c.seeds = {0};
  c.output_dir = out_dir;
  c.ApplyMethod();
  return c;
}

double MaxAbsDiff(const NamedParameters& a, const NamedParameters& b) {
  if (a.size() != b.size()) throw ValidationError("parameter lists differ in length");
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].tensor.size() != b[i].tensor.size()) {
      throw ValidationError("parameter mismatch at " + a[i].name);
    }
    const auto& x = a[i].tensor.values();
    const auto& y = b[i].tensor.values();
    for (size_t k = 0; k < x.size(); ++k) worst = std::max(worst, std::abs(x[k] - y[k]));
  }
  return worst;
}

SplitOracleResult CompareSplitWithMonolithic(size_t parties, size_t batches, uint64_t seed,
                                             ExecutionMode mode) {
  const VerticalDataset data = GenerateSynthetic(TinySpec(parties, 5, seed + 11));
  ModelConfig mc = TinyModel();
  std::vector<PartyModel> split = BuildFederation(data, mc, seed);
  SplitNNConfig sc;
  sc.selection = EncoderSelection::kLocalAndCross;
  sc.sgd = {0.05, 0.9, 1e-3};
  SplitNNTrainer trainer(split, data, sc, seed, mode);

  std::vector<PartyModel> mono;
  for (const PartyModel& p : split) mono.push_back(p.Clone());
  std::vector<Tensor> params;
  for (size_t p = 0; p < parties; ++p) {
    for (const Tensor& t : TensorsOf(EncoderParameters(mono[p], sc.selection))) params.push_back(t);
  }
  for (const Tensor& t : TensorsOf(mono[kActiveParty].Parameters(ParamGroup::kTop))) params.push_back(t);
  SgdOptimizer opt(params, sc.sgd);

  SplitOracleResult res;
  Rng rng(seed);
  std::vector<SampleId> pool = data.labeled_ids;
  for (size_t b = 0; b < batches; ++b) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::vector<SampleId> batch(pool.begin(), pool.begin() + 16);
    const double split_loss = trainer.TrainStep(batch);

    std::vector<Tensor> reps;
    for (size_t p = 0; p < parties; ++p) {
      reps.push_back(mono[p].Representation(data.parties[p].Gather(batch), sc.selection));
    }
    const std::vector<int64_t> labels = data.LabelsOf(batch);
    Tensor loss = SoftmaxCrossEntropy(mono[kActiveParty].TopForward(ConcatCols(reps)), labels);
    loss.Backward();
    res.max_loss_diff = std::max(res.max_loss_diff, std::abs(loss.item() - split_loss));
    for (size_t p = 1; p < parties; ++p) {
      const Matrix got = trainer.last_received_gradients()[p];
      const Matrix want = reps[p].grad_matrix();
      for (size_t k = 0; k < want.size(); ++k) {
        res.max_gradient_diff = std::max(res.max_gradient_diff, std::abs(got.data[k] - want.data[k]));
      }
    }
    opt.Step();
    for (size_t p = 0; p < parties; ++p) {
      res.max_param_diff =
          std::max(res.max_param_diff, MaxAbsDiff(split[p].AllParameters(), mono[p].AllParameters()));
    }
    ++res.batches;
  }
  return res;
}

std::string ScratchDir(const std::string& name) {
  namespace fs = std::filesystem;
  std::random_device rd;
  const fs::path dir = fs::temp_directory_path() / ("vflhssl_" + name + "_" + std::to_string(rd()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace vflhssl::testing
