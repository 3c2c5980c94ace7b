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
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "support/fixtures.h"
#include "support/grad_check.h"
#include "vflhssl/checkpoint.h"
#include "vflhssl/errors.h"
#include "vflhssl/nn.h"

namespace vflhssl {
namespace {

using testing::RandomMatrix;

FeatureSchema Continuous(size_t cols) { return FeatureSchema{std::vector<size_t>(cols, 0)}; }

FeatureSchema Mixed() { return FeatureSchema{{0, 4, 0, 3}}; }

ModelConfig SmallConfig(SslKind kind = SslKind::kSimSiam) {
  ModelConfig c = testing::TinyModel(kind);
  c.top_input_dim = 12;
  c.num_classes = 3;
  return c;
}

std::vector<std::pair<std::string, std::vector<size_t>>> Shapes(const NamedParameters& ps) {
  std::vector<std::pair<std::string, std::vector<size_t>>> out;
  for (const auto& p : ps) out.push_back({p.name, {p.tensor.rows(), p.tensor.cols()}});
  return out;
}

TEST(PartyModel, SharedTopShapesAgreeAcrossParties) {
  Rng r0(1), r1(2);
  const PartyModel a = BuildPartyModel(SmallConfig(), Continuous(5), PartyRole::kActive, r0);
  const PartyModel b = BuildPartyModel(SmallConfig(), Continuous(9), PartyRole::kPassive, r1);
  EXPECT_EQ(Shapes(a.SharedTopParameters()), Shapes(b.SharedTopParameters()));
  EXPECT_FALSE(a.SharedTopParameters().empty());
}

TEST(PartyModel, PassivePartyHasNoTop) {
  Rng rng(1);
  const PartyModel p = BuildPartyModel(SmallConfig(), Continuous(5), PartyRole::kPassive, rng);
  EXPECT_FALSE(p.has_top());
  EXPECT_TRUE(p.Parameters(ParamGroup::kTop).empty());
  Rng rng2(1);
  const PartyModel a = BuildPartyModel(SmallConfig(), Continuous(5), PartyRole::kActive, rng2);
  EXPECT_TRUE(a.has_top());
}

TEST(PartyModel, MocoCrossPredictorIsIdentity) {
  Rng rng(1);
  const PartyModel p = BuildPartyModel(SmallConfig(SslKind::kMoco), Continuous(5), PartyRole::kActive, rng);
  EXPECT_TRUE(p.Parameters(ParamGroup::kCrossPredictor).empty());
  EXPECT_TRUE(p.Parameters(ParamGroup::kLocalPredictor).empty());
  const Tensor z = Tensor::Constant(RandomMatrix(3, 6, 2));
  EXPECT_EQ(p.CrossPredict(z).matrix(), z.matrix());
  EXPECT_TRUE(p.has_target());
}

TEST(PartyModel, SimSiamHasNoTargetCopy) {
  Rng rng(1);
  const PartyModel p = BuildPartyModel(SmallConfig(), Continuous(5), PartyRole::kActive, rng);
  EXPECT_FALSE(p.has_target());
  EXPECT_TRUE(p.Parameters(ParamGroup::kTarget).empty());
  const Matrix x = RandomMatrix(4, 5, 3);
  EXPECT_EQ(p.TargetProjection(x).matrix(), p.LocalProjection(x).matrix());
}

TEST(PartyModel, SameSeedGivesIdenticalWeights) {
  Rng r0(42), r1(42);
  const PartyModel a = BuildPartyModel(SmallConfig(SslKind::kByol), Mixed(), PartyRole::kActive, r0);
  const PartyModel b = BuildPartyModel(SmallConfig(SslKind::kByol), Mixed(), PartyRole::kActive, r1);
  EXPECT_EQ(ParameterFingerprint(a.AllParameters()), ParameterFingerprint(b.AllParameters()));
  EXPECT_EQ(testing::MaxAbsDiff(a.AllParameters(), b.AllParameters()), 0.0);
}

TEST(PartyModel, CloneIsDeep) {
  Rng rng(3);
  const PartyModel a = BuildPartyModel(SmallConfig(), Mixed(), PartyRole::kActive, rng);
  PartyModel b = a.Clone();
  EXPECT_EQ(testing::MaxAbsDiff(a.AllParameters(), b.AllParameters()), 0.0);
  b.AllParameters()[0].tensor.mutable_values()[0] += 1.0;
  EXPECT_EQ(testing::MaxAbsDiff(a.AllParameters(), b.AllParameters()), 1.0);
}

TEST(PartyModel, RepresentationWidths) {
  Rng rng(4);
  const ModelConfig cfg = SmallConfig();
  const PartyModel p = BuildPartyModel(cfg, Mixed(), PartyRole::kActive, rng);
  const Matrix x = Matrix::FromRows({{0.1, 2, -1, 0}, {0.3, 4, 0.5, 3}});
  EXPECT_EQ(p.Representation(x, EncoderSelection::kLocal).cols(), cfg.backbone.back());
  EXPECT_EQ(p.Representation(x, EncoderSelection::kCross).cols(), cfg.backbone.back());
  EXPECT_EQ(p.Representation(x, EncoderSelection::kLocalAndCross).cols(), 2 * cfg.backbone.back());
  EXPECT_EQ(p.representation_dim(EncoderSelection::kLocalAndCross), 2 * cfg.backbone.back());
}

TEST(PartyModel, ParameterGroupsPartitionOnlineWeights) {
  Rng rng(5);
  const PartyModel p = BuildPartyModel(SmallConfig(SslKind::kByol), Mixed(), PartyRole::kActive, rng);
  size_t grouped = 0;
  for (ParamGroup g : {ParamGroup::kLocalBottom, ParamGroup::kLocalTop, ParamGroup::kLocalProjector,
                       ParamGroup::kLocalPredictor, ParamGroup::kCrossEncoder, ParamGroup::kCrossProjector,
                       ParamGroup::kCrossPredictor, ParamGroup::kTarget, ParamGroup::kTop}) {
    grouped += p.Parameters(g).size();
  }
  EXPECT_EQ(grouped, p.AllParameters().size());
}

TEST(PartyModel, BadConfigRejected) {
  ModelConfig c = SmallConfig();
  c.local_top_layers = 2;
  Rng rng(1);
  EXPECT_THROW(BuildPartyModel(c, Continuous(3), PartyRole::kActive, rng), ConfigError);
  c = SmallConfig();
  c.predictor = {4, 5};
  EXPECT_THROW(BuildPartyModel(c, Continuous(3), PartyRole::kActive, rng), ConfigError);
}

TEST(Init, GlorotWeightsCenteredAndBiasZero) {
  Rng rng(11);
  const DenseLayer layer(100, 100, Activation::kRelu, rng);
  const auto& w = layer.weight().values();
  ASSERT_EQ(w.size(), 10000u);
  double mean = 0.0;
  const double bound = std::sqrt(6.0 / 200.0);
  for (double v : w) {
    mean += v / w.size();
    EXPECT_LE(std::abs(v), bound);
  }
  const double sigma_of_mean = bound / std::sqrt(3.0) / std::sqrt(10000.0);
  EXPECT_LT(std::abs(mean), 3.0 * sigma_of_mean);
  for (double b : layer.bias().values()) EXPECT_EQ(b, 0.0);
}

TEST(Ema, MomentumOneKeepsTarget) {
  Tensor online = Tensor::Parameter(Matrix(1, 2, 1.0));
  Tensor target = Tensor::Constant(Matrix(1, 2, 0.25));
  EmaTracker ema(1.0, {{online, target}});
  ema.Update();
  EXPECT_EQ(target.values(), (std::vector<double>{0.25, 0.25}));
}

TEST(Ema, MomentumZeroCopiesOnline) {
  Tensor online = Tensor::Parameter(Matrix(1, 2, 1.5));
  Tensor target = Tensor::Constant(Matrix(1, 2, 0.25));
  EmaTracker ema(0.0, {{online, target}});
  ema.Update();
  EXPECT_EQ(target.values(), online.values());
}

TEST(Ema, TwoUpdatesHandUnroll) {
  Tensor online = Tensor::Parameter(Matrix(1, 1, 1.0));
  Tensor target = Tensor::Constant(Matrix(1, 1, 0.0));
  EmaTracker ema(0.99, {{online, target}});
  ema.Update();
  ema.Update();
  EXPECT_NEAR(target.item(), 0.0199, 1e-15);
}

TEST(Ema, RejectsOutOfRangeMomentum) {
  EXPECT_THROW(EmaTracker(1.5, {}), ConfigError);
}

Checkpoint SampleCheckpoint() {
  Rng rng(8);
  const PartyModel p = BuildPartyModel(SmallConfig(SslKind::kByol), Mixed(), PartyRole::kActive, rng);
  Checkpoint c;
  c.parties.push_back(ToBlobs(p.AllParameters()));
  c.parties.push_back(ToBlobs(p.SharedTopParameters()));
  c.config_fingerprint = "abc123";
  c.seeds = {3, 4};
  c.meta = {{"completed_iterations", 2}};
  return c;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const std::string dir = testing::ScratchDir("ckpt");
  const std::string a = dir + "/a.bin", b = dir + "/b.bin";
  const Checkpoint c = SampleCheckpoint();
  SaveCheckpoint(a, c);
  const Checkpoint loaded = LoadCheckpoint(a);
  EXPECT_EQ(loaded, c);
  SaveCheckpoint(b, loaded);
  EXPECT_EQ(ReadFile(a), ReadFile(b));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptMagicIsFormatError) {
  std::string bytes = EncodeCheckpoint(SampleCheckpoint());
  bytes[0] = 'X';
  EXPECT_THROW(DecodeCheckpoint(bytes), FormatError);
}

TEST(Checkpoint, TruncationAndTrailingBytesRejected) {
  const std::string bytes = EncodeCheckpoint(SampleCheckpoint());
  EXPECT_THROW(DecodeCheckpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(DecodeCheckpoint(bytes + "x"), FormatError);
}

TEST(Checkpoint, UnknownVersionRejected) {
  std::string bytes = EncodeCheckpoint(SampleCheckpoint());
  bytes[4] = 9;
  EXPECT_THROW(DecodeCheckpoint(bytes), VersionError);
}

TEST(Checkpoint, FingerprintMismatchRejected) {
  const std::string dir = testing::ScratchDir("ckpt_fp");
  SaveCheckpoint(dir + "/c.bin", SampleCheckpoint());
  EXPECT_NO_THROW(LoadCheckpoint(dir + "/c.bin", std::string("abc123")));
  EXPECT_THROW(LoadCheckpoint(dir + "/c.bin", std::string("other")), FingerprintError);
  EXPECT_THROW(LoadCheckpoint(dir + "/missing.bin"), DataError);
  std::filesystem::remove_all(dir);
}

TEST(ParameterBlob, RoundTripAndApply) {
  Rng r0(1), r1(2);
  const PartyModel a = BuildPartyModel(SmallConfig(), Mixed(), PartyRole::kActive, r0);
  const PartyModel b = BuildPartyModel(SmallConfig(), Mixed(), PartyRole::kActive, r1);
  const auto blobs = DecodeParameterBlob(EncodeParameterBlob(ToBlobs(a.SharedTopParameters())));
  ApplyBlobs(blobs, b.SharedTopParameters());
  EXPECT_EQ(testing::MaxAbsDiff(a.SharedTopParameters(), b.SharedTopParameters()), 0.0);
  auto wrong = blobs;
  wrong.pop_back();
  EXPECT_THROW(ApplyBlobs(wrong, b.SharedTopParameters()), DimensionError);
}

}  // namespace
}  // namespace vflhssl
