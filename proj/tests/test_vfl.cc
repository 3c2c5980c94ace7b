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

#include <atomic>
#include <cmath>

#include "support/fixtures.h"
#include "support/grad_check.h"
#include "vflhssl/errors.h"
#include "vflhssl/privacy.h"
#include "vflhssl/transport.h"
#include "vflhssl/vfl.h"

namespace vflhssl {
namespace {

using testing::RandomMatrix;

TEST(Wire, ReprRoundTripIsBitIdentical) {
  WireMessage m = WireMessage::Shaped(MsgType::kRepr, RandomMatrix(3, 5, 1));
  m.round = 7;
  m.sender = 2;
  const std::string frame = EncodeFrame(m);
  const WireMessage back = DecodeFrame(frame);
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.AsMatrix(), RandomMatrix(3, 5, 1));
  EXPECT_EQ(EncodeFrame(back), frame);
  EXPECT_EQ(frame.substr(0, 4), "VFLM");
}

TEST(Wire, ModelBlobRoundTrip) {
  WireMessage m = WireMessage::ModelBlob(std::string("\x00\x01\xffpayload", 10));
  m.round = 1;
  const WireMessage back = DecodeFrame(EncodeFrame(m));
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.dims, std::vector<uint32_t>{10});
}

TEST(Wire, MalformedFramesAreProtocolErrors) {
  WireMessage m = WireMessage::Shaped(MsgType::kGrad, RandomMatrix(2, 2, 1));
  const std::string frame = EncodeFrame(m);
  std::string bad_magic = frame;
  bad_magic[0] = 'X';
  std::string bad_version = frame;
  bad_version[4] = 7;
  std::string bad_type = frame;
  bad_type[6] = 9;
  for (const std::string& f : {bad_magic, bad_version, bad_type, frame.substr(0, frame.size() - 1),
                               frame + "z", std::string("VF")}) {
    EXPECT_THROW(DecodeFrame(f), ProtocolError);
  }
}

TEST(Network, FifoOrderOverThousandMessages) {
  Network net(2, false);
  for (int i = 0; i < 1000; ++i) net.Send(0, 1, WireMessage::Shaped(MsgType::kRepr, Matrix(1, 1, i)));
  for (int i = 0; i < 1000; ++i) {
    const WireMessage m = net.Recv(1, 0, MsgType::kRepr);
    EXPECT_EQ(m.values[0], static_cast<double>(i));
    EXPECT_EQ(m.round, static_cast<uint32_t>(i + 1));
  }
  EXPECT_EQ(net.stats().count(MsgType::kRepr), 1000u);
  EXPECT_EQ(net.SentBy(0, MsgType::kRepr), 1000u);
}

TEST(Network, OutOfOrderRoundIsProtocolError) {
  Network net(2, false);
  WireMessage late = WireMessage::Shaped(MsgType::kRepr, Matrix(1, 1, 1.0));
  late.round = 5;
  WireMessage early = late;
  early.round = 3;
  net.SendRaw(0, 1, EncodeFrame(late));
  net.SendRaw(0, 1, EncodeFrame(early));
  EXPECT_NO_THROW(net.Recv(1, 0, MsgType::kRepr));
  EXPECT_THROW(net.Recv(1, 0, MsgType::kRepr), ProtocolError);
}

TEST(Network, WrongTypeSenderOrEmptyChannel) {
  Network net(3, false);
  net.Send(0, 1, WireMessage::Shaped(MsgType::kGrad, Matrix(1, 1, 1.0)));
  EXPECT_THROW(net.Recv(1, 0, MsgType::kRepr), ProtocolError);
  EXPECT_THROW(net.Recv(1, 2, MsgType::kRepr), ProtocolError);
  WireMessage spoofed = WireMessage::Shaped(MsgType::kRepr, Matrix(1, 1, 1.0));
  spoofed.sender = 2;
  spoofed.round = 1;
  net.SendRaw(0, 2, EncodeFrame(spoofed));
  EXPECT_THROW(net.Recv(2, 0, MsgType::kRepr), ProtocolError);
  EXPECT_THROW(net.Send(0, 3, WireMessage::Shaped(MsgType::kRepr, Matrix(1, 1, 1.0))), Error);
}

TEST(Network, CloseWakesBlockedReceiver) {
  Network net(2, true);
  std::atomic<bool> closed_seen{false};
  std::thread t([&] {
    try {
      net.Recv(1, 0, MsgType::kRepr);
    } catch (const ChannelClosedError&) {
      closed_seen = true;
    }
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  net.Close();
  t.join();
  EXPECT_TRUE(closed_seen);
  EXPECT_THROW(net.Send(0, 1, WireMessage::Shaped(MsgType::kRepr, Matrix(1, 1, 1.0))), ChannelClosedError);
}

TEST(RunParticipants, ThreadedPingPong) {
  for (ExecutionMode mode : {ExecutionMode::kScheduler, ExecutionMode::kThreaded}) {
    Network net(2, mode == ExecutionMode::kThreaded);
    std::vector<double> got(2, 0.0);
    RunParticipants(mode, net, 2, 2, [&](size_t p, size_t phase) {
      if (phase == 0 && p == 0) net.Send(0, 1, WireMessage::Shaped(MsgType::kRepr, Matrix(1, 1, 4.0)));
      if (phase == 0 && p == 1) {
        const double v = net.Recv(1, 0, MsgType::kRepr).values[0];
        got[1] = v;
        net.Send(1, 0, WireMessage::Shaped(MsgType::kGrad, Matrix(1, 1, v * 2)));
      }
      if (phase == 1 && p == 0) got[0] = net.Recv(0, 1, MsgType::kGrad).values[0];
    });
    EXPECT_EQ(got[1], 4.0) << ToString(mode);
    EXPECT_EQ(got[0], 8.0) << ToString(mode);
  }
}

TEST(RunParticipants, ErrorPropagatesWithoutDeadlock) {
  Network net(2, true);
  EXPECT_THROW(RunParticipants(ExecutionMode::kThreaded, net, 2, 1,
                               [&](size_t p, size_t) {
                                 if (p == 0) throw ValidationError("boom");
                                 net.Recv(1, 0, MsgType::kRepr);
                               }),
               ValidationError);
}

TEST(Aggregator, ConcatMeanMax) {
  const Tensor a = Tensor::Constant(Matrix::FromRows({{1, 5}, {2, -1}}));
  const Tensor b = Tensor::Constant(Matrix::FromRows({{3, 1}, {0, 0}}));
  EXPECT_EQ(Aggregator(AggregatorKind::kConcat).Combine({a, b}).matrix(),
            Matrix::FromRows({{1, 5, 3, 1}, {2, -1, 0, 0}}));
  EXPECT_EQ(Aggregator(AggregatorKind::kMean).Combine({a, b}).matrix(), Matrix::FromRows({{2, 3}, {1, -0.5}}));
  EXPECT_EQ(Aggregator(AggregatorKind::kMax).Combine({a, b}).matrix(), Matrix::FromRows({{3, 5}, {2, 0}}));
  EXPECT_EQ(Aggregator(AggregatorKind::kConcat).OutputDim({2, 3}), 5u);
  EXPECT_EQ(Aggregator(AggregatorKind::kMean).OutputDim({3, 3}), 3u);
  EXPECT_THROW(Aggregator(AggregatorKind::kMean).OutputDim({2, 3}), DimensionError);
  EXPECT_THROW(Aggregator(AggregatorKind::kMax).Combine({a, Tensor::Zeros(2, 3)}), DimensionError);
  EXPECT_THROW(Aggregator(AggregatorKind::kConcat).Combine({a, Tensor::Zeros(3, 2)}), DimensionError);
  for (AggregatorKind k : {AggregatorKind::kConcat, AggregatorKind::kMean, AggregatorKind::kMax})
    EXPECT_EQ(ParseAggregatorKind(ToString(k)), k);
}

TEST(SplitNN, MatchesMonolithicModel) {
  for (size_t parties : {2, 3}) {
    const auto r = testing::CompareSplitWithMonolithic(parties, 20, 5);
    EXPECT_EQ(r.batches, 20u);
    EXPECT_LE(r.max_param_diff, 1e-10) << parties;
    EXPECT_LE(r.max_gradient_diff, 1e-10) << parties;
    EXPECT_LE(r.max_loss_diff, 1e-10) << parties;
  }
}

TEST(SplitNN, ThreadedMatchesMonolithicModel) {
  const auto r = testing::CompareSplitWithMonolithic(3, 8, 6, ExecutionMode::kThreaded);
  EXPECT_LE(r.max_param_diff, 1e-10);
  EXPECT_LE(r.max_gradient_diff, 1e-10);
}

TEST(SplitNN, SinglePartyLossDecreases) {
  SyntheticSpec s = testing::TinySpec(1, 8);
  s.classes = 2;
  s.class_separation = 3.0;
  const VerticalDataset data = GenerateSynthetic(s);
  std::vector<PartyModel> parties = BuildFederation(data, testing::TinyModel(), 1);
  SplitNNConfig cfg;
  cfg.sgd = {0.05, 0.9, 0.0};
  SplitNNTrainer trainer(parties, data, cfg, 1);
  const std::vector<SampleId> batch = data.labeled_ids;
  const double first = trainer.TrainStep(batch);
  double last = first;
  for (int i = 1; i < 50; ++i) last = trainer.TrainStep(batch);
  EXPECT_LT(last, 0.5 * first);
  EXPECT_EQ(trainer.network().stats().count(MsgType::kRepr), 0u);
}

TEST(SplitNN, MessagesPerStep) {
  const VerticalDataset data = GenerateSynthetic(testing::TinySpec(3));
  std::vector<PartyModel> parties = BuildFederation(data, testing::TinyModel(), 1);
  SplitNNTrainer trainer(parties, data, SplitNNConfig{}, 1);
  const std::vector<SampleId> batch(data.labeled_ids.begin(), data.labeled_ids.begin() + 10);
  trainer.TrainStep(batch);
  trainer.TrainStep(batch);
  EXPECT_EQ(trainer.network().stats().count(MsgType::kRepr), 4u);
  EXPECT_EQ(trainer.network().stats().count(MsgType::kGrad), 4u);
  EXPECT_EQ(trainer.steps(), 2u);
}

TEST(SplitNN, RejectsUnlabeledIds) {
  const VerticalDataset data = GenerateSynthetic(testing::TinySpec());
  std::vector<PartyModel> parties = BuildFederation(data, testing::TinyModel(), 1);
  SplitNNTrainer trainer(parties, data, SplitNNConfig{}, 1);
  const std::vector<SampleId> batch = {data.test_ids.front()};
  EXPECT_THROW(trainer.TrainStep(batch), ValidationError);
}

TEST(SplitNN, ZeroProtectionMatchesUnprotected) {
  const VerticalDataset data = GenerateSynthetic(testing::TinySpec());
  std::vector<PartyModel> a = BuildFederation(data, testing::TinyModel(), 2);
  std::vector<PartyModel> b = BuildFederation(data, testing::TinyModel(), 2);
  SplitNNConfig plain;
  SplitNNConfig protected_cfg;
  protected_cfg.lambda_f = 0.0;
  SplitNNTrainer ta(a, data, plain, 3), tb(b, data, protected_cfg, 3);
  Rng ra(4), rb(4);
  ta.TrainEpoch(data.labeled_ids, ra);
  tb.TrainEpoch(data.labeled_ids, rb);
  for (size_t p = 0; p < 2; ++p) EXPECT_EQ(testing::MaxAbsDiff(a[p].AllParameters(), b[p].AllParameters()), 0.0);
  // A positive amplifier perturbs the returned gradient.
  std::vector<PartyModel> c = BuildFederation(data, testing::TinyModel(), 2);
  SplitNNConfig noisy;
  noisy.lambda_f = 1.0;
  SplitNNTrainer tc(c, data, noisy, 3);
  Rng rc(4);
  tc.TrainEpoch(data.labeled_ids, rc);
  EXPECT_GT(testing::MaxAbsDiff(a[1].AllParameters(), c[1].AllParameters()), 0.0);
}

TEST(SplitNN, PredictionsMatchMonolithicAndAreDeterministic) {
  const VerticalDataset data = GenerateSynthetic(testing::TinySpec(3));
  std::vector<PartyModel> parties = BuildFederation(data, testing::TinyModel(), 7);
  SplitNNConfig cfg;
  cfg.selection = EncoderSelection::kLocalAndCross;
  SplitNNTrainer trainer(parties, data, cfg, 7);
  Rng rng(1);
  trainer.TrainEpoch(data.labeled_ids, rng);
  const Matrix logits = trainer.Logits(data.test_ids);
  EXPECT_EQ(trainer.Logits(data.test_ids), logits);
  std::vector<Tensor> reps;
  for (size_t p = 0; p < 3; ++p) reps.push_back(parties[p].Representation(data.parties[p].Gather(data.test_ids), cfg.selection));
  const Matrix mono = parties[0].TopForward(ConcatCols(reps)).matrix();
  EXPECT_EQ(mono, logits);
  const std::vector<int64_t> pred = trainer.Predict(data.test_ids);
  EXPECT_EQ(pred, ArgmaxRows(logits));
  Matrix scaled = logits;
  for (double& v : scaled.data) v *= 3.5;
  EXPECT_EQ(ArgmaxRows(scaled), pred);
}

}  // namespace
}  // namespace vflhssl
