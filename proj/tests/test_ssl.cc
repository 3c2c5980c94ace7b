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

#include "support/grad_check.h"
#include "vflhssl/errors.h"
#include "vflhssl/ssl.h"

namespace vflhssl {
namespace {

using testing::RandomMatrix;

Tensor C(const Matrix& m) { return Tensor::Constant(m); }

TEST(SimSiamLoss, IdenticalRowsGiveMinusOne) {
  const Matrix p = RandomMatrix(5, 4, 1);
  EXPECT_NEAR(LossSimSiam(C(p), C(p)).item(), -1.0, 1e-12);
}

TEST(SimSiamLoss, OrthogonalRowsGiveZero) {
  EXPECT_NEAR(LossSimSiam(C(Matrix::FromRows({{1, 0}, {0, 2}})), C(Matrix::FromRows({{0, 3}, {-1, 0}}))).item(),
              0.0, 1e-15);
}

TEST(SimSiamLoss, AntiParallelGivesPlusOne) {
  EXPECT_NEAR(LossSimSiam(C(Matrix::FromRows({{1, 0}})), C(Matrix::FromRows({{-1, 0}}))).item(), 1.0, 1e-15);
}

TEST(ByolLoss, IdenticalRowsGiveZero) {
  const Matrix p = RandomMatrix(5, 4, 2);
  EXPECT_NEAR(LossByol(C(p), C(p)).item(), 0.0, 1e-12);
}

TEST(ByolLoss, AntiParallelGivesFour) {
  EXPECT_NEAR(LossByol(C(Matrix::FromRows({{2, 1}})), C(Matrix::FromRows({{-4, -2}}))).item(), 4.0, 1e-12);
}

TEST(ByolLoss, RelatesToSimSiam) {
  for (uint64_t s = 0; s < 10; ++s) {
    const Matrix p = RandomMatrix(6, 5, s), z = RandomMatrix(6, 5, s + 100);
    const double byol = LossByol(C(p), C(z)).item();
    const double simsiam = LossSimSiam(C(p), C(z)).item();
    EXPECT_NEAR(byol - (2.0 + 2.0 * simsiam), 0.0, 1e-12);
  }
}

TEST(MocoLoss, EmptyQueueGivesZero) {
  const Matrix z = RandomMatrix(4, 3, 3);
  NegativeQueue q(8, 3);
  EXPECT_NEAR(LossMoco(C(z), C(RandomMatrix(4, 3, 4)), q, 0.5).item(), 0.0, 1e-12);
}

TEST(MocoLoss, QueueOfPositiveCopiesGivesLogNPlusOne) {
  const Matrix z = Matrix::FromRows({{0.3, -1.2, 0.5}});
  for (size_t n : {1, 3, 10}) {
    NegativeQueue q(16, 3);
    for (size_t i = 0; i < n; ++i) q.Enqueue(z);
    EXPECT_NEAR(LossMoco(C(z), C(z), q, 0.5).item(), std::log(n + 1.0), 1e-9) << n;
  }
}

TEST(MocoLoss, MatchesDirectSoftmax) {
  const Matrix z1 = RandomMatrix(2, 2, 5), z2 = RandomMatrix(2, 2, 6), negs = RandomMatrix(3, 2, 7);
  const double tau = 0.5;
  NegativeQueue q(3, 2);
  q.Enqueue(negs);
  auto unit = [](double a, double b) {
    const double n = std::sqrt(a * a + b * b);
    return std::pair{a / n, b / n};
  };
  double expected = 0.0;
  for (size_t i = 0; i < 2; ++i) {
    const auto [qa, qb] = unit(z1(i, 0), z1(i, 1));
    const auto [ka, kb] = unit(z2(i, 0), z2(i, 1));
    const double pos = std::exp((qa * ka + qb * kb) / tau);
    double denom = pos;
    for (size_t j = 0; j < 3; ++j) {
      const auto [na, nb] = unit(negs(j, 0), negs(j, 1));
      denom += std::exp((qa * na + qb * nb) / tau);
    }
    expected += -std::log(pos / denom) / 2.0;
  }
  EXPECT_NEAR(LossMoco(C(z1), C(z2), q, tau).item(), expected, 1e-12);
}

TEST(MocoLoss, WidthMismatchThrows) {
  NegativeQueue q(4, 2);
  q.Enqueue(RandomMatrix(1, 2, 1));
  EXPECT_THROW(LossMoco(C(RandomMatrix(2, 3, 1)), C(RandomMatrix(2, 3, 2)), q, 0.5), DimensionError);
}

TEST(SslLoss, DispatchCoversEveryKind) {
  const Matrix p = RandomMatrix(4, 3, 8), z = RandomMatrix(4, 3, 9);
  NegativeQueue q(4, 3);
  q.Enqueue(RandomMatrix(2, 3, 10));
  for (SslKind kind : {SslKind::kSimSiam, SslKind::kByol, SslKind::kMoco}) {
    SslVariant v;
    v.kind = kind;
    const double got = SslLoss(v, C(p), C(z), &q).item();
    double want = 0.0;
    switch (kind) {
      case SslKind::kSimSiam: want = LossSimSiam(C(p), C(z)).item(); break;
      case SslKind::kByol: want = LossByol(C(p), C(z)).item(); break;
      case SslKind::kMoco: want = LossMoco(C(p), C(z), q, v.temperature).item(); break;
    }
    EXPECT_EQ(got, want) << ToString(kind);
    EXPECT_EQ(ParseSslKind(ToString(kind)), kind);
  }
  SslVariant moco;
  moco.kind = SslKind::kMoco;
  EXPECT_THROW(SslLoss(moco, C(p), C(z), nullptr), Error);
}

TEST(SslLoss, TargetProducersGetNoGradient) {
  NegativeQueue q(4, 3);
  q.Enqueue(RandomMatrix(2, 3, 10));
  for (SslKind kind : {SslKind::kSimSiam, SslKind::kByol, SslKind::kMoco}) {
    SslVariant v;
    v.kind = kind;
    Tensor p = Tensor::Parameter(RandomMatrix(4, 3, 1));
    Tensor w = Tensor::Parameter(RandomMatrix(3, 3, 2));
    const Tensor z = MatMul(Tensor::Constant(RandomMatrix(4, 3, 3)), w);
    SslLoss(v, p, z, &q).Backward();
    for (double g : w.grad_or_zeros()) EXPECT_EQ(g, 0.0) << ToString(kind);
    EXPECT_TRUE(p.has_grad());
  }
}

TEST(NegativeQueue, EvictsOldestFirst) {
  NegativeQueue q(3, 2);
  q.Enqueue(Matrix::FromRows({{1, 0}, {0, 1}}));
  q.Enqueue(Matrix::FromRows({{3, 4}, {-1, 0}}));
  ASSERT_EQ(q.size(), 3u);
  const Matrix m = q.AsMatrix();
  EXPECT_DOUBLE_EQ(m(0, 1), 1.0);
  EXPECT_NEAR(m(1, 0), 0.6, 1e-15);
  EXPECT_DOUBLE_EQ(m(2, 0), -1.0);
}

TEST(NegativeQueue, RestoreKeepsRawEntries) {
  NegativeQueue q(3, 2);
  const Matrix rows = Matrix::FromRows({{0.6, 0.8}, {1, 0}});
  q.Restore(rows);
  EXPECT_EQ(q.AsMatrix(), rows);
}

}  // namespace
}  // namespace vflhssl
