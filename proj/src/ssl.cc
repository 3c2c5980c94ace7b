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
#include "vflhssl/ssl.h"

#include <cmath>

#include "vflhssl/errors.h"

namespace vflhssl {

std::string ToString(SslKind kind) {
  switch (kind) {
    case SslKind::kSimSiam:
      return "simsiam";
    case SslKind::kByol:
      return "byol";
    case SslKind::kMoco:
      return "moco";
  }
  return "unknown";
}

SslKind ParseSslKind(const std::string& name) {
  if (name == "simsiam") return SslKind::kSimSiam;
  if (name == "byol") return SslKind::kByol;
  if (name == "moco") return SslKind::kMoco;
  throw ConfigError("unknown SSL variant '" + name + "'");
}

void SslVariant::Validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

void NegativeQueue::Restore(const Matrix& rows) {
  if (rows.rows > 0 && rows.cols != dim_) {
    throw DimensionError("queue expects rows of width " + std::to_string(dim_) +
                         ", got " + ShapeString(rows.rows, rows.cols));
  }
  if (rows.rows > capacity_) throw DimensionError("restored queue exceeds its capacity");
  entries_.clear();
  for (size_t r = 0; r < rows.rows; ++r) {
    auto src = rows.row(r);
    entries_.emplace_back(src.begin(), src.end());
  }
}

void NegativeQueue::Enqueue(const Matrix& rows) {
  if (rows.cols != dim_) {
    throw DimensionError("queue expects rows of width " + std::to_string(dim_) +
                         ", got " + ShapeString(rows.rows, rows.cols));
  }
  if (capacity_ == 0) return;
  for (size_t r = 0; r < rows.rows; ++r) {
    auto src = rows.row(r);
    double sq = 0.0;
    for (double v : src) sq += v * v;
    const double denom = std::max(std::sqrt(sq), kNormEpsilon);
    std::vector<double> entry(dim_);
    for (size_t j = 0; j < dim_; ++j) entry[j] = src[j] / denom;
    entries_.push_back(std::move(entry));
    if (entries_.size() > capacity_) entries_.pop_front();
  }
}

Matrix NegativeQueue::AsMatrix() const {
  Matrix m(entries_.size(), dim_);
  for (size_t r = 0; r < entries_.size(); ++r)
    std::copy(entries_[r].begin(), entries_[r].end(), m.row(r).begin());
  return m;
}

namespace {

void RequireMatching(const char* name, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(name) + ": shape mismatch " +
                         ShapeString(a.rows(), a.cols()) + " vs " +
                         ShapeString(b.rows(), b.cols()));
  }
}

Tensor MeanCosine(const Tensor& p, const Tensor& z_target) {
  return Mean(RowDot(RowL2Normalize(p), RowL2Normalize(StopGradient(z_target))));
}

}  // namespace

Tensor LossSimSiam(const Tensor& p, const Tensor& z_target) {
  RequireMatching("simsiam loss", p, z_target);
  return Scale(MeanCosine(p, z_target), -1.0);
}

Tensor LossByol(const Tensor& p, const Tensor& z_target) {
  RequireMatching("byol loss", p, z_target);
  return AddScalar(Scale(MeanCosine(p, z_target), -2.0), 2.0);
}

Tensor LossMoco(const Tensor& z1, const Tensor& z2_target,
                const NegativeQueue& queue, double temperature) {
  RequireMatching("moco loss", z1, z2_target);
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  const Tensor q = RowL2Normalize(z1);
  const Tensor k = RowL2Normalize(StopGradient(z2_target));
  Tensor logits = RowDot(q, k);
  if (queue.size() > 0) {
    if (queue.dim() != z1.cols()) {
      throw DimensionError("moco queue width " + std::to_string(queue.dim()) +
                           " does not match representation width " +
                           std::to_string(z1.cols()));
    }
    const Tensor negatives = Tensor::Constant(queue.AsMatrix());
    logits = ConcatCols({logits, MatMul(q, Transpose(negatives))});
  }
  logits = Scale(logits, 1.0 / temperature);
  // The positive is always column 0.
  const std::vector<int64_t> labels(z1.rows(), 0);
  return SoftmaxCrossEntropy(logits, labels);
}

Tensor SslLoss(const SslVariant& variant, const Tensor& p, const Tensor& z_target,
               const NegativeQueue* queue) {
  const Tensor target = StopGradient(z_target);
  switch (variant.kind) {
    case SslKind::kSimSiam:
      return LossSimSiam(p, target);
    case SslKind::kByol:
      return LossByol(p, target);
    case SslKind::kMoco:
      if (queue == nullptr) throw ConfigError("moco loss requires a negative queue");
      return LossMoco(p, target, *queue, variant.temperature);
  }
  throw ConfigError("unhandled SSL variant");
}

}  // namespace vflhssl
