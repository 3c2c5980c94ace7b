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
#ifndef VFLHSSL_SSL_H_
#define VFLHSSL_SSL_H_

#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "vflhssl/tensor.h"

namespace vflhssl {

enum class SslKind { kSimSiam, kByol, kMoco };

std::string ToString(SslKind kind);
SslKind ParseSslKind(const std::string& name);

struct SslVariant {
  SslKind kind = SslKind::kSimSiam;
  // InfoNCE temperature; MoCo only.
  double temperature = 0.5;
  // Negative dictionary size; MoCo only.
  size_t queue_capacity = 256;

  void Validate() const;
  bool has_target_encoder() const { return kind != SslKind::kSimSiam; }
  bool has_predictor() const { return kind != SslKind::kMoco; }
};

// FIFO dictionary of unit-norm negative keys.
class NegativeQueue {
 public:
  NegativeQueue() = default;
  NegativeQueue(size_t capacity, size_t dim) : capacity_(capacity), dim_(dim) {}

  // Rows are L2-normalized before they are stored; oldest entries are evicted
  // once capacity is exceeded.
  void Enqueue(const Matrix& rows);
  // Replaces the contents with already-normalized rows, oldest first.
  void Restore(const Matrix& rows);
  size_t size() const { return entries_.size(); }
  size_t capacity() const { return capacity_; }
  size_t dim() const { return dim_; }
  // Current entries stacked oldest-first as a [size x dim] matrix.
  Matrix AsMatrix() const;
  const std::deque<std::vector<double>>& entries() const { return entries_; }

 private:
  size_t capacity_ = 0;
  size_t dim_ = 0;
  std::deque<std::vector<double>> entries_;
};

// -cos(p, st(z)) averaged over rows.
Tensor LossSimSiam(const Tensor& p, const Tensor& z_target);
// 2 - 2 cos(p, st(z)) averaged over rows.
Tensor LossByol(const Tensor& p, const Tensor& z_target);
// InfoNCE with the positive st(z2) and the queue entries as negatives. Both
// sides are L2-normalized; all logits are divided by the temperature.
Tensor LossMoco(const Tensor& z1, const Tensor& z2_target,
                const NegativeQueue& queue, double temperature);

// Dispatches by variant. z_target always passes through StopGradient. `queue`
// must be non-null for MoCo and is not modified.
Tensor SslLoss(const SslVariant& variant, const Tensor& p, const Tensor& z_target,
               const NegativeQueue* queue);

}  // namespace vflhssl

#endif  // VFLHSSL_SSL_H_
