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
#ifndef VFLHSSL_TENSOR_H_
#define VFLHSSL_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vflhssl {

// Plain row-major dense matrix of doubles, without autodiff bookkeeping.
struct Matrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(size_t r, size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}
  Matrix(size_t r, size_t c, std::vector<double> values);
  static Matrix FromRows(const std::vector<std::vector<double>>& rows);

  double& operator()(size_t r, size_t c) { return data[r * cols + c]; }
  double operator()(size_t r, size_t c) const { return data[r * cols + c]; }
  std::span<double> row(size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(size_t r) const {
    return {data.data() + r * cols, cols};
  }
  size_t size() const { return data.size(); }

  bool operator==(const Matrix& other) const = default;
};

std::string ShapeString(size_t rows, size_t cols);

namespace internal {

struct Node {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> value;
  // Empty means "absent".
  std::vector<double> grad;
  bool requires_grad = false;
  bool stop_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this node's grad into its inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& EnsureGrad();
};

}  // namespace internal

// Handle to a node in a dynamically built autodiff graph. Copies share the
// same node. Parameters are leaves with requires_grad set; everything else is
// produced by the ops below and is rebuilt for each batch.
class Tensor {
 public:
  Tensor() = default;

  static Tensor Constant(Matrix m);
  static Tensor Parameter(Matrix m);
  static Tensor Zeros(size_t rows, size_t cols, bool requires_grad = false);
  static Tensor Scalar(double v);

  bool defined() const { return node_ != nullptr; }
  size_t rows() const { return node_->rows; }
  size_t cols() const { return node_->cols; }
  size_t size() const { return node_->value.size(); }

  const std::vector<double>& values() const { return node_->value; }
  std::vector<double>& mutable_values() { return node_->value; }
  double item() const;
  double at(size_t r, size_t c) const { return node_->value[r * cols() + c]; }
  Matrix matrix() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool stop_grad() const { return node_->stop_grad; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const { return node_->grad; }
  // The gradient, or zeros when absent.
  std::vector<double> grad_or_zeros() const;
  Matrix grad_matrix() const;
  void ZeroGrad() { node_->grad.clear(); }

  const char* op() const { return node_->op; }
  internal::Node* node() const { return node_.get(); }
  const std::shared_ptr<internal::Node>& shared_node() const { return node_; }

  // Runs reverse-mode accumulation from this tensor. Scalars are seeded with
  // 1; other shapes require an explicit upstream gradient.
  void Backward() const;
  void Backward(std::span<const double> upstream) const;

  explicit Tensor(std::shared_ptr<internal::Node> node)
      : node_(std::move(node)) {}

 private:
  std::shared_ptr<internal::Node> node_;
};

// Topologically ordered view of the nodes reachable from a root through
// gradient-carrying edges.
class Graph {
 public:
  struct Record {
    const char* op;
    size_t id;
    std::vector<size_t> input_ids;
  };

  static Graph Trace(const Tensor& root);

  const std::vector<internal::Node*>& nodes() const { return nodes_; }
  std::vector<Record> records() const;
  void Backward(std::span<const double> upstream) const;

 private:
  std::vector<internal::Node*> nodes_;
};

// ---- Differentiable operations --------------------------------------------

Tensor MatMul(const Tensor& a, const Tensor& b);
Tensor Transpose(const Tensor& x);
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
// x[n×m] + bias[1×m] broadcast over rows.
Tensor AddRowBroadcast(const Tensor& x, const Tensor& bias);
Tensor Scale(const Tensor& x, double factor);
Tensor AddScalar(const Tensor& x, double c);
Tensor Relu(const Tensor& x);
Tensor Sum(const Tensor& x);
Tensor Mean(const Tensor& x);
// Per-row inner product: [n×m],[n×m] -> [n×1].
Tensor RowDot(const Tensor& a, const Tensor& b);
inline constexpr double kNormEpsilon = 1e-12;
Tensor RowL2Normalize(const Tensor& x);
// Standardizes each column with its batch mean and variance (no affine
// parameters, no running statistics).
inline constexpr double kBatchNormEpsilon = 1e-5;
Tensor BatchNormColumns(const Tensor& x);
Tensor ConcatCols(const std::vector<Tensor>& parts);
Tensor ElementwiseMax(const Tensor& a, const Tensor& b);
Tensor StopGradient(const Tensor& x);
// Rows of `table` selected by `indices`; index == table.rows() selects
// `extra_row`, which never receives gradient.
Tensor EmbeddingLookup(const Tensor& table, const Tensor& extra_row,
                       std::span<const int64_t> indices);
// Mean over rows of -log softmax(logits)[label].
Tensor SoftmaxCrossEntropy(const Tensor& logits,
                           std::span<const int64_t> labels);

// ---- Optimizer --------------------------------------------------------------

struct SgdOptions {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, SgdOptions options);

  // v <- momentum*v + grad + weight_decay*theta; theta <- theta - lr*v.
  // Parameters without a requires_grad flag or without a gradient are left
  // untouched. All gradients are cleared afterwards.
  void Step();
  void ZeroGrad();

  const SgdOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  const std::vector<Tensor>& params() const { return params_; }
  std::vector<std::vector<double>>& velocity() { return velocity_; }
  const std::vector<std::vector<double>>& velocity() const {
    return velocity_;
  }
  size_t step_count() const { return steps_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  SgdOptions options_;
  size_t steps_ = 0;
};

}  // namespace vflhssl

#endif  // VFLHSSL_TENSOR_H_
