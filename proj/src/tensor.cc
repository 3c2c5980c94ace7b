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
#include "vflhssl/tensor.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "vflhssl/errors.h"

namespace vflhssl {

using internal::Node;

Matrix::Matrix(size_t r, size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != rows * cols) {
    throw DimensionError("matrix data length " + std::to_string(data.size()) +
                         " does not match shape " + ShapeString(rows, cols));
  }
}

Matrix Matrix::FromRows(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols) {
      throw DimensionError("ragged rows in Matrix::FromRows");
    }
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

std::string ShapeString(size_t rows, size_t cols) {
  std::ostringstream os;
  os << "[" << rows << "x" << cols << "]";
  return os.str();
}

std::vector<double>& Node::EnsureGrad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

namespace {

std::shared_ptr<Node> MakeLeaf(Matrix m, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->rows = m.rows;
  node->cols = m.cols;
  node->value = std::move(m.data);
  node->requires_grad = requires_grad;
  return node;
}

std::shared_ptr<Node> MakeOutput(const char* op, size_t rows, size_t cols,
                                 std::vector<std::shared_ptr<Node>> inputs) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->rows = rows;
  node->cols = cols;
  node->value.assign(rows * cols, 0.0);
  node->requires_grad = std::any_of(
      inputs.begin(), inputs.end(),
      [](const std::shared_ptr<Node>& n) { return n->requires_grad; });
  node->inputs = std::move(inputs);
  return node;
}

void RequireSameShape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         ShapeString(a.rows(), a.cols()) + " vs " +
                         ShapeString(b.rows(), b.cols()));
  }
}

// Accumulates into input `i` only when it participates in differentiation.
template <typename Fn>
void IfGrad(Node& self, size_t i, Fn&& fn) {
  Node& in = *self.inputs[i];
  if (in.requires_grad) fn(in.EnsureGrad(), in);
}

}  // namespace

Tensor Tensor::Constant(Matrix m) { return Tensor(MakeLeaf(std::move(m), false)); }

Tensor Tensor::Parameter(Matrix m) { return Tensor(MakeLeaf(std::move(m), true)); }

Tensor Tensor::Zeros(size_t rows, size_t cols, bool requires_grad) {
  return Tensor(MakeLeaf(Matrix(rows, cols), requires_grad));
}

Tensor Tensor::Scalar(double v) { return Constant(Matrix(1, 1, v)); }

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on non-scalar " + ShapeString(rows(), cols()));
  }
  return node_->value[0];
}

Matrix Tensor::matrix() const { return Matrix(rows(), cols(), values()); }

std::vector<double> Tensor::grad_or_zeros() const {
  if (has_grad()) return grad();
  return std::vector<double>(size(), 0.0);
}

Matrix Tensor::grad_matrix() const {
  return Matrix(rows(), cols(), grad_or_zeros());
}

void Tensor::Backward() const {
  if (size() != 1) {
    throw DimensionError("Backward() without upstream needs a scalar, got " +
                         ShapeString(rows(), cols()));
  }
  const double one = 1.0;
  Backward(std::span<const double>(&one, 1));
}

void Tensor::Backward(std::span<const double> upstream) const {
  Graph::Trace(*this).Backward(upstream);
}

// ---- Graph ------------------------------------------------------------------

Graph Graph::Trace(const Tensor& root) {
  Graph g;
  if (!root.defined() || !root.requires_grad()) return g;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; inputs are emitted before their consumers.
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* in = node->inputs[next++].get();
      if (in->requires_grad && !visited.count(in)) {
        visited.insert(in);
        stack.emplace_back(in, 0);
      }
    } else {
      g.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

std::vector<Graph::Record> Graph::records() const {
  std::vector<Record> out;
  std::unordered_map<const Node*, size_t> ids;
  for (size_t i = 0; i < nodes_.size(); ++i) ids[nodes_[i]] = i;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    Record rec{nodes_[i]->op, i, {}};
    for (const auto& in : nodes_[i]->inputs) {
      auto it = ids.find(in.get());
      if (it != ids.end()) rec.input_ids.push_back(it->second);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void Graph::Backward(std::span<const double> upstream) const {
  if (nodes_.empty()) return;
  Node* root = nodes_.back();
  if (upstream.size() != root->value.size()) {
    throw DimensionError("upstream gradient length " +
                         std::to_string(upstream.size()) +
                         " does not match root " +
                         ShapeString(root->rows, root->cols));
  }
  auto& g = root->EnsureGrad();
  for (size_t i = 0; i < g.size(); ++i) g[i] += upstream[i];
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

// ---- Ops --------------------------------------------------------------------

Tensor MatMul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " +
                         ShapeString(a.rows(), a.cols()) + " x " +
                         ShapeString(b.rows(), b.cols()));
  }
  const size_t n = a.rows(), k = a.cols(), m = b.cols();
  auto out = MakeOutput("matmul", n, m, {a.shared_node(), b.shared_node()});
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* cv = out->value.data();
  for (size_t i = 0; i < n; ++i) {
    double* crow = cv + i * m;
    for (size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv + p * m;
      for (size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  out->backward = [n, k, m](Node& self) {
    const double* dc = self.grad.data();
    const Node& an = *self.inputs[0];
    const Node& bn = *self.inputs[1];
    IfGrad(self, 0, [&](std::vector<double>& da, Node&) {
      const double* bv = bn.value.data();
      for (size_t i = 0; i < n; ++i) {
        for (size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* dcrow = dc + i * m;
          const double* brow = bv + p * m;
          for (size_t j = 0; j < m; ++j) acc += dcrow[j] * brow[j];
          da[i * k + p] += acc;
        }
      }
    });
    IfGrad(self, 1, [&](std::vector<double>& db, Node&) {
      const double* av = an.value.data();
      for (size_t i = 0; i < n; ++i) {
        const double* dcrow = dc + i * m;
        for (size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          double* dbrow = db.data() + p * m;
          for (size_t j = 0; j < m; ++j) dbrow[j] += aip * dcrow[j];
        }
      }
    });
  };
  return Tensor(out);
}

Tensor Transpose(const Tensor& x) {
  const size_t n = x.rows(), m = x.cols();
  auto out = MakeOutput("transpose", m, n, {x.shared_node()});
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) out->value[j * n + i] = x.values()[i * m + j];
  out->backward = [n, m](Node& self) {
    IfGrad(self, 0, [&](std::vector<double>& dx, Node&) {
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) dx[i * m + j] += self.grad[j * n + i];
    });
  };
  return Tensor(out);
}

Tensor Add(const Tensor& a, const Tensor& b) {
  RequireSameShape("add", a, b);
  auto out = MakeOutput("add", a.rows(), a.cols(), {a.shared_node(), b.shared_node()});
  for (size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = a.values()[i] + b.values()[i];
  out->backward = [](Node& self) {
    for (size_t in = 0; in < 2; ++in) {
      IfGrad(self, in, [&](std::vector<double>& d, Node&) {
        for (size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
      });
    }
  };
  return Tensor(out);
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  RequireSameShape("sub", a, b);
  auto out = MakeOutput("sub", a.rows(), a.cols(), {a.shared_node(), b.shared_node()});
  for (size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = a.values()[i] - b.values()[i];
  out->backward = [](Node& self) {
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    });
    IfGrad(self, 1, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
    });
  };
  return Tensor(out);
}

Tensor Mul(const Tensor& a, const Tensor& b) {
  RequireSameShape("mul", a, b);
  auto out = MakeOutput("mul", a.rows(), a.cols(), {a.shared_node(), b.shared_node()});
  for (size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = a.values()[i] * b.values()[i];
  out->backward = [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * bv[i];
    });
    IfGrad(self, 1, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * av[i];
    });
  };
  return Tensor(out);
}

Tensor AddRowBroadcast(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_bias: bias " + ShapeString(bias.rows(), bias.cols()) +
                         " incompatible with " + ShapeString(x.rows(), x.cols()));
  }
  const size_t n = x.rows(), m = x.cols();
  auto out = MakeOutput("add_bias", n, m, {x.shared_node(), bias.shared_node()});
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j)
      out->value[i * m + j] = x.values()[i * m + j] + bias.values()[j];
  out->backward = [n, m](Node& self) {
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    });
    IfGrad(self, 1, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) d[j] += self.grad[i * m + j];
    });
  };
  return Tensor(out);
}

Tensor Scale(const Tensor& x, double factor) {
  auto out = MakeOutput("scale", x.rows(), x.cols(), {x.shared_node()});
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = x.values()[i] * factor;
  out->backward = [factor](Node& self) {
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * factor;
    });
  };
  return Tensor(out);
}

Tensor AddScalar(const Tensor& x, double c) {
  auto out = MakeOutput("add_scalar", x.rows(), x.cols(), {x.shared_node()});
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = x.values()[i] + c;
  out->backward = [](Node& self) {
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    });
  };
  return Tensor(out);
}

Tensor Relu(const Tensor& x) {
  auto out = MakeOutput("relu", x.rows(), x.cols(), {x.shared_node()});
  for (size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  out->backward = [](Node& self) {
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < d.size(); ++i)
        if (self.value[i] > 0.0) d[i] += self.grad[i];
    });
  };
  return Tensor(out);
}

Tensor Sum(const Tensor& x) {
  auto out = MakeOutput("sum", 1, 1, {x.shared_node()});
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out->value[0] = acc;
  out->backward = [](Node& self) {
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      for (double& v : d) v += self.grad[0];
    });
  };
  return Tensor(out);
}

Tensor Mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return Scale(Sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor RowDot(const Tensor& a, const Tensor& b) {
  RequireSameShape("row_dot", a, b);
  const size_t n = a.rows(), m = a.cols();
  auto out = MakeOutput("row_dot", n, 1, {a.shared_node(), b.shared_node()});
  for (size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (size_t j = 0; j < m; ++j) acc += a.values()[i * m + j] * b.values()[i * m + j];
    out->value[i] = acc;
  }
  out->backward = [n, m](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) d[i * m + j] += self.grad[i] * bv[i * m + j];
    });
    IfGrad(self, 1, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) d[i * m + j] += self.grad[i] * av[i * m + j];
    });
  };
  return Tensor(out);
}

Tensor RowL2Normalize(const Tensor& x) {
  const size_t n = x.rows(), m = x.cols();
  auto out = MakeOutput("row_l2_normalize", n, m, {x.shared_node()});
  std::vector<double> norms(n);
  for (size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (size_t j = 0; j < m; ++j) sq += x.values()[i * m + j] * x.values()[i * m + j];
    norms[i] = std::sqrt(sq);
    const double denom = std::max(norms[i], kNormEpsilon);
    for (size_t j = 0; j < m; ++j) out->value[i * m + j] = x.values()[i * m + j] / denom;
  }
  out->backward = [n, m, norms = std::move(norms)](Node& self) {
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < n; ++i) {
        const double* y = self.value.data() + i * m;
        const double* g = self.grad.data() + i * m;
        if (norms[i] < kNormEpsilon) {
          // Denominator is the constant epsilon here.
          for (size_t j = 0; j < m; ++j) d[i * m + j] += g[j] / kNormEpsilon;
          continue;
        }
        double yg = 0.0;
        for (size_t j = 0; j < m; ++j) yg += y[j] * g[j];
        for (size_t j = 0; j < m; ++j) d[i * m + j] += (g[j] - y[j] * yg) / norms[i];
      }
    });
  };
  return Tensor(out);
}

Tensor BatchNormColumns(const Tensor& x) {
  const size_t n = x.rows(), m = x.cols();
  auto out = MakeOutput("batch_norm", n, m, {x.shared_node()});
  std::vector<double> inv_std(m);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (size_t j = 0; j < m; ++j) {
    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += x.values()[i * m + j];
    mean *= inv_n;
    double var = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double d = x.values()[i * m + j] - mean;
      var += d * d;
    }
    inv_std[j] = 1.0 / std::sqrt(var * inv_n + kBatchNormEpsilon);
    for (size_t i = 0; i < n; ++i)
      out->value[i * m + j] = (x.values()[i * m + j] - mean) * inv_std[j];
  }
  out->backward = [n, m, inv_n, inv_std = std::move(inv_std)](Node& self) {
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      for (size_t j = 0; j < m; ++j) {
        double g_mean = 0.0, gy_mean = 0.0;
        for (size_t i = 0; i < n; ++i) {
          g_mean += self.grad[i * m + j];
          gy_mean += self.grad[i * m + j] * self.value[i * m + j];
        }
        g_mean *= inv_n;
        gy_mean *= inv_n;
        for (size_t i = 0; i < n; ++i) {
          d[i * m + j] += inv_std[j] * (self.grad[i * m + j] - g_mean -
                                        self.value[i * m + j] * gy_mean);
        }
      }
    });
  };
  return Tensor(out);
}

Tensor ConcatCols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const size_t n = parts.front().rows();
  size_t total = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::vector<size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != n) {
      throw DimensionError("concat: row mismatch " + ShapeString(n, 0) + " vs " +
                           ShapeString(p.rows(), p.cols()));
    }
    offsets.push_back(total);
    total += p.cols();
    inputs.push_back(p.shared_node());
  }
  if (parts.size() == 1) return parts.front();
  auto out = MakeOutput("concat_cols", n, total, std::move(inputs));
  for (size_t k = 0; k < parts.size(); ++k) {
    const size_t w = parts[k].cols();
    for (size_t i = 0; i < n; ++i)
      std::copy_n(parts[k].values().data() + i * w, w,
                  out->value.data() + i * total + offsets[k]);
  }
  out->backward = [n, total, offsets = std::move(offsets)](Node& self) {
    for (size_t k = 0; k < self.inputs.size(); ++k) {
      IfGrad(self, k, [&](std::vector<double>& d, Node& in) {
        const size_t w = in.cols;
        for (size_t i = 0; i < n; ++i)
          for (size_t j = 0; j < w; ++j)
            d[i * w + j] += self.grad[i * total + offsets[k] + j];
      });
    }
  };
  return Tensor(out);
}

Tensor ElementwiseMax(const Tensor& a, const Tensor& b) {
  RequireSameShape("max", a, b);
  auto out = MakeOutput("max", a.rows(), a.cols(), {a.shared_node(), b.shared_node()});
  for (size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = std::max(a.values()[i], b.values()[i]);
  out->backward = [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    // Ties route the gradient to the first argument.
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < d.size(); ++i)
        if (av[i] >= bv[i]) d[i] += self.grad[i];
    });
    IfGrad(self, 1, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < d.size(); ++i)
        if (av[i] < bv[i]) d[i] += self.grad[i];
    });
  };
  return Tensor(out);
}

Tensor StopGradient(const Tensor& x) {
  auto out = std::make_shared<Node>();
  out->op = "stop_gradient";
  out->rows = x.rows();
  out->cols = x.cols();
  out->value = x.values();
  out->stop_grad = true;
  out->requires_grad = false;
  return Tensor(out);
}

Tensor EmbeddingLookup(const Tensor& table, const Tensor& extra_row,
                       std::span<const int64_t> indices) {
  const size_t vocab = table.rows(), dim = table.cols();
  if (extra_row.rows() != 1 || extra_row.cols() != dim) {
    throw DimensionError("embedding: extra row shape " +
                         ShapeString(extra_row.rows(), extra_row.cols()));
  }
  std::vector<int64_t> idx(indices.begin(), indices.end());
  for (int64_t v : idx) {
    if (v < 0 || static_cast<size_t>(v) > vocab) {
      throw ValidationError("embedding index " + std::to_string(v) +
                            " outside [0, " + std::to_string(vocab) + "]");
    }
  }
  auto out = MakeOutput("embedding", idx.size(), dim,
                        {table.shared_node(), extra_row.shared_node()});
  for (size_t i = 0; i < idx.size(); ++i) {
    const double* src = static_cast<size_t>(idx[i]) == vocab
                            ? extra_row.values().data()
                            : table.values().data() + idx[i] * dim;
    std::copy_n(src, dim, out->value.data() + i * dim);
  }
  out->backward = [vocab, dim, idx = std::move(idx)](Node& self) {
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      for (size_t i = 0; i < idx.size(); ++i) {
        if (static_cast<size_t>(idx[i]) == vocab) continue;
        for (size_t j = 0; j < dim; ++j) d[idx[i] * dim + j] += self.grad[i * dim + j];
      }
    });
  };
  return Tensor(out);
}

Tensor SoftmaxCrossEntropy(const Tensor& logits, std::span<const int64_t> labels) {
  const size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) {
    throw DimensionError("cross entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  }
  if (n == 0) throw DimensionError("cross entropy on empty batch");
  std::vector<int64_t> y(labels.begin(), labels.end());
  for (int64_t v : y) {
    if (v < 0 || static_cast<size_t>(v) >= c) {
      throw ValidationError("label " + std::to_string(v) + " outside [0, " +
                            std::to_string(c) + ")");
    }
  }
  auto out = MakeOutput("softmax_ce", 1, 1, {logits.shared_node()});
  std::vector<double> probs(n * c);
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double* row = logits.values().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      z += probs[i * c + j];
    }
    for (size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += std::log(z) + mx - row[y[i]];
  }
  out->value[0] = total / static_cast<double>(n);
  out->backward = [n, c, y = std::move(y), probs = std::move(probs)](Node& self) {
    IfGrad(self, 0, [&](std::vector<double>& d, Node&) {
      const double g = self.grad[0] / static_cast<double>(n);
      for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < c; ++j) {
          const double target = static_cast<size_t>(y[i]) == j ? 1.0 : 0.0;
          d[i * c + j] += g * (probs[i * c + j] - target);
        }
      }
    });
  };
  return Tensor(out);
}

// ---- SgdOptimizer -----------------------------------------------------------

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, SgdOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.learning_rate > 0.0)) {
    throw ConfigError("learning rate must be positive");
  }
  if (options_.momentum < 0.0 || options_.momentum >= 1.0) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (options_.weight_decay < 0.0) {
    throw ConfigError("weight decay must be non-negative");
  }
  std::unordered_set<const Node*> seen;
  for (const auto& p : params_) {
    if (!seen.insert(p.node()).second) {
      throw ConfigError("parameter registered with optimizer twice");
    }
    velocity_.emplace_back(p.size(), 0.0);
  }
}

void SgdOptimizer::Step() {
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto& v = velocity_[k];
    auto& theta = p.mutable_values();
    const auto& g = p.grad();
    for (size_t i = 0; i < theta.size(); ++i) {
      v[i] = options_.momentum * v[i] + g[i] + options_.weight_decay * theta[i];
      theta[i] -= options_.learning_rate * v[i];
    }
  }
  ++steps_;
  ZeroGrad();
}

void SgdOptimizer::ZeroGrad() {
  for (auto& p : params_) p.ZeroGrad();
}

}  // namespace vflhssl
