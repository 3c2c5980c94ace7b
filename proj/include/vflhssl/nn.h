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
#ifndef VFLHSSL_NN_H_
#define VFLHSSL_NN_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vflhssl/rng.h"
#include "vflhssl/ssl.h"
#include "vflhssl/tensor.h"

namespace vflhssl {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};
using NamedParameters = std::vector<NamedParameter>;

std::vector<Tensor> TensorsOf(const NamedParameters& params);
// Copies values from `src` into `dst`; names and shapes must agree pairwise.
void CopyValues(const NamedParameters& src, const NamedParameters& dst);
uint64_t ParameterFingerprint(const NamedParameters& params);

enum class Activation { kRelu, kIdentity };
// Where an Mlp applies batch normalization (before the activation).
enum class NormPlacement { kNone, kHidden, kAll };

class DenseLayer {
 public:
  DenseLayer(size_t in, size_t out, Activation activation, Rng& rng,
             bool batch_norm = false);

  Tensor Forward(const Tensor& x) const;
  void Collect(const std::string& prefix, NamedParameters& out) const;

  size_t in_dim() const { return weight_.rows(); }
  size_t out_dim() const { return weight_.cols(); }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  Activation activation() const { return activation_; }
  bool batch_norm() const { return batch_norm_; }

 private:
  Tensor weight_;
  Tensor bias_;
  Activation activation_;
  bool batch_norm_ = false;
};

// Glorot-uniform weights in +-sqrt(6/(in+out)), zero bias.
void InitWeights(DenseLayer& layer, Rng& rng);

// Stack of dense layers. Hidden layers use ReLU; the last layer uses
// `last_activation`. No layers means the identity map.
class Mlp {
 public:
  Mlp() = default;
  Mlp(size_t in, const std::vector<size_t>& widths, Activation last_activation,
      Rng& rng, NormPlacement norm = NormPlacement::kNone);

  Tensor Forward(const Tensor& x) const;
  void Collect(const std::string& prefix, NamedParameters& out) const;
  bool empty() const { return layers_.empty(); }
  size_t in_dim() const { return in_dim_; }
  size_t out_dim() const { return layers_.empty() ? in_dim_ : layers_.back().out_dim(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }

 private:
  size_t in_dim_ = 0;
  std::vector<DenseLayer> layers_;
};

// Embedding table whose reserved index `vocab` maps to an extra row that is
// never trained.
class EmbeddingLayer {
 public:
  EmbeddingLayer(size_t vocab, size_t dim, Rng& rng);

  Tensor Forward(std::span<const int64_t> indices) const;
  void Collect(const std::string& prefix, NamedParameters& out) const;
  size_t vocab() const { return table_.rows(); }
  size_t dim() const { return table_.cols(); }
  int64_t corruption_index() const { return static_cast<int64_t>(vocab()); }
  const Tensor& table() const { return table_; }
  const Tensor& corruption_row() const { return corruption_row_; }

 private:
  Tensor table_;
  Tensor corruption_row_;
};

// Per-column feature kinds of one party's raw input.
struct FeatureSchema {
  // vocab[c] == 0 marks a continuous column, otherwise a categorical column
  // holding integer codes in [0, vocab[c]] (vocab[c] being the corruption code).
  std::vector<size_t> vocab;

  size_t num_columns() const { return vocab.size(); }
  bool is_categorical(size_t c) const { return vocab[c] > 0; }
  size_t num_categorical() const;
};

// Maps raw feature rows to a dense input tensor: continuous columns pass
// through, categorical columns are embedded and appended.
class InputLayer {
 public:
  InputLayer() = default;
  InputLayer(const FeatureSchema& schema, size_t embedding_dim, Rng& rng);

  Tensor Forward(const Matrix& x) const;
  void Collect(const std::string& prefix, NamedParameters& out) const;
  size_t out_dim() const;

 private:
  FeatureSchema schema_;
  std::vector<size_t> continuous_cols_;
  std::vector<size_t> categorical_cols_;
  std::vector<EmbeddingLayer> embeddings_;
};

struct ModelConfig {
  size_t embedding_dim = 8;
  // Widths of the dense backbone; the last `local_top_layers` layers form the
  // local top encoder.
  std::vector<size_t> backbone = {64, 64};
  size_t local_top_layers = 1;
  std::vector<size_t> projector = {64, 64, 64};
  std::vector<size_t> predictor = {16, 64};
  std::vector<size_t> top_hidden = {};
  size_t num_classes = 10;
  // Width of the aggregated representation fed to the top model.
  size_t top_input_dim = 0;
  SslVariant variant;
  // Batch normalization inside projectors (all layers) and predictors
  // (hidden layers).
  bool head_batch_norm = true;
  // EMA momentum of the local target encoder (BYOL / MoCo only).
  double ema_momentum = 0.995;

  void Validate() const;
  // Full-size layer widths for the given variant.
  static ModelConfig FullScale(SslKind kind);
  static ModelConfig DeskScale(SslKind kind);
};

enum class PartyRole { kActive, kPassive };

enum class ParamGroup {
  kLocalBottom,
  kLocalTop,
  kLocalProjector,
  kLocalPredictor,
  kCrossEncoder,
  kCrossProjector,
  kCrossPredictor,
  kTarget,
  kTop,
};

// Which pretrained encoders feed the fine-tuning representation.
enum class EncoderSelection { kLocal, kCross, kLocalAndCross };
std::string ToString(EncoderSelection s);
EncoderSelection ParseEncoderSelection(const std::string& name);

// One party's two-tower encoder stack, plus the top model on the active party.
class PartyModel {
 public:
  PartyModel(const ModelConfig& cfg, const FeatureSchema& schema, PartyRole role,
             Rng& rng);
  // Tensors are shared handles, so copies would alias; use Clone().
  PartyModel(const PartyModel&) = delete;
  PartyModel& operator=(const PartyModel&) = delete;
  PartyModel(PartyModel&&) = default;
  PartyModel& operator=(PartyModel&&) = default;

  PartyModel Clone() const;

  // f_lt(f_lb(x)).
  Tensor LocalBackbone(const Matrix& x) const;
  // projector_l(f_lt(f_lb(x))), the local online representation z_l.
  Tensor LocalProjection(const Matrix& x) const;
  Tensor LocalPredict(const Tensor& z) const;
  // Target pathway. Uses the EMA copy when present, otherwise the online
  // network evaluated under stop-gradient.
  Tensor TargetProjection(const Matrix& x) const;

  Tensor CrossBackbone(const Matrix& x) const;
  // projector_c(f_c(x)), the cross-party representation z_c.
  Tensor CrossProjection(const Matrix& x) const;
  Tensor CrossPredict(const Tensor& z) const;

  // Fine-tuning representation z with projectors dropped.
  Tensor Representation(const Matrix& x, EncoderSelection selection) const;
  size_t representation_dim(EncoderSelection selection) const;

  bool has_top() const { return top_.has_value(); }
  const Mlp& top() const { return *top_; }
  Tensor TopForward(const Tensor& aggregated) const;
  // Rebuilds g1 with a fresh initialization for the given input width.
  void ResetTop(size_t input_dim, Rng& rng);

  PartyRole role() const { return role_; }
  const ModelConfig& config() const { return cfg_; }
  const FeatureSchema& schema() const { return schema_; }
  bool has_target() const { return target_.has_value(); }

  NamedParameters Parameters(ParamGroup group) const;
  NamedParameters Parameters(std::initializer_list<ParamGroup> groups) const;
  // Every stored tensor, online, target and top, in a stable order.
  NamedParameters AllParameters() const;
  // f_lt followed by h_l: the block shared by partial model aggregation.
  NamedParameters SharedTopParameters() const;

  // Online/target pairs for the EMA tracker.
  std::vector<std::pair<Tensor, Tensor>> TargetPairs() const;

 private:
  struct LocalTower {
    InputLayer input;
    Mlp bottom;
    Mlp top;
    Mlp projector;
  };
  static LocalTower BuildLocalTower(const ModelConfig& cfg,
                                    const FeatureSchema& schema, Rng& rng);
  Tensor TowerProjection(const LocalTower& tower, const Matrix& x) const;

  ModelConfig cfg_;
  FeatureSchema schema_;
  PartyRole role_;
  LocalTower local_;
  Mlp h_l_;
  InputLayer cross_input_;
  Mlp f_c_;
  Mlp projector_c_;
  Mlp h_c_;
  std::optional<LocalTower> target_;
  std::optional<Mlp> top_;
};

PartyModel BuildPartyModel(const ModelConfig& cfg, const FeatureSchema& schema,
                           PartyRole role, Rng& rng);

class EmaTracker {
 public:
  EmaTracker(double momentum, std::vector<std::pair<Tensor, Tensor>> pairs);

  // target <- m * target + (1 - m) * online, element-wise.
  void Update();
  double momentum() const { return momentum_; }

 private:
  double momentum_;
  std::vector<std::pair<Tensor, Tensor>> pairs_;
};

}  // namespace vflhssl

#endif  // VFLHSSL_NN_H_
