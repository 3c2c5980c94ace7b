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
#include "vflhssl/nn.h"

#include <algorithm>
#include <cmath>

#include "vflhssl/errors.h"

namespace vflhssl {

std::vector<Tensor> TensorsOf(const NamedParameters& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

void CopyValues(const NamedParameters& src, const NamedParameters& dst) {
  if (src.size() != dst.size()) {
    throw DimensionError("parameter list sizes differ: " + std::to_string(src.size()) +
                         " vs " + std::to_string(dst.size()));
  }
  for (size_t i = 0; i < src.size(); ++i) {
    const Tensor& s = src[i].tensor;
    Tensor d = dst[i].tensor;
    if (s.rows() != d.rows() || s.cols() != d.cols()) {
      throw DimensionError("parameter " + dst[i].name + " shape " +
                           ShapeString(d.rows(), d.cols()) + " vs source " +
                           ShapeString(s.rows(), s.cols()));
    }
    d.mutable_values() = s.values();
  }
}

uint64_t ParameterFingerprint(const NamedParameters& params) {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    h = Fnv1a64(p.name.data(), p.name.size(), h);
    h = Fnv1a64(p.tensor.values().data(), p.tensor.size() * sizeof(double), h);
  }
  return h;
}

// ---- Layers -----------------------------------------------------------------

DenseLayer::DenseLayer(size_t in, size_t out, Activation activation, Rng& rng,
                       bool batch_norm)
    : weight_(Tensor::Zeros(in, out, true)),
      bias_(Tensor::Zeros(1, out, true)),
      activation_(activation),
      batch_norm_(batch_norm) {
  if (in == 0 || out == 0) {
    throw ConfigError("dense layer dims must be positive, got " + ShapeString(in, out));
  }
  InitWeights(*this, rng);
}

void InitWeights(DenseLayer& layer, Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(layer.in_dim() + layer.out_dim()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor w = layer.weight();
  for (double& v : w.mutable_values()) v = dist(rng);
  Tensor b = layer.bias();
  std::fill(b.mutable_values().begin(), b.mutable_values().end(), 0.0);
}

Tensor DenseLayer::Forward(const Tensor& x) const {
  Tensor y = AddRowBroadcast(MatMul(x, weight_), bias_);
  if (batch_norm_) y = BatchNormColumns(y);
  return activation_ == Activation::kRelu ? Relu(y) : y;
}

void DenseLayer::Collect(const std::string& prefix, NamedParameters& out) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
}

Mlp::Mlp(size_t in, const std::vector<size_t>& widths, Activation last_activation,
         Rng& rng, NormPlacement norm)
    : in_dim_(in) {
  size_t prev = in;
  for (size_t i = 0; i < widths.size(); ++i) {
    const bool last = i + 1 == widths.size();
    const bool bn = norm == NormPlacement::kAll || (norm == NormPlacement::kHidden && !last);
    layers_.emplace_back(prev, widths[i], last ? last_activation : Activation::kRelu,
                         rng, bn);
    prev = widths[i];
  }
}

Tensor Mlp::Forward(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : layers_) h = layer.Forward(h);
  return h;
}

void Mlp::Collect(const std::string& prefix, NamedParameters& out) const {
  for (size_t i = 0; i < layers_.size(); ++i)
    layers_[i].Collect(prefix + "." + std::to_string(i), out);
}

EmbeddingLayer::EmbeddingLayer(size_t vocab, size_t dim, Rng& rng)
    : table_(Tensor::Zeros(vocab, dim, true)), corruption_row_(Tensor::Zeros(1, dim)) {
  if (vocab == 0 || dim == 0) throw ConfigError("embedding dims must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(vocab + 1 + dim));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : table_.mutable_values()) v = dist(rng);
  for (double& v : corruption_row_.mutable_values()) v = dist(rng);
}

Tensor EmbeddingLayer::Forward(std::span<const int64_t> indices) const {
  return EmbeddingLookup(table_, corruption_row_, indices);
}

void EmbeddingLayer::Collect(const std::string& prefix, NamedParameters& out) const {
  out.push_back({prefix + ".table", table_});
  out.push_back({prefix + ".corruption_row", corruption_row_});
}

size_t FeatureSchema::num_categorical() const {
  return static_cast<size_t>(
      std::count_if(vocab.begin(), vocab.end(), [](size_t v) { return v > 0; }));
}

InputLayer::InputLayer(const FeatureSchema& schema, size_t embedding_dim, Rng& rng)
    : schema_(schema) {
  for (size_t c = 0; c < schema.num_columns(); ++c) {
    if (schema.is_categorical(c)) {
      categorical_cols_.push_back(c);
      embeddings_.emplace_back(schema.vocab[c], embedding_dim, rng);
    } else {
      continuous_cols_.push_back(c);
    }
  }
}

size_t InputLayer::out_dim() const {
  size_t d = continuous_cols_.size();
  for (const auto& e : embeddings_) d += e.dim();
  return d;
}

Tensor InputLayer::Forward(const Matrix& x) const {
  if (x.cols != schema_.num_columns()) {
    throw DimensionError("input has " + std::to_string(x.cols) + " columns, schema " +
                         std::to_string(schema_.num_columns()));
  }
  if (categorical_cols_.empty()) return Tensor::Constant(x);
  std::vector<Tensor> parts;
  if (!continuous_cols_.empty()) {
    Matrix cont(x.rows, continuous_cols_.size());
    for (size_t r = 0; r < x.rows; ++r)
      for (size_t j = 0; j < continuous_cols_.size(); ++j)
        cont(r, j) = x(r, continuous_cols_[j]);
    parts.push_back(Tensor::Constant(std::move(cont)));
  }
  std::vector<int64_t> codes(x.rows);
  for (size_t k = 0; k < categorical_cols_.size(); ++k) {
    for (size_t r = 0; r < x.rows; ++r)
      codes[r] = static_cast<int64_t>(std::llround(x(r, categorical_cols_[k])));
    parts.push_back(embeddings_[k].Forward(codes));
  }
  return ConcatCols(parts);
}

void InputLayer::Collect(const std::string& prefix, NamedParameters& out) const {
  for (size_t k = 0; k < embeddings_.size(); ++k)
    embeddings_[k].Collect(prefix + ".emb" + std::to_string(k), out);
}

// ---- Config -----------------------------------------------------------------

void ModelConfig::Validate() const {
  auto positive = [](const std::vector<size_t>& v) {
    return std::all_of(v.begin(), v.end(), [](size_t d) { return d > 0; });
  };
  if (backbone.empty() || !positive(backbone)) {
    throw ConfigError("backbone widths must be non-empty and positive");
  }
  if (local_top_layers == 0 || local_top_layers >= backbone.size()) {
    throw ConfigError("local_top_layers (" + std::to_string(local_top_layers) +
                      ") must be in [1, backbone layers = " +
                      std::to_string(backbone.size()) + ")");
  }
  if (projector.empty() || !positive(projector)) {
    throw ConfigError("projector widths must be non-empty and positive");
  }
  if (!positive(predictor) || !positive(top_hidden)) {
    throw ConfigError("predictor/top widths must be positive");
  }
  if (variant.has_predictor()) {
    if (predictor.empty()) throw ConfigError("variant requires a predictor");
    if (predictor.back() != projector.back()) {
      throw ConfigError("predictor output " + std::to_string(predictor.back()) +
                        " must equal projector output " +
                        std::to_string(projector.back()));
    }
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
  if (ema_momentum < 0.0 || ema_momentum > 1.0) {
    throw ConfigError("ema_momentum must lie in [0, 1]");
  }
  variant.Validate();
}

ModelConfig ModelConfig::FullScale(SslKind kind) {
  ModelConfig c;
  c.backbone = {512, 512};
  c.variant.kind = kind;
  c.variant.temperature = 0.5;
  c.variant.queue_capacity = 4096;
  if (kind == SslKind::kMoco) {
    c.projector = {512, 512, 128};
    c.predictor = {};
    c.ema_momentum = 0.99;
  } else {
    c.projector = {512, 512, 512};
    c.predictor = {128, 512};
    c.ema_momentum = 0.995;
  }
  return c;
}

ModelConfig ModelConfig::DeskScale(SslKind kind) {
  ModelConfig c;
  c.variant.kind = kind;
  c.variant.queue_capacity = 256;
  if (kind == SslKind::kMoco) {
    c.predictor = {};
    c.ema_momentum = 0.99;
  }
  return c;
}

std::string ToString(EncoderSelection s) {
  switch (s) {
    case EncoderSelection::kLocal:
      return "local";
    case EncoderSelection::kCross:
      return "cross";
    case EncoderSelection::kLocalAndCross:
      return "local_and_cross";
  }
  return "unknown";
}

EncoderSelection ParseEncoderSelection(const std::string& name) {
  if (name == "local") return EncoderSelection::kLocal;
  if (name == "cross") return EncoderSelection::kCross;
  if (name == "local_and_cross") return EncoderSelection::kLocalAndCross;
  throw ConfigError("unknown encoder selection '" + name + "'");
}

// ---- PartyModel -------------------------------------------------------------

PartyModel::LocalTower PartyModel::BuildLocalTower(const ModelConfig& cfg,
                                                   const FeatureSchema& schema,
                                                   Rng& rng) {
  LocalTower t;
  t.input = InputLayer(schema, cfg.embedding_dim, rng);
  const size_t split = cfg.backbone.size() - cfg.local_top_layers;
  std::vector<size_t> bottom(cfg.backbone.begin(), cfg.backbone.begin() + split);
  std::vector<size_t> top(cfg.backbone.begin() + split, cfg.backbone.end());
  t.bottom = Mlp(t.input.out_dim(), bottom, Activation::kRelu, rng);
  t.top = Mlp(t.bottom.out_dim(), top, Activation::kRelu, rng);
  t.projector = Mlp(t.top.out_dim(), cfg.projector, Activation::kIdentity, rng,
                    cfg.head_batch_norm ? NormPlacement::kAll : NormPlacement::kNone);
  return t;
}

PartyModel::PartyModel(const ModelConfig& cfg, const FeatureSchema& schema,
                       PartyRole role, Rng& rng)
    : cfg_(cfg), schema_(schema), role_(role) {
  cfg_.Validate();
  if (schema.num_columns() == 0) throw ConfigError("party has no feature columns");
  local_ = BuildLocalTower(cfg_, schema_, rng);
  const size_t proj_dim = cfg_.projector.back();
  const NormPlacement head_norm =
      cfg_.head_batch_norm ? NormPlacement::kHidden : NormPlacement::kNone;
  if (cfg_.variant.has_predictor())
    h_l_ = Mlp(proj_dim, cfg_.predictor, Activation::kIdentity, rng, head_norm);
  else
    h_l_ = Mlp(proj_dim, {}, Activation::kIdentity, rng);

  cross_input_ = InputLayer(schema_, cfg_.embedding_dim, rng);
  f_c_ = Mlp(cross_input_.out_dim(), cfg_.backbone, Activation::kRelu, rng);
  projector_c_ = Mlp(f_c_.out_dim(), cfg_.projector, Activation::kIdentity, rng,
                     cfg_.head_batch_norm ? NormPlacement::kAll : NormPlacement::kNone);
  if (cfg_.variant.has_predictor())
    h_c_ = Mlp(proj_dim, cfg_.predictor, Activation::kIdentity, rng, head_norm);
  else
    h_c_ = Mlp(proj_dim, {}, Activation::kIdentity, rng);

  if (cfg_.variant.has_target_encoder()) {
    target_ = BuildLocalTower(cfg_, schema_, rng);
    NamedParameters online, target;
    local_.input.Collect("in", online);
    local_.bottom.Collect("b", online);
    local_.top.Collect("t", online);
    local_.projector.Collect("p", online);
    target_->input.Collect("in", target);
    target_->bottom.Collect("b", target);
    target_->top.Collect("t", target);
    target_->projector.Collect("p", target);
    CopyValues(online, target);
    for (auto& p : target) p.tensor.set_requires_grad(false);
  }
  if (role_ == PartyRole::kActive) {
    if (cfg_.top_input_dim == 0) {
      throw ConfigError("active party requires top_input_dim > 0");
    }
    ResetTop(cfg_.top_input_dim, rng);
  }
}

PartyModel PartyModel::Clone() const {
  Rng scratch(0);
  PartyModel copy(cfg_, schema_, role_, scratch);
  CopyValues(AllParameters(), copy.AllParameters());
  return copy;
}

void PartyModel::ResetTop(size_t input_dim, Rng& rng) {
  std::vector<size_t> widths = cfg_.top_hidden;
  widths.push_back(cfg_.num_classes);
  top_ = Mlp(input_dim, widths, Activation::kIdentity, rng);
  cfg_.top_input_dim = input_dim;
}

Tensor PartyModel::TowerProjection(const LocalTower& tower, const Matrix& x) const {
  return tower.projector.Forward(tower.top.Forward(tower.bottom.Forward(tower.input.Forward(x))));
}

Tensor PartyModel::LocalBackbone(const Matrix& x) const {
  return local_.top.Forward(local_.bottom.Forward(local_.input.Forward(x)));
}

Tensor PartyModel::LocalProjection(const Matrix& x) const {
  return local_.projector.Forward(LocalBackbone(x));
}

Tensor PartyModel::LocalPredict(const Tensor& z) const { return h_l_.Forward(z); }

Tensor PartyModel::TargetProjection(const Matrix& x) const {
  if (target_) return TowerProjection(*target_, x);
  return StopGradient(LocalProjection(x));
}

Tensor PartyModel::CrossBackbone(const Matrix& x) const {
  return f_c_.Forward(cross_input_.Forward(x));
}

Tensor PartyModel::CrossProjection(const Matrix& x) const {
  return projector_c_.Forward(CrossBackbone(x));
}

Tensor PartyModel::CrossPredict(const Tensor& z) const { return h_c_.Forward(z); }

Tensor PartyModel::Representation(const Matrix& x, EncoderSelection selection) const {
  switch (selection) {
    case EncoderSelection::kLocal:
      return LocalBackbone(x);
    case EncoderSelection::kCross:
      return CrossBackbone(x);
    case EncoderSelection::kLocalAndCross:
      return ConcatCols({LocalBackbone(x), CrossBackbone(x)});
  }
  throw ConfigError("unhandled encoder selection");
}

size_t PartyModel::representation_dim(EncoderSelection selection) const {
  switch (selection) {
    case EncoderSelection::kLocal:
      return local_.top.out_dim();
    case EncoderSelection::kCross:
      return f_c_.out_dim();
    case EncoderSelection::kLocalAndCross:
      return local_.top.out_dim() + f_c_.out_dim();
  }
  return 0;
}

Tensor PartyModel::TopForward(const Tensor& aggregated) const {
  if (!top_) throw ConfigError("passive party has no top model");
  return top_->Forward(aggregated);
}

NamedParameters PartyModel::Parameters(ParamGroup group) const {
  NamedParameters out;
  switch (group) {
    case ParamGroup::kLocalBottom:
      local_.input.Collect("local.input", out);
      local_.bottom.Collect("local.bottom", out);
      break;
    case ParamGroup::kLocalTop:
      local_.top.Collect("local.top", out);
      break;
    case ParamGroup::kLocalProjector:
      local_.projector.Collect("local.projector", out);
      break;
    case ParamGroup::kLocalPredictor:
      h_l_.Collect("local.predictor", out);
      break;
    case ParamGroup::kCrossEncoder:
      cross_input_.Collect("cross.input", out);
      f_c_.Collect("cross.encoder", out);
      break;
    case ParamGroup::kCrossProjector:
      projector_c_.Collect("cross.projector", out);
      break;
    case ParamGroup::kCrossPredictor:
      h_c_.Collect("cross.predictor", out);
      break;
    case ParamGroup::kTarget:
      if (target_) {
        target_->input.Collect("target.input", out);
        target_->bottom.Collect("target.bottom", out);
        target_->top.Collect("target.top", out);
        target_->projector.Collect("target.projector", out);
      }
      break;
    case ParamGroup::kTop:
      if (top_) top_->Collect("top", out);
      break;
  }
  return out;
}

NamedParameters PartyModel::Parameters(std::initializer_list<ParamGroup> groups) const {
  NamedParameters out;
  for (ParamGroup g : groups) {
    auto part = Parameters(g);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

NamedParameters PartyModel::AllParameters() const {
  return Parameters({ParamGroup::kLocalBottom, ParamGroup::kLocalTop,
                     ParamGroup::kLocalProjector, ParamGroup::kLocalPredictor,
                     ParamGroup::kCrossEncoder, ParamGroup::kCrossProjector,
                     ParamGroup::kCrossPredictor, ParamGroup::kTarget, ParamGroup::kTop});
}

NamedParameters PartyModel::SharedTopParameters() const {
  return Parameters({ParamGroup::kLocalTop, ParamGroup::kLocalPredictor});
}

std::vector<std::pair<Tensor, Tensor>> PartyModel::TargetPairs() const {
  std::vector<std::pair<Tensor, Tensor>> pairs;
  if (!target_) return pairs;
  const auto online = Parameters({ParamGroup::kLocalBottom, ParamGroup::kLocalTop,
                                  ParamGroup::kLocalProjector});
  const auto target = Parameters(ParamGroup::kTarget);
  for (size_t i = 0; i < online.size(); ++i) {
    pairs.emplace_back(online[i].tensor, target[i].tensor);
  }
  return pairs;
}

PartyModel BuildPartyModel(const ModelConfig& cfg, const FeatureSchema& schema,
                           PartyRole role, Rng& rng) {
  return PartyModel(cfg, schema, role, rng);
}

// ---- EMA --------------------------------------------------------------------

EmaTracker::EmaTracker(double momentum, std::vector<std::pair<Tensor, Tensor>> pairs)
    : momentum_(momentum), pairs_(std::move(pairs)) {
  if (momentum_ < 0.0 || momentum_ > 1.0) {
    throw ConfigError("EMA momentum must lie in [0, 1]");
  }
  for (const auto& [online, target] : pairs_) {
    if (online.rows() != target.rows() || online.cols() != target.cols()) {
      throw DimensionError("EMA pair shape mismatch " +
                           ShapeString(online.rows(), online.cols()) + " vs " +
                           ShapeString(target.rows(), target.cols()));
    }
  }
}

void EmaTracker::Update() {
  const double m = momentum_;
  for (auto& [online, target] : pairs_) {
    auto& t = target.mutable_values();
    const auto& o = online.values();
    for (size_t i = 0; i < t.size(); ++i) t[i] = m * t[i] + (1.0 - m) * o[i];
  }
}

}  // namespace vflhssl
