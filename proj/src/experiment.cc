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
#include "vflhssl/experiment.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <set>
#include <sstream>
#include <thread>

#include "vflhssl/errors.h"

namespace vflhssl {

using nlohmann::json;

// ---- Methods ----------------------------------------------------------------------

namespace {

const std::vector<std::pair<std::string, AblationPreset>>& MethodStems() {
  static const std::vector<std::pair<std::string, AblationPreset>> stems = {
      {"fedhssl-star", AblationPreset::kFedHsslStar},
      {"fedgssl-star", AblationPreset::kFedGsslStar},
      {"fedhssl", AblationPreset::kFedHssl},
      {"fedgssl", AblationPreset::kFedGssl},
      {"fedcssl", AblationPreset::kFedCssl},
      {"fedlocal", AblationPreset::kFedLocalSsl},
  };
  return stems;
}

}  // namespace

Method ParseMethod(const std::string& name) {
  Method m;
  m.name = name;
  if (name == "fedsplitnn") {
    m.pretrain = false;
    return m;
  }
  for (const auto& [stem, preset] : MethodStems()) {
    if (name.rfind(stem, 0) != 0) continue;
    const std::string rest = name.substr(stem.size());
    if (rest.empty()) {
      m.ablation = preset;
      return m;
    }
    if (rest[0] != '-') continue;
    const std::string variant = rest.substr(1);
    if (variant != "simsiam" && variant != "byol" && variant != "moco") continue;
    m.ablation = preset;
    m.kind = ParseSslKind(variant);
    return m;
  }
  throw ConfigError("unknown method '" + name + "'");
}

std::vector<std::string> KnownMethodNames() {
  std::vector<std::string> out;
  for (const auto& [stem, preset] : MethodStems())
    for (const char* v : {"simsiam", "byol", "moco"}) out.push_back(stem + "-" + v);
  out.push_back("fedsplitnn");
  return out;
}

// ---- JSON schema helpers --------------------------------------------------------

namespace {

class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  void Opt(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    used_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json* Sub(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  const json& Required(const char* key) {
    const json* j = Sub(key);
    if (!j) throw ConfigError("missing required key '" + path_ + "." + key + "'");
    return *j;
  }

  std::string path(const char* key) const { return path_ + "." + key; }

  void Done() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) {
        throw ConfigError("unknown key '" + path_ + "." + item.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void ReadSynthetic(const json& j, SyntheticSpec& s) {
  Fields f(j, "data.synthetic");
  f.Opt("latent_dim", s.latent_dim);
  f.Opt("classes", s.classes);
  f.Opt("parties", s.parties);
  f.Opt("feature_dims", s.feature_dims);
  f.Opt("noise", s.noise);
  f.Opt("class_separation", s.class_separation);
  f.Opt("nuisance_dim", s.nuisance_dim);
  f.Opt("nuisance_scale", s.nuisance_scale);
  f.Opt("private_dim", s.private_dim);
  f.Opt("private_separation", s.private_separation);
  f.Opt("aligned", s.aligned);
  f.Opt("unaligned", s.unaligned);
  f.Opt("labeled", s.labeled);
  f.Opt("test", s.test);
  f.Opt("categorical_per_party", s.categorical_per_party);
  f.Opt("categorical_vocab", s.categorical_vocab);
  f.Opt("seed", s.seed);
  f.Done();
}

json WriteSynthetic(const SyntheticSpec& s) {
  return {{"latent_dim", s.latent_dim},
          {"classes", s.classes},
          {"parties", s.parties},
          {"feature_dims", s.feature_dims},
          {"noise", s.noise},
          {"class_separation", s.class_separation},
          {"nuisance_dim", s.nuisance_dim},
          {"nuisance_scale", s.nuisance_scale},
          {"private_dim", s.private_dim},
          {"private_separation", s.private_separation},
          {"aligned", s.aligned},
          {"unaligned", s.unaligned},
          {"labeled", s.labeled},
          {"test", s.test},
          {"categorical_per_party", s.categorical_per_party},
          {"categorical_vocab", s.categorical_vocab},
          {"seed", s.seed}};
}

void ReadCsv(const json& j, CsvSpec& c) {
  Fields f(j, "data.csv");
  const json& parties = f.Required("parties");
  if (!parties.is_array() || parties.empty()) throw ConfigError("data.csv.parties must be a non-empty array");
  c.parties.clear();
  for (const json& pj : parties) {
    Fields pf(pj, "data.csv.parties[]");
    CsvPartySpec p;
    pf.Opt("path", p.path);
    pf.Opt("categorical_columns", p.categorical_columns);
    pf.Opt("categorical_levels", p.categorical_levels);
    pf.Done();
    if (p.path.empty()) throw ConfigError("data.csv.parties[].path is required");
    c.parties.push_back(std::move(p));
  }
  f.Opt("id_column", c.id_column);
  f.Opt("label_column", c.label_column);
  c.explicit_splits = f.has("test_ids") || f.has("labeled_ids");
  f.Opt("test_ids", c.test_ids);
  f.Opt("labeled_ids", c.labeled_ids);
  f.Opt("test_count", c.test_count);
  f.Opt("labeled_count", c.labeled_count);
  f.Opt("seed", c.seed);
  f.Opt("standardize", c.standardize);
  f.Done();
}

json WriteCsv(const CsvSpec& c) {
  json parties = json::array();
  for (const auto& p : c.parties) {
    json pj = {{"path", p.path}, {"categorical_columns", p.categorical_columns}};
    if (!p.categorical_levels.empty()) pj["categorical_levels"] = p.categorical_levels;
    parties.push_back(std::move(pj));
  }
  json j = {{"parties", parties},
            {"id_column", c.id_column},
            {"label_column", c.label_column},
            {"standardize", c.standardize}};
  if (c.explicit_splits) {
    j["test_ids"] = c.test_ids;
    j["labeled_ids"] = c.labeled_ids;
  } else {
    j["test_count"] = c.test_count;
    j["labeled_count"] = c.labeled_count;
    j["seed"] = c.seed;
  }
  return j;
}

}  // namespace

// ---- ExperimentConfig -------------------------------------------------------------

ExperimentConfig DefaultExperiment(const std::string& method) {
  ExperimentConfig c;
  c.method = method;
  const Method m = ParseMethod(method);
  SyntheticSpec& s = c.data.synthetic;
  s.latent_dim = 8;
  s.classes = 4;
  s.parties = 2;
  s.feature_dims = {32, 32};
  s.noise = {1.0, 1.0};
  s.class_separation = 0.8;
  s.private_dim = 8;
  s.private_separation = 1.5;
  s.nuisance_dim = 16;
  s.nuisance_scale = 3.0;
  s.aligned = 3200;
  s.unaligned = 4800;
  s.labeled = 1000;
  s.test = 2200;
  s.seed = 7;
  c.model = ModelConfig::DeskScale(m.kind);
  c.model.embedding_dim = 4;
  c.model.backbone = {32, 32};
  c.model.projector = {32, 32};
  c.model.predictor = m.kind == SslKind::kMoco ? std::vector<size_t>{} : std::vector<size_t>{16, 32};
  c.pipeline.global_iterations = 10;
  c.pipeline.cross_epochs = 2;
  c.pipeline.batch_size = 64;
  c.pipeline.sgd = {0.05, 0.9, 0.0};
  c.finetune.batch_size = 32;
  c.finetune.epochs = 100;
  c.ApplyMethod();
  return c;
}

void ExperimentConfig::ApplyMethod() {
  const Method m = ParseMethod(method);
  if (model.variant.kind != m.kind) {
    const ModelConfig d = ModelConfig::DeskScale(m.kind);
    model.variant.kind = m.kind;
    model.ema_momentum = d.ema_momentum;
    if (m.kind == SslKind::kMoco) {
      model.predictor.clear();
    } else if (model.predictor.empty()) {
      model.predictor = {std::max<size_t>(1, model.projector.back() / 2), model.projector.back()};
    }
  }
  if (m.pretrain) pipeline = ApplyPreset(m.ablation, pipeline);
}

void ExperimentConfig::Validate() const {
  const Method m = ParseMethod(method);
  if (m.kind != model.variant.kind) throw ConfigError("model variant does not match method " + method);
  if (data.use_csv) {
    if (data.csv.parties.empty()) throw ConfigError("data.csv needs at least one party");
  } else {
    data.synthetic.Validate();
  }
  model.variant.Validate();
  ModelConfig probe = model;
  probe.num_classes = data.use_csv ? std::max<size_t>(2, probe.num_classes) : data.synthetic.classes;
  probe.Validate();
  if (m.pretrain) pipeline.Validate();
  if (finetune.lr_candidates.empty()) throw ConfigError("finetune.lr_candidates must not be empty");
  for (double lr : finetune.lr_candidates)
    if (!(lr > 0.0)) throw ConfigError("finetune learning rates must be positive");
  if (finetune.labeled_counts.empty()) throw ConfigError("finetune.labeled_counts must not be empty");
  for (size_t n : finetune.labeled_counts)
    if (n == 0) throw ConfigError("finetune.labeled_counts entries must be positive");
  if (finetune.epochs == 0 || finetune.batch_size == 0) throw ConfigError("finetune epochs and batch_size must be positive");
  if (!(finetune.validation_fraction >= 0.0 && finetune.validation_fraction < 1.0)) {
    throw ConfigError("finetune.validation_fraction must lie in [0, 1)");
  }
  std::set<double> seen;
  for (double l : privacy.lambda_f) {
    if (l < 0.0) throw ConfigError("privacy.lambda_f entries must be non-negative");
    if (!seen.insert(l).second) throw ConfigError("privacy.lambda_f entries must be distinct");
  }
  if (privacy.adversary == kActiveParty) throw ConfigError("privacy.adversary must be a passive party");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (std::set<uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

ExperimentConfig ExperimentConfig::FromJson(const json& j) {
  Fields top(j, "config");
  std::string method = "fedhssl-simsiam";
  const json& model_j = top.Required("model");
  if (model_j.is_object() && model_j.contains("preset")) {
    try {
      method = model_j.at("preset").get<std::string>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("model.preset: ") + e.what());
    }
  }
  ExperimentConfig c = DefaultExperiment(method);
  top.Opt("name", c.name);

  {
    Fields f(top.Required("data"), "data");
    const json* syn = f.Sub("synthetic");
    const json* csv = f.Sub("csv");
    if ((syn != nullptr) == (csv != nullptr)) {
      throw ConfigError("data needs exactly one of 'synthetic' or 'csv'");
    }
    if (syn) ReadSynthetic(*syn, c.data.synthetic);
    if (csv) {
      c.data.use_csv = true;
      ReadCsv(*csv, c.data.csv);
    }
    f.Done();
  }
  {
    Fields f(model_j, "model");
    std::string preset;
    f.Opt("preset", preset);
    f.Opt("embedding_dim", c.model.embedding_dim);
    f.Opt("backbone", c.model.backbone);
    f.Opt("local_top_layers", c.model.local_top_layers);
    f.Opt("projector", c.model.projector);
    f.Opt("predictor", c.model.predictor);
    f.Opt("top_hidden", c.model.top_hidden);
    f.Opt("temperature", c.model.variant.temperature);
    f.Opt("queue_capacity", c.model.variant.queue_capacity);
    f.Opt("ema_momentum", c.model.ema_momentum);
    f.Opt("head_batch_norm", c.model.head_batch_norm);
    f.Done();
  }
  {
    Fields f(top.Required("pipeline"), "pipeline");
    PipelineConfig& p = c.pipeline;
    f.Opt("gamma", p.gamma);
    f.Opt("global_iterations", p.global_iterations);
    f.Opt("cross_epochs", p.cross_epochs);
    f.Opt("local_epochs", p.local_epochs);
    f.Opt("local_updates", p.local_updates);
    f.Opt("aligned_fraction", p.aligned_fraction);
    f.Opt("cross_encoder_loaded", p.cross_encoder_loaded);
    f.Opt("lambda_p", p.lambda_p);
    f.Opt("batch_size", p.batch_size);
    f.Opt("lr", p.sgd.learning_rate);
    f.Opt("momentum", p.sgd.momentum);
    f.Opt("weight_decay", p.sgd.weight_decay);
    f.Opt("corruption_fraction", p.augmentation.corruption_fraction);
    f.Done();
  }
  {
    Fields f(top.Required("finetune"), "finetune");
    FinetuneConfig& ft = c.finetune;
    f.Opt("labeled_counts", ft.labeled_counts);
    f.Opt("lr_candidates", ft.lr_candidates);
    f.Opt("epochs", ft.epochs);
    f.Opt("batch_size", ft.batch_size);
    f.Opt("momentum", ft.momentum);
    f.Opt("weight_decay", ft.weight_decay);
    f.Opt("validation_fraction", ft.validation_fraction);
    f.Opt("subset_per_seed", ft.subset_per_seed);
    std::string selection, aggregator;
    f.Opt("selection", selection);
    f.Opt("aggregator", aggregator);
    if (!selection.empty()) ft.selection = ParseEncoderSelection(selection);
    if (!aggregator.empty()) ft.aggregator = ParseAggregatorKind(aggregator);
    f.Done();
  }
  {
    Fields f(top.Required("privacy"), "privacy");
    PrivacyConfig& pc = c.privacy;
    f.Opt("lambda_f", pc.lambda_f);
    f.Opt("labeled_count", pc.labeled_count);
    f.Opt("adversary", pc.adversary);
    std::vector<std::string> sources;
    f.Opt("sources", sources);
    if (f.has("sources")) {
      pc.sources.clear();
      for (const auto& s : sources) pc.sources.push_back(ParseEncoderSource(s));
    }
    if (const json* aj = f.Sub("attack")) {
      Fields af(*aj, "privacy.attack");
      af.Opt("aux_labeled_count", pc.attack.aux_labeled_count);
      af.Opt("head_hidden", pc.attack.head_hidden);
      af.Opt("epochs", pc.attack.epochs);
      af.Opt("lr", pc.attack.learning_rate);
      af.Opt("batch_size", pc.attack.batch_size);
      af.Done();
    }
    f.Done();
  }
  top.Opt("seeds", c.seeds);
  if (!top.has("seeds")) throw ConfigError("missing required key 'config.seeds'");
  top.Opt("output_dir", c.output_dir);
  if (!top.has("output_dir")) throw ConfigError("missing required key 'config.output_dir'");
  top.Done();
  c.ApplyMethod();
  c.Validate();
  return c;
}

json DataSectionJson(const DataConfig& data) {
  return data.use_csv ? json{{"csv", WriteCsv(data.csv)}}
                      : json{{"synthetic", WriteSynthetic(data.synthetic)}};
}

json ExperimentConfig::ToJson() const {
  json data_j = DataSectionJson(data);
  json model_j = {{"preset", method},
                  {"embedding_dim", model.embedding_dim},
                  {"backbone", model.backbone},
                  {"local_top_layers", model.local_top_layers},
                  {"projector", model.projector},
                  {"predictor", model.predictor},
                  {"top_hidden", model.top_hidden},
                  {"temperature", model.variant.temperature},
                  {"queue_capacity", model.variant.queue_capacity},
                  {"ema_momentum", model.ema_momentum},
                  {"head_batch_norm", model.head_batch_norm}};
  const PipelineConfig& p = pipeline;
  json pipeline_j = {{"gamma", p.gamma},
                     {"global_iterations", p.global_iterations},
                     {"cross_epochs", p.cross_epochs},
                     {"local_epochs", p.local_epochs},
                     {"local_updates", p.local_updates},
                     {"aligned_fraction", p.aligned_fraction},
                     {"cross_encoder_loaded", p.cross_encoder_loaded},
                     {"lambda_p", p.lambda_p},
                     {"batch_size", p.batch_size},
                     {"lr", p.sgd.learning_rate},
                     {"momentum", p.sgd.momentum},
                     {"weight_decay", p.sgd.weight_decay},
                     {"corruption_fraction", p.augmentation.corruption_fraction}};
  json finetune_j = {{"labeled_counts", finetune.labeled_counts},
                     {"lr_candidates", finetune.lr_candidates},
                     {"epochs", finetune.epochs},
                     {"batch_size", finetune.batch_size},
                     {"momentum", finetune.momentum},
                     {"weight_decay", finetune.weight_decay},
                     {"validation_fraction", finetune.validation_fraction},
                     {"subset_per_seed", finetune.subset_per_seed},
                     {"aggregator", ToString(finetune.aggregator)}};
  if (finetune.selection) finetune_j["selection"] = ToString(*finetune.selection);
  std::vector<std::string> sources;
  for (EncoderSource s : privacy.sources) sources.push_back(ToString(s));
  json privacy_j = {{"lambda_f", privacy.lambda_f},
                    {"labeled_count", privacy.labeled_count},
                    {"adversary", privacy.adversary},
                    {"sources", sources},
                    {"attack",
                     {{"aux_labeled_count", privacy.attack.aux_labeled_count},
                      {"head_hidden", privacy.attack.head_hidden},
                      {"epochs", privacy.attack.epochs},
                      {"lr", privacy.attack.learning_rate},
                      {"batch_size", privacy.attack.batch_size}}}};
  return {{"name", name},         {"data", data_j},         {"model", model_j},
          {"pipeline", pipeline_j}, {"finetune", finetune_j}, {"privacy", privacy_j},
          {"seeds", seeds},       {"output_dir", output_dir}};
}

std::string ExperimentConfig::Fingerprint(uint64_t seed) const {
  const json full = ToJson();
  const json keyed = {{"data", full["data"]},
                      {"model", full["model"]},
                      {"pipeline", full["pipeline"]},
                      {"seed", seed}};
  const std::string text = keyed.dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(Fnv1a64(text.data(), text.size())));
  return buf;
}

std::string ExperimentConfig::RunFingerprint() const {
  json full = ToJson();
  full.erase("output_dir");
  const std::string text = full.dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(Fnv1a64(text.data(), text.size())));
  return buf;
}

ExperimentConfig LoadExperimentConfig(const std::string& path) {
  std::string text;
  try {
    text = ReadFile(path);
  } catch (const DataError& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return ExperimentConfig::FromJson(j);
}

std::vector<std::pair<std::string, ExperimentConfig>> ExpandSweep(const ExperimentConfig& base,
                                                                  const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
    throw ConfigError("sweep must look like key=v1,v2,...");
  }
  const std::string key = spec.substr(0, eq);
  std::vector<std::pair<std::string, ExperimentConfig>> out;
  std::stringstream ss(spec.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    try {
      size_t used = 0;
      v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + item + "' is not a number");
    }
    ExperimentConfig c = base;
    if (key == "gamma") {
      c.pipeline.gamma = v;
    } else if (key == "aligned") {
      c.pipeline.aligned_fraction = v;
    } else if (key == "lambda_p") {
      c.pipeline.lambda_p = v;
    } else if (key == "local_updates") {
      if (v < 1 || v != std::floor(v)) throw ConfigError("local_updates sweep needs integers >= 1");
      c.pipeline.local_updates = static_cast<size_t>(v);
    } else {
      throw ConfigError("unsupported sweep key '" + key + "'");
    }
    c.Validate();
    out.emplace_back(key + "_" + item, std::move(c));
  }
  return out;
}

VerticalDataset LoadExperimentData(const DataConfig& cfg) {
  return cfg.use_csv ? LoadCsv(cfg.csv) : GenerateSynthetic(cfg.synthetic);
}

// ---- Pretraining ------------------------------------------------------------------

PretrainOutcome RunPretrain(const ExperimentConfig& cfg, const VerticalDataset& data,
                            uint64_t seed, ExecutionMode mode,
                            const std::optional<Checkpoint>& resume,
                            std::optional<size_t> stop_after) {
  const Method m = ParseMethod(cfg.method);
  PretrainOutcome out;
  out.parties = BuildFederation(data, cfg.model, seed);
  const json meta = {{"method", cfg.method}};
  if (!m.pretrain) {
    out.checkpoint.config_fingerprint = cfg.Fingerprint(seed);
    out.checkpoint.seeds = {seed};
    out.checkpoint.meta = meta;
    out.checkpoint.meta["completed_iterations"] = 0;
    for (const PartyModel& pm : out.parties) out.checkpoint.parties.push_back(ToBlobs(pm.AllParameters()));
    return out;
  }
  Pretrainer trainer(out.parties, data, cfg.pipeline, seed, mode);
  if (resume) {
    trainer.ImportState(resume->parties, resume->meta.value("completed_iterations", size_t{0}));
  }
  out.trace = trainer.Run(stop_after);
  out.completed_iterations = trainer.completed_iterations();
  out.checkpoint = MakePretrainCheckpoint(trainer, cfg.Fingerprint(seed), {seed}, meta);
  return out;
}

std::vector<PartyModel> ModelsFromCheckpoint(const ExperimentConfig& cfg,
                                             const VerticalDataset& data, const Checkpoint& ckpt,
                                             uint64_t seed) {
  std::vector<PartyModel> parties = BuildFederation(data, cfg.model, seed);
  LoadModelParameters(ckpt.parties, parties);
  return parties;
}

// ---- Fine-tuning ------------------------------------------------------------------

EncoderSelection ResolveSelection(const ExperimentConfig& cfg) {
  if (cfg.finetune.selection) return *cfg.finetune.selection;
  const Method m = ParseMethod(cfg.method);
  return m.pretrain ? FinetuneSelection(m.ablation) : EncoderSelection::kLocal;
}

namespace {

std::vector<PartyModel> CloneAll(const std::vector<PartyModel>& parties) {
  std::vector<PartyModel> out;
  out.reserve(parties.size());
  for (const PartyModel& p : parties) out.push_back(p.Clone());
  return out;
}

}  // namespace

FinetuneOutcome RunFinetune(const ExperimentConfig& cfg, const VerticalDataset& data,
                            const std::vector<PartyModel>& pretrained, uint64_t seed,
                            size_t labeled_count, ExecutionMode mode, double lambda_f) {
  const FinetuneConfig& ft = cfg.finetune;
  if (labeled_count == 0 || data.labeled_ids.empty()) throw ConfigError("empty labeled set");
  if (labeled_count > data.labeled_ids.size()) {
    throw ConfigError("labeled count " + std::to_string(labeled_count) + " exceeds the pool of " +
                      std::to_string(data.labeled_ids.size()));
  }
  std::vector<SampleId> subset = data.labeled_ids;
  Rng subset_rng = ft.subset_per_seed
                       ? MakeRng(seed, {StreamTag("finetune.subset"), labeled_count})
                       : MakeRng(data.Fingerprint(), {StreamTag("finetune.subset")});
  std::shuffle(subset.begin(), subset.end(), subset_rng);
  subset.resize(labeled_count);

  const bool select = ft.lr_candidates.size() > 1 && ft.validation_fraction > 0.0 && labeled_count >= 2;
  size_t n_val = 0;
  if (select) {
    n_val = static_cast<size_t>(std::llround(ft.validation_fraction * static_cast<double>(labeled_count)));
    n_val = std::clamp<size_t>(n_val, 1, labeled_count - 1);
  }
  const std::vector<SampleId> val(subset.begin(), subset.begin() + n_val);
  const std::vector<SampleId> train(subset.begin() + n_val, subset.end());
  const std::vector<int64_t> val_labels = data.LabelsOf(val);
  const std::vector<double> candidates =
      select ? ft.lr_candidates : std::vector<double>{ft.lr_candidates.front()};

  SplitNNConfig sc;
  sc.selection = ResolveSelection(cfg);
  sc.aggregator = ft.aggregator;
  sc.batch_size = ft.batch_size;
  sc.lambda_f = lambda_f;
  sc.reset_top = true;

  FinetuneOutcome out;
  out.seed = seed;
  out.labeled_count = labeled_count;
  double best = -1.0;
  for (double lr : candidates) {
    std::vector<PartyModel> models = CloneAll(pretrained);
    double val_top1 = 0.0;
    Matrix test_logits;
    {
      sc.sgd = {lr, ft.momentum, ft.weight_decay};
      SplitNNTrainer trainer(models, data, sc, DeriveSeed(seed, {StreamTag("finetune"), labeled_count}),
                             mode);
      Rng order = MakeRng(seed, {StreamTag("finetune.order"), labeled_count});
      for (size_t e = 0; e < ft.epochs; ++e) trainer.TrainEpoch(train, order);
      if (select) val_top1 = MetricTop1(trainer.Predict(val), val_labels);
      test_logits = trainer.Logits(data.test_ids);
    }
    out.validation_by_lr[lr] = val_top1;
    if (val_top1 > best) {
      best = val_top1;
      out.best_lr = lr;
      out.validation_top1 = val_top1;
      const std::vector<int64_t> test_labels = data.LabelsOf(data.test_ids);
      const std::vector<int64_t> pred = ArgmaxRows(test_logits);
      out.test_top1 = MetricTop1(pred, test_labels);
      out.test_auc.reset();
      out.test_f1.reset();
      if (data.num_classes == 2) {
        std::vector<double> scores(test_logits.rows);
        for (size_t r = 0; r < test_logits.rows; ++r) scores[r] = test_logits(r, 1) - test_logits(r, 0);
        try {
          out.test_auc = MetricAuc(scores, test_labels);
          out.test_f1 = MetricF1(pred, test_labels);
        } catch (const UndefinedMetricError&) {
        }
      }
      out.parties = std::move(models);
    }
  }
  return out;
}

// ---- Attack -----------------------------------------------------------------------

std::vector<SampleId> AttackAuxIds(const VerticalDataset& data, size_t count, uint64_t seed) {
  std::vector<SampleId> pool = data.labeled_ids;
  if (count > pool.size()) {
    throw ConfigError("attack needs " + std::to_string(count) + " auxiliary samples but the labeled pool has " +
                      std::to_string(pool.size()));
  }
  Rng rng = MakeRng(seed, {StreamTag("attack.aux")});
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  return pool;
}

std::vector<AttackPoint> RunAttack(const ExperimentConfig& cfg, const VerticalDataset& data,
                                   const std::vector<PartyModel>& pretrained, uint64_t seed,
                                   ExecutionMode mode) {
  const size_t adv = cfg.privacy.adversary;
  if (adv >= data.num_parties()) throw ConfigError("privacy.adversary is not a party");
  const std::vector<SampleId> aux = AttackAuxIds(data, cfg.privacy.attack.aux_labeled_count, seed);
  const std::vector<int64_t> aux_labels = data.LabelsOf(aux);
  const std::vector<int64_t> eval_labels = data.LabelsOf(data.test_ids);
  const EncoderSelection selection = ResolveSelection(cfg);
  McAttackConfig attack = cfg.privacy.attack;
  attack.seed = DeriveSeed(seed, {StreamTag("attack")});

  std::vector<AttackPoint> out;
  for (double lambda : cfg.privacy.lambda_f) {
    FinetuneOutcome ft =
        RunFinetune(cfg, data, pretrained, seed, cfg.privacy.labeled_count, mode, lambda);
    AttackPoint point;
    point.lambda_f = lambda;
    point.main_metric = ft.test_top1;
    for (EncoderSource source : cfg.privacy.sources) {
      const PartyModel& model =
          source == EncoderSource::kFinetunedLocal ? ft.parties[adv] : pretrained[adv];
      attack.source = source;
      const McAttackResult r = McAttack(MakeFrozenEncoder(model, source, selection), data.parties[adv],
                                        aux, aux_labels, data.test_ids, eval_labels,
                                        data.num_classes, attack);
      point.recovery[source] = r.recovery_accuracy;
    }
    out.push_back(std::move(point));
  }
  return out;
}

std::vector<TradeoffCurve> CurvesFromPoints(const ExperimentConfig& cfg,
                                            const std::vector<std::vector<AttackPoint>>& per_seed) {
  std::vector<TradeoffCurve> curves;
  if (per_seed.empty()) return curves;
  const double n = static_cast<double>(per_seed.size());
  for (EncoderSource source : cfg.privacy.sources) {
    TradeoffCurve c;
    c.method = cfg.method + "/" + ToString(source);
    c.dataset = cfg.name;
    for (size_t i = 0; i < per_seed.front().size(); ++i) {
      TradeoffPoint p;
      p.lambda_f = per_seed.front()[i].lambda_f;
      p.lambda_p = cfg.pipeline.lambda_p;
      for (const auto& seed_points : per_seed) {
        p.main_metric += seed_points[i].main_metric / n;
        p.recovery_acc += seed_points[i].recovery.at(source) / n;
      }
      c.points.push_back(p);
    }
    curves.push_back(std::move(c));
  }
  return curves;
}

// ---- Reports ----------------------------------------------------------------------

SummaryRow Summarize(size_t labeled_count, const std::vector<double>& values) {
  SummaryRow r;
  r.labeled_count = labeled_count;
  r.n = values.size();
  if (values.empty()) return r;
  double sum = 0.0;
  for (double v : values) sum += v;
  r.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return r;
}

void RunReport::Recompute() {
  std::map<size_t, std::vector<double>> by_count;
  for (const FinetuneOutcome& row : rows) by_count[row.labeled_count].push_back(row.test_top1);
  summary.clear();
  for (const auto& [count, values] : by_count) summary.push_back(Summarize(count, values));
}

json RunReport::ToJson(bool include_timing) const {
  json rows_j = json::array();
  for (const FinetuneOutcome& r : rows) {
    json lrs = json::array();
    for (const auto& [lr, v] : r.validation_by_lr) lrs.push_back({{"lr", lr}, {"validation_top1", v}});
    json row = {{"seed", r.seed},
                {"labeled_count", r.labeled_count},
                {"best_lr", r.best_lr},
                {"validation_top1", r.validation_top1},
                {"test_top1", r.test_top1},
                {"validation_by_lr", lrs}};
    if (r.test_auc) row["test_auc"] = *r.test_auc;
    if (r.test_f1) row["test_f1"] = *r.test_f1;
    rows_j.push_back(std::move(row));
  }
  json summary_j = json::array();
  for (const SummaryRow& s : summary)
    summary_j.push_back({{"labeled_count", s.labeled_count}, {"mean", s.mean}, {"std", s.std}, {"n", s.n}});
  json traces_j = json::object();
  for (const auto& [seed, trace] : traces) {
    json t = json::array();
    for (const TraceRecord& r : trace) t.push_back(vflhssl::ToJson(r));
    traces_j[std::to_string(seed)] = std::move(t);
  }
  json j = {{"method", method},
            {"config_fingerprint", config_fingerprint},
            {"rows", rows_j},
            {"summary", summary_j},
            {"traces", traces_j}};
  if (include_timing) j["wall_clock_seconds"] = wall_clock_seconds;
  return j;
}

RunReport RunReport::FromJson(const json& j) {
  try {
    RunReport r;
    r.method = j.at("method").get<std::string>();
    r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    for (const json& row : j.at("rows")) {
      FinetuneOutcome o;
      o.seed = row.at("seed").get<uint64_t>();
      o.labeled_count = row.at("labeled_count").get<size_t>();
      o.best_lr = row.at("best_lr").get<double>();
      o.validation_top1 = row.at("validation_top1").get<double>();
      o.test_top1 = row.at("test_top1").get<double>();
      if (row.contains("test_auc")) o.test_auc = row["test_auc"].get<double>();
      if (row.contains("test_f1")) o.test_f1 = row["test_f1"].get<double>();
      for (const json& l : row.at("validation_by_lr"))
        o.validation_by_lr[l.at("lr").get<double>()] = l.at("validation_top1").get<double>();
      r.rows.push_back(std::move(o));
    }
    for (const json& s : j.at("summary")) {
      r.summary.push_back({s.at("labeled_count").get<size_t>(), s.at("mean").get<double>(),
                           s.at("std").get<double>(), s.at("n").get<size_t>()});
    }
    for (const auto& item : j.at("traces").items()) {
      std::vector<TraceRecord> trace;
      for (const json& t : item.value()) trace.push_back(TraceRecordFromJson(t));
      r.traces[std::stoull(item.key())] = std::move(trace);
    }
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed run report: ") + e.what());
  }
}

std::string RunReport::Csv() const {
  std::ostringstream os;
  os << "method,labeled_count,seed,best_lr,validation_top1,test_top1\n";
  char buf[256];
  for (const FinetuneOutcome& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%llu,%.17g,%.17g,%.17g\n", method.c_str(), r.labeled_count,
                  static_cast<unsigned long long>(r.seed), r.best_lr, r.validation_top1, r.test_top1);
    os << buf;
  }
  return os.str();
}

// ---- Workers ----------------------------------------------------------------------

size_t WorkerCount() {
  const char* env = std::getenv("VFLHSSL_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("VFLHSSL_THREADS must be a positive integer");
  return static_cast<size_t>(v);
}

void ParallelFor(size_t n, size_t workers, const std::function<void(size_t)>& fn) {
  workers = std::max<size_t>(1, std::min(workers, n));
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace vflhssl
