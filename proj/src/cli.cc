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
#include "vflhssl/cli.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vflhssl/errors.h"
#include "vflhssl/experiment.h"

namespace vflhssl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::string preset;
  std::string out;
  std::string sweep;
  std::optional<uint64_t> seed;
  std::optional<size_t> stop_after;
  bool deterministic = false;
  bool resume = false;
};

std::string Hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string MethodDir(const ExperimentConfig& c) { return (fs::path(c.output_dir) / c.method).string(); }

std::string SeedDir(const ExperimentConfig& c, uint64_t seed) {
  return (fs::path(MethodDir(c)) / ("seed_" + std::to_string(seed))).string();
}

std::string CheckpointPath(const ExperimentConfig& c, uint64_t seed) {
  return (fs::path(SeedDir(c, seed)) / "checkpoint.bin").string();
}

std::string TracePath(const ExperimentConfig& c, uint64_t seed) {
  return (fs::path(SeedDir(c, seed)) / "trace.json").string();
}

void WriteJson(const std::string& path, const json& j) { WriteFileAtomic(path, j.dump(2) + "\n"); }

json ReadJson(const std::string& path) {
  try {
    return json::parse(ReadFile(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::vector<TraceRecord> ReadTrace(const std::string& path) {
  std::vector<TraceRecord> out;
  if (!fs::exists(path)) return out;
  const json j = ReadJson(path);
  if (!j.is_array()) throw FormatError(path + ": trace must be a JSON array");
  for (const json& r : j) out.push_back(TraceRecordFromJson(r));
  return out;
}

void WriteTrace(const std::string& path, const std::vector<TraceRecord>& trace) {
  json j = json::array();
  for (const TraceRecord& r : trace) j.push_back(ToJson(r));
  WriteJson(path, j);
}

ExecutionMode ModeOf(const Options& o) {
  return o.deterministic ? ExecutionMode::kScheduler : ExecutionMode::kThreaded;
}

// Pretrained models for `seed`: loaded from the checkpoint, or freshly
// initialized for methods without pretraining.
std::vector<PartyModel> LoadTrainedModels(const ExperimentConfig& cfg, const VerticalDataset& data,
                                          uint64_t seed, ExecutionMode mode) {
  const std::string path = CheckpointPath(cfg, seed);
  if (fs::exists(path)) {
    const Checkpoint ckpt = LoadCheckpoint(path, cfg.Fingerprint(seed));
    return ModelsFromCheckpoint(cfg, data, ckpt, seed);
  }
  if (!ParseMethod(cfg.method).pretrain) return RunPretrain(cfg, data, seed, mode).parties;
  throw DataError("no checkpoint at " + path + "; run pretrain first");
}

void CmdGenData(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.data.use_csv) throw ConfigError("gen-data needs a synthetic data section");
  const VerticalDataset data = GenerateSynthetic(cfg.data.synthetic);
  const std::string dir = (fs::path(cfg.output_dir) / "data").string();
  DataConfig exported;
  exported.use_csv = true;
  exported.csv = ExportCsv(data, dir);
  json files = json::array();
  for (size_t i = 0; i < data.num_parties(); ++i) {
    files.push_back({{"path", exported.csv.parties[i].path},
                     {"rows", data.parties[i].features.rows},
                     {"columns", data.parties[i].features.cols}});
  }
  const json manifest = {{"seed", cfg.data.synthetic.seed},
                         {"fingerprint", Hex(data.Fingerprint())},
                         {"files", files},
                         {"aligned", data.aligned_ids.size()},
                         {"labeled", data.labeled_ids.size()},
                         {"test", data.test_ids.size()},
                         {"data", DataSectionJson(exported)}};
  WriteJson((fs::path(dir) / "manifest.json").string(), manifest);
  log << "gen-data: " << data.num_parties() << " parties, " << data.aligned_ids.size()
      << " aligned ids -> " << dir << "\n";
}

void CmdPretrain(const ExperimentConfig& cfg, const Options& opt, std::ostream& log) {
  const VerticalDataset data = LoadExperimentData(cfg.data);
  std::mutex log_mu;
  ParallelFor(cfg.seeds.size(), WorkerCount(), [&](size_t i) {
    const uint64_t seed = cfg.seeds[i];
    const std::string ckpt_path = CheckpointPath(cfg, seed);
    const std::string trace_path = TracePath(cfg, seed);
    std::optional<Checkpoint> resume;
    std::vector<TraceRecord> trace;
    if (opt.resume && fs::exists(ckpt_path)) {
      resume = LoadCheckpoint(ckpt_path, cfg.Fingerprint(seed));
      const size_t done = resume->meta.value("completed_iterations", size_t{0});
      for (const TraceRecord& r : ReadTrace(trace_path))
        if (r.iteration < done) trace.push_back(r);
    }
    PretrainOutcome out = RunPretrain(cfg, data, seed, ModeOf(opt), resume, opt.stop_after);
    trace.insert(trace.end(), out.trace.begin(), out.trace.end());
    SaveCheckpoint(ckpt_path, out.checkpoint);
    WriteTrace(trace_path, trace);
    std::lock_guard<std::mutex> lock(log_mu);
    log << "pretrain " << cfg.method << " seed " << seed << ": " << out.completed_iterations
        << " iterations -> " << ckpt_path << "\n";
  });
}

void CmdFinetune(const ExperimentConfig& cfg, const Options& opt, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  const VerticalDataset data = LoadExperimentData(cfg.data);
  std::vector<std::vector<FinetuneOutcome>> per_seed(cfg.seeds.size());
  std::vector<std::vector<TraceRecord>> traces(cfg.seeds.size());
  ParallelFor(cfg.seeds.size(), WorkerCount(), [&](size_t i) {
    const uint64_t seed = cfg.seeds[i];
    const std::vector<PartyModel> models = LoadTrainedModels(cfg, data, seed, ModeOf(opt));
    traces[i] = ReadTrace(TracePath(cfg, seed));
    for (size_t count : cfg.finetune.labeled_counts) {
      FinetuneOutcome o = RunFinetune(cfg, data, models, seed, count, ModeOf(opt));
      o.parties.clear();
      per_seed[i].push_back(std::move(o));
    }
  });
  RunReport report;
  report.method = cfg.method;
  report.config_fingerprint = cfg.RunFingerprint();
  for (size_t i = 0; i < cfg.seeds.size(); ++i) {
    for (auto& o : per_seed[i]) report.rows.push_back(std::move(o));
    if (!traces[i].empty()) report.traces[cfg.seeds[i]] = std::move(traces[i]);
  }
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const FinetuneOutcome& a, const FinetuneOutcome& b) {
                     return a.labeled_count < b.labeled_count;
                   });
  report.Recompute();
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const fs::path dir = MethodDir(cfg);
  WriteJson((dir / "report.json").string(), report.ToJson(false));
  WriteFileAtomic((dir / "report.csv").string(), report.Csv());
  WriteJson((dir / "timing.json").string(), {{"wall_clock_seconds", report.wall_clock_seconds}});
  for (const SummaryRow& s : report.summary) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "finetune %s labeled %zu: top1 %.4f +- %.4f (n=%zu)\n",
                  cfg.method.c_str(), s.labeled_count, s.mean, s.std, s.n);
    log << buf;
  }
}

void CmdAttack(const ExperimentConfig& cfg, const Options& opt, std::ostream& log) {
  const VerticalDataset data = LoadExperimentData(cfg.data);
  std::vector<std::vector<AttackPoint>> per_seed(cfg.seeds.size());
  ParallelFor(cfg.seeds.size(), WorkerCount(), [&](size_t i) {
    const uint64_t seed = cfg.seeds[i];
    const std::vector<PartyModel> models = LoadTrainedModels(cfg, data, seed, ModeOf(opt));
    per_seed[i] = RunAttack(cfg, data, models, seed, ModeOf(opt));
  });
  const std::vector<TradeoffCurve> curves = CurvesFromPoints(cfg, per_seed);
  const fs::path dir = MethodDir(cfg);
  WriteFileAtomic((dir / "tradeoff.csv").string(), TradeoffCsv(curves));
  json caps = json::array();
  for (const TradeoffCurve& c : curves) {
    const double cap = Cap(c);
    caps.push_back({{"method", c.method}, {"dataset", c.dataset}, {"cap", cap}});
    char buf[160];
    std::snprintf(buf, sizeof(buf), "attack %s: CAP %.4f over %zu points\n", c.method.c_str(), cap,
                  c.points.size());
    log << buf;
  }
  json seeds = json::array();
  for (size_t i = 0; i < cfg.seeds.size(); ++i) {
    json points = json::array();
    for (const AttackPoint& p : per_seed[i]) {
      json rec = json::object();
      for (const auto& [src, acc] : p.recovery) rec[ToString(src)] = acc;
      points.push_back({{"lambda_f", p.lambda_f}, {"main_metric", p.main_metric}, {"recovery", rec}});
    }
    seeds.push_back({{"seed", cfg.seeds[i]}, {"points", points}});
  }
  WriteJson((dir / "cap.json").string(), {{"curves", caps}, {"per_seed", seeds}});
}

void CmdReport(const ExperimentConfig& cfg, std::ostream& log) {
  const fs::path root = cfg.output_dir;
  if (!fs::is_directory(root)) throw DataError("output directory " + root.string() + " does not exist");
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "report.json")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("no report.json under " + root.string() + "; run finetune first");
  json methods = json::array();
  std::string csv = "method,labeled_count,mean,std,n\n";
  for (const fs::path& d : dirs) {
    RunReport r = RunReport::FromJson(ReadJson((d / "report.json").string()));
    const std::vector<SummaryRow> stored = r.summary;
    r.Recompute();
    for (size_t i = 0; i < stored.size(); ++i) {
      if (i >= r.summary.size() || std::abs(stored[i].mean - r.summary[i].mean) > 1e-12) {
        throw ValidationError((d / "report.json").string() +
                              ": stored means disagree with the per-seed rows");
      }
    }
    json entry = {{"method", r.method}, {"config_fingerprint", r.config_fingerprint}};
    json rows = json::array();
    for (const SummaryRow& s : r.summary) {
      rows.push_back({{"labeled_count", s.labeled_count}, {"mean", s.mean}, {"std", s.std}, {"n", s.n}});
      char buf[200];
      std::snprintf(buf, sizeof(buf), "%s,%zu,%.17g,%.17g,%zu\n", r.method.c_str(), s.labeled_count,
                    s.mean, s.std, s.n);
      csv += buf;
    }
    entry["summary"] = rows;
    if (fs::exists(d / "cap.json")) entry["cap"] = ReadJson((d / "cap.json").string()).at("curves");
    methods.push_back(std::move(entry));
  }
  WriteJson((root / "summary.json").string(), {{"methods", methods}});
  WriteFileAtomic((root / "summary.csv").string(), csv);
  log << "report: " << dirs.size() << " method(s) -> " << (root / "summary.json").string() << "\n";
}

ExperimentConfig ResolveConfig(const Options& opt) {
  ExperimentConfig cfg;
  if (!opt.config_path.empty()) {
    cfg = LoadExperimentConfig(opt.config_path);
    if (!opt.preset.empty()) {
      cfg.method = opt.preset;
      cfg.ApplyMethod();
    }
  } else if (!opt.preset.empty()) {
    cfg = DefaultExperiment(opt.preset);
  } else {
    throw ConfigError("either --config or --preset is required");
  }
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  if (opt.seed) cfg.seeds = {*opt.seed};
  cfg.Validate();
  return cfg;
}

void Dispatch(const ExperimentConfig& cfg, const Options& opt, std::ostream& log) {
  if (opt.command == "gen-data") {
    CmdGenData(cfg, log);
  } else if (opt.command == "pretrain") {
    CmdPretrain(cfg, opt, log);
  } else if (opt.command == "finetune") {
    CmdFinetune(cfg, opt, log);
  } else if (opt.command == "attack") {
    CmdAttack(cfg, opt, log);
  } else if (opt.command == "report") {
    CmdReport(cfg, log);
  } else {
    throw ConfigError("unknown command '" + opt.command + "'");
  }
}

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& log) {
  CLI::App app{"Vertical federated learning simulator with FedHSSL pretraining"};
  app.name("vflhssl");
  app.require_subcommand(1, 1);
  Options opt;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "generate the synthetic dataset as CSV files plus a manifest"},
      {"pretrain", "run (or resume) pretraining for every seed"},
      {"finetune", "fine-tune pretrained parties and write a run report"},
      {"attack", "fine-tune under gradient protection and run the label-inference attack"},
      {"report", "aggregate run reports under the output directory"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_path, "experiment config (JSON)");
    sub->add_option("--preset", opt.preset, "method preset, e.g. fedhssl-simsiam or fedsplitnn");
    sub->add_option("--seed", opt.seed, "run only this seed");
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--sweep", opt.sweep, "sweep spec key=v1,v2,... (gamma, aligned, lambda_p, local_updates)");
    sub->add_flag("--deterministic", opt.deterministic, "use the single-threaded scheduler");
    if (name == "pretrain") {
      sub->add_flag("--resume", opt.resume, "continue from an existing checkpoint");
      sub->add_option("--stop-after", opt.stop_after, "stop once this many iterations are complete");
    }
    sub->callback([&opt, n = name] { opt.command = n; });
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream out, err;
    const int code = app.exit(e, out, err);
    log << out.str() << err.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const ExperimentConfig base = ResolveConfig(opt);
    if (opt.sweep.empty()) {
      Dispatch(base, opt, log);
    } else {
      for (auto& [label, cfg] : ExpandSweep(base, opt.sweep)) {
        cfg.output_dir = (fs::path(base.output_dir) / label).string();
        log << "sweep " << label << "\n";
        Dispatch(cfg, opt, log);
      }
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FingerprintError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    log << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    log << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int RunCli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return RunCli(args, std::cerr);
}

}  // namespace vflhssl
