// Copyright 2026 The fedexcise Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cli.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fedexcise/errors.h"
#include "fedexcise/experiment.h"
#include "fedexcise/oracles.h"
#include "fedexcise/serialization.h"
#include "spdlog/fmt/fmt.h"
#include "spdlog/sinks/stdout_color_sinks.h"
#include "spdlog/spdlog.h"

namespace fedexcise::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::size_t jobs = 1;
  bool verbose = false;
  std::vector<std::string> sets;
};

class VerificationFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void SetupLogging(bool verbose) {
  auto logger = spdlog::get("fedexcise");
  if (!logger) {
    logger = spdlog::stderr_color_mt("fedexcise");
    logger->set_pattern("[%H:%M:%S] [%^%l%$] %v");
  }
  spdlog::set_default_logger(logger);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
}

json ParseValue(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

ExperimentConfig LoadConfig(const Options& opt, char** envp) {
  json j = json::object();
  if (!opt.config.empty()) {
    if (!fs::exists(opt.config)) {
      throw UsageError(fmt::format("config file '{}' not found", opt.config));
    }
    j = ReadJsonFile(opt.config);
  }
  ApplyEnvOverrides(j, "FEDEXCISE", envp);
  for (const std::string& kv : opt.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw UsageError(fmt::format("--set expects key=value, got '{}'", kv));
    }
    SetConfigKey(j, kv.substr(0, eq), ParseValue(kv.substr(eq + 1)));
  }
  ExperimentConfig cfg = ExperimentConfig::FromJson(j);
  if (opt.seed) cfg.seeds = {*opt.seed};
  cfg.Validate();
  return cfg;
}

json CanonicalConfig(const ExperimentConfig& cfg) {
  json j = cfg.ToJson();
  j["experiment"].erase("seeds");
  j["experiment"].erase("output_dir");
  return j;
}

// <out>/<hash>, with config.json guarding against hash collisions.
fs::path PrepareRoot(const ExperimentConfig& cfg) {
  const fs::path root = fs::path(cfg.output_dir) / cfg.Hash();
  const fs::path record = root / "config.json";
  const json canonical = CanonicalConfig(cfg);
  if (fs::exists(record)) {
    if (ReadJsonFile(record) != canonical) {
      throw UsageError(fmt::format(
          "{} holds a different config with the same hash; refusing to mix runs",
          record.string()));
    }
  } else {
    WriteJsonFile(record, canonical);
  }
  return root;
}

fs::path SeedDir(const fs::path& root, std::uint64_t seed) {
  return root / std::to_string(seed);
}

void RefuseOverwrite(const fs::path& target, bool force) {
  if (!force && fs::exists(target)) {
    throw UsageError(fmt::format("{} already exists; rerun with --force to overwrite",
                                 target.string()));
  }
}

void RequireArtifact(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw MissingArtifactError(path.string(), producer);
}

// Runs fn(i) for i < n on up to `jobs` threads. The first failure in index
// order is rethrown.
template <typename Fn>
void ParallelFor(std::size_t n, std::size_t jobs, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

json Manifest(const SeedWorld& world, const std::string& hash) {
  json shards = json::array();
  for (const auto& s : world.shards()) shards.push_back(s.size());
  const UnlearnRequest& req = world.request();
  return {{"config_hash", hash},
          {"seed", world.seed()},
          {"streams",
           {{"data", world.streams().data},
            {"federation", world.streams().federation},
            {"unlearning", world.streams().unlearning}}},
          {"train_pairs", world.train_size()},
          {"holdout_pairs", world.universe().size() - world.train_size()},
          {"parameters", world.layout()->dim()},
          {"shard_sizes", shards},
          {"request",
           {{"scenario", std::string(ScenarioName(req.scenario))},
            {"client", req.client},
            {"pseudo_class", req.pseudo_class},
            {"samples", req.samples.size()}}}};
}

void TrainSeed(const ExperimentConfig& cfg, const fs::path& root, std::uint64_t seed,
               bool force) {
  const fs::path dir = SeedDir(root, seed);
  RefuseOverwrite(dir / "w_n", force);
  const SeedWorld world(cfg, seed);
  spdlog::info("seed {}: training {} rounds over {} clients", seed,
               cfg.federation.rounds, cfg.federation.clients);
  const TrainResult trained = TrainFederation(world.initial(), world.TrainContext());
  const std::string hash = cfg.Hash();
  WriteParams(dir / "initial", trained.initial, hash);
  WriteParams(dir / "w_n", trained.w_n, hash);
  WriteHistory(dir / "history", trained.history, hash);
  WriteJsonFile(dir / "ledger.json", LedgerToJson(trained.ledger));
  WriteJsonFile(dir / "manifest.json", Manifest(world, hash));
}

TrainResult LoadTrained(const SeedWorld& world, const fs::path& dir,
                        const std::string& hash) {
  RequireArtifact(dir / "w_n", "train");
  RequireArtifact(dir / "initial", "train");
  RequireArtifact(dir / "history", "train");
  TrainResult t;
  t.initial = ReadParams(dir / "initial", world.layout(), hash);
  t.w_n = ReadParams(dir / "w_n", world.layout(), hash);
  t.history = ReadHistory(dir / "history", world.layout(), hash);
  if (fs::exists(dir / "ledger.json")) {
    t.ledger = LedgerFromJson(ReadJsonFile(dir / "ledger.json"));
  }
  return t;
}

std::vector<std::string> SelectMethods(const ExperimentConfig& cfg,
                                       const std::vector<std::string>& requested) {
  if (requested.empty()) return cfg.methods;
  const auto& known = KnownMethods();
  for (const auto& m : requested) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw UsageError(fmt::format("unknown method '{}'", m));
    }
  }
  return requested;
}

void UnlearnSeed(const ExperimentConfig& cfg, const fs::path& root, std::uint64_t seed,
                 const std::vector<std::string>& methods, bool force) {
  const fs::path dir = SeedDir(root, seed);
  const std::string hash = cfg.Hash();
  for (const auto& m : methods) RefuseOverwrite(dir / "unlearn" / m / "model", force);
  const SeedWorld world(cfg, seed);
  const TrainResult trained = LoadTrained(world, dir, hash);
  Decomposition decomposition;
  if (std::any_of(methods.begin(), methods.end(), IsExcisionMethod)) {
    decomposition = DecomposeTrained(world, trained);
    std::ostringstream spectrum;
    WriteSpectrumCsv(spectrum, decomposition);
    WriteTextFile(dir / "spectrum.csv", spectrum.str());
  }
  for (const auto& m : methods) {
    spdlog::info("seed {}: unlearning with {}", seed, m);
    const MethodOutcome out = RunMethod(world, trained, decomposition, m);
    const fs::path mdir = dir / "unlearn" / m;
    WriteParams(mdir / "model", out.model, hash);
    WriteJsonFile(mdir / "ledger.json", LedgerToJson(out.ledger));
    if (out.trace) {
      std::ostringstream trace;
      out.trace->WriteCsv(trace);
      WriteTextFile(mdir / "trace.csv", trace.str());
    }
    if (out.bases) WriteBases(mdir / "bases", *out.bases, hash);
  }
}

std::string SimilarityCsv(const SeedWorld& world, const TrainResult& trained,
                          const std::vector<MethodOutcome>& outcomes) {
  const PairBatch forget = ForgetPairs(world);
  std::ostringstream out;
  out << "method,pair_id,similarity\n";
  auto emit = [&](const std::string& method, const ParamVector& w) {
    const std::vector<double> s = PairSimilarities(world.backbone(), w, forget);
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << method << "," << forget.pair_ids[i] << "," << fmt::format("{:.17g}", s[i])
          << "\n";
    }
  };
  emit("original", trained.w_n);
  for (const auto& o : outcomes) emit(o.method, o.model);
  return out.str();
}

void EvalSeed(const ExperimentConfig& cfg, const fs::path& root, std::uint64_t seed,
              bool force) {
  const fs::path dir = SeedDir(root, seed);
  const std::string hash = cfg.Hash();
  RefuseOverwrite(dir / "report.json", force);
  const SeedWorld world(cfg, seed);
  const TrainResult trained = LoadTrained(world, dir, hash);
  std::vector<MethodOutcome> outcomes;
  for (const auto& m : cfg.methods) {
    const fs::path mdir = dir / "unlearn" / m;
    if (!fs::exists(mdir / "model")) continue;
    MethodOutcome o;
    o.method = m;
    o.model = ReadParams(mdir / "model", world.layout(), hash);
    if (fs::exists(mdir / "ledger.json")) {
      o.ledger = LedgerFromJson(ReadJsonFile(mdir / "ledger.json"));
    }
    outcomes.push_back(std::move(o));
  }
  if (outcomes.empty()) throw MissingArtifactError((dir / "unlearn").string(), "unlearn");
  std::optional<ShadowPool> shadows;
  if (cfg.eval.run_mia) {
    spdlog::info("seed {}: training {} shadow federations", seed, cfg.eval.mia.shadows);
    shadows = TrainShadows(world);
  }
  std::optional<DriftProbe> drift;
  if (std::any_of(cfg.methods.begin(), cfg.methods.end(), IsExcisionMethod)) {
    drift = MakeDriftProbe(world, trained, DecomposeTrained(world, trained));
  }
  const Evaluation ev = EvaluateMethods(world, trained, outcomes,
                                        shadows ? &*shadows : nullptr,
                                        drift ? &*drift : nullptr);
  WriteTextFile(dir / "report.json", ReportToJson(ev.reports));
  std::ostringstream csv;
  WriteSummaryCsv(csv, ev.reports);
  WriteTextFile(dir / "summary.csv", csv.str());
  WriteTextFile(dir / "similarities.csv", SimilarityCsv(world, trained, outcomes));
}

struct Moments {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
};

Moments Summarize(const std::vector<double>& xs) {
  Moments m;
  m.n = xs.size();
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

std::string Num(double v) { return fmt::format("{:.17g}", v); }

// mean/std per (group key) over every metric and gap column.
std::string AggregateCsv(const std::vector<std::string>& key_columns,
                         const std::vector<std::pair<std::vector<std::string>,
                                                     const RunReport*>>& rows) {
  const std::vector<std::string> columns(SummaryColumns().begin() + 3,
                                         SummaryColumns().end());
  std::map<std::vector<std::string>, std::vector<const RunReport*>> groups;
  std::vector<std::vector<std::string>> order;
  for (const auto& [key, report] : rows) {
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(report);
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < key_columns.size(); ++i) out << (i ? "," : "") << key_columns[i];
  out << ",n";
  for (const auto& c : columns) out << "," << c << "_mean," << c << "_std";
  out << "\n";
  for (const auto& key : order) {
    const auto& members = groups[key];
    for (std::size_t i = 0; i < key.size(); ++i) out << (i ? "," : "") << key[i];
    out << "," << members.size();
    for (const auto& c : columns) {
      std::vector<double> xs;
      const bool gap = c.size() > 4 && c.ends_with("_gap");
      const std::string name = gap ? c.substr(0, c.size() - 4) : c;
      for (const RunReport* r : members) {
        const auto& source = gap ? r->gaps : r->values;
        auto it = source.find(name);
        if (it != source.end() && it->second) xs.push_back(*it->second);
      }
      if (xs.empty()) {
        out << ",,";
      } else {
        const Moments m = Summarize(xs);
        out << "," << Num(m.mean) << "," << Num(m.std);
      }
    }
    out << "\n";
  }
  return out.str();
}

void FillAllGaps(std::vector<RunReport>& reports) {
  std::map<std::pair<std::string, std::uint64_t>, RunReport> reference;
  for (const auto& r : reports) {
    if (r.method == "retrain") reference[{r.scenario, r.seed}] = r;
  }
  for (auto& r : reports) {
    auto it = reference.find({r.scenario, r.seed});
    if (it != reference.end()) r.FillGaps(it->second);
  }
}

void ReportDir(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw UsageError(fmt::format("report: '{}' is not a directory", dir.string()));
  }
  std::vector<fs::path> files;
  if (fs::exists(dir / "report.json")) files.push_back(dir / "report.json");
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() == "report.json" &&
        e.path() != dir / "report.json") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw MissingArtifactError((dir / "*/report.json").string(), "eval");
  std::vector<RunReport> reports;
  for (const auto& f : files) {
    auto part = ReportsFromJson(ReadTextFile(f));
    reports.insert(reports.end(), part.begin(), part.end());
  }
  FillAllGaps(reports);
  std::sort(reports.begin(), reports.end(), [](const RunReport& a, const RunReport& b) {
    return std::tie(a.scenario, a.seed) < std::tie(b.scenario, b.seed);
  });
  std::ostringstream csv;
  WriteSummaryCsv(csv, reports);
  WriteTextFile(dir / "summary.csv", csv.str());
  std::vector<std::pair<std::vector<std::string>, const RunReport*>> rows;
  for (const auto& r : reports) rows.push_back({{r.scenario, r.method}, &r});
  WriteTextFile(dir / "aggregate.csv", AggregateCsv({"scenario", "method"}, rows));
  spdlog::info("report: {} rows from {} files -> {}", reports.size(), files.size(),
               (dir / "summary.csv").string());
}

struct SweepAxis {
  std::string key;
  std::vector<double> default_grid;
  bool reuses_training;
};

const std::map<std::string, SweepAxis>& SweepAxes() {
  static const std::map<std::string, SweepAxis> axes = {
      {"delta", {"plan.delta", {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}, true}},
      {"alpha", {"plan.alpha", {0.0, 0.5, 1.0, 2.0, 5.0}, true}},
      {"tau", {"plan.tau", {0.5, 0.7, 0.9, 0.95, 1.0}, true}},
      {"clients", {"federation.clients", {5, 10, 20}, false}},
      {"beta", {"federation.beta", {0.1, 0.5, 1.0, 5.0}, false}},
  };
  return axes;
}

ExperimentConfig WithValue(const ExperimentConfig& base, const std::string& key,
                           double value) {
  json j = base.ToJson();
  const bool integral = key == "federation.clients";
  SetConfigKey(j, key, integral ? json(static_cast<std::uint64_t>(std::llround(value)))
                                : json(value));
  ExperimentConfig cfg = ExperimentConfig::FromJson(j);
  cfg.Validate();
  return cfg;
}

// EASE and retrain for one grid point of one seed.
RunReport SweepCell(const ExperimentConfig& cfg, std::uint64_t seed,
                    const TrainResult* shared_trained, const MethodOutcome* shared_retrain,
                    const ShadowPool* shared_shadows) {
  const SeedWorld world(cfg, seed);
  std::optional<TrainResult> own;
  if (shared_trained == nullptr) own = TrainFederation(world.initial(), world.TrainContext());
  const TrainResult& trained = shared_trained ? *shared_trained : *own;
  const Decomposition d = DecomposeTrained(world, trained);
  std::vector<MethodOutcome> outcomes;
  outcomes.push_back(shared_retrain ? *shared_retrain
                                    : RunMethod(world, trained, d, "retrain"));
  outcomes.push_back(RunMethod(world, trained, d, "ease"));
  std::optional<ShadowPool> shadows;
  if (shared_shadows == nullptr && cfg.eval.run_mia) shadows = TrainShadows(world);
  const ShadowPool* pool = shared_shadows ? shared_shadows : (shadows ? &*shadows : nullptr);
  const DriftProbe drift = MakeDriftProbe(world, trained, d);
  const Evaluation ev = EvaluateMethods(world, trained, outcomes, pool, &drift);
  for (const auto& r : ev.reports) {
    if (r.method == "ease") return r;
  }
  throw NumericError("sweep: evaluation lost the ease row");
}

void Sweep(const ExperimentConfig& base, const std::string& axis_name,
           std::vector<double> grid, std::size_t jobs, bool force) {
  const auto& axes = SweepAxes();
  auto it = axes.find(axis_name);
  if (it == axes.end()) {
    throw UsageError(fmt::format("unknown sweep axis '{}' (delta, alpha, tau, clients, beta)",
                                 axis_name));
  }
  const SweepAxis& axis = it->second;
  if (grid.empty()) grid = axis.default_grid;
  for (double v : grid) WithValue(base, axis.key, v);  // validate up front

  const fs::path root = PrepareRoot(base);
  const fs::path dir = root / ("sweep_" + axis_name);
  RefuseOverwrite(dir / "rows.csv", force);

  const std::size_t n_seeds = base.seeds.size();
  std::vector<std::vector<RunReport>> cells(n_seeds, std::vector<RunReport>(grid.size()));
  ParallelFor(n_seeds, jobs, [&](std::size_t s) {
    const std::uint64_t seed = base.seeds[s];
    std::optional<TrainResult> trained;
    std::optional<MethodOutcome> retrain;
    std::optional<ShadowPool> shadows;
    if (axis.reuses_training) {
      const SeedWorld world(base, seed);
      trained = TrainFederation(world.initial(), world.TrainContext());
      retrain = RunMethod(world, *trained, Decomposition{}, "retrain");
      if (base.eval.run_mia) shadows = TrainShadows(world);
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
      spdlog::info("sweep {}={} seed {}", axis_name, grid[g], seed);
      cells[s][g] = SweepCell(WithValue(base, axis.key, grid[g]), seed,
                              trained ? &*trained : nullptr, retrain ? &*retrain : nullptr,
                              shadows ? &*shadows : nullptr);
    }
  });

  std::ostringstream rows;
  rows << "axis,value,seed";
  const std::vector<std::string>& columns = SummaryColumns();
  for (std::size_t c = 3; c < columns.size(); ++c) rows << "," << columns[c];
  rows << "\n";
  std::vector<std::pair<std::vector<std::string>, const RunReport*>> keyed;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const RunReport& r = cells[s][g];
      std::ostringstream one;
      WriteSummaryCsv(one, {r});
      std::string line = one.str();
      line = line.substr(line.find('\n') + 1);  // drop header
      // Replace scenario,method,seed with axis,value,seed.
      for (int field = 0; field < 3; ++field) line = line.substr(line.find(',') + 1);
      rows << axis_name << "," << Num(grid[g]) << "," << r.seed << "," << line;
      keyed.push_back({{axis_name, Num(grid[g])}, &r});
    }
  }
  WriteTextFile(dir / "rows.csv", rows.str());
  WriteTextFile(dir / "aggregate.csv", AggregateCsv({"axis", "value"}, keyed));
  spdlog::info("sweep: {} rows -> {}", keyed.size(), dir.string());
}

int Verify(const ExperimentConfig& cfg, std::uint64_t seed) {
  const std::vector<OracleReport> reports = RunOracleSuite(seed);
  const fs::path out = fs::path(cfg.output_dir) / "verify.json";
  WriteJsonFile(out, OracleReportsToJson(reports));
  for (const auto& r : reports) {
    std::cout << fmt::format("{:<4} {:<48} n={:<6} max_dev={:.3e} tol={:.1e}\n",
                             r.pass ? "ok" : "FAIL", r.check, r.instances, r.max_deviation,
                             r.tolerance);
  }
  if (!AllPass(reports)) throw VerificationFailed("oracle suite failed; see " + out.string());
  std::cout << "all " << reports.size() << " oracle checks passed -> " << out.string() << "\n";
  return kExitOk;
}

void AddCommon(CLI::App* cmd, Options& opt) {
  cmd->add_option("--config", opt.config, "JSON config file");
  cmd->add_option("--seed", opt.seed, "run only this seed");
  cmd->add_flag("--force", opt.force, "overwrite existing artifacts");
  cmd->add_option("--jobs", opt.jobs, "parallel workers across seeds")->check(CLI::PositiveNumber);
  cmd->add_flag("-v,--verbose", opt.verbose, "debug logging");
  cmd->add_option("--set", opt.sets, "override a config key: section.key=value");
}

}  // namespace

int Run(int argc, char** argv, char** envp) {
  CLI::App app{"Federated multimodal unlearning by gradient subspace excision"};
  app.require_subcommand(1);
  Options opt;
  std::vector<std::string> methods;
  std::string axis;
  std::vector<double> grid;
  std::string report_dir;

  auto* train = app.add_subcommand("train", "train the federation and store w_n and history");
  auto* unlearn = app.add_subcommand("unlearn", "run unlearning methods on a trained federation");
  auto* eval = app.add_subcommand("eval", "evaluate unlearned models and write report.json");
  auto* run = app.add_subcommand("run", "train, unlearn and eval in one go, then report");
  auto* sweep = app.add_subcommand("sweep", "sensitivity sweep of EASE over one config axis");
  auto* verify = app.add_subcommand("verify", "run the oracle suite and write verify.json");
  auto* report = app.add_subcommand("report", "merge report.json files under a directory");
  for (auto* cmd : {train, unlearn, eval, run, sweep, verify}) AddCommon(cmd, opt);
  unlearn->add_option("--method", methods, "methods to run (default: config methods)");
  sweep->add_option("--axis", axis, "delta, alpha, tau, clients or beta")->required();
  sweep->add_option("--grid", grid, "grid values (default: built-in grid per axis)")
      ->delimiter(',');
  report->add_option("dir", report_dir, "directory holding */report.json")->required();
  report->add_flag("-v,--verbose", opt.verbose, "debug logging");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  SetupLogging(opt.verbose);

  try {
    if (report->parsed()) {
      ReportDir(report_dir);
      return kExitOk;
    }
    const ExperimentConfig cfg = LoadConfig(opt, envp);
    if (verify->parsed()) return Verify(cfg, opt.seed.value_or(0));
    if (sweep->parsed()) {
      Sweep(cfg, axis, grid, opt.jobs, opt.force);
      return kExitOk;
    }
    const fs::path root = PrepareRoot(cfg);
    const std::vector<std::string> selected = SelectMethods(cfg, methods);
    auto each_seed = [&](auto fn) {
      ParallelFor(cfg.seeds.size(), opt.jobs, [&](std::size_t i) { fn(cfg.seeds[i]); });
    };
    if (train->parsed() || run->parsed()) {
      each_seed([&](std::uint64_t s) { TrainSeed(cfg, root, s, opt.force); });
    }
    if (unlearn->parsed() || run->parsed()) {
      each_seed([&](std::uint64_t s) { UnlearnSeed(cfg, root, s, selected, opt.force); });
    }
    if (eval->parsed() || run->parsed()) {
      each_seed([&](std::uint64_t s) { EvalSeed(cfg, root, s, opt.force); });
    }
    if (run->parsed()) ReportDir(root);
    return kExitOk;
  } catch (const VerificationFailed& e) {
    spdlog::error("{}", e.what());
    return kExitVerification;
  } catch (const NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return kExitNumeric;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  }
}

}  // namespace fedexcise::cli
