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

#include "fedexcise/experiment.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <set>
#include <type_traits>
#include <utility>

#include "fedexcise/errors.h"
#include "fedexcise/rng.h"
#include "spdlog/fmt/fmt.h"
#include "spdlog/spdlog.h"

namespace fedexcise {
namespace {

using nlohmann::json;

// Reads known keys of one config section and rejects the rest.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      node_ = root.at(name_);
      if (!node_.is_object()) {
        throw UsageError(fmt::format("config: '{}' must be an object", name_));
      }
    } else {
      node_ = json::object();
    }
  }

  template <typename T>
  void Read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!node_.contains(key)) return;
    const json& v = node_.at(key);
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      CheckInteger(key, v, std::is_unsigned_v<T>);
    } else if constexpr (std::is_same_v<T, std::vector<std::uint64_t>>) {
      if (v.is_array()) {
        for (const json& e : v) CheckInteger(key, e, true);
      }
    }
    try {
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw UsageError(fmt::format("config: {}.{} has the wrong type ({})",
                                   name_, key, e.what()));
    }
  }

  void CheckInteger(const std::string& key, const json& v, bool non_negative) const {
    if (!v.is_number_integer()) {
      throw UsageError(fmt::format("config: {}.{} must be an integer", name_, key));
    }
    if (non_negative && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
      throw UsageError(fmt::format("config: {}.{} must be non-negative", name_, key));
    }
  }

  void Finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (seen_.count(key) == 0) {
        throw UsageError(fmt::format("config: unknown key {}.{}", name_, key));
      }
    }
  }

 private:
  std::string name_;
  json node_;
  std::set<std::string> seen_;
};

std::string RetainSourceName(RetainSource s) {
  return s == RetainSource::kEpoch ? "epoch" : "history";
}

RetainSource ParseRetainSource(const std::string& s) {
  if (s == "epoch") return RetainSource::kEpoch;
  if (s == "history") return RetainSource::kHistory;
  throw UsageError(fmt::format("config: unknown retain_source '{}'", s));
}

Variant MethodVariant(const std::string& method) {
  if (method == "ease") return Variant::kFull;
  if (method == "no_bke_v") return Variant::kNoBkeVisual;
  if (method == "no_bke_t") return Variant::kNoBkeText;
  if (method == "no_gsd") return Variant::kNoGsd;
  if (method == "no_lock") return Variant::kNoLock;
  throw UsageError(fmt::format("'{}' is not an excision method", method));
}

bool IsExcisionName(const std::string& method) {
  return method == "ease" || method == "no_bke_v" || method == "no_bke_t" ||
         method == "no_gsd" || method == "no_lock";
}

std::optional<double> RetrainFraction(const std::string& method) {
  if (method == "retrain") return 1.0;
  if (method == "retrain_25") return 0.25;
  if (method == "retrain_50") return 0.5;
  if (method == "retrain_75") return 0.75;
  return std::nullopt;
}

SyntheticDataset Concatenate(const SyntheticDataset& a, const SyntheticDataset& b) {
  SyntheticDataset out = a;
  const std::size_t n = a.size() + b.size();
  out.pairs.visual = Matrix(n, a.pairs.visual.cols());
  out.pairs.text = Matrix(n, a.pairs.text.cols());
  for (std::size_t c = 0; c < a.pairs.visual.cols(); ++c) {
    for (std::size_t i = 0; i < a.size(); ++i) out.pairs.visual(i, c) = a.pairs.visual(i, c);
    for (std::size_t i = 0; i < b.size(); ++i) {
      out.pairs.visual(a.size() + i, c) = b.pairs.visual(i, c);
    }
  }
  for (std::size_t c = 0; c < a.pairs.text.cols(); ++c) {
    for (std::size_t i = 0; i < a.size(); ++i) out.pairs.text(i, c) = a.pairs.text(i, c);
    for (std::size_t i = 0; i < b.size(); ++i) {
      out.pairs.text(a.size() + i, c) = b.pairs.text(i, c);
    }
  }
  out.pairs.pair_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.pairs.pair_ids[i] = i;
  out.concept_ids.insert(out.concept_ids.end(), b.concept_ids.begin(),
                         b.concept_ids.end());
  return out;
}

std::vector<std::size_t> Flatten(const Shards& shards) {
  std::vector<std::size_t> ids;
  for (const auto& s : shards) ids.insert(ids.end(), s.begin(), s.end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

double UniqueDrift(const ParamVector& w, const ParamVector& ref,
                   const ExcisionBases& bases) {
  double sq = 0.0;
  for (std::size_t b = 0; b < bases.blocks.size(); ++b) {
    const Matrix& u = bases.blocks[b].unique;
    if (u.cols() == 0) continue;
    std::span<const double> x = w.block(b);
    std::span<const double> r = ref.block(b);
    std::vector<double> diff(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) diff[i] = x[i] - r[i];
    const std::vector<double> c = TransposeMatVec(u, diff);
    sq += Dot(c, c);
  }
  return std::sqrt(sq);
}

}  // namespace

const std::vector<std::string>& KnownMethods() {
  static const std::vector<std::string> methods = {
      "ease",       "retrain",     "retrain_25", "retrain_50", "retrain_75",
      "grad_ascent", "no_bke_v",   "no_bke_t",   "no_gsd",     "no_lock"};
  return methods;
}

json ExperimentConfig::ToJson() const {
  json j;
  j["model"] = {{"input_dim_v", model.input_dim_v},
                {"input_dim_t", model.input_dim_t},
                {"hidden_dim", model.hidden_dim},
                {"embed_dim", model.embed_dim},
                {"lora_rank", model.lora_rank},
                {"adapter_blocks", model.adapter_blocks},
                {"temperature", model.temperature}};
  j["data"] = {{"n_pairs", data.n_pairs},
               {"n_concepts", data.n_concepts},
               {"holdout_pairs", data.holdout_pairs},
               {"concept_scale", data.concept_scale},
               {"intra_noise", data.intra_noise},
               {"shared_map_weight", data.shared_map_weight},
               {"modality_coupling", data.modality_coupling},
               {"latent_dim", data.latent_dim},
               {"private_noise", data.private_noise},
               {"pseudo_classes", data.pseudo_classes}};
  j["federation"] = {{"clients", federation.clients},
                     {"beta", federation.beta},
                     {"rounds", federation.rounds},
                     {"local_steps", federation.local_steps},
                     {"batch_size", federation.batch_size},
                     {"learning_rate", federation.learning_rate},
                     {"client_fraction", federation.client_fraction},
                     {"weighted_average", federation.weighted_average}};
  j["plan"] = {{"scenario", std::string(ScenarioName(plan.request.scenario))},
               {"target", target},
               {"sample_fraction", sample_fraction},
               {"delta", plan.delta},
               {"tau", plan.tau},
               {"alpha", plan.alpha},
               {"excision_rounds", plan.excision_rounds},
               {"stabilization_rounds", plan.stabilization_rounds},
               {"learning_rate", plan.learning_rate},
               {"local_steps", plan.local_steps},
               {"batch_size", plan.batch_size},
               {"reference", std::string(ReferenceName(plan.reference))},
               {"retain_source", RetainSourceName(plan.retain_source)},
               {"charge_bases_per_round", plan.charge_bases_per_round}};
  j["ascent"] = {{"steps", ascent.steps},
                 {"learning_rate", ascent.learning_rate},
                 {"then_rounds", ascent.then_rounds}};
  j["eval"] = {{"pool_size", eval.pool_size},
               {"negatives", eval.negatives},
               {"shadows", eval.mia.shadows},
               {"fpr_target", eval.mia.fpr_target},
               {"run_mia", eval.run_mia}};
  j["experiment"] = {{"kmeans_iters", kmeans_iters},
                     {"methods", methods},
                     {"seeds", seeds},
                     {"output_dir", output_dir}};
  return j;
}

ExperimentConfig ExperimentConfig::FromJson(const json& j) {
  if (!j.is_object()) throw UsageError("config: top level must be an object");
  static const std::set<std::string> sections = {
      "model", "data", "federation", "plan", "ascent", "eval", "experiment"};
  for (const auto& [key, value] : j.items()) {
    if (sections.count(key) == 0) {
      throw UsageError(fmt::format("config: unknown section '{}'", key));
    }
  }
  ExperimentConfig c;
  Section m(j, "model");
  m.Read("input_dim_v", c.model.input_dim_v);
  m.Read("input_dim_t", c.model.input_dim_t);
  m.Read("hidden_dim", c.model.hidden_dim);
  m.Read("embed_dim", c.model.embed_dim);
  m.Read("lora_rank", c.model.lora_rank);
  m.Read("adapter_blocks", c.model.adapter_blocks);
  m.Read("temperature", c.model.temperature);
  m.Finish();
  Section d(j, "data");
  d.Read("n_pairs", c.data.n_pairs);
  d.Read("n_concepts", c.data.n_concepts);
  d.Read("holdout_pairs", c.data.holdout_pairs);
  d.Read("concept_scale", c.data.concept_scale);
  d.Read("intra_noise", c.data.intra_noise);
  d.Read("shared_map_weight", c.data.shared_map_weight);
  d.Read("modality_coupling", c.data.modality_coupling);
  d.Read("latent_dim", c.data.latent_dim);
  d.Read("private_noise", c.data.private_noise);
  d.Read("pseudo_classes", c.data.pseudo_classes);
  d.Finish();
  Section f(j, "federation");
  f.Read("clients", c.federation.clients);
  f.Read("beta", c.federation.beta);
  f.Read("rounds", c.federation.rounds);
  f.Read("local_steps", c.federation.local_steps);
  f.Read("batch_size", c.federation.batch_size);
  f.Read("learning_rate", c.federation.learning_rate);
  f.Read("client_fraction", c.federation.client_fraction);
  f.Read("weighted_average", c.federation.weighted_average);
  f.Finish();
  Section p(j, "plan");
  std::string scenario(ScenarioName(c.plan.request.scenario));
  std::string reference(ReferenceName(c.plan.reference));
  std::string retain = RetainSourceName(c.plan.retain_source);
  p.Read("scenario", scenario);
  p.Read("target", c.target);
  p.Read("sample_fraction", c.sample_fraction);
  p.Read("delta", c.plan.delta);
  p.Read("tau", c.plan.tau);
  p.Read("alpha", c.plan.alpha);
  p.Read("excision_rounds", c.plan.excision_rounds);
  p.Read("stabilization_rounds", c.plan.stabilization_rounds);
  p.Read("learning_rate", c.plan.learning_rate);
  p.Read("local_steps", c.plan.local_steps);
  p.Read("batch_size", c.plan.batch_size);
  p.Read("reference", reference);
  p.Read("retain_source", retain);
  p.Read("charge_bases_per_round", c.plan.charge_bases_per_round);
  p.Finish();
  c.plan.request.scenario = ParseScenario(scenario);
  c.plan.reference = ParseReference(reference);
  c.plan.retain_source = ParseRetainSource(retain);
  Section a(j, "ascent");
  a.Read("steps", c.ascent.steps);
  a.Read("learning_rate", c.ascent.learning_rate);
  a.Read("then_rounds", c.ascent.then_rounds);
  a.Finish();
  Section e(j, "eval");
  e.Read("pool_size", c.eval.pool_size);
  e.Read("negatives", c.eval.negatives);
  e.Read("shadows", c.eval.mia.shadows);
  e.Read("fpr_target", c.eval.mia.fpr_target);
  e.Read("run_mia", c.eval.run_mia);
  e.Finish();
  Section x(j, "experiment");
  x.Read("kmeans_iters", c.kmeans_iters);
  x.Read("methods", c.methods);
  x.Read("seeds", c.seeds);
  x.Read("output_dir", c.output_dir);
  x.Finish();
  c.Validate();
  return c;
}

void ExperimentConfig::Validate() const {
  model.Validate();
  federation.Validate();
  if (federation.rounds < 1) throw UsageError("config: federation.rounds must be >= 1");
  if (seeds.empty()) throw UsageError("config: experiment.seeds must be non-empty");
  if (methods.empty()) throw UsageError("config: experiment.methods must be non-empty");
  for (const auto& m : methods) {
    if (std::find(KnownMethods().begin(), KnownMethods().end(), m) ==
        KnownMethods().end()) {
      throw UsageError(fmt::format("config: unknown method '{}'", m));
    }
  }
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
    throw UsageError("config: plan.sample_fraction must be in (0, 1]");
  }
  if (plan.request.scenario == Scenario::kClient && target >= federation.clients) {
    throw UsageError("config: plan.target is not a client id");
  }
  if (plan.request.scenario == Scenario::kClass && target >= data.pseudo_classes) {
    throw UsageError("config: plan.target is not a pseudo-class id");
  }
  if (data.pseudo_classes < 1 || data.pseudo_classes > data.n_pairs) {
    throw UsageError("config: data.pseudo_classes must be in [1, n_pairs]");
  }
  if (eval.mia.shadows < 2) throw UsageError("config: eval.shadows must be >= 2");
  UnlearnPlan p = plan;
  p.request.samples = {0};
  p.Validate();
}

std::string ExperimentConfig::Hash() const {
  json j = ToJson();
  j["experiment"].erase("seeds");
  j["experiment"].erase("output_dir");
  // nlohmann::json keeps object keys sorted, so the dump is canonical.
  return fmt::format("{:016x}", Fnv1a(j.dump()));
}

void SetConfigKey(json& j, const std::string& dotted, const json& value) {
  const auto dot = dotted.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == dotted.size()) {
    throw UsageError(fmt::format("config key '{}' must be section.key", dotted));
  }
  j[dotted.substr(0, dot)][dotted.substr(dot + 1)] = value;
}

void ApplyEnvOverrides(json& j, const std::string& prefix, char** envp) {
  if (envp == nullptr) return;
  const std::string head = prefix + "_";
  for (char** e = envp; *e != nullptr; ++e) {
    std::string entry(*e);
    if (entry.rfind(head, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string name = entry.substr(head.size(), eq - head.size());
    const std::string raw = entry.substr(eq + 1);
    const auto sep = name.find("__");
    if (sep == std::string::npos) continue;
    std::string section = name.substr(0, sep);
    std::string key = name.substr(sep + 2);
    std::transform(section.begin(), section.end(), section.begin(), ::tolower);
    std::transform(key.begin(), key.end(), key.begin(), ::tolower);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    spdlog::debug("config override {}.{} = {}", section, key, value.dump());
    j[section][key] = value;
  }
}

SeedStreams DeriveStreams(std::uint64_t master) {
  return {DeriveSeed(master, "data"), DeriveSeed(master, "federation"),
          DeriveSeed(master, "unlearning")};
}

SeedWorld::SeedWorld(const ExperimentConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed), streams_(DeriveStreams(seed)) {
  config_.Validate();
  config_.model.seed = DeriveSeed(streams_.federation, "model");
  config_.federation.seed = streams_.federation;
  layout_ = ParamLayout::Build(config_.model);
  backbone_ = FrozenBackbone::Create(config_.model);
  train_ = SynthesizeDataset(config_.data, config_.model.input_dim_v,
                             config_.model.input_dim_t, streams_.data);
  train_size_ = train_.size();
  SyntheticDataset holdout = SampleFromConcepts(
      train_, config_.data.holdout_pairs, DeriveSeed(streams_.data, "holdout"));
  universe_ = Concatenate(train_, holdout);
  negatives_ = SampleFromConcepts(train_, config_.eval.negatives,
                                  DeriveSeed(streams_.data, "negatives"))
                   .pairs;
  const std::size_t dv = config_.model.input_dim_v;
  const std::size_t dt = config_.model.input_dim_t;
  Matrix features(train_.size(), dv + dt);
  for (std::size_t i = 0; i < train_.size(); ++i) {
    for (std::size_t c = 0; c < dv; ++c) features(i, c) = train_.pairs.visual(i, c);
    for (std::size_t c = 0; c < dt; ++c) features(i, dv + c) = train_.pairs.text(i, c);
  }
  labels_ = KMeansClusters(features, config_.data.pseudo_classes,
                           config_.kmeans_iters,
                           DeriveSeed(streams_.federation, "kmeans"));
  shards_ = DirichletPartition(labels_, config_.federation.clients,
                               config_.federation.beta,
                               DeriveSeed(streams_.federation, "partition"));
  request_.scenario = config_.plan.request.scenario;
  request_.client = config_.target;
  request_.pseudo_class = config_.target;
  if (request_.scenario == Scenario::kSample) {
    std::vector<std::size_t> ids(train_.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    Rng rng(DeriveSeed(streams_.unlearning, "samples"));
    Shuffle(ids, rng);
    const auto n = std::max<std::size_t>(
        1, static_cast<std::size_t>(config_.sample_fraction *
                                    static_cast<double>(ids.size())));
    ids.resize(n);
    std::sort(ids.begin(), ids.end());
    request_.samples = std::move(ids);
  }
  config_.plan.request = request_;
  initial_ = InitialParams(layout_, DeriveSeed(streams_.federation, "init"));
}

FederationView SeedWorld::View() const {
  return {&backbone_, &train_, &shards_, &labels_, config_.federation};
}

RoundContext SeedWorld::TrainContext() const {
  RoundContext rc;
  rc.backbone = &backbone_;
  rc.data = &train_;
  rc.shards = &shards_;
  rc.config = config_.federation;
  rc.phase = "train";
  return rc;
}

MethodOutcome RunMethod(const SeedWorld& world, const TrainResult& trained,
                        const Decomposition& decomposition,
                        const std::string& method) {
  UnlearnContext ctx{world.View(), &trained.initial, &trained.w_n,
                     &trained.history};
  MethodOutcome out;
  out.method = method;
  if (IsExcisionName(method)) {
    UnlearnPlan plan = world.config().plan;
    plan.variant = MethodVariant(method);
    UnlearnResult r = RunVariant(ctx, plan, decomposition);
    out.model = std::move(r.model);
    out.ledger = std::move(r.ledger);
    out.trace = std::move(r.trace);
    out.bases = std::move(r.bases);
  } else if (auto fraction = RetrainFraction(method)) {
    RetrainResult r = RunRetrain(ctx, world.request(), *fraction);
    out.model = std::move(r.model);
    out.ledger = std::move(r.ledger);
  } else if (method == "grad_ascent") {
    UnlearnResult r = RunGradientAscent(ctx, world.request(), world.config().ascent);
    out.model = std::move(r.model);
    out.ledger = std::move(r.ledger);
  } else {
    throw UsageError(fmt::format("unknown method '{}'", method));
  }
  return out;
}

ShadowPool TrainShadows(const SeedWorld& world) {
  const ExperimentConfig& cfg = world.config();
  const SyntheticDataset& universe = world.universe();
  const std::size_t n = universe.size();
  std::vector<std::size_t> owner(n);
  for (std::size_t k = 0; k < world.shards().size(); ++k) {
    for (std::size_t id : world.shards()[k]) owner[id] = k;
  }
  for (std::size_t i = world.train_size(); i < n; ++i) {
    owner[i] = i % cfg.federation.clients;
  }
  ShadowPool pool;
  for (std::size_t s = 0; s < cfg.eval.mia.shadows; ++s) {
    Rng rng(DeriveSeed(world.streams().unlearning, "shadow-split", s));
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    Shuffle(ids, rng);
    std::vector<bool> member(n, false);
    for (std::size_t i = 0; i < n / 2; ++i) member[ids[i]] = true;
    Shards shards(cfg.federation.clients);
    for (std::size_t i = 0; i < n; ++i) {
      if (member[i]) shards[owner[i]].push_back(i);
    }
    RoundContext rc;
    rc.backbone = &world.backbone();
    rc.data = &universe;
    rc.shards = &shards;
    rc.config = cfg.federation;
    rc.config.seed = DeriveSeed(world.streams().unlearning, "shadow-fed", s);
    rc.phase = "shadow";
    ParamVector init = InitialParams(
        world.layout(), DeriveSeed(world.streams().unlearning, "shadow-init", s));
    TrainResult t = TrainFederation(init, rc);
    pool.losses.push_back(
        PairLosses(world.backbone(), t.w_n, universe.pairs, world.negatives()));
    pool.member.push_back(std::move(member));
  }
  return pool;
}

Evaluation EvaluateMethods(const SeedWorld& world, const TrainResult& trained,
                           const std::vector<MethodOutcome>& outcomes,
                           const ShadowPool* shadows, const DriftProbe* drift) {
  const ExperimentConfig& cfg = world.config();
  const FederationView view = world.View();
  const std::vector<std::size_t> forget_ids =
      Flatten(ForgetSubsets(world.request(), view));
  const std::vector<std::size_t> retain_ids =
      Flatten(RetainShards(world.request(), view));
  std::vector<std::size_t> holdout_ids;
  for (std::size_t i = world.train_size(); i < world.universe().size(); ++i) {
    holdout_ids.push_back(i);
  }
  const PairBatch forget_pairs = world.train().Gather(forget_ids);
  const PairBatch holdout_pairs = world.universe().Gather(holdout_ids);
  const RetrievalSplit forget_split =
      MakeSplit("forget", forget_pairs, holdout_pairs, cfg.eval.pool_size);
  const RetrievalSplit retain_split = MakeSplit(
      "retain", world.train().Gather(retain_ids), PairBatch{}, cfg.eval.pool_size);

  std::vector<std::pair<std::string, const ParamVector*>> models;
  models.emplace_back("original", &trained.w_n);
  for (const auto& o : outcomes) models.emplace_back(o.method, &o.model);
  const ParamVector* retrain = nullptr;
  for (const auto& o : outcomes) {
    if (o.method == "retrain") retrain = &o.model;
  }
  std::vector<double> s_retrain;
  std::vector<double> s_original =
      PairSimilarities(world.backbone(), trained.w_n, forget_pairs);
  if (retrain != nullptr) {
    s_retrain = PairSimilarities(world.backbone(), *retrain, forget_pairs);
  }

  Evaluation out;
  for (std::size_t m = 0; m < models.size(); ++m) {
    const auto& [name, model] = models[m];
    RunReport r;
    r.scenario = std::string(ScenarioName(world.request().scenario));
    r.method = name;
    r.seed = world.seed();
    const RecallTriple f = EvaluateSplit(world.backbone(), *model, forget_split);
    const RecallTriple rr = EvaluateSplit(world.backbone(), *model, retain_split);
    r.values["f_r1"] = f.r1;
    r.values["f_r5"] = f.r5;
    r.values["f_r10"] = f.r10;
    r.values["r_r1"] = rr.r1;
    r.values["r_r5"] = rr.r5;
    r.values["r_r10"] = rr.r10;
    r.values["rho"] = std::nullopt;
    if (retrain != nullptr) {
      r.values["rho"] = AlignmentResidual(
          PairSimilarities(world.backbone(), *model, forget_pairs), s_retrain,
          s_original);
    }
    r.values["mia"] = std::nullopt;
    r.values["lira_tpr"] = std::nullopt;
    if (shadows != nullptr) {
      const std::vector<double> losses = PairLosses(
          world.backbone(), *model, world.universe().pairs, world.negatives());
      const MiaResult mia =
          MiaAttack(losses, forget_ids, holdout_ids, *shadows, cfg.eval.mia);
      r.values["mia"] = mia.tpr;
      r.values["lira_tpr"] = mia.lira_tpr;
    }
    r.values["comm_mb"] = m == 0 ? 0.0 : outcomes[m - 1].ledger.TotalMb();
    r.values["drift_final"] = std::nullopt;
    if (drift != nullptr) {
      r.values["drift_final"] = UniqueDrift(*model, drift->reference, drift->bases);
    }
    out.reports.push_back(std::move(r));
  }
  const RunReport* reference = nullptr;
  for (const auto& r : out.reports) {
    if (r.method == "retrain") reference = &r;
  }
  if (reference != nullptr) {
    const RunReport ref_copy = *reference;
    for (auto& r : out.reports) r.FillGaps(ref_copy);
  } else {
    RunReport none;
    for (auto& r : out.reports) r.FillGaps(none);
  }
  return out;
}

bool IsExcisionMethod(const std::string& method) { return IsExcisionName(method); }

Decomposition DecomposeTrained(const SeedWorld& world, const TrainResult& trained) {
  const ExperimentConfig& cfg = world.config();
  return Decompose(trained.history, world.request(), cfg.plan.delta, cfg.plan.tau,
                   world.View(), trained.w_n, cfg.plan.retain_source);
}

DriftProbe MakeDriftProbe(const SeedWorld& world, const TrainResult& trained,
                          const Decomposition& decomposition) {
  const ExperimentConfig& cfg = world.config();
  UnlearnContext ctx{world.View(), &trained.initial, &trained.w_n, &trained.history};
  return DriftProbe{VariantBases(decomposition, cfg.plan.delta, Variant::kFull),
                    ExcisionReference(ctx, cfg.plan, &decomposition)};
}

PairBatch ForgetPairs(const SeedWorld& world) {
  return world.train().Gather(Flatten(ForgetSubsets(world.request(), world.View())));
}

SeedRun RunSeed(const SeedWorld& world) {
  const ExperimentConfig& cfg = world.config();
  SeedRun run;
  spdlog::info("seed {}: training {} rounds over {} clients", world.seed(),
               cfg.federation.rounds, cfg.federation.clients);
  run.trained = TrainFederation(world.initial(), world.TrainContext());
  const bool excise = std::any_of(cfg.methods.begin(), cfg.methods.end(),
                                  IsExcisionName);
  if (excise) run.decomposition = DecomposeTrained(world, run.trained);
  for (const auto& method : cfg.methods) {
    spdlog::info("seed {}: method {}", world.seed(), method);
    run.outcomes.push_back(RunMethod(world, run.trained, run.decomposition, method));
  }
  std::optional<ShadowPool> shadows;
  if (cfg.eval.run_mia) shadows = TrainShadows(world);
  std::optional<DriftProbe> drift;
  if (excise) drift = MakeDriftProbe(world, run.trained, run.decomposition);
  run.evaluation = EvaluateMethods(world, run.trained, run.outcomes,
                                   shadows ? &*shadows : nullptr,
                                   drift ? &*drift : nullptr);
  return run;
}

}  // namespace fedexcise
