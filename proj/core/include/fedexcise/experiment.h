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

#ifndef FEDEXCISE_EXPERIMENT_H_
#define FEDEXCISE_EXPERIMENT_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedexcise/federation.h"
#include "fedexcise/gsd.h"
#include "fedexcise/metrics.h"
#include "fedexcise/model.h"
#include "fedexcise/unlearn.h"
#include "nlohmann/json.hpp"

namespace fedexcise {

struct EvalConfig {
  std::size_t pool_size = 200;
  std::size_t negatives = 64;
  MiaConfig mia;
  bool run_mia = true;
};

struct ExperimentConfig {
  ModelConfig model;
  DataConfig data;
  FederationConfig federation;
  UnlearnPlan plan;
  AscentPlan ascent;
  EvalConfig eval;
  std::size_t kmeans_iters = 50;
  // Scenario target: client id (client), pseudo-class (class).
  std::size_t target = 0;
  double sample_fraction = 0.05;  // sample scenario
  std::vector<std::string> methods = {"ease",     "retrain",  "retrain_25",
                                      "retrain_50", "retrain_75", "grad_ascent",
                                      "no_bke_v", "no_bke_t", "no_gsd",
                                      "no_lock"};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string output_dir = "runs";

  nlohmann::json ToJson() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static ExperimentConfig FromJson(const nlohmann::json& j);
  void Validate() const;
  // FNV-1a over the canonical (sorted-key) dump, hex encoded.
  std::string Hash() const;
};

const std::vector<std::string>& KnownMethods();

// Applies PREFIX_SECTION__KEY=value environment overrides (values parsed as
// JSON, falling back to strings).
void ApplyEnvOverrides(nlohmann::json& j, const std::string& prefix,
                       char** envp);

// Sets a dotted key ("plan.delta") to a JSON value.
void SetConfigKey(nlohmann::json& j, const std::string& dotted,
                  const nlohmann::json& value);

struct SeedStreams {
  std::uint64_t data;
  std::uint64_t federation;
  std::uint64_t unlearning;
};
SeedStreams DeriveStreams(std::uint64_t master);

// Everything reproducible from (config, seed) before any unlearning.
class SeedWorld {
 public:
  SeedWorld(const ExperimentConfig& config, std::uint64_t seed);

  const ExperimentConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  const SeedStreams& streams() const { return streams_; }
  const FrozenBackbone& backbone() const { return backbone_; }
  const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }
  // Train pairs followed by held-out pairs; ids < train_size are train.
  const SyntheticDataset& universe() const { return universe_; }
  std::size_t train_size() const { return train_size_; }
  const SyntheticDataset& train() const { return train_; }
  const PairBatch& negatives() const { return negatives_; }
  const std::vector<std::size_t>& pseudo_labels() const { return labels_; }
  const Shards& shards() const { return shards_; }
  const UnlearnRequest& request() const { return request_; }
  const ParamVector& initial() const { return initial_; }
  FederationView View() const;
  RoundContext TrainContext() const;

 private:
  ExperimentConfig config_;
  std::uint64_t seed_;
  SeedStreams streams_;
  std::shared_ptr<const ParamLayout> layout_;
  FrozenBackbone backbone_;
  SyntheticDataset train_;
  SyntheticDataset universe_;
  std::size_t train_size_ = 0;
  PairBatch negatives_;
  std::vector<std::size_t> labels_;
  Shards shards_;
  UnlearnRequest request_;
  ParamVector initial_;
};

struct MethodOutcome {
  std::string method;
  ParamVector model;
  CommLedger ledger;
  std::optional<PhaseTrace> trace;
  std::optional<ExcisionBases> bases;
};

// Unique-subspace displacement measured for every method.
struct DriftProbe {
  ExcisionBases bases;
  ParamVector reference;
};

// Methods that go through decomposition and excision rounds.
bool IsExcisionMethod(const std::string& method);

// Phase I for the configured request, delta and tau.
Decomposition DecomposeTrained(const SeedWorld& world, const TrainResult& trained);
DriftProbe MakeDriftProbe(const SeedWorld& world, const TrainResult& trained,
                          const Decomposition& decomposition);
// Every pair covered by the unlearning request, in id order.
PairBatch ForgetPairs(const SeedWorld& world);

// Runs one unlearning method against a trained federation.
MethodOutcome RunMethod(const SeedWorld& world, const TrainResult& trained,
                        const Decomposition& decomposition,
                        const std::string& method);

// Shadow federations on random halves of the universe.
ShadowPool TrainShadows(const SeedWorld& world);

struct Evaluation {
  std::vector<RunReport> reports;  // "original" first, then methods
};

Evaluation EvaluateMethods(const SeedWorld& world, const TrainResult& trained,
                           const std::vector<MethodOutcome>& outcomes,
                           const ShadowPool* shadows, const DriftProbe* drift);

// The whole in-memory pipeline for one seed.
struct SeedRun {
  TrainResult trained;
  Decomposition decomposition;
  std::vector<MethodOutcome> outcomes;
  Evaluation evaluation;
};
SeedRun RunSeed(const SeedWorld& world);

}  // namespace fedexcise

#endif  // FEDEXCISE_EXPERIMENT_H_
