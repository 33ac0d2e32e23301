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

#ifndef FEDEXCISE_FEDERATION_H_
#define FEDEXCISE_FEDERATION_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedexcise/model.h"
#include "fedexcise/numerics.h"
#include "fedexcise/param_vector.h"
#include "fedexcise/rng.h"

namespace fedexcise {

struct DataConfig {
  std::size_t n_pairs = 2000;
  std::size_t n_concepts = 20;
  std::size_t holdout_pairs = 400;
  double concept_scale = 1.0;
  double intra_noise = 0.5;
  // Share of the pair-level latent routed through maps common to all
  // concepts; the rest goes through concept-specific maps.
  double shared_map_weight = 0.5;
  // Share of each concept's text center tied to its visual latent.
  double modality_coupling = 0.8;
  std::size_t latent_dim = 8;
  // Independent per-modality noise, relative to intra_noise.
  double private_noise = 0.25;
  std::size_t pseudo_classes = 20;
};

// Generative parameters, kept so further pairs can be drawn from the same
// concepts.
struct ConceptModel {
  Matrix center_v;  // n_concepts x input_dim_v
  Matrix center_t;
  std::vector<Matrix> map_v;  // per concept, input_dim_v x latent_dim
  std::vector<Matrix> map_t;
  double intra_noise = 0.0;
  double private_noise = 0.0;
};

struct SyntheticDataset {
  PairBatch pairs;  // row i holds sample_id i
  std::vector<std::size_t> concept_ids;
  std::size_t n_concepts = 0;
  ConceptModel concepts;

  std::size_t size() const { return pairs.size(); }
  PairBatch Gather(std::span<const std::size_t> sample_ids) const;
};

SyntheticDataset SynthesizeDataset(const DataConfig& config,
                                   std::size_t input_dim_v,
                                   std::size_t input_dim_t, std::uint64_t seed);

// Fresh pairs from the concepts of `base` (held-out / non-member pool).
// Sample ids restart at 0.
SyntheticDataset SampleFromConcepts(const SyntheticDataset& base,
                                    std::size_t n_pairs, std::uint64_t seed);

// Lloyd's algorithm over rows of `features`.
std::vector<std::size_t> KMeansClusters(const Matrix& features, std::size_t k,
                                        std::size_t max_iters,
                                        std::uint64_t seed);

using Shards = std::vector<std::vector<std::size_t>>;

Shards DirichletPartition(std::span<const std::size_t> labels, std::size_t k,
                          double beta, std::uint64_t seed);

struct FederationConfig {
  std::size_t clients = 10;
  double beta = 0.5;
  std::size_t rounds = 30;
  std::size_t local_steps = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double client_fraction = 1.0;
  bool weighted_average = false;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct HistoryEntry {
  std::size_t round;
  ParamVector delta;
};

class GradientHistory {
 public:
  explicit GradientHistory(std::size_t clients = 0) : entries_(clients) {}

  void Append(std::size_t client, std::size_t round, ParamVector delta);
  std::size_t clients() const { return entries_.size(); }
  const std::vector<HistoryEntry>& client(std::size_t k) const {
    return entries_.at(k);
  }
  std::size_t TotalEntries() const;

 private:
  std::vector<std::vector<HistoryEntry>> entries_;
};

struct LedgerEntry {
  std::string phase;
  std::size_t round = 0;
  double uplink_mb = 0.0;
  double downlink_mb = 0.0;
};

class CommLedger {
 public:
  void Add(LedgerEntry entry);
  void Merge(const CommLedger& other);
  const std::vector<LedgerEntry>& entries() const { return entries_; }
  double TotalMb() const;

 private:
  std::vector<LedgerEntry> entries_;
};

double PayloadMb(std::size_t floats);

// Everything a round needs besides the model.
struct RoundContext {
  const FrozenBackbone* backbone = nullptr;
  const SyntheticDataset* data = nullptr;
  const Shards* shards = nullptr;  // empty shards never train
  FederationConfig config;
  Objective objective;
  std::string phase = "train";
  // Extra floats broadcast to every sampled client this round (bases,
  // reference points).
  std::size_t extra_downlink_floats = 0;
  // Per-client step hook: (client, step, params, alignment gradient).
  std::function<void(std::size_t, std::size_t, const ParamVector&,
                     const ParamVector&)>
      observer;
};

struct RoundResult {
  ParamVector global;
  std::vector<std::size_t> sampled;
  std::vector<ParamVector> deltas;  // aligned with `sampled`
  LedgerEntry ledger;
};

RoundResult FedAvgRound(const ParamVector& global, const RoundContext& ctx,
                        std::size_t round, Rng& rng);

struct TrainResult {
  ParamVector initial;
  ParamVector w_n;
  GradientHistory history;
  CommLedger ledger;
};

// Runs `ctx.config.rounds` FedAvg rounds from `initial`.
TrainResult TrainFederation(const ParamVector& initial, const RoundContext& ctx);

}  // namespace fedexcise

#endif  // FEDEXCISE_FEDERATION_H_
