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

#include "fedexcise/federation.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "fedexcise/errors.h"
#include "spdlog/fmt/fmt.h"
#include "spdlog/spdlog.h"

namespace fedexcise {
namespace {

Matrix Gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = stddev * StandardNormal(rng);
  return m;
}

// Draws `n` pairs; concept assignment round-robin, then shuffled.
SyntheticDataset DrawPairs(const ConceptModel& concepts, std::size_t n_concepts,
                           std::size_t n_pairs, Rng& rng) {
  const std::size_t dv = concepts.center_v.cols();
  const std::size_t dt = concepts.center_t.cols();
  const std::size_t latent = concepts.map_v.front().cols();
  SyntheticDataset out;
  out.n_concepts = n_concepts;
  out.concepts = concepts;
  out.concept_ids.resize(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) out.concept_ids[i] = i % n_concepts;
  Shuffle(out.concept_ids, rng);
  out.pairs.visual = Matrix(n_pairs, dv);
  out.pairs.text = Matrix(n_pairs, dt);
  out.pairs.pair_ids.resize(n_pairs);
  std::iota(out.pairs.pair_ids.begin(), out.pairs.pair_ids.end(),
            std::size_t{0});
  const double sigma = concepts.intra_noise;
  const double priv = sigma * concepts.private_noise;
  std::vector<double> eps(latent);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const std::size_t k = out.concept_ids[i];
    for (double& e : eps) e = StandardNormal(rng);
    std::vector<double> sv = MatVec(concepts.map_v[k], eps);
    std::vector<double> st = MatVec(concepts.map_t[k], eps);
    for (std::size_t c = 0; c < dv; ++c) {
      out.pairs.visual(i, c) =
          concepts.center_v(k, c) + sigma * sv[c] + priv * StandardNormal(rng);
    }
    for (std::size_t c = 0; c < dt; ++c) {
      out.pairs.text(i, c) =
          concepts.center_t(k, c) + sigma * st[c] + priv * StandardNormal(rng);
    }
  }
  return out;
}

double SquaredDistance(const Matrix& a, std::size_t i, const Matrix& b,
                       std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    const double d = a(i, c) - b(j, c);
    s += d * d;
  }
  return s;
}

template <typename Error>
[[noreturn]] void Rethrow(const Error& e, std::size_t client) {
  throw Error(fmt::format("client {}: {}", client, e.what()));
}

}  // namespace

PairBatch SyntheticDataset::Gather(std::span<const std::size_t> sample_ids) const {
  return pairs.Rows(sample_ids);
}

SyntheticDataset SynthesizeDataset(const DataConfig& config,
                                   std::size_t input_dim_v,
                                   std::size_t input_dim_t, std::uint64_t seed) {
  if (config.n_concepts < 2 || config.n_pairs < config.n_concepts) {
    throw UsageError(fmt::format(
        "synthesize: need n_concepts >= 2 and n_pairs >= n_concepts ({}, {})",
        config.n_concepts, config.n_pairs));
  }
  if (config.latent_dim == 0) throw UsageError("synthesize: latent_dim must be > 0");
  Rng rng(seed);
  const std::size_t l = config.latent_dim;
  const double unit = 1.0 / std::sqrt(static_cast<double>(l));
  ConceptModel cm;
  cm.intra_noise = config.intra_noise;
  cm.private_noise = config.private_noise;
  Matrix lift_v = Gaussian(input_dim_v, l, unit, rng);
  Matrix lift_t = Gaussian(input_dim_t, l, unit, rng);
  cm.center_v = Matrix(config.n_concepts, input_dim_v);
  cm.center_t = Matrix(config.n_concepts, input_dim_t);
  const double tie = std::sqrt(std::clamp(config.modality_coupling, 0.0, 1.0));
  const double free = std::sqrt(1.0 - tie * tie);
  std::vector<double> u(l);
  std::vector<double> g(l);
  for (std::size_t k = 0; k < config.n_concepts; ++k) {
    for (double& x : u) x = StandardNormal(rng);
    for (double& x : g) x = StandardNormal(rng);
    std::vector<double> cv = MatVec(lift_v, u);
    std::vector<double> ct = MatVec(lift_t, u);
    std::vector<double> cg = MatVec(lift_t, g);
    for (std::size_t c = 0; c < input_dim_v; ++c) {
      cm.center_v(k, c) = config.concept_scale * cv[c];
    }
    for (std::size_t c = 0; c < input_dim_t; ++c) {
      cm.center_t(k, c) = config.concept_scale * (tie * ct[c] + free * cg[c]);
    }
  }
  const double w = std::sqrt(std::clamp(config.shared_map_weight, 0.0, 1.0));
  const double wc = std::sqrt(1.0 - w * w);
  Matrix shared_v = Gaussian(input_dim_v, l, unit, rng);
  Matrix shared_t = Gaussian(input_dim_t, l, unit, rng);
  for (std::size_t k = 0; k < config.n_concepts; ++k) {
    cm.map_v.push_back(Add(Scale(shared_v, w),
                           Scale(Gaussian(input_dim_v, l, unit, rng), wc)));
    cm.map_t.push_back(Add(Scale(shared_t, w),
                           Scale(Gaussian(input_dim_t, l, unit, rng), wc)));
  }
  return DrawPairs(cm, config.n_concepts, config.n_pairs, rng);
}

SyntheticDataset SampleFromConcepts(const SyntheticDataset& base,
                                    std::size_t n_pairs, std::uint64_t seed) {
  Rng rng(seed);
  return DrawPairs(base.concepts, base.n_concepts, n_pairs, rng);
}

std::vector<std::size_t> KMeansClusters(const Matrix& features, std::size_t k,
                                        std::size_t max_iters,
                                        std::uint64_t seed) {
  const std::size_t n = features.rows();
  if (k == 0 || k > n) {
    throw UsageError(fmt::format("kmeans: k = {} with {} points", k, n));
  }
  if (!features.AllFinite()) throw UsageError("kmeans: non-finite features");
  Rng rng(seed);
  Matrix centers(k, features.cols());
  auto set_center = [&](std::size_t c, std::size_t row) {
    for (std::size_t j = 0; j < features.cols(); ++j) {
      centers(c, j) = features(row, j);
    }
  };
  set_center(0, static_cast<std::size_t>(rng() % n));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], SquaredDistance(features, i, centers, c - 1));
      if (nearest[i] > far_d) {
        far_d = nearest[i];
        far = i;
      }
    }
    set_center(c, far);
  }
  std::vector<std::size_t> labels(n, 0);
  std::vector<double> dist(n, 0.0);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = SquaredDistance(features, i, centers, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (labels[i] != best) changed = true;
      labels[i] = best;
      dist[i] = best_d;
    }
    if (!changed) break;
    std::vector<std::size_t> counts(k, 0);
    Matrix sums(k, features.cols());
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[labels[i]];
      for (std::size_t j = 0; j < features.cols(); ++j) {
        sums(labels[i], j) += features(i, j);
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        const auto far = static_cast<std::size_t>(
            std::max_element(dist.begin(), dist.end()) - dist.begin());
        set_center(c, far);
        dist[far] = 0.0;
        continue;
      }
      for (std::size_t j = 0; j < features.cols(); ++j) {
        centers(c, j) = sums(c, j) / static_cast<double>(counts[c]);
      }
    }
  }
  return labels;
}

Shards DirichletPartition(std::span<const std::size_t> labels, std::size_t k,
                          double beta, std::uint64_t seed) {
  if (k < 1) throw UsageError("dirichlet_partition: K must be >= 1");
  if (!(beta > 0.0)) throw UsageError("dirichlet_partition: beta must be > 0");
  Shards shards(k);
  if (labels.empty()) return shards;
  Rng rng(seed);
  const std::size_t n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> members(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (auto& ids : members) {
    if (ids.empty()) continue;
    std::vector<double> p = SampleDirichlet(k, beta, rng);
    std::vector<double> cdf(k);
    std::partial_sum(p.begin(), p.end(), cdf.begin());
    for (std::size_t id : ids) {
      const double x = unif(rng) * cdf.back();
      auto slot = static_cast<std::size_t>(
          std::upper_bound(cdf.begin(), cdf.end(), x) - cdf.begin());
      shards[std::min(slot, k - 1)].push_back(id);
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (!shards[c].empty()) continue;
    auto largest = std::max_element(
        shards.begin(), shards.end(),
        [](const auto& a, const auto& b) { return a.size() < b.size(); });
    if (largest->size() < 2) continue;
    spdlog::info("dirichlet_partition: shard {} empty, moving one sample", c);
    shards[c].push_back(largest->back());
    largest->pop_back();
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  return shards;
}

void FederationConfig::Validate() const {
  if (clients < 2) throw UsageError("federation: clients must be >= 2");
  if (!(beta > 0.0)) throw UsageError("federation: beta must be > 0");
  if (!(client_fraction > 0.0 && client_fraction <= 1.0)) {
    throw UsageError("federation: client_fraction must be in (0, 1]");
  }
  if (!(learning_rate >= 0.0)) {
    throw UsageError("federation: learning_rate must be >= 0");
  }
}

void GradientHistory::Append(std::size_t client, std::size_t round,
                             ParamVector delta) {
  auto& list = entries_.at(client);
  if (!list.empty()) {
    if (list.back().round >= round) {
      throw UsageError(fmt::format(
          "history: client {} round {} not after {}", client, round,
          list.back().round));
    }
    delta.RequireCompatible(list.back().delta, "history");
  }
  list.push_back({round, std::move(delta)});
}

std::size_t GradientHistory::TotalEntries() const {
  std::size_t n = 0;
  for (const auto& list : entries_) n += list.size();
  return n;
}

void CommLedger::Add(LedgerEntry entry) {
  if (entry.uplink_mb < 0.0 || entry.downlink_mb < 0.0) {
    throw UsageError("ledger: negative payload");
  }
  entries_.push_back(std::move(entry));
}

void CommLedger::Merge(const CommLedger& other) {
  for (const auto& e : other.entries_) Add(e);
}

double CommLedger::TotalMb() const {
  double total = 0.0;
  for (const auto& e : entries_) total += e.uplink_mb + e.downlink_mb;
  return total;
}

double PayloadMb(std::size_t floats) {
  return static_cast<double>(floats) * 8.0 / 1e6;
}

RoundResult FedAvgRound(const ParamVector& global, const RoundContext& ctx,
                        std::size_t round, Rng& rng) {
  const Shards& shards = *ctx.shards;
  const FederationConfig& cfg = ctx.config;
  const std::size_t k_total = shards.size();
  std::vector<std::size_t> chosen(k_total);
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  const auto n_pick = static_cast<std::size_t>(
      std::ceil(cfg.client_fraction * static_cast<double>(k_total)));
  if (n_pick < 1) throw UsageError("fedavg: no clients sampled");
  if (n_pick < k_total) {
    Shuffle(chosen, rng);
    chosen.resize(n_pick);
    std::sort(chosen.begin(), chosen.end());
  }
  RoundResult out;
  const std::uint64_t round_seed =
      DeriveSeed(DeriveSeed(cfg.seed, ctx.phase), "round", round);
  std::vector<double> weights;
  for (std::size_t k : chosen) {
    if (shards[k].empty()) {
      spdlog::debug("fedavg: client {} has no data, skipped", k);
      continue;
    }
    PairBatch shard = ctx.data->Gather(shards[k]);
    SgdOptions opts{cfg.learning_rate, cfg.local_steps, cfg.batch_size,
                    DeriveSeed(round_seed, "client", k)};
    StepObserver hook;
    if (ctx.observer) {
      hook = [&ctx, k](std::size_t step, const ParamVector& w,
                       const ParamVector& g) { ctx.observer(k, step, w, g); };
    }
    LocalSgdResult res;
    try {
      res = LocalSgd(*ctx.backbone, global, shard, ctx.objective, opts, hook);
    } catch (const NumericError& e) {
      Rethrow(e, k);
    } catch (const UsageError& e) {
      Rethrow(e, k);
    }
    out.sampled.push_back(k);
    out.deltas.push_back(std::move(res.delta));
    weights.push_back(cfg.weighted_average ? static_cast<double>(shards[k].size())
                                           : 1.0);
  }
  out.global = global;
  if (!out.deltas.empty()) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    ParamVector sum = ParamVector::Zeros(global.layout_ptr());
    for (std::size_t i = 0; i < out.deltas.size(); ++i) {
      sum.Axpy(weights[i], out.deltas[i]);
    }
    out.global.Axpy(1.0 / total, sum);
  }
  const std::size_t n = out.sampled.size();
  out.ledger.phase = ctx.phase;
  out.ledger.round = round;
  out.ledger.downlink_mb = PayloadMb(n * (global.dim() + ctx.extra_downlink_floats));
  out.ledger.uplink_mb = PayloadMb(n * global.dim());
  return out;
}

TrainResult TrainFederation(const ParamVector& initial, const RoundContext& ctx) {
  ctx.config.Validate();
  TrainResult out;
  out.initial = initial;
  out.history = GradientHistory(ctx.shards->size());
  ParamVector global = initial;
  Rng rng(DeriveSeed(ctx.config.seed, "sampling"));
  for (std::size_t t = 0; t < ctx.config.rounds; ++t) {
    RoundResult r = FedAvgRound(global, ctx, t, rng);
    for (std::size_t i = 0; i < r.sampled.size(); ++i) {
      out.history.Append(r.sampled[i], t, std::move(r.deltas[i]));
    }
    out.ledger.Add(r.ledger);
    global = std::move(r.global);
  }
  out.w_n = std::move(global);
  return out;
}

}  // namespace fedexcise
