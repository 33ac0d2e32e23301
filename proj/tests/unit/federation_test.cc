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
#include <set>

#include "fedexcise/errors.h"
#include "gtest/gtest.h"
#include "test_support.h"

namespace fedexcise {
namespace {

TEST(Dirichlet, LargeConcentrationGivesBalancedShards) {
  std::vector<std::size_t> labels(5000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 10;
  int balanced = 0;
  for (std::uint64_t draw = 0; draw < 50; ++draw) {
    const Shards shards = DirichletPartition(labels, 10, 100.0, draw);
    std::size_t lo = labels.size();
    std::size_t hi = 0;
    for (const auto& s : shards) {
      lo = std::min(lo, s.size());
      hi = std::max(hi, s.size());
    }
    if (lo > 0 && static_cast<double>(hi) / lo <= 1.5) ++balanced;
  }
  EXPECT_GE(balanced, 48);  // >= 95% of 50
}

TEST(Dirichlet, EverySampleAssignedOnce) {
  std::vector<std::size_t> labels(300);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (i * 7) % 5;
  const Shards shards = DirichletPartition(labels, 6, 0.3, 4);
  ASSERT_EQ(shards.size(), 6u);
  std::vector<int> seen(labels.size(), 0);
  for (const auto& s : shards) {
    for (std::size_t id : s) ++seen.at(id);
  }
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST(Dirichlet, InvalidArgumentsAreUsageErrors) {
  std::vector<std::size_t> labels = {0, 1};
  EXPECT_THROW(DirichletPartition(labels, 0, 0.5, 1), UsageError);
  EXPECT_THROW(DirichletPartition(labels, 2, 0.0, 1), UsageError);
}

TEST(KMeans, SeparatesDistantClouds) {
  Rng rng(3);
  Matrix features(40, 3);
  for (std::size_t r = 0; r < 40; ++r) {
    const double offset = r < 20 ? 0.0 : 100.0;
    for (std::size_t c = 0; c < 3; ++c) features(r, c) = offset + StandardNormal(rng);
  }
  const std::vector<std::size_t> labels = KMeansClusters(features, 2, 50, 7);
  for (std::size_t r = 1; r < 20; ++r) EXPECT_EQ(labels[r], labels[0]);
  for (std::size_t r = 21; r < 40; ++r) EXPECT_EQ(labels[r], labels[20]);
  EXPECT_NE(labels[0], labels[20]);
}

TEST(Synthesize, ShapesAndDeterminism) {
  DataConfig cfg;
  cfg.n_pairs = 50;
  cfg.n_concepts = 5;
  const SyntheticDataset a = SynthesizeDataset(cfg, 6, 7, 11);
  const SyntheticDataset b = SynthesizeDataset(cfg, 6, 7, 11);
  EXPECT_EQ(a.size(), 50u);
  EXPECT_EQ(a.pairs.visual.cols(), 6u);
  EXPECT_EQ(a.pairs.text.cols(), 7u);
  EXPECT_EQ(testing::Values(a.pairs.visual), testing::Values(b.pairs.visual));
  EXPECT_EQ(a.concept_ids, b.concept_ids);
  for (std::size_t c : a.concept_ids) EXPECT_LT(c, 5u);
}

struct SmallFederation {
  ModelConfig model;
  std::shared_ptr<const ParamLayout> layout;
  FrozenBackbone backbone;
  SyntheticDataset data;
  Shards shards;
  RoundContext ctx;
  ParamVector initial;

  SmallFederation() {
    model.input_dim_v = 5;
    model.input_dim_t = 5;
    model.hidden_dim = 6;
    model.embed_dim = 3;
    model.lora_rank = 2;
    layout = ParamLayout::Build(model);
    backbone = FrozenBackbone::Create(model);
    DataConfig dc;
    dc.n_pairs = 90;
    dc.n_concepts = 3;
    data = SynthesizeDataset(dc, 5, 5, 2);
    shards = DirichletPartition(data.concept_ids, 3, 1.0, 5);
    ctx.backbone = &backbone;
    ctx.data = &data;
    ctx.shards = &shards;
    ctx.config.clients = 3;
    ctx.config.rounds = 2;
    ctx.config.local_steps = 2;
    ctx.config.batch_size = 8;
    initial = InitialParams(layout, 1);
  }
};

TEST(FedAvg, ZeroRoundsReturnsInitial) {
  SmallFederation f;
  f.ctx.config.rounds = 0;
  const TrainResult r = TrainFederation(f.initial, f.ctx);
  EXPECT_EQ(r.w_n, f.initial);
  EXPECT_EQ(r.history.TotalEntries(), 0u);
}

TEST(FedAvg, ZeroLearningRateIsBitIdenticalNoOp) {
  SmallFederation f;
  f.ctx.config.learning_rate = 0.0;
  const TrainResult r = TrainFederation(f.initial, f.ctx);
  EXPECT_EQ(r.w_n, f.initial);
}

TEST(FedAvg, RecordsOneDeltaPerClientRound) {
  SmallFederation f;
  const TrainResult r = TrainFederation(f.initial, f.ctx);
  std::size_t nonempty = 0;
  for (const auto& s : f.shards) nonempty += s.empty() ? 0 : 1;
  EXPECT_EQ(r.history.TotalEntries(), nonempty * f.ctx.config.rounds);
  EXPECT_FALSE(r.w_n == f.initial);
  // Uplink plus downlink of the full model per client per round.
  const double per_round = 2.0 * PayloadMb(f.layout->dim()) * nonempty;
  EXPECT_NEAR(r.ledger.TotalMb(), per_round * f.ctx.config.rounds, 1e-9);
}

TEST(FedAvg, DeterministicForFixedSeed) {
  SmallFederation f;
  EXPECT_EQ(TrainFederation(f.initial, f.ctx).w_n, TrainFederation(f.initial, f.ctx).w_n);
}

TEST(FedAvg, EmptyShardNeverTrains) {
  SmallFederation f;
  f.shards[1].clear();
  const TrainResult r = TrainFederation(f.initial, f.ctx);
  EXPECT_TRUE(r.history.client(1).empty());
}

TEST(FederationConfig, ValidateRejectsBadValues) {
  FederationConfig c;
  c.clients = 0;
  EXPECT_THROW(c.Validate(), UsageError);
  c = FederationConfig{};
  c.client_fraction = 0.0;
  EXPECT_THROW(c.Validate(), UsageError);
  c = FederationConfig{};
  c.learning_rate = -1.0;
  EXPECT_THROW(c.Validate(), UsageError);
}

TEST(CommLedger, MergeSums) {
  CommLedger a;
  a.Add({"train", 1, 1.5, 0.5});
  CommLedger b;
  b.Add({"unlearn", 1, 0.25, 0.25});
  a.Merge(b);
  EXPECT_EQ(a.entries().size(), 2u);
  EXPECT_DOUBLE_EQ(a.TotalMb(), 2.5);
  EXPECT_DOUBLE_EQ(PayloadMb(125000), 1.0);  // 8-byte doubles
}

}  // namespace
}  // namespace fedexcise
