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


#include "fedexcise/model.h"

#include <cmath>

#include "fedexcise/errors.h"
#include "fedexcise/oracles.h"
#include "gtest/gtest.h"
#include "test_support.h"

namespace fedexcise {
namespace {

using testing::GaussianMatrix;
using testing::GaussianParams;

ModelConfig SmallModel() {
  ModelConfig cfg;
  cfg.input_dim_v = 5;
  cfg.input_dim_t = 4;
  cfg.hidden_dim = 6;
  cfg.embed_dim = 3;
  cfg.lora_rank = 2;
  cfg.temperature = 0.5;
  cfg.seed = 9;
  return cfg;
}

PairBatch RandomBatch(const ModelConfig& cfg, std::size_t n, Rng& rng) {
  PairBatch b{GaussianMatrix(n, cfg.input_dim_v, rng), GaussianMatrix(n, cfg.input_dim_t, rng),
              {}};
  for (std::size_t i = 0; i < n; ++i) b.pair_ids.push_back(i);
  return b;
}

TEST(InfoNce, TwoAlignedPairsAtUnitTemperature) {
  const std::vector<double> eye = {1, 0, 0, 1};
  EmbeddingBatch zv{Matrix::FromRows(2, 2, eye), {0, 1}};
  EmbeddingBatch zt{Matrix::FromRows(2, 2, eye), {0, 1}};
  EXPECT_NEAR(InfoNceLoss(zv, zt, 1.0), 0.313262, 1e-6);
}

TEST(InfoNce, MismatchedPairIdsAreRejected) {
  const std::vector<double> eye = {1, 0, 0, 1};
  EmbeddingBatch zv{Matrix::FromRows(2, 2, eye), {0, 1}};
  EmbeddingBatch zt{Matrix::FromRows(2, 2, eye), {1, 0}};
  EXPECT_THROW(InfoNceLoss(zv, zt, 1.0), UsageError);
}

TEST(InfoNce, GradientMatchesFiniteDifferences) {
  const OracleReport r = InfoNceGradientCheck(6, 17);
  EXPECT_TRUE(r.pass) << r.max_deviation;
}

TEST(InfoNce, SinglePairHasZeroGradient) {
  const ModelConfig cfg = SmallModel();
  const auto layout = ParamLayout::Build(cfg);
  const FrozenBackbone backbone = FrozenBackbone::Create(cfg);
  Rng rng(1);
  const ParamVector w = GaussianParams(layout, rng, 0.3);
  double loss = -1.0;
  const ParamVector g = InfoNceGradient(backbone, w, RandomBatch(cfg, 1, rng), &loss);
  EXPECT_EQ(loss, 0.0);
  for (double x : g.flat()) EXPECT_EQ(x, 0.0);
}

TEST(InfoNce, VisualGradientDependsOnTextInputs) {
  const ModelConfig cfg = SmallModel();
  const auto layout = ParamLayout::Build(cfg);
  const FrozenBackbone backbone = FrozenBackbone::Create(cfg);
  Rng rng(2);
  const ParamVector w = GaussianParams(layout, rng, 0.3);
  PairBatch batch = RandomBatch(cfg, 4, rng);
  const ParamVector before = InfoNceGradient(backbone, w, batch);
  batch.text = GaussianMatrix(4, cfg.input_dim_t, rng);
  const ParamVector after = InfoNceGradient(backbone, w, batch);
  const std::size_t vproj = layout->Find(Modality::kVisual, "projector");
  double diff = 0.0;
  for (std::size_t i = 0; i < before.block(vproj).size(); ++i) {
    diff += std::abs(before.block(vproj)[i] - after.block(vproj)[i]);
  }
  EXPECT_GT(diff, 1e-6);
}

TEST(Encode, RowsAreUnitNorm) {
  const ModelConfig cfg = SmallModel();
  const auto layout = ParamLayout::Build(cfg);
  const FrozenBackbone backbone = FrozenBackbone::Create(cfg);
  Rng rng(3);
  const ParamVector w = InitialParams(layout, 3);
  const EmbeddingBatch z = Encode(backbone, w, GaussianMatrix(5, cfg.input_dim_v, rng),
                                  Modality::kVisual);
  for (std::size_t r = 0; r < z.z.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < z.z.cols(); ++c) sq += z.z(r, c) * z.z(r, c);
    EXPECT_NEAR(sq, 1.0, 1e-12);
  }
}

TEST(Encode, WrongInputWidthIsUsageError) {
  const ModelConfig cfg = SmallModel();
  const auto layout = ParamLayout::Build(cfg);
  const FrozenBackbone backbone = FrozenBackbone::Create(cfg);
  Rng rng(4);
  EXPECT_THROW(Encode(backbone, InitialParams(layout, 1), GaussianMatrix(2, 7, rng),
                      Modality::kText),
               UsageError);
}

TEST(Layout, BlocksPerModality) {
  ModelConfig cfg = SmallModel();
  cfg.adapter_blocks = 2;
  const auto layout = ParamLayout::Build(cfg);
  EXPECT_EQ(layout->block_count(), 6u);
  EXPECT_EQ(layout->blocks()[0].Label(), "v/adapter0");
  EXPECT_EQ(layout->blocks()[5].Label(), "t/projector");
  std::size_t total = 0;
  for (const BlockSpec& b : layout->blocks()) {
    EXPECT_EQ(b.offset, total);
    total += b.size;
  }
  EXPECT_EQ(total, layout->dim());
  EXPECT_THROW(layout->Find(Modality::kText, "adapter7"), UsageError);
}

TEST(Layout, InvalidRankIsUsageError) {
  ModelConfig cfg = SmallModel();
  cfg.lora_rank = cfg.hidden_dim;
  EXPECT_THROW(ParamLayout::Build(cfg), UsageError);
}

TEST(Initial, AdapterUpStartsAtZero) {
  const auto layout = ParamLayout::Build(SmallModel());
  const ParamVector w = InitialParams(layout, 5);
  const Matrix up = AdapterUp(w, layout->Find(Modality::kVisual, "adapter0"));
  EXPECT_EQ(MaxAbs(up), 0.0);
  EXPECT_EQ(InitialParams(layout, 5), w);
}

TEST(ForgetLock, ZeroExactlyOnTheComplement) {
  const auto layout = ParamLayout::Build(SmallModel());
  Rng rng(6);
  BlockBases bases;
  for (const BlockSpec& b : layout->blocks()) {
    bases.push_back(OrthonormalColumns(GaussianMatrix(b.size, 2, rng), 1e-10));
  }
  const ParamVector ref = GaussianParams(layout, rng);
  const ForgetLock lock(ref, bases);
  EXPECT_EQ(lock.Evaluate(ref).value, 0.0);

  ParamVector w = ref;
  ParamVector step = GaussianParams(layout, rng);
  ParamVector moved = w;
  moved += step;
  const ForgetLock::Value v = lock.Evaluate(moved);
  EXPECT_GT(v.value, 0.0);
  // grad = 2 P_u (w - ref)
  for (std::size_t b = 0; b < bases.size(); ++b) {
    const std::vector<double> p = ProjectOnto(bases[b], step.block(b));
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(v.grad.block(b)[i], 2 * p[i], 1e-12);
  }
  // Removing the projected part returns the lock to zero.
  moved.Axpy(-0.5, v.grad);
  EXPECT_LE(lock.Evaluate(moved).value, 1e-24);
}

TEST(ForgetLock, RejectsNonOrthonormalBasis) {
  const auto layout = ParamLayout::Build(SmallModel());
  BlockBases bases;
  for (const BlockSpec& b : layout->blocks()) {
    Matrix m(b.size, 1);
    m(0, 0) = 2.0;
    bases.push_back(m);
  }
  EXPECT_THROW(ForgetLock(ParamVector::Zeros(layout), bases), UsageError);
}

TEST(LocalSgd, ZeroStepsReturnsStart) {
  const ModelConfig cfg = SmallModel();
  const auto layout = ParamLayout::Build(cfg);
  const FrozenBackbone backbone = FrozenBackbone::Create(cfg);
  Rng rng(7);
  const ParamVector w = InitialParams(layout, 2);
  SgdOptions opt;
  opt.steps = 0;
  const LocalSgdResult r = LocalSgd(backbone, w, RandomBatch(cfg, 8, rng), {}, opt);
  EXPECT_EQ(r.params, w);
  EXPECT_EQ(Norm(r.delta), 0.0);
}

TEST(LocalSgd, DescendsTheAlignmentLoss) {
  const ModelConfig cfg = SmallModel();
  const auto layout = ParamLayout::Build(cfg);
  const FrozenBackbone backbone = FrozenBackbone::Create(cfg);
  Rng rng(8);
  const PairBatch batch = RandomBatch(cfg, 8, rng);
  const ParamVector w = InitialParams(layout, 4);
  SgdOptions opt;
  opt.steps = 40;
  opt.batch_size = 8;
  const LocalSgdResult r = LocalSgd(backbone, w, batch, {}, opt);
  EXPECT_LT(AlignmentLoss(backbone, r.params, batch), AlignmentLoss(backbone, w, batch));
}

TEST(PairSimilarities, InRange) {
  const ModelConfig cfg = SmallModel();
  const auto layout = ParamLayout::Build(cfg);
  const FrozenBackbone backbone = FrozenBackbone::Create(cfg);
  Rng rng(9);
  for (double s : PairSimilarities(backbone, InitialParams(layout, 1), RandomBatch(cfg, 6, rng))) {
    EXPECT_GE(s, -1.0 - 1e-12);
    EXPECT_LE(s, 1.0 + 1e-12);
  }
}

}  // namespace
}  // namespace fedexcise
