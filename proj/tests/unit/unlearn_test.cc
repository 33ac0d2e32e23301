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


#include "fedexcise/unlearn.h"

#include <cmath>
#include <sstream>

#include "fedexcise/errors.h"
#include "fedexcise/experiment.h"
#include "gtest/gtest.h"
#include "test_support.h"

namespace fedexcise {
namespace {

TEST(Recurrence, WorstCaseClosedForm) {
  const std::vector<double> d = SimulateRecurrence(1.0, 0.5, 0.1, 3);
  ASSERT_EQ(d.size(), 4u);
  EXPECT_EQ(d[0], 0.0);
  EXPECT_NEAR(d[3], 0.271, 1e-12);
  EXPECT_NEAR(DriftBound(1.0, 0.5, 0.1, 3), 0.271, 1e-12);
}

TEST(Recurrence, NoContractionGrowsLinearly) {
  const std::vector<double> d = SimulateRecurrence(2.0, 0.0, 0.1, 10);
  for (std::size_t t = 0; t <= 10; ++t) EXPECT_NEAR(d[t], 0.2 * t, 1e-12);
  EXPECT_NEAR(DriftBound(2.0, 0.0, 0.1, 10), 2.0, 1e-12);
}

TEST(Recurrence, BoundedSequencesStayUnderBound) {
  Rng rng(1);
  const double alpha = 1.5;
  const double lr = 0.1;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> g(40, std::vector<double>(3));
    double g_max = 0.0;
    for (auto& v : g) {
      for (double& x : v) x = StandardNormal(rng);
      g_max = std::max(g_max, Norm(v));
    }
    const std::vector<double> d = SimulateRecurrence(g, alpha, lr);
    for (std::size_t t = 0; t < d.size(); ++t) {
      EXPECT_LE(d[t], DriftBound(g_max, alpha, lr, t) + 1e-12);
    }
  }
}

TEST(Plan, StepSizeViolationNamesTheCondition) {
  UnlearnPlan plan;
  plan.alpha = 10.0;
  plan.learning_rate = 0.1;
  try {
    plan.Validate();
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("1/(2 alpha)"), std::string::npos);
  }
  plan.variant = Variant::kNoLock;
  EXPECT_NO_THROW(plan.Validate());
}

TEST(Plan, RejectsOutOfRangeThresholds) {
  UnlearnPlan plan;
  plan.delta = 1.5;
  EXPECT_THROW(plan.Validate(), UsageError);
  plan = UnlearnPlan{};
  plan.tau = 0.0;
  EXPECT_THROW(plan.Validate(), UsageError);
}

TEST(Names, VariantsAndReferencesRoundTrip) {
  for (Variant v : {Variant::kFull, Variant::kNoBkeVisual, Variant::kNoBkeText, Variant::kNoGsd,
                    Variant::kNoLock}) {
    EXPECT_EQ(ParseVariant(VariantName(v)), v);
  }
  for (ReferencePoint r :
       {ReferencePoint::kInitial, ReferencePoint::kTrained, ReferencePoint::kRollback}) {
    EXPECT_EQ(ParseReference(ReferenceName(r)), r);
  }
  EXPECT_THROW(ParseReference("elsewhere"), UsageError);
}

class TinyFederation : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = new ExperimentConfig(testing::TinyConfig());
    world_ = new SeedWorld(*cfg_, 1);
    trained_ = new TrainResult(TrainFederation(world_->initial(), world_->TrainContext()));
    decomposition_ = new Decomposition(DecomposeTrained(*world_, *trained_));
  }
  static void TearDownTestSuite() {
    delete decomposition_;
    delete trained_;
    delete world_;
    delete cfg_;
  }
  UnlearnContext Context() const {
    return {world_->View(), &trained_->initial, &trained_->w_n, &trained_->history};
  }
  UnlearnPlan Plan() const {
    UnlearnPlan p = cfg_->plan;
    p.request = world_->request();
    return p;
  }

  static ExperimentConfig* cfg_;
  static SeedWorld* world_;
  static TrainResult* trained_;
  static Decomposition* decomposition_;
};

ExperimentConfig* TinyFederation::cfg_ = nullptr;
SeedWorld* TinyFederation::world_ = nullptr;
TrainResult* TinyFederation::trained_ = nullptr;
Decomposition* TinyFederation::decomposition_ = nullptr;

TEST_F(TinyFederation, TrainedReferenceWithoutLocalStepsReturnsTrainedModel) {
  UnlearnPlan plan = Plan();
  plan.reference = ReferencePoint::kTrained;
  plan.excision_rounds = 1;
  plan.stabilization_rounds = 0;
  plan.local_steps = 0;
  const UnlearnResult r = RunVariant(Context(), plan, *decomposition_);
  EXPECT_EQ(r.model, trained_->w_n);
}

TEST_F(TinyFederation, ExcisionRoundsTraceEveryRound) {
  const UnlearnPlan plan = Plan();
  const UnlearnResult r = RunVariant(Context(), plan, *decomposition_);
  const std::size_t rounds = plan.excision_rounds + plan.stabilization_rounds;
  EXPECT_EQ(r.trace.total_drift.size(), rounds);
  EXPECT_EQ(r.trace.block_drift.size(), rounds);
  EXPECT_EQ(r.trace.max_projected_grad.size(), world_->layout()->block_count());
  // Right after each projection the unique displacement is erased.
  for (std::size_t i = 0; i < plan.excision_rounds; ++i) {
    EXPECT_LE(r.trace.projected_drift[i], 1e-10);
  }
  EXPECT_GT(r.ledger.TotalMb(), 0.0);
  std::ostringstream csv;
  r.trace.WriteCsv(csv);
  EXPECT_NE(csv.str().find("excision"), std::string::npos);
}

TEST_F(TinyFederation, LockShrinksTerminalDrift) {
  UnlearnPlan locked = Plan();
  UnlearnPlan free = Plan();
  free.alpha = 0.0;
  const double with_lock = RunVariant(Context(), locked, *decomposition_).trace.total_drift.back();
  const double without = RunVariant(Context(), free, *decomposition_).trace.total_drift.back();
  EXPECT_LE(with_lock, without);
}

TEST_F(TinyFederation, UnilateralVariantsLeaveOtherModalityUntouched) {
  const ExcisionBases v = VariantBases(*decomposition_, cfg_->plan.delta, Variant::kNoBkeVisual);
  for (std::size_t b = 0; b < v.blocks.size(); ++b) {
    if (world_->layout()->blocks()[b].modality == Modality::kText) {
      EXPECT_EQ(v.blocks[b].unique.cols(), 0u);
    }
  }
}

TEST_F(TinyFederation, RollbackReferenceNeedsDecomposition) {
  UnlearnPlan plan = Plan();
  plan.reference = ReferencePoint::kRollback;
  EXPECT_THROW(ExcisionReference(Context(), plan, nullptr), UsageError);
  const ParamVector ref = ExcisionReference(Context(), plan, decomposition_);
  EXPECT_EQ(ref, trained_->w_n - *decomposition_->forget_contribution);
}

TEST_F(TinyFederation, RetrainBudgetRounds) {
  const RetrainResult quarter = RunRetrain(Context(), world_->request(), 0.25);
  EXPECT_EQ(quarter.rounds, 1u);  // ceil(0.25 * 3)
  const RetrainResult full = RunRetrain(Context(), world_->request(), 1.0);
  EXPECT_EQ(full.rounds, cfg_->federation.rounds);
  EXPECT_LT(quarter.ledger.TotalMb(), full.ledger.TotalMb());
  EXPECT_THROW(RunRetrain(Context(), world_->request(), 0.0), UsageError);
}

TEST_F(TinyFederation, RetrainWithEmptyForgetSetReproducesTraining) {
  UnlearnRequest nothing;
  nothing.scenario = Scenario::kSample;
  const RetrainResult r = RunRetrain(Context(), nothing, 1.0);
  EXPECT_EQ(r.model, trained_->w_n);
}

TEST_F(TinyFederation, GradientAscentWithoutStepsOrRepairIsIdentity) {
  AscentPlan ascent;
  ascent.steps = 0;
  ascent.then_rounds = 0;
  const UnlearnResult r = RunGradientAscent(Context(), world_->request(), ascent);
  EXPECT_EQ(r.model, trained_->w_n);
}

TEST_F(TinyFederation, GradientAscentRaisesForgetLoss) {
  AscentPlan ascent;
  ascent.steps = 5;
  ascent.then_rounds = 0;
  const UnlearnResult r = RunGradientAscent(Context(), world_->request(), ascent);
  const PairBatch forget = ForgetPairs(*world_);
  EXPECT_GT(AlignmentLoss(world_->backbone(), r.model, forget),
            AlignmentLoss(world_->backbone(), trained_->w_n, forget));
}

}  // namespace
}  // namespace fedexcise
