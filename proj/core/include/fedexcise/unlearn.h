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

#ifndef FEDEXCISE_UNLEARN_H_
#define FEDEXCISE_UNLEARN_H_

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedexcise/federation.h"
#include "fedexcise/gsd.h"
#include "fedexcise/param_vector.h"

namespace fedexcise {

enum class Variant { kFull, kNoBkeVisual, kNoBkeText, kNoGsd, kNoLock };
std::string_view VariantName(Variant v);
Variant ParseVariant(std::string_view name);

// Point the excision pulls back to along the unique subspace.
enum class ReferencePoint {
  kInitial,  // the global model before federated training
  kTrained,  // w_n itself
  kRollback,  // w_n minus the aggregated updates of the forget data
};
std::string_view ReferenceName(ReferencePoint r);
ReferencePoint ParseReference(std::string_view name);

struct UnlearnPlan {
  UnlearnRequest request;
  double delta = 0.5;
  double tau = 0.9;
  double alpha = 5.0;
  std::size_t excision_rounds = 2;
  std::size_t stabilization_rounds = 4;
  double learning_rate = 0.05;
  std::size_t local_steps = 30;
  std::size_t batch_size = 32;
  Variant variant = Variant::kFull;
  ReferencePoint reference = ReferencePoint::kInitial;
  RetainSource retain_source = RetainSource::kHistory;
  // Charge bases and reference on every broadcast instead of once per client.
  bool charge_bases_per_round = false;

  void Validate() const;
};

struct UnlearnContext {
  FederationView fed;
  const ParamVector* initial = nullptr;
  const ParamVector* w_n = nullptr;
  const GradientHistory* history = nullptr;
};

struct TraceRow {
  std::size_t round = 0;  // 1-based
  std::string phase;      // "excision" or "stabilization"
  std::string block;      // block label or "total"
  double drift = 0.0;
  double align_loss = 0.0;
  double lock_value = 0.0;
};

struct PhaseTrace {
  std::vector<TraceRow> rows;
  // Per round, aggregated over blocks.
  std::vector<double> total_drift;
  std::vector<double> projected_drift;  // right after projection; 0 if none
  std::vector<std::size_t> steps_since_projection;
  // Per block, max over clients and steps of ||P_u grad L_a||.
  std::vector<double> max_projected_grad;
  std::vector<std::vector<double>> block_drift;  // [round][block]

  void WriteCsv(std::ostream& out) const;
};

struct UnlearnResult {
  ParamVector model;
  PhaseTrace trace;
  CommLedger ledger;
  ExcisionBases bases;  // bases actually used
};

// w - P_u (w - reference), block by block.
ParamVector BilateralExcisionStep(const ParamVector& w,
                                  const ParamVector& reference,
                                  const ExcisionBases& bases);

// Bases used by a variant, derived from the full decomposition.
ExcisionBases VariantBases(const Decomposition& d, double delta, Variant v);

// Resolve plan.reference. kRollback needs the decomposition.
ParamVector ExcisionReference(const UnlearnContext& ctx, const UnlearnPlan& plan,
                              const Decomposition* d);

// Phase II and III with fixed bases.
UnlearnResult RunExcisionRounds(const UnlearnContext& ctx,
                                const UnlearnPlan& plan,
                                const ExcisionBases& bases,
                                const ParamVector& reference,
                                const Shards& retain_shards);

UnlearnResult RunEase(const UnlearnContext& ctx, const UnlearnPlan& plan);
UnlearnResult RunAblation(const UnlearnContext& ctx, const UnlearnPlan& plan);
// Same as RunEase/RunAblation but reuses a decomposition.
UnlearnResult RunVariant(const UnlearnContext& ctx, const UnlearnPlan& plan,
                         const Decomposition& d);

struct RetrainResult {
  ParamVector model;
  CommLedger ledger;
  std::size_t rounds = 0;
};

// FedAvg from the initial model on retained data only, for
// ceil(fraction * rounds) rounds.
RetrainResult RunRetrain(const UnlearnContext& ctx,
                         const UnlearnRequest& request, double fraction);

struct AscentPlan {
  std::size_t steps = 10;
  double learning_rate = 0.05;
  std::size_t then_rounds = 2;
};

UnlearnResult RunGradientAscent(const UnlearnContext& ctx,
                                const UnlearnRequest& request,
                                const AscentPlan& ascent);

// ||d(t)|| for t = 0..t_max with d(0) = 0 under the worst-case constant
// gradient of norm g_u.
std::vector<double> SimulateRecurrence(double g_u, double alpha,
                                       double learning_rate, std::size_t t_max);
// Same recurrence driven by an explicit gradient sequence.
std::vector<double> SimulateRecurrence(
    const std::vector<std::vector<double>>& gradients, double alpha,
    double learning_rate);

// (g_u / 2 alpha)(1 - (1 - 2 eta alpha)^t); eta * g_u * t when alpha = 0.
double DriftBound(double g_u, double alpha, double learning_rate,
                  std::size_t t);

}  // namespace fedexcise

#endif  // FEDEXCISE_UNLEARN_H_
