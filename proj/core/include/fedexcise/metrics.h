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

#ifndef FEDEXCISE_METRICS_H_
#define FEDEXCISE_METRICS_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fedexcise/federation.h"
#include "fedexcise/gsd.h"
#include "fedexcise/model.h"
#include "fedexcise/numerics.h"

namespace fedexcise {

// Percent of queries whose partner ranks in the top k, averaged over both
// directions. The first `queries` rows are queries (0 = all rows); every row
// is a candidate. Ties go to the lower candidate index.
double RecallAtK(const Matrix& zv, const Matrix& zt, std::size_t k,
                 std::size_t queries = 0);

struct RecallTriple {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
};

// Queries plus filler candidates that are never queried.
struct RetrievalSplit {
  std::string name;
  PairBatch pool;
  std::size_t queries = 0;
};

RetrievalSplit MakeSplit(std::string name, const PairBatch& members,
                         const PairBatch& fillers, std::size_t pool_size);

RecallTriple EvaluateSplit(const FrozenBackbone& backbone,
                           const ParamVector& params,
                           const RetrievalSplit& split);

// Median over pairs of |s(w*) - s(w~)| / (|s(w_n) - s(w~)| + eps).
double AlignmentResidual(const FrozenBackbone& backbone,
                         const ParamVector& unlearned,
                         const ParamVector& retrained,
                         const ParamVector& original, const PairBatch& pairs,
                         double eps = 1e-8);
double AlignmentResidual(std::span<const double> s_unlearned,
                         std::span<const double> s_retrained,
                         std::span<const double> s_original, double eps = 1e-8);

// Symmetric InfoNCE term of each pair against a fixed set of reference
// negatives.
std::vector<double> PairLosses(const FrozenBackbone& backbone,
                               const ParamVector& params,
                               const PairBatch& pairs,
                               const PairBatch& negatives);

struct MiaConfig {
  std::size_t shadows = 8;
  double fpr_target = 0.01;
};

// Losses of every universe sample under each shadow, with membership.
struct ShadowPool {
  std::vector<std::vector<double>> losses;  // [shadow][sample]
  std::vector<std::vector<bool>> member;    // [shadow][sample]
};

struct MiaResult {
  double tpr = 0.0;       // loss-threshold attack, percent
  double lira_tpr = 0.0;  // likelihood-ratio attack at the target FPR
  double lira_fpr = 0.0;  // measured on the calibration non-members
  double threshold = 0.0;
};

// `target_losses` covers the same universe as the shadow pool. `queries`
// are the universe indices scored (the forget set); `nonmembers` calibrate
// the likelihood-ratio threshold.
MiaResult MiaAttack(std::span<const double> target_losses,
                    std::span<const std::size_t> queries,
                    std::span<const std::size_t> nonmembers,
                    const ShadowPool& pool, const MiaConfig& config);

struct TradeoffRow {
  double delta = 0.0;
  double eta_f = 0.0;
  double eta_r = 0.0;
};

// eta_f: share of forget-matrix energy inside the unique bases; eta_r: the
// largest squared entanglement among unique directions.
std::vector<TradeoffRow> TradeoffCurves(const Decomposition& d,
                                        const GradientMatrices& forget,
                                        std::span<const double> delta_grid);

// One (scenario, method, seed) cell.
struct RunReport {
  std::string scenario;
  std::string method;
  std::uint64_t seed = 0;
  std::map<std::string, std::optional<double>> values;
  std::map<std::string, std::optional<double>> gaps;

  static const std::vector<std::string>& MetricKeys();
  // Absolute gaps of every metric against `reference`.
  void FillGaps(const RunReport& reference);
};

std::string ReportToJson(const std::vector<RunReport>& reports);
std::vector<RunReport> ReportsFromJson(const std::string& text);
const std::vector<std::string>& SummaryColumns();
void WriteSummaryCsv(std::ostream& out, const std::vector<RunReport>& reports);

}  // namespace fedexcise

#endif  // FEDEXCISE_METRICS_H_
