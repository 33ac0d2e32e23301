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

#ifndef FEDEXCISE_ORACLES_H_
#define FEDEXCISE_ORACLES_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedexcise/param_vector.h"
#include "nlohmann/json.hpp"

namespace fedexcise {

// Reference checks written with naive loops and explicit dense matrices,
// independent of the code they validate.
struct OracleReport {
  OracleReport() = default;
  OracleReport(std::string name, double tol)
      : check(std::move(name)), tolerance(tol) {}

  std::string check;
  std::size_t instances = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool pass = true;
  // Diagnostic scalars estimated along the way (smoothness, bound limits).
  std::map<std::string, double> estimates;

  void Observe(double deviation);
  void Finalize();
};

using ScalarFunction = std::function<double(const ParamVector&)>;

// Central differences per coordinate. Throws NumericError naming the
// coordinate when f is not finite.
ParamVector FiniteDiffGradient(const ScalarFunction& f, const ParamVector& w,
                               double h = 1e-5);

// Random subspace pairs in R^d (d <= 8) checked against a dense B B^T:
// projector laws, exact erasure, energy removal and the retention bound.
// One report per law.
std::vector<OracleReport> ExhaustiveProjectionCheck(std::size_t d,
                                                    std::size_t trials,
                                                    std::uint64_t seed,
                                                    double delta = 0.5);

// Two lines at angle theta in the plane: kappa must equal |cos theta|.
OracleReport PlanarAngleCheck(std::size_t trials, std::uint64_t seed);

// Worst-case drift recurrence against (g/2a)(1 - (1 - 2 eta a)^t).
OracleReport RecurrenceClosedFormCheck(double alpha, double learning_rate,
                                       double g_u, std::size_t t_max);
OracleReport RecurrenceGridCheck();

// Analytic InfoNCE gradient of a small model against finite differences.
OracleReport InfoNceGradientCheck(std::size_t instances, std::uint64_t seed);
// Forget Lock value and gradient against 2 B B^T (w - ref), both dense and
// by finite differences.
OracleReport ForgetLockGradientCheck(std::size_t instances, std::uint64_t seed);
// Matrix products and thin SVD reconstruction against triple loops.
OracleReport NaiveLinearAlgebraCheck(std::size_t instances, std::uint64_t seed);

std::vector<OracleReport> RunOracleSuite(std::uint64_t seed);
nlohmann::json OracleReportsToJson(const std::vector<OracleReport>& reports);
bool AllPass(const std::vector<OracleReport>& reports);

}  // namespace fedexcise

#endif  // FEDEXCISE_ORACLES_H_
