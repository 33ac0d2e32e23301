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

#ifndef FEDEXCISE_GSD_H_
#define FEDEXCISE_GSD_H_

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedexcise/federation.h"
#include "fedexcise/numerics.h"
#include "fedexcise/param_vector.h"

namespace fedexcise {

enum class Scenario { kClient, kClass, kSample };
std::string_view ScenarioName(Scenario s);
Scenario ParseScenario(std::string_view name);

struct UnlearnRequest {
  Scenario scenario = Scenario::kClient;
  std::size_t client = 0;        // kClient
  std::size_t pseudo_class = 0;  // kClass
  std::vector<std::size_t> samples;  // kSample

  void Validate() const;
};

// Read-only handle on the trained federation.
struct FederationView {
  const FrozenBackbone* backbone = nullptr;
  const SyntheticDataset* data = nullptr;
  const Shards* shards = nullptr;
  const std::vector<std::size_t>* pseudo_labels = nullptr;
  FederationConfig config;
};

// Per-client sample ids of the forget set.
Shards ForgetSubsets(const UnlearnRequest& request, const FederationView& fed);
// Per-client D_k minus D_f.
Shards RetainShards(const UnlearnRequest& request, const FederationView& fed);

// Column-stacked updates per layout block (d_block x n).
using GradientMatrices = std::vector<Matrix>;

struct MatrixBuild {
  GradientMatrices columns;
  CommLedger ledger;  // extra rounds triggered to build the columns
};

enum class RetainSource { kEpoch, kHistory };

MatrixBuild BuildForgetMatrix(const GradientHistory& history,
                              const UnlearnRequest& request,
                              const FederationView& fed, const ParamVector& w_n);
MatrixBuild BuildRetainMatrix(const GradientHistory& history,
                              const UnlearnRequest& request,
                              const FederationView& fed, const ParamVector& w_n,
                              RetainSource source = RetainSource::kEpoch);

// Stacks the given deltas block by block.
GradientMatrices StackColumns(const std::vector<const ParamVector*>& deltas);

struct SubspaceBasis {
  Matrix phi;  // d x p, orthonormal columns
  std::vector<double> singular_values;  // retained, descending
  double total_energy = 0.0;            // ||G||_F^2
};

// Smallest leading set of left singular vectors holding at least `tau` of
// the energy. Throws UsageError on an all-zero matrix.
SubspaceBasis EnergyTruncate(const Matrix& g, double tau,
                             std::string_view role = "gradient matrix");

struct EntanglementSpectrum {
  Matrix directions;          // d x p, orthonormal
  std::vector<double> kappa;  // length p, non-increasing, in [0, 1]
};

EntanglementSpectrum ComputeEntanglementSpectrum(const SubspaceBasis& forget,
                                                 const SubspaceBasis& retain);

struct BlockExcision {
  Matrix unique;     // d x |U|
  Matrix entangled;  // d x |E|
  std::vector<double> unique_kappa;
  std::vector<double> entangled_kappa;
};

// Directions with kappa <= delta are unique; the rest are entangled.
BlockExcision PartitionSpectrum(const EntanglementSpectrum& spectrum,
                                double delta, std::size_t rows);

// Per block x -> B (B^T x), as two thin products.
std::vector<double> ProjectOnto(const Matrix& basis, std::span<const double> x);

struct ExcisionBases {
  std::shared_ptr<const ParamLayout> layout;
  std::vector<BlockExcision> blocks;  // layout order

  BlockBases UniqueBases() const;
  std::size_t UniqueFloats() const;  // sum of d_b * |U_b|
};

ParamVector ApplyProjector(const ExcisionBases& bases, const ParamVector& x);

struct BlockDiagnostics {
  std::string label;
  std::size_t p = 0;
  std::size_t q = 0;
  std::size_t unique = 0;
  std::vector<double> kappa;
};

struct Decomposition {
  std::vector<SubspaceBasis> forget;  // per block; p = 0 if no forget signal
  std::vector<SubspaceBasis> retain;
  std::vector<EntanglementSpectrum> spectra;
  ExcisionBases bases;
  std::vector<BlockDiagnostics> diagnostics;
  // Sum of forget columns scaled by the per-round aggregation weight.
  std::optional<ParamVector> forget_contribution;
  CommLedger ledger;
};

// Truncate, measure entanglement and partition every block. Blocks with no
// forget signal get empty bases; blocks with no retain signal count every
// forget direction as unique.
Decomposition DecomposeMatrices(const GradientMatrices& forget,
                                const GradientMatrices& retain, double delta,
                                double tau,
                                std::shared_ptr<const ParamLayout> layout);

// Re-partitions an existing decomposition at another threshold.
ExcisionBases Repartition(const Decomposition& d, double delta);

Decomposition Decompose(const GradientHistory& history,
                        const UnlearnRequest& request, double delta,
                        double tau, const FederationView& fed,
                        const ParamVector& w_n,
                        RetainSource source = RetainSource::kEpoch);

// block, modality, p, q, kappa_1..kappa_p
void WriteSpectrumCsv(std::ostream& out, const Decomposition& d);

}  // namespace fedexcise

#endif  // FEDEXCISE_GSD_H_
