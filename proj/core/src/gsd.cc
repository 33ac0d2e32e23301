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

#include "fedexcise/gsd.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "fedexcise/errors.h"
#include "spdlog/fmt/fmt.h"
#include "spdlog/spdlog.h"

namespace fedexcise {
namespace {

constexpr double kRankTolerance = 1e-10;

// One local epoch from w_n on each non-empty subset; one column per client.
MatrixBuild EpochColumns(const Shards& subsets, const FederationView& fed,
                         const ParamVector& w_n, std::string_view phase) {
  MatrixBuild out;
  std::vector<ParamVector> deltas;
  std::size_t clients = 0;
  for (std::size_t k = 0; k < subsets.size(); ++k) {
    if (subsets[k].empty()) continue;
    const std::size_t batch = std::max<std::size_t>(
        1, std::min(fed.config.batch_size, subsets[k].size()));
    SgdOptions opts{fed.config.learning_rate,
                    (subsets[k].size() + batch - 1) / batch, batch,
                    DeriveSeed(DeriveSeed(fed.config.seed, phase), "client", k)};
    LocalSgdResult r = LocalSgd(*fed.backbone, w_n, fed.data->Gather(subsets[k]),
                                Objective{}, opts);
    deltas.push_back(std::move(r.delta));
    ++clients;
  }
  std::vector<const ParamVector*> ptrs;
  for (const auto& d : deltas) ptrs.push_back(&d);
  out.columns = StackColumns(ptrs);
  out.ledger.Add({std::string(phase), 0, PayloadMb(clients * w_n.dim()),
                  PayloadMb(clients * w_n.dim())});
  return out;
}

SubspaceBasis EmptyBasis(std::size_t rows, double energy) {
  return {Matrix(rows, 0), {}, energy};
}

}  // namespace

std::string_view ScenarioName(Scenario s) {
  switch (s) {
    case Scenario::kClient:
      return "client";
    case Scenario::kClass:
      return "class";
    case Scenario::kSample:
      return "sample";
  }
  return "client";
}

Scenario ParseScenario(std::string_view name) {
  if (name == "client") return Scenario::kClient;
  if (name == "class") return Scenario::kClass;
  if (name == "sample") return Scenario::kSample;
  throw UsageError(fmt::format("unknown scenario '{}'", name));
}

void UnlearnRequest::Validate() const {
  if (scenario == Scenario::kSample && samples.empty()) {
    throw UsageError("unlearn request: sample scenario with no samples");
  }
}

Shards ForgetSubsets(const UnlearnRequest& request, const FederationView& fed) {
  request.Validate();
  const Shards& shards = *fed.shards;
  Shards out(shards.size());
  switch (request.scenario) {
    case Scenario::kClient:
      if (request.client >= shards.size()) {
        throw UsageError(fmt::format("unlearn request: no client {}",
                                     request.client));
      }
      out[request.client] = shards[request.client];
      break;
    case Scenario::kClass:
      for (std::size_t k = 0; k < shards.size(); ++k) {
        for (std::size_t id : shards[k]) {
          if (fed.pseudo_labels->at(id) == request.pseudo_class) {
            out[k].push_back(id);
          }
        }
      }
      break;
    case Scenario::kSample: {
      std::set<std::size_t> wanted(request.samples.begin(),
                                   request.samples.end());
      for (std::size_t k = 0; k < shards.size(); ++k) {
        for (std::size_t id : shards[k]) {
          if (wanted.count(id) != 0) out[k].push_back(id);
        }
      }
      break;
    }
  }
  bool any = false;
  for (const auto& s : out) any = any || !s.empty();
  if (!any) throw UsageError("unlearn request: no client holds the target");
  return out;
}

Shards RetainShards(const UnlearnRequest& request, const FederationView& fed) {
  const Shards forget = ForgetSubsets(request, fed);
  const Shards& shards = *fed.shards;
  Shards out(shards.size());
  for (std::size_t k = 0; k < shards.size(); ++k) {
    std::set_difference(shards[k].begin(), shards[k].end(), forget[k].begin(),
                        forget[k].end(), std::back_inserter(out[k]));
  }
  return out;
}

GradientMatrices StackColumns(const std::vector<const ParamVector*>& deltas) {
  if (deltas.empty()) return {};
  const ParamLayout& layout = deltas.front()->layout();
  GradientMatrices out;
  for (std::size_t b = 0; b < layout.block_count(); ++b) {
    Matrix g(layout.blocks()[b].size, deltas.size());
    for (std::size_t j = 0; j < deltas.size(); ++j) {
      deltas.front()->RequireCompatible(*deltas[j], "stack columns");
      std::span<const double> v = deltas[j]->block(b);
      std::copy(v.begin(), v.end(), g.col(j).begin());
    }
    out.push_back(std::move(g));
  }
  return out;
}

MatrixBuild BuildForgetMatrix(const GradientHistory& history,
                              const UnlearnRequest& request,
                              const FederationView& fed,
                              const ParamVector& w_n) {
  if (request.scenario == Scenario::kClient) {
    if (request.client >= history.clients() ||
        history.client(request.client).empty()) {
      throw UsageError(fmt::format(
          "forget matrix: client {} has no history entries", request.client));
    }
    std::vector<const ParamVector*> ptrs;
    for (const auto& e : history.client(request.client)) ptrs.push_back(&e.delta);
    return {StackColumns(ptrs), {}};
  }
  return EpochColumns(ForgetSubsets(request, fed), fed, w_n, "forget-epoch");
}

MatrixBuild BuildRetainMatrix(const GradientHistory& history,
                              const UnlearnRequest& request,
                              const FederationView& fed, const ParamVector& w_n,
                              RetainSource source) {
  if (source == RetainSource::kHistory && request.scenario == Scenario::kClient) {
    std::vector<const ParamVector*> ptrs;
    for (std::size_t k = 0; k < history.clients(); ++k) {
      if (k == request.client) continue;
      for (const auto& e : history.client(k)) ptrs.push_back(&e.delta);
    }
    if (ptrs.empty()) throw UsageError("retain matrix: no retained history");
    return {StackColumns(ptrs), {}};
  }
  Shards retain = RetainShards(request, fed);
  bool any = false;
  for (const auto& s : retain) any = any || !s.empty();
  if (!any) throw UsageError("retain matrix: no retained data");
  return EpochColumns(retain, fed, w_n, "retain-epoch");
}

SubspaceBasis EnergyTruncate(const Matrix& g, double tau,
                             std::string_view role) {
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw UsageError("energy_truncate: tau must be in (0, 1]");
  }
  const double fro = FrobeniusNorm(g);
  if (!(fro > 1e-12)) {
    throw UsageError(fmt::format("energy_truncate: {} has no signal to decompose",
                                 role));
  }
  SvdResult svd = ThinSvd(g, role);
  const std::vector<double>& s = svd.singular_values;
  const double total = fro * fro;
  std::size_t rank = 0;
  while (rank < s.size() && s[rank] > kRankTolerance * s[0]) ++rank;
  std::size_t p = rank;
  double cum = 0.0;
  for (std::size_t j = 0; j < rank; ++j) {
    cum += s[j] * s[j];
    if (cum >= tau * total * (1.0 - 1e-12)) {
      p = j + 1;
      break;
    }
  }
  SubspaceBasis out;
  out.phi = svd.u.ColumnRange(0, p);
  out.singular_values.assign(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(p));
  out.total_energy = total;
  return out;
}

EntanglementSpectrum ComputeEntanglementSpectrum(const SubspaceBasis& forget,
                                                 const SubspaceBasis& retain) {
  const std::size_t p = forget.phi.cols();
  const std::size_t q = retain.phi.cols();
  if (p > 0 && q > 0 && forget.phi.rows() != retain.phi.rows()) {
    throw UsageError(fmt::format("entanglement: bases of {} and {} rows",
                                 forget.phi.rows(), retain.phi.rows()));
  }
  EntanglementSpectrum out;
  if (p == 0) {
    out.directions = Matrix(forget.phi.rows(), 0);
    return out;
  }
  if (q == 0) {
    out.directions = forget.phi;
    out.kappa.assign(p, 0.0);
    return out;
  }
  const Matrix m = TransposeMultiply(forget.phi, retain.phi);
  SvdResult svd = ThinSvd(m, "entanglement matrix");
  Matrix rotation = svd.u.cols() < p ? CompleteOrthonormalBasis(svd.u) : svd.u;
  out.directions = Multiply(forget.phi, rotation);
  out.kappa.assign(p, 0.0);
  for (std::size_t i = 0; i < svd.singular_values.size(); ++i) {
    out.kappa[i] = std::clamp(svd.singular_values[i], 0.0, 1.0);
  }
  return out;
}

BlockExcision PartitionSpectrum(const EntanglementSpectrum& spectrum,
                                double delta, std::size_t rows) {
  std::vector<std::size_t> unique;
  std::vector<std::size_t> entangled;
  BlockExcision out;
  for (std::size_t i = 0; i < spectrum.kappa.size(); ++i) {
    if (spectrum.kappa[i] <= delta) {
      unique.push_back(i);
      out.unique_kappa.push_back(spectrum.kappa[i]);
    } else {
      entangled.push_back(i);
      out.entangled_kappa.push_back(spectrum.kappa[i]);
    }
  }
  out.unique = unique.empty() ? Matrix(rows, 0)
                              : spectrum.directions.SelectColumns(unique);
  out.entangled = entangled.empty()
                      ? Matrix(rows, 0)
                      : spectrum.directions.SelectColumns(entangled);
  return out;
}

std::vector<double> ProjectOnto(const Matrix& basis, std::span<const double> x) {
  if (basis.cols() == 0) return std::vector<double>(x.size(), 0.0);
  return MatVec(basis, TransposeMatVec(basis, x));
}

BlockBases ExcisionBases::UniqueBases() const {
  BlockBases out;
  for (const auto& b : blocks) out.push_back(b.unique);
  return out;
}

std::size_t ExcisionBases::UniqueFloats() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.unique.rows() * b.unique.cols();
  return n;
}

ParamVector ApplyProjector(const ExcisionBases& bases, const ParamVector& x) {
  if (!bases.layout || bases.layout->hash() != x.layout().hash() ||
      bases.blocks.size() != x.layout().block_count()) {
    throw UsageError("apply_projector: layout mismatch");
  }
  ParamVector out = ParamVector::Zeros(x.layout_ptr());
  for (std::size_t b = 0; b < bases.blocks.size(); ++b) {
    std::vector<double> y = ProjectOnto(bases.blocks[b].unique, x.block(b));
    std::copy(y.begin(), y.end(), out.block(b).begin());
  }
  return out;
}

Decomposition DecomposeMatrices(const GradientMatrices& forget,
                                const GradientMatrices& retain, double delta,
                                double tau,
                                std::shared_ptr<const ParamLayout> layout) {
  if (forget.size() != layout->block_count() ||
      retain.size() != layout->block_count()) {
    throw UsageError("decompose: gradient matrices do not cover every block");
  }
  Decomposition d;
  d.bases.layout = layout;
  for (std::size_t b = 0; b < layout->block_count(); ++b) {
    const BlockSpec& spec = layout->blocks()[b];
    const std::size_t rows = spec.size;
    try {
      const double ef = FrobeniusNorm(forget[b]);
      const double er = FrobeniusNorm(retain[b]);
      SubspaceBasis f = ef > 1e-12 ? EnergyTruncate(forget[b], tau, "forget matrix")
                                   : EmptyBasis(rows, ef * ef);
      SubspaceBasis r = er > 1e-12 ? EnergyTruncate(retain[b], tau, "retain matrix")
                                   : EmptyBasis(rows, er * er);
      EntanglementSpectrum s = ComputeEntanglementSpectrum(f, r);
      BlockExcision e = PartitionSpectrum(s, delta, rows);
      d.diagnostics.push_back({spec.Label(), f.phi.cols(), r.phi.cols(),
                               e.unique.cols(), s.kappa});
      d.forget.push_back(std::move(f));
      d.retain.push_back(std::move(r));
      d.spectra.push_back(std::move(s));
      d.bases.blocks.push_back(std::move(e));
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("block {}: {}", spec.Label(), e.what()));
    } catch (const UsageError& e) {
      throw UsageError(fmt::format("block {}: {}", spec.Label(), e.what()));
    }
  }
  return d;
}

ExcisionBases Repartition(const Decomposition& d, double delta) {
  ExcisionBases out;
  out.layout = d.bases.layout;
  for (std::size_t b = 0; b < d.spectra.size(); ++b) {
    out.blocks.push_back(PartitionSpectrum(d.spectra[b], delta,
                                           out.layout->blocks()[b].size));
  }
  return out;
}

Decomposition Decompose(const GradientHistory& history,
                        const UnlearnRequest& request, double delta,
                        double tau, const FederationView& fed,
                        const ParamVector& w_n, RetainSource source) {
  MatrixBuild f = BuildForgetMatrix(history, request, fed, w_n);
  MatrixBuild r = BuildRetainMatrix(history, request, fed, w_n, source);
  Decomposition d =
      DecomposeMatrices(f.columns, r.columns, delta, tau, w_n.layout_ptr());
  d.ledger.Merge(f.ledger);
  d.ledger.Merge(r.ledger);
  const std::size_t clients = fed.config.clients;
  const double participants = std::max(
      1.0, std::round(fed.config.client_fraction * static_cast<double>(clients)));
  ParamVector contribution = ParamVector::Zeros(w_n.layout_ptr());
  for (std::size_t b = 0; b < f.columns.size(); ++b) {
    const Matrix& cols = f.columns[b];
    std::span<double> out = contribution.block(b);
    for (std::size_t j = 0; j < cols.cols(); ++j) {
      for (std::size_t i = 0; i < cols.rows(); ++i) out[i] += cols(i, j) / participants;
    }
  }
  d.forget_contribution = std::move(contribution);
  return d;
}

void WriteSpectrumCsv(std::ostream& out, const Decomposition& d) {
  std::size_t width = 0;
  for (const auto& diag : d.diagnostics) width = std::max(width, diag.p);
  out << "block,modality,p,q";
  for (std::size_t i = 1; i <= width; ++i) out << ",kappa_" << i;
  out << "\n";
  for (std::size_t b = 0; b < d.diagnostics.size(); ++b) {
    const BlockDiagnostics& diag = d.diagnostics[b];
    const BlockSpec& spec = d.bases.layout->blocks()[b];
    out << spec.name << "," << ModalityName(spec.modality) << "," << diag.p
        << "," << diag.q;
    for (std::size_t i = 0; i < width; ++i) {
      out << ",";
      if (i < diag.kappa.size()) out << fmt::format("{:.17g}", diag.kappa[i]);
    }
    out << "\n";
  }
}

}  // namespace fedexcise
