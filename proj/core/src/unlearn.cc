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

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "fedexcise/errors.h"
#include "spdlog/fmt/fmt.h"
#include "spdlog/spdlog.h"

namespace fedexcise {
namespace {

constexpr std::size_t kTraceEvalPairs = 200;

// Evenly strided subset of the retained pairs, for the trace loss.
PairBatch RetainEvalBatch(const FederationView& fed, const Shards& retain) {
  std::vector<std::size_t> ids;
  for (const auto& s : retain) ids.insert(ids.end(), s.begin(), s.end());
  std::sort(ids.begin(), ids.end());
  if (ids.size() > kTraceEvalPairs) {
    std::vector<std::size_t> picked;
    for (std::size_t i = 0; i < kTraceEvalPairs; ++i) {
      picked.push_back(ids[i * ids.size() / kTraceEvalPairs]);
    }
    ids = std::move(picked);
  }
  return fed.data->Gather(ids);
}

RoundContext MakeRoundContext(const FederationView& fed, const Shards& shards,
                              std::string phase) {
  RoundContext rc;
  rc.backbone = fed.backbone;
  rc.data = fed.data;
  rc.shards = &shards;
  rc.config = fed.config;
  rc.phase = std::move(phase);
  return rc;
}

std::vector<double> BlockDrift(const ParamVector& w, const ParamVector& ref,
                               const ExcisionBases& bases) {
  std::vector<double> out(bases.blocks.size(), 0.0);
  for (std::size_t b = 0; b < bases.blocks.size(); ++b) {
    const Matrix& u = bases.blocks[b].unique;
    if (u.cols() == 0) continue;
    std::span<const double> x = w.block(b);
    std::span<const double> r = ref.block(b);
    std::vector<double> diff(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) diff[i] = x[i] - r[i];
    out[b] = Norm(TransposeMatVec(u, diff));
  }
  return out;
}

double RootSumSquares(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

std::string_view VariantName(Variant v) {
  switch (v) {
    case Variant::kFull:
      return "full";
    case Variant::kNoBkeVisual:
      return "no_bke_visual_only";
    case Variant::kNoBkeText:
      return "no_bke_text_only";
    case Variant::kNoGsd:
      return "no_gsd";
    case Variant::kNoLock:
      return "no_lock";
  }
  return "full";
}

Variant ParseVariant(std::string_view name) {
  for (Variant v : {Variant::kFull, Variant::kNoBkeVisual, Variant::kNoBkeText,
                    Variant::kNoGsd, Variant::kNoLock}) {
    if (name == VariantName(v)) return v;
  }
  throw UsageError(fmt::format("unknown variant '{}'", name));
}

std::string_view ReferenceName(ReferencePoint r) {
  switch (r) {
    case ReferencePoint::kInitial: return "initial";
    case ReferencePoint::kTrained: return "trained";
    case ReferencePoint::kRollback: return "rollback";
  }
  return "?";
}

ReferencePoint ParseReference(std::string_view name) {
  if (name == "initial") return ReferencePoint::kInitial;
  if (name == "trained") return ReferencePoint::kTrained;
  if (name == "rollback") return ReferencePoint::kRollback;
  throw UsageError(fmt::format("unknown reference point '{}'", name));
}

void UnlearnPlan::Validate() const {
  request.Validate();
  if (!(delta >= 0.0 && delta <= 1.0)) {
    throw UsageError("plan: delta must be in [0, 1]");
  }
  if (!(tau > 0.0 && tau <= 1.0)) throw UsageError("plan: tau must be in (0, 1]");
  if (!(alpha >= 0.0)) throw UsageError("plan: alpha must be >= 0");
  if (!(learning_rate >= 0.0)) {
    throw UsageError("plan: learning_rate must be >= 0");
  }
  if (alpha > 0.0 && variant != Variant::kNoLock &&
      !(learning_rate < 1.0 / (2.0 * alpha))) {
    throw UsageError(fmt::format(
        "plan: the lock contraction needs learning_rate < 1/(2 alpha) "
        "(got {} with alpha {})",
        learning_rate, alpha));
  }
}

void PhaseTrace::WriteCsv(std::ostream& out) const {
  out << "round,phase,block,drift,align_loss,lock_value\n";
  for (const auto& r : rows) {
    out << r.round << "," << r.phase << "," << r.block << ","
        << fmt::format("{:.17g},{:.17g},{:.17g}", r.drift, r.align_loss,
                       r.lock_value)
        << "\n";
  }
}

ParamVector BilateralExcisionStep(const ParamVector& w,
                                  const ParamVector& reference,
                                  const ExcisionBases& bases) {
  w.RequireCompatible(reference, "excision step");
  if (!bases.layout || bases.layout->hash() != w.layout().hash() ||
      bases.blocks.size() != w.layout().block_count()) {
    throw UsageError("excision step: bases do not match the model layout");
  }
  ParamVector out = w;
  for (std::size_t b = 0; b < bases.blocks.size(); ++b) {
    const Matrix& u = bases.blocks[b].unique;
    if (u.cols() == 0) continue;
    std::span<const double> x = w.block(b);
    std::span<const double> r = reference.block(b);
    std::vector<double> diff(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) diff[i] = x[i] - r[i];
    std::vector<double> p = ProjectOnto(u, diff);
    std::span<double> o = out.block(b);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= p[i];
  }
  return out;
}

ExcisionBases VariantBases(const Decomposition& d, double delta, Variant v) {
  ExcisionBases out = Repartition(d, delta);
  const ParamLayout& layout = *out.layout;
  for (std::size_t b = 0; b < out.blocks.size(); ++b) {
    BlockExcision& e = out.blocks[b];
    const Modality m = layout.blocks()[b].modality;
    const bool drop = (v == Variant::kNoBkeVisual && m == Modality::kText) ||
                      (v == Variant::kNoBkeText && m == Modality::kVisual);
    if (drop) {
      e = BlockExcision{Matrix(e.unique.rows(), 0), Matrix(e.unique.rows(), 0),
                        {}, {}};
    } else if (v == Variant::kNoGsd) {
      e.unique = d.forget[b].phi;
      e.unique_kappa.assign(d.spectra[b].kappa.begin(), d.spectra[b].kappa.end());
      e.entangled = Matrix(e.unique.rows(), 0);
      e.entangled_kappa.clear();
    }
  }
  return out;
}

ParamVector ExcisionReference(const UnlearnContext& ctx, const UnlearnPlan& plan,
                              const Decomposition* d) {
  switch (plan.reference) {
    case ReferencePoint::kInitial: return *ctx.initial;
    case ReferencePoint::kTrained: return *ctx.w_n;
    case ReferencePoint::kRollback:
      if (d == nullptr || !d->forget_contribution) {
        throw UsageError("rollback reference needs a decomposition");
      }
      return *ctx.w_n - *d->forget_contribution;
  }
  throw UsageError("unknown reference point");
}

UnlearnResult RunExcisionRounds(const UnlearnContext& ctx,
                                const UnlearnPlan& plan,
                                const ExcisionBases& bases,
                                const ParamVector& ref,
                                const Shards& retain_shards) {
  plan.Validate();
  const ParamVector& w_n = *ctx.w_n;
  w_n.RequireCompatible(ref, "unlearn");
  const double alpha = plan.variant == Variant::kNoLock ? 0.0 : plan.alpha;
  const ForgetLock lock(ref, bases.UniqueBases());
  const std::size_t n_blocks = bases.blocks.size();
  const ParamLayout& layout = w_n.layout();

  UnlearnResult out;
  out.bases = bases;
  PhaseTrace& trace = out.trace;
  trace.max_projected_grad.assign(n_blocks, 0.0);

  RoundContext rc = MakeRoundContext(ctx.fed, retain_shards, "unlearn");
  rc.config.learning_rate = plan.learning_rate;
  rc.config.local_steps = plan.local_steps;
  rc.config.batch_size = plan.batch_size;
  rc.objective = Objective{ObjectiveKind::kAlignmentWithLock, alpha, &lock};
  const std::size_t side_floats = bases.UniqueFloats() + w_n.dim();
  if (plan.charge_bases_per_round) rc.extra_downlink_floats = side_floats;
  rc.observer = [&](std::size_t, std::size_t, const ParamVector&,
                    const ParamVector& g) {
    for (std::size_t b = 0; b < n_blocks; ++b) {
      const Matrix& u = bases.blocks[b].unique;
      if (u.cols() == 0) continue;
      const double norm = Norm(TransposeMatVec(u, g.block(b)));
      trace.max_projected_grad[b] = std::max(trace.max_projected_grad[b], norm);
    }
  };

  const PairBatch eval = RetainEvalBatch(ctx.fed, retain_shards);
  Rng rng(DeriveSeed(ctx.fed.config.seed, "unlearn-sampling"));
  std::set<std::size_t> briefed;
  ParamVector global = w_n;
  bool projected = false;
  std::size_t steps = 0;
  const std::size_t total_rounds = plan.excision_rounds + plan.stabilization_rounds;
  for (std::size_t r = 1; r <= total_rounds; ++r) {
    const bool excise = r <= plan.excision_rounds;
    const std::string phase = excise ? "excision" : "stabilization";
    double after_projection = 0.0;
    if (excise) {
      global = BilateralExcisionStep(global, ref, bases);
      after_projection = RootSumSquares(BlockDrift(global, ref, bases));
      projected = true;
      steps = 0;
    }
    RoundResult res = FedAvgRound(global, rc, r, rng);
    global = std::move(res.global);
    out.ledger.Add(res.ledger);
    if (!plan.charge_bases_per_round) {
      std::size_t fresh = 0;
      for (std::size_t k : res.sampled) fresh += briefed.insert(k).second ? 1 : 0;
      if (fresh > 0) {
        out.ledger.Add({"bases", r, 0.0, PayloadMb(fresh * side_floats)});
      }
    }
    steps += plan.local_steps;

    const std::vector<double> drift = BlockDrift(global, ref, bases);
    const double total = RootSumSquares(drift);
    const double loss = eval.size() > 0 ? AlignmentLoss(*ctx.fed.backbone, global, eval)
                                        : 0.0;
    for (std::size_t b = 0; b < n_blocks; ++b) {
      trace.rows.push_back({r, phase, layout.blocks()[b].Label(), drift[b], loss,
                            drift[b] * drift[b]});
    }
    trace.rows.push_back({r, phase, "total", total, loss, total * total});
    trace.total_drift.push_back(total);
    trace.projected_drift.push_back(after_projection);
    trace.steps_since_projection.push_back(projected ? steps : 0);
    trace.block_drift.push_back(drift);
    spdlog::debug("unlearn round {} ({}): drift {:.4e}, retain loss {:.4f}", r,
                  phase, total, loss);
  }
  out.model = std::move(global);
  return out;
}

UnlearnResult RunVariant(const UnlearnContext& ctx, const UnlearnPlan& plan,
                         const Decomposition& d) {
  const Shards retain = RetainShards(plan.request, ctx.fed);
  ExcisionBases bases = VariantBases(d, plan.delta, plan.variant);
  UnlearnResult out = RunExcisionRounds(ctx, plan, bases,
                                        ExcisionReference(ctx, plan, &d), retain);
  CommLedger ledger = d.ledger;
  ledger.Merge(out.ledger);
  out.ledger = std::move(ledger);
  return out;
}

UnlearnResult RunEase(const UnlearnContext& ctx, const UnlearnPlan& plan) {
  if (plan.variant != Variant::kFull) {
    throw UsageError("run_ease: plan variant must be full");
  }
  plan.Validate();
  Decomposition d = Decompose(*ctx.history, plan.request, plan.delta, plan.tau,
                              ctx.fed, *ctx.w_n, plan.retain_source);
  return RunVariant(ctx, plan, d);
}

UnlearnResult RunAblation(const UnlearnContext& ctx, const UnlearnPlan& plan) {
  if (plan.variant == Variant::kFull) {
    throw UsageError("run_ablation: use run_ease for the full variant");
  }
  plan.Validate();
  Decomposition d = Decompose(*ctx.history, plan.request, plan.delta, plan.tau,
                              ctx.fed, *ctx.w_n, plan.retain_source);
  return RunVariant(ctx, plan, d);
}

RetrainResult RunRetrain(const UnlearnContext& ctx,
                         const UnlearnRequest& request, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw UsageError("retrain: budget fraction must be in (0, 1]");
  }
  Shards retain;
  if (request.scenario == Scenario::kSample && request.samples.empty()) {
    retain = *ctx.fed.shards;
  } else {
    retain = RetainShards(request, ctx.fed);
  }
  bool any = false;
  for (std::size_t k = 0; k < retain.size(); ++k) {
    if (retain[k].empty()) {
      spdlog::info("retrain: client {} has no retained data, skipped", k);
    }
    any = any || !retain[k].empty();
  }
  if (!any) throw UsageError("retrain: retained set is empty");
  RoundContext rc = MakeRoundContext(ctx.fed, retain, "train");
  rc.config.rounds = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(ctx.fed.config.rounds) - 1e-9));
  TrainResult t = TrainFederation(*ctx.initial, rc);
  return {std::move(t.w_n), std::move(t.ledger), rc.config.rounds};
}

UnlearnResult RunGradientAscent(const UnlearnContext& ctx,
                                const UnlearnRequest& request,
                                const AscentPlan& ascent) {
  const ParamVector& w_n = *ctx.w_n;
  UnlearnResult out;
  out.model = w_n;
  const Shards forget = ForgetSubsets(request, ctx.fed);
  if (ascent.steps > 0) {
    ParamVector sum = ParamVector::Zeros(w_n.layout_ptr());
    std::size_t holders = 0;
    for (std::size_t k = 0; k < forget.size(); ++k) {
      if (forget[k].empty()) continue;
      SgdOptions opts{ascent.learning_rate, ascent.steps,
                      ctx.fed.config.batch_size,
                      DeriveSeed(DeriveSeed(ctx.fed.config.seed, "ascent"),
                                 "client", k)};
      LocalSgdResult r =
          LocalSgd(*ctx.fed.backbone, w_n, ctx.fed.data->Gather(forget[k]),
                   Objective{ObjectiveKind::kNegatedAlignment, 0.0, nullptr},
                   opts);
      sum += r.delta;
      ++holders;
    }
    out.model.Axpy(1.0 / static_cast<double>(holders), sum);
    out.ledger.Add({"ascent", 0, PayloadMb(holders * w_n.dim()),
                    PayloadMb(holders * w_n.dim())});
  }
  if (ascent.then_rounds > 0) {
    const Shards retain = RetainShards(request, ctx.fed);
    RoundContext rc = MakeRoundContext(ctx.fed, retain, "ascent-repair");
    rc.config.rounds = ascent.then_rounds;
    TrainResult t = TrainFederation(out.model, rc);
    out.model = std::move(t.w_n);
    out.ledger.Merge(t.ledger);
  }
  return out;
}

double DriftBound(double g_u, double alpha, double learning_rate,
                  std::size_t t) {
  if (alpha == 0.0) return learning_rate * g_u * static_cast<double>(t);
  const double c = 1.0 - 2.0 * learning_rate * alpha;
  return g_u / (2.0 * alpha) * (1.0 - std::pow(c, static_cast<double>(t)));
}

std::vector<double> SimulateRecurrence(double g_u, double alpha,
                                       double learning_rate,
                                       std::size_t t_max) {
  if (alpha > 0.0 && !(learning_rate < 1.0 / (2.0 * alpha))) {
    throw UsageError(fmt::format(
        "simulate_recurrence: contraction needs learning_rate < 1/(2 alpha) "
        "(got {} with alpha {})",
        learning_rate, alpha));
  }
  std::vector<double> out(t_max + 1, 0.0);
  double d = 0.0;
  const double c = 1.0 - 2.0 * learning_rate * alpha;
  for (std::size_t t = 1; t <= t_max; ++t) {
    d = c * d + learning_rate * g_u;
    out[t] = std::abs(d);
  }
  return out;
}

std::vector<double> SimulateRecurrence(
    const std::vector<std::vector<double>>& gradients, double alpha,
    double learning_rate) {
  if (alpha > 0.0 && !(learning_rate < 1.0 / (2.0 * alpha))) {
    throw UsageError(
        "simulate_recurrence: contraction needs learning_rate < 1/(2 alpha)");
  }
  const std::size_t dim = gradients.empty() ? 0 : gradients.front().size();
  std::vector<double> d(dim, 0.0);
  std::vector<double> out{0.0};
  const double c = 1.0 - 2.0 * learning_rate * alpha;
  for (const auto& g : gradients) {
    if (g.size() != dim) throw UsageError("simulate_recurrence: ragged gradients");
    for (std::size_t i = 0; i < dim; ++i) d[i] = c * d[i] - learning_rate * g[i];
    out.push_back(Norm(d));
  }
  return out;
}

}  // namespace fedexcise
