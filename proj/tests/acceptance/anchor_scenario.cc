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


#include "anchor_scenario.h"

#include <cmath>
#include <numeric>
#include <span>

#include "fedexcise/errors.h"
#include "fedexcise/rng.h"

namespace fedexcise::testing {
namespace {

Matrix Gaussian(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = scale * StandardNormal(rng);
  return m;
}

// Input whose backbone image is sum_k coords[k] * u_k.
void WriteInput(Matrix& inputs, std::size_t row, const SvdResult& svd,
                const std::vector<double>& coords) {
  for (std::size_t j = 0; j < inputs.cols(); ++j) {
    double x = 0.0;
    for (std::size_t k = 0; k < coords.size(); ++k) {
      x += svd.v(j, k) * coords[k] / svd.singular_values[k];
    }
    inputs(row, j) = x;
  }
}

double MeanSimilarity(const AnchorScenario& s, const ParamVector& w) {
  const std::vector<double> sims = PairSimilarities(s.backbone, w, s.forget);
  return std::accumulate(sims.begin(), sims.end(), 0.0) /
         static_cast<double>(sims.size());
}

}  // namespace

UnlearnContext AnchorScenario::Context() const {
  UnlearnContext ctx;
  ctx.fed = FederationView{&backbone, &data, &shards, &labels, federation};
  ctx.initial = &initial;
  ctx.w_n = &w_n;
  return ctx;
}

AnchorScenario BuildAnchorScenario(std::uint64_t seed,
                                   const AnchorOptions& options) {
  AnchorScenario s;
  s.model.adapter_blocks = 0;
  s.model.seed = seed;
  s.layout = ParamLayout::Build(s.model);
  s.backbone = FrozenBackbone::Create(s.model);
  const std::size_t h = s.model.hidden_dim;
  const std::size_t shared = options.shared_dims;
  const std::size_t excl = options.exclusive_dims;
  const std::size_t image = shared + excl;
  if (image > s.model.input_dim_v || image > s.model.input_dim_t) {
    throw UsageError("anchor scenario: shared + exclusive dims exceed input dims");
  }

  std::vector<SvdResult> svd;
  for (Modality m : kModalities) svd.push_back(ThinSvd(s.backbone.map(m)));

  Rng rng(DeriveSeed(seed, "anchor"));
  const Matrix map_v = Gaussian(shared, options.latent_dim,
                                1.0 / std::sqrt(double(options.latent_dim)), rng);
  const Matrix map_t = Gaussian(shared, options.latent_dim,
                                1.0 / std::sqrt(double(options.latent_dim)), rng);
  const Matrix pairing = Gaussian(excl, excl, 1.0 / std::sqrt(double(excl)), rng);

  const std::size_t nr = options.retain_pairs;
  const std::size_t n = nr + options.forget_pairs;
  s.data.n_concepts = 2;
  s.data.pairs.visual = Matrix(n, s.model.input_dim_v);
  s.data.pairs.text = Matrix(n, s.model.input_dim_t);
  for (std::size_t i = 0; i < n; ++i) {
    const bool forget = i >= nr;
    std::vector<double> cv(image, 0.0);
    std::vector<double> ct(image, 0.0);
    std::vector<double> y(excl);
    for (double& x : y) x = StandardNormal(rng);
    const std::vector<double> ry = MatVec(pairing, y);
    const double scale = forget ? 1.0 : options.leak;
    for (std::size_t a = 0; a < excl; ++a) {
      cv[shared + a] = scale * y[a];
      ct[shared + a] = scale * ry[a];
    }
    if (!forget) {
      std::vector<double> z(options.latent_dim);
      for (double& x : z) x = StandardNormal(rng);
      const std::vector<double> zv = MatVec(map_v, z);
      const std::vector<double> zt = MatVec(map_t, z);
      for (std::size_t a = 0; a < shared; ++a) {
        cv[a] = zv[a] + options.shared_noise * StandardNormal(rng);
        ct[a] = zt[a] + options.shared_noise * StandardNormal(rng);
      }
    }
    WriteInput(s.data.pairs.visual, i, svd[0], cv);
    WriteInput(s.data.pairs.text, i, svd[1], ct);
    s.data.pairs.pair_ids.push_back(i);
    s.data.concept_ids.push_back(forget ? 1 : 0);
  }
  s.labels = s.data.concept_ids;

  s.shards.assign(s.federation.clients, {});
  for (std::size_t i = nr; i < n; ++i) s.shards[0].push_back(i);
  for (std::size_t i = 0; i < nr; ++i) {
    s.shards[1 + i % (s.federation.clients - 1)].push_back(i);
  }
  s.federation.seed = seed;
  s.request.client = 0;
  s.retain = RetainShards(s.request, s.Context().fed);

  // The initial projectors ignore the exclusive hidden directions, and the
  // unique basis of each projector is {e_r u_k^T} over those directions.
  s.initial = InitialParams(s.layout, seed);
  s.bases.layout = s.layout;
  s.bases.blocks.resize(s.layout->block_count());
  for (std::size_t b = 0; b < s.layout->block_count(); ++b) {
    const BlockSpec& spec = s.layout->blocks()[b];
    BlockExcision& e = s.bases.blocks[b];
    e.entangled = Matrix(spec.size, 0);
    if (spec.kind != BlockKind::kProjector) {
      e.unique = Matrix(spec.size, 0);
      continue;
    }
    const Matrix& u = svd[spec.modality == Modality::kVisual ? 0 : 1].u;
    std::span<double> w = s.initial.block(b);
    for (std::size_t k = shared; k < image; ++k) {
      for (std::size_t r = 0; r < h; ++r) {
        double wu = 0.0;
        for (std::size_t c = 0; c < h; ++c) wu += w[c * h + r] * u(c, k);
        for (std::size_t c = 0; c < h; ++c) w[c * h + r] -= wu * u(c, k);
      }
    }
    e.unique = Matrix(spec.size, h * excl);
    for (std::size_t k = 0; k < excl; ++k) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < h; ++c) e.unique(c * h + r, k * h + r) = u(c, shared + k);
      }
    }
    e.unique_kappa.assign(h * excl, 0.0);
  }

  RoundContext rc;
  rc.backbone = &s.backbone;
  rc.data = &s.data;
  rc.shards = &s.retain;
  rc.config = s.federation;
  s.retrained = TrainFederation(s.initial, rc).w_n;

  s.forget = s.data.Gather(s.shards[0]);
  s.w_n = s.retrained;
  for (std::size_t step = 0; step < options.memorize_steps; ++step) {
    const ParamVector g = InfoNceGradient(s.backbone, s.w_n, s.forget);
    s.w_n.Axpy(-options.memorize_lr, ApplyProjector(s.bases, g));
  }
  return s;
}

ExcisionBases KeepModality(const ExcisionBases& bases, Modality excised) {
  ExcisionBases out = bases;
  for (std::size_t b = 0; b < out.blocks.size(); ++b) {
    if (out.layout->blocks()[b].modality == excised) continue;
    out.blocks[b].unique = Matrix(out.layout->blocks()[b].size, 0);
    out.blocks[b].unique_kappa.clear();
  }
  return out;
}

AnchorMeasurement MeasureAnchor(const AnchorScenario& s, Modality excised,
                                std::size_t excision_rounds,
                                std::size_t stabilization_rounds) {
  const ExcisionBases unilateral = KeepModality(s.bases, excised);
  auto projected_grad = [&](const ParamVector& w) {
    const ParamVector g = InfoNceGradient(s.backbone, w, s.forget);
    double sq = 0.0;
    for (std::size_t b = 0; b < unilateral.blocks.size(); ++b) {
      const Matrix& basis = unilateral.blocks[b].unique;
      if (basis.cols() == 0) continue;
      for (double x : TransposeMatVec(basis, g.block(b))) sq += x * x;
    }
    return std::sqrt(sq);
  };
  AnchorMeasurement m;
  m.g_unilateral = projected_grad(BilateralExcisionStep(s.w_n, s.retrained, unilateral));
  m.g_bilateral = projected_grad(BilateralExcisionStep(s.w_n, s.retrained, s.bases));
  m.sim_trained = MeanSimilarity(s, s.w_n);
  m.sim_retrained = MeanSimilarity(s, s.retrained);

  const UnlearnContext ctx = s.Context();
  UnlearnPlan plan;
  plan.request = s.request;
  plan.alpha = 0.0;
  plan.excision_rounds = excision_rounds;
  UnlearnPlan short_plan = plan;
  short_plan.stabilization_rounds = 0;
  plan.stabilization_rounds = stabilization_rounds;
  auto run = [&](const UnlearnPlan& p, const ExcisionBases& b) {
    return MeanSimilarity(s, RunExcisionRounds(ctx, p, b, s.retrained, s.retain).model);
  };
  m.sim_unilateral_start = run(short_plan, unilateral);
  m.sim_unilateral_end = run(plan, unilateral);
  m.sim_bilateral_start = run(short_plan, s.bases);
  m.sim_bilateral_end = run(plan, s.bases);
  return m;
}

}  // namespace fedexcise::testing
