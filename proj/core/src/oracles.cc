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

#include "fedexcise/oracles.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fedexcise/errors.h"
#include "fedexcise/gsd.h"
#include "fedexcise/model.h"
#include "fedexcise/numerics.h"
#include "fedexcise/rng.h"
#include "fedexcise/unlearn.h"
#include "spdlog/fmt/fmt.h"

namespace fedexcise {
namespace {

using Dense = std::vector<std::vector<double>>;  // row-major

Dense Zeros(std::size_t r, std::size_t c) {
  return Dense(r, std::vector<double>(c, 0.0));
}

Dense RandomDense(std::size_t r, std::size_t c, Rng& rng) {
  Dense m = Zeros(r, c);
  for (auto& row : m) {
    for (double& x : row) x = StandardNormal(rng);
  }
  return m;
}

Matrix ToMatrix(const Dense& m) {
  const std::size_t rows = m.size();
  const std::size_t cols = rows == 0 ? 0 : m[0].size();
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = m[i][j];
  }
  return out;
}

Dense ToDense(const Matrix& m) {
  Dense out = Zeros(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  }
  return out;
}

Dense NaiveProduct(const Dense& a, const Dense& b) {
  const std::size_t n = a.size();
  const std::size_t k = b.size();
  const std::size_t m = k == 0 ? 0 : b[0].size();
  Dense c = Zeros(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += a[i][l] * b[l][j];
      c[i][j] = s;
    }
  }
  return c;
}

Dense NaiveTranspose(const Dense& a) {
  if (a.empty()) return {};
  Dense t = Zeros(a[0].size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  }
  return t;
}

// Dense B B^T for columns of b (d x k).
Dense NaiveProjector(const Matrix& b, std::size_t d) {
  Dense p = Zeros(d, d);
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) p[i][j] += b(i, c) * b(j, c);
    }
  }
  return p;
}

std::vector<double> Apply(const Dense& m, const std::vector<double>& x) {
  std::vector<double> y(m.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) y[i] += m[i][j] * x[j];
  }
  return y;
}

double NaiveDot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double NaiveNorm(const std::vector<double>& a) { return std::sqrt(NaiveDot(a, a)); }

double MaxAbsDiff(const Dense& a, const Dense& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      m = std::max(m, std::abs(a[i][j] - b[i][j]));
    }
  }
  return m;
}

double MaxAbsDiff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> RandomVector(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  for (double& x : v) x = StandardNormal(rng);
  return v;
}

// Column combination of a (d x k) with coefficients c.
std::vector<double> Combine(const Matrix& a, const std::vector<double>& c) {
  std::vector<double> v(a.rows(), 0.0);
  for (std::size_t j = 0; j < a.cols(); ++j) {
    for (std::size_t i = 0; i < a.rows(); ++i) v[i] += a(i, j) * c[j];
  }
  return v;
}

// Classical Gram-Schmidt on random columns, done twice.
Matrix RandomOrthonormal(std::size_t d, std::size_t k, Rng& rng) {
  Dense q;
  while (q.size() < k) {
    std::vector<double> v = RandomVector(d, rng);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& u : q) {
        const double c = NaiveDot(u, v);
        for (std::size_t i = 0; i < d; ++i) v[i] -= c * u[i];
      }
    }
    const double n = NaiveNorm(v);
    if (n < 1e-8) continue;
    for (double& x : v) x /= n;
    q.push_back(std::move(v));
  }
  return ToMatrix(NaiveTranspose(q));
}

double RelativeError(const ParamVector& got, const ParamVector& want) {
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < got.dim(); ++i) {
    diff += (got.flat()[i] - want.flat()[i]) * (got.flat()[i] - want.flat()[i]);
    scale += want.flat()[i] * want.flat()[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(scale), 1e-300);
}

ModelConfig SmallModel(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.input_dim_v = 5;
  cfg.input_dim_t = 4;
  cfg.hidden_dim = 6;
  cfg.embed_dim = 3;
  cfg.lora_rank = 2;
  cfg.adapter_blocks = 1;
  cfg.temperature = 0.5;
  cfg.seed = seed;
  return cfg;
}

ParamVector RandomParams(std::shared_ptr<const ParamLayout> layout, double scale,
                         Rng& rng) {
  ParamVector w = ParamVector::Zeros(std::move(layout));
  for (double& x : w.flat()) x = scale * StandardNormal(rng);
  return w;
}

}  // namespace

void OracleReport::Observe(double deviation) {
  ++instances;
  if (!std::isfinite(deviation)) {
    max_deviation = std::numeric_limits<double>::infinity();
  } else {
    max_deviation = std::max(max_deviation, deviation);
  }
}

void OracleReport::Finalize() { pass = max_deviation <= tolerance; }

ParamVector FiniteDiffGradient(const ScalarFunction& f, const ParamVector& w,
                               double h) {
  if (!(h > 0.0)) throw UsageError("finite differences need h > 0");
  ParamVector g = ParamVector::Zeros(w.layout_ptr());
  ParamVector probe = w;
  for (std::size_t i = 0; i < w.dim(); ++i) {
    const double x = w.flat()[i];
    probe.flat()[i] = x + h;
    const double up = f(probe);
    probe.flat()[i] = x - h;
    const double down = f(probe);
    probe.flat()[i] = x;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError(fmt::format("finite differences: f not finite at coordinate {}", i));
    }
    g.flat()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

std::vector<OracleReport> ExhaustiveProjectionCheck(std::size_t d,
                                                    std::size_t trials,
                                                    std::uint64_t seed,
                                                    double delta) {
  if (d == 0 || d > 8) throw UsageError("exhaustive projection check needs 1 <= d <= 8");
  OracleReport idem("projector_idempotency", 1e-10);
  OracleReport sym("projector_self_adjoint", 1e-10);
  OracleReport comp("projector_complement", 1e-10);
  OracleReport match("projector_matches_dense", 1e-10);
  OracleReport erase("exact_erasure", 1e-10);
  OracleReport energy("energy_removal", 1e-8);
  OracleReport retain("retention_bound", 1e-8);
  Rng rng(DeriveSeed(seed, "exhaustive-projection"));
  std::uniform_int_distribution<std::size_t> dim(1, d);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t p = dim(rng);
    const std::size_t q = dim(rng);
    const Dense gf = RandomDense(d, p, rng);
    const Dense gr = RandomDense(d, q, rng);
    const SubspaceBasis phi_f = EnergyTruncate(ToMatrix(gf), 1.0, "oracle forget");
    const SubspaceBasis phi_r = EnergyTruncate(ToMatrix(gr), 1.0, "oracle retain");
    const EntanglementSpectrum spec = ComputeEntanglementSpectrum(phi_f, phi_r);
    const BlockExcision part = PartitionSpectrum(spec, delta, d);
    const Dense pu = NaiveProjector(part.unique, d);

    idem.Observe(MaxAbsDiff(NaiveProduct(pu, pu), pu));
    const std::vector<double> x = RandomVector(d, rng);
    const std::vector<double> y = RandomVector(d, rng);
    sym.Observe(std::abs(NaiveDot(Apply(pu, x), y) - NaiveDot(x, Apply(pu, y))));
    std::vector<double> perp = x;
    const std::vector<double> px = Apply(pu, x);
    for (std::size_t i = 0; i < d; ++i) perp[i] -= px[i];
    comp.Observe(NaiveNorm(Apply(pu, perp)));
    match.Observe(MaxAbsDiff(ProjectOnto(part.unique, x), px));

    // w* = w - P(w - w_n) leaves no component along U.
    const std::vector<double> w = RandomVector(d, rng);
    const std::vector<double> w_n = RandomVector(d, rng);
    std::vector<double> disp(d);
    for (std::size_t i = 0; i < d; ++i) disp[i] = w[i] - w_n[i];
    const std::vector<double> pd = Apply(pu, disp);
    std::vector<double> after(d);
    for (std::size_t i = 0; i < d; ++i) after[i] = w[i] - pd[i] - w_n[i];
    erase.Observe(NaiveNorm(Apply(pu, after)));

    // Removed energy of a forget-span vector equals the unique canonical
    // coordinates' energy.
    const std::vector<double> delta_f = Combine(phi_f.phi, RandomVector(phi_f.phi.cols(), rng));
    const std::vector<double> pf = Apply(pu, delta_f);
    double canonical = 0.0;
    for (std::size_t i = 0; i < spec.kappa.size(); ++i) {
      if (spec.kappa[i] > delta) continue;
      double a = 0.0;
      for (std::size_t r = 0; r < d; ++r) a += spec.directions(r, i) * delta_f[r];
      canonical += a * a;
    }
    energy.Observe(std::abs(NaiveDot(pf, pf) - canonical) /
                   std::max(1.0, NaiveDot(delta_f, delta_f)));

    // Unit retain-span vectors lose at most delta^2 of their energy.
    for (int s = 0; s < 20; ++s) {
      std::vector<double> dr = Combine(phi_r.phi, RandomVector(phi_r.phi.cols(), rng));
      const double n = NaiveNorm(dr);
      for (double& v : dr) v /= n;
      const std::vector<double> pr = Apply(pu, dr);
      const double bound = delta * delta;
      retain.Observe(std::max(0.0, NaiveDot(pr, pr) - bound) / std::max(bound, 1e-300));
    }
  }
  std::vector<OracleReport> out = {idem, sym, comp, match, erase, energy, retain};
  for (auto& r : out) r.Finalize();
  return out;
}

OracleReport PlanarAngleCheck(std::size_t trials, std::uint64_t seed) {
  OracleReport r("planar_angle_kappa", 1e-12);
  Rng rng(DeriveSeed(seed, "planar-angle"));
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  for (std::size_t t = 0; t < trials; ++t) {
    const double a = angle(rng);
    const double theta = angle(rng);
    Matrix f(2, 1), g(2, 1);
    f(0, 0) = std::cos(a);
    f(1, 0) = std::sin(a);
    g(0, 0) = std::cos(a + theta);
    g(1, 0) = std::sin(a + theta);
    const EntanglementSpectrum spec = ComputeEntanglementSpectrum(
        EnergyTruncate(f, 1.0, "planar forget"), EnergyTruncate(g, 1.0, "planar retain"));
    r.Observe(std::abs(spec.kappa.at(0) - std::abs(std::cos(theta))));
  }
  r.Finalize();
  return r;
}

OracleReport RecurrenceClosedFormCheck(double alpha, double learning_rate,
                                       double g_u, std::size_t t_max) {
  if (!(alpha > 0.0) || !(learning_rate * alpha < 0.5)) {
    throw UsageError("recurrence closed form needs alpha > 0 and eta < 1/(2 alpha)");
  }
  OracleReport r(fmt::format("recurrence_closed_form(alpha={},eta={},g={})", alpha,
                             learning_rate, g_u),
                 1e-12);
  const std::vector<double> sim = SimulateRecurrence(g_u, alpha, learning_rate, t_max);
  const double limit = g_u / (2.0 * alpha);
  const double rate = 1.0 - 2.0 * learning_rate * alpha;
  for (std::size_t t = 0; t <= t_max; ++t) {
    const double closed = limit * (1.0 - std::pow(rate, static_cast<double>(t)));
    r.Observe(std::abs(sim.at(t) - closed) / std::max(1.0, limit));
  }
  r.estimates["limit"] = limit;
  r.estimates["final"] = sim.back();
  r.Finalize();
  return r;
}

OracleReport RecurrenceGridCheck() {
  OracleReport r("recurrence_closed_form_grid", 1e-12);
  for (double alpha : {0.1, 0.5, 1.0, 2.0, 5.0}) {
    for (double frac : {0.05, 0.3, 0.9}) {
      for (double g : {0.5, 1.0, 3.0}) {
        const double eta = frac / (2.0 * alpha);
        OracleReport one = RecurrenceClosedFormCheck(alpha, eta, g, 300);
        r.instances += one.instances;
        r.max_deviation = std::max(r.max_deviation, one.max_deviation);
      }
    }
  }
  // Long horizon: drift settles at g / (2 alpha).
  const std::vector<double> sim = SimulateRecurrence(1.0, 1.0, 0.1, 5000);
  r.estimates["limit_gap"] = std::abs(sim.back() - 0.5);
  r.max_deviation = std::max(r.max_deviation, r.estimates["limit_gap"] > 1e-9 ? 1.0 : 0.0);
  r.Finalize();
  return r;
}

OracleReport InfoNceGradientCheck(std::size_t instances, std::uint64_t seed) {
  OracleReport r("infonce_gradient_vs_finite_differences", 1e-4);
  Rng rng(DeriveSeed(seed, "infonce-fd"));
  double smoothness = 0.0;
  for (std::size_t t = 0; t < instances; ++t) {
    const ModelConfig cfg = SmallModel(DeriveSeed(seed, "infonce-model", t));
    const auto layout = ParamLayout::Build(cfg);
    const FrozenBackbone backbone = FrozenBackbone::Create(cfg);
    const std::size_t n = 3 + t % 3;
    PairBatch batch{ToMatrix(RandomDense(n, cfg.input_dim_v, rng)),
                    ToMatrix(RandomDense(n, cfg.input_dim_t, rng)),
                    {}};
    for (std::size_t i = 0; i < n; ++i) batch.pair_ids.push_back(i);
    const ParamVector w = RandomParams(layout, 0.4, rng);
    const ParamVector analytic = InfoNceGradient(backbone, w, batch);
    const ParamVector numeric = FiniteDiffGradient(
        [&](const ParamVector& p) { return AlignmentLoss(backbone, p, batch); }, w);
    r.Observe(RelativeError(numeric, analytic));

    // Gradient change along a random unit direction.
    ParamVector v = RandomParams(layout, 1.0, rng);
    v *= 1.0 / Norm(v);
    const double eps = 1e-4;
    ParamVector shifted = w;
    shifted.Axpy(eps, v);
    smoothness = std::max(
        smoothness, Norm(InfoNceGradient(backbone, shifted, batch) - analytic) / eps);
  }
  r.estimates["smoothness_L"] = smoothness;
  r.Finalize();
  return r;
}

OracleReport ForgetLockGradientCheck(std::size_t instances, std::uint64_t seed) {
  OracleReport r("forget_lock_gradient", 1e-6);
  Rng rng(DeriveSeed(seed, "lock-fd"));
  for (std::size_t t = 0; t < instances; ++t) {
    const ModelConfig cfg = SmallModel(DeriveSeed(seed, "lock-model", t));
    const auto layout = ParamLayout::Build(cfg);
    BlockBases bases;
    for (const BlockSpec& b : layout->blocks()) {
      const std::size_t k = (b.size + t) % 4;
      bases.push_back(k == 0 ? Matrix(b.size, 0) : RandomOrthonormal(b.size, k, rng));
    }
    const ParamVector ref = RandomParams(layout, 1.0, rng);
    const ParamVector w = RandomParams(layout, 1.0, rng);
    const ForgetLock lock(ref, bases);
    const ForgetLock::Value got = lock.Evaluate(w);

    ParamVector dense_grad = ParamVector::Zeros(layout);
    double dense_value = 0.0;
    for (std::size_t b = 0; b < layout->block_count(); ++b) {
      const std::size_t size = layout->blocks()[b].size;
      std::vector<double> disp(size);
      for (std::size_t i = 0; i < size; ++i) disp[i] = w.block(b)[i] - ref.block(b)[i];
      const std::vector<double> pd = Apply(NaiveProjector(bases[b], size), disp);
      dense_value += NaiveDot(pd, pd);
      for (std::size_t i = 0; i < size; ++i) dense_grad.block(b)[i] = 2.0 * pd[i];
    }
    const ParamVector numeric = FiniteDiffGradient(
        [&](const ParamVector& p) { return lock.Evaluate(p).value; }, w);
    r.Observe(RelativeError(got.grad, dense_grad));
    r.Observe(RelativeError(numeric, dense_grad));
    r.Observe(std::abs(got.value - dense_value) / std::max(1.0, dense_value));
  }
  r.Finalize();
  return r;
}

OracleReport NaiveLinearAlgebraCheck(std::size_t instances, std::uint64_t seed) {
  OracleReport r("naive_linear_algebra", 1e-10);
  Rng rng(DeriveSeed(seed, "naive-linalg"));
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t n = dim(rng), k = dim(rng), m = dim(rng);
    const Dense a = RandomDense(n, k, rng);
    const Dense b = RandomDense(k, m, rng);
    const Dense c = RandomDense(n, m, rng);
    r.Observe(MaxAbsDiff(ToDense(Multiply(ToMatrix(a), ToMatrix(b))), NaiveProduct(a, b)));
    r.Observe(MaxAbsDiff(ToDense(TransposeMultiply(ToMatrix(a), ToMatrix(c))),
                         NaiveProduct(NaiveTranspose(a), c)));
    r.Observe(MaxAbsDiff(ToDense(MultiplyTranspose(ToMatrix(a), ToMatrix(NaiveTranspose(b)))),
                         NaiveProduct(a, b)));

    // U diag(s) V^T rebuilds the input.
    const SvdResult svd = ThinSvd(ToMatrix(a), "oracle");
    Dense us = ToDense(svd.u);
    for (auto& row : us) {
      for (std::size_t j = 0; j < row.size(); ++j) row[j] *= svd.singular_values[j];
    }
    const Dense rebuilt = NaiveProduct(us, NaiveTranspose(ToDense(svd.v)));
    double scale = 1.0;
    for (const auto& row : a) {
      for (double x : row) scale = std::max(scale, std::abs(x));
    }
    r.Observe(MaxAbsDiff(rebuilt, a) / scale);
  }
  r.Finalize();
  return r;
}

std::vector<OracleReport> RunOracleSuite(std::uint64_t seed) {
  std::vector<OracleReport> out;
  out.push_back(NaiveLinearAlgebraCheck(200, seed));
  for (std::size_t d : {2, 4, 6, 8}) {
    for (OracleReport& r : ExhaustiveProjectionCheck(d, 125, DeriveSeed(seed, "dim", d))) {
      r.check = fmt::format("{}(d={})", r.check, d);
      out.push_back(std::move(r));
    }
  }
  out.push_back(PlanarAngleCheck(200, seed));
  out.push_back(RecurrenceGridCheck());
  out.push_back(InfoNceGradientCheck(6, seed));
  out.push_back(ForgetLockGradientCheck(6, seed));
  return out;
}

nlohmann::json OracleReportsToJson(const std::vector<OracleReport>& reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const OracleReport& r : reports) {
    nlohmann::json j = {{"check", r.check},
                        {"instances", r.instances},
                        {"max_deviation", r.max_deviation},
                        {"tolerance", r.tolerance},
                        {"pass", r.pass}};
    if (!r.estimates.empty()) j["estimates"] = r.estimates;
    out.push_back(std::move(j));
  }
  return out;
}

bool AllPass(const std::vector<OracleReport>& reports) {
  return std::all_of(reports.begin(), reports.end(),
                     [](const OracleReport& r) { return r.pass; });
}

}  // namespace fedexcise
