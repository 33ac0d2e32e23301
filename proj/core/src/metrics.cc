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

#include "fedexcise/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fedexcise/errors.h"
#include "nlohmann/json.hpp"
#include "spdlog/fmt/fmt.h"
#include "spdlog/spdlog.h"

namespace fedexcise {
namespace {

constexpr double kVarianceFloor = 1e-12;
constexpr double kLog2Pi = 1.8378770664093453;

// Rank of the partner among all candidates for each query row of `scores`.
double DirectionHits(const Matrix& scores, std::size_t queries, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < queries; ++i) {
    const double own = scores(i, i);
    std::size_t rank = 0;
    for (std::size_t j = 0; j < scores.cols() && rank < k; ++j) {
      const double s = scores(i, j);
      if (s > own || (s == own && j < i)) ++rank;
    }
    if (rank < k) ++hits;
  }
  return static_cast<double>(hits);
}

double Median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double LogNormal(double x, double mean, double var) {
  return -0.5 * (kLog2Pi + std::log(var) + (x - mean) * (x - mean) / var);
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  std::size_t n = 0;
};

Moments Summarize(const std::vector<double>& v) {
  Moments m;
  m.n = v.size();
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(m.n);
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(m.n);
  return m;
}

}  // namespace

double RecallAtK(const Matrix& zv, const Matrix& zt, std::size_t k,
                 std::size_t queries) {
  if (zv.rows() == 0 || zv.rows() != zt.rows()) {
    throw UsageError("recall_at_k: need N >= 1 aligned rows");
  }
  if (k == 0) throw UsageError("recall_at_k: k must be >= 1");
  if (queries == 0 || queries > zv.rows()) queries = zv.rows();
  const Matrix s = MultiplyTranspose(zv, zt);
  const Matrix st = s.Transposed();
  const double hits = DirectionHits(s, queries, k) + DirectionHits(st, queries, k);
  return 100.0 * hits / (2.0 * static_cast<double>(queries));
}

RetrievalSplit MakeSplit(std::string name, const PairBatch& members,
                         const PairBatch& fillers, std::size_t pool_size) {
  RetrievalSplit split;
  split.name = std::move(name);
  std::vector<std::size_t> picked;
  const std::size_t n = members.size();
  const std::size_t take = std::min(n, pool_size);
  for (std::size_t i = 0; i < take; ++i) picked.push_back(i * n / take);
  split.queries = take;
  PairBatch pool = members.Rows(picked);
  const std::size_t extra = std::min(pool_size - take, fillers.size());
  if (extra > 0) {
    std::vector<std::size_t> fill(extra);
    std::iota(fill.begin(), fill.end(), std::size_t{0});
    PairBatch f = fillers.Rows(fill);
    Matrix v(take + extra, pool.visual.cols());
    Matrix t(take + extra, pool.text.cols());
    for (std::size_t c = 0; c < v.cols(); ++c) {
      for (std::size_t i = 0; i < take; ++i) v(i, c) = pool.visual(i, c);
      for (std::size_t i = 0; i < extra; ++i) v(take + i, c) = f.visual(i, c);
    }
    for (std::size_t c = 0; c < t.cols(); ++c) {
      for (std::size_t i = 0; i < take; ++i) t(i, c) = pool.text(i, c);
      for (std::size_t i = 0; i < extra; ++i) t(take + i, c) = f.text(i, c);
    }
    pool.visual = std::move(v);
    pool.text = std::move(t);
    pool.pair_ids.insert(pool.pair_ids.end(), f.pair_ids.begin(),
                         f.pair_ids.end());
  }
  split.pool = std::move(pool);
  return split;
}

RecallTriple EvaluateSplit(const FrozenBackbone& backbone,
                           const ParamVector& params,
                           const RetrievalSplit& split) {
  const Matrix zv =
      Encode(backbone, params, split.pool.visual, Modality::kVisual).z;
  const Matrix zt = Encode(backbone, params, split.pool.text, Modality::kText).z;
  return {RecallAtK(zv, zt, 1, split.queries), RecallAtK(zv, zt, 5, split.queries),
          RecallAtK(zv, zt, 10, split.queries)};
}

double AlignmentResidual(std::span<const double> s_unlearned,
                         std::span<const double> s_retrained,
                         std::span<const double> s_original, double eps) {
  if (s_unlearned.empty() || s_unlearned.size() != s_retrained.size() ||
      s_unlearned.size() != s_original.size()) {
    throw UsageError("alignment_residual: need equally sized non-empty inputs");
  }
  std::vector<double> rho(s_unlearned.size());
  for (std::size_t i = 0; i < rho.size(); ++i) {
    rho[i] = std::abs(s_unlearned[i] - s_retrained[i]) /
             (std::abs(s_original[i] - s_retrained[i]) + eps);
  }
  return Median(std::move(rho));
}

double AlignmentResidual(const FrozenBackbone& backbone,
                         const ParamVector& unlearned,
                         const ParamVector& retrained,
                         const ParamVector& original, const PairBatch& pairs,
                         double eps) {
  unlearned.RequireCompatible(retrained, "alignment_residual");
  unlearned.RequireCompatible(original, "alignment_residual");
  if (pairs.size() == 0) throw UsageError("alignment_residual: no pairs");
  return AlignmentResidual(PairSimilarities(backbone, unlearned, pairs),
                           PairSimilarities(backbone, retrained, pairs),
                           PairSimilarities(backbone, original, pairs), eps);
}

std::vector<double> PairLosses(const FrozenBackbone& backbone,
                               const ParamVector& params,
                               const PairBatch& pairs,
                               const PairBatch& negatives) {
  const double temperature = params.layout().config().temperature;
  const Matrix zv = Encode(backbone, params, pairs.visual, Modality::kVisual).z;
  const Matrix zt = Encode(backbone, params, pairs.text, Modality::kText).z;
  const Matrix nv =
      Encode(backbone, params, negatives.visual, Modality::kVisual).z;
  const Matrix nt = Encode(backbone, params, negatives.text, Modality::kText).z;
  const Matrix sv = MultiplyTranspose(zv, nt);  // query image vs negative text
  const Matrix st = MultiplyTranspose(zt, nv);
  std::vector<double> out(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    double own = 0.0;
    for (std::size_t c = 0; c < zv.cols(); ++c) own += zv(i, c) * zt(i, c);
    own /= temperature;
    double total = 0.0;
    for (const Matrix* s : {&sv, &st}) {
      double mx = own;
      for (std::size_t j = 0; j < s->cols(); ++j) {
        mx = std::max(mx, (*s)(i, j) / temperature);
      }
      double sum = std::exp(own - mx);
      for (std::size_t j = 0; j < s->cols(); ++j) {
        sum += std::exp((*s)(i, j) / temperature - mx);
      }
      total += -(own - mx - std::log(sum));
    }
    out[i] = 0.5 * total;
  }
  return out;
}

MiaResult MiaAttack(std::span<const double> target_losses,
                    std::span<const std::size_t> queries,
                    std::span<const std::size_t> nonmembers,
                    const ShadowPool& pool, const MiaConfig& config) {
  if (pool.losses.size() < 2) throw UsageError("mia: need at least 2 shadows");
  if (nonmembers.size() < 50) {
    throw UsageError(fmt::format("mia: {} calibration non-members, need >= 50",
                                 nonmembers.size()));
  }
  if (queries.empty()) throw UsageError("mia: no query samples");
  const std::size_t n = target_losses.size();
  for (const auto& row : pool.losses) {
    if (row.size() != n) throw UsageError("mia: shadow pool size mismatch");
  }

  // Loss threshold maximizing balanced shadow accuracy.
  std::vector<std::pair<double, bool>> labeled;
  std::size_t n_in = 0;
  for (std::size_t s = 0; s < pool.losses.size(); ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      labeled.emplace_back(pool.losses[s][i], pool.member[s][i]);
      n_in += pool.member[s][i] ? 1 : 0;
    }
  }
  const std::size_t n_out = labeled.size() - n_in;
  if (n_in == 0 || n_out == 0) throw UsageError("mia: shadows lack in or out samples");
  std::sort(labeled.begin(), labeled.end());
  double best_acc = -1.0;
  double threshold = labeled.front().first;
  std::size_t in_below = 0;
  std::size_t out_below = 0;
  for (std::size_t j = 0; j <= labeled.size(); ++j) {
    if (j == 0 || j == labeled.size() || labeled[j].first != labeled[j - 1].first) {
      // members predicted for loss < candidate
      const double acc =
          0.5 * (static_cast<double>(in_below) / static_cast<double>(n_in) +
                 static_cast<double>(n_out - out_below) / static_cast<double>(n_out));
      if (acc > best_acc) {
        best_acc = acc;
        threshold = j == labeled.size()
                        ? labeled.back().first + 1.0
                        : (j == 0 ? labeled.front().first
                                  : 0.5 * (labeled[j - 1].first + labeled[j].first));
      }
    }
    if (j < labeled.size()) (labeled[j].second ? in_below : out_below) += 1;
  }
  MiaResult out;
  out.threshold = threshold;
  std::size_t flagged = 0;
  for (std::size_t q : queries) flagged += target_losses[q] < threshold ? 1 : 0;
  out.tpr = 100.0 * static_cast<double>(flagged) / static_cast<double>(queries.size());

  // Per-sample in/out Gaussians; samples lacking one side fall back to the
  // pooled statistics of that side.
  std::vector<double> all_in;
  std::vector<double> all_out;
  for (const auto& [loss, in] : labeled) (in ? all_in : all_out).push_back(loss);
  const Moments pooled_in = Summarize(all_in);
  const Moments pooled_out = Summarize(all_out);
  bool floored = false;
  auto score = [&](std::size_t i) {
    std::vector<double> in_l;
    std::vector<double> out_l;
    for (std::size_t s = 0; s < pool.losses.size(); ++s) {
      (pool.member[s][i] ? in_l : out_l).push_back(pool.losses[s][i]);
    }
    Moments mi = in_l.size() >= 2 ? Summarize(in_l) : pooled_in;
    Moments mo = out_l.size() >= 2 ? Summarize(out_l) : pooled_out;
    if (mi.var < kVarianceFloor || mo.var < kVarianceFloor) floored = true;
    mi.var = std::max(mi.var, kVarianceFloor);
    mo.var = std::max(mo.var, kVarianceFloor);
    const double x = target_losses[i];
    return LogNormal(x, mi.mean, mi.var) - LogNormal(x, mo.mean, mo.var);
  };
  std::vector<double> null_scores;
  for (std::size_t i : nonmembers) null_scores.push_back(score(i));
  std::vector<double> sorted = null_scores;
  std::sort(sorted.begin(), sorted.end());
  // Smallest cut with at most fpr_target of the non-members above it.
  const auto allowed = static_cast<std::size_t>(
      std::floor(config.fpr_target * static_cast<double>(sorted.size())));
  const double cut = sorted[sorted.size() - 1 - allowed];
  std::size_t above = 0;
  for (double s : null_scores) above += s > cut ? 1 : 0;
  out.lira_fpr = 100.0 * static_cast<double>(above) /
                 static_cast<double>(null_scores.size());
  std::size_t hits = 0;
  for (std::size_t q : queries) hits += score(q) > cut ? 1 : 0;
  out.lira_tpr = 100.0 * static_cast<double>(hits) / static_cast<double>(queries.size());
  if (floored) spdlog::info("mia: degenerate shadow variance floored at 1e-12");
  return out;
}

std::vector<TradeoffRow> TradeoffCurves(const Decomposition& d,
                                        const GradientMatrices& forget,
                                        std::span<const double> delta_grid) {
  if (!std::is_sorted(delta_grid.begin(), delta_grid.end())) {
    throw UsageError("tradeoff_curves: delta grid must be ascending");
  }
  double total = 0.0;
  for (const auto& g : forget) total += std::pow(FrobeniusNorm(g), 2);
  if (!(total > 0.0)) throw UsageError("tradeoff_curves: forget matrix is zero");
  std::vector<TradeoffRow> rows;
  for (double delta : delta_grid) {
    ExcisionBases bases = Repartition(d, delta);
    TradeoffRow row{delta, 0.0, 0.0};
    for (std::size_t b = 0; b < bases.blocks.size(); ++b) {
      const BlockExcision& e = bases.blocks[b];
      if (e.unique.cols() == 0) continue;
      row.eta_f += std::pow(FrobeniusNorm(TransposeMultiply(e.unique, forget[b])), 2);
      for (double k : e.unique_kappa) row.eta_r = std::max(row.eta_r, k * k);
    }
    row.eta_f /= total;
    rows.push_back(row);
  }
  return rows;
}

const std::vector<std::string>& RunReport::MetricKeys() {
  static const std::vector<std::string> keys = {
      "f_r1", "f_r5", "f_r10",   "r_r1",    "r_r5",       "r_r10",
      "rho",  "mia",  "lira_tpr", "comm_mb", "drift_final"};
  return keys;
}

namespace {
const std::vector<std::string>& GapKeys() {
  static const std::vector<std::string> keys = {
      "f_r1", "f_r5", "f_r10", "r_r1", "r_r5", "r_r10", "mia", "lira_tpr",
      "comm_mb"};
  return keys;
}

std::string FormatValue(const std::optional<double>& v) {
  return v.has_value() ? fmt::format("{:.17g}", *v) : std::string();
}
}  // namespace

void RunReport::FillGaps(const RunReport& reference) {
  for (const auto& key : GapKeys()) {
    auto a = values.find(key);
    auto b = reference.values.find(key);
    if (a == values.end() || b == reference.values.end() || !a->second ||
        !b->second) {
      gaps[key] = std::nullopt;
    } else {
      gaps[key] = std::abs(*a->second - *b->second);
    }
  }
}

std::string ReportToJson(const std::vector<RunReport>& reports) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["scenario"] = r.scenario;
    j["method"] = r.method;
    j["seed"] = r.seed;
    nlohmann::ordered_json vals = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.values) {
      vals[k] = v.has_value() ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    }
    nlohmann::ordered_json gaps = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.gaps) {
      gaps[k] = v.has_value() ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    }
    j["metrics"] = vals;
    j["gaps"] = gaps;
    arr.push_back(j);
  }
  return arr.dump(2);
}

std::vector<RunReport> ReportsFromJson(const std::string& text) {
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(fmt::format("report: invalid JSON ({})", e.what()));
  }
  std::vector<RunReport> out;
  for (const auto& j : arr) {
    RunReport r;
    r.scenario = j.at("scenario").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [k, v] : j.at("metrics").items()) {
      r.values[k] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    }
    for (const auto& [k, v] : j.at("gaps").items()) {
      r.gaps[k] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    }
    out.push_back(std::move(r));
  }
  return out;
}

const std::vector<std::string>& SummaryColumns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"scenario", "method", "seed"};
    for (const auto& k : RunReport::MetricKeys()) c.push_back(k);
    for (const auto& k : GapKeys()) c.push_back(k + "_gap");
    return c;
  }();
  return cols;
}

void WriteSummaryCsv(std::ostream& out, const std::vector<RunReport>& reports) {
  const auto& cols = SummaryColumns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  for (const auto& r : reports) {
    out << r.scenario << "," << r.method << "," << r.seed;
    for (const auto& k : RunReport::MetricKeys()) {
      auto it = r.values.find(k);
      out << "," << (it == r.values.end() ? std::string() : FormatValue(it->second));
    }
    for (const auto& k : GapKeys()) {
      auto it = r.gaps.find(k);
      out << "," << (it == r.gaps.end() ? std::string() : FormatValue(it->second));
    }
    out << "\n";
  }
}

}  // namespace fedexcise
