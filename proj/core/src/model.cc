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

#include "fedexcise/model.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "fedexcise/errors.h"
#include "fedexcise/rng.h"
#include "spdlog/fmt/fmt.h"
#include "spdlog/spdlog.h"

namespace fedexcise {
namespace {

Matrix GaussianMatrix(std::size_t rows, std::size_t cols, double stddev,
                      Rng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = stddev * StandardNormal(rng);
  return m;
}

Matrix BlockMatrix(std::span<const double> values, std::size_t offset,
                   std::size_t rows, std::size_t cols) {
  auto first = values.begin() + static_cast<std::ptrdiff_t>(offset);
  return Matrix(rows, cols,
                std::vector<double>(first, first + static_cast<std::ptrdiff_t>(
                                                       rows * cols)));
}

void StoreMatrix(const Matrix& m, std::span<double> dst, std::size_t offset) {
  std::copy(m.data().begin(), m.data().end(), dst.begin() + offset);
}

void AddRowVector(Matrix& m, std::span<const double> v) {
  for (std::size_t c = 0; c < m.cols(); ++c) {
    for (std::size_t r = 0; r < m.rows(); ++r) m(r, c) += v[c];
  }
}

std::vector<double> ColumnSums(const Matrix& m) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t c = 0; c < m.cols(); ++c) {
    for (std::size_t r = 0; r < m.rows(); ++r) out[c] += m(r, c);
  }
  return out;
}

struct ProjectorView {
  Matrix w1;  // hidden x hidden
  std::vector<double> b1;
  Matrix w2;  // embed x hidden
  std::vector<double> b2;
};

ProjectorView ReadProjector(const ParamVector& params, std::size_t block) {
  const ModelConfig& cfg = params.layout().config();
  const std::size_t h = cfg.hidden_dim;
  const std::size_t m = cfg.embed_dim;
  std::span<const double> v = params.block(block);
  ProjectorView p;
  p.w1 = BlockMatrix(v, 0, h, h);
  p.b1.assign(v.begin() + h * h, v.begin() + h * h + h);
  p.w2 = BlockMatrix(v, h * h + h, m, h);
  p.b2.assign(v.begin() + h * h + h + m * h, v.begin() + h * h + h + m * h + m);
  return p;
}

struct ForwardCache {
  std::vector<std::size_t> adapter_blocks;
  std::vector<Matrix> adapter_inputs;  // H before each adapter
  std::vector<Matrix> adapter_codes;   // H A^T
  std::vector<Matrix> ups;             // B per adapter
  std::vector<Matrix> downs;           // A per adapter
  std::size_t projector_block = 0;
  ProjectorView projector;
  Matrix hidden;  // H after adapters
  Matrix act;     // tanh(H W1^T + b1)
  std::vector<double> raw_norms;
  Matrix z;
};

ForwardCache Forward(const FrozenBackbone& backbone, const ParamVector& params,
                     const Matrix& inputs, Modality modality) {
  const ParamLayout& layout = params.layout();
  const ModelConfig& cfg = layout.config();
  if (inputs.rows() < 1 || inputs.cols() != cfg.input_dim(modality)) {
    throw UsageError(fmt::format(
        "encode[{}]: inputs are {}x{}, expected N>=1 rows of width {}",
        ModalityName(modality), inputs.rows(), inputs.cols(),
        cfg.input_dim(modality)));
  }
  ForwardCache cache;
  Matrix h = MultiplyTranspose(inputs, backbone.map(modality));
  for (std::size_t a = 0; a < cfg.adapter_blocks; ++a) {
    const std::size_t b = layout.Find(modality, fmt::format("adapter{}", a));
    Matrix up = AdapterUp(params, b);
    Matrix down = AdapterDown(params, b);
    Matrix code = MultiplyTranspose(h, down);
    Matrix next = Add(h, MultiplyTranspose(code, up));
    cache.adapter_blocks.push_back(b);
    cache.adapter_inputs.push_back(std::move(h));
    cache.adapter_codes.push_back(std::move(code));
    cache.ups.push_back(std::move(up));
    cache.downs.push_back(std::move(down));
    h = std::move(next);
  }
  cache.projector_block = layout.Find(modality, "projector");
  cache.projector = ReadProjector(params, cache.projector_block);
  Matrix act = MultiplyTranspose(h, cache.projector.w1);
  AddRowVector(act, cache.projector.b1);
  for (double& x : act.data()) x = std::tanh(x);
  Matrix raw = MultiplyTranspose(act, cache.projector.w2);
  AddRowVector(raw, cache.projector.b2);

  cache.raw_norms.assign(raw.rows(), 0.0);
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < raw.cols(); ++c) sq += raw(i, c) * raw(i, c);
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NumericError(fmt::format(
          "encode[{}]: degenerate embedding at row {} (raw norm {})",
          ModalityName(modality), i, norm));
    }
    cache.raw_norms[i] = norm;
    for (std::size_t c = 0; c < raw.cols(); ++c) raw(i, c) /= norm;
  }
  cache.hidden = std::move(h);
  cache.act = std::move(act);
  cache.z = std::move(raw);
  return cache;
}

// Accumulates dLoss/dparams for one modality given dLoss/dZ.
void Backward(const ForwardCache& cache, const Matrix& dz, ParamVector& grad) {
  const std::size_t n = dz.rows();
  const std::size_t m = dz.cols();
  Matrix draw(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double proj = 0.0;
    for (std::size_t c = 0; c < m; ++c) proj += cache.z(i, c) * dz(i, c);
    for (std::size_t c = 0; c < m; ++c) {
      draw(i, c) = (dz(i, c) - cache.z(i, c) * proj) / cache.raw_norms[i];
    }
  }
  const std::size_t h = cache.hidden.cols();
  std::span<double> pg = grad.block(cache.projector_block);
  Matrix gw2 = TransposeMultiply(draw, cache.act);
  std::vector<double> gb2 = ColumnSums(draw);
  Matrix dact = Multiply(draw, cache.projector.w2);
  for (std::size_t k = 0; k < dact.data().size(); ++k) {
    const double u = cache.act.data()[k];
    dact.data()[k] *= 1.0 - u * u;
  }
  Matrix gw1 = TransposeMultiply(dact, cache.hidden);
  std::vector<double> gb1 = ColumnSums(dact);
  StoreMatrix(gw1, pg, 0);
  std::copy(gb1.begin(), gb1.end(), pg.begin() + h * h);
  StoreMatrix(gw2, pg, h * h + h);
  std::copy(gb2.begin(), gb2.end(), pg.begin() + h * h + h + m * h);

  Matrix dh = Multiply(dact, cache.projector.w1);
  for (std::size_t a = cache.adapter_blocks.size(); a-- > 0;) {
    std::span<double> ag = grad.block(cache.adapter_blocks[a]);
    const Matrix& up = cache.ups[a];
    Matrix gup = TransposeMultiply(dh, cache.adapter_codes[a]);
    Matrix dcode = Multiply(dh, up);
    Matrix gdown = TransposeMultiply(dcode, cache.adapter_inputs[a]);
    StoreMatrix(gup, ag, 0);
    StoreMatrix(gdown, ag, up.rows() * up.cols());
    if (a > 0) dh = Add(dh, Multiply(dcode, cache.downs[a]));
  }
}

// Loss of the symmetric InfoNCE objective; fills dL/dZv and dL/dZt when
// requested.
double InfoNceCore(const Matrix& zv, const Matrix& zt, double temperature,
                   Matrix* dzv, Matrix* dzt) {
  const std::size_t n = zv.rows();
  Matrix s = MultiplyTranspose(zv, zt);
  for (double& x : s.data()) x /= temperature;
  Matrix p(n, n);  // row softmax
  Matrix q(n, n);  // column softmax
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = s(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, s(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(s(i, j) - mx);
    for (std::size_t j = 0; j < n; ++j) p(i, j) = std::exp(s(i, j) - mx) / sum;
    loss -= s(i, i) - mx - std::log(sum);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double mx = s(0, j);
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, s(i, j));
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::exp(s(i, j) - mx);
    for (std::size_t i = 0; i < n; ++i) q(i, j) = std::exp(s(i, j) - mx) / sum;
    loss -= s(j, j) - mx - std::log(sum);
  }
  loss /= 2.0 * static_cast<double>(n);
  if (dzv != nullptr && dzt != nullptr) {
    Matrix ds(n, n);
    const double scale = 1.0 / (2.0 * static_cast<double>(n) * temperature);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        ds(i, j) = (p(i, j) + q(i, j) - (i == j ? 2.0 : 0.0)) * scale;
      }
    }
    *dzv = Multiply(ds, zt);
    *dzt = TransposeMultiply(ds, zv);
  }
  return std::max(loss, 0.0);
}

}  // namespace

FrozenBackbone FrozenBackbone::Create(const ModelConfig& config) {
  config.Validate();
  Rng rng(DeriveSeed(config.seed, "backbone"));
  FrozenBackbone b;
  b.visual_ = GaussianMatrix(config.hidden_dim, config.input_dim_v,
                             1.0 / std::sqrt(double(config.input_dim_v)), rng);
  b.text_ = GaussianMatrix(config.hidden_dim, config.input_dim_t,
                           1.0 / std::sqrt(double(config.input_dim_t)), rng);
  return b;
}

ParamVector InitialParams(std::shared_ptr<const ParamLayout> layout,
                          std::uint64_t seed) {
  ParamVector w = ParamVector::Zeros(layout);
  const ModelConfig& cfg = layout->config();
  const std::size_t h = cfg.hidden_dim;
  const std::size_t r = cfg.lora_rank;
  const std::size_t m = cfg.embed_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(h));
  Rng rng(seed);
  for (std::size_t b = 0; b < layout->block_count(); ++b) {
    const BlockSpec& spec = layout->blocks()[b];
    std::span<double> v = w.block(b);
    if (spec.kind == BlockKind::kAdapter) {
      for (std::size_t k = h * r; k < 2 * h * r; ++k) {
        v[k] = scale * StandardNormal(rng);
      }
    } else {
      for (std::size_t k = 0; k < h * h; ++k) v[k] = scale * StandardNormal(rng);
      for (std::size_t k = h * h + h; k < h * h + h + m * h; ++k) {
        v[k] = scale * StandardNormal(rng);
      }
    }
  }
  return w;
}

PairBatch PairBatch::Rows(std::span<const std::size_t> positions) const {
  PairBatch out;
  out.visual = SelectRows(visual, positions);
  out.text = SelectRows(text, positions);
  out.pair_ids.reserve(positions.size());
  for (std::size_t p : positions) out.pair_ids.push_back(pair_ids.at(p));
  return out;
}

Matrix AdapterUp(const ParamVector& params, std::size_t block) {
  const ModelConfig& cfg = params.layout().config();
  return BlockMatrix(params.block(block), 0, cfg.hidden_dim, cfg.lora_rank);
}

Matrix AdapterDown(const ParamVector& params, std::size_t block) {
  const ModelConfig& cfg = params.layout().config();
  return BlockMatrix(params.block(block), cfg.hidden_dim * cfg.lora_rank,
                     cfg.lora_rank, cfg.hidden_dim);
}

EmbeddingBatch Encode(const FrozenBackbone& backbone, const ParamVector& params,
                      const Matrix& inputs, Modality modality,
                      std::span<const std::size_t> pair_ids) {
  EmbeddingBatch out;
  out.z = Forward(backbone, params, inputs, modality).z;
  if (pair_ids.empty()) {
    out.pair_ids.resize(inputs.rows());
    std::iota(out.pair_ids.begin(), out.pair_ids.end(), std::size_t{0});
  } else {
    out.pair_ids.assign(pair_ids.begin(), pair_ids.end());
  }
  return out;
}

double InfoNceLoss(const EmbeddingBatch& zv, const EmbeddingBatch& zt,
                   double temperature) {
  if (zv.z.rows() == 0) throw UsageError("infonce: empty batch");
  if (zv.z.rows() != zt.z.rows() || zv.pair_ids != zt.pair_ids) {
    throw UsageError(fmt::format("infonce: unaligned batches ({} vs {} rows)",
                                 zv.z.rows(), zt.z.rows()));
  }
  if (!(temperature > 0.0)) throw UsageError("infonce: temperature must be > 0");
  return InfoNceCore(zv.z, zt.z, temperature, nullptr, nullptr);
}

ParamVector InfoNceGradient(const FrozenBackbone& backbone,
                            const ParamVector& params, const PairBatch& batch,
                            double* loss) {
  ParamVector grad = ParamVector::Zeros(params.layout_ptr());
  if (batch.size() == 0) throw UsageError("infonce: empty batch");
  if (batch.size() == 1) {
    if (loss != nullptr) *loss = 0.0;
    return grad;
  }
  const double temperature = params.layout().config().temperature;
  ForwardCache cv = Forward(backbone, params, batch.visual, Modality::kVisual);
  ForwardCache ct = Forward(backbone, params, batch.text, Modality::kText);
  Matrix dzv;
  Matrix dzt;
  const double value = InfoNceCore(cv.z, ct.z, temperature, &dzv, &dzt);
  if (loss != nullptr) *loss = value;
  Backward(cv, dzv, grad);
  Backward(ct, dzt, grad);
  return grad;
}

double AlignmentLoss(const FrozenBackbone& backbone, const ParamVector& params,
                     const PairBatch& batch) {
  EmbeddingBatch zv = Encode(backbone, params, batch.visual, Modality::kVisual,
                             batch.pair_ids);
  EmbeddingBatch zt =
      Encode(backbone, params, batch.text, Modality::kText, batch.pair_ids);
  return InfoNceLoss(zv, zt, params.layout().config().temperature);
}

ForgetLock::ForgetLock(ParamVector reference, BlockBases bases)
    : reference_(std::move(reference)), bases_(std::move(bases)) {
  const ParamLayout& layout = reference_.layout();
  if (bases_.size() != layout.block_count()) {
    throw UsageError(fmt::format("forget lock: {} bases for {} blocks",
                                 bases_.size(), layout.block_count()));
  }
  for (std::size_t b = 0; b < bases_.size(); ++b) {
    const Matrix& basis = bases_[b];
    if (basis.cols() == 0) continue;
    if (basis.rows() != layout.blocks()[b].size) {
      throw UsageError(fmt::format(
          "forget lock: basis for {} has {} rows, block has {}",
          layout.blocks()[b].Label(), basis.rows(), layout.blocks()[b].size));
    }
    const double err = OrthonormalityError(basis);
    if (err > 1e-8) {
      throw UsageError(fmt::format(
          "forget lock: basis for {} is not orthonormal (error {:.3e})",
          layout.blocks()[b].Label(), err));
    }
  }
}

ForgetLock::Value ForgetLock::Evaluate(const ParamVector& params) const {
  params.RequireCompatible(reference_, "forget lock");
  Value out{0.0, ParamVector::Zeros(params.layout_ptr())};
  for (std::size_t b = 0; b < bases_.size(); ++b) {
    const Matrix& basis = bases_[b];
    if (basis.cols() == 0) continue;
    std::span<const double> w = params.block(b);
    std::span<const double> ref = reference_.block(b);
    std::vector<double> diff(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) diff[i] = w[i] - ref[i];
    std::vector<double> coeff = TransposeMatVec(basis, diff);
    out.value += Dot(coeff, coeff);
    std::vector<double> back = MatVec(basis, coeff);
    std::span<double> g = out.grad.block(b);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * back[i];
  }
  return out;
}

ForgetLock::Value EvaluateForgetLock(const ParamVector& params,
                                     const ParamVector& reference,
                                     const BlockBases& bases) {
  params.RequireCompatible(reference, "forget lock");
  return ForgetLock(reference, bases).Evaluate(params);
}

LocalSgdResult LocalSgd(const FrozenBackbone& backbone,
                        const ParamVector& start, const PairBatch& shard,
                        const Objective& objective, const SgdOptions& options,
                        const StepObserver& observer) {
  if (shard.size() == 0) throw UsageError("local_sgd: empty shard");
  if (objective.kind == ObjectiveKind::kAlignmentWithLock &&
      objective.lock == nullptr) {
    throw UsageError("local_sgd: lock objective without a lock");
  }
  std::size_t batch_size = options.batch_size;
  if (batch_size == 0 || batch_size > shard.size()) {
    spdlog::warn("local_sgd: batch size {} clamped to shard size {}",
                 batch_size, shard.size());
    batch_size = shard.size();
  }
  const bool full_batch = batch_size == shard.size();
  LocalSgdResult result;
  result.params = start;
  Rng rng(options.seed);
  std::vector<std::size_t> order(shard.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = shard.size();
  PairBatch full;
  if (full_batch) full = shard;
  for (std::size_t step = 0; step < options.steps; ++step) {
    PairBatch batch;
    if (!full_batch) {
      if (cursor + batch_size > order.size()) {
        Shuffle(order, rng);
        cursor = 0;
      }
      batch = shard.Rows(std::span<const std::size_t>(order).subspan(
          cursor, batch_size));
      cursor += batch_size;
    }
    const PairBatch& b = full_batch ? full : batch;
    ParamVector grad = InfoNceGradient(backbone, result.params, b);
    if (observer) observer(step, result.params, grad);
    switch (objective.kind) {
      case ObjectiveKind::kAlignment:
        break;
      case ObjectiveKind::kNegatedAlignment:
        grad *= -1.0;
        break;
      case ObjectiveKind::kAlignmentWithLock:
        if (objective.lock_strength != 0.0) {
          grad.Axpy(objective.lock_strength,
                    objective.lock->Evaluate(result.params).grad);
        }
        break;
    }
    result.params.Axpy(-options.learning_rate, grad);
  }
  for (double x : result.params.flat()) {
    if (!std::isfinite(x)) throw NumericError("local_sgd: non-finite parameters");
  }
  result.delta = result.params - start;
  const ParamLayout& layout = start.layout();
  for (std::size_t b = 0; b < layout.block_count(); ++b) {
    if (layout.blocks()[b].kind != BlockKind::kAdapter) continue;
    result.adapter_product_delta.push_back(
        Subtract(Multiply(AdapterUp(result.params, b), AdapterDown(result.params, b)),
                 Multiply(AdapterUp(start, b), AdapterDown(start, b))));
  }
  return result;
}

std::vector<double> PairSimilarities(const FrozenBackbone& backbone,
                                     const ParamVector& params,
                                     const PairBatch& pairs) {
  Matrix zv = Forward(backbone, params, pairs.visual, Modality::kVisual).z;
  Matrix zt = Forward(backbone, params, pairs.text, Modality::kText).z;
  std::vector<double> out(zv.rows(), 0.0);
  for (std::size_t i = 0; i < zv.rows(); ++i) {
    for (std::size_t c = 0; c < zv.cols(); ++c) out[i] += zv(i, c) * zt(i, c);
  }
  return out;
}

}  // namespace fedexcise
