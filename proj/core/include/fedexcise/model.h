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

#ifndef FEDEXCISE_MODEL_H_
#define FEDEXCISE_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fedexcise/numerics.h"
#include "fedexcise/param_vector.h"

namespace fedexcise {

// Fixed random linear maps input_dim -> hidden_dim, one per modality, with
// entries ~ N(0, 1/input_dim).
class FrozenBackbone {
 public:
  static FrozenBackbone Create(const ModelConfig& config);

  // hidden_dim x input_dim
  const Matrix& map(Modality m) const {
    return m == Modality::kVisual ? visual_ : text_;
  }

 private:
  Matrix visual_;
  Matrix text_;
};

// Adapter factors zero-initialized on the up side, so the initial model is
// the bare projector over the backbone.
ParamVector InitialParams(std::shared_ptr<const ParamLayout> layout,
                          std::uint64_t seed);

// Row i of `visual` and row i of `text` form one pair.
struct PairBatch {
  Matrix visual;  // N x input_dim_v
  Matrix text;    // N x input_dim_t
  std::vector<std::size_t> pair_ids;

  std::size_t size() const { return pair_ids.size(); }
  // Pairs at the given row positions.
  PairBatch Rows(std::span<const std::size_t> positions) const;
  const Matrix& inputs(Modality m) const {
    return m == Modality::kVisual ? visual : text;
  }
};

struct EmbeddingBatch {
  Matrix z;  // N x embed_dim, unit rows
  std::vector<std::size_t> pair_ids;
};

EmbeddingBatch Encode(const FrozenBackbone& backbone, const ParamVector& params,
                      const Matrix& inputs, Modality modality,
                      std::span<const std::size_t> pair_ids = {});

// Symmetric InfoNCE over in-batch negatives.
double InfoNceLoss(const EmbeddingBatch& zv, const EmbeddingBatch& zt,
                   double temperature);

// Analytic gradient of the symmetric InfoNCE loss over `batch`. Zero for a
// single pair. Optionally reports the loss value.
ParamVector InfoNceGradient(const FrozenBackbone& backbone,
                            const ParamVector& params, const PairBatch& batch,
                            double* loss = nullptr);

double AlignmentLoss(const FrozenBackbone& backbone, const ParamVector& params,
                     const PairBatch& batch);

// Quadratic penalty sum_b ||B_b^T (w_b - ref_b)||^2 on per-block bases.
class ForgetLock {
 public:
  // Throws UsageError if a basis is not orthonormal or does not match the
  // block dimension.
  ForgetLock(ParamVector reference, BlockBases bases);

  struct Value {
    double value;
    ParamVector grad;
  };
  Value Evaluate(const ParamVector& params) const;

  const ParamVector& reference() const { return reference_; }
  const BlockBases& bases() const { return bases_; }

 private:
  ParamVector reference_;
  BlockBases bases_;
};

ForgetLock::Value EvaluateForgetLock(const ParamVector& params,
                                     const ParamVector& reference,
                                     const BlockBases& bases);

enum class ObjectiveKind { kAlignment, kAlignmentWithLock, kNegatedAlignment };

struct Objective {
  ObjectiveKind kind = ObjectiveKind::kAlignment;
  double lock_strength = 0.0;
  const ForgetLock* lock = nullptr;  // required for kAlignmentWithLock
};

struct SgdOptions {
  double learning_rate = 0.05;
  std::size_t steps = 1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

// Called before each step's update with the current parameters and the
// alignment-loss gradient at them.
using StepObserver = std::function<void(
    std::size_t step, const ParamVector& params, const ParamVector& align_grad)>;

struct LocalSgdResult {
  ParamVector params;
  ParamVector delta;
  // Per adapter block (layout order, adapters only): B'A' - BA,
  // hidden x hidden.
  std::vector<Matrix> adapter_product_delta;
};

LocalSgdResult LocalSgd(const FrozenBackbone& backbone,
                        const ParamVector& start, const PairBatch& shard,
                        const Objective& objective, const SgdOptions& options,
                        const StepObserver& observer = {});

// B (hidden x rank) and A (rank x hidden) of one adapter block.
Matrix AdapterUp(const ParamVector& params, std::size_t block);
Matrix AdapterDown(const ParamVector& params, std::size_t block);

// Cosine similarity z_v . z_t of each pair.
std::vector<double> PairSimilarities(const FrozenBackbone& backbone,
                                     const ParamVector& params,
                                     const PairBatch& pairs);

}  // namespace fedexcise

#endif  // FEDEXCISE_MODEL_H_
