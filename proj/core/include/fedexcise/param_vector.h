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

#ifndef FEDEXCISE_PARAM_VECTOR_H_
#define FEDEXCISE_PARAM_VECTOR_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedexcise/numerics.h"

namespace fedexcise {

enum class Modality : int { kVisual = 0, kText = 1 };
inline constexpr Modality kModalities[] = {Modality::kVisual, Modality::kText};
std::string_view ModalityName(Modality m);  // "v" / "t"

enum class BlockKind { kAdapter, kProjector };

struct ModelConfig {
  std::size_t input_dim_v = 16;
  std::size_t input_dim_t = 16;
  std::size_t hidden_dim = 32;
  std::size_t embed_dim = 16;
  std::size_t lora_rank = 4;
  std::size_t adapter_blocks = 1;  // per modality
  double temperature = 0.1;
  std::uint64_t seed = 0;

  std::size_t input_dim(Modality m) const {
    return m == Modality::kVisual ? input_dim_v : input_dim_t;
  }
  // Throws UsageError when an invariant is violated.
  void Validate() const;
  // Hash of the fields that determine the parameter layout and backbone.
  std::uint64_t LayoutHash() const;
};

// One trainable group. Adapter blocks hold [vec(B) (hidden x rank);
// vec(A) (rank x hidden)]; projector blocks hold [vec(W1) (hidden x hidden);
// b1; vec(W2) (embed x hidden); b2], all column-major.
struct BlockSpec {
  Modality modality;
  BlockKind kind;
  std::size_t index;  // adapter position within the modality; 0 for projector
  std::string name;   // "adapter0", ..., "projector"
  std::size_t offset;
  std::size_t size;

  std::string Label() const;  // e.g. "v/adapter0"
};

class ParamLayout {
 public:
  static std::shared_ptr<const ParamLayout> Build(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<BlockSpec>& blocks() const { return blocks_; }
  std::size_t block_count() const { return blocks_.size(); }
  std::size_t dim() const { return dim_; }
  std::uint64_t hash() const { return hash_; }
  // Index of the block with this label; throws UsageError if absent.
  std::size_t Find(Modality m, std::string_view name) const;

 private:
  ModelConfig config_;
  std::vector<BlockSpec> blocks_;
  std::size_t dim_ = 0;
  std::uint64_t hash_ = 0;
};

// Trainable model state (or a gradient / displacement in the same layout).
// Two vectors combine only when built from the same layout hash.
class ParamVector {
 public:
  ParamVector() = default;
  static ParamVector Zeros(std::shared_ptr<const ParamLayout> layout);

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const {
    return layout_;
  }
  std::size_t dim() const { return values_.size(); }

  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }
  std::span<double> block(std::size_t b);
  std::span<const double> block(std::size_t b) const;

  bool CompatibleWith(const ParamVector& other) const;
  // Throws UsageError naming `context` if layouts differ.
  void RequireCompatible(const ParamVector& other,
                         std::string_view context) const;

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator-=(const ParamVector& other);
  ParamVector& operator*=(double s);
  // this += s * x
  void Axpy(double s, const ParamVector& x);

  friend ParamVector operator+(ParamVector a, const ParamVector& b) {
    return a += b;
  }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) {
    return a -= b;
  }
  friend bool operator==(const ParamVector& a, const ParamVector& b);

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<double> values_;
};

double Norm(const ParamVector& v);

// Per-block basis matrices indexed like ParamLayout::blocks(). A block with
// an empty (0-column) basis is unconstrained.
using BlockBases = std::vector<Matrix>;

}  // namespace fedexcise

#endif  // FEDEXCISE_PARAM_VECTOR_H_
