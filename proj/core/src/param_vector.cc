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

#include "fedexcise/param_vector.h"

#include <cmath>

#include "fedexcise/errors.h"
#include "fedexcise/rng.h"
#include "spdlog/fmt/fmt.h"

namespace fedexcise {

std::string_view ModalityName(Modality m) {
  return m == Modality::kVisual ? "v" : "t";
}

void ModelConfig::Validate() const {
  if (lora_rank < 1 || lora_rank >= hidden_dim) {
    throw UsageError(fmt::format(
        "model: lora_rank must satisfy 1 <= rank < hidden_dim (got {} vs {})",
        lora_rank, hidden_dim));
  }
  if (!(temperature > 0.0)) throw UsageError("model: temperature must be > 0");
  if (embed_dim < 2) throw UsageError("model: embed_dim must be >= 2");
  if (input_dim_v == 0 || input_dim_t == 0 || hidden_dim == 0) {
    throw UsageError("model: dimensions must be positive");
  }
}

std::uint64_t ModelConfig::LayoutHash() const {
  return Fnv1a(fmt::format("v1|{}|{}|{}|{}|{}|{}", input_dim_v, input_dim_t,
                           hidden_dim, embed_dim, lora_rank, adapter_blocks));
}

std::string BlockSpec::Label() const {
  return fmt::format("{}/{}", ModalityName(modality), name);
}

std::shared_ptr<const ParamLayout> ParamLayout::Build(
    const ModelConfig& config) {
  config.Validate();
  auto layout = std::make_shared<ParamLayout>();
  layout->config_ = config;
  const std::size_t h = config.hidden_dim;
  const std::size_t r = config.lora_rank;
  const std::size_t m = config.embed_dim;
  std::size_t offset = 0;
  for (Modality mod : kModalities) {
    for (std::size_t a = 0; a < config.adapter_blocks; ++a) {
      const std::size_t size = 2 * h * r;
      layout->blocks_.push_back({mod, BlockKind::kAdapter, a,
                                 fmt::format("adapter{}", a), offset, size});
      offset += size;
    }
    const std::size_t size = h * h + h + m * h + m;
    layout->blocks_.push_back(
        {mod, BlockKind::kProjector, 0, "projector", offset, size});
    offset += size;
  }
  layout->dim_ = offset;
  layout->hash_ = config.LayoutHash();
  return layout;
}

std::size_t ParamLayout::Find(Modality m, std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].modality == m && blocks_[i].name == name) return i;
  }
  throw UsageError(
      fmt::format("layout: no block {}/{}", ModalityName(m), name));
}

ParamVector ParamVector::Zeros(std::shared_ptr<const ParamLayout> layout) {
  ParamVector v;
  v.values_.assign(layout->dim(), 0.0);
  v.layout_ = std::move(layout);
  return v;
}

std::span<double> ParamVector::block(std::size_t b) {
  const BlockSpec& s = layout_->blocks().at(b);
  return {values_.data() + s.offset, s.size};
}

std::span<const double> ParamVector::block(std::size_t b) const {
  const BlockSpec& s = layout_->blocks().at(b);
  return {values_.data() + s.offset, s.size};
}

bool ParamVector::CompatibleWith(const ParamVector& other) const {
  if (!layout_ || !other.layout_) return !layout_ && !other.layout_;
  return layout_->hash() == other.layout_->hash() &&
         values_.size() == other.values_.size();
}

void ParamVector::RequireCompatible(const ParamVector& other,
                                    std::string_view context) const {
  if (!CompatibleWith(other)) {
    throw UsageError(fmt::format(
        "{}: incompatible parameter layouts ({} vs {} coordinates)", context,
        values_.size(), other.values_.size()));
  }
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
  RequireCompatible(other, "param add");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& other) {
  RequireCompatible(other, "param subtract");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double s) {
  for (double& x : values_) x *= s;
  return *this;
}

void ParamVector::Axpy(double s, const ParamVector& x) {
  RequireCompatible(x, "param axpy");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * x.values_[i];
}

bool operator==(const ParamVector& a, const ParamVector& b) {
  return a.CompatibleWith(b) && a.values_ == b.values_;
}

double Norm(const ParamVector& v) { return Norm(v.flat()); }

}  // namespace fedexcise
