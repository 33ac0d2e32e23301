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

#ifndef FEDEXCISE_RNG_H_
#define FEDEXCISE_RNG_H_

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fedexcise {

using Rng = std::mt19937_64;

// Derives an independent stream seed from a parent seed and a label, so that
// e.g. the data stream and the federation stream never share state.
std::uint64_t DeriveSeed(std::uint64_t parent, std::string_view label);
std::uint64_t DeriveSeed(std::uint64_t parent, std::string_view label,
                         std::uint64_t index);

// 64-bit FNV-1a over raw bytes.
std::uint64_t Fnv1a(std::string_view bytes);

double StandardNormal(Rng& rng);

// Fisher-Yates with the engine's raw output, independent of libstdc++'s
// shuffle implementation details.
template <typename T>
void Shuffle(std::vector<T>& values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(values[i - 1], values[j]);
  }
}

// Draws from Dirichlet(concentration * 1_k).
std::vector<double> SampleDirichlet(std::size_t k, double concentration,
                                    Rng& rng);

}  // namespace fedexcise

#endif  // FEDEXCISE_RNG_H_
