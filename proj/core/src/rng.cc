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

#include "fedexcise/rng.h"

#include <cstring>
#include <numeric>

namespace fedexcise {
namespace {

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t Fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t DeriveSeed(std::uint64_t parent, std::string_view label) {
  return SplitMix64(parent ^ SplitMix64(Fnv1a(label)));
}

std::uint64_t DeriveSeed(std::uint64_t parent, std::string_view label,
                         std::uint64_t index) {
  return SplitMix64(DeriveSeed(parent, label) + SplitMix64(index + 1));
}

double StandardNormal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

std::vector<double> SampleDirichlet(std::size_t k, double concentration,
                                    Rng& rng) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (double& x : p) {
    x = gamma(rng);
    total += x;
  }
  if (total <= 0.0) {
    // All draws underflowed (tiny concentration); put the mass on one shard.
    std::fill(p.begin(), p.end(), 0.0);
    p[rng() % k] = 1.0;
    return p;
  }
  for (double& x : p) x /= total;
  return p;
}

}  // namespace fedexcise
