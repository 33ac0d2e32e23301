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


#include <cstddef>

#include "benchmark/benchmark.h"
#include "fedexcise/numerics.h"
#include "fedexcise/rng.h"

namespace fedexcise {
namespace {

Matrix Gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = StandardNormal(rng);
  return m;
}

void BM_ThinSvd(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto cols = static_cast<std::size_t>(state.range(1));
  const Matrix a = Gaussian(rows, cols, 1);
  for (auto _ : state) benchmark::DoNotOptimize(ThinSvd(a));
}
// Tall gradient matrices: block size x number of stacked updates.
BENCHMARK(BM_ThinSvd)->Args({64, 16})->Args({1056, 30})->Args({1056, 90})->Args({4096, 30});

void BM_Multiply(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = Gaussian(n, n, 2);
  const Matrix b = Gaussian(n, n, 3);
  for (auto _ : state) benchmark::DoNotOptimize(Multiply(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Multiply)->RangeMultiplier(2)->Range(16, 128);

void BM_OrthonormalColumns(benchmark::State& state) {
  const Matrix a = Gaussian(1056, static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) benchmark::DoNotOptimize(OrthonormalColumns(a, 1e-10));
}
BENCHMARK(BM_OrthonormalColumns)->Arg(8)->Arg(32)->Arg(64);

}  // namespace
}  // namespace fedexcise
