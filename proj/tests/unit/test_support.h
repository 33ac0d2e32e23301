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


#ifndef FEDEXCISE_TESTS_TEST_SUPPORT_H_
#define FEDEXCISE_TESTS_TEST_SUPPORT_H_

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fedexcise/experiment.h"
#include "fedexcise/numerics.h"
#include "fedexcise/param_vector.h"
#include "fedexcise/rng.h"

namespace fedexcise::testing {

// A federation small enough for a full pipeline in about a second.
inline ExperimentConfig TinyConfig() {
  ExperimentConfig cfg;
  cfg.model.input_dim_v = 6;
  cfg.model.input_dim_t = 6;
  cfg.model.hidden_dim = 8;
  cfg.model.embed_dim = 4;
  cfg.model.lora_rank = 2;
  cfg.data.n_pairs = 240;
  cfg.data.holdout_pairs = 60;
  cfg.data.n_concepts = 6;
  cfg.data.pseudo_classes = 6;
  cfg.data.latent_dim = 4;
  cfg.federation.clients = 4;
  cfg.federation.rounds = 3;
  cfg.federation.local_steps = 3;
  cfg.federation.batch_size = 16;
  cfg.plan.excision_rounds = 1;
  cfg.plan.stabilization_rounds = 1;
  cfg.plan.local_steps = 3;
  cfg.plan.batch_size = 16;
  cfg.ascent.steps = 2;
  cfg.ascent.then_rounds = 1;
  cfg.eval.pool_size = 40;
  cfg.eval.negatives = 16;
  cfg.eval.mia.shadows = 2;
  cfg.seeds = {1};
  cfg.Validate();
  return cfg;
}

inline std::vector<double> Values(const Matrix& m) {
  return {m.data().begin(), m.data().end()};
}

inline Matrix GaussianMatrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = StandardNormal(rng);
  return m;
}

inline ParamVector GaussianParams(const std::shared_ptr<const ParamLayout>& layout,
                                  Rng& rng, double scale = 1.0) {
  ParamVector w = ParamVector::Zeros(layout);
  for (double& x : w.flat()) x = scale * StandardNormal(rng);
  return w;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline TempDir::TempDir() {
  static std::uint64_t counter = 0;
  const auto base = std::filesystem::temp_directory_path();
  std::random_device rd;
  do {
    path_ = base / ("fedexcise-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
  } while (std::filesystem::exists(path_));
  std::filesystem::create_directories(path_);
}

inline TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace fedexcise::testing

#endif  // FEDEXCISE_TESTS_TEST_SUPPORT_H_
