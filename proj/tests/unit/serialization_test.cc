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


#include "fedexcise/serialization.h"

#include <fstream>

#include "fedexcise/errors.h"
#include "gtest/gtest.h"
#include "test_support.h"

namespace fedexcise {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

std::shared_ptr<const ParamLayout> Layout(std::size_t hidden = 6) {
  ModelConfig cfg;
  cfg.input_dim_v = 4;
  cfg.input_dim_t = 4;
  cfg.hidden_dim = hidden;
  cfg.embed_dim = 3;
  cfg.lora_rank = 2;
  return ParamLayout::Build(cfg);
}

TEST(Params, RoundTripIsBitIdentical) {
  TempDir dir;
  const auto layout = Layout();
  Rng rng(1);
  const ParamVector w = testing::GaussianParams(layout, rng);
  WriteParams(dir.path() / "w", w, "abc");
  EXPECT_EQ(ReadParams(dir.path() / "w", layout, "abc"), w);
}

TEST(Params, MismatchesAreUsageErrors) {
  TempDir dir;
  const auto layout = Layout();
  Rng rng(2);
  WriteParams(dir.path() / "w", testing::GaussianParams(layout, rng), "abc");
  EXPECT_THROW(ReadParams(dir.path() / "w", layout, "xyz"), UsageError);
  EXPECT_THROW(ReadParams(dir.path() / "w", Layout(8), "abc"), UsageError);
  EXPECT_THROW(ReadParams(dir.path() / "missing", layout, "abc"), UsageError);
}

TEST(Params, TruncatedFileIsUsageError) {
  TempDir dir;
  const auto layout = Layout();
  WriteParams(dir.path() / "w", ParamVector::Zeros(layout), "h");
  fs::resize_file(dir.path() / "w", fs::file_size(dir.path() / "w") - 8);
  EXPECT_THROW(ReadParams(dir.path() / "w", layout, "h"), UsageError);
}

TEST(Params, WrongArtifactKindIsUsageError) {
  TempDir dir;
  const auto layout = Layout();
  GradientHistory h(2);
  h.Append(0, 0, ParamVector::Zeros(layout));
  WriteHistory(dir.path() / "h", h, "x");
  EXPECT_THROW(ReadParams(dir.path() / "h", layout, "x"), UsageError);
}

TEST(History, RoundTrip) {
  TempDir dir;
  const auto layout = Layout();
  Rng rng(3);
  GradientHistory h(3);
  h.Append(0, 0, testing::GaussianParams(layout, rng));
  h.Append(0, 1, testing::GaussianParams(layout, rng));
  h.Append(2, 1, testing::GaussianParams(layout, rng));
  WriteHistory(dir.path() / "h", h, "k");
  const GradientHistory back = ReadHistory(dir.path() / "h", layout, "k");
  ASSERT_EQ(back.clients(), 3u);
  EXPECT_EQ(back.client(0).size(), 2u);
  EXPECT_TRUE(back.client(1).empty());
  EXPECT_EQ(back.client(2)[0].round, 1u);
  EXPECT_EQ(back.client(2)[0].delta, h.client(2)[0].delta);
}

TEST(History, EmptyHistoryIsRejected) {
  TempDir dir;
  EXPECT_THROW(WriteHistory(dir.path() / "h", GradientHistory(2), "k"), UsageError);
}

TEST(Bases, RoundTrip) {
  TempDir dir;
  const auto layout = Layout();
  Rng rng(4);
  ExcisionBases bases;
  bases.layout = layout;
  for (const BlockSpec& b : layout->blocks()) {
    BlockExcision e;
    e.unique = OrthonormalColumns(testing::GaussianMatrix(b.size, 2, rng), 1e-10);
    e.entangled = Matrix(b.size, 0);
    e.unique_kappa = {0.1, 0.2};
    bases.blocks.push_back(e);
  }
  WriteBases(dir.path() / "b", bases, "k");
  const ExcisionBases back = ReadBases(dir.path() / "b", layout, "k");
  ASSERT_EQ(back.blocks.size(), bases.blocks.size());
  for (std::size_t b = 0; b < bases.blocks.size(); ++b) {
    EXPECT_EQ(testing::Values(back.blocks[b].unique), testing::Values(bases.blocks[b].unique));
    EXPECT_EQ(back.blocks[b].unique_kappa, bases.blocks[b].unique_kappa);
  }
}

TEST(Ledger, JsonRoundTrip) {
  CommLedger l;
  l.Add({"train", 1, 0.5, 0.25});
  l.Add({"bases", 0, 0.0, 1.0});
  const CommLedger back = LedgerFromJson(LedgerToJson(l));
  ASSERT_EQ(back.entries().size(), 2u);
  EXPECT_EQ(back.entries()[1].phase, "bases");
  EXPECT_DOUBLE_EQ(back.TotalMb(), l.TotalMb());
}

TEST(TextFiles, CreatesParentsAndReplacesAtomically) {
  TempDir dir;
  const fs::path p = dir.path() / "a" / "b" / "c.txt";
  WriteTextFile(p, "one");
  WriteTextFile(p, "two");
  EXPECT_EQ(ReadTextFile(p), "two");
  EXPECT_FALSE(fs::exists(p.string() + ".tmp"));
  WriteJsonFile(dir.path() / "j.json", nlohmann::json{{"k", 1}});
  EXPECT_EQ(ReadJsonFile(dir.path() / "j.json").at("k"), 1);
}

}  // namespace
}  // namespace fedexcise
