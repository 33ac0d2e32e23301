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

#ifndef FEDEXCISE_SERIALIZATION_H_
#define FEDEXCISE_SERIALIZATION_H_

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include "fedexcise/federation.h"
#include "fedexcise/gsd.h"
#include "fedexcise/param_vector.h"
#include "nlohmann/json.hpp"

namespace fedexcise {

// Binary artifacts carry a magic tag, a format version, the layout hash and
// the config hash of the run that produced them. Readers reject any mismatch.
inline constexpr std::uint32_t kArtifactVersion = 1;

void WriteParams(const std::filesystem::path& path, const ParamVector& w,
                 std::string_view config_hash);
ParamVector ReadParams(const std::filesystem::path& path,
                       std::shared_ptr<const ParamLayout> layout,
                       std::string_view config_hash);

void WriteHistory(const std::filesystem::path& path, const GradientHistory& h,
                  std::string_view config_hash);
GradientHistory ReadHistory(const std::filesystem::path& path,
                            std::shared_ptr<const ParamLayout> layout,
                            std::string_view config_hash);

void WriteBases(const std::filesystem::path& path, const ExcisionBases& bases,
                std::string_view config_hash);
ExcisionBases ReadBases(const std::filesystem::path& path,
                        std::shared_ptr<const ParamLayout> layout,
                        std::string_view config_hash);

nlohmann::json LedgerToJson(const CommLedger& ledger);
CommLedger LedgerFromJson(const nlohmann::json& j);

// Writes to a sibling temp file and renames, so readers never see a torn file.
void WriteTextFile(const std::filesystem::path& path, std::string_view text);
std::string ReadTextFile(const std::filesystem::path& path);
void WriteJsonFile(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json ReadJsonFile(const std::filesystem::path& path);

}  // namespace fedexcise

#endif  // FEDEXCISE_SERIALIZATION_H_
