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

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <utility>
#include <vector>

#include "fedexcise/errors.h"
#include "spdlog/fmt/fmt.h"

namespace fedexcise {
namespace {

static_assert(std::endian::native == std::endian::little,
              "artifact format assumes a little-endian host");

constexpr char kParamsMagic[4] = {'F', 'X', 'P', 'V'};
constexpr char kHistoryMagic[4] = {'F', 'X', 'G', 'H'};
constexpr char kBasesMagic[4] = {'F', 'X', 'E', 'B'};

class Writer {
 public:
  void Bytes(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void U64(std::uint64_t v) { Bytes(&v, sizeof v); }
  void U32(std::uint32_t v) { Bytes(&v, sizeof v); }
  void Str(std::string_view s) {
    U64(s.size());
    Bytes(s.data(), s.size());
  }
  void Doubles(std::span<const double> v) {
    U64(v.size());
    Bytes(v.data(), v.size() * sizeof(double));
  }
  void Header(const char (&magic)[4], const ParamLayout& layout,
              std::string_view config_hash) {
    Bytes(magic, 4);
    U32(kArtifactVersion);
    U64(layout.hash());
    Str(config_hash);
  }
  void Save(const std::filesystem::path& path) const {
    WriteTextFile(path, std::string_view(buf_.data(), buf_.size()));
  }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path)
      : path_(path), data_(ReadTextFile(path)) {}

  void Bytes(void* p, std::size_t n) {
    if (n > data_.size() - pos_) Fail("truncated file");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint64_t U64() {
    std::uint64_t v;
    Bytes(&v, sizeof v);
    return v;
  }
  std::uint32_t U32() {
    std::uint32_t v;
    Bytes(&v, sizeof v);
    return v;
  }
  std::string Str() {
    const std::uint64_t n = U64();
    if (n > data_.size() - pos_) Fail("truncated string");
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> Doubles() {
    const std::uint64_t n = U64();
    if (n > (data_.size() - pos_) / sizeof(double)) Fail("truncated array");
    std::vector<double> v(n);
    Bytes(v.data(), n * sizeof(double));
    return v;
  }
  void Header(const char (&magic)[4], const ParamLayout& layout,
              std::string_view config_hash) {
    char tag[4];
    Bytes(tag, 4);
    if (std::memcmp(tag, magic, 4) != 0) Fail("wrong file type");
    const std::uint32_t version = U32();
    if (version != kArtifactVersion) {
      Fail(fmt::format("format version {} (expected {})", version,
                       kArtifactVersion));
    }
    const std::uint64_t layout_hash = U64();
    if (layout_hash != layout.hash()) Fail("parameter layout mismatch");
    const std::string hash = Str();
    if (hash != config_hash) {
      Fail(fmt::format("config hash {} (expected {})", hash, config_hash));
    }
  }
  void Finish() {
    if (pos_ != data_.size()) Fail("trailing bytes");
  }
  [[noreturn]] void Fail(const std::string& why) const {
    throw UsageError(fmt::format("{}: {}", path_.string(), why));
  }

 private:
  std::filesystem::path path_;
  std::string data_;
  std::size_t pos_ = 0;
};

void WriteMatrix(Writer& w, const Matrix& m) {
  w.U64(m.rows());
  w.U64(m.cols());
  w.Doubles(m.data());
}

Matrix ReadMatrix(Reader& r) {
  const std::uint64_t rows = r.U64();
  const std::uint64_t cols = r.U64();
  std::vector<double> entries = r.Doubles();
  if (entries.size() != rows * cols) r.Fail("matrix size mismatch");
  return Matrix(rows, cols, std::move(entries));
}

ParamVector ReadVectorBody(Reader& r, std::shared_ptr<const ParamLayout> layout) {
  std::vector<double> values = r.Doubles();
  if (values.size() != layout->dim()) r.Fail("dimension mismatch");
  ParamVector w = ParamVector::Zeros(std::move(layout));
  std::copy(values.begin(), values.end(), w.flat().begin());
  return w;
}

}  // namespace

void WriteParams(const std::filesystem::path& path, const ParamVector& w,
                 std::string_view config_hash) {
  Writer out;
  out.Header(kParamsMagic, w.layout(), config_hash);
  out.Doubles(w.flat());
  out.Save(path);
}

ParamVector ReadParams(const std::filesystem::path& path,
                       std::shared_ptr<const ParamLayout> layout,
                       std::string_view config_hash) {
  Reader in(path);
  in.Header(kParamsMagic, *layout, config_hash);
  ParamVector w = ReadVectorBody(in, std::move(layout));
  in.Finish();
  return w;
}

void WriteHistory(const std::filesystem::path& path, const GradientHistory& h,
                  std::string_view config_hash) {
  const ParamLayout* layout = nullptr;
  for (std::size_t k = 0; k < h.clients() && layout == nullptr; ++k) {
    if (!h.client(k).empty()) layout = &h.client(k).front().delta.layout();
  }
  if (layout == nullptr) throw UsageError("refusing to write an empty history");
  Writer out;
  out.Header(kHistoryMagic, *layout, config_hash);
  out.U64(h.clients());
  for (std::size_t k = 0; k < h.clients(); ++k) {
    out.U64(h.client(k).size());
    for (const HistoryEntry& e : h.client(k)) {
      out.U64(e.round);
      out.Doubles(e.delta.flat());
    }
  }
  out.Save(path);
}

GradientHistory ReadHistory(const std::filesystem::path& path,
                            std::shared_ptr<const ParamLayout> layout,
                            std::string_view config_hash) {
  Reader in(path);
  in.Header(kHistoryMagic, *layout, config_hash);
  GradientHistory h(in.U64());
  for (std::size_t k = 0; k < h.clients(); ++k) {
    const std::uint64_t n = in.U64();
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t round = in.U64();
      h.Append(k, round, ReadVectorBody(in, layout));
    }
  }
  in.Finish();
  return h;
}

void WriteBases(const std::filesystem::path& path, const ExcisionBases& bases,
                std::string_view config_hash) {
  if (!bases.layout) throw UsageError("bases without a layout");
  Writer out;
  out.Header(kBasesMagic, *bases.layout, config_hash);
  out.U64(bases.blocks.size());
  for (const BlockExcision& b : bases.blocks) {
    WriteMatrix(out, b.unique);
    WriteMatrix(out, b.entangled);
    out.Doubles(b.unique_kappa);
    out.Doubles(b.entangled_kappa);
  }
  out.Save(path);
}

ExcisionBases ReadBases(const std::filesystem::path& path,
                        std::shared_ptr<const ParamLayout> layout,
                        std::string_view config_hash) {
  Reader in(path);
  in.Header(kBasesMagic, *layout, config_hash);
  ExcisionBases bases;
  const std::uint64_t n = in.U64();
  if (n != layout->block_count()) in.Fail("block count mismatch");
  for (std::uint64_t b = 0; b < n; ++b) {
    BlockExcision e;
    e.unique = ReadMatrix(in);
    e.entangled = ReadMatrix(in);
    e.unique_kappa = in.Doubles();
    e.entangled_kappa = in.Doubles();
    const std::size_t rows = layout->blocks()[b].size;
    if (e.unique.rows() != rows || e.entangled.rows() != rows) {
      in.Fail(fmt::format("block {} has the wrong row count", b));
    }
    bases.blocks.push_back(std::move(e));
  }
  in.Finish();
  bases.layout = std::move(layout);
  return bases;
}

nlohmann::json LedgerToJson(const CommLedger& ledger) {
  nlohmann::json entries = nlohmann::json::array();
  for (const LedgerEntry& e : ledger.entries()) {
    entries.push_back({{"phase", e.phase},
                       {"round", e.round},
                       {"uplink_mb", e.uplink_mb},
                       {"downlink_mb", e.downlink_mb}});
  }
  return {{"total_mb", ledger.TotalMb()}, {"entries", entries}};
}

CommLedger LedgerFromJson(const nlohmann::json& j) {
  CommLedger ledger;
  try {
    for (const auto& e : j.at("entries")) {
      ledger.Add({e.at("phase").get<std::string>(), e.at("round").get<std::size_t>(),
                  e.at("uplink_mb").get<double>(), e.at("downlink_mb").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(fmt::format("malformed ledger: {}", e.what()));
  }
  return ledger;
}

void WriteTextFile(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError(fmt::format("cannot write {}", tmp.string()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw UsageError(fmt::format("short write to {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

std::string ReadTextFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void WriteJsonFile(const std::filesystem::path& path, const nlohmann::json& j) {
  WriteTextFile(path, j.dump(2) + "\n");
}

nlohmann::json ReadJsonFile(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(ReadTextFile(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace fedexcise
