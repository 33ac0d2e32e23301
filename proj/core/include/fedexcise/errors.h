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

#ifndef FEDEXCISE_ERRORS_H_
#define FEDEXCISE_ERRORS_H_

#include <stdexcept>
#include <string>

namespace fedexcise {

// Caller violated a precondition (bad shapes, incompatible layouts, invalid
// configuration). Maps to CLI exit code 1.
class UsageError : public std::invalid_argument {
 public:
  explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

// A numerical routine failed (non-convergence, degenerate embedding,
// non-finite values). Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// A required on-disk artifact is missing. Carries the name of the command
// that produces it.
class MissingArtifactError : public UsageError {
 public:
  MissingArtifactError(const std::string& path, const std::string& producer);
};

}  // namespace fedexcise

#endif  // FEDEXCISE_ERRORS_H_
