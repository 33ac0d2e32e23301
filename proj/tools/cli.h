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

#ifndef FEDEXCISE_TOOLS_CLI_H_
#define FEDEXCISE_TOOLS_CLI_H_

namespace fedexcise::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitNumeric = 2,
  kExitVerification = 3,
};

// Parses argv, runs the selected subcommand and maps failures to exit codes.
// envp supplies FEDEXCISE_SECTION__KEY overrides.
int Run(int argc, char** argv, char** envp);

}  // namespace fedexcise::cli

#endif  // FEDEXCISE_TOOLS_CLI_H_
