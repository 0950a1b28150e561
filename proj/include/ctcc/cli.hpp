// Copyright 2026 The ctc-compress Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <ostream>

namespace ctcc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Environment variable holding extra directories (colon separated) searched
/// for relative config file names.
inline constexpr const char* kConfigPathEnv = "CTCC_CONFIG_PATH";

/// Entry point of the `ctcc` tool; argv[0] is the program name.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ctcc
