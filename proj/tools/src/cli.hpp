// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace segdistill::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDomain = 3;

/// Runs one command line (args excludes the program name). Usage and config
/// errors return 2, domain errors (bad data, incompatible model, ...) 3.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace segdistill::cli
