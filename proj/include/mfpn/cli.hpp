// SPDX-License-Identifier: Apache-2.0
//
// The `mfpn` command line. Exit codes: 0 success, 1 runtime failure
// (including a failed check), 2 usage error.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mfpn {

/// `args` excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mfpn
