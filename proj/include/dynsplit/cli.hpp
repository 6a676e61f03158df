// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace dynsplit {

/// Entry point of the `dynsplit` tool. Returns 0 on success, 2 on usage errors, 1 on runtime errors.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dynsplit
