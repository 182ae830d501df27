#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace evoforge {

/// Runs one `evoforge` command line (without the program name). Human output
/// goes to `out`; failures go to `err` as one JSON line {code, message, detail}.
/// Returns 0 on success, 1 for validation-type failures, 2 for corruption,
/// transport exhaustion and lock contention.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace evoforge
