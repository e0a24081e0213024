#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace loramerge {

// Runs one CLI subcommand. Exit codes: 0 success, 1 domain error, 2 usage
// error; failures emit a single machine-readable JSON line on err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace loramerge
