#pragma once

#include <ostream>

namespace ptad {

// Runs the oracle and algebraic-identity suites, printing one line per
// property with its measured error. Returns the number of failures.
int run_selftest(std::ostream& out);

}  // namespace ptad
