#pragma once

#include <iosfwd>

namespace bb {

// Dataset-free correctness sweep: conv/FC conversion equivalence on every
// Table-3 layer shape, permutation orthogonality, Toeplitz expansion
// equivalence, golden parameter counts, and gradient checks. Prints one
// pass/fail line per check; returns the number of failures.
// `inject_conv_fault` deliberately corrupts one conversion to prove the
// equivalence check can fail.
int run_selftest(std::ostream& out, bool inject_conv_fault = false);

}  // namespace bb
