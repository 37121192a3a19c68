#pragma once

namespace trireid {

/// Built-in oracle suite: every loss, the ranking metrics, and the core
/// tensor operations are recomputed with plain loops and compared against
/// the production path. Prints one [PASS]/[FAIL] line per property and
/// returns true when all of them passed.
bool run_selftest();

}  // namespace trireid
