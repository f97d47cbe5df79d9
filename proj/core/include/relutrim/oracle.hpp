#pragma once

// Exact reference solver for tiny layer programs, used to check the
// splitting solver. Deliberately shares nothing with it beyond the problem
// container:
//
//   eps = 0   the program is an LP after the sign split (equality rows from
//             the active set, slack rows from the inactive set); solved by a
//             dense two-phase simplex with Bland's rule, exact to pivot
//             arithmetic.
//   eps > 0   log-barrier interior point on the split form with a phase-I
//             start; the duality gap m/t certifies the objective to ~1e-10.
//
// Infeasibility comes out as a certificate either way (positive phase-1
// optimum, or an unconstrained least-squares misfit already above eps).

#include "relutrim/constraints.hpp"

namespace relutrim {

struct OracleResult {
  Matrix u;  // N x M
  double objective = 0.0;
  bool feasible = true;
  double gap = 0.0;  // certified optimality gap (interior-point path)
};

// Tiny instances only: throws std::invalid_argument when N*M > 8 or P > 12.
OracleResult oracle_solve_tiny(const QcqpData& q);

}  // namespace relutrim
