#pragma once

// Operator-splitting solver for the layer programs
//
//   min ||u||_1   s.t.  ||A_Omega^T u - y_Omega|| <= eps,
//                        A_Omega_c^T u <= c,          A = kron(I_M, X).
//
// Three-block consensus splitting: a copy r of u carrying the l1 prox, the
// active predictions z = A_Omega^T u projected onto the eps-ball around
// y_Omega (a point projection when eps = 0), and the inactive predictions
// t = A_Omega_c^T u clipped to t <= c, all tied together by an augmented-
// Lagrangian penalty rho. Because every block shares the same rho, the
// u-update reduces to the rho-free normal equations
//
//   (I_N + X X^T) U = (R - Lr) + X (T - Lt)^T
//
// which factor once per problem (one N x N Cholesky, reused for all M
// columns and all iterations). rho is rescaled by factors of 2 whenever the
// primal/dual residual ratio exceeds 10, on a slow cadence after a burn-in,
// clamped to [rho_min, rho_max]; since the u-update does not depend on rho
// this costs nothing.
//
// The iteration runs on an internally rescaled copy of the program (inputs
// and targets brought to unit root-mean-square independently; solutions map
// back exactly through a scalar), so tolerances and the default rho mean the
// same thing whether a caller's signals sit at 1e2 or 1e-4.
//
// The nonnegative sign-split form (u~ = [u+; -u-] >= 0, objective 1^T u~) is
// wired up as an alternative backend for cross-checking: identical loop with
// X replaced by the stack [X; -X] and the soft-threshold replaced by the
// shifted clip max(w - 1/rho, 0).
//
// Iterates are a deterministic function of (problem, options): fixed
// iteration order, no threads, no randomness.

#include <optional>

#include "relutrim/constraints.hpp"

namespace relutrim {

enum class SolverBackend {
  kDirect,  // u-form, the production path
  kSplit,   // u~ >= 0 form, cross-check path
};

struct SolverOptions {
  double abs_tol = 1e-8;
  double rel_tol = 1e-6;
  // Iterations are cheap (one triangular backsolve and two thin gemms);
  // slacked cascade programs routinely take a few tens of thousands.
  Index max_iters = 200000;
  double rho = 1.0;  // penalty (initial value when adapt_rho is on)
  double rho_min = 1e-4;
  double rho_max = 1e4;
  // Residual-balancing rho rescaling (x2 / /2 at primal/dual ratio > 10,
  // within [rho_min, rho_max]). Off by default: the internal data rescaling
  // already puts rho = 1 in the right regime, and warm-started runs go
  // through a long healthy dual-dominant phase that the ratio trigger
  // misreads as a bad penalty, halving rho into the floor.
  bool adapt_rho = false;
  // Over-relaxation factor in [1, 2); 1 disables. Cuts the slow tail on
  // programs whose inequality constraints are tight at the optimum.
  double over_relax = 1.7;
  // Reporting slack callers use when re-checking feasibility of hard-
  // thresholded weights; the solver itself converges to abs_tol.
  double feasibility_slack = 1e-6;
  double zero_tol = 1e-8;
  SolverBackend backend = SolverBackend::kDirect;
};

struct SolverReport {
  Index iterations = 0;
  // Set when the returned point satisfies both feasibility residuals at
  // abs_tol and one optimality signal holds: the usual primal/dual residual
  // thresholds, a KKT misfit below rel_tol, or an objective that has stopped
  // moving at rel_tol scale over the recent checks. The last route matters on
  // programs whose inequality bounds are exactly tight at the optimum; there
  // the duals chatter forever while the iterate is long done.
  bool converged = false;
  bool infeasible_suspected = false;
  double objective = 0.0;       // ||u||_1 at the returned point
  double quad_residual = 0.0;   // max(0, ||A_Omega^T u - y_Omega|| - eps)
  double ineq_violation = 0.0;  // max(0, max_j (A_Omega_c^T u - c)_j)
  // The remaining diagnostics are read off the internally rescaled program
  // (objective, quad_residual and ineq_violation above are in caller units).
  double stationarity = 0.0;  // from the splitting duals, inf-norm
  double complementarity = 0.0;
  double primal_residual = 0.0;  // final consensus residuals
  double dual_residual = 0.0;
  double rho_final = 0.0;
};

struct LayerSolution {
  Matrix u;  // N x M, exact zeros where the prox zeroed a weight
  SolverReport report;
};

LayerSolution solve_layer(const QcqpData& q, const SolverOptions& opts = {},
                          const Matrix* warm_start = nullptr);

struct NeuronSolution {
  Vector w;
  SolverReport report;
};

// Same machinery on the M = 1 slice. An all-inactive row with nonnegative
// bounds short-circuits to w = 0 (feasible and l1-minimal by inspection).
NeuronSolution solve_neuron(const NeuronSubproblem& sub,
                            const SolverOptions& opts = {});

// KKT residual bundle for a candidate point of a layer program. Multipliers
// are not taken from any solver: they are re-estimated for the candidate by
// minimizing the stationarity misfit over the dual cone (projected-gradient
// least squares on a handful of variables), so the bundle is a solver-
// independent optimality check. All residuals ~ 0 iff the candidate is
// optimal. Intended for small instances; the multiplier fit materializes one
// column per near-active constraint.
struct KktResiduals {
  double stationarity = 0.0;     // inf-norm subgradient misfit
  double complementarity = 0.0;  // sum of multiplier * slack products
  double quad_residual = 0.0;    // primal feasibility, ball part
  double ineq_violation = 0.0;   // primal feasibility, linear part
  double eta = 0.0;              // fitted multiplier of the squared ball
};

KktResiduals kkt_residuals(const QcqpData& q, const Matrix& u);

// Exact reference solver for tiny instances; see oracle.hpp.

}  // namespace relutrim
