#pragma once

// Exact-recovery lab for the eps = 0 layer program on planted instances:
// draw X Gaussian and an s-sparse w*, observe y = max(X^T w*, 0), and ask
// whether
//
//   min ||w||_1   s.t.  x_p^T w = y_p (p in Omega),  x_p^T w <= 0 (else)
//
// returns exactly w*. Uniqueness is certified per instance by the dual
// vector xi_Omega solving X_{Gamma,Omega} xi = sign(w*_Gamma) in least
// squares: when X_{Gamma,Omega} has full row rank and the off-support image
// X_{Gamma^c,Omega} xi_Omega stays strictly inside the unit cube, w* is the
// unique optimum, so a solver miss at certified instances is a solver bug,
// not bad luck. The sample-count rule P = ceil((15 s + 6) mu log N) makes
// certified instances overwhelmingly likely; the eigen-floor helper spot
// checks the concentration inequality behind that claim.

#include <cstdint>
#include <vector>

#include "relutrim/solver.hpp"

namespace relutrim {

struct PlantedInstance {
  Index n = 0;
  Index p = 0;
  Index s = 0;
  Matrix x;                    // N x P standard Gaussian
  Vector w_star;               // s-sparse, length N
  std::vector<Index> support;  // Gamma, sorted
  Vector y;                    // relu(X^T w_star), length P
  std::vector<Index> omega;    // {p : y_p > 0}, sorted
  std::uint64_t seed = 0;
  // Empty-Omega draws discarded before this instance came out.
  int regenerations = 0;
};

// Support uniform over s-subsets, nonzero magnitudes standard normal
// resampled until |w| >= 0.1 (support recovery at a fixed tolerance is
// meaningless with entries straddling zero). Deterministic per seed; an
// all-inactive draw retries with seed+1, seed+2, ... and counts the retries.
PlantedInstance generate_planted(Index n, Index s, Index p,
                                 std::uint64_t seed);

struct RecoveryOutcome {
  Vector w;
  SolverReport report;
};

// Solves the planted program through the neuron path of the layer solver.
RecoveryOutcome exact_recover(const PlantedInstance& inst,
                              const SolverOptions& opts = {});

struct CertificateReport {
  Vector xi_omega;            // least-squares dual, length |Omega|
  Vector lambda;              // X_{:,Omega} xi_Omega, length N
  double min_eigenvalue = 0.0;  // of X_{Gamma,Omega} X_{Gamma,Omega}^T
  double off_support_inf_norm = 0.0;
  bool full_rank = false;
  bool holds = false;  // full_rank && off_support_inf_norm < 1
};

// Throws std::invalid_argument when Omega or the support is empty.
CertificateReport build_certificate(const PlantedInstance& inst);

enum class LogBase {
  kNatural,
  kBase10,
};

// ceil((15 s + 6) * mu * log N) in the requested base.
Index sample_count(Index n, Index s, double mu, LogBase base);

struct ExperimentResult {
  Index n = 0;
  Index s = 0;
  double mu = 0.0;
  Index p = 0;
  Index trials = 0;
  Index successes = 0;          // ||w - w*||_inf <= 1e-5 * max(1, |w*|_inf)
  Index certificate_holds = 0;
  Index certified_misses = 0;   // certificate held but recovery failed
  double mean_error = 0.0;      // mean ||w - w*||_inf over trials
  int regenerations = 0;
  double wall_seconds = 0.0;
};

// One grid cell: `trials` independent generate/recover/certify rounds at
// P = sample_count(n, s, mu, base), or at p_override samples when that is
// positive (for undersampled contrast regimes). Trial t draws from a seed
// stride of 1000003 so instance-level regeneration never bleeds across
// trials.
ExperimentResult sample_complexity_experiment(
    Index n, Index s, double mu, Index trials, std::uint64_t seed,
    LogBase base = LogBase::kNatural, int jobs = 1,
    const SolverOptions& opts = {}, Index p_override = 0);

struct EigenFloorResult {
  Index s = 0;
  Index p = 0;
  Index trials = 0;
  double t = 0.0;
  double threshold = 0.0;           // P/2 + t
  double mean = 0.0;                // mean sampled lambda_min
  double violation_fraction = 0.0;  // fraction of samples <= threshold
  double bound = 0.0;  // s * exp(-t^2 / (P (2s+1) - 2t/3))
  std::vector<double> samples;
};

// Samples lambda_min of sum_{p in Omega} x_p x_p^T on the support
// coordinates (only those matter, so X is drawn s x P directly) and compares
// the empirical tail at P/2 + t against the concentration bound. t must be
// <= 0.
EigenFloorResult empirical_eigen_floor(Index s, Index p, Index trials,
                                       double t, std::uint64_t seed);

}  // namespace relutrim
