#pragma once

// The retraining pipelines. Both walk a trained net layer by layer and
// replace each weight matrix with the minimum-l1 solution of the layer
// program, differing in what they feed the constraint set:
//
//   parallel  every layer is retrained against the original signals
//             Y(l-1) -> Y(l) with V = 0; layers are independent, so the
//             solves can run concurrently, and the final discrepancy obeys
//             ||Yhat(l) - Y(l)||_F <= sum_{j<=l} eps_j on a link-normalized
//             net.
//
//   cascade   layer l >= 2 is retrained against the surrogate input
//             Yhat(l-1) with slack V = W_l^T Yhat(l-1), and its budget is
//             read off the original weights, eps_l^2 = gamma * sum over the
//             active set of (w_m^T yhat_p - y_mp)^2. That choice keeps W_l
//             feasible by construction (asserted at runtime) and gives
//             ||Yhat(l) - Y(l)||_F <= eps_1 * sqrt(gamma^(l-1)).
//
// A linear last layer is retrained by retrain_last_layer against the dense
// program ||U^T Y_in - Y(L)||_F <= eps_L; the cascade variant draws eps_L
// from the original weights the same way and optionally shrinks it by the
// risk coefficient kappa, the one step that can genuinely go infeasible.
//
// Budgets follow eps_l = epsilon_rel * ||Y(l)||_F in whatever domain the
// pipeline runs in. With link_normalize set, the net is rescaled to unit
// per-layer l1 mass first (the domain the discrepancy bounds are stated in)
// and the returned weights are scaled back, so the pruned net is a drop-in
// replacement either way.

#include <vector>

#include "relutrim/model.hpp"
#include "relutrim/solver.hpp"

namespace relutrim {

enum class TrimMode {
  kParallel,
  kCascade,
};

// Grouping of a layer's output neurons into independently solved blocks.
// Solving per cluster with budgets eps_k such that sum eps_k^2 = eps^2
// keeps the stitched layer within the whole-layer budget; the default rule
// eps_k = eps * sqrt(|C_k| / M) spreads the budget by cluster size.
struct ClusterPartition {
  std::vector<std::vector<Index>> sets;
  // One budget per set. Left empty, the caller's rule fills it in.
  std::vector<double> epsilons;

  Index num_clusters() const { return static_cast<Index>(sets.size()); }
};

ClusterPartition whole_layer_partition(Index m);
ClusterPartition singleton_partition(Index m);
// m neurons dealt into `blocks` contiguous chunks of near-equal size.
ClusterPartition block_partition(Index m, Index blocks);

// Throws std::invalid_argument unless the sets are disjoint, in range and
// cover all of 0..m-1, and epsilons (when present) match the set count.
void validate_partition(const ClusterPartition& part, Index m);

double cluster_epsilon(double epsilon, Index cluster_size, Index m);

enum class ClusterScheme {
  kWholeLayer,  // one solve per layer
  kSingleton,   // one solve per output neuron
  kBlocks,      // cluster_count near-equal chunks
};

struct TrimConfig {
  TrimMode mode = TrimMode::kParallel;
  double epsilon_rel = 0.01;
  double gamma = 1.1;  // cascade inflation rate, >= 1
  double kappa = 1.0;  // last-layer risk coefficient, in (0, 1]
  ClusterScheme clusters = ClusterScheme::kWholeLayer;
  Index cluster_count = 1;  // only read for kBlocks
  bool link_normalize = true;
  SolverOptions solver;
  // Worker threads for independent solves (layers in parallel mode,
  // clusters otherwise). Results merge by index, so the thread count never
  // changes the output.
  int jobs = 1;
  double zero_tol = 1e-8;
  double activation_threshold = 0.0;
};

// Throws std::invalid_argument on gamma < 1, kappa outside (0, 1],
// epsilon_rel < 0, cluster_count < 1 or jobs < 1.
void validate(const TrimConfig& config);

struct LayerTrimReport {
  double epsilon = 0.0;  // budget handed to the solve, in the solve domain
  Index nnz_before = 0;
  Index nnz_after = 0;
  // ||Yhat(l) - Y(l)||_F measured in the solve domain after the full run.
  double discrepancy = 0.0;
  SolverReport solver;
};

struct TrimResult {
  NetworkModel pruned;
  std::vector<LayerTrimReport> layers;
  // Masses divided out before solving; all ones when link_normalize was
  // off. Bound verification needs them to map recorded budgets between
  // domains.
  ScaleLedger scale;
  bool link_normalized = false;
  TrimMode mode = TrimMode::kParallel;
  double gamma = 1.0;
  double kappa = 1.0;
  // ||Z - Zhat||_F / ||Z||_F on the final outputs, original domain.
  double relative_discrepancy = 0.0;
  bool all_converged = false;
};

TrimResult parallel_trim(const NetworkModel& net, const Matrix& x,
                         const TrimConfig& config);
// Sequential by definition; throws std::logic_error if the feasibility-by-
// construction check of the original W_l ever fails (it cannot, short of a
// bug) and std::runtime_error when the kappa < 1 last-layer step turns out
// infeasible (certified; retry with kappa closer to 1 or a larger gamma).
TrimResult cascade_trim(const NetworkModel& net, const Matrix& x,
                        const TrimConfig& config);
// Dispatch on config.mode.
TrimResult trim(const NetworkModel& net, const Matrix& x,
                const TrimConfig& config);

struct LastLayerOptions {
  TrimMode mode = TrimMode::kParallel;
  // Parallel mode: the budget itself.
  double epsilon = 0.0;
  // Cascade mode: eps_L = kappa * sqrt(gamma * ||W_L^T Y_in - Y_last||_F^2).
  double gamma = 1.0;
  double kappa = 1.0;
  SolverOptions solver;
  double zero_tol = 1e-8;
};

// Minimum-l1 retraining of a bias-free linear output layer against inputs
// y_in (original signals in parallel mode, surrogates in cascade mode).
// w_last is only read in cascade mode, to set the budget. Infeasibility is
// certified by the least-squares residual before solving.
LayerSolution retrain_last_layer(const Matrix& y_in, const Matrix& y_last,
                                 const Matrix& w_last,
                                 const LastLayerOptions& opts);

struct PartitionSolution {
  Matrix u;  // N x M, cluster results stitched column-wise
  std::vector<SolverReport> reports;
  std::vector<double> epsilons;  // budgets actually used
  bool all_converged = false;
};

// Retrains one layer cluster by cluster and stitches per-cluster solutions
// into the full weight matrix. Empty part.epsilons means the default
// eps_k = epsilon * sqrt(|C_k| / M) rule; explicit budgets override it (the
// cascade pipeline passes per-cluster misfit budgets). v may be null for
// the V = 0 program. warm seeds each cluster solve with the matching
// columns (the pipelines pass the original weights, which are feasible).
PartitionSolution pcn_partition_trim(const Matrix& x, const Matrix& y,
                                     const ClusterPartition& part,
                                     double epsilon,
                                     const SolverOptions& opts,
                                     const Matrix* v = nullptr,
                                     double activation_threshold = 0.0,
                                     int jobs = 1, double zero_tol = 1e-8,
                                     const Matrix* warm = nullptr);

struct BoundLedgerRow {
  double measured = 0.0;  // ||Yhat(l) - Y(l)||_F, link-normalized domain
  double claimed = 0.0;   // bound RHS for this layer
  double margin = 0.0;    // claimed + slack - measured
  bool pass = false;
};

struct BoundLedger {
  std::vector<BoundLedgerRow> rows;
  double slack = 0.0;
  bool all_pass = false;
};

// Per-layer check of the discrepancy bounds the pipelines guarantee. The
// bounds are stated for link-normalized nets, so both nets are rescaled by
// the original net's masses first and recorded budgets are mapped into that
// domain; runs that already solved in the normalized domain pass through
// unchanged. RHS per layer: sum_{j<=l} eps_j in parallel mode,
// eps_1 * sqrt(gamma^(l-1)) in cascade mode (times kappa at a linear last
// layer).
BoundLedger verify_discrepancy_bounds(const TrimResult& result,
                                      const NetworkModel& net_before,
                                      const Matrix& x, double slack = 1e-6);

}  // namespace relutrim
