#include "relutrim/trim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "relutrim/constraints.hpp"
#include "relutrim/parallel.hpp"

namespace relutrim {

namespace {

Index count_nnz(const Matrix& w, double zero_tol) {
  return (w.array().abs() > zero_tol).count();
}

// Zeroes entries below zero_tol, but only when the rounded point still
// satisfies the program within a tenth of the reporting slack; otherwise the
// solver iterate is kept as is.
Matrix threshold_checked(const QcqpData& q, const Matrix& u, double zero_tol,
                         double feasibility_slack) {
  if (zero_tol <= 0.0) return u;
  const Matrix t = (u.array().abs() < zero_tol).select(0.0, u);
  const double gate = 0.1 * feasibility_slack * std::max(1.0, q.epsilon);
  if (satisfies(q, t, gate)) return t;
  return u;
}

ScaleLedger identity_ledger(Index num_layers) {
  ScaleLedger ledger;
  ledger.layer_mass.assign(static_cast<size_t>(num_layers), 1.0);
  ledger.cumulative.assign(static_cast<size_t>(num_layers), 1.0);
  return ledger;
}

ClusterPartition make_partition(ClusterScheme scheme, Index m, Index blocks) {
  switch (scheme) {
    case ClusterScheme::kWholeLayer:
      return whole_layer_partition(m);
    case ClusterScheme::kSingleton:
      return singleton_partition(m);
    case ClusterScheme::kBlocks:
      return block_partition(m, blocks);
  }
  throw std::logic_error("make_partition: unknown scheme");
}

// Collapses per-cluster reports into one layer-level report; residuals and
// the objective are recomputed on the stitched point against the full
// program, the rest aggregates conservatively.
SolverReport stitch_report(const QcqpData& full, const Matrix& u,
                           const std::vector<SolverReport>& parts) {
  SolverReport r;
  r.converged = !parts.empty();
  for (const SolverReport& p : parts) {
    r.converged = r.converged && p.converged;
    r.infeasible_suspected = r.infeasible_suspected || p.infeasible_suspected;
    r.iterations = std::max(r.iterations, p.iterations);
    r.stationarity = std::max(r.stationarity, p.stationarity);
    r.complementarity += p.complementarity;
    r.primal_residual = std::max(r.primal_residual, p.primal_residual);
    r.dual_residual = std::max(r.dual_residual, p.dual_residual);
    r.rho_final = std::max(r.rho_final, p.rho_final);
  }
  r.objective = u.cwiseAbs().sum();
  r.quad_residual = quad_residual(full, u);
  r.ineq_violation = ineq_violation(full, u);
  return r;
}

// The original weights must pass the slacked layer-l program before the
// cascade solve; the budget was read off exactly that misfit, so a failure
// here means the invariant itself broke.
void assert_cascade_feasible(const QcqpData& q, const Matrix& w,
                             Index layer) {
  const double tol = 1e-9 * std::max(1.0, q.epsilon);
  const double qres = quad_residual(q, w);
  const double ires = ineq_violation(q, w);
  if (qres > tol || ires > tol) {
    std::ostringstream msg;
    msg << "cascade feasibility invariant violated at layer " << layer
        << ": quad residual " << qres << ", inequality violation " << ires
        << " against budget " << q.epsilon;
    throw std::logic_error(msg.str());
  }
}

struct PipelineSetup {
  NetworkModel solve_net;
  ScaleLedger ledger;
  SignalStack signals;
  Index relu_layers = 0;
};

PipelineSetup prepare(const NetworkModel& net, const Matrix& x,
                      const TrimConfig& config) {
  validate(config);
  validate(net);
  PipelineSetup s;
  if (config.link_normalize) {
    std::tie(s.solve_net, s.ledger) = link_normalize(net);
  } else {
    s.solve_net = net;
    s.ledger = identity_ledger(net.num_layers());
  }
  s.signals = forward(s.solve_net, x);
  s.relu_layers =
      net.last_layer_linear ? net.num_layers() - 1 : net.num_layers();
  return s;
}

// Shared tail: measure per-layer discrepancies in the solve domain, map the
// pruned net back to the caller's domain and fill the summary fields.
void finalize(TrimResult& res, const NetworkModel& net,
              const PipelineSetup& s, const Matrix& x,
              const TrimConfig& config) {
  const SignalStack after = forward(res.pruned, x);
  for (Index l = 0; l < net.num_layers(); ++l) {
    res.layers[static_cast<size_t>(l)].discrepancy =
        (after.levels[static_cast<size_t>(l) + 1] -
         s.signals.levels[static_cast<size_t>(l) + 1])
            .norm();
  }
  res.relative_discrepancy =
      relative_discrepancy(s.signals.output(), after.output());
  if (config.link_normalize)
    res.pruned = undo_link_normalize(res.pruned, s.ledger);
  for (Index l = 0; l < net.num_layers(); ++l) {
    auto& rep = res.layers[static_cast<size_t>(l)];
    rep.nnz_before =
        count_nnz(net.layers[static_cast<size_t>(l)], config.zero_tol);
    rep.nnz_after =
        count_nnz(res.pruned.layers[static_cast<size_t>(l)], config.zero_tol);
  }
  res.scale = s.ledger;
  res.link_normalized = config.link_normalize;
  res.gamma = config.gamma;
  res.kappa = config.kappa;
  res.all_converged = true;
  for (const auto& rep : res.layers)
    res.all_converged = res.all_converged && rep.solver.converged;
}

}  // namespace

ClusterPartition whole_layer_partition(Index m) {
  if (m < 1)
    throw std::invalid_argument("whole_layer_partition: empty layer");
  ClusterPartition part;
  part.sets.emplace_back();
  part.sets[0].resize(static_cast<size_t>(m));
  for (Index i = 0; i < m; ++i) part.sets[0][static_cast<size_t>(i)] = i;
  return part;
}

ClusterPartition singleton_partition(Index m) {
  if (m < 1) throw std::invalid_argument("singleton_partition: empty layer");
  ClusterPartition part;
  part.sets.resize(static_cast<size_t>(m));
  for (Index i = 0; i < m; ++i) part.sets[static_cast<size_t>(i)] = {i};
  return part;
}

ClusterPartition block_partition(Index m, Index blocks) {
  if (m < 1) throw std::invalid_argument("block_partition: empty layer");
  if (blocks < 1 || blocks > m)
    throw std::invalid_argument(
        "block_partition: block count must be in 1..m");
  ClusterPartition part;
  part.sets.resize(static_cast<size_t>(blocks));
  const Index base = m / blocks;
  const Index extra = m % blocks;
  Index next = 0;
  for (Index k = 0; k < blocks; ++k) {
    const Index size = base + (k < extra ? 1 : 0);
    auto& set = part.sets[static_cast<size_t>(k)];
    set.resize(static_cast<size_t>(size));
    for (Index j = 0; j < size; ++j) set[static_cast<size_t>(j)] = next++;
  }
  return part;
}

void validate_partition(const ClusterPartition& part, Index m) {
  if (m < 1) throw std::invalid_argument("validate_partition: empty layer");
  if (part.sets.empty())
    throw std::invalid_argument("validate_partition: no clusters");
  std::vector<bool> seen(static_cast<size_t>(m), false);
  for (const auto& set : part.sets) {
    if (set.empty())
      throw std::invalid_argument("validate_partition: empty cluster");
    for (Index i : set) {
      if (i < 0 || i >= m)
        throw std::invalid_argument(
            "validate_partition: neuron index out of range");
      if (seen[static_cast<size_t>(i)])
        throw std::invalid_argument(
            "validate_partition: clusters overlap");
      seen[static_cast<size_t>(i)] = true;
    }
  }
  for (bool b : seen)
    if (!b)
      throw std::invalid_argument(
          "validate_partition: clusters do not cover the layer");
  if (!part.epsilons.empty()) {
    if (part.epsilons.size() != part.sets.size())
      throw std::invalid_argument(
          "validate_partition: one epsilon per cluster required");
    for (double e : part.epsilons)
      if (!(e >= 0.0))
        throw std::invalid_argument(
            "validate_partition: negative cluster epsilon");
  }
}

double cluster_epsilon(double epsilon, Index cluster_size, Index m) {
  if (m < 1 || cluster_size < 1 || cluster_size > m)
    throw std::invalid_argument("cluster_epsilon: bad sizes");
  if (epsilon < 0.0)
    throw std::invalid_argument("cluster_epsilon: negative epsilon");
  return epsilon * std::sqrt(static_cast<double>(cluster_size) /
                             static_cast<double>(m));
}

void validate(const TrimConfig& config) {
  if (!(config.epsilon_rel >= 0.0))
    throw std::invalid_argument("TrimConfig: epsilon_rel must be >= 0");
  if (!(config.gamma >= 1.0))
    throw std::invalid_argument("TrimConfig: gamma must be >= 1");
  if (!(config.kappa > 0.0) || config.kappa > 1.0)
    throw std::invalid_argument("TrimConfig: kappa must be in (0, 1]");
  if (config.clusters == ClusterScheme::kBlocks && config.cluster_count < 1)
    throw std::invalid_argument("TrimConfig: cluster_count must be >= 1");
  if (config.jobs < 1)
    throw std::invalid_argument("TrimConfig: jobs must be >= 1");
  if (config.zero_tol < 0.0)
    throw std::invalid_argument("TrimConfig: zero_tol must be >= 0");
  if (config.activation_threshold < 0.0)
    throw std::invalid_argument(
        "TrimConfig: activation_threshold must be >= 0");
}

PartitionSolution pcn_partition_trim(const Matrix& x, const Matrix& y,
                                     const ClusterPartition& part,
                                     double epsilon,
                                     const SolverOptions& opts,
                                     const Matrix* v,
                                     double activation_threshold, int jobs,
                                     double zero_tol, const Matrix* warm) {
  const Index m = y.rows();
  validate_partition(part, m);
  if (v && (v->rows() != y.rows() || v->cols() != y.cols()))
    throw std::invalid_argument("pcn_partition_trim: V shape mismatch");
  if (warm && (warm->rows() != x.rows() || warm->cols() != m))
    throw std::invalid_argument(
        "pcn_partition_trim: warm start shape mismatch");
  const Index nc = part.num_clusters();

  PartitionSolution out;
  out.u = Matrix::Zero(x.rows(), m);
  out.reports.resize(static_cast<size_t>(nc));
  out.epsilons.resize(static_cast<size_t>(nc));
  for (Index k = 0; k < nc; ++k) {
    out.epsilons[static_cast<size_t>(k)] =
        part.epsilons.empty()
            ? cluster_epsilon(
                  epsilon,
                  static_cast<Index>(part.sets[static_cast<size_t>(k)].size()),
                  m)
            : part.epsilons[static_cast<size_t>(k)];
  }

  std::vector<Matrix> pieces(static_cast<size_t>(nc));
  parallel_for(nc, jobs, [&](Index k) {
    const auto& rows = part.sets[static_cast<size_t>(k)];
    const Index mk = static_cast<Index>(rows.size());
    Matrix yk(mk, y.cols());
    Matrix vk = Matrix::Zero(mk, y.cols());
    Matrix wk;
    if (warm) wk.resize(x.rows(), mk);
    for (Index j = 0; j < mk; ++j) {
      yk.row(j) = y.row(rows[static_cast<size_t>(j)]);
      if (v) vk.row(j) = v->row(rows[static_cast<size_t>(j)]);
      if (warm) wk.col(j) = warm->col(rows[static_cast<size_t>(j)]);
    }
    const LayerConstraintSpec spec =
        make_layer_spec(x, std::move(yk), std::move(vk),
                        out.epsilons[static_cast<size_t>(k)],
                        activation_threshold);
    const QcqpData q = build_layer_qcqp(spec);
    LayerSolution sol = solve_layer(q, opts, warm ? &wk : nullptr);
    pieces[static_cast<size_t>(k)] =
        threshold_checked(q, sol.u, zero_tol, opts.feasibility_slack);
    out.reports[static_cast<size_t>(k)] = sol.report;
  });

  for (Index k = 0; k < nc; ++k) {
    const auto& rows = part.sets[static_cast<size_t>(k)];
    for (Index j = 0; j < static_cast<Index>(rows.size()); ++j)
      out.u.col(rows[static_cast<size_t>(j)]) =
          pieces[static_cast<size_t>(k)].col(j);
  }
  out.all_converged = true;
  for (const SolverReport& r : out.reports)
    out.all_converged = out.all_converged && r.converged;
  return out;
}

LayerSolution retrain_last_layer(const Matrix& y_in, const Matrix& y_last,
                                 const Matrix& w_last,
                                 const LastLayerOptions& opts) {
  if (y_in.cols() != y_last.cols())
    throw std::invalid_argument(
        "retrain_last_layer: sample counts disagree");
  double eps = opts.epsilon;
  if (opts.mode == TrimMode::kCascade) {
    if (!(opts.gamma >= 1.0) || !(opts.kappa > 0.0) || opts.kappa > 1.0)
      throw std::invalid_argument(
          "retrain_last_layer: gamma >= 1 and kappa in (0, 1] required");
    if (w_last.rows() != y_in.rows() || w_last.cols() != y_last.rows())
      throw std::invalid_argument(
          "retrain_last_layer: weight shape mismatch");
    const double base = (w_last.transpose() * y_in - y_last).norm();
    eps = opts.kappa * std::sqrt(opts.gamma) * base;
  } else if (!(eps >= 0.0)) {
    throw std::invalid_argument("retrain_last_layer: negative epsilon");
  }

  // The least-squares fit is the feasibility floor of the dense program;
  // anything above it certifies the budget cannot be met by any weights.
  const Matrix u_ls = y_in.transpose()
                          .completeOrthogonalDecomposition()
                          .solve(y_last.transpose());
  const double floor = (y_in.transpose() * u_ls - y_last.transpose()).norm();
  if (floor > eps + 1e-9 * std::max(1.0, eps)) {
    std::ostringstream msg;
    msg << "last-layer program infeasible: least-squares floor " << floor
        << " exceeds budget " << eps;
    if (opts.mode == TrimMode::kCascade)
      msg << " (kappa = " << opts.kappa << ", gamma = " << opts.gamma
          << "); retry with kappa closer to 1 or a larger gamma";
    throw std::runtime_error(msg.str());
  }

  const QcqpData q = build_dense_qcqp(y_in, y_last, eps);
  LayerSolution sol = solve_layer(q, opts.solver);
  sol.u = threshold_checked(q, sol.u, opts.zero_tol,
                            opts.solver.feasibility_slack);
  sol.report.objective = sol.u.cwiseAbs().sum();
  return sol;
}

TrimResult parallel_trim(const NetworkModel& net, const Matrix& x,
                         const TrimConfig& config) {
  PipelineSetup s = prepare(net, x, config);
  const Index num_layers = net.num_layers();
  TrimResult res;
  res.mode = TrimMode::kParallel;
  res.pruned = s.solve_net;
  res.layers.resize(static_cast<size_t>(num_layers));

  // Whole-layer runs have one solve per layer, so spread threads across
  // layers; clustered runs keep layers sequential and parallelize clusters.
  const bool layer_level = config.clusters == ClusterScheme::kWholeLayer;
  const int outer_jobs = layer_level ? config.jobs : 1;
  const int inner_jobs = layer_level ? 1 : config.jobs;

  parallel_for(s.relu_layers, outer_jobs, [&](Index l) {
    const Matrix& xin = s.signals.levels[static_cast<size_t>(l)];
    const Matrix& yout = s.signals.levels[static_cast<size_t>(l) + 1];
    const Matrix& w_orig = s.solve_net.layers[static_cast<size_t>(l)];
    const double eps = config.epsilon_rel * yout.norm();
    const ClusterPartition part =
        make_partition(config.clusters, yout.rows(), config.cluster_count);
    const PartitionSolution ps = pcn_partition_trim(
        xin, yout, part, eps, config.solver, nullptr,
        config.activation_threshold, inner_jobs, config.zero_tol, &w_orig);
    res.pruned.layers[static_cast<size_t>(l)] = ps.u;
    auto& rep = res.layers[static_cast<size_t>(l)];
    rep.epsilon = eps;
    const QcqpData full = build_layer_qcqp(make_layer_spec(
        xin, yout, Matrix::Zero(yout.rows(), yout.cols()), eps,
        config.activation_threshold));
    rep.solver = stitch_report(full, ps.u, ps.reports);
  });

  if (net.last_layer_linear) {
    const Index l = num_layers - 1;
    const Matrix& y_in = s.signals.levels[static_cast<size_t>(l)];
    const Matrix& y_last = s.signals.levels[static_cast<size_t>(l) + 1];
    LastLayerOptions lo;
    lo.mode = TrimMode::kParallel;
    lo.epsilon = config.epsilon_rel * y_last.norm();
    lo.solver = config.solver;
    lo.zero_tol = config.zero_tol;
    const LayerSolution sol = retrain_last_layer(
        y_in, y_last, s.solve_net.layers[static_cast<size_t>(l)], lo);
    res.pruned.layers[static_cast<size_t>(l)] = sol.u;
    auto& rep = res.layers[static_cast<size_t>(l)];
    rep.epsilon = lo.epsilon;
    rep.solver = sol.report;
  }

  finalize(res, net, s, x, config);
  return res;
}

TrimResult cascade_trim(const NetworkModel& net, const Matrix& x,
                        const TrimConfig& config) {
  PipelineSetup s = prepare(net, x, config);
  const Index num_layers = net.num_layers();
  TrimResult res;
  res.mode = TrimMode::kCascade;
  res.pruned = s.solve_net;
  res.layers.resize(static_cast<size_t>(num_layers));

  Matrix yhat = s.signals.levels[0];
  for (Index l = 0; l < s.relu_layers; ++l) {
    const Matrix& yout = s.signals.levels[static_cast<size_t>(l) + 1];
    const Matrix& w_orig = s.solve_net.layers[static_cast<size_t>(l)];
    ClusterPartition part =
        make_partition(config.clusters, yout.rows(), config.cluster_count);
    double eps = 0.0;
    const Matrix* v_ptr = nullptr;
    Matrix v = Matrix::Zero(yout.rows(), yout.cols());
    if (l == 0) {
      // First layer sees the true inputs, so it runs the plain program.
      eps = config.epsilon_rel * yout.norm();
    } else {
      // Slacked program against the surrogate input. Budgets come from the
      // original weights' misfit per cluster, inflated by gamma; that keeps
      // each cluster of W_l feasible and sums to the layer budget
      // eps_l^2 = gamma * (total active misfit).
      v = w_orig.transpose() * yhat;
      v_ptr = &v;
      const ActivePattern pat =
          active_pattern(yout, config.activation_threshold);
      const Matrix misfit_sq = pat.active.select(
          ((v - yout).array().square()).matrix(),
          Matrix::Zero(yout.rows(), yout.cols()));
      part.epsilons.resize(part.sets.size());
      double total = 0.0;
      for (size_t k = 0; k < part.sets.size(); ++k) {
        double mk = 0.0;
        for (Index row : part.sets[k]) mk += misfit_sq.row(row).sum();
        part.epsilons[k] = std::sqrt(config.gamma * mk);
        total += mk;
      }
      eps = std::sqrt(config.gamma * total);
    }
    const QcqpData full = build_layer_qcqp(
        make_layer_spec(yhat, yout, v, eps, config.activation_threshold));
    if (l > 0) assert_cascade_feasible(full, w_orig, l + 1);
    const PartitionSolution ps = pcn_partition_trim(
        yhat, yout, part, eps, config.solver, v_ptr,
        config.activation_threshold, config.jobs, config.zero_tol, &w_orig);
    res.pruned.layers[static_cast<size_t>(l)] = ps.u;
    auto& rep = res.layers[static_cast<size_t>(l)];
    rep.epsilon = eps;
    rep.solver = stitch_report(full, ps.u, ps.reports);
    yhat = relu(ps.u.transpose() * yhat);
  }

  if (net.last_layer_linear) {
    const Index l = num_layers - 1;
    const Matrix& y_last = s.signals.levels[static_cast<size_t>(l) + 1];
    LastLayerOptions lo;
    lo.mode = TrimMode::kCascade;
    lo.gamma = config.gamma;
    lo.kappa = config.kappa;
    lo.solver = config.solver;
    lo.zero_tol = config.zero_tol;
    const LayerSolution sol = retrain_last_layer(
        yhat, y_last, s.solve_net.layers[static_cast<size_t>(l)], lo);
    res.pruned.layers[static_cast<size_t>(l)] = sol.u;
    auto& rep = res.layers[static_cast<size_t>(l)];
    rep.epsilon = config.kappa *
                  std::sqrt(config.gamma) *
                  (s.solve_net.layers[static_cast<size_t>(l)].transpose() *
                       yhat -
                   y_last)
                      .norm();
    rep.solver = sol.report;
  }

  finalize(res, net, s, x, config);
  return res;
}

TrimResult trim(const NetworkModel& net, const Matrix& x,
                const TrimConfig& config) {
  return config.mode == TrimMode::kParallel ? parallel_trim(net, x, config)
                                            : cascade_trim(net, x, config);
}

BoundLedger verify_discrepancy_bounds(const TrimResult& result,
                                      const NetworkModel& net_before,
                                      const Matrix& x, double slack) {
  validate(net_before);
  const Index num_layers = net_before.num_layers();
  if (static_cast<Index>(result.layers.size()) != num_layers ||
      result.pruned.num_layers() != num_layers)
    throw std::invalid_argument(
        "verify_discrepancy_bounds: result does not match the network");
  if (static_cast<Index>(result.scale.cumulative.size()) != num_layers)
    throw std::invalid_argument(
        "verify_discrepancy_bounds: scale ledger length mismatch");

  auto [net_norm, ledger] = link_normalize(net_before);
  NetworkModel pruned_norm = result.pruned;
  for (Index l = 0; l < num_layers; ++l)
    pruned_norm.layers[static_cast<size_t>(l)] /=
        ledger.layer_mass[static_cast<size_t>(l)];

  const SignalStack before = forward(net_norm, x);
  const SignalStack after = forward(pruned_norm, x);

  // Budgets were recorded in the domain the pipeline solved in; the ratio
  // of cumulative scales maps them into the link-normalized domain (it is 1
  // when the run itself was link-normalized).
  std::vector<double> eps_norm(static_cast<size_t>(num_layers));
  for (Index l = 0; l < num_layers; ++l)
    eps_norm[static_cast<size_t>(l)] =
        result.layers[static_cast<size_t>(l)].epsilon *
        result.scale.cumulative[static_cast<size_t>(l)] /
        ledger.cumulative[static_cast<size_t>(l)];

  BoundLedger out;
  out.slack = slack;
  out.all_pass = true;
  out.rows.resize(static_cast<size_t>(num_layers));
  double running_sum = 0.0;
  for (Index l = 0; l < num_layers; ++l) {
    auto& row = out.rows[static_cast<size_t>(l)];
    row.measured = (after.levels[static_cast<size_t>(l) + 1] -
                    before.levels[static_cast<size_t>(l) + 1])
                       .norm();
    if (result.mode == TrimMode::kParallel) {
      running_sum += eps_norm[static_cast<size_t>(l)];
      row.claimed = running_sum;
    } else {
      row.claimed = eps_norm[0] *
                    std::pow(result.gamma, static_cast<double>(l) / 2.0);
      if (net_before.last_layer_linear && l == num_layers - 1)
        row.claimed *= result.kappa;
    }
    row.margin = row.claimed + slack - row.measured;
    row.pass = row.measured <= row.claimed + slack;
    out.all_pass = out.all_pass && row.pass;
  }
  return out;
}

}  // namespace relutrim
