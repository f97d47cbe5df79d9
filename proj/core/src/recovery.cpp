#include "relutrim/recovery.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "relutrim/constraints.hpp"
#include "relutrim/parallel.hpp"
#include "relutrim/rng.hpp"

namespace relutrim {

namespace {

// One attempt; the caller retries on empty Omega.
PlantedInstance draw_instance(Index n, Index s, Index p, std::uint64_t seed) {
  Rng rng(seed);
  PlantedInstance inst;
  inst.n = n;
  inst.p = p;
  inst.s = s;

  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  rng.shuffle(order);
  inst.support.assign(order.begin(), order.begin() + s);
  std::sort(inst.support.begin(), inst.support.end());

  inst.w_star = Vector::Zero(n);
  for (Index i : inst.support) {
    double g = 0.0;
    while (std::abs(g) < 0.1) g = rng.gaussian();
    inst.w_star(i) = g;
  }

  inst.x = rng.gaussian_matrix(n, p);
  inst.y = (inst.x.transpose() * inst.w_star).cwiseMax(0.0);
  for (Index j = 0; j < p; ++j)
    if (inst.y(j) > 0.0) inst.omega.push_back(j);
  return inst;
}

Matrix pick(const Matrix& x, const std::vector<Index>& rows,
            const std::vector<Index>& cols) {
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Index>(i), static_cast<Index>(j)) =
          x(rows[i], cols[j]);
  return out;
}

std::vector<Index> complement(const std::vector<Index>& sorted, Index n) {
  std::vector<Index> out;
  out.reserve(static_cast<size_t>(n) - sorted.size());
  size_t k = 0;
  for (Index i = 0; i < n; ++i) {
    if (k < sorted.size() && sorted[k] == i)
      ++k;
    else
      out.push_back(i);
  }
  return out;
}

}  // namespace

PlantedInstance generate_planted(Index n, Index s, Index p,
                                 std::uint64_t seed) {
  if (s < 1 || s > n)
    throw std::invalid_argument("generate_planted: need 1 <= s <= N");
  if (p < 1) throw std::invalid_argument("generate_planted: need P >= 1");
  int retries = 0;
  while (true) {
    PlantedInstance inst =
        draw_instance(n, s, p, seed + static_cast<std::uint64_t>(retries));
    if (!inst.omega.empty()) {
      inst.seed = seed;
      inst.regenerations = retries;
      return inst;
    }
    ++retries;
  }
}

RecoveryOutcome exact_recover(const PlantedInstance& inst,
                              const SolverOptions& opts) {
  if (inst.x.rows() != inst.n || inst.x.cols() != inst.p ||
      inst.y.size() != inst.p)
    throw std::invalid_argument("exact_recover: inconsistent instance");
  Matrix y_row = inst.y.transpose();
  const LayerConstraintSpec spec = make_layer_spec(
      inst.x, std::move(y_row), Matrix::Zero(1, inst.p), 0.0);
  const NeuronSubproblem sub = build_neuron_subproblem(spec, 0);
  NeuronSolution sol = solve_neuron(sub, opts);
  return {std::move(sol.w), sol.report};
}

CertificateReport build_certificate(const PlantedInstance& inst) {
  if (inst.support.empty() || inst.omega.empty())
    throw std::invalid_argument(
        "build_certificate: empty support or active set");

  const Matrix x_go = pick(inst.x, inst.support, inst.omega);
  Vector sign_gamma(static_cast<Index>(inst.support.size()));
  for (size_t i = 0; i < inst.support.size(); ++i)
    sign_gamma(static_cast<Index>(i)) =
        inst.w_star(inst.support[i]) >= 0.0 ? 1.0 : -1.0;

  CertificateReport rep;
  const Matrix gram = x_go * x_go.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  rep.min_eigenvalue = es.eigenvalues().minCoeff();
  const double top = std::max(1.0, es.eigenvalues().maxCoeff());
  rep.full_rank = rep.min_eigenvalue > 1e-10 * top;
  if (!rep.full_rank) return rep;

  rep.xi_omega = x_go.transpose() * gram.ldlt().solve(sign_gamma);

  Matrix x_omega(inst.n, static_cast<Index>(inst.omega.size()));
  for (size_t j = 0; j < inst.omega.size(); ++j)
    x_omega.col(static_cast<Index>(j)) = inst.x.col(inst.omega[j]);
  rep.lambda = x_omega * rep.xi_omega;

  const std::vector<Index> off = complement(inst.support, inst.n);
  rep.off_support_inf_norm = 0.0;
  for (Index i : off)
    rep.off_support_inf_norm =
        std::max(rep.off_support_inf_norm, std::abs(rep.lambda(i)));
  rep.holds = rep.off_support_inf_norm < 1.0;
  return rep;
}

Index sample_count(Index n, Index s, double mu, LogBase base) {
  if (n < 2) throw std::invalid_argument("sample_count: need N >= 2");
  if (s < 1) throw std::invalid_argument("sample_count: need s >= 1");
  if (!(mu > 0.0)) throw std::invalid_argument("sample_count: need mu > 0");
  const double logn =
      base == LogBase::kNatural ? std::log(static_cast<double>(n))
                                : std::log10(static_cast<double>(n));
  return static_cast<Index>(
      std::ceil(static_cast<double>(15 * s + 6) * mu * logn));
}

ExperimentResult sample_complexity_experiment(Index n, Index s, double mu,
                                              Index trials,
                                              std::uint64_t seed,
                                              LogBase base, int jobs,
                                              const SolverOptions& opts,
                                              Index p_override) {
  if (trials < 1)
    throw std::invalid_argument(
        "sample_complexity_experiment: need trials >= 1");
  if (!(mu > 1.0))
    throw std::invalid_argument("sample_complexity_experiment: need mu > 1");
  if (p_override < 0)
    throw std::invalid_argument(
        "sample_complexity_experiment: p_override must be >= 0");
  const auto t0 = std::chrono::steady_clock::now();

  ExperimentResult res;
  res.n = n;
  res.s = s;
  res.mu = mu;
  res.p = p_override > 0 ? p_override : sample_count(n, s, mu, base);
  res.trials = trials;

  struct Trial {
    bool success = false;
    bool certified = false;
    double error = 0.0;
    int regenerations = 0;
  };
  std::vector<Trial> rows(static_cast<size_t>(trials));
  parallel_for(trials, jobs, [&](Index t) {
    const std::uint64_t trial_seed =
        seed + 1000003ull * static_cast<std::uint64_t>(t);
    const PlantedInstance inst = generate_planted(n, s, res.p, trial_seed);
    const RecoveryOutcome rec = exact_recover(inst, opts);
    const CertificateReport cert = build_certificate(inst);
    Trial& row = rows[static_cast<size_t>(t)];
    row.error = (rec.w - inst.w_star).cwiseAbs().maxCoeff();
    row.success =
        row.error <= 1e-5 * std::max(1.0, inst.w_star.cwiseAbs().maxCoeff());
    row.certified = cert.holds;
    row.regenerations = inst.regenerations;
  });

  double err_sum = 0.0;
  for (const Trial& row : rows) {
    res.successes += row.success ? 1 : 0;
    res.certificate_holds += row.certified ? 1 : 0;
    res.certified_misses += (row.certified && !row.success) ? 1 : 0;
    res.regenerations += row.regenerations;
    err_sum += row.error;
  }
  res.mean_error = err_sum / static_cast<double>(trials);
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return res;
}

EigenFloorResult empirical_eigen_floor(Index s, Index p, Index trials,
                                       double t, std::uint64_t seed) {
  if (s < 1) throw std::invalid_argument("empirical_eigen_floor: need s >= 1");
  if (p < 0) throw std::invalid_argument("empirical_eigen_floor: need P >= 0");
  if (trials < 1)
    throw std::invalid_argument("empirical_eigen_floor: need trials >= 1");
  if (t > 0.0)
    throw std::invalid_argument("empirical_eigen_floor: t must be <= 0");

  EigenFloorResult res;
  res.s = s;
  res.p = p;
  res.trials = trials;
  res.t = t;
  res.threshold = static_cast<double>(p) / 2.0 + t;
  res.bound = static_cast<double>(s) *
              std::exp(-t * t /
                       (static_cast<double>(p) *
                            static_cast<double>(2 * s + 1) -
                        2.0 * t / 3.0));
  res.samples.resize(static_cast<size_t>(trials));

  Rng rng(seed);
  Index violations = 0;
  double sum = 0.0;
  for (Index trial = 0; trial < trials; ++trial) {
    // Only the support rows of the instance enter the restricted Gram
    // matrix, so the draw is s x P directly.
    Vector w(s);
    for (Index i = 0; i < s; ++i) {
      double g = 0.0;
      while (std::abs(g) < 0.1) g = rng.gaussian();
      w(i) = g;
    }
    const Matrix x = rng.gaussian_matrix(s, p);
    Matrix gram = Matrix::Zero(s, s);
    for (Index j = 0; j < p; ++j)
      if (x.col(j).dot(w) > 0.0)
        gram.noalias() += x.col(j) * x.col(j).transpose();
    double lmin = 0.0;
    if (p > 0) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
      lmin = es.eigenvalues().minCoeff();
    }
    res.samples[static_cast<size_t>(trial)] = lmin;
    sum += lmin;
    if (lmin <= res.threshold) ++violations;
  }
  res.mean = sum / static_cast<double>(trials);
  res.violation_fraction =
      static_cast<double>(violations) / static_cast<double>(trials);
  return res;
}

}  // namespace relutrim
