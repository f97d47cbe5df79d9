#include "relutrim/solver.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <vector>

namespace relutrim {

namespace {

constexpr Index kCheckEvery = 10;
// Checks covered by the objective-stall window, about 500 iterations.
constexpr std::size_t kStallWindow = 51;

void check_options(const SolverOptions& opts) {
  if (!(opts.abs_tol > 0.0) || !(opts.rel_tol >= 0.0))
    throw std::invalid_argument("solver options: tolerances must be positive");
  if (opts.max_iters < 1)
    throw std::invalid_argument("solver options: max_iters must be >= 1");
  if (!(opts.rho > 0.0) || !(opts.rho_min > 0.0) ||
      !(opts.rho_max >= opts.rho_min))
    throw std::invalid_argument("solver options: bad rho configuration");
  if (!(opts.over_relax >= 1.0) || opts.over_relax >= 2.0)
    throw std::invalid_argument("solver options: over_relax must be in [1, 2)");
}

Matrix soft_threshold(const Matrix& w, double k) {
  return (w.array() - k).max(0.0).matrix() -
         ((-w).array() - k).max(0.0).matrix();
}

Matrix shifted_clip(const Matrix& w, double k) {
  return (w.array() - k).max(0.0).matrix();
}

struct ScaledProblem {
  Matrix xeff;     // (N or 2N) x P, columns roughly unit after row scaling
  Matrix targets;  // M x P
  Matrix bounds;   // M x P
  const Mask* active = nullptr;
  Matrix active_d;  // mask as doubles, for masked reductions
  double eps = 0.0;
  bool split = false;
  bool any_active = false;
  bool any_inactive = false;
};

// Projection of the (m,p)-laid-out consensus block: active entries move
// toward the eps-ball around the targets, inactive entries clip to the
// bounds. eps = 0 degenerates to the point projection onto the targets.
Matrix project_block(const ScaledProblem& sp, const Matrix& zp) {
  Matrix out = sp.any_inactive ? zp.cwiseMin(sp.bounds).eval() : zp;
  if (!sp.any_active) return out;
  const Matrix dev = (zp - sp.targets).cwiseProduct(sp.active_d);
  const double dist = dev.norm();
  const double f = (dist <= sp.eps) ? 1.0 : sp.eps / dist;
  out = sp.active->select(sp.targets + f * dev, out);
  return out;
}

Matrix recover_point(const ScaledProblem& sp, const Matrix& r, Index n) {
  if (!sp.split) return r;
  return r.topRows(n) - r.bottomRows(n);
}

}  // namespace

LayerSolution solve_layer(const QcqpData& q, const SolverOptions& opts,
                          const Matrix* warm_start) {
  check_options(opts);
  const Index n = q.n(), m = q.m(), p = q.p();
  if (q.targets.rows() != m || q.pattern.active.rows() != m ||
      q.pattern.active.cols() != p)
    throw std::invalid_argument("solve_layer: inconsistent problem shapes");

  // Independent input and target scalings. Dividing X by alpha and the
  // target side (targets, bounds, eps) by beta maps solutions through
  // u_scaled = (alpha / beta) u, so nothing about the problem changes, but
  // it pins the data the iteration actually sees near unit size. That keeps
  // I and X X^T comparable in the u-update and makes rho = 1 a sane default
  // regardless of how the caller's network happens to be scaled. Deep-layer
  // programs arrive here with signals shrunk by several orders of magnitude
  // and previously crawled; see the solver notes in the tests.
  double alpha = q.x.norm() /
                 std::sqrt(static_cast<double>(q.x.rows()) *
                           static_cast<double>(std::max<Index>(1, p)));
  if (!(alpha > 0.0)) alpha = 1.0;
  double beta = 0.0;
  if (!q.pattern.omega.empty()) {
    double ss = 0.0;
    for (const Index idx : q.pattern.omega) {
      const double y = q.targets(idx / p, idx % p);
      ss += y * y;
    }
    beta = std::sqrt(ss / static_cast<double>(q.pattern.omega.size()));
  }
  if (!(beta > 0.0) && !q.pattern.omega_c.empty()) {
    double ss = 0.0;
    for (const Index idx : q.pattern.omega_c) {
      const double v = q.bounds(idx / p, idx % p);
      ss += v * v;
    }
    beta = std::sqrt(ss / static_cast<double>(q.pattern.omega_c.size()));
  }
  if (!(beta > 0.0)) beta = alpha;

  ScaledProblem sp;
  sp.split = opts.backend == SolverBackend::kSplit;
  const Matrix xs = q.x / alpha;
  if (sp.split) {
    sp.xeff.resize(2 * n, p);
    sp.xeff.topRows(n) = xs;
    sp.xeff.bottomRows(n) = -xs;
  } else {
    sp.xeff = xs;
  }
  sp.targets = q.targets / beta;
  sp.bounds = q.bounds / beta;
  sp.active = &q.pattern.active;
  sp.active_d = q.pattern.active.cast<double>();
  sp.eps = q.epsilon / beta;
  sp.any_active = !q.pattern.omega.empty();
  sp.any_inactive = !q.pattern.omega_c.empty();
  const double u_out = beta / alpha;  // scaled-to-raw factor for iterates

  const Index nv = sp.xeff.rows();
  Matrix gram = Matrix::Identity(nv, nv);
  gram.noalias() += sp.xeff * sp.xeff.transpose();
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("solve_layer: normal-equation factorization failed");

  Matrix u = Matrix::Zero(nv, m);
  if (warm_start != nullptr) {
    if (warm_start->rows() != n || warm_start->cols() != m)
      throw std::invalid_argument("solve_layer: warm start must be N x M");
    const Matrix ws = *warm_start / u_out;
    if (sp.split) {
      u.topRows(n) = ws.cwiseMax(0.0);
      u.bottomRows(n) = (-ws).cwiseMax(0.0);
    } else {
      u = ws;
    }
  }
  Matrix r = u;
  Matrix z = u.transpose() * sp.xeff;  // M x P predictions
  Matrix t = project_block(sp, z);
  Matrix lr = Matrix::Zero(nv, m);
  Matrix lt = Matrix::Zero(m, p);
  Matrix r_prev = r, t_prev = t, rhs(nv, m);

  double rho = std::clamp(opts.rho, opts.rho_min, opts.rho_max);
  // Feasibility is judged in the caller's units so that converged implies
  // residuals <= abs_tol as reported.
  const double feas_gate = opts.abs_tol;
  const double tol_scale_pri =
      std::sqrt(static_cast<double>(nv * m + m * p)) * opts.abs_tol;
  const double tol_scale_dua =
      std::sqrt(static_cast<double>(nv * m)) * opts.abs_tol;

  SolverReport rep;
  rep.rho_final = rho;
  std::vector<double> qres_history;
  std::deque<double> obj_window;  // scaled objective at the last ~50 checks
  Matrix u_cand = u_out * recover_point(sp, r, n);

  for (Index k = 1; k <= opts.max_iters; ++k) {
    const bool check = (k % kCheckEvery == 0) || k == opts.max_iters || k == 1;
    if (check) {
      r_prev = r;
      t_prev = t;
    }

    rhs = (r - lr);
    rhs.noalias() += sp.xeff * (t - lt).transpose();
    u = llt.solve(rhs);
    z.noalias() = u.transpose() * sp.xeff;

    // Over-relaxation: blend the fresh subproblem solution with the previous
    // consensus copies before the prox and dual steps. The prox inclusion
    // identities (and with them the stationarity readout below) hold for the
    // blended point just as for the plain one.
    if (opts.over_relax != 1.0) {
      u = opts.over_relax * u + (1.0 - opts.over_relax) * r;
      z = opts.over_relax * z + (1.0 - opts.over_relax) * t;
    }

    r = sp.split ? shifted_clip(u + lr, 1.0 / rho)
                 : soft_threshold(u + lr, 1.0 / rho);
    t = project_block(sp, z + lt);
    lr += u - r;
    lt += z - t;
    rep.iterations = k;

    if (!check) continue;

    const double r_prim =
        std::sqrt((u - r).squaredNorm() + (z - t).squaredNorm());
    const Matrix dual_t = sp.xeff * (t - t_prev).transpose();
    const double s_dual =
        rho * std::sqrt((r - r_prev).squaredNorm() + dual_t.squaredNorm());
    const Matrix lt_img = sp.xeff * lt.transpose();
    const double eps_pri =
        tol_scale_pri +
        opts.rel_tol * std::max(std::sqrt(u.squaredNorm() + z.squaredNorm()),
                                std::sqrt(r.squaredNorm() + t.squaredNorm()));
    const double eps_dua =
        tol_scale_dua + opts.rel_tol * rho *
                            std::sqrt(lr.squaredNorm() + lt_img.squaredNorm());

    u_cand = u_out * recover_point(sp, r, n);
    const double qres = quad_residual(q, u_cand);
    const double iviol = ineq_violation(q, u_cand);
    qres_history.push_back(qres);

    rep.primal_residual = r_prim;
    rep.dual_residual = s_dual;
    rep.quad_residual = qres;
    rep.ineq_violation = iviol;
    rep.rho_final = rho;

    // rho*lr is an exact subgradient of the l1 term at r and rho*lt lies in
    // the projection set's normal cone at t, so this inf-norm is the KKT
    // misfit of the current point (subgradient entries are O(1), so rel_tol
    // is the natural gate).
    const double stat_now = rho * (lr + lt_img).cwiseAbs().maxCoeff();

    // Programs with many exactly tight inequality bounds (the cascade warm
    // start makes every inactive bound tight) leave the consensus duals
    // chattering indefinitely: the KKT misfit decays like 1/k while the
    // iterate itself stops moving after a few thousand iterations. Track the
    // objective over the recent checks and treat a feasible point whose
    // objective has not moved at rel_tol scale as converged.
    const double obj_now = r.cwiseAbs().sum();
    obj_window.push_back(obj_now);
    if (obj_window.size() > kStallWindow) obj_window.pop_front();
    bool stalled = false;
    if (obj_window.size() == kStallWindow) {
      const auto [lo, hi] =
          std::minmax_element(obj_window.begin(), obj_window.end());
      stalled = (*hi - *lo) <= opts.rel_tol * std::max(1.0, obj_now);
    }

    if (qres <= feas_gate && iviol <= feas_gate &&
        ((r_prim <= eps_pri && s_dual <= eps_dua) ||
         stat_now <= opts.rel_tol || stalled)) {
      rep.converged = true;
      break;
    }

    // Residual balancing, only on request and only after a burn-in on a slow
    // cadence. Right after a warm start the dual residual spikes while the
    // primal one is still tiny, and reacting to that transient locks rho
    // into the floor for the rest of the run.
    if (opts.adapt_rho && k >= 500 && k % 100 == 0) {
      if (r_prim > 10.0 * s_dual && rho * 2.0 <= opts.rho_max) {
        rho *= 2.0;
        lr /= 2.0;
        lt /= 2.0;
      } else if (s_dual > 10.0 * r_prim && rho / 2.0 >= opts.rho_min) {
        rho /= 2.0;
        lr *= 2.0;
        lt *= 2.0;
      }
    }
  }

  // A feasibility residual that stopped moving while far above the gate is
  // the divergence signature of an infeasible instance (only reachable
  // through externally supplied bounds; the trim pipelines construct
  // feasible programs).
  if (!rep.converged && rep.quad_residual > std::max(100.0 * feas_gate, 1e-10)) {
    const std::size_t h = qres_history.size();
    if (h >= 4) {
      const double earlier = qres_history[h / 2];
      if (rep.quad_residual > 0.99 * earlier) rep.infeasible_suspected = true;
    }
  }

  // Stationarity from the splitting duals: rho*lr is an exact subgradient of
  // the prox objective at r and rho*lt lies in the normal cone of the
  // projection set at t, so || rho*(lr + X lt^T) || measures the KKT misfit.
  const Matrix stat = rho * (lr + sp.xeff * lt.transpose());
  rep.stationarity = stat.size() > 0 ? stat.cwiseAbs().maxCoeff() : 0.0;

  double comp = 0.0;
  if (sp.any_active) {
    const Matrix mu_act = (rho * lt).cwiseProduct(sp.active_d);
    const double ball_slack =
        std::max(0.0, sp.eps - ((t - sp.targets).cwiseProduct(sp.active_d)).norm());
    comp += mu_act.norm() * ball_slack;
  }
  if (sp.any_inactive) {
    for (const Index idx : q.pattern.omega_c) {
      const Index i = idx / p, j = idx % p;
      const double nu = std::max(0.0, rho * lt(i, j));
      comp += nu * std::max(0.0, sp.bounds(i, j) - t(i, j));
    }
  }
  rep.complementarity = comp;

  rep.quad_residual = quad_residual(q, u_cand);
  rep.ineq_violation = ineq_violation(q, u_cand);
  rep.objective = u_cand.cwiseAbs().sum();
  rep.rho_final = rho;

  return {std::move(u_cand), rep};
}

NeuronSolution solve_neuron(const NeuronSubproblem& sub,
                            const SolverOptions& opts) {
  QcqpData q = neuron_qcqp(sub);
  if (sub.omega_row.empty() && (sub.v.array() >= 0.0).all()) {
    // Never-firing neuron with nonnegative bounds: 0 satisfies every
    // inequality and no smaller l1 mass exists.
    NeuronSolution out;
    out.w = Vector::Zero(sub.x.rows());
    out.report.converged = true;
    out.report.objective = 0.0;
    return out;
  }
  LayerSolution sol = solve_layer(q, opts);
  return {sol.u.col(0), sol.report};
}

namespace {

// Stationarity misfit of a fixed candidate as a function of the multipliers:
// sum over supported coordinates of (sign(u_i) + g_i)^2 plus, off support,
// the squared distance of g_i from [-1, 1], where g = H beta stacks the
// multiplier contributions. Convex, piecewise quadratic, C^1.
struct MultiplierFit {
  const Matrix& h;          // n_vars x k
  const std::vector<char>& support;  // 1 where u_i != 0
  const Vector& sgn;        // sign(u_i) on support, 0 elsewhere

  double value(const Vector& beta, Vector* grad) const {
    Vector g = h * beta;
    double f = 0.0;
    Vector dg;
    if (grad != nullptr) dg = Vector::Zero(g.size());
    for (Index i = 0; i < g.size(); ++i) {
      if (support[static_cast<std::size_t>(i)]) {
        const double r = sgn(i) + g(i);
        f += r * r;
        if (grad != nullptr) dg(i) = 2.0 * r;
      } else {
        const double d = std::max(std::abs(g(i)) - 1.0, 0.0);
        f += d * d;
        if (grad != nullptr && d > 0.0)
          dg(i) = 2.0 * d * (g(i) > 0.0 ? 1.0 : -1.0);
      }
    }
    if (grad != nullptr) *grad = h.transpose() * dg;
    return f;
  }
};

}  // namespace

KktResiduals kkt_residuals(const QcqpData& q, const Matrix& u) {
  const Index n = q.n(), m = q.m(), p = q.p();
  if (u.rows() != n || u.cols() != m)
    throw std::invalid_argument("kkt_residuals: candidate must be N x M");

  KktResiduals out;
  const Matrix z = layer_predictions(q, u);
  const Vector ya = gather(q.targets, q.pattern.omega);
  const Vector za = gather(z, q.pattern.omega);
  const double dist = (za - ya).norm();
  out.quad_residual = std::max(0.0, dist - q.epsilon);
  out.ineq_violation = ineq_violation(q, u);

  // Support and sign data of the candidate.
  const double uscale = std::max(1.0, u.cwiseAbs().maxCoeff());
  std::vector<char> support(static_cast<std::size_t>(u.size()), 0);
  Vector sgn = Vector::Zero(u.size());
  {
    const auto flat = u.reshaped();
    for (Index i = 0; i < flat.size(); ++i) {
      if (std::abs(flat(i)) > 1e-10 * uscale) {
        support[static_cast<std::size_t>(i)] = 1;
        sgn(i) = flat(i) > 0.0 ? 1.0 : -1.0;
      }
    }
  }

  // Multiplier columns: one per equality row when eps = 0 (free sign), one
  // ray for the ball when eps > 0 and the ball is tight, one nonnegative ray
  // per near-active inequality.
  std::vector<Vector> cols;
  std::vector<char> is_free;
  bool ball_column = false;
  if (!q.pattern.omega.empty()) {
    if (q.epsilon == 0.0) {
      for (const Index idx : q.pattern.omega) {
        const Index mi = idx / p, pi = idx % p;
        Vector col = Vector::Zero(n * m);
        col.segment(n * mi, n) = q.x.col(pi);
        cols.push_back(std::move(col));
        is_free.push_back(1);
      }
    } else if (q.epsilon - dist <= 1e-6 * std::max(1.0, q.epsilon)) {
      const Matrix grad_mat =
          q.x * scatter(2.0 * (za - ya), q.pattern.omega, m, p).transpose();
      Vector col(n * m);
      col = grad_mat.reshaped();
      cols.push_back(std::move(col));
      is_free.push_back(0);
      ball_column = true;
    }
  }
  std::vector<Index> near_active;  // positions into omega_c
  Vector margins;
  if (!q.pattern.omega_c.empty()) {
    const Vector tvals = gather(z, q.pattern.omega_c);
    const Vector cvals = gather(q.bounds, q.pattern.omega_c);
    margins = cvals - tvals;
    for (Index j = 0; j < margins.size(); ++j) {
      const double tau =
          1e-6 * std::max({1.0, std::abs(cvals(j)), std::abs(tvals(j))});
      if (margins(j) <= tau) {
        const Index idx = q.pattern.omega_c[static_cast<std::size_t>(j)];
        const Index mi = idx / p, pi = idx % p;
        Vector col = Vector::Zero(n * m);
        col.segment(n * mi, n) = q.x.col(pi);
        cols.push_back(std::move(col));
        is_free.push_back(0);
        near_active.push_back(j);
      }
    }
  }

  const Index k = static_cast<Index>(cols.size());
  Vector beta = Vector::Zero(k);
  Matrix h(n * m, k);
  for (Index j = 0; j < k; ++j) h.col(j) = cols[static_cast<std::size_t>(j)];

  MultiplierFit fit{h, support, sgn};
  if (k > 0) {
    // Projected gradient with backtracking; the free coordinates skip the
    // nonnegativity clamp.
    const double lip = 2.0 * h.squaredNorm() + 1e-12;
    double step = 1.0 / lip;
    Vector grad(k);
    double f = fit.value(beta, &grad);
    for (int it = 0; it < 50000; ++it) {
      Vector cand = beta - step * grad;
      for (Index j = 0; j < k; ++j)
        if (!is_free[static_cast<std::size_t>(j)]) cand(j) = std::max(cand(j), 0.0);
      double fc = fit.value(cand, nullptr);
      int halvings = 0;
      while (fc > f - (0.5 / step) * (cand - beta).squaredNorm() &&
             halvings < 60) {
        step *= 0.5;
        ++halvings;
        cand = beta - step * grad;
        for (Index j = 0; j < k; ++j)
          if (!is_free[static_cast<std::size_t>(j)])
            cand(j) = std::max(cand(j), 0.0);
        fc = fit.value(cand, nullptr);
      }
      const double move = (cand - beta).norm();
      beta = cand;
      f = fit.value(beta, &grad);
      step *= 1.5;
      if (move <= 1e-14 * (1.0 + beta.norm()) || f <= 1e-28) break;
    }
  }

  // Residuals at the fitted multipliers.
  const Vector g = k > 0 ? Vector(h * beta) : Vector(Vector::Zero(n * m));
  double stat = 0.0;
  for (Index i = 0; i < g.size(); ++i) {
    if (support[static_cast<std::size_t>(i)])
      stat = std::max(stat, std::abs(sgn(i) + g(i)));
    else
      stat = std::max(stat, std::max(std::abs(g(i)) - 1.0, 0.0));
  }
  out.stationarity = stat;

  double comp = 0.0;
  Index cursor = 0;
  if (ball_column) {
    out.eta = beta(cursor);
    comp += out.eta * std::abs(q.epsilon * q.epsilon - dist * dist);
    ++cursor;
  } else if (q.epsilon == 0.0 && !q.pattern.omega.empty()) {
    cursor += static_cast<Index>(q.pattern.omega.size());
  }
  for (std::size_t jj = 0; jj < near_active.size(); ++jj, ++cursor)
    comp += std::max(0.0, beta(cursor)) *
            std::abs(margins(near_active[jj]));
  out.complementarity = comp;
  return out;
}

}  // namespace relutrim
