#include "relutrim/oracle.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace relutrim {

namespace {

// ----------------------------------------------------------------------
// dense two-phase simplex, minimize c^T x s.t. A x = b, x >= 0
// ----------------------------------------------------------------------

struct SimplexOut {
  bool feasible = false;
  Vector x;
  double objective = 0.0;
};

SimplexOut simplex_solve(Matrix a, Vector b, const Vector& cost) {
  const Index rows = a.rows();
  const Index nreal = a.cols();
  const double tol = 1e-9 * std::max(1.0, a.cwiseAbs().maxCoeff());

  for (Index i = 0; i < rows; ++i) {
    if (b(i) < 0.0) {
      a.row(i) = -a.row(i);
      b(i) = -b(i);
    }
  }

  // Tableau over [real vars | artificials].
  const Index ncols = nreal + rows;
  Matrix t(rows, ncols);
  t.leftCols(nreal) = a;
  t.rightCols(rows) = Matrix::Identity(rows, rows);
  Vector rhs = b;
  std::vector<Index> basis(static_cast<std::size_t>(rows));
  for (Index i = 0; i < rows; ++i) basis[static_cast<std::size_t>(i)] = nreal + i;

  std::vector<char> dead_row(static_cast<std::size_t>(rows), 0);

  auto pivot = [&](Index pr, Index pc) {
    const double piv = t(pr, pc);
    t.row(pr) /= piv;
    rhs(pr) /= piv;
    for (Index i = 0; i < rows; ++i) {
      if (i == pr || dead_row[static_cast<std::size_t>(i)]) continue;
      const double f = t(i, pc);
      if (f != 0.0) {
        t.row(i) -= f * t.row(pr);
        rhs(i) -= f * rhs(pr);
      }
    }
    basis[static_cast<std::size_t>(pr)] = pc;
  };

  // Bland's rule keeps this finite even under degeneracy.
  auto run = [&](const Vector& c, Index usable_cols) -> bool {
    for (int guard = 0; guard < 100000; ++guard) {
      Index enter = -1;
      for (Index j = 0; j < usable_cols; ++j) {
        double red = c(j);
        for (Index i = 0; i < rows; ++i) {
          if (dead_row[static_cast<std::size_t>(i)]) continue;
          red -= c(basis[static_cast<std::size_t>(i)]) * t(i, j);
        }
        if (red < -tol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return true;  // optimal
      Index leave = -1;
      double best_ratio = 0.0;
      for (Index i = 0; i < rows; ++i) {
        if (dead_row[static_cast<std::size_t>(i)]) continue;
        if (t(i, enter) > tol) {
          const double ratio = rhs(i) / t(i, enter);
          if (leave < 0 || ratio < best_ratio - 1e-15 ||
              (std::abs(ratio - best_ratio) <= 1e-15 &&
               basis[static_cast<std::size_t>(i)] <
                   basis[static_cast<std::size_t>(leave)])) {
            leave = i;
            best_ratio = ratio;
          }
        }
      }
      if (leave < 0) return false;  // unbounded
      pivot(leave, enter);
    }
    throw std::runtime_error("simplex: iteration guard tripped");
  };

  // Phase 1.
  Vector c1 = Vector::Zero(ncols);
  c1.tail(rows).setOnes();
  if (!run(c1, ncols)) throw std::runtime_error("simplex: phase-1 unbounded");
  double art_mass = 0.0;
  for (Index i = 0; i < rows; ++i)
    if (basis[static_cast<std::size_t>(i)] >= nreal) art_mass += rhs(i);
  SimplexOut out;
  if (art_mass > 1e-7 * std::max(1.0, b.cwiseAbs().maxCoeff())) {
    out.feasible = false;
    return out;
  }
  // Drive leftover zero-level artificials out; a row with no real-column
  // pivot is redundant and gets dropped.
  for (Index i = 0; i < rows; ++i) {
    if (dead_row[static_cast<std::size_t>(i)]) continue;
    if (basis[static_cast<std::size_t>(i)] < nreal) continue;
    Index pc = -1;
    for (Index j = 0; j < nreal; ++j)
      if (std::abs(t(i, j)) > tol) {
        pc = j;
        break;
      }
    if (pc >= 0)
      pivot(i, pc);
    else
      dead_row[static_cast<std::size_t>(i)] = 1;
  }

  // Phase 2 over the real columns only.
  Vector c2 = Vector::Zero(ncols);
  c2.head(nreal) = cost;
  if (!run(c2, nreal)) throw std::runtime_error("simplex: phase-2 unbounded");

  out.feasible = true;
  out.x = Vector::Zero(nreal);
  for (Index i = 0; i < rows; ++i) {
    if (dead_row[static_cast<std::size_t>(i)]) continue;
    if (basis[static_cast<std::size_t>(i)] < nreal)
      out.x(basis[static_cast<std::size_t>(i)]) = rhs(i);
  }
  out.objective = cost.dot(out.x);
  return out;
}

// ----------------------------------------------------------------------
// constraint rows in u-space
// ----------------------------------------------------------------------

struct RowSystem {
  Matrix b_active;    // |Omega| x nv, ball rows
  Vector y_active;    // targets along omega
  Matrix g_inactive;  // |Omega_c| x nv, inequality rows
  Vector c_inactive;
};

RowSystem build_rows(const QcqpData& q) {
  const Index n = q.n(), p = q.p(), nv = q.n_vars();
  RowSystem rs;
  rs.b_active.resize(static_cast<Index>(q.pattern.omega.size()), nv);
  rs.b_active.setZero();
  rs.y_active.resize(rs.b_active.rows());
  for (std::size_t k = 0; k < q.pattern.omega.size(); ++k) {
    const Index idx = q.pattern.omega[k];
    const Index mi = idx / p, pi = idx % p;
    rs.b_active.row(static_cast<Index>(k)).segment(n * mi, n) =
        q.x.col(pi).transpose();
    rs.y_active(static_cast<Index>(k)) = q.targets(mi, pi);
  }
  rs.g_inactive.resize(static_cast<Index>(q.pattern.omega_c.size()), nv);
  rs.g_inactive.setZero();
  rs.c_inactive.resize(rs.g_inactive.rows());
  for (std::size_t k = 0; k < q.pattern.omega_c.size(); ++k) {
    const Index idx = q.pattern.omega_c[k];
    const Index mi = idx / p, pi = idx % p;
    rs.g_inactive.row(static_cast<Index>(k)).segment(n * mi, n) =
        q.x.col(pi).transpose();
    rs.c_inactive(static_cast<Index>(k)) = q.bounds(mi, pi);
  }
  return rs;
}

// ----------------------------------------------------------------------
// log-barrier interior point on the split variables
// ----------------------------------------------------------------------

// minimize f^T w subject to G w <= g and, when present, ||B w - y|| <= eps;
// all iterates strictly feasible. Newton with backtracking per centering
// step, t *= 20 until the duality-gap bound m/t is below tol.
struct BarrierProblem {
  Vector f;
  Matrix g_mat;
  Vector g_rhs;
  Matrix b_mat;  // 0 rows when no ball
  Vector y;
  double eps = 0.0;

  Index cons_count() const {
    return g_rhs.size() + (b_mat.rows() > 0 ? 1 : 0);
  }

  bool strictly_feasible(const Vector& w, double margin) const {
    if (((g_rhs - g_mat * w).array() <= margin).any()) return false;
    if (b_mat.rows() > 0 && (b_mat * w - y).norm() >= eps * (1.0 - 1e-14))
      return false;
    return true;
  }

  double phi(double t, const Vector& w) const {
    const Vector slack = g_rhs - g_mat * w;
    if ((slack.array() <= 0.0).any())
      return std::numeric_limits<double>::infinity();
    double val = t * f.dot(w) - slack.array().log().sum();
    if (b_mat.rows() > 0) {
      const double s = eps * eps - (b_mat * w - y).squaredNorm();
      if (s <= 0.0) return std::numeric_limits<double>::infinity();
      val -= std::log(s);
    }
    return val;
  }

  void derivatives(double t, const Vector& w, Vector& grad, Matrix& hess) const {
    const Vector slack = g_rhs - g_mat * w;
    const Vector inv = slack.cwiseInverse();
    grad = t * f + g_mat.transpose() * inv;
    hess = g_mat.transpose() * inv.array().square().matrix().asDiagonal() *
           g_mat;
    if (b_mat.rows() > 0) {
      const Vector r = b_mat * w - y;
      const double s = eps * eps - r.squaredNorm();
      const Vector br = b_mat.transpose() * r;
      grad += (2.0 / s) * br;
      hess += (2.0 / s) * (b_mat.transpose() * b_mat) +
              (4.0 / (s * s)) * (br * br.transpose());
    }
  }
};

// Returns the centered point for the final t; gap bound is cons/t.
Vector barrier_minimize(const BarrierProblem& bp, Vector w, double gap_tol,
                        double* gap_out,
                        const std::function<bool(const Vector&)>& early_stop) {
  const Index d = w.size();
  double t = 1.0;
  const double mu = 20.0;
  const double mcons = static_cast<double>(bp.cons_count());
  Vector grad(d);
  Matrix hess(d, d);
  for (int outer = 0; outer < 200; ++outer) {
    for (int inner = 0; inner < 200; ++inner) {
      bp.derivatives(t, w, grad, hess);
      Eigen::LDLT<Matrix> ldlt(hess);
      Vector step = -ldlt.solve(grad);
      if (!step.allFinite()) {
        ldlt.compute(hess + 1e-10 * Matrix::Identity(d, d));
        step = -ldlt.solve(grad);
      }
      const double decrement = -grad.dot(step);
      if (decrement / 2.0 <= 1e-11) break;
      double alpha = 1.0;
      const double phi0 = bp.phi(t, w);
      for (int ls = 0; ls < 100; ++ls) {
        const Vector cand = w + alpha * step;
        if (bp.strictly_feasible(cand, 0.0) &&
            bp.phi(t, cand) <= phi0 - 0.25 * alpha * decrement)
          break;
        alpha *= 0.5;
      }
      w += alpha * step;
      if (early_stop && early_stop(w)) {
        if (gap_out) *gap_out = mcons / t;
        return w;
      }
    }
    if (mcons / t <= gap_tol) break;
    t *= mu;
  }
  if (gap_out) *gap_out = mcons / t;
  return w;
}

}  // namespace

OracleResult oracle_solve_tiny(const QcqpData& q) {
  const Index n = q.n(), m = q.m(), nv = q.n_vars();
  if (nv > 8)
    throw std::invalid_argument("oracle_solve_tiny: more than 8 variables");
  if (q.p() > 12)
    throw std::invalid_argument("oracle_solve_tiny: more than 12 samples");

  const RowSystem rs = build_rows(q);
  const Index k_act = rs.b_active.rows();
  const Index k_in = rs.g_inactive.rows();
  OracleResult out;
  out.u = Matrix::Zero(n, m);

  if (q.epsilon == 0.0 || k_act == 0) {
    // LP: equality rows B(a - b) = y (skipped when eps > 0 with empty
    // active set), inequality rows G(a - b) + s = c, minimize sum(a + b).
    const Index d = 2 * nv + k_in;
    Matrix a(k_act + k_in, d);
    Vector b(k_act + k_in);
    a.setZero();
    a.block(0, 0, k_act, nv) = rs.b_active;
    a.block(0, nv, k_act, nv) = -rs.b_active;
    b.head(k_act) = rs.y_active;
    a.block(k_act, 0, k_in, nv) = rs.g_inactive;
    a.block(k_act, nv, k_in, nv) = -rs.g_inactive;
    a.block(k_act, 2 * nv, k_in, k_in) = Matrix::Identity(k_in, k_in);
    b.tail(k_in) = rs.c_inactive;
    Vector cost = Vector::Zero(d);
    cost.head(2 * nv).setOnes();
    const SimplexOut lp = simplex_solve(a, b, cost);
    if (!lp.feasible) {
      out.feasible = false;
      return out;
    }
    out.u.reshaped() = lp.x.head(nv) - lp.x.segment(nv, nv);
    out.objective = out.u.cwiseAbs().sum();
    out.feasible = true;
    out.gap = 0.0;
    return out;
  }

  // eps > 0: interior point. First the unconstrained least-squares fit,
  // which certifies ball infeasibility and seeds the strictly feasible
  // start.
  Vector u_ls =
      rs.b_active.completeOrthogonalDecomposition().solve(rs.y_active);
  const double ls_resid = (rs.b_active * u_ls - rs.y_active).norm();
  if (ls_resid > q.epsilon) {
    out.feasible = false;
    return out;
  }
  if (q.epsilon - ls_resid <= 1e-12 * std::max(1.0, q.epsilon))
    throw std::runtime_error(
        "oracle_solve_tiny: ball interior is numerically empty");

  // Split coordinates w = [a; b], u = a - b; the +1 shift keeps both parts
  // strictly positive without moving u.
  const Index d = 2 * nv;
  Vector w0(d);
  w0.head(nv) = u_ls.cwiseMax(0.0).array() + 1.0;
  w0.tail(nv) = (-u_ls).cwiseMax(0.0).array() + 1.0;

  Matrix split_g(k_in + d, d);
  Vector split_c(k_in + d);
  split_g.topLeftCorner(k_in, nv) = rs.g_inactive;
  split_g.topRightCorner(k_in, nv) = -rs.g_inactive;
  split_g.bottomRows(d) = -Matrix::Identity(d, d);
  split_c.head(k_in) = rs.c_inactive;
  split_c.tail(d).setZero();

  Matrix split_b(k_act, d);
  split_b.leftCols(nv) = rs.b_active;
  split_b.rightCols(nv) = -rs.b_active;

  Vector w = w0;
  if (k_in > 0) {
    const double worst = (rs.g_inactive * u_ls - rs.c_inactive).maxCoeff();
    if (worst >= -1e-9) {
      // Phase I: minimize the extra slack variable s with the relaxed rows
      // G u - c <= s until it dips below zero.
      BarrierProblem ph1;
      const Index d1 = d + 1;
      ph1.f = Vector::Zero(d1);
      ph1.f(d) = 1.0;
      // Without a pull on the split coordinates the barrier inflates them
      // along [e; e] (u and every margin stay fixed while each -log term
      // drops). The weight is small enough not to displace the slack
      // minimum we care about.
      ph1.f.head(d).setConstant(1e-6);
      ph1.g_mat.resize(k_in + d, d1);
      ph1.g_mat.setZero();
      ph1.g_mat.topLeftCorner(k_in, d) = split_g.topRows(k_in);
      ph1.g_mat.topRightCorner(k_in, 1).setConstant(-1.0);
      ph1.g_mat.bottomLeftCorner(d, d) = -Matrix::Identity(d, d);
      ph1.g_rhs.resize(k_in + d);
      ph1.g_rhs.head(k_in) = rs.c_inactive;
      ph1.g_rhs.tail(d).setZero();
      ph1.b_mat.resize(k_act, d1);
      ph1.b_mat.setZero();
      ph1.b_mat.leftCols(d) = split_b;
      ph1.y = rs.y_active;
      ph1.eps = q.epsilon;

      Vector w1(d1);
      w1.head(d) = w0;
      w1(d) = std::max(worst, 0.0) + 1.0;
      const double want = -1e-8 * std::max(1.0, rs.c_inactive.cwiseAbs().maxCoeff());
      bool found = false;
      w1 = barrier_minimize(
          ph1, w1, 1e-9, nullptr, [&](const Vector& cand) {
            if (cand(d) < want) {
              found = true;
              return true;
            }
            return false;
          });
      if (!found && w1(d) >= 0.0) {
        out.feasible = false;
        return out;
      }
      w = w1.head(d);
      // Shrink each split pair back toward the +1 shift; u = a - b and all
      // constraint margins are invariant, and phase II starts well scaled.
      for (Index i = 0; i < nv; ++i) {
        const double excess = std::min(w(i), w(nv + i)) - 1.0;
        if (excess > 0.0) {
          w(i) -= excess;
          w(nv + i) -= excess;
        }
      }
    }
  }

  BarrierProblem ph2;
  ph2.f = Vector::Ones(d);
  ph2.g_mat = split_g;
  ph2.g_rhs = split_c;
  ph2.b_mat = split_b;
  ph2.y = rs.y_active;
  ph2.eps = q.epsilon;
  if (!ph2.strictly_feasible(w, 0.0))
    throw std::runtime_error(
        "oracle_solve_tiny: feasible set has numerically empty interior");

  double gap = 0.0;
  // Anchor the target to the least-squares fit, a problem-scale quantity
  // that the start point cannot inflate.
  const double gap_tol = 1e-10 * std::max(1.0, u_ls.cwiseAbs().sum());
  w = barrier_minimize(ph2, w, gap_tol, &gap, nullptr);

  out.u.reshaped() = w.head(nv) - w.tail(nv);
  out.objective = out.u.cwiseAbs().sum();
  out.feasible = true;
  out.gap = gap;
  return out;
}

}  // namespace relutrim
