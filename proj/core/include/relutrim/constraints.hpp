#pragma once

// Constraint-set plumbing for the per-layer retraining programs. A layer with
// inputs X (N x P), nonnegative targets Y (M x P) and slack bounds V carries
// the feasible set
//
//   sum over active (m,p) of (u_m^T x_p - y_mp)^2  <=  eps^2
//   u_m^T x_p  <=  v_mp            for every inactive (m,p)
//
// where (m,p) is active iff y_mp > 0 (strictly; the threshold knob exists for
// activations imported from other toolchains that carry denormal noise).
//
// Stacking u = vec(U) and vectorizing targets row-major (linear index of
// (m,p) is m*P + p, i.e. vec of Y transposed) turns this into one quadratic
// constraint u^T Q u + 2 q^T u <= eps~ with Q = A_Omega A_Omega^T,
// q = -A_Omega y_Omega, eps~ = eps^2 - y_Omega^T y_Omega, plus the linear
// rows A_Omega_c^T u <= v_Omega_c, where A = kron(I_M, X). Nothing here ever
// materializes A; every operator application is a reshape of U, one product
// with X, and a mask.

#include <vector>

#include "relutrim/types.hpp"

namespace relutrim {

struct ActivePattern {
  Mask active;                 // M x P
  std::vector<Index> omega;    // linear indices m*P + p, ascending
  std::vector<Index> omega_c;  // complement, ascending

  Index m() const { return active.rows(); }
  Index p() const { return active.cols(); }
};

// Splits the entries of a nonnegative target matrix by y > threshold.
// Throws std::invalid_argument on negative or non-finite entries.
ActivePattern active_pattern(const Matrix& y, double activation_threshold = 0.0);

struct LayerConstraintSpec {
  Matrix x;  // N x P layer inputs
  Matrix y;  // M x P nonnegative targets
  Matrix v;  // M x P inactive-side bounds; all zeros in parallel mode
  double epsilon = 0.0;
  double activation_threshold = 0.0;
};

LayerConstraintSpec make_layer_spec(Matrix x, Matrix y, Matrix v, double epsilon,
                                    double activation_threshold = 0.0);
// Convenience for parallel-mode programs (V = 0).
LayerConstraintSpec make_layer_spec(Matrix x, Matrix y, double epsilon);

// The vectorized program data. `targets` duplicates Y and `bounds` duplicates
// V; only active entries of `targets` and inactive entries of `bounds` are
// ever read by the operators below.
struct QcqpData {
  Matrix x;
  Matrix targets;
  Matrix bounds;
  ActivePattern pattern;
  double epsilon = 0.0;

  Index n() const { return x.rows(); }
  Index m() const { return targets.rows(); }
  Index p() const { return x.cols(); }
  Index n_vars() const { return n() * m(); }
};

QcqpData build_layer_qcqp(const LayerConstraintSpec& spec);

// Program with every entry in the quadratic part (the linear last-layer
// retraining, ||U^T X - targets||_F <= eps). Targets may be negative here.
QcqpData build_dense_qcqp(Matrix x, Matrix targets, double epsilon);

// U^T X, laid out like the targets (M x P).
Matrix layer_predictions(const QcqpData& q, const Matrix& u);

// Gather entries of an M x P matrix along the given linear indices.
Vector gather(const Matrix& z, const std::vector<Index>& idx);
// Inverse of gather for disjoint index sets; unmentioned entries are zero.
Matrix scatter(const Vector& values, const std::vector<Index>& idx, Index m,
               Index p);

Vector y_omega(const QcqpData& q);
Vector v_omega_c(const QcqpData& q);
double epsilon_tilde(const QcqpData& q);
// q of the vectorized form, reshaped to N x M (column m is -X y_row_m with
// inactive entries zeroed).
Matrix linear_term_matrix(const QcqpData& q);

// u^T Q u + 2 q^T u for u = vec(U); equals ||A_Omega^T u - y_Omega||^2 -
// ||y_Omega||^2 and never touches Q entrywise.
double quad_constraint_value(const QcqpData& q, const Matrix& u);

// max(0, ||A_Omega^T u - y_Omega|| - eps)
double quad_residual(const QcqpData& q, const Matrix& u);
// max(0, max_j (A_Omega_c^T u - v_Omega_c)_j); 0 when there are no inactive
// entries.
double ineq_violation(const QcqpData& q, const Matrix& u);
// Both residuals within slack.
bool satisfies(const QcqpData& q, const Matrix& u, double slack);

// Sum of |u_m^T x_p - y_mp|^2 over the active set only (the cascade rule
// reads this off the previous layer's surrogate signals).
double active_misfit_sq(const QcqpData& q, const Matrix& u);

// Nonnegative sign-split form: u~ = [u+; -u-] >= 0, objective 1^T u~,
// Q~ = kron([[1,-1],[-1,1]], Q), q~ = [q; -q], P~ = [P, -P]. Values are
// evaluated through u = [I, -I] u~, which is algebraically identical.
struct SplitQcqpData {
  QcqpData base;

  Index n_vars() const { return 2 * base.n_vars(); }
};

SplitQcqpData split_nonneg(const QcqpData& q);

// [vec(U)+; -vec(U)-], the canonical split with disjoint supports.
Vector split_vector(const Matrix& u);
// u = [I, -I] u~ reshaped back to N x M.
Matrix recover_from_split(const SplitQcqpData& s, const Vector& u_split);
double split_objective(const Vector& u_split);
double split_quad_value(const SplitQcqpData& s, const Vector& u_split);
double split_quad_residual(const SplitQcqpData& s, const Vector& u_split);
double split_ineq_violation(const SplitQcqpData& s, const Vector& u_split);

// Per-neuron slice of a layer spec: row m of the targets with the balanced
// epsilon share eps * sqrt(1/M), so stitching the M singleton solutions back
// together satisfies the joint constraint set.
struct NeuronSubproblem {
  Matrix x;
  Vector y;  // length P
  Vector v;
  std::vector<Index> omega_row;
  double epsilon = 0.0;
  double activation_threshold = 0.0;
};

NeuronSubproblem build_neuron_subproblem(const LayerConstraintSpec& spec,
                                         Index neuron);
// M = 1 view of the subproblem, accepted by the same solver entry points.
QcqpData neuron_qcqp(const NeuronSubproblem& sub);

}  // namespace relutrim
