#include "relutrim/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace relutrim {

ActivePattern active_pattern(const Matrix& y, double activation_threshold) {
  if (!y.allFinite())
    throw std::invalid_argument("active_pattern: non-finite target entry");
  if ((y.array() < 0.0).any())
    throw std::invalid_argument("active_pattern: negative target entry");
  if (activation_threshold < 0.0)
    throw std::invalid_argument("active_pattern: negative threshold");
  ActivePattern pat;
  pat.active = y.array() > activation_threshold;
  const Index m = y.rows(), p = y.cols();
  pat.omega.reserve(static_cast<std::size_t>(y.size()));
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < p; ++j)
      (pat.active(i, j) ? pat.omega : pat.omega_c).push_back(i * p + j);
  std::sort(pat.omega.begin(), pat.omega.end());
  std::sort(pat.omega_c.begin(), pat.omega_c.end());
  return pat;
}

LayerConstraintSpec make_layer_spec(Matrix x, Matrix y, Matrix v,
                                    double epsilon,
                                    double activation_threshold) {
  LayerConstraintSpec spec;
  spec.x = std::move(x);
  spec.y = std::move(y);
  spec.v = std::move(v);
  spec.epsilon = epsilon;
  spec.activation_threshold = activation_threshold;
  return spec;
}

LayerConstraintSpec make_layer_spec(Matrix x, Matrix y, double epsilon) {
  Matrix v = Matrix::Zero(y.rows(), y.cols());
  return make_layer_spec(std::move(x), std::move(y), std::move(v), epsilon);
}

namespace {

void check_spec_shapes(const LayerConstraintSpec& spec) {
  if (spec.x.rows() < 1 || spec.x.cols() < 1)
    throw std::invalid_argument("layer spec: empty input matrix");
  if (spec.y.cols() != spec.x.cols())
    throw std::invalid_argument("layer spec: X has " +
                                std::to_string(spec.x.cols()) +
                                " samples but Y has " +
                                std::to_string(spec.y.cols()));
  if (spec.v.rows() != spec.y.rows() || spec.v.cols() != spec.y.cols())
    throw std::invalid_argument("layer spec: V shape differs from Y");
  if (!spec.x.allFinite() || !spec.v.allFinite())
    throw std::invalid_argument("layer spec: non-finite entry");
  if (spec.epsilon < 0.0 || !std::isfinite(spec.epsilon))
    throw std::invalid_argument("layer spec: epsilon must be >= 0");
}

}  // namespace

QcqpData build_layer_qcqp(const LayerConstraintSpec& spec) {
  check_spec_shapes(spec);
  QcqpData q;
  q.pattern = active_pattern(spec.y, spec.activation_threshold);
  q.x = spec.x;
  q.targets = spec.y;
  q.bounds = spec.v;
  q.epsilon = spec.epsilon;
  return q;
}

QcqpData build_dense_qcqp(Matrix x, Matrix targets, double epsilon) {
  if (x.cols() != targets.cols())
    throw std::invalid_argument("dense qcqp: sample count mismatch");
  if (!x.allFinite() || !targets.allFinite())
    throw std::invalid_argument("dense qcqp: non-finite entry");
  if (epsilon < 0.0 || !std::isfinite(epsilon))
    throw std::invalid_argument("dense qcqp: epsilon must be >= 0");
  QcqpData q;
  q.pattern.active = Mask::Constant(targets.rows(), targets.cols(), true);
  const Index m = targets.rows(), p = targets.cols();
  q.pattern.omega.resize(static_cast<std::size_t>(m * p));
  for (Index i = 0; i < m * p; ++i) q.pattern.omega[i] = i;
  q.x = std::move(x);
  q.targets = std::move(targets);
  q.bounds = Matrix::Zero(m, p);
  q.epsilon = epsilon;
  return q;
}

Matrix layer_predictions(const QcqpData& q, const Matrix& u) {
  if (u.rows() != q.n() || u.cols() != q.m())
    throw std::invalid_argument("layer_predictions: U must be N x M");
  return u.transpose() * q.x;
}

Vector gather(const Matrix& z, const std::vector<Index>& idx) {
  const Index p = z.cols();
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k)
    out(static_cast<Index>(k)) = z(idx[k] / p, idx[k] % p);
  return out;
}

Matrix scatter(const Vector& values, const std::vector<Index>& idx, Index m,
               Index p) {
  if (values.size() != static_cast<Index>(idx.size()))
    throw std::invalid_argument("scatter: size mismatch");
  Matrix out = Matrix::Zero(m, p);
  for (std::size_t k = 0; k < idx.size(); ++k)
    out(idx[k] / p, idx[k] % p) = values(static_cast<Index>(k));
  return out;
}

Vector y_omega(const QcqpData& q) { return gather(q.targets, q.pattern.omega); }

Vector v_omega_c(const QcqpData& q) {
  return gather(q.bounds, q.pattern.omega_c);
}

double epsilon_tilde(const QcqpData& q) {
  return q.epsilon * q.epsilon - y_omega(q).squaredNorm();
}

Matrix linear_term_matrix(const QcqpData& q) {
  const Matrix masked =
      q.pattern.active.select(q.targets, Matrix::Zero(q.m(), q.p()));
  return -(q.x * masked.transpose());
}

double quad_constraint_value(const QcqpData& q, const Matrix& u) {
  const Matrix z = layer_predictions(q, u);
  const Vector za = gather(z, q.pattern.omega);
  const Vector ya = gather(q.targets, q.pattern.omega);
  return za.squaredNorm() - 2.0 * ya.dot(za);
}

double quad_residual(const QcqpData& q, const Matrix& u) {
  const Matrix z = layer_predictions(q, u);
  const double dist =
      (gather(z, q.pattern.omega) - gather(q.targets, q.pattern.omega)).norm();
  return std::max(0.0, dist - q.epsilon);
}

double ineq_violation(const QcqpData& q, const Matrix& u) {
  if (q.pattern.omega_c.empty()) return 0.0;
  const Matrix z = layer_predictions(q, u);
  const Vector t = gather(z, q.pattern.omega_c);
  const Vector c = gather(q.bounds, q.pattern.omega_c);
  return std::max(0.0, (t - c).maxCoeff());
}

bool satisfies(const QcqpData& q, const Matrix& u, double slack) {
  return quad_residual(q, u) <= slack && ineq_violation(q, u) <= slack;
}

double active_misfit_sq(const QcqpData& q, const Matrix& u) {
  const Matrix z = layer_predictions(q, u);
  return (gather(z, q.pattern.omega) - gather(q.targets, q.pattern.omega))
      .squaredNorm();
}

SplitQcqpData split_nonneg(const QcqpData& q) { return SplitQcqpData{q}; }

Vector split_vector(const Matrix& u) {
  const Index n = u.size();
  Vector out(2 * n);
  const auto flat = u.reshaped();
  out.head(n) = flat.cwiseMax(0.0);
  out.tail(n) = (-flat).cwiseMax(0.0);
  return out;
}

Matrix recover_from_split(const SplitQcqpData& s, const Vector& u_split) {
  const Index n = s.base.n_vars();
  if (u_split.size() != 2 * n)
    throw std::invalid_argument("recover_from_split: length mismatch");
  Matrix u(s.base.n(), s.base.m());
  u.reshaped() = u_split.head(n) - u_split.tail(n);
  return u;
}

double split_objective(const Vector& u_split) { return u_split.sum(); }

double split_quad_value(const SplitQcqpData& s, const Vector& u_split) {
  return quad_constraint_value(s.base, recover_from_split(s, u_split));
}

double split_quad_residual(const SplitQcqpData& s, const Vector& u_split) {
  return quad_residual(s.base, recover_from_split(s, u_split));
}

double split_ineq_violation(const SplitQcqpData& s, const Vector& u_split) {
  return ineq_violation(s.base, recover_from_split(s, u_split));
}

NeuronSubproblem build_neuron_subproblem(const LayerConstraintSpec& spec,
                                         Index neuron) {
  check_spec_shapes(spec);
  if (neuron < 0 || neuron >= spec.y.rows())
    throw std::invalid_argument("build_neuron_subproblem: neuron index " +
                                std::to_string(neuron) + " out of range");
  const ActivePattern full = active_pattern(spec.y, spec.activation_threshold);
  NeuronSubproblem sub;
  sub.x = spec.x;
  sub.y = spec.y.row(neuron).transpose();
  sub.v = spec.v.row(neuron).transpose();
  sub.epsilon =
      spec.epsilon * std::sqrt(1.0 / static_cast<double>(spec.y.rows()));
  sub.activation_threshold = spec.activation_threshold;
  for (Index p = 0; p < spec.y.cols(); ++p)
    if (full.active(neuron, p)) sub.omega_row.push_back(p);
  return sub;
}

QcqpData neuron_qcqp(const NeuronSubproblem& sub) {
  LayerConstraintSpec spec;
  spec.x = sub.x;
  spec.y = sub.y.transpose();
  spec.v = sub.v.transpose();
  spec.epsilon = sub.epsilon;
  spec.activation_threshold = sub.activation_threshold;
  return build_layer_qcqp(spec);
}

}  // namespace relutrim
