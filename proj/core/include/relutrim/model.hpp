#pragma once

// Feed-forward ReLU network container and the handful of bulk operations the
// retraining pipelines need. Conventions, fixed across the whole library:
//
//   Y(0) = X (N0 x P, one sample per column)
//   Y(l) = max(W_l^T Y(l-1), 0)         hidden layers
//   Z    = W_L^T Y(L-1)                 when last_layer_linear is set
//
// W_l is stored as N_{l-1} x N_l, so columns are per-neuron weight vectors
// and adjacent layer dimensions must chain. There are no bias terms; nets
// that need an affine first layer set augment_input, which prepends a
// constant-one feature row to X inside forward(). That row's weights are
// ordinary entries of W_1 and get retrained and pruned like any other.

#include <utility>
#include <vector>

#include "relutrim/types.hpp"

namespace relutrim {

using WeightMatrix = Matrix;

struct NetworkModel {
  std::vector<WeightMatrix> layers;
  bool last_layer_linear = false;
  bool augment_input = false;

  Index num_layers() const { return static_cast<Index>(layers.size()); }
  // Dimension of the raw input forward() expects (before augmentation).
  Index input_dim() const;
  Index output_dim() const;
};

// Throws std::invalid_argument when dimensions do not chain, a weight is
// non-finite, or a layer is empty.
void validate(const NetworkModel& net);

// Activations at every level, levels[0] holding the effective input (with
// the constant row already prepended when augment_input is on).
struct SignalStack {
  std::vector<Matrix> levels;

  Index depth() const { return static_cast<Index>(levels.size()) - 1; }
  const Matrix& output() const { return levels.back(); }
};

// Per-layer masses s_l = sum of |entries| of W_l recorded by link_normalize,
// together with running products c_l = s_1 * ... * s_l. Signals of the
// normalized net relate to the originals by Y_norm(l) = Y(l) / c_l.
struct ScaleLedger {
  std::vector<double> layer_mass;
  std::vector<double> cumulative;
};

Matrix relu(const Matrix& m);

SignalStack forward(const NetworkModel& net, const Matrix& x);

// Rescales every layer to unit entrywise-l1 mass, W_l / s_l. Throws when a
// layer has zero mass (the rescaling would be undefined).
std::pair<NetworkModel, ScaleLedger> link_normalize(const NetworkModel& net);

// Exact inverse of link_normalize: multiplies layer l back by
// ledger.layer_mass[l].
NetworkModel undo_link_normalize(const NetworkModel& net,
                                 const ScaleLedger& ledger);

// Fraction of entries with |w| > zero_tol.
double sparsity_ratio(const Matrix& w, double zero_tol);

// ||z - zhat||_F / ||z||_F; throws when z is all-zero.
double relative_discrepancy(const Matrix& z, const Matrix& zhat);

// X with a constant-one row on top (layer-1 bias emulation).
Matrix augment(const Matrix& x);

}  // namespace relutrim
