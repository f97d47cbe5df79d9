#pragma once

// Self-contained data sourcing for the pruning pipelines: a two-class nested
// spiral generator and a small softmax SGD trainer. Nothing here depends on
// an external ML framework; the point is that a full train-then-prune run
// can be reproduced from a pair of seeds.

#include <cstdint>
#include <vector>

#include "relutrim/model.hpp"
#include "relutrim/rng.hpp"
#include "relutrim/types.hpp"

namespace relutrim {

struct SpiralConfig {
  Index points_per_class = 200;
  double turns = 2.0;         // angular range is turns * 2*pi
  double radial_scale = 1.0;  // r = radial_scale * theta
  double noise_std = 0.05;
  std::uint64_t seed = 0;
};

struct SpiralData {
  Matrix x;                 // 2 x (2 * points_per_class), one sample per column
  std::vector<int> labels;  // 0 or 1 per column
};

// Class 0 sits on (r cos t, r sin t) with r = radial_scale * t and t swept
// uniformly over [0.5, 0.5 + turns * 2*pi]; class 1 is the same arm rotated
// by pi. Independent Gaussian noise is added to every coordinate. Columns are
// ordered class 0 first, then class 1, both in increasing-angle order.
// Throws std::invalid_argument on points_per_class < 1 or negative noise.
SpiralData gen_spirals(const SpiralConfig& cfg);

struct TrainConfig {
  std::vector<Index> widths;  // layer sizes input..output, e.g. {2, 50, 50, 2}
  double learning_rate = 0.1;
  Index epochs = 2000;
  Index batch_size = 16;
  double l1_penalty = 0.0;  // subgradient shrinkage weight, 0 disables
  std::uint64_t seed = 0;
};

struct TrainResult {
  NetworkModel net;
  // Full-dataset cross-entropy evaluated after each epoch's updates.
  std::vector<double> epoch_loss;
};

// Scaled-Gaussian initialization, sqrt(2 / fan_in) per layer. The returned
// net has augment_input set (the constant-one row carries the first-layer
// bias, initialized to zero) and a linear last layer feeding the softmax.
NetworkModel init_mlp(const std::vector<Index>& widths, Rng& rng);

// Mean cross-entropy of softmax(scores) against integer labels. scores is
// K x B, one column per sample; labels are in [0, K).
double softmax_cross_entropy(const Matrix& scores,
                             const std::vector<int>& labels);

// Mean cross-entropy of net on (x, labels) plus its gradient with respect to
// every weight matrix, grads[l] matching net.layers[l] in shape. The l1
// penalty is not part of this loss; training applies it as a separate
// shrinkage step. Exposed so the gradients can be checked against finite
// differences.
double loss_and_gradients(const NetworkModel& net, const Matrix& x,
                          const std::vector<int>& labels,
                          std::vector<Matrix>& grads);

// Minibatch SGD on softmax cross-entropy with inverse-time step decay (the
// rate anneals to a tenth of learning_rate by the final epoch). Samples are
// reshuffled every epoch; with l1_penalty > 0 each step is followed by
// w -= lr * l1 * sign(w). Runs are deterministic per seed, and epochs = 0
// returns the seeded initialization untouched. Throws std::invalid_argument
// on a bad config or mismatched shapes and std::runtime_error when the loss
// turns non-finite.
TrainResult train_mlp(const Matrix& x, const std::vector<int>& labels,
                      const TrainConfig& cfg);

// Argmax of the network scores, one class id per column of x.
std::vector<int> predict_classes(const NetworkModel& net, const Matrix& x);

// Fraction of columns whose predicted class matches the label.
double accuracy(const NetworkModel& net, const Matrix& x,
                const std::vector<int>& labels);

}  // namespace relutrim
