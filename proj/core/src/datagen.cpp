#include "relutrim/datagen.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace relutrim {

namespace {

void check_spiral_config(const SpiralConfig& cfg) {
  if (cfg.points_per_class < 1)
    throw std::invalid_argument("gen_spirals: points_per_class must be >= 1");
  if (!(cfg.noise_std >= 0.0))
    throw std::invalid_argument("gen_spirals: noise_std must be >= 0");
  if (!std::isfinite(cfg.turns) || !std::isfinite(cfg.radial_scale))
    throw std::invalid_argument("gen_spirals: non-finite config value");
}

void check_train_config(const TrainConfig& cfg) {
  if (cfg.widths.size() < 2)
    throw std::invalid_argument(
        "train_mlp: widths needs at least input and output sizes");
  for (Index w : cfg.widths)
    if (w < 1) throw std::invalid_argument("train_mlp: widths must be >= 1");
  if (!(cfg.learning_rate > 0.0))
    throw std::invalid_argument("train_mlp: learning_rate must be > 0");
  if (cfg.epochs < 0)
    throw std::invalid_argument("train_mlp: epochs must be >= 0");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("train_mlp: batch_size must be >= 1");
  if (!(cfg.l1_penalty >= 0.0))
    throw std::invalid_argument("train_mlp: l1_penalty must be >= 0");
}

void check_labels(const std::vector<int>& labels, Index p, Index classes,
                  const char* who) {
  if (static_cast<Index>(labels.size()) != p)
    throw std::invalid_argument(std::string(who) +
                                ": one label per sample column required");
  for (int c : labels)
    if (c < 0 || c >= classes)
      throw std::invalid_argument(std::string(who) + ": label " +
                                  std::to_string(c) + " outside [0, " +
                                  std::to_string(classes) + ")");
}

}  // namespace

SpiralData gen_spirals(const SpiralConfig& cfg) {
  check_spiral_config(cfg);
  const Index n = cfg.points_per_class;
  Rng rng(cfg.seed);

  SpiralData data;
  data.x.resize(2, 2 * n);
  data.labels.resize(static_cast<std::size_t>(2 * n));

  const double theta0 = 0.5;
  const double span = cfg.turns * 2.0 * M_PI;
  const double step = n > 1 ? span / static_cast<double>(n - 1) : 0.0;
  for (Index i = 0; i < n; ++i) {
    const double theta = theta0 + step * static_cast<double>(i);
    const double r = cfg.radial_scale * theta;
    const double bx = r * std::cos(theta);
    const double by = r * std::sin(theta);
    // Class 1 is the pi rotation of the same arm; each point gets its own
    // noise draw so the two arms are not mirror images sample by sample.
    data.x(0, i) = bx + cfg.noise_std * rng.gaussian();
    data.x(1, i) = by + cfg.noise_std * rng.gaussian();
    data.x(0, n + i) = -bx + cfg.noise_std * rng.gaussian();
    data.x(1, n + i) = -by + cfg.noise_std * rng.gaussian();
    data.labels[static_cast<std::size_t>(i)] = 0;
    data.labels[static_cast<std::size_t>(n + i)] = 1;
  }
  return data;
}

NetworkModel init_mlp(const std::vector<Index>& widths, Rng& rng) {
  NetworkModel net;
  net.augment_input = true;
  net.last_layer_linear = true;
  const Index depth = static_cast<Index>(widths.size()) - 1;
  net.layers.reserve(static_cast<std::size_t>(depth));
  for (Index l = 0; l < depth; ++l) {
    const Index fan_in = widths[static_cast<std::size_t>(l)];
    const Index fan_out = widths[static_cast<std::size_t>(l + 1)];
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    if (l == 0) {
      // Row 0 of W_1 multiplies the constant-one feature, so it is the bias
      // row; biases start at zero.
      Matrix w(fan_in + 1, fan_out);
      w.row(0).setZero();
      w.bottomRows(fan_in) = scale * rng.gaussian_matrix(fan_in, fan_out);
      net.layers.push_back(std::move(w));
    } else {
      net.layers.push_back(scale * rng.gaussian_matrix(fan_in, fan_out));
    }
  }
  return net;
}

double softmax_cross_entropy(const Matrix& scores,
                             const std::vector<int>& labels) {
  check_labels(labels, scores.cols(), scores.rows(), "softmax_cross_entropy");
  double total = 0.0;
  for (Index p = 0; p < scores.cols(); ++p) {
    const double zmax = scores.col(p).maxCoeff();
    const double lse =
        zmax + std::log((scores.col(p).array() - zmax).exp().sum());
    total += lse - scores(labels[static_cast<std::size_t>(p)], p);
  }
  return total / static_cast<double>(scores.cols());
}

double loss_and_gradients(const NetworkModel& net, const Matrix& x,
                          const std::vector<int>& labels,
                          std::vector<Matrix>& grads) {
  validate(net);
  if (!net.last_layer_linear)
    throw std::invalid_argument(
        "loss_and_gradients: net must end in a linear layer");
  const SignalStack sig = forward(net, x);
  const Matrix& scores = sig.output();
  const Index classes = scores.rows();
  const Index batch = scores.cols();
  check_labels(labels, batch, classes, "loss_and_gradients");

  const double loss = softmax_cross_entropy(scores, labels);

  // delta = (softmax(scores) - onehot) / batch, then walk the chain backwards:
  //   grad W_l = Y(l-1) delta^T,  delta <- (W_l delta) masked by Y(l-1) > 0.
  Matrix delta(classes, batch);
  for (Index p = 0; p < batch; ++p) {
    const double zmax = scores.col(p).maxCoeff();
    const Vector e = (scores.col(p).array() - zmax).exp();
    delta.col(p) = e / e.sum();
    delta(labels[static_cast<std::size_t>(p)], p) -= 1.0;
  }
  delta /= static_cast<double>(batch);

  const Index depth = net.num_layers();
  grads.assign(static_cast<std::size_t>(depth), Matrix());
  for (Index l = depth - 1; l >= 0; --l) {
    const Matrix& below = sig.levels[static_cast<std::size_t>(l)];
    grads[static_cast<std::size_t>(l)].noalias() = below * delta.transpose();
    if (l > 0) {
      Matrix back = net.layers[static_cast<std::size_t>(l)] * delta;
      delta = (below.array() > 0.0).select(back, 0.0);
    }
  }
  return loss;
}

TrainResult train_mlp(const Matrix& x, const std::vector<int>& labels,
                      const TrainConfig& cfg) {
  check_train_config(cfg);
  if (x.rows() != cfg.widths.front())
    throw std::invalid_argument("train_mlp: input rows do not match widths[0]");
  const Index p = x.cols();
  check_labels(labels, p, cfg.widths.back(), "train_mlp");

  Rng rng(cfg.seed);
  TrainResult result;
  result.net = init_mlp(cfg.widths, rng);
  result.epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));

  std::vector<Index> order(static_cast<std::size_t>(p));
  for (Index i = 0; i < p; ++i) order[static_cast<std::size_t>(i)] = i;

  std::vector<Matrix> grads;
  Matrix xb;
  std::vector<int> lb;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Cosine annealing from learning_rate down to a hundredth of it. The
    // rate stays near full strength for the first third and tapers to
    // almost nothing, so constant-rate minibatch noise dies out and the
    // loss curve is monotone after light smoothing.
    const double frac = static_cast<double>(epoch) /
                        static_cast<double>(std::max<Index>(1, cfg.epochs - 1));
    const double lr = cfg.learning_rate *
                      (0.01 + 0.99 * 0.5 * (1.0 + std::cos(M_PI * frac)));
    rng.shuffle(order);
    for (Index start = 0; start < p; start += cfg.batch_size) {
      const Index b = std::min(cfg.batch_size, p - start);
      xb.resize(x.rows(), b);
      lb.resize(static_cast<std::size_t>(b));
      for (Index j = 0; j < b; ++j) {
        const Index src = order[static_cast<std::size_t>(start + j)];
        xb.col(j) = x.col(src);
        lb[static_cast<std::size_t>(j)] =
            labels[static_cast<std::size_t>(src)];
      }
      const double loss = loss_and_gradients(result.net, xb, lb, grads);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_mlp: loss became non-finite at epoch " +
                                 std::to_string(epoch));
      // Batch gradients here are heavy-tailed: a far-out sample on the wrong
      // side can blow the norm up by two orders of magnitude and knock the
      // fit apart for hundreds of epochs. Capping the global norm at 1 only
      // touches that tail (roughly the top decile of steps).
      double grad_sq = 0.0;
      for (const Matrix& g : grads) grad_sq += g.squaredNorm();
      const double clip =
          grad_sq > 1.0 ? 1.0 / std::sqrt(grad_sq) : 1.0;
      for (Index l = 0; l < result.net.num_layers(); ++l) {
        Matrix& w = result.net.layers[static_cast<std::size_t>(l)];
        w.noalias() -= (lr * clip) * grads[static_cast<std::size_t>(l)];
        if (cfg.l1_penalty > 0.0) {
          w.array() -= lr * cfg.l1_penalty * w.array().sign();
        }
      }
    }
    // Loss over the whole set after this epoch's updates. Averaging the
    // minibatch losses instead would fold intra-epoch progress into the
    // number and make the curve look noisier than the model actually is.
    result.epoch_loss.push_back(
        softmax_cross_entropy(forward(result.net, x).output(), labels));
  }
  return result;
}

std::vector<int> predict_classes(const NetworkModel& net, const Matrix& x) {
  const Matrix scores = forward(net, x).output();
  std::vector<int> out(static_cast<std::size_t>(scores.cols()));
  for (Index p = 0; p < scores.cols(); ++p) {
    Index best = 0;
    scores.col(p).maxCoeff(&best);
    out[static_cast<std::size_t>(p)] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const NetworkModel& net, const Matrix& x,
                const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != x.cols())
    throw std::invalid_argument("accuracy: one label per sample required");
  const std::vector<int> pred = predict_classes(net, x);
  Index hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (pred[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(x.cols());
}

}  // namespace relutrim
