#include "relutrim/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace relutrim {

Index NetworkModel::input_dim() const {
  if (layers.empty()) return 0;
  return layers.front().rows() - (augment_input ? 1 : 0);
}

Index NetworkModel::output_dim() const {
  return layers.empty() ? 0 : layers.back().cols();
}

void validate(const NetworkModel& net) {
  if (net.layers.empty()) throw std::invalid_argument("network has no layers");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& w = net.layers[l];
    if (w.rows() < 1 || w.cols() < 1)
      throw std::invalid_argument("layer " + std::to_string(l) + " is empty");
    if (!w.allFinite())
      throw std::invalid_argument("layer " + std::to_string(l) +
                                  " has non-finite weights");
    if (l > 0 && net.layers[l - 1].cols() != w.rows())
      throw std::invalid_argument(
          "layer dimensions do not chain between layers " +
          std::to_string(l - 1) + " and " + std::to_string(l));
  }
}

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

Matrix augment(const Matrix& x) {
  Matrix out(x.rows() + 1, x.cols());
  out.row(0).setOnes();
  out.bottomRows(x.rows()) = x;
  return out;
}

SignalStack forward(const NetworkModel& net, const Matrix& x) {
  validate(net);
  if (x.cols() < 1) throw std::invalid_argument("forward: no samples");
  const Matrix input = net.augment_input ? augment(x) : x;
  if (input.rows() != net.layers.front().rows())
    throw std::invalid_argument("forward: input has " +
                                std::to_string(x.rows()) +
                                " rows, network expects " +
                                std::to_string(net.input_dim()));
  SignalStack stack;
  stack.levels.reserve(net.layers.size() + 1);
  stack.levels.push_back(input);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Matrix pre = net.layers[l].transpose() * stack.levels.back();
    const bool linear =
        net.last_layer_linear && l + 1 == net.layers.size();
    stack.levels.push_back(linear ? std::move(pre) : relu(pre));
  }
  return stack;
}

std::pair<NetworkModel, ScaleLedger> link_normalize(const NetworkModel& net) {
  validate(net);
  NetworkModel out = net;
  ScaleLedger ledger;
  double running = 1.0;
  for (auto& w : out.layers) {
    const double mass = w.cwiseAbs().sum();
    if (mass <= 0.0)
      throw std::invalid_argument("link_normalize: zero-mass layer");
    w /= mass;
    running *= mass;
    ledger.layer_mass.push_back(mass);
    ledger.cumulative.push_back(running);
  }
  return {std::move(out), std::move(ledger)};
}

NetworkModel undo_link_normalize(const NetworkModel& net,
                                 const ScaleLedger& ledger) {
  if (ledger.layer_mass.size() != net.layers.size())
    throw std::invalid_argument("undo_link_normalize: ledger length mismatch");
  NetworkModel out = net;
  for (std::size_t l = 0; l < out.layers.size(); ++l)
    out.layers[l] *= ledger.layer_mass[l];
  return out;
}

double sparsity_ratio(const Matrix& w, double zero_tol) {
  if (w.size() == 0) throw std::invalid_argument("sparsity_ratio: empty matrix");
  const Index nnz = (w.cwiseAbs().array() > zero_tol).count();
  return static_cast<double>(nnz) / static_cast<double>(w.size());
}

double relative_discrepancy(const Matrix& z, const Matrix& zhat) {
  if (z.rows() != zhat.rows() || z.cols() != zhat.cols())
    throw std::invalid_argument("relative_discrepancy: shape mismatch");
  const double denom = z.norm();
  if (denom == 0.0)
    throw std::invalid_argument("relative_discrepancy: reference is all-zero");
  return (z - zhat).norm() / denom;
}

}  // namespace relutrim
