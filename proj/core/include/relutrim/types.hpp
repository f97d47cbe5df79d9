#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace relutrim {

using Matrix = Eigen::MatrixXd;   // column-major f64 throughout
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Mask with the same shape as a target matrix Y; true marks entries that sit
// inside the quadratic (active) part of a layer constraint.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

}  // namespace relutrim
