#pragma once

#include <Eigen/Dense>

namespace fedsde {

/// Model parameters in R^d.
using WeightVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Eigenvalue floor used for every PSD check in the library.
inline constexpr double kPsdTolerance = 1e-10;

}  // namespace fedsde
