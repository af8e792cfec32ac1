#pragma once

#include <Eigen/Dense>

namespace crynet::cells {

/// Matrix exponential by scaling and squaring with a [6/6] Padé approximant.
Eigen::MatrixXd expm_pade6(const Eigen::MatrixXd& a);

/// Largest eigenvalue modulus of a square matrix.
double spectral_radius(const Eigen::MatrixXd& a);

/// Shifted Legendre polynomial P_i(2x - 1); equals 1 at x = 1 for every i.
double shifted_legendre(int i, double x);

}  // namespace crynet::cells
