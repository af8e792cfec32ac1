#include "crynet/cells/linalg.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "crynet/errors.hpp"

namespace crynet::cells {

Eigen::MatrixXd expm_pade6(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw ShapeError("expm: matrix must be square");
  constexpr int kOrder = 6;
  const double norm = a.cwiseAbs().colwise().sum().maxCoeff();
  if (!std::isfinite(norm)) throw NumericalError("expm: non-finite input");
  // Scale so the 1-norm is at most 0.5; the [6/6] error is then far below double epsilon.
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Eigen::MatrixXd x = a / std::ldexp(1.0, squarings);

  const Eigen::Index n = a.rows();
  Eigen::MatrixXd num = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd den = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  double c = 1.0;
  for (int k = 1; k <= kOrder; ++k) {
    c *= static_cast<double>(kOrder - k + 1) / static_cast<double>(k * (2 * kOrder - k + 1));
    power = power * x;
    num += c * power;
    den += ((k % 2 == 0) ? c : -c) * power;
  }
  Eigen::MatrixXd r = den.partialPivLu().solve(num);
  for (int s = 0; s < squarings; ++s) r = r * r;
  if (!r.allFinite()) throw NumericalError("expm: result is not finite");
  return r;
}

double spectral_radius(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw ShapeError("spectral_radius: matrix must be square");
  Eigen::EigenSolver<Eigen::MatrixXd> solver(a, false);
  if (solver.info() != Eigen::Success) throw NumericalError("spectral_radius: eigenvalue solver failed");
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

double shifted_legendre(int i, double x) {
  const double y = 2.0 * x - 1.0;
  if (i == 0) return 1.0;
  double prev = 1.0;
  double cur = y;
  for (int n = 1; n < i; ++n) {
    const double next = ((2.0 * n + 1.0) * y * cur - n * prev) / (n + 1.0);
    prev = cur;
    cur = next;
  }
  return cur;
}

}  // namespace crynet::cells
