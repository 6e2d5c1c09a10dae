#include "clustsens/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Eigenvalues>

#include "clustsens/errors.hpp"

namespace clustsens {

GaussHermiteRule gauss_hermite(int n) {
  if (n < 1) throw DomainError("gauss_hermite: need at least one node, got " + std::to_string(n));

  // Starting values are the eigenvalues of the Jacobi matrix; Newton on the
  // orthonormal recurrence then polishes each root and yields its weight.
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) sub(k - 1) = std::sqrt(0.5 * k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd start = solver.eigenvalues();  // ascending

  const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = start(n - 1 - i);
    double pp = 0.0;
    bool done = false;
    for (int its = 0; its < 100; ++its) {
      double p1 = pim4;
      double p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) {
        done = true;
        break;
      }
    }
    if (!done) {
      throw ConvergenceError("gauss_hermite: root " + std::to_string(i) + " of " + std::to_string(n) +
                             " did not converge");
    }
    if (n % 2 == 1 && i == m - 1) z = 0.0;
    rule.nodes[n - 1 - i] = z;
    rule.nodes[i] = -z;
    rule.weights[n - 1 - i] = rule.weights[i] = 2.0 / (pp * pp);
  }
  return rule;
}

}  // namespace clustsens
