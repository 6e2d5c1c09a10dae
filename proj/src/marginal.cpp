#include <cmath>
#include <numbers>
#include <string>

#include "clustsens/errors.hpp"
#include "clustsens/mixed_models.hpp"
#include "clustsens/quadrature.hpp"

namespace clustsens {

namespace {

constexpr double kLogisticVariance = std::numbers::pi * std::numbers::pi / 3.0;

inline double expit(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double linear_predictor(const Coefficients& beta, int a, double x) {
  return beta[0] + beta[1] * a + beta[2] * x + beta[3] * a * x;
}

// E[expit(sign * (center + sqrt(variance) Z))] for Z ~ N(0,1).
double expected_expit(const GaussHermiteRule& rule, double center, double variance, double sign) {
  if (variance <= 0.0) return expit(sign * center);
  const double spread = std::sqrt(2.0 * variance);
  double s = 0.0;
  for (int k = 0; k < rule.size(); ++k) s += rule.weights[k] * expit(sign * (center + spread * rule.nodes[k]));
  return s / std::sqrt(std::numbers::pi);
}

}  // namespace

double icc_logistic(double nu) {
  if (!(nu >= 0.0)) throw DomainError("icc_logistic: variance must be >= 0, got " + std::to_string(nu));
  return nu / (nu + kLogisticVariance);
}

double nu_from_icc(double icc) {
  if (!(icc >= 0.0 && icc < 1.0)) throw DomainError("nu_from_icc: icc must lie in [0, 1), got " + std::to_string(icc));
  return icc * kLogisticVariance / (1.0 - icc);
}

void UnmeasuredSpec::validate() const {
  if (kind == UnmeasuredKind::binary) {
    for (const auto& row : cell) {
      for (double p : row) {
        if (!(p >= 0.0 && p <= 1.0)) throw DomainError("P(U=1 | a, x) must lie in [0, 1]");
      }
    }
  } else if (!(u_variance > 0.0)) {
    throw DomainError("variance of U must be > 0");
  }
}

double UnmeasuredSpec::cell_value(int a, double x) const {
  if ((a != 0 && a != 1) || (x != 0.0 && x != 1.0)) {
    throw DomainError("unmeasured-confounder cells are defined for a, x in {0, 1}");
  }
  return cell[a][static_cast<int>(x)];
}

double marginal_logit_exact(const Coefficients& beta, const UnmeasuredSpec& u, double nu, int a, double x,
                            int quadrature_points) {
  if (!(nu >= 0.0)) throw DomainError("marginal_logit_exact: nu must be >= 0");
  u.validate();
  const double eta = linear_predictor(beta, a, x);
  if (nu == 0.0 && u.theta == 0.0) return eta;

  const auto rule = gauss_hermite(quadrature_points);
  const double value = u.cell_value(a, x);
  // Integrate the event and non-event probabilities separately so the logit
  // keeps full precision in both tails.
  double p1 = 0.0, p0 = 0.0;
  if (u.kind == UnmeasuredKind::binary) {
    p1 = value * expected_expit(rule, eta + u.theta, nu, 1.0) + (1.0 - value) * expected_expit(rule, eta, nu, 1.0);
    p0 = value * expected_expit(rule, eta + u.theta, nu, -1.0) + (1.0 - value) * expected_expit(rule, eta, nu, -1.0);
  } else {
    const double spread = std::sqrt(2.0 * u.u_variance);
    for (int i = 0; i < rule.size(); ++i) {
      const double w = rule.weights[i] / std::sqrt(std::numbers::pi);
      const double shifted = eta + u.theta * (value + spread * rule.nodes[i]);
      p1 += w * expected_expit(rule, shifted, nu, 1.0);
      p0 += w * expected_expit(rule, shifted, nu, -1.0);
    }
  }
  return std::log(p1) - std::log(p0);
}

double marginal_logit_approx(const Coefficients& beta, const UnmeasuredSpec& u, double nu, int a, double x) {
  u.validate();
  const double eta = linear_predictor(beta, a, x);
  const double value = u.cell_value(a, x);
  if (u.kind == UnmeasuredKind::binary) {
    return eta + std::log(value * std::exp(u.theta + 0.5 * nu) + (1.0 - value) * std::exp(0.5 * nu));
  }
  return eta + u.theta * value + 0.5 * (u.theta * u.theta * u.u_variance + nu);
}

}  // namespace clustsens
