#pragma once

namespace clustsens {

/// Standard normal density.
double normal_pdf(double x);

/// Standard normal CDF, absolute error below 1e-15 over the real line.
double normal_cdf(double x);

/// Inverse of the standard normal CDF on (0, 1). Throws DomainError outside
/// the open interval. Rational initial guess refined by two Halley steps.
double normal_quantile(double p);

}  // namespace clustsens
