#pragma once

#include <optional>
#include <string>
#include <vector>

#include "clustsens/mixed_models.hpp"

namespace clustsens {

// Scale of a treatment contrast: mean difference for continuous outcomes,
// log relative risk (approximated by the conditional log odds ratio) for
// binary outcomes.
enum class EffectScale { mean_difference, log_rr };

std::string to_string(EffectScale scale);
EffectScale effect_scale_of(OutcomeScale scale);

// Confounded conditional effect E_x^c = b1 + x*b3 with its Wald interval.
struct ConfoundedEffect {
  double x = 0.0;
  double estimate = 0.0;
  double std_error = 0.0;
  double lb = 0.0;
  double ub = 0.0;
  double level = 0.95;
  EffectScale scale = EffectScale::mean_difference;
};

/// Linear combination b1 + x*b3 with delta-method standard error
/// sqrt(v11 + x^2 v33 + 2x v13) and a normal-quantile interval.
/// Refuses a non-converged fit.
ConfoundedEffect confounded_effect(const MixedModelFit& fit, double x, double level = 0.95);

/// Rebuild an effect from a published (estimate, lb, ub) triple. The standard
/// error is back-computed from the interval width; throws DomainError when
/// the interval is not symmetric about the estimate to within 1e-6 * se.
ConfoundedEffect effect_from_interval(double estimate, double lb, double ub, double level = 0.95,
                                      EffectScale scale = EffectScale::mean_difference, double x = 0.0);

enum class ConfounderKind {
  continuous_outcome,  // theta, m1x, m0x
  binary_binary_u,     // theta, P1x, P0x
  binary_normal_u,     // theta, mu1x, mu0x
};

struct ConfounderSpec {
  ConfounderKind kind = ConfounderKind::continuous_outcome;
  double theta = 0.0;
  double treated = 0.0;  // m1x, P1x or mu1x
  double control = 0.0;  // m0x, P0x or mu0x
};

// One entry per (mutually independent) unmeasured confounder.
struct SensitivitySpec {
  std::vector<ConfounderSpec> confounders;

  static SensitivitySpec continuous(double theta, double m1x, double m0x);
  static SensitivitySpec binary_u(double theta, double p1x, double p0x);
  static SensitivitySpec normal_u(double theta, double mu1x, double mu0x);

  /// Throws DomainError for an empty list, mixed scales, or probabilities
  /// outside [0, 1].
  void validate() const;
  EffectScale scale() const;
};

struct BiasFactor {
  double value = 0.0;
  EffectScale scale = EffectScale::mean_difference;
  std::optional<SensitivitySpec> components;  // absent when supplied directly

  static BiasFactor direct(double value, EffectScale scale) { return {value, scale, std::nullopt}; }
};

/// Closed-form bias factor: theta (m1x - m0x) for continuous outcomes and
/// normal U, log{(P1 e^theta + 1 - P1) / (P0 e^theta + 1 - P0)} for binary U.
/// Lists sum over confounders.
BiasFactor bias_factor(const SensitivitySpec& spec);

struct AdjustedEffect {
  double estimate = 0.0;
  double lb = 0.0;
  double ub = 0.0;
  ConfoundedEffect source;
  BiasFactor bias;
};

/// Shift estimate and interval by -B. Throws DomainError on a scale mismatch.
AdjustedEffect adjust(const ConfoundedEffect& effect, const BiasFactor& bias);

enum class EffectDirection { positive, negative, null_inclusive };
std::string to_string(EffectDirection direction);

// Smallest bias (as a magnitude) that moves the interval onto the null.
// Positive effects need B >= lb, negative ones need -B >= -ub, and an
// interval already covering 0 needs nothing.
struct MinimalBiasFactor {
  double value = 0.0;
  EffectDirection direction = EffectDirection::null_inclusive;
};

MinimalBiasFactor minimal_bias_factor(const ConfoundedEffect& effect);

/// True iff the bias, signed toward the apparent direction, reaches the
/// minimal bias factor (equality counts).
bool explains_away(const ConfoundedEffect& effect, const BiasFactor& bias);
bool explains_away(const ConfoundedEffect& effect, const SensitivitySpec& spec);

/// Warnings for binary-outcome analyses outside the small-theta/small-ICC
/// regime where the log-RR bias factors are accurate: fitted ICC > 0.35 or
/// |theta| > 1. Empty for continuous outcomes.
std::vector<std::string> approximation_warnings(const MixedModelFit& fit, const SensitivitySpec& spec);

struct ContourAxis {
  double lo = 0.0;
  double hi = 1.0;
};

struct ContourNode {
  double delta_m = 0.0;
  double theta = 0.0;
  double bias_factor = 0.0;
  bool explains = false;
};

/// Grid of B = delta_m * theta over delta_m x theta, row-major with theta as
/// the row (outer) index and delta_m varying fastest. explains = B >= threshold.
/// Throws DomainError when resolution < 2.
std::vector<ContourNode> contour_grid(ContourAxis delta_m, ContourAxis theta, int resolution, double threshold);

/// Single-threaded reference for contour_grid; identical output.
std::vector<ContourNode> contour_grid_serial(ContourAxis delta_m, ContourAxis theta, int resolution,
                                             double threshold);

}  // namespace clustsens
