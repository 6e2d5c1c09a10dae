#include "clustsens/sensitivity.hpp"

#include <cmath>
#include <sstream>

#include "clustsens/errors.hpp"
#include "clustsens/normal.hpp"

namespace clustsens {

std::string to_string(EffectScale scale) {
  return scale == EffectScale::mean_difference ? "mean-difference" : "log-RR";
}

EffectScale effect_scale_of(OutcomeScale scale) {
  return scale == OutcomeScale::continuous ? EffectScale::mean_difference : EffectScale::log_rr;
}

std::string to_string(EffectDirection direction) {
  switch (direction) {
    case EffectDirection::positive:
      return "positive";
    case EffectDirection::negative:
      return "negative";
    case EffectDirection::null_inclusive:
      break;
  }
  return "null-inclusive";
}

namespace {

double wald_quantile(double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw DomainError("confidence level must lie in (0, 1), got " + std::to_string(level));
  }
  return normal_quantile(0.5 * (1.0 + level));
}

}  // namespace

ConfoundedEffect confounded_effect(const MixedModelFit& fit, double x, double level) {
  if (!fit.converged) throw DomainError("confounded_effect: fit did not converge");
  const double z = wald_quantile(level);
  const auto& v = fit.coef_covariance;
  const double variance = v(1, 1) + x * x * v(3, 3) + 2.0 * x * v(1, 3);
  if (!(variance > 0.0)) throw DomainError("confounded_effect: non-positive variance for the contrast");

  ConfoundedEffect e;
  e.x = x;
  e.estimate = fit.coefficients[1] + x * fit.coefficients[3];
  e.std_error = std::sqrt(variance);
  e.lb = e.estimate - z * e.std_error;
  e.ub = e.estimate + z * e.std_error;
  e.level = level;
  e.scale = effect_scale_of(fit.scale);
  return e;
}

ConfoundedEffect effect_from_interval(double estimate, double lb, double ub, double level, EffectScale scale,
                                      double x) {
  if (!(lb <= estimate && estimate <= ub)) {
    throw DomainError("interval must satisfy lb <= estimate <= ub");
  }
  const double z = wald_quantile(level);
  const double se = (ub - lb) / (2.0 * z);
  if (!(se > 0.0)) throw DomainError("interval has zero width");
  const double asymmetry = std::abs((ub - estimate) - (estimate - lb));
  if (asymmetry > 1e-6 * se) {
    std::ostringstream msg;
    msg << "interval (" << lb << ", " << ub << ") is not symmetric about " << estimate
        << " (implied standard error " << se << ")";
    throw DomainError(msg.str());
  }
  return {x, estimate, se, lb, ub, level, scale};
}

SensitivitySpec SensitivitySpec::continuous(double theta, double m1x, double m0x) {
  return {{{ConfounderKind::continuous_outcome, theta, m1x, m0x}}};
}
SensitivitySpec SensitivitySpec::binary_u(double theta, double p1x, double p0x) {
  return {{{ConfounderKind::binary_binary_u, theta, p1x, p0x}}};
}
SensitivitySpec SensitivitySpec::normal_u(double theta, double mu1x, double mu0x) {
  return {{{ConfounderKind::binary_normal_u, theta, mu1x, mu0x}}};
}

namespace {

EffectScale scale_of(ConfounderKind kind) {
  return kind == ConfounderKind::continuous_outcome ? EffectScale::mean_difference : EffectScale::log_rr;
}

}  // namespace

void SensitivitySpec::validate() const {
  if (confounders.empty()) throw DomainError("sensitivity spec lists no confounders");
  const EffectScale first = scale_of(confounders.front().kind);
  for (const auto& c : confounders) {
    if (scale_of(c.kind) != first) throw DomainError("sensitivity spec mixes outcome scales");
    if (!std::isfinite(c.theta) || !std::isfinite(c.treated) || !std::isfinite(c.control)) {
      throw DomainError("sensitivity parameters must be finite");
    }
    if (c.kind == ConfounderKind::binary_binary_u &&
        !(c.treated >= 0.0 && c.treated <= 1.0 && c.control >= 0.0 && c.control <= 1.0)) {
      throw DomainError("P1x and P0x must lie in [0, 1]");
    }
  }
}

EffectScale SensitivitySpec::scale() const {
  validate();
  return scale_of(confounders.front().kind);
}

BiasFactor bias_factor(const SensitivitySpec& spec) {
  spec.validate();
  double total = 0.0;
  for (const auto& c : spec.confounders) {
    switch (c.kind) {
      case ConfounderKind::continuous_outcome:
      case ConfounderKind::binary_normal_u:
        total += c.theta * (c.treated - c.control);
        break;
      case ConfounderKind::binary_binary_u: {
        // log of a ratio of two mixtures of e^theta and 1; expm1 keeps
        // precision when theta is small.
        const double em1 = std::expm1(c.theta);
        total += std::log1p(c.treated * em1) - std::log1p(c.control * em1);
        break;
      }
    }
  }
  return {total, spec.scale(), spec};
}

AdjustedEffect adjust(const ConfoundedEffect& effect, const BiasFactor& bias) {
  if (effect.scale != bias.scale) {
    throw DomainError("bias factor is on the " + to_string(bias.scale) + " scale but the effect is on the " +
                      to_string(effect.scale) + " scale");
  }
  return {effect.estimate - bias.value, effect.lb - bias.value, effect.ub - bias.value, effect, bias};
}

MinimalBiasFactor minimal_bias_factor(const ConfoundedEffect& effect) {
  if (effect.lb > 0.0) return {effect.lb, EffectDirection::positive};
  if (effect.ub < 0.0) return {-effect.ub, EffectDirection::negative};
  return {0.0, EffectDirection::null_inclusive};
}

bool explains_away(const ConfoundedEffect& effect, const BiasFactor& bias) {
  if (effect.scale != bias.scale) throw DomainError("bias factor and effect are on different scales");
  const auto minimal = minimal_bias_factor(effect);
  switch (minimal.direction) {
    case EffectDirection::positive:
      return bias.value >= minimal.value;
    case EffectDirection::negative:
      return -bias.value >= minimal.value;
    case EffectDirection::null_inclusive:
      break;
  }
  return true;
}

bool explains_away(const ConfoundedEffect& effect, const SensitivitySpec& spec) {
  return explains_away(effect, bias_factor(spec));
}

std::vector<std::string> approximation_warnings(const MixedModelFit& fit, const SensitivitySpec& spec) {
  std::vector<std::string> warnings;
  if (fit.scale != OutcomeScale::binary) return warnings;
  const double icc = icc_logistic(fit.random_intercept_variance);
  if (icc > 0.35) {
    std::ostringstream msg;
    msg << "fitted ICC " << icc << " exceeds 0.35; the log-RR bias factor approximation may be inaccurate";
    warnings.push_back(msg.str());
  }
  for (const auto& c : spec.confounders) {
    if (std::abs(c.theta) > 1.0) {
      std::ostringstream msg;
      msg << "|theta| = " << std::abs(c.theta) << " exceeds 1; the log-RR bias factor approximation may be inaccurate";
      warnings.push_back(msg.str());
    }
  }
  return warnings;
}

namespace {

void check_grid(int resolution) {
  if (resolution < 2) throw DomainError("contour resolution must be >= 2, got " + std::to_string(resolution));
}

inline double axis_value(const ContourAxis& axis, int i, int resolution) {
  return axis.lo + (axis.hi - axis.lo) * i / (resolution - 1);
}

inline ContourNode make_node(const ContourAxis& dm, const ContourAxis& th, int row, int col, int res, double thr) {
  ContourNode node;
  node.delta_m = axis_value(dm, col, res);
  node.theta = axis_value(th, row, res);
  node.bias_factor = node.delta_m * node.theta;
  node.explains = node.bias_factor >= thr;
  return node;
}

}  // namespace

std::vector<ContourNode> contour_grid_serial(ContourAxis delta_m, ContourAxis theta, int resolution,
                                             double threshold) {
  check_grid(resolution);
  std::vector<ContourNode> grid(static_cast<std::size_t>(resolution) * resolution);
  for (int row = 0; row < resolution; ++row) {
    for (int col = 0; col < resolution; ++col) {
      grid[static_cast<std::size_t>(row) * resolution + col] =
          make_node(delta_m, theta, row, col, resolution, threshold);
    }
  }
  return grid;
}

std::vector<ContourNode> contour_grid(ContourAxis delta_m, ContourAxis theta, int resolution, double threshold) {
  check_grid(resolution);
  std::vector<ContourNode> grid(static_cast<std::size_t>(resolution) * resolution);
#pragma omp parallel for schedule(static)
  for (int row = 0; row < resolution; ++row) {
    for (int col = 0; col < resolution; ++col) {
      grid[static_cast<std::size_t>(row) * resolution + col] =
          make_node(delta_m, theta, row, col, resolution, threshold);
    }
  }
  return grid;
}

}  // namespace clustsens
