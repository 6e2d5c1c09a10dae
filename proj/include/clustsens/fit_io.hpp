#pragma once

#include "json.hpp"

#include "clustsens/mixed_models.hpp"

namespace clustsens {

/// Fit document: coefficients, row-major covariance, variance components,
/// log-likelihood, convergence and quadrature metadata.
nlohmann::json fit_to_json(const MixedModelFit& fit);

/// Inverse of fit_to_json. Throws DomainError on a malformed document.
MixedModelFit fit_from_json(const nlohmann::json& doc);

}  // namespace clustsens
