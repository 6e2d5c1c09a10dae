#include "clustsens/fit_io.hpp"

#include "clustsens/errors.hpp"

namespace clustsens {

nlohmann::json fit_to_json(const MixedModelFit& fit) {
  nlohmann::json doc;
  doc["scale"] = to_string(fit.scale);
  doc["method"] = fit.method;
  doc["coefficients"] = {{"intercept", fit.coefficients[0]},
                         {"treatment", fit.coefficients[1]},
                         {"covariate_x", fit.coefficients[2]},
                         {"treatment_x_covariate", fit.coefficients[3]}};
  auto cov = nlohmann::json::array();
  for (int i = 0; i < kNumFixed; ++i) {
    for (int j = 0; j < kNumFixed; ++j) cov.push_back(fit.coef_covariance(i, j));
  }
  doc["covariance"] = cov;
  doc["variance_components"] = {{"random_intercept", fit.random_intercept_variance}};
  doc["variance_components"]["residual"] =
      fit.residual_variance ? nlohmann::json(*fit.residual_variance) : nlohmann::json(nullptr);
  doc["log_likelihood"] = fit.log_likelihood;
  doc["convergence"] = {{"converged", fit.converged}, {"boundary", fit.boundary}, {"iterations", fit.iterations}};
  doc["quadrature_points"] = fit.quadrature_points;
  doc["observations"] = fit.observations;
  doc["clusters"] = fit.clusters;
  return doc;
}

MixedModelFit fit_from_json(const nlohmann::json& doc) {
  try {
    MixedModelFit fit;
    fit.scale = parse_outcome_scale(doc.at("scale").get<std::string>());
    fit.method = doc.value("method", std::string());
    const auto& c = doc.at("coefficients");
    fit.coefficients = {c.at("intercept").get<double>(), c.at("treatment").get<double>(),
                        c.at("covariate_x").get<double>(), c.at("treatment_x_covariate").get<double>()};
    const auto& cov = doc.at("covariance");
    if (!cov.is_array() || cov.size() != kNumFixed * kNumFixed) {
      throw DomainError("fit document: covariance must hold 16 row-major entries");
    }
    for (int i = 0; i < kNumFixed; ++i) {
      for (int j = 0; j < kNumFixed; ++j) fit.coef_covariance(i, j) = cov[i * kNumFixed + j].get<double>();
    }
    const auto& vc = doc.at("variance_components");
    fit.random_intercept_variance = vc.at("random_intercept").get<double>();
    if (vc.contains("residual") && !vc["residual"].is_null()) fit.residual_variance = vc["residual"].get<double>();
    fit.log_likelihood = doc.at("log_likelihood").get<double>();
    const auto& conv = doc.at("convergence");
    fit.converged = conv.at("converged").get<bool>();
    fit.boundary = conv.value("boundary", false);
    fit.iterations = conv.value("iterations", 0);
    fit.quadrature_points = doc.value("quadrature_points", 0);
    fit.observations = doc.value("observations", std::size_t{0});
    fit.clusters = doc.value("clusters", std::size_t{0});
    return fit;
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("malformed fit document: ") + e.what());
  }
}

}  // namespace clustsens
