#include "clustsens/meta.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "clustsens/errors.hpp"
#include "clustsens/normal.hpp"

namespace clustsens {

std::string to_string(MetaDirection direction) {
  return direction == MetaDirection::positive ? "positive" : "negative";
}

MetaDirection parse_meta_direction(const std::string& text) {
  if (text == "positive") return MetaDirection::positive;
  if (text == "negative") return MetaDirection::negative;
  throw DomainError("direction must be 'positive' or 'negative', got '" + text + "'");
}

MetaFit meta_fit_from_summary(double mu_hat, double v_hat) {
  if (!std::isfinite(mu_hat)) throw DomainError("pooled mean must be finite");
  if (!(v_hat >= 0.0)) throw DomainError("between-study variance must be >= 0");
  MetaFit fit;
  fit.mu_hat = mu_hat;
  fit.v_hat = v_hat;
  return fit;
}

MetaFit pool(const std::vector<StudyEffect>& studies) {
  if (studies.size() < 2) {
    throw DomainError("random-effects pooling needs at least 2 studies, got " + std::to_string(studies.size()));
  }
  double s1 = 0.0, s2 = 0.0, s3 = 0.0, weighted = 0.0;
  for (const auto& s : studies) {
    if (!(s.within_variance > 0.0)) throw DomainError("study '" + s.study_id + "' has non-positive variance");
    if (!std::isfinite(s.estimate)) throw DomainError("study '" + s.study_id + "' has a non-finite estimate");
    const double w = 1.0 / s.within_variance;
    s1 += w;
    s2 += w * w;
    s3 += w * w * w;
    weighted += w * s.estimate;
  }
  const double fixed_mean = weighted / s1;
  double q = 0.0;
  for (const auto& s : studies) {
    const double d = s.estimate - fixed_mean;
    q += d * d / s.within_variance;
  }
  const double k = static_cast<double>(studies.size());
  const double c = s1 - s2 / s1;
  const double tau2_raw = (q - (k - 1.0)) / c;
  const double tau2 = std::max(0.0, tau2_raw);

  double sw = 0.0, swy = 0.0;
  for (const auto& s : studies) {
    const double w = 1.0 / (s.within_variance + tau2);
    sw += w;
    swy += w * s.estimate;
  }

  MetaFit fit;
  fit.mu_hat = swy / sw;
  fit.v_hat = tau2;
  fit.se_mu = std::sqrt(1.0 / sw);
  fit.q_statistic = q;
  fit.k = studies.size();
  // Biggerstaff-Tweedie large-sample variance of Q, mapped to tau^2 through
  // the DL denominator, evaluated at the truncated estimate.
  const double var_q = 2.0 * (k - 1.0) + 4.0 * c * tau2 + 2.0 * (s2 - 2.0 * s3 / s1 + s2 * s2 / (s1 * s1)) * tau2 * tau2;
  fit.v_hat_variance = var_q / (c * c);
  return fit;
}

double p_of_q(const MetaFit& fit, const BiasDistribution& bias, double q, MetaDirection direction) {
  if (!(fit.v_hat > bias.v_b)) {
    std::ostringstream msg;
    msg << "p(q) requires between-study variance " << fit.v_hat << " to exceed bias variance " << bias.v_b;
    throw DomainError(msg.str());
  }
  const double sd = std::sqrt(fit.v_hat - bias.v_b);
  if (direction == MetaDirection::positive) return 1.0 - normal_cdf((q + bias.mu_b - fit.mu_hat) / sd);
  return normal_cdf((q - bias.mu_b - fit.mu_hat) / sd);
}

MinimalCommonBias minimal_common_bias(const MetaFit& fit, const PqSpec& spec, MetaDirection direction) {
  if (!(spec.r > 0.0 && spec.r < 0.5)) {
    throw DomainError("r must lie in (0, 0.5) for the constant-bias bound, got " + std::to_string(spec.r));
  }
  const double sd = std::sqrt(fit.v_hat);
  const double value = (direction == MetaDirection::positive)
                           ? normal_quantile(1.0 - spec.r) * sd - spec.q + fit.mu_hat
                           : spec.q - normal_quantile(spec.r) * sd - fit.mu_hat;
  return {value, value <= 0.0};
}

bool explains_away_meta(const MetaFit& fit, const BiasDistribution& bias, const PqSpec& spec,
                        MetaDirection direction) {
  return bias.mu_b >= minimal_common_bias(fit, spec, direction).value;
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n\"");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\"");
  return s.substr(first, last - first + 1);
}

double parse_field(const std::string& text, std::size_t row, const char* column) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (text.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ValidationError(row, std::string("cannot parse '") + text + "' in column '" + column + "'");
  }
  return value;
}

}  // namespace

std::vector<StudyEffect> read_studies_csv(std::istream& in, EffectScale scale) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty study file: header row required");
  std::map<std::string, std::size_t> column;
  {
    std::stringstream header(line);
    std::string field;
    for (std::size_t i = 0; std::getline(header, field, ','); ++i) column[trim(field)] = i;
  }
  for (const char* required : {"study_id", "estimate", "std_error"}) {
    if (!column.count(required)) throw SchemaError(required);
  }
  std::vector<StudyEffect> studies;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(trim(field));
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != column.size()) throw ValidationError(row, "wrong number of fields");
    StudyEffect s;
    s.study_id = fields[column["study_id"]];
    s.estimate = parse_field(fields[column["estimate"]], row, "estimate");
    const double se = parse_field(fields[column["std_error"]], row, "std_error");
    if (!(se > 0.0)) throw ValidationError(row, "std_error must be > 0");
    s.within_variance = se * se;
    s.scale = scale;
    studies.push_back(std::move(s));
  }
  return studies;
}

std::vector<StudyEffect> load_studies_csv(const std::filesystem::path& path, EffectScale scale) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_studies_csv(in, scale);
}

}  // namespace clustsens
