#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "clustsens/sensitivity.hpp"

namespace clustsens {

struct StudyEffect {
  std::string study_id;
  double estimate = 0.0;
  double within_variance = 0.0;  // nu_k = se^2
  EffectScale scale = EffectScale::mean_difference;
};

// Random-effects pooled summary (DerSimonian-Laird).
struct MetaFit {
  double mu_hat = 0.0;
  double v_hat = 0.0;  // between-study variance, truncated at 0
  double se_mu = 0.0;
  double q_statistic = 0.0;
  std::size_t k = 0;
  // Large-sample variance of v_hat (before truncation), used for
  // delta-method intervals on p(q).
  double v_hat_variance = 0.0;
};

// Distribution N(mu_b, v_b) of study-level bias factors.
struct BiasDistribution {
  double mu_b = 0.0;
  double v_b = 0.0;
};

struct PqSpec {
  double q = 0.0;
  double r = 0.25;  // must lie in (0, 0.5)
};

enum class MetaDirection { positive, negative };
std::string to_string(MetaDirection direction);
MetaDirection parse_meta_direction(const std::string& text);

/// Build a fit from a published (mu_hat, v_hat) summary.
MetaFit meta_fit_from_summary(double mu_hat, double v_hat);

/// DerSimonian-Laird pooling. Throws DomainError with fewer than two studies
/// or a non-positive within-study variance.
MetaFit pool(const std::vector<StudyEffect>& studies);

/// Probability that a study-level causal effect exceeds q (positive
/// direction) or falls below q (negative direction). For the negative
/// direction the bias distribution describes B~ = -B. Requires v_hat > v_b
/// strictly; throws DomainError naming both values otherwise.
double p_of_q(const MetaFit& fit, const BiasDistribution& bias, double q, MetaDirection direction);

struct MinimalCommonBias {
  double value = 0.0;
  // value <= 0: p(q) is already below r without any confounding.
  bool already_not_meaningful = false;
};

/// Smallest study-constant bias that reduces p(q) to r. Throws DomainError
/// unless 0 < r < 0.5.
MinimalCommonBias minimal_common_bias(const MetaFit& fit, const PqSpec& spec, MetaDirection direction);

/// True iff mu_b >= the minimal common bias.
bool explains_away_meta(const MetaFit& fit, const BiasDistribution& bias, const PqSpec& spec,
                        MetaDirection direction);

/// Study-level CSV with columns study_id, estimate, std_error.
std::vector<StudyEffect> read_studies_csv(std::istream& in, EffectScale scale = EffectScale::mean_difference);
std::vector<StudyEffect> load_studies_csv(const std::filesystem::path& path,
                                          EffectScale scale = EffectScale::mean_difference);

}  // namespace clustsens
