#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clustsens/dataset.hpp"
#include "clustsens/mixed_models.hpp"

namespace clustsens {

enum class ScenarioKind { single_continuous, single_binary, meta };

std::string to_string(ScenarioKind kind);
ScenarioKind parse_scenario_kind(const std::string& text);

// How the measured confounder X and treatment A depend on U. The Bernoulli
// probabilities switch when U crosses x_threshold, and when U + X crosses
// a_threshold.
struct AssignmentMechanism {
  double x_threshold = 1.0;
  double x_prob_below = 0.5;
  double x_prob_above = 0.4;
  double a_threshold = 2.0;
  double a_prob_below = 0.4;
  double a_prob_above = 0.5;
};

// Bivariate normal law of the study-level (beta1_k, beta3_k) in the meta design.
struct EffectDistribution {
  double mu1 = 3.0;
  double mu3 = 4.0;
  double v11 = 2.0;
  double v33 = 6.0;
  double v13 = 0.05;
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::single_continuous;
  int clusters = 100;      // J, or E(J) for the meta kind
  int cluster_spread = 50;  // meta: J_k ~ U{E(J) - spread, E(J) + spread}
  int repeats = 3;         // I
  int studies = 15;        // K, meta only
  Coefficients beta{1.0, -1.0, 3.0, 1.0};  // meta uses beta0 and beta2 only
  double theta = 0.5;           // effect of U; the mean of theta_k for meta
  double theta_variance = 0.0;  // meta: theta_k ~ N(theta, theta_variance)
  double sigma_u2 = 0.25;       // variance of U
  double nu = 4.0;              // random-intercept variance
  std::optional<double> icc;    // binary: overrides nu via nu_from_icc
  double phi = 1.0;             // level-1 residual variance (continuous)
  double latent_noise_variance = 1.0;  // binary: N(0, .) added to the logit
  EffectDistribution effects;
  std::optional<std::array<double, 2>> q;  // meta: q per x; default below
  double q_sd_offset = 0.5;  // default q = mean - offset * sd of the true law
  double r = 0.4;
  double level = 0.95;
  int quadrature_points = 15;
  AssignmentMechanism mechanism;
  std::uint64_t seed = 1;
  int replications = 1000;

  /// Throws DomainError for negative variances, non-positive sizes, or an
  /// indefinite effect covariance.
  void validate() const;
  double random_intercept_variance() const;
};

/// Default settings for each design.
ScenarioConfig default_scenario(ScenarioKind kind);

/// E(U | A=a, X=x) under the assignment mechanism with U ~ N(0, sigma_u2).
/// The conditional probabilities are piecewise constant in u, so the
/// integral is a sum of truncated-normal moments over the pieces.
double true_conditional_mean(const ScenarioConfig& config, int a, double x);

/// Bias factor implied by the scenario at x: theta * (m_1x - m_0x).
double true_bias_factor(const ScenarioConfig& config, double x);

/// Meta kind: q used at x (configured or mean - q_sd_offset * sd).
double scenario_q(const ScenarioConfig& config, double x);
/// Meta kind: P(E_k|x > q) under E_k|x ~ N(mu1 + x mu3, V11 + x^2 V33 + 2x V13).
/// A degenerate law gives 1 when the mean exceeds q and 0 otherwise.
double true_p_of_q(const ScenarioConfig& config, double x);

/// One replicate of a single-study design. Deterministic in
/// (config.seed, replicate); truth_u is populated.
ClusteredDataset generate(const ScenarioConfig& config, std::uint64_t replicate);

/// One replicate of the meta design: K datasets, study k drawing from
/// substream k + 1. Single kinds return a one-element list.
std::vector<ClusteredDataset> generate_studies(const ScenarioConfig& config, std::uint64_t replicate);

struct ConditionalMetrics {
  double x = 0.0;
  double truth = 0.0;          // mean of the target across used replicates
  double mean_estimate = 0.0;
  double bias = 0.0;           // mean(estimate - truth)
  std::optional<double> se;    // empirical SD of the estimates; absent if < 2 used
  double cp = 0.0;             // share of intervals covering the truth
};

struct SimMetrics {
  std::array<ConditionalMetrics, 2> by_x{};
  int replications = 0;
  int replications_used = 0;
  int failed = 0;
  bool flagged = false;  // more than 5% of replicates failed
};

// Outcome of one replicate, x = 0 and x = 1.
struct ReplicateResult {
  bool ok = false;
  std::string failure;
  std::array<double, 2> estimate{};
  std::array<double, 2> lb{};
  std::array<double, 2> ub{};
  std::array<double, 2> truth{};
};

ReplicateResult simulate_replicate(const ScenarioConfig& config, std::uint64_t replicate);

/// Aggregate index-ordered replicate results.
SimMetrics summarize(const std::vector<ReplicateResult>& results);

/// Replicates run in parallel over `workers` OpenMP threads (0 = runtime
/// default). Results are identical to the serial versions for any worker count.
SimMetrics run_single_study(const ScenarioConfig& config, int workers = 0);
SimMetrics run_meta(const ScenarioConfig& config, int workers = 0);
SimMetrics run_scenario(const ScenarioConfig& config, int workers = 0);

SimMetrics run_single_study_serial(const ScenarioConfig& config);
SimMetrics run_meta_serial(const ScenarioConfig& config);
SimMetrics run_scenario_serial(const ScenarioConfig& config);

}  // namespace clustsens
