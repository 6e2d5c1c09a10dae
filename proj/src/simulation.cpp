#include "clustsens/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include <omp.h>

#include "clustsens/errors.hpp"
#include "clustsens/meta.hpp"
#include "clustsens/normal.hpp"
#include "clustsens/rng.hpp"
#include "clustsens/sensitivity.hpp"

namespace clustsens {

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::single_continuous:
      return "single_continuous";
    case ScenarioKind::single_binary:
      return "single_binary";
    case ScenarioKind::meta:
      break;
  }
  return "meta";
}

ScenarioKind parse_scenario_kind(const std::string& text) {
  if (text == "single_continuous") return ScenarioKind::single_continuous;
  if (text == "single_binary") return ScenarioKind::single_binary;
  if (text == "meta") return ScenarioKind::meta;
  throw DomainError("unknown scenario kind '" + text + "'");
}

ScenarioConfig default_scenario(ScenarioKind kind) {
  ScenarioConfig c;
  c.kind = kind;
  switch (kind) {
    case ScenarioKind::single_continuous:
      break;
    case ScenarioKind::single_binary:
      c.clusters = 200;
      c.repeats = 4;
      c.beta = {-4.5, 1.0, 3.0, -0.5};
      c.theta = -0.5;
      c.sigma_u2 = 1.0;
      c.icc = 0.25;
      break;
    case ScenarioKind::meta:
      c.studies = 15;
      c.clusters = 100;
      c.beta = {1.0, 0.0, 3.0, 0.0};
      c.theta = 5.0;
      c.theta_variance = 0.01;
      break;
  }
  return c;
}

void ScenarioConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw DomainError("scenario: " + what);
  };
  require(clusters >= 1, "J must be >= 1");
  require(repeats >= 1, "I must be >= 1");
  require(replications >= 1, "replications must be >= 1");
  require(sigma_u2 >= 0.0 && nu >= 0.0 && phi > 0.0 && latent_noise_variance >= 0.0 && theta_variance >= 0.0,
          "variances must be >= 0 (phi > 0)");
  require(level > 0.0 && level < 1.0, "level must lie in (0, 1)");
  require(quadrature_points >= 1, "quadrature_points must be >= 1");
  if (icc) require(*icc >= 0.0 && *icc < 1.0, "icc must lie in [0, 1)");
  for (double p : {mechanism.x_prob_below, mechanism.x_prob_above, mechanism.a_prob_below, mechanism.a_prob_above}) {
    require(p >= 0.0 && p <= 1.0, "mechanism probabilities must lie in [0, 1]");
  }
  if (kind == ScenarioKind::meta) {
    require(studies >= 2, "meta design needs K >= 2");
    require(cluster_spread >= 0 && clusters - cluster_spread >= 1, "E(J) - spread must be >= 1");
    require(effects.v11 >= 0.0 && effects.v33 >= 0.0, "effect variances must be >= 0");
    require(effects.v11 * effects.v33 - effects.v13 * effects.v13 >= 0.0,
            "effect covariance must be positive semidefinite");
    require(r > 0.0 && r < 0.5, "r must lie in (0, 0.5)");
  }
}

double ScenarioConfig::random_intercept_variance() const { return icc ? nu_from_icc(*icc) : nu; }

double true_conditional_mean(const ScenarioConfig& config, int a, double x) {
  const double sd = std::sqrt(config.sigma_u2);
  if (sd == 0.0) return 0.0;
  const auto& m = config.mechanism;

  auto weight = [&](double u) {
    const double px1 = (u < m.x_threshold) ? m.x_prob_below : m.x_prob_above;
    const double pa1 = (u + x < m.a_threshold) ? m.a_prob_below : m.a_prob_above;
    return (x == 1.0 ? px1 : (x == 0.0 ? 1.0 - px1 : 0.0)) * (a == 1 ? pa1 : 1.0 - pa1);
  };

  std::vector<double> cuts{m.x_threshold, m.a_threshold - x};
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<double> edges{-std::numeric_limits<double>::infinity()};
  edges.insert(edges.end(), cuts.begin(), cuts.end());
  edges.push_back(std::numeric_limits<double>::infinity());

  double mass = 0.0, first_moment = 0.0;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    const double lo = edges[i], hi = edges[i + 1];
    const double probe = std::isinf(lo) ? hi - 1.0 : (std::isinf(hi) ? lo + 1.0 : 0.5 * (lo + hi));
    const double w = weight(probe);
    const double zlo = lo / sd, zhi = hi / sd;
    // P(lo < U < hi) via the tail that avoids cancellation.
    const double p = (zlo >= 0.0) ? normal_cdf(-zlo) - normal_cdf(-zhi) : normal_cdf(zhi) - normal_cdf(zlo);
    const double pdf_lo = std::isinf(zlo) ? 0.0 : normal_pdf(zlo);
    const double pdf_hi = std::isinf(zhi) ? 0.0 : normal_pdf(zhi);
    mass += w * p;
    first_moment += w * sd * (pdf_lo - pdf_hi);
  }
  if (!(mass > 0.0)) throw DomainError("cell (a, x) has zero probability under the mechanism");
  return first_moment / mass;
}

double true_bias_factor(const ScenarioConfig& config, double x) {
  return config.theta * (true_conditional_mean(config, 1, x) - true_conditional_mean(config, 0, x));
}

namespace {

double true_effect_sd(const ScenarioConfig& config, double x) {
  const auto& e = config.effects;
  return std::sqrt(std::max(0.0, e.v11 + x * x * e.v33 + 2.0 * x * e.v13));
}

double true_effect_mean(const ScenarioConfig& config, double x) { return config.effects.mu1 + x * config.effects.mu3; }

inline double expit(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// Draw one study's records into `out`.
void draw_study(const ScenarioConfig& config, RandomStream& rng, int clusters, const Coefficients& beta,
                double theta, const std::string& prefix, const std::optional<std::string>& study_id,
                std::vector<ObservationRecord>& out) {
  const auto& m = config.mechanism;
  const double sd_u = std::sqrt(config.sigma_u2);
  const double sd_zeta = std::sqrt(config.random_intercept_variance());
  const double sd_eps = std::sqrt(config.kind == ScenarioKind::single_binary ? config.latent_noise_variance
                                                                             : config.phi);
  for (int j = 0; j < clusters; ++j) {
    const double zeta = sd_zeta * rng.normal();
    const std::string cluster = prefix + std::to_string(j);
    for (int i = 0; i < config.repeats; ++i) {
      ObservationRecord rec;
      const double u = sd_u * rng.normal();
      const int x = rng.bernoulli(u < m.x_threshold ? m.x_prob_below : m.x_prob_above) ? 1 : 0;
      const int a = rng.bernoulli(u + x < m.a_threshold ? m.a_prob_below : m.a_prob_above) ? 1 : 0;
      const double linear = beta[0] + beta[1] * a + beta[2] * x + beta[3] * a * x + theta * u + zeta;
      const double noise = sd_eps * rng.normal();
      if (config.kind == ScenarioKind::single_binary) {
        rec.outcome = rng.bernoulli(expit(linear + noise)) ? 1.0 : 0.0;
      } else {
        rec.outcome = linear + noise;
      }
      rec.cluster_id = cluster;
      rec.treatment = a;
      rec.covariate_x = x;
      rec.study_id = study_id;
      rec.truth_u = u;
      out.push_back(std::move(rec));
    }
  }
}

}  // namespace

double scenario_q(const ScenarioConfig& config, double x) {
  if (config.q) return (*config.q)[x == 0.0 ? 0 : 1];
  return true_effect_mean(config, x) - config.q_sd_offset * true_effect_sd(config, x);
}

double true_p_of_q(const ScenarioConfig& config, double x) {
  const double q = scenario_q(config, x);
  const double mean = true_effect_mean(config, x);
  const double sd = true_effect_sd(config, x);
  if (sd == 0.0) return mean > q ? 1.0 : 0.0;
  return 1.0 - normal_cdf((q - mean) / sd);
}

ClusteredDataset generate(const ScenarioConfig& config, std::uint64_t replicate) {
  if (config.kind == ScenarioKind::meta) throw DomainError("generate: use generate_studies for the meta design");
  config.validate();
  RandomStream rng(config.seed, replicate, 0);
  std::vector<ObservationRecord> records;
  records.reserve(static_cast<std::size_t>(config.clusters) * config.repeats);
  draw_study(config, rng, config.clusters, config.beta, config.theta, "c", std::nullopt, records);
  const auto scale = config.kind == ScenarioKind::single_binary ? OutcomeScale::binary : OutcomeScale::continuous;
  return ClusteredDataset(std::move(records), scale);
}

std::vector<ClusteredDataset> generate_studies(const ScenarioConfig& config, std::uint64_t replicate) {
  if (config.kind != ScenarioKind::meta) return {generate(config, replicate)};
  config.validate();
  const auto& e = config.effects;
  const double l11 = std::sqrt(e.v11);
  const double l21 = l11 > 0.0 ? e.v13 / l11 : 0.0;
  const double l22 = std::sqrt(std::max(0.0, e.v33 - l21 * l21));

  std::vector<ClusteredDataset> out;
  out.reserve(config.studies);
  for (int k = 0; k < config.studies; ++k) {
    RandomStream rng(config.seed, replicate, static_cast<std::uint32_t>(k + 1));
    const int clusters = static_cast<int>(
        rng.uniform_int(config.clusters - config.cluster_spread, config.clusters + config.cluster_spread));
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    const double z3 = rng.normal();
    Coefficients beta = config.beta;
    beta[1] = e.mu1 + l11 * z1;
    beta[3] = e.mu3 + l21 * z1 + l22 * z2;
    const double theta = config.theta + std::sqrt(config.theta_variance) * z3;

    std::vector<ObservationRecord> records;
    records.reserve(static_cast<std::size_t>(clusters) * config.repeats);
    const std::string sid = "s" + std::to_string(k);
    draw_study(config, rng, clusters, beta, theta, sid + "-c", sid, records);
    out.emplace_back(std::move(records), OutcomeScale::continuous);
  }
  return out;
}

namespace {

ReplicateResult single_replicate(const ScenarioConfig& config, std::uint64_t replicate,
                                 const std::array<double, 2>& bias) {
  ReplicateResult result;
  const auto ds = generate(config, replicate);
  const MixedModelFit fit = config.kind == ScenarioKind::single_binary
                                ? fit_glmm_logit(ds, config.quadrature_points)
                                : fit_lmm(ds);
  for (int xi = 0; xi < 2; ++xi) {
    const auto effect = confounded_effect(fit, xi, config.level);
    result.estimate[xi] = effect.estimate - bias[xi];
    result.lb[xi] = effect.lb - bias[xi];
    result.ub[xi] = effect.ub - bias[xi];
    result.truth[xi] = config.beta[1] + xi * config.beta[3];
  }
  result.ok = true;
  return result;
}

ReplicateResult meta_replicate(const ScenarioConfig& config, std::uint64_t replicate,
                               const std::array<double, 2>& delta_m) {
  ReplicateResult result;
  const auto studies = generate_studies(config, replicate);
  std::array<std::vector<StudyEffect>, 2> effects;
  for (std::size_t k = 0; k < studies.size(); ++k) {
    const auto fit = fit_lmm(studies[k]);
    for (int xi = 0; xi < 2; ++xi) {
      const auto e = confounded_effect(fit, xi, config.level);
      effects[xi].push_back({"s" + std::to_string(k), e.estimate, e.std_error * e.std_error, e.scale});
    }
  }
  const double z = normal_quantile(0.5 * (1.0 + config.level));
  for (int xi = 0; xi < 2; ++xi) {
    const MetaFit pooled = pool(effects[xi]);
    const BiasDistribution bias{config.theta * delta_m[xi], config.theta_variance * delta_m[xi] * delta_m[xi]};
    const double q = scenario_q(config, xi);
    const double p_hat = p_of_q(pooled, bias, q, MetaDirection::positive);

    // Delta method in (mu_hat, v_hat), treated as independent normals.
    const double sd = std::sqrt(pooled.v_hat - bias.v_b);
    const double score = (q + bias.mu_b - pooled.mu_hat) / sd;
    const double density = normal_pdf(score);
    const double d_mu = density / sd;
    const double d_v = density * score / (2.0 * sd * sd);
    const double se = std::sqrt(d_mu * d_mu * pooled.se_mu * pooled.se_mu + d_v * d_v * pooled.v_hat_variance);

    result.estimate[xi] = p_hat;
    result.lb[xi] = std::max(0.0, p_hat - z * se);
    result.ub[xi] = std::min(1.0, p_hat + z * se);
    result.truth[xi] = true_p_of_q(config, xi);
  }
  result.ok = true;
  return result;
}

ReplicateResult guarded(const ScenarioConfig& config, std::uint64_t replicate, const std::array<double, 2>& aux) {
  try {
    return config.kind == ScenarioKind::meta ? meta_replicate(config, replicate, aux)
                                             : single_replicate(config, replicate, aux);
  } catch (const Error& e) {
    ReplicateResult failed;
    failed.failure = e.what();
    return failed;
  }
}

// Per-x auxiliary constants: bias factors for single designs, m1x - m0x for meta.
std::array<double, 2> auxiliary(const ScenarioConfig& config) {
  std::array<double, 2> aux{};
  for (int xi = 0; xi < 2; ++xi) {
    aux[xi] = config.kind == ScenarioKind::meta
                  ? true_conditional_mean(config, 1, xi) - true_conditional_mean(config, 0, xi)
                  : true_bias_factor(config, xi);
  }
  return aux;
}

std::vector<ReplicateResult> run_parallel(const ScenarioConfig& config, int workers) {
  config.validate();
  const auto aux = auxiliary(config);
  const long n = config.replications;
  std::vector<ReplicateResult> results(n);
  std::exception_ptr error;
  const int threads = workers > 0 ? workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (long r = 0; r < n; ++r) {
    try {
      results[r] = guarded(config, static_cast<std::uint64_t>(r), aux);
    } catch (...) {
#pragma omp critical(clustsens_sim_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return results;
}

std::vector<ReplicateResult> run_serial(const ScenarioConfig& config) {
  config.validate();
  const auto aux = auxiliary(config);
  std::vector<ReplicateResult> results;
  results.reserve(config.replications);
  for (int r = 0; r < config.replications; ++r) results.push_back(guarded(config, r, aux));
  return results;
}

void require_kind(const ScenarioConfig& config, bool meta) {
  if ((config.kind == ScenarioKind::meta) != meta) {
    throw DomainError(std::string(meta ? "run_meta" : "run_single_study") + " does not accept a " +
                      to_string(config.kind) + " scenario");
  }
}

}  // namespace

ReplicateResult simulate_replicate(const ScenarioConfig& config, std::uint64_t replicate) {
  config.validate();
  return guarded(config, replicate, auxiliary(config));
}

SimMetrics summarize(const std::vector<ReplicateResult>& results) {
  SimMetrics m;
  m.replications = static_cast<int>(results.size());
  for (const auto& r : results) (r.ok ? m.replications_used : m.failed)++;
  m.flagged = m.failed > 0.05 * m.replications;

  for (int xi = 0; xi < 2; ++xi) {
    auto& out = m.by_x[xi];
    out.x = xi;
    if (m.replications_used == 0) continue;
    double sum_est = 0.0, sum_truth = 0.0, sum_err = 0.0;
    int covered = 0;
    for (const auto& r : results) {
      if (!r.ok) continue;
      sum_est += r.estimate[xi];
      sum_truth += r.truth[xi];
      sum_err += r.estimate[xi] - r.truth[xi];
      if (r.lb[xi] <= r.truth[xi] && r.truth[xi] <= r.ub[xi]) ++covered;
    }
    const double n = m.replications_used;
    out.mean_estimate = sum_est / n;
    out.truth = sum_truth / n;
    out.bias = sum_err / n;
    out.cp = covered / n;
    if (m.replications_used >= 2) {
      double ss = 0.0;
      for (const auto& r : results) {
        if (r.ok) ss += (r.estimate[xi] - out.mean_estimate) * (r.estimate[xi] - out.mean_estimate);
      }
      out.se = std::sqrt(ss / (n - 1.0));
    }
  }
  return m;
}

SimMetrics run_single_study(const ScenarioConfig& config, int workers) {
  require_kind(config, false);
  return summarize(run_parallel(config, workers));
}

SimMetrics run_meta(const ScenarioConfig& config, int workers) {
  require_kind(config, true);
  return summarize(run_parallel(config, workers));
}

SimMetrics run_scenario(const ScenarioConfig& config, int workers) {
  return summarize(run_parallel(config, workers));
}

SimMetrics run_single_study_serial(const ScenarioConfig& config) {
  require_kind(config, false);
  return summarize(run_serial(config));
}

SimMetrics run_meta_serial(const ScenarioConfig& config) {
  require_kind(config, true);
  return summarize(run_serial(config));
}

SimMetrics run_scenario_serial(const ScenarioConfig& config) { return summarize(run_serial(config)); }

}  // namespace clustsens
