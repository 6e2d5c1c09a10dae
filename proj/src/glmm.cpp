#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <tuple>

#include "clustsens/errors.hpp"
#include "clustsens/mixed_models.hpp"
#include "clustsens/quadrature.hpp"

namespace clustsens {

namespace {

constexpr int kNumParams = kNumFixed + 1;  // beta and log(nu)
using ParamVector = Eigen::Matrix<double, kNumParams, 1>;
using ParamMatrix = Eigen::Matrix<double, kNumParams, kNumParams>;

inline double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
inline double expit(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double log_sum_exp(const double* v, int n) {
  const double m = *std::max_element(v, v + n);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

}  // namespace

GlmmLikelihood::GlmmLikelihood(const ClusteredDataset& ds, int quadrature_points) {
  if (quadrature_points < 1) {
    throw DomainError("quadrature_points must be >= 1, got " + std::to_string(quadrature_points));
  }
  std::vector<std::map<std::tuple<int, double, double>, double>> cells(ds.cluster_count());
  const auto& recs = ds.records();
  const auto& idx = ds.cluster_index();
  for (std::size_t r = 0; r < recs.size(); ++r) {
    cells[idx[r]][{recs[r].treatment, recs[r].covariate_x, recs[r].outcome}] += 1.0;
  }
  clusters_.resize(cells.size());
  for (std::size_t j = 0; j < cells.size(); ++j) {
    for (const auto& [key, count] : cells[j]) {
      const auto& [a, x, y] = key;
      clusters_[j].patterns.push_back({static_cast<double>(a), x, y, count});
    }
  }

  const auto rule = gauss_hermite(quadrature_points);
  nodes_ = rule.nodes;
  log_weights_.resize(nodes_.size());
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    log_weights_[k] = std::log(rule.weights[k]) + nodes_[k] * nodes_[k];
  }
}

double GlmmLikelihood::cluster_log_integral(const Cluster& c, const Coefficients& beta, double nu) const {
  // Linear predictors without the random intercept.
  double eta[16];
  double* etas = eta;
  std::vector<double> heap;
  if (c.patterns.size() > 16) {
    heap.resize(c.patterns.size());
    etas = heap.data();
  }
  for (std::size_t p = 0; p < c.patterns.size(); ++p) {
    const auto& pt = c.patterns[p];
    etas[p] = beta[0] + beta[1] * pt.a + beta[2] * pt.x + beta[3] * pt.a * pt.x;
  }

  auto data_loglik = [&](double b) {
    double s = 0.0;
    for (std::size_t p = 0; p < c.patterns.size(); ++p) {
      const auto& pt = c.patterns[p];
      const double t = etas[p] + b;
      s += pt.count * (pt.y * t - softplus(t));
    }
    return s;
  };

  if (nu <= 0.0) return data_loglik(0.0);

  // Conditional mode of the (strictly concave) log integrand by damped Newton.
  const double inv_nu = 1.0 / nu;
  auto log_integrand = [&](double b) { return data_loglik(b) - 0.5 * b * b * inv_nu; };
  double b = 0.0;
  double g_b = log_integrand(b);
  double curvature = inv_nu;
  for (int iter = 0; iter < 100; ++iter) {
    double grad = -b * inv_nu;
    double info = inv_nu;
    for (std::size_t p = 0; p < c.patterns.size(); ++p) {
      const auto& pt = c.patterns[p];
      const double mu = expit(etas[p] + b);
      grad += pt.count * (pt.y - mu);
      info += pt.count * mu * (1.0 - mu);
    }
    curvature = info;
    double step = grad / info;
    double candidate = b + step;
    double g_c = log_integrand(candidate);
    for (int halving = 0; halving < 50 && g_c < g_b; ++halving) {
      step *= 0.5;
      candidate = b + step;
      g_c = log_integrand(candidate);
    }
    const bool done = std::abs(step) < 1e-11 * (1.0 + std::abs(b));
    b = candidate;
    g_b = g_c;
    if (done) break;
  }
  {
    double info = inv_nu;
    for (std::size_t p = 0; p < c.patterns.size(); ++p) {
      const double mu = expit(etas[p] + b);
      info += c.patterns[p].count * mu * (1.0 - mu);
    }
    curvature = info;
  }

  const double scale = std::sqrt(2.0 / curvature);
  const int n = static_cast<int>(nodes_.size());
  double terms[128];
  std::vector<double> heap_terms;
  double* t = terms;
  if (n > 128) {
    heap_terms.resize(n);
    t = heap_terms.data();
  }
  for (int k = 0; k < n; ++k) t[k] = log_weights_[k] + log_integrand(b + scale * nodes_[k]);
  return std::log(scale) - 0.5 * std::log(2.0 * std::numbers::pi * nu) + log_sum_exp(t, n);
}

double GlmmLikelihood::log_likelihood(const Coefficients& beta, double nu) const {
  double total = 0.0;
  for (const auto& c : clusters_) total += cluster_log_integral(c, beta, nu);
  return total;
}

namespace {

Coefficients to_beta(const ParamVector& v) { return {v[0], v[1], v[2], v[3]}; }

// Logistic regression ignoring clustering; starting values for the GLMM.
Coefficients logistic_start(const ClusteredDataset& ds, double bound) {
  Eigen::Vector4d beta = Eigen::Vector4d::Zero();
  for (int iter = 0; iter < 50; ++iter) {
    Eigen::Matrix4d info = Eigen::Matrix4d::Zero();
    Eigen::Vector4d score = Eigen::Vector4d::Zero();
    for (const auto& r : ds.records()) {
      const auto row = design_row(r.treatment, r.covariate_x);
      const Eigen::Vector4d xv(row[0], row[1], row[2], row[3]);
      const double mu = expit(xv.dot(beta));
      score += (r.outcome - mu) * xv;
      info.noalias() += mu * (1.0 - mu) * xv * xv.transpose();
    }
    const Eigen::LDLT<Eigen::Matrix4d> ldlt(info);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 1e-12 * info.diagonal().maxCoeff()).all()) {
      throw SeparationError("logistic fit is degenerate (information matrix singular); outcomes may be separated");
    }
    const Eigen::Vector4d step = ldlt.solve(score);
    beta += step;
    if (beta.cwiseAbs().maxCoeff() > bound) {
      throw SeparationError("complete separation: a logistic coefficient exceeded " + std::to_string(bound));
    }
    if (step.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  return {beta[0], beta[1], beta[2], beta[3]};
}

}  // namespace

MixedModelFit fit_glmm_logit(const ClusteredDataset& ds, int quadrature_points) {
  GlmmOptions options;
  options.quadrature_points = quadrature_points;
  return fit_glmm_logit(ds, options);
}

MixedModelFit fit_glmm_logit(const ClusteredDataset& ds, const GlmmOptions& options) {
  if (ds.scale() != OutcomeScale::binary) throw DomainError("fit_glmm_logit requires a binary-scale dataset");
  if (ds.size() <= static_cast<std::size_t>(kNumFixed)) {
    throw SingularDesignError("need more observations than fixed effects");
  }
  {
    const auto& recs = ds.records();
    const bool all_same = std::all_of(recs.begin(), recs.end(),
                                      [&](const auto& r) { return r.outcome == recs.front().outcome; });
    if (all_same) {
      throw SeparationError("all outcomes equal " + std::to_string(static_cast<int>(recs.front().outcome)) +
                            "; logistic coefficients are not identified (separation)");
    }
  }

  const GlmmLikelihood likelihood(ds, options.quadrature_points);
  const double s_lo = std::log(options.variance_floor);
  const double s_hi = std::log(1e6);

  auto f = [&](const ParamVector& v) { return -likelihood.log_likelihood(to_beta(v), std::exp(v[kNumFixed])); };
  auto step_of = [&](const ParamVector& v, int i) { return options.fd_step * std::max(1.0, std::abs(v[i])); };
  auto gradient = [&](const ParamVector& v) {
    ParamVector g;
    for (int i = 0; i < kNumParams; ++i) {
      const double h = step_of(v, i);
      ParamVector up = v, down = v;
      up[i] += h;
      down[i] -= h;
      g[i] = (f(up) - f(down)) / (2.0 * h);
    }
    return g;
  };
  auto project = [&](ParamVector v) {
    v[kNumFixed] = std::clamp(v[kNumFixed], s_lo, s_hi);
    return v;
  };
  auto at_lower = [&](const ParamVector& v) { return v[kNumFixed] <= s_lo; };
  auto projected_norm = [&](const ParamVector& v, ParamVector g) {
    if (at_lower(v) && g[kNumFixed] > 0.0) g[kNumFixed] = 0.0;
    return g.cwiseAbs().maxCoeff();
  };

  const Coefficients start = logistic_start(ds, options.separation_bound);
  ParamVector x;
  x << start[0], start[1], start[2], start[3], 0.0;
  double fx = f(x);
  ParamVector g = gradient(x);
  ParamMatrix inv_hessian = ParamMatrix::Identity();
  bool scaled = false;
  bool converged = false;
  int iter = 0;

  for (; iter < options.max_iterations; ++iter) {
    if (projected_norm(x, g) < options.gradient_tolerance) {
      converged = true;
      break;
    }
    ParamVector d = -inv_hessian * g;
    if (at_lower(x) && d[kNumFixed] < 0.0) d[kNumFixed] = 0.0;
    if (g.dot(d) >= 0.0) {
      inv_hessian.setIdentity();
      d = -g;
      if (at_lower(x) && d[kNumFixed] < 0.0) d[kNumFixed] = 0.0;
    }

    // Backtracking line search with the Armijo condition on the projected path.
    double alpha = 1.0;
    ParamVector x_new;
    double f_new = 0.0;
    bool accepted = false;
    for (int halving = 0; halving < 60; ++halving) {
      x_new = project(x + alpha * d);
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * g.dot(x_new - x)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // Stalled at the resolution of the objective; accept if nearly stationary.
      converged = projected_norm(x, g) < 1e3 * options.gradient_tolerance;
      break;
    }

    const ParamVector g_new = gradient(x_new);
    const ParamVector s = x_new - x;
    const ParamVector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-14 * s.norm() * y.norm()) {
      if (!scaled) {
        inv_hessian = (sy / y.squaredNorm()) * ParamMatrix::Identity();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const ParamMatrix left = ParamMatrix::Identity() - rho * s * y.transpose();
      inv_hessian = left * inv_hessian * left.transpose() + rho * s * s.transpose();
    }
    const double f_prev = fx;
    x = x_new;
    fx = f_new;
    g = g_new;
    if (std::abs(f_prev - fx) <= 1e-15 * std::max(1.0, std::abs(fx)) &&
        projected_norm(x, g) < 1e3 * options.gradient_tolerance) {
      converged = true;
      break;
    }
  }

  for (int k = 0; k < kNumFixed; ++k) {
    if (!std::isfinite(x[k]) || std::abs(x[k]) > options.separation_bound) {
      throw SeparationError("complete separation: coefficient " + std::to_string(k) + " reached " +
                            std::to_string(x[k]));
    }
  }
  if (!converged) {
    throw ConvergenceError("AGQ optimization did not converge in " + std::to_string(iter) + " iterations",
                           std::vector<double>(x.data(), x.data() + kNumParams));
  }

  // Observed information by central second differences.
  ParamMatrix hessian;
  {
    ParamVector h;
    for (int i = 0; i < kNumParams; ++i) h[i] = 1e-4 * std::max(1.0, std::abs(x[i]));
    for (int i = 0; i < kNumParams; ++i) {
      ParamVector up = x, down = x;
      up[i] += h[i];
      down[i] -= h[i];
      hessian(i, i) = (f(up) - 2.0 * fx + f(down)) / (h[i] * h[i]);
      for (int j = 0; j < i; ++j) {
        ParamVector pp = x, pm = x, mp = x, mm = x;
        pp[i] += h[i], pp[j] += h[j];
        pm[i] += h[i], pm[j] -= h[j];
        mp[i] -= h[i], mp[j] += h[j];
        mm[i] -= h[i], mm[j] -= h[j];
        hessian(i, j) = hessian(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h[i] * h[j]);
      }
    }
  }

  const bool boundary = at_lower(x);
  Eigen::Matrix4d covariance;
  bool have_cov = false;
  if (!boundary) {
    const Eigen::LDLT<ParamMatrix> ldlt(hessian);
    if (ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all()) {
      const ParamMatrix inv = ldlt.solve(ParamMatrix::Identity());
      covariance = inv.topLeftCorner<kNumFixed, kNumFixed>();
      have_cov = true;
    }
  }
  if (!have_cov) {
    const Eigen::Matrix4d block = hessian.topLeftCorner<kNumFixed, kNumFixed>();
    const Eigen::LDLT<Eigen::Matrix4d> ldlt(block);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
      throw ConvergenceError("observed information is not positive definite at the optimum",
                             std::vector<double>(x.data(), x.data() + kNumParams));
    }
    covariance = ldlt.solve(Eigen::Matrix4d::Identity());
  }
  covariance = 0.5 * (covariance + covariance.transpose()).eval();

  MixedModelFit fit;
  fit.scale = OutcomeScale::binary;
  fit.coefficients = to_beta(x);
  fit.coef_covariance = covariance;
  fit.random_intercept_variance = boundary ? 0.0 : std::exp(x[kNumFixed]);
  fit.log_likelihood = -fx;
  fit.converged = true;
  fit.boundary = boundary;
  fit.iterations = iter;
  fit.quadrature_points = options.quadrature_points;
  fit.method = "AGQ";
  fit.observations = ds.size();
  fit.clusters = ds.cluster_count();
  return fit;
}

}  // namespace clustsens
