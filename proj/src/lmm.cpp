#include <cmath>
#include <limits>
#include <numbers>

#include "clustsens/errors.hpp"
#include "clustsens/mixed_models.hpp"

namespace clustsens {

RemlProfile::RemlProfile(const ClusteredDataset& ds) : clusters_(ds.cluster_count()), n_(ds.size()) {
  const auto& recs = ds.records();
  const auto& idx = ds.cluster_index();
  for (std::size_t r = 0; r < recs.size(); ++r) {
    const auto row = design_row(recs[r].treatment, recs[r].covariate_x);
    const Eigen::Vector4d xv(row[0], row[1], row[2], row[3]);
    const double y = recs[r].outcome;
    auto& c = clusters_[idx[r]];
    c.n += 1.0;
    c.col_sum += xv;
    c.xtx.noalias() += xv * xv.transpose();
    c.xty += y * xv;
    c.y_sum += y;
    c.yty += y * y;
  }
}

GlsSolution RemlProfile::solve(double ratio) const {
  Eigen::Matrix4d xtvx = Eigen::Matrix4d::Zero();
  Eigen::Vector4d xtvy = Eigen::Vector4d::Zero();
  double ytvy = 0.0;
  double logdet_h = 0.0;
  for (const auto& c : clusters_) {
    // (I + ratio * 11')^-1 = I - ratio / (1 + n ratio) * 11'
    const double shrink = ratio / (1.0 + c.n * ratio);
    xtvx.noalias() += c.xtx - shrink * c.col_sum * c.col_sum.transpose();
    xtvy += c.xty - shrink * c.y_sum * c.col_sum;
    ytvy += c.yty - shrink * c.y_sum * c.y_sum;
    logdet_h += std::log1p(c.n * ratio);
  }

  const Eigen::LDLT<Eigen::Matrix4d> ldlt(xtvx);
  const Eigen::Vector4d beta = ldlt.solve(xtvy);
  const double dof = static_cast<double>(n_) - kNumFixed;
  const double rss = std::max(ytvy - xtvy.dot(beta), 0.0);

  GlsSolution out;
  for (int k = 0; k < kNumFixed; ++k) out.beta[k] = beta[k];
  out.xtvx_inv = ldlt.solve(Eigen::Matrix4d::Identity());
  out.xtvx_inv = 0.5 * (out.xtvx_inv + out.xtvx_inv.transpose()).eval();
  out.residual_variance = std::max(rss / dof, std::numeric_limits<double>::min());

  const double logdet_x = ldlt.vectorD().array().log().sum();
  out.reml_log_likelihood =
      -0.5 * (dof * (1.0 + std::log(2.0 * std::numbers::pi * out.residual_variance)) + logdet_h + logdet_x);
  return out;
}

namespace {

struct BrentResult {
  double x;
  double fx;
  int iterations;
  bool converged;
};

// Golden-section search with parabolic interpolation (Brent 1973) minimizing
// f on [lo, hi]. Stops once the bracket around the best point is narrower
// than 2 * tol.
template <class F>
BrentResult brent_minimize(F&& f, double lo, double hi, double tol, int max_iter) {
  constexpr double golden = 0.3819660112501051;
  double a = lo, b = hi;
  double x = a + golden * (b - a), w = x, v = x;
  double fx = f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;

  for (int iter = 1; iter <= max_iter; ++iter) {
    const double xm = 0.5 * (a + b);
    const double tol1 = tol + 1e-12 * std::abs(x);
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - xm) <= tol2 - 0.5 * (b - a)) return {x, fx, iter, true};

    bool golden_step = true;
    if (std::abs(e) > tol1) {
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double etemp = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * etemp) && p > q * (a - x) && p < q * (b - x)) {
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (xm >= x) ? tol1 : -tol1;
        golden_step = false;
      }
    }
    if (golden_step) {
      e = (x >= xm) ? a - x : b - x;
      d = golden * e;
    }
    const double u = (std::abs(d) >= tol1) ? x + d : x + (d >= 0 ? tol1 : -tol1);
    const double fu = f(u);
    if (fu <= fx) {
      (u >= x ? a : b) = x;
      v = w, fv = fw;
      w = x, fw = fx;
      x = u, fx = fu;
    } else {
      (u < x ? a : b) = u;
      if (fu <= fw || w == x) {
        v = w, fv = fw;
        w = u, fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u, fv = fu;
      }
    }
  }
  return {x, fx, max_iter, false};
}

}  // namespace

MixedModelFit fit_lmm(const ClusteredDataset& ds, const LmmOptions& options) {
  if (ds.scale() != OutcomeScale::continuous) {
    throw DomainError("fit_lmm requires a continuous-scale dataset");
  }
  if (ds.size() <= static_cast<std::size_t>(kNumFixed)) {
    throw SingularDesignError("need more observations than fixed effects");
  }

  // Rank check on X'X with unit-scaled columns.
  {
    Eigen::Matrix4d xtx = Eigen::Matrix4d::Zero();
    for (const auto& r : ds.records()) {
      const auto row = design_row(r.treatment, r.covariate_x);
      const Eigen::Vector4d xv(row[0], row[1], row[2], row[3]);
      xtx.noalias() += xv * xv.transpose();
    }
    const Eigen::Vector4d diag = xtx.diagonal();
    if ((diag.array() <= 0.0).any()) throw SingularDesignError("design matrix [1, A, X, A*X] has a zero column");
    const Eigen::Vector4d scale = diag.array().rsqrt();
    const Eigen::Matrix4d corr = scale.asDiagonal() * xtx * scale.asDiagonal();
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(corr, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues()[0] < 1e-10 * eig.eigenvalues()[3]) {
      throw SingularDesignError("design matrix [1, A, X, A*X] is rank deficient");
    }
  }

  const RemlProfile profile(ds);

  const double t_lo = std::log(options.variance_floor);
  const double t_hi = std::log(options.ratio_ceiling);
  auto objective = [&](double t) { return -profile.log_likelihood(std::exp(t)); };

  // Coarse scan to locate the basin, then Brent inside the neighbouring cells.
  constexpr int kScan = 61;
  int best = 0;
  double best_value = std::numeric_limits<double>::infinity();
  const double step = (t_hi - t_lo) / (kScan - 1);
  for (int i = 0; i < kScan; ++i) {
    const double value = objective(t_lo + i * step);
    if (value < best_value) best_value = value, best = i;
  }
  const double lo = t_lo + std::max(best - 1, 0) * step;
  const double hi = t_lo + std::min(best + 1, kScan - 1) * step;
  const auto result = brent_minimize(objective, lo, hi, options.tolerance, options.max_iterations);
  if (!result.converged) {
    throw ConvergenceError("REML search did not converge within " + std::to_string(options.max_iterations) +
                               " iterations",
                           {std::exp(result.x)});
  }

  double ratio = std::exp(result.x);
  bool boundary = false;
  if (result.x - t_lo <= 10.0 * options.tolerance) {
    ratio = 0.0;
    boundary = true;
  }
  const GlsSolution gls = profile.solve(ratio);

  MixedModelFit fit;
  fit.scale = OutcomeScale::continuous;
  fit.coefficients = gls.beta;
  fit.residual_variance = gls.residual_variance;
  fit.random_intercept_variance = ratio * gls.residual_variance;
  fit.coef_covariance = gls.residual_variance * gls.xtvx_inv;
  fit.log_likelihood = gls.reml_log_likelihood;
  fit.converged = true;
  fit.boundary = boundary;
  fit.iterations = result.iterations;
  fit.quadrature_points = 0;
  fit.method = "REML";
  fit.observations = ds.size();
  fit.clusters = ds.cluster_count();
  return fit;
}

}  // namespace clustsens
