#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clustsens/dataset.hpp"
#include "clustsens/mixed_models.hpp"

namespace testsupport {

// Random-intercept data from std::mt19937_64 so fixtures do not depend on the
// library's own generator.
inline clustsens::ClusteredDataset random_lmm_data(std::uint64_t seed, int clusters, int min_size, int max_size,
                                                   double nu, double phi,
                                                   clustsens::Coefficients beta = {1.0, -1.0, 3.0, 1.0}) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_int_distribution<int> size(min_size, max_size);
  std::bernoulli_distribution coin(0.5);
  std::vector<clustsens::ObservationRecord> recs;
  for (int j = 0; j < clusters; ++j) {
    const double b = std::sqrt(nu) * z(gen);
    const int n = size(gen);
    for (int i = 0; i < n; ++i) {
      clustsens::ObservationRecord r;
      r.cluster_id = "k" + std::to_string(j);
      r.treatment = coin(gen) ? 1 : 0;
      r.covariate_x = coin(gen) ? 1.0 : 0.0;
      r.outcome = beta[0] + beta[1] * r.treatment + beta[2] * r.covariate_x + beta[3] * r.treatment * r.covariate_x +
                  b + std::sqrt(phi) * z(gen);
      recs.push_back(r);
    }
  }
  return clustsens::ClusteredDataset(std::move(recs), clustsens::OutcomeScale::continuous);
}

struct DenseModel {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::MatrixXd Z;  // cluster indicator matrix
};

inline DenseModel dense_model(const clustsens::ClusteredDataset& ds) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  DenseModel m{Eigen::MatrixXd(n, 4), Eigen::VectorXd(n),
               Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(ds.cluster_count()))};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = ds.records()[i];
    m.X.row(i) << 1.0, r.treatment, r.covariate_x, r.treatment * r.covariate_x;
    m.y(i) = r.outcome;
    m.Z(i, ds.cluster_index()[i]) = 1.0;
  }
  return m;
}

// Unprofiled REML log-likelihood with an explicit N x N covariance matrix.
inline double dense_reml(const DenseModel& m, double nu, double phi) {
  const auto n = m.X.rows();
  const Eigen::MatrixXd V = phi * Eigen::MatrixXd::Identity(n, n) + nu * m.Z * m.Z.transpose();
  const Eigen::LLT<Eigen::MatrixXd> llt(V);
  const Eigen::MatrixXd vix = llt.solve(m.X);
  const Eigen::MatrixXd xvx = m.X.transpose() * vix;
  const Eigen::VectorXd beta = xvx.ldlt().solve(vix.transpose() * m.y);
  const Eigen::VectorXd r = m.y - m.X * beta;
  const double logdet_v = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  const double logdet_xvx = std::log(xvx.determinant());
  const double quad = r.dot(llt.solve(r));
  return -0.5 * ((n - 4) * std::log(2.0 * std::numbers::pi) + logdet_v + logdet_xvx + quad);
}

// GLS coefficients (X'V^-1X)^-1 X'V^-1 y with the dense covariance.
inline Eigen::Vector4d dense_gls(const DenseModel& m, double nu, double phi) {
  const auto n = m.X.rows();
  const Eigen::MatrixXd V = phi * Eigen::MatrixXd::Identity(n, n) + nu * m.Z * m.Z.transpose();
  const Eigen::LLT<Eigen::MatrixXd> llt(V);
  const Eigen::MatrixXd vix = llt.solve(m.X);
  return (m.X.transpose() * vix).ldlt().solve(vix.transpose() * m.y);
}

// REML maximum found by repeated 200-point grid searches over the log ratio nu/phi,
// with phi profiled by its closed form at each grid point. The boundary
// nu = 0 is evaluated as well. Returns the best log-likelihood found.
inline double grid_reml_max(const DenseModel& m, double log_ratio_lo = std::log(1e-6),
                            double log_ratio_hi = std::log(1e4)) {
  const auto n = m.X.rows();
  auto profiled = [&](double ratio) {
    const Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n) + ratio * m.Z * m.Z.transpose();
    const Eigen::LLT<Eigen::MatrixXd> llt(H);
    const Eigen::MatrixXd hix = llt.solve(m.X);
    const Eigen::VectorXd beta = (m.X.transpose() * hix).ldlt().solve(hix.transpose() * m.y);
    const Eigen::VectorXd r = m.y - m.X * beta;
    const double phi = r.dot(llt.solve(r)) / static_cast<double>(n - 4);
    return dense_reml(m, ratio * phi, phi);
  };
  constexpr int kGrid = 200;
  double lo = log_ratio_lo, hi = log_ratio_hi;
  double best = profiled(0.0), best_t = lo;
  for (int round = 0; round < 8; ++round) {
    const double step = (hi - lo) / (kGrid - 1);
    for (int i = 0; i < kGrid; ++i) {
      const double t = lo + i * step;
      const double v = profiled(std::exp(t));
      if (v > best) best = v, best_t = t;
    }
    lo = std::max(log_ratio_lo, best_t - 2.0 * step);
    hi = std::min(log_ratio_hi, best_t + 2.0 * step);
  }
  return best;
}

}  // namespace testsupport
