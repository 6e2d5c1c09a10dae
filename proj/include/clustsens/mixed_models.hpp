#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clustsens/dataset.hpp"

namespace clustsens {

// Fixed-effect layout shared by both fitters: intercept, treatment A,
// covariate X and the A*X interaction.
constexpr int kNumFixed = 4;
using Coefficients = std::array<double, kNumFixed>;

inline std::array<double, kNumFixed> design_row(double a, double x) { return {1.0, a, x, a * x}; }

// Result of fitting a confounded random-intercept model (U omitted).
struct MixedModelFit {
  OutcomeScale scale = OutcomeScale::continuous;
  Coefficients coefficients{};
  Eigen::Matrix4d coef_covariance = Eigen::Matrix4d::Zero();
  double random_intercept_variance = 0.0;   // nu, 0 when on the boundary
  std::optional<double> residual_variance;  // phi, continuous scale only
  double log_likelihood = 0.0;              // REML (continuous) or marginal ML (binary)
  bool converged = false;
  bool boundary = false;  // variance component pinned at the lower bound
  int iterations = 0;
  int quadrature_points = 0;  // 0 for the linear model
  std::string method;         // "REML" or "AGQ"
  std::size_t observations = 0;
  std::size_t clusters = 0;
};

// ---------------------------------------------------------------------------
// Linear mixed model, REML

struct LmmOptions {
  int max_iterations = 200;
  double tolerance = 1e-9;       // on successive log variance-ratio iterates
  double variance_floor = 1e-10;  // lower bound for nu/phi during the search
  double ratio_ceiling = 1e8;
};

struct GlsSolution {
  Coefficients beta{};
  Eigen::Matrix4d xtvx_inv = Eigen::Matrix4d::Zero();  // (X' H^-1 X)^-1, H = I + ratio*ZZ'
  double residual_variance = 0.0;                      // profiled phi
  double reml_log_likelihood = 0.0;
};

// Profiled REML criterion for the random-intercept model as a function of
// the variance ratio nu/phi. Each evaluation is O(clusters): the per-cluster
// sufficient statistics are accumulated once, then H^-1 is applied with the
// Sherman-Morrison form for compound-symmetric blocks.
class RemlProfile {
 public:
  explicit RemlProfile(const ClusteredDataset& ds);

  GlsSolution solve(double ratio) const;
  double log_likelihood(double ratio) const { return solve(ratio).reml_log_likelihood; }

  std::size_t observations() const { return n_; }
  std::size_t clusters() const { return clusters_.size(); }

 private:
  struct ClusterStats {
    double n = 0.0;
    Eigen::Vector4d col_sum = Eigen::Vector4d::Zero();  // X_j' 1
    Eigen::Matrix4d xtx = Eigen::Matrix4d::Zero();
    Eigen::Vector4d xty = Eigen::Vector4d::Zero();
    double y_sum = 0.0;
    double yty = 0.0;
  };
  std::vector<ClusterStats> clusters_;
  std::size_t n_ = 0;
};

/// REML fit of y = X beta + zeta_j + eps. Throws SingularDesignError when
/// [1, A, X, A*X] is rank deficient, ConvergenceError if the 1-D search runs
/// out of iterations, DomainError for a binary-scale dataset.
MixedModelFit fit_lmm(const ClusteredDataset& ds, const LmmOptions& options = {});

// ---------------------------------------------------------------------------
// Logistic random-intercept model, adaptive Gauss-Hermite quadrature

struct GlmmOptions {
  int quadrature_points = 15;  // 1 reduces to the Laplace approximation
  int max_iterations = 300;
  double gradient_tolerance = 1e-6;
  double fd_step = 1e-6;          // relative finite-difference step
  double separation_bound = 30.0;  // |beta| beyond this on the logit scale
  double variance_floor = 1e-10;
};

// Marginal log-likelihood of the logistic random-intercept model. Records are
// compressed into (cluster, a, x, y) patterns so evaluation cost scales with
// the number of distinct cells rather than observations.
class GlmmLikelihood {
 public:
  GlmmLikelihood(const ClusteredDataset& ds, int quadrature_points);

  /// Marginal log-likelihood at (beta, nu), nu >= 0.
  double log_likelihood(const Coefficients& beta, double nu) const;

  std::size_t clusters() const { return clusters_.size(); }
  int quadrature_points() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Pattern {
    double a, x, y, count;
  };
  struct Cluster {
    std::vector<Pattern> patterns;
  };
  double cluster_log_integral(const Cluster& c, const Coefficients& beta, double nu) const;

  std::vector<Cluster> clusters_;
  std::vector<double> nodes_;
  std::vector<double> log_weights_;  // log(w_k) + z_k^2
};

MixedModelFit fit_glmm_logit(const ClusteredDataset& ds, int quadrature_points = 15);
MixedModelFit fit_glmm_logit(const ClusteredDataset& ds, const GlmmOptions& options);

// ---------------------------------------------------------------------------
// Intraclass correlation on the latent logistic scale

/// nu / (nu + pi^2/3). Throws DomainError for negative nu.
double icc_logistic(double nu);
/// Inverse of icc_logistic for icc in [0, 1).
double nu_from_icc(double icc);

// ---------------------------------------------------------------------------
// Exact marginal logit, the oracle for the small-variance approximations

enum class UnmeasuredKind { binary, normal };

// Distribution of U given (A, X) and its effect theta on the logit.
// Binary kind: cell holds P(U=1 | a, x). Normal kind: cell holds the mean of
// U given (a, x), with common variance u_variance.
struct UnmeasuredSpec {
  UnmeasuredKind kind = UnmeasuredKind::normal;
  double theta = 0.0;
  std::array<std::array<double, 2>, 2> cell{};  // [a][x]
  double u_variance = 1.0;

  /// Throws DomainError when a probability is outside [0,1] or u_variance <= 0.
  void validate() const;
  /// Cell lookup; x must be 0 or 1.
  double cell_value(int a, double x) const;
};

/// logit P(Y=1 | A=a, X=x) with the random intercept and U integrated out
/// by Gauss-Hermite quadrature (exact two-point sum for binary U).
double marginal_logit_exact(const Coefficients& beta, const UnmeasuredSpec& u, double nu, int a,
                            double x, int quadrature_points = 96);

/// The small-(theta, nu, variance) closed forms: for binary U
/// eta + log{P e^(theta + nu/2) + (1-P) e^(nu/2)}, for normal U
/// eta + theta*mu + (theta^2 * var + nu)/2.
double marginal_logit_approx(const Coefficients& beta, const UnmeasuredSpec& u, double nu, int a,
                             double x);

}  // namespace clustsens
