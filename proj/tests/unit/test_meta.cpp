#include <cmath>
#include <random>
#include <sstream>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "doctest.h"

#include "clustsens/errors.hpp"
#include "clustsens/meta.hpp"
#include "clustsens/normal.hpp"

using namespace clustsens;
using big = boost::multiprecision::cpp_bin_float_50;

namespace {

big big_cdf(const big& x) { return erfc(-x / sqrt(big(2))) / 2; }

const MetaFit kBmi = meta_fit_from_summary(std::log(1.33), 0.08);

std::vector<StudyEffect> studies(const std::vector<std::pair<double, double>>& items) {
  std::vector<StudyEffect> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.push_back({"s" + std::to_string(i), items[i].first, items[i].second, EffectScale::mean_difference});
  }
  return out;
}

}  // namespace

TEST_CASE("DerSimonian-Laird pooling") {
  const auto two = pool(studies({{1.0, 0.1}, {2.0, 0.1}}));
  CHECK(two.q_statistic == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(two.v_hat == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(two.mu_hat == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(two.se_mu == doctest::Approx(std::sqrt(1.0 / (2.0 / 0.5))).epsilon(1e-14));
  CHECK(two.k == 2);

  const auto same = pool(studies({{0.7, 0.2}, {0.7, 0.2}, {0.7, 0.2}}));
  CHECK(same.mu_hat == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(same.v_hat == 0.0);

  CHECK_THROWS_AS(pool(studies({{1.0, 0.1}})), DomainError);
  CHECK_THROWS_AS(pool(studies({{1.0, 0.1}, {1.0, 0.0}})), DomainError);
}

TEST_CASE("DL estimate is truncated at zero whenever Q <= k - 1") {
  std::mt19937_64 gen(17);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> v(0.01, 0.5);
  int truncated = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<std::pair<double, double>> items;
    const int k = 2 + rep % 10;
    for (int i = 0; i < k; ++i) {
      const double var = v(gen);
      items.push_back({0.3 + std::sqrt(var) * z(gen), var});
    }
    const auto fit = pool(studies(items));
    CHECK(fit.v_hat >= 0.0);
    if (fit.q_statistic <= k - 1) {
      CHECK(fit.v_hat == 0.0);
      ++truncated;
    }
  }
  CHECK(truncated > 100);
}

TEST_CASE("synthetic studies calibrated to the BMI summary") {
  // 19 studies with equal within-study variance s2, spread so that the DL
  // estimate is exactly 0.08.
  const int k = 19;
  const double s2 = 0.02, target = 0.08;
  // Equal weights give V = (Q - (k - 1)) s2 / (k - 1).
  const double q_needed = (k - 1) * (1.0 + target / s2);
  std::vector<double> offsets(k);
  double ss = 0.0;
  for (int i = 0; i < k; ++i) ss += (offsets[i] = i - (k - 1) / 2.0) * offsets[i];
  const double scale = std::sqrt(q_needed * s2 / ss);
  std::vector<std::pair<double, double>> items;
  for (int i = 0; i < k; ++i) items.push_back({std::log(1.33) + scale * offsets[i], s2});
  const auto fit = pool(studies(items));
  CHECK(fit.v_hat == doctest::Approx(target).epsilon(1e-12));
  CHECK(fit.mu_hat == doctest::Approx(std::log(1.33)).epsilon(1e-12));
  const auto b = minimal_common_bias(fit, {std::log(1.2), 0.4}, MetaDirection::positive);
  CHECK(std::abs(b.value - 0.17) <= 0.005);
}

TEST_CASE("p_of_q examples") {
  CHECK(p_of_q(meta_fit_from_summary(0.4, 0.2), {0.0, 0.0}, 0.4, MetaDirection::positive) == 0.5);

  const double oracle = static_cast<double>(1 - big_cdf(big(-0.1) / sqrt(big("0.03"))));
  CHECK(std::abs(p_of_q(meta_fit_from_summary(0.3, 0.04), {0.1, 0.01}, 0.1, MetaDirection::positive) - oracle) <= 1e-14);

  // The BMI example: the unrounded minimal bias inverts to exactly r; the
  // rounded 0.17 lands near 0.406.
  const double b_star = minimal_common_bias(kBmi, {std::log(1.2), 0.4}, MetaDirection::positive).value;
  CHECK(p_of_q(kBmi, {b_star, 0.0}, std::log(1.2), MetaDirection::positive) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(p_of_q(kBmi, {0.17, 0.0}, std::log(1.2), MetaDirection::positive) == doctest::Approx(0.40624).epsilon(1e-4));

  CHECK_THROWS_AS(p_of_q(kBmi, {0.0, 0.08}, 0.0, MetaDirection::positive), DomainError);
  try {
    p_of_q(kBmi, {0.0, 0.1}, 0.0, MetaDirection::positive);
  } catch (const DomainError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("0.08") != std::string::npos);
    CHECK(msg.find("0.1") != std::string::npos);
  }
}

TEST_CASE("minimal common bias examples") {
  const auto bmi = minimal_common_bias(kBmi, {std::log(1.2), 0.4}, MetaDirection::positive);
  CHECK(std::abs(bmi.value - 0.17) <= 0.005);
  CHECK_FALSE(bmi.already_not_meaningful);

  for (double r : {0.01, 0.2, 0.49}) {
    CHECK(minimal_common_bias(meta_fit_from_summary(0.6, 0.0), {0.6, r}, MetaDirection::positive).value == 0.0);
  }
  const double oracle = 0.3 + 0.2 * normal_quantile(0.75);
  CHECK(minimal_common_bias(meta_fit_from_summary(0.3, 0.04), {0.0, 0.25}, MetaDirection::positive).value ==
        doctest::Approx(oracle).epsilon(1e-15));

  const auto weak = minimal_common_bias(meta_fit_from_summary(0.1, 0.01), {0.5, 0.25}, MetaDirection::positive);
  CHECK(weak.value < 0.0);
  CHECK(weak.already_not_meaningful);

  CHECK_THROWS_AS(minimal_common_bias(kBmi, {0.1, 0.5}, MetaDirection::positive), DomainError);
  CHECK_THROWS_AS(minimal_common_bias(kBmi, {0.1, 0.0}, MetaDirection::positive), DomainError);
}

TEST_CASE("explains_away_meta") {
  const PqSpec spec{std::log(1.2), 0.4};
  const double b_star = minimal_common_bias(kBmi, spec, MetaDirection::positive).value;
  CHECK(explains_away_meta(kBmi, {b_star, 0.0}, spec, MetaDirection::positive));
  CHECK(explains_away_meta(kBmi, {b_star, 0.05}, spec, MetaDirection::positive));
  CHECK(explains_away_meta(kBmi, {0.18, 0.05}, spec, MetaDirection::positive));
  CHECK_FALSE(explains_away_meta(kBmi, {0.0, 0.0}, spec, MetaDirection::positive));
  CHECK_FALSE(explains_away_meta(kBmi, {0.1, 0.0}, spec, MetaDirection::positive));
}

TEST_CASE("inversion identity over random tuples") {
  std::mt19937_64 gen(2718);
  std::uniform_real_distribution<double> mu(-2.0, 2.0), v(1e-4, 2.0), rr(1e-3, 0.499);
  for (int i = 0; i < 1000; ++i) {
    const auto fit = meta_fit_from_summary(mu(gen), v(gen));
    const PqSpec spec{mu(gen), rr(gen)};
    for (auto dir : {MetaDirection::positive, MetaDirection::negative}) {
      const double b = minimal_common_bias(fit, spec, dir).value;
      CHECK(std::abs(p_of_q(fit, {b, 0.0}, spec.q, dir) - spec.r) <= 1e-10);
    }
  }
}

TEST_CASE("p_of_q structural properties") {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> mu(-2.0, 2.0), v(0.01, 2.0), frac(0.01, 0.99);
  for (int i = 0; i < 1000; ++i) {
    const double m = mu(gen), vh = v(gen), q = mu(gen), mb = mu(gen);
    const auto fit = meta_fit_from_summary(m, vh);
    // Constant bias is the worst case when q + mu_B >= mu_hat.
    if (q + mb >= m) {
      CHECK(p_of_q(fit, {mb, frac(gen) * vh}, q, MetaDirection::positive) <=
            p_of_q(fit, {mb, 0.0}, q, MetaDirection::positive) + 1e-15);
    }
    // Negating the estimates, flipping direction and q leaves p(q) unchanged.
    const auto mirrored = meta_fit_from_summary(-m, vh);
    CHECK(std::abs(p_of_q(fit, {mb, 0.0}, q, MetaDirection::positive) -
                   p_of_q(mirrored, {mb, 0.0}, -q, MetaDirection::negative)) <= 1e-12);
    // Monotone in mu_B (down) and mu_hat (up), away from saturation.
    const double base = p_of_q(fit, {mb, 0.0}, q, MetaDirection::positive);
    if (base > 1e-12 && base < 1 - 1e-12) {
      CHECK(p_of_q(fit, {mb + 0.01, 0.0}, q, MetaDirection::positive) < base);
      CHECK(p_of_q(meta_fit_from_summary(m + 0.01, vh), {mb, 0.0}, q, MetaDirection::positive) > base);
    }
  }
}

TEST_CASE("study CSV") {
  std::istringstream in("study_id,estimate,std_error\na,1.0,0.31622776601683794\nb,2.0,0.31622776601683794\n");
  const auto s = read_studies_csv(in);
  REQUIRE(s.size() == 2);
  CHECK(s[0].within_variance == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(pool(s).v_hat == doctest::Approx(0.4).epsilon(1e-13));

  std::istringstream missing("study_id,estimate\na,1\n");
  CHECK_THROWS_AS(read_studies_csv(missing), SchemaError);
  std::istringstream bad("study_id,estimate,std_error\na,1,0\n");
  CHECK_THROWS_AS(read_studies_csv(bad), ValidationError);
  CHECK_THROWS_AS(load_studies_csv("/nonexistent/studies.csv"), IoError);
}
