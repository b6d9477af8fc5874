#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "maxcombo/mvnorm.hpp"
#include "oracles.hpp"

using namespace maxcombo;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

CorrelationMatrix corr3(double a, double b, double c) {
  Eigen::MatrixXd m(3, 3);
  m << 1, a, b, a, 1, c, b, c, 1;
  return CorrelationMatrix(m);
}

}  // namespace

TEST(Correlation, Validation) {
  Eigen::MatrixXd asym(2, 2);
  asym << 1, 0.5, 0.4, 1;
  EXPECT_THROW(CorrelationMatrix{asym}, ValidationError);
  Eigen::MatrixXd diag(2, 2);
  diag << 2, 0.5, 0.5, 1;
  EXPECT_THROW(CorrelationMatrix{diag}, ValidationError);
  EXPECT_THROW(CorrelationMatrix::identity(7), ValidationError);
  Eigen::MatrixXd bad(3, 3);
  bad << 1, 0.9, -0.9, 0.9, 1, 0.9, -0.9, 0.9, 1;
  EXPECT_THROW(CorrelationMatrix{bad}, ValidationError);
}

TEST(Correlation, ClipsMarginallyIndefinite) {
  Eigen::MatrixXd m(4, 4);
  m << 1, .864, .913, .940, .864, 1, .583, .892, .913, .583, 1, .792, .940, .892, .793, 1;
  const auto c = CorrelationMatrix::symmetrized(m);
  EXPECT_TRUE(c.regularized());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.matrix());
  EXPECT_GE(es.eigenvalues().minCoeff(), 0.0);
  EXPECT_NEAR(c.matrix()(2, 3), 0.7925, 1e-3);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(c.matrix()(i, i), 1.0);
}

TEST(Correlation, FromCovariance) {
  Eigen::MatrixXd cov(2, 2);
  cov << 4, 1, 1, 9;
  const auto c = CorrelationMatrix::from_covariance(cov);
  EXPECT_NEAR(c.matrix()(0, 1), 1.0 / 6.0, 1e-15);
}

TEST(Rectangle, OneDimensionIsExact) {
  const auto c = CorrelationMatrix::identity(1);
  const std::vector<double> lo{-1.0}, hi{2.0};
  const auto r = mvn_rectangle(lo, hi, c);
  EXPECT_NEAR(r.probability, norm_cdf(2.0) - norm_cdf(-1.0), 1e-15);
  EXPECT_EQ(r.error, 0.0);
}

TEST(Rectangle, IndependentProduct) {
  const auto c = CorrelationMatrix::identity(4);
  const std::vector<double> lo{-1, -0.5, -kInf, 0.2}, hi{1, kInf, 0.3, 1.7};
  double exact = 1.0;
  for (int i = 0; i < 4; ++i) exact *= norm_cdf(hi[i]) - norm_cdf(lo[i]);
  const auto r = mvn_rectangle(lo, hi, c);
  EXPECT_NEAR(r.probability, exact, 1e-5);
}

TEST(Rectangle, BivariateAgainstQuadrature) {
  for (double rho : {-0.7, -0.2, 0.3, 0.8, 0.95}) {
    Eigen::MatrixXd m(2, 2);
    m << 1, rho, rho, 1;
    const CorrelationMatrix c(m);
    for (auto [a, b] : {std::pair{0.0, 0.0}, {-1.0, 0.5}, {1.3, -2.0}, {-2.2, -2.4}}) {
      const std::vector<double> lo{-kInf, -kInf}, hi{a, b};
      const auto r = mvn_rectangle(lo, hi, c);
      EXPECT_NEAR(r.probability, oracle::bvn_cdf(a, b, rho), 1e-5) << rho << " " << a << " " << b;
      EXPECT_LE(r.error, 1e-5);
    }
  }
}

TEST(Rectangle, TrivariateOrthant) {
  const double a = 0.3, b = 0.5, cc = 0.7;
  const auto c = corr3(a, b, cc);
  const std::vector<double> lo{0, 0, 0}, hi{kInf, kInf, kInf};
  const double exact = 0.125 + (std::asin(a) + std::asin(b) + std::asin(cc)) / (4.0 * std::numbers::pi);
  EXPECT_NEAR(mvn_rectangle(lo, hi, c).probability, exact, 1e-5);
}

TEST(Rectangle, EquicorrelatedHalfOrthant) {
  // P(all Z_i <= 0) = 1/(k+1) for correlation 1/2.
  for (int k = 2; k <= 6; ++k) {
    const std::vector<double> lo(static_cast<std::size_t>(k), -kInf), hi(static_cast<std::size_t>(k), 0.0);
    EXPECT_NEAR(mvn_rectangle(lo, hi, CorrelationMatrix::equicorrelated(k, 0.5)).probability, 1.0 / (k + 1), 2e-5);
  }
}

TEST(Rectangle, SingularDuplicateCoordinate) {
  // Z3 = Z1 exactly: the rectangle reduces to two dimensions.
  const auto c = corr3(0.4, 1.0, 0.4);
  const std::vector<double> lo{-kInf, -kInf, -kInf}, hi{0.5, -0.3, 0.2};
  EXPECT_NEAR(mvn_rectangle(lo, hi, c).probability, oracle::bvn_cdf(0.2, -0.3, 0.4), 2e-5);
}

TEST(Rectangle, AllOnesOrthant) {
  const auto c = CorrelationMatrix::equicorrelated(4, 1.0);
  const std::vector<double> lo(4, -kInf), hi(4, 0.0);
  EXPECT_NEAR(mvn_rectangle(lo, hi, c).probability, 0.5, 1e-9);
}

TEST(Rectangle, EmptyAndBadBounds) {
  const auto c = CorrelationMatrix::identity(2);
  const std::vector<double> lo{1.0, 0.0}, hi{0.5, 1.0};
  EXPECT_EQ(mvn_rectangle(lo, hi, c).probability, 0.0);
  const std::vector<double> nanlo{std::nan(""), 0.0};
  EXPECT_THROW(mvn_rectangle(nanlo, hi, c), ValidationError);
  const std::vector<double> short_lo{0.0};
  EXPECT_THROW(mvn_rectangle(short_lo, hi, c), ValidationError);
}

TEST(Rectangle, DeterministicForFixedSeed) {
  const auto c = CorrelationMatrix::equicorrelated(5, 0.6);
  const std::vector<double> lo(5, -1.5), hi(5, kInf);
  EXPECT_EQ(mvn_rectangle(lo, hi, c).probability, mvn_rectangle(lo, hi, c).probability);
}

TEST(Rectangle, ThresholdVariantAgreesOnSide) {
  const auto c = CorrelationMatrix::equicorrelated(4, 0.8);
  const std::vector<double> lo(4, -2.0), hi(4, kInf);
  const double p = mvn_rectangle(lo, hi, c).probability;
  for (double thr : {p - 0.01, p + 0.01}) {
    const auto r = mvn_rectangle_vs(lo, hi, c, thr);
    EXPECT_EQ(r.probability > thr, p > thr);
  }
}

TEST(Quantile, IndependenceClosedForm) {
  const auto c = CorrelationMatrix::identity(4);
  const double z = equicoordinate_lower_quantile(c, 0.025);
  EXPECT_NEAR(norm_cdf(z), 1.0 - std::pow(0.975, 0.25), 2e-6);
  const double cs = equicoordinate_central_quantile(c, 0.95);
  EXPECT_NEAR(cs, norm_quantile(0.5 + 0.5 * std::pow(0.95, 0.25)), 1e-3);
}

TEST(Quantile, SingleEffectiveTest) {
  const auto c = CorrelationMatrix::equicorrelated(4, 1.0);
  EXPECT_NEAR(equicoordinate_lower_quantile(c, 0.025), norm_quantile(0.025), 1e-4);
}

TEST(Quantile, BetweenBonferroniAndUnadjusted) {
  const auto c = CorrelationMatrix::equicorrelated(4, 0.7);
  const double z = equicoordinate_lower_quantile(c, 0.025);
  EXPECT_GT(z, norm_quantile(0.025 / 4));
  EXPECT_LT(z, norm_quantile(0.025));
}

TEST(Quantile, RejectsBadTargets) {
  const auto c = CorrelationMatrix::identity(2);
  EXPECT_THROW(equicoordinate_lower_quantile(c, 0.0), ValidationError);
  EXPECT_THROW(equicoordinate_lower_quantile(c, 0.7), ValidationError);
  EXPECT_THROW(equicoordinate_central_quantile(c, 0.4), ValidationError);
}
