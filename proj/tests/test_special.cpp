#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "distcal/errors.hpp"
#include "distcal/special.hpp"
#include "support.hpp"

using namespace distcal;

namespace {
double gaussian_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}
}  // namespace

TEST_CASE("gaussian quantile hits the anchor values") {
  CHECK(gaussian_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::fabs(gaussian_quantile(0.975) - 1.959964) < 1e-6);
  CHECK(std::fabs(gaussian_quantile(0.025) + 1.959964) < 1e-6);
  CHECK(std::fabs(gaussian_quantile(0.975) + gaussian_quantile(0.025)) < 1e-12);
}

TEST_CASE("gaussian quantile agrees with an independent quadrature oracle") {
  // Integrate the density from 0 to the reported quantile and compare the
  // enclosed mass with p - 1/2.
  for (double p : {0.6, 0.8, 0.95, 0.975, 0.999}) {
    const double z = gaussian_quantile(p);
    const double mass = testsupport::integrate(gaussian_pdf, 0.0, z);
    CHECK(std::fabs(mass - (p - 0.5)) < 1e-9);
  }
}

TEST_CASE("gaussian quantile rejects probabilities outside (0,1)") {
  CHECK_THROWS_AS(gaussian_quantile(0.0), Error);
  CHECK_THROWS_AS(gaussian_quantile(1.0), Error);
  CHECK_THROWS_AS(gaussian_quantile(-0.3), Error);
}

TEST_CASE("gaussian cdf/quantile round trip") {
  for (double p = 0.001; p < 1.0; p += 0.013)
    CHECK(std::fabs(gaussian_cdf(gaussian_quantile(p)) - p) < 1e-9);
}

TEST_CASE("t quantile anchor values") {
  CHECK(t_quantile(7, 0.5) == doctest::Approx(0.0).epsilon(1e-12));
  // df=1 is Cauchy with closed-form quantile tan(pi (p - 1/2)).
  const double cauchy = std::tan(M_PI * (0.975 - 0.5));
  CHECK(std::fabs(t_quantile(1, 0.975) - cauchy) < 1e-6);
  CHECK(std::fabs(t_quantile(1, 0.975) - 12.7062) < 1e-4);
  // Large df converges to the Gaussian quantile.
  CHECK(std::fabs(t_quantile(10000, 0.975) - gaussian_quantile(0.975)) < 1e-3);
  CHECK_THROWS_AS(t_quantile(0, 0.5), Error);
  CHECK_THROWS_AS(t_quantile(5, 0.0), Error);
}

TEST_CASE("t cdf and quantile are mutual inverses") {
  for (int df : {1, 2, 3, 5, 8, 12, 30, 200}) {
    for (double p = 0.005; p < 1.0; p += 0.0245) {
      CHECK(std::fabs(t_cdf(df, t_quantile(df, p)) - p) < 1e-7);
    }
  }
}

TEST_CASE("t cdf agrees with quadrature for df=3") {
  const int df = 3;
  auto pdf = [&](double x) {
    const double nu = df;
    return std::exp(std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2)) /
           std::sqrt(nu * M_PI) * std::pow(1 + x * x / nu, -(nu + 1) / 2);
  };
  for (double x : {0.5, 1.0, 2.2}) {
    const double mass = testsupport::integrate(pdf, 0.0, x);
    CHECK(std::fabs(t_cdf(df, x) - (0.5 + mass)) < 1e-9);
  }
}

TEST_CASE("chi-square cdf anchors") {
  CHECK(chisq_cdf(2, 0.0) == doctest::Approx(0.0));
  // chi^2(2) is exponential with mean 2, so the median sits at 2 ln 2.
  CHECK(std::fabs(chisq_cdf(2, 2.0 * std::log(2.0)) - 0.5) < 1e-12);
  CHECK(std::fabs(chisq_cdf(5, 1e6) - 1.0) < 1e-12);
  CHECK_THROWS_AS(chisq_cdf(2, -0.1), Error);
  CHECK_THROWS_AS(chisq_cdf(0, 1.0), Error);
}

TEST_CASE("chi-square cdf agrees with quadrature for df=5") {
  const double a = 2.5;
  auto pdf = [&](double x) {
    return std::pow(x, a - 1.0) * std::exp(-x / 2.0) /
           (std::pow(2.0, a) * std::exp(std::lgamma(a)));
  };
  for (double x : {1.0, 4.0, 9.0}) {
    const double mass = testsupport::integrate(pdf, 1e-12, x);
    CHECK(std::fabs(chisq_cdf(5, x) - mass) < 1e-9);
  }
}
