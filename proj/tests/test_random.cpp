#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "distcal/random.hpp"
#include "support.hpp"

using namespace distcal;

TEST_CASE("equal (seed, stream) pairs give bit-identical sequences") {
  RandomStream a(42, 7);
  RandomStream b(42, 7);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct stream ids diverge immediately") {
  RandomStream a(42, 0);
  RandomStream b(42, 1);
  int equal = 0;
  for (int i = 0; i < 64; ++i) equal += (a.next_u64() == b.next_u64());
  CHECK(equal == 0);
}

TEST_CASE("uniform lies in [0,1) and has the right first two moments") {
  RandomStream stream(9, 0);
  std::vector<double> x(200000);
  for (auto& v : x) {
    v = stream.uniform();
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1.0);
  }
  CHECK(std::fabs(testsupport::mean(x) - 0.5) < 5 * testsupport::std_error_of_mean(x));
  CHECK(std::fabs(testsupport::variance(x) - 1.0 / 12.0) < 1e-3);
}

TEST_CASE("gaussian draws pass a KS check") {
  RandomStream stream(10, 0);
  std::vector<double> x(50000);
  for (auto& v : x) v = stream.gaussian();
  const double d = testsupport::ks_statistic(
      x, [](double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); });
  CHECK(testsupport::ks_pvalue(d, x.size()) > 0.01);
}

TEST_CASE("gamma draws match the law's mean and variance") {
  RandomStream stream(11, 0);
  for (double shape : {0.5, 1.0, 2.5}) {
    const double scale = 1.5;
    std::vector<double> x(200000);
    for (auto& v : x) v = stream.gamma(shape, scale);
    CHECK(std::fabs(testsupport::mean(x) - shape * scale) <
          5 * testsupport::std_error_of_mean(x));
    const double var = shape * scale * scale;
    CHECK(std::fabs(testsupport::variance(x) - var) <
          5 * testsupport::std_error_of_variance(x));
  }
}

TEST_CASE("symmetric dirichlet has the exchangeable marginal variance") {
  RandomStream stream(12, 0);
  const int k = 5;
  const double c = 2.0;
  std::vector<double> first(100000);
  for (auto& v : first) v = stream.dirichlet_symmetric(k, c)[0];
  // Var = (K-1) / (K^2 (K c + 1)).
  const double expect = (k - 1.0) / (k * k * (k * c + 1.0));
  CHECK(std::fabs(testsupport::mean(first) - 1.0 / k) <
        5 * testsupport::std_error_of_mean(first));
  CHECK(std::fabs(testsupport::variance(first) - expect) <
        5 * testsupport::std_error_of_variance(first));
}

TEST_CASE("poisson matches its mean across the chunking boundary") {
  RandomStream stream(13, 0);
  for (double lambda : {3.0, 30.0, 200.0}) {
    std::vector<double> x(50000);
    for (auto& v : x) v = static_cast<double>(stream.poisson(lambda));
    CHECK(std::fabs(testsupport::mean(x) - lambda) < 5 * testsupport::std_error_of_mean(x));
    CHECK(std::fabs(testsupport::variance(x) - lambda) <
          5 * testsupport::std_error_of_variance(x));
  }
}

TEST_CASE("categorical respects the weights") {
  RandomStream stream(14, 0);
  const std::vector<double> cdf = {1.0, 3.0, 6.0};  // weights 1, 2, 3
  std::vector<long long> counts(3, 0);
  const int n = 120000;
  for (int i = 0; i < n; ++i) ++counts[categorical_from_cdf(cdf, stream)];
  CHECK(std::fabs(counts[0] / static_cast<double>(n) - 1.0 / 6.0) < 0.005);
  CHECK(std::fabs(counts[1] / static_cast<double>(n) - 2.0 / 6.0) < 0.005);
  CHECK(std::fabs(counts[2] / static_cast<double>(n) - 3.0 / 6.0) < 0.005);
}

TEST_CASE("sample_without_replacement covers the range without repeats") {
  RandomStream stream(15, 0);
  const auto pick = stream.sample_without_replacement(100, 30);
  CHECK(pick.size() == 30);
  std::vector<bool> seen(100, false);
  for (auto v : pick) {
    REQUIRE(v < 100);
    CHECK(!seen[v]);
    seen[v] = true;
  }
}
