#include "distcal/special.hpp"

#include <cmath>
#include <limits>

#include "distcal/errors.hpp"

namespace distcal {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;

// Lentz continued fraction for the incomplete beta (classic form).
double beta_continued_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-15;
  constexpr int kMaxIter = 500;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw Error(ErrorKind::Domain, "incomplete beta continued fraction did not converge");
}

// Series form of the regularized lower incomplete gamma, for x < a + 1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int i = 0; i < 1000; ++i) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * 1e-16)
      return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  throw Error(ErrorKind::Domain, "incomplete gamma series did not converge");
}

// Continued fraction for the regularized upper incomplete gamma, x >= a + 1.
double gamma_q_continued_fraction(double a, double x) {
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 1000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16)
      return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  throw Error(ErrorKind::Domain, "incomplete gamma continued fraction did not converge");
}

// Rational initial guess for the normal quantile (Acklam), refined below.
double gaussian_quantile_estimate(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

double gaussian_pdf(double x) {
  return std::exp(-0.5 * x * x) * 0.3989422804014326779;
}

}  // namespace

double gaussian_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

double gaussian_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw_domain("gaussian_quantile: p must lie in (0,1)");
  if (p == 0.5) return 0.0;
  double x = gaussian_quantile_estimate(p);
  // Halley refinement against the erfc-based CDF; two steps reach ~1e-15.
  for (int i = 0; i < 2; ++i) {
    const double err = gaussian_cdf(x) - p;
    const double pdf = gaussian_pdf(x);
    if (pdf <= 0.0) break;
    const double u = err / pdf;
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

double regularized_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw_domain("regularized_beta: a, b must be positive");
  if (x < 0.0 || x > 1.0) throw_domain("regularized_beta: x must lie in [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
               a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double regularized_gamma_p(double a, double x) {
  if (a <= 0.0) throw_domain("regularized_gamma_p: a must be positive");
  if (x < 0.0) throw_domain("regularized_gamma_p: x must be nonnegative");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_continued_fraction(a, x);
}

double t_cdf(int df, double x) {
  if (df < 1) throw_domain("t_cdf: df must be at least 1");
  if (x == 0.0) return 0.5;
  const double nu = static_cast<double>(df);
  const double w = nu / (nu + x * x);
  const double half_tail = 0.5 * regularized_beta(0.5 * nu, 0.5, w);
  return x > 0.0 ? 1.0 - half_tail : half_tail;
}

double t_quantile(int df, double p) {
  if (df < 1) throw_domain("t_quantile: df must be at least 1");
  if (!(p > 0.0 && p < 1.0)) throw_domain("t_quantile: p must lie in (0,1)");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -t_quantile(df, 1.0 - p);

  // Bracket the root, then bisect; the Gaussian quantile seeds the bracket.
  double lo = 0.0;
  double hi = std::max(1.0, 2.0 * gaussian_quantile(p));
  while (t_cdf(df, hi) < p) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e308) throw_domain("t_quantile: bracket expansion failed");
  }
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (t_cdf(df, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-12 * std::max(1.0, std::fabs(hi))) break;
  }
  return 0.5 * (lo + hi);
}

double chisq_cdf(int df, double x) {
  if (df < 1) throw_domain("chisq_cdf: df must be at least 1");
  if (x < 0.0) throw_domain("chisq_cdf: x must be nonnegative");
  return regularized_gamma_p(0.5 * df, 0.5 * x);
}

}  // namespace distcal
