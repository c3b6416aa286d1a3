#pragma once

namespace distcal {

// Distribution kernels used throughout: standard normal, Student t and
// chi-square CDFs plus the quantiles the interval constructions need.
// Quantiles are computed by root-finding against the CDF evaluations, so the
// pairs are mutual inverses by construction.

double gaussian_cdf(double x);

// p in (0,1); absolute error below 1e-9.
double gaussian_quantile(double p);

// df >= 1. Regularized incomplete beta evaluation.
double t_cdf(int df, double x);

// df >= 1, p in (0,1); absolute error below 1e-8.
double t_quantile(int df, double p);

// df >= 1, x >= 0. Regularized lower incomplete gamma.
double chisq_cdf(int df, double x);

// Regularized lower incomplete gamma P(a, x); exposed for oracles.
double regularized_gamma_p(double a, double x);

// Regularized incomplete beta I_x(a, b); exposed for oracles.
double regularized_beta(double a, double b, double x);

}  // namespace distcal
