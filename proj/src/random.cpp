#include "distcal/random.hpp"

#include <cmath>
#include <numeric>

#include "distcal/errors.hpp"

namespace distcal {

namespace {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id) {
  // Feed both identifiers through SplitMix64 so that nearby (seed, stream)
  // pairs land far apart in state space.
  std::uint64_t x = seed ^ 0x5851F42D4C957F2DULL;
  x ^= splitmix64(x) + stream_id;
  for (auto& word : s_) word = splitmix64(x);
  if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;  // all-zero state is invalid
}

std::uint64_t RandomStream::next_u64() {
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double RandomStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RandomStream::uniform_below(std::uint64_t n) {
  if (n == 0) throw_domain("uniform_below: n must be positive");
  const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

bool RandomStream::bernoulli(double p) { return uniform() < p; }

double RandomStream::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_gaussian_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_gaussian_ = v * factor;
  has_spare_ = true;
  return u * factor;
}

double RandomStream::gamma(double shape, double scale) {
  if (shape <= 0.0 || scale <= 0.0)
    throw_domain("gamma: shape and scale must be positive");
  if (shape < 1.0) {
    const double u = uniform();
    return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = gaussian();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
  }
}

std::vector<double> RandomStream::dirichlet_symmetric(int dim, double concentration) {
  if (dim < 1) throw_domain("dirichlet: dimension must be positive");
  if (concentration <= 0.0) throw_domain("dirichlet: concentration must be positive");
  std::vector<double> x(static_cast<std::size_t>(dim));
  double total = 0.0;
  for (auto& xi : x) {
    xi = gamma(concentration, 1.0);
    total += xi;
  }
  if (total <= 0.0) {
    // Possible only through underflow at tiny concentrations.
    throw Error(ErrorKind::DegeneratePerturbation,
                "dirichlet: all gamma draws underflowed to zero");
  }
  for (auto& xi : x) xi /= total;
  return x;
}

long long RandomStream::poisson(double mean) {
  if (mean < 0.0) throw_domain("poisson: mean must be nonnegative");
  long long count = 0;
  // exp(-mean) underflows past ~745; split additively.
  while (mean > 30.0) {
    double chunk = 30.0;
    const double limit = std::exp(-chunk);
    long long k = 0;
    double prod = 1.0;
    for (;;) {
      prod *= uniform();
      if (prod <= limit) break;
      ++k;
    }
    count += k;
    mean -= chunk;
  }
  const double limit = std::exp(-mean);
  double prod = 1.0;
  long long k = -1;
  do {
    prod *= uniform();
    ++k;
  } while (prod > limit);
  return count + k;
}

std::vector<std::uint32_t> RandomStream::sample_without_replacement(std::uint32_t n,
                                                                    std::uint32_t k) {
  if (k > n) throw_domain("sample_without_replacement: k exceeds n");
  std::vector<std::uint32_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0u);
  for (std::uint32_t i = 0; i < k; ++i) {
    const std::uint32_t j = i + static_cast<std::uint32_t>(uniform_below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

std::size_t categorical_from_cdf(const std::vector<double>& cdf, RandomStream& stream) {
  if (cdf.empty()) throw_domain("categorical_from_cdf: empty distribution");
  const double u = stream.uniform() * cdf.back();
  std::size_t lo = 0, hi = cdf.size() - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (u < cdf[mid]) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

}  // namespace distcal
