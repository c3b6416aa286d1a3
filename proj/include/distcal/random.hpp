#pragma once

#include <cstdint>
#include <vector>

namespace distcal {

// Seedable, splittable random stream.
//
// Generator family: xoshiro256++ (Blackman & Vigna), with the 256-bit state
// derived from (seed, stream_id) through SplitMix64. Equal (seed, stream_id)
// pairs give bit-identical sequences; distinct stream_ids give statistically
// independent streams. Replicated experiments assign one stream per replicate
// (stream_id = replicate index) so results do not depend on scheduling.
//
// A stream is owned by a single execution context at a time; it is cheap to
// construct and never shared across threads.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t stream_id = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  std::uint64_t next_u64();

  // Uniform on [0,1) with 53-bit resolution.
  double uniform();

  // Uniform integer in [0, n), unbiased (rejection on the top range).
  std::uint64_t uniform_below(std::uint64_t n);

  bool bernoulli(double p);

  // Standard normal via Marsaglia's polar method (caches the spare deviate).
  double gaussian();

  // Gamma(shape, scale), Marsaglia–Tsang squeeze for shape >= 1 and the
  // boost U^(1/shape) trick below 1.
  double gamma(double shape, double scale);

  // Symmetric Dirichlet(concentration) of the given dimension.
  std::vector<double> dirichlet_symmetric(int dim, double concentration);

  // Poisson(mean) by Knuth's product method, split into chunks so the
  // per-chunk mean stays small; exact for any mean at O(mean) uniforms.
  long long poisson(double mean);

  // Random subset sampling helper: fills `out` with a uniformly ordered
  // permutation of 0..n-1 truncated to k entries (partial Fisher–Yates).
  std::vector<std::uint32_t> sample_without_replacement(std::uint32_t n, std::uint32_t k);

 private:
  std::uint64_t s_[4];
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  double spare_gaussian_ = 0.0;
  bool has_spare_ = false;
};

// Draws one index from the categorical distribution given by cumulative
// weights (strictly increasing, last entry = total mass).
std::size_t categorical_from_cdf(const std::vector<double>& cdf, RandomStream& stream);

}  // namespace distcal
