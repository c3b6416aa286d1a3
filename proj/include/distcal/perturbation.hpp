#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "distcal/linalg.hpp"
#include "distcal/random.hpp"

#include <json.hpp>

namespace distcal {

// Random distributional perturbation models: data is drawn i.i.d. from a
// randomly perturbed distribution, realized once per sample. Each model
// exposes its ground-truth variance-inflation factor for experiment
// validation.

enum class PertModel {
  None,
  BinnedWeights,
  Resample,
  Cluster,
  DiscreteExchangeable,
};

const char* pert_model_name(PertModel model);
PertModel pert_model_from_name(const std::string& name);

struct WeightLaw {
  enum class Kind { Constant, Gamma };
  Kind kind = Kind::Constant;
  double shape = 1.0;
  double scale = 1.0;

  double mean() const;
  double variance() const;
  double second_moment() const;
  double draw(RandomStream& stream) const;
};

struct PerturbationSpec {
  PertModel model = PertModel::None;
  // Bin count / subpopulation size / cluster-pool size / category count.
  // Under cell thinning (selection_prob < 1) m is the expected number of
  // selected bins; the realized grid has m / selection_prob cells.
  long long m = 1;
  WeightLaw weight_law;
  double selection_prob = 1.0;
  double epsilon = 0.0;        // Cluster radius
  double concentration = 1.0;  // Dirichlet parameter (DiscreteExchangeable)

  void validate() const;

  nlohmann::json to_json() const;
  static PerturbationSpec from_json(const nlohmann::json& j);
};

struct PerturbedSample {
  Matrix data;  // n rows
  PerturbationSpec spec;
  std::string base_label;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  // Realized perturbation scale; filled by the discrete model, where the
  // ground truth is delta_dist rather than an n-dependent delta.
  double delta_dist = 0.0;
};

// Latent cell grid on [0,1]^axes with per-axis equal splits. Cells are
// selected by independent Bernoulli(selection_prob) thinning and selected
// cells carry i.i.d. weights from the weight law; unselected cells carry
// zero weight. With selection_prob = 1 every cell is weighted, which is the
// plain binned model.
struct LatentCube {
  int axes = 1;
  long long per_axis = 1;
  double selection_prob = 1.0;
  WeightLaw weight_law;

  long long total_cells() const;
};

struct CubeRealization {
  std::vector<std::uint64_t> cells;  // selected cell codes, mixed radix by axis
  std::vector<double> weights;
  std::vector<double> cdf;  // cumulative weights over `cells`
};

CubeRealization realize_cube(const LatentCube& cube, RandomStream& stream);

// Draws one latent point: selects a cell proportionally to its weight, then
// a uniform position inside that cell.
void draw_latent_point(const LatentCube& cube, const CubeRealization& real,
                       RandomStream& stream, std::span<double> u_out);

// One latent coordinate, monotone map into a data row.
using InverseCdf = std::function<std::vector<double>(double)>;
// One draw from the base law.
using BaseSampler = std::function<std::vector<double>(RandomStream&)>;

PerturbedSample sample_binned(const PerturbationSpec& spec,
                              const InverseCdf& base_inverse_cdf, long long n,
                              RandomStream& stream);

PerturbedSample sample_resample(long long m, const BaseSampler& base_sampler,
                                long long n, RandomStream& stream);

PerturbedSample sample_cluster(long long m, double epsilon,
                               const BaseSampler& base_sampler, long long n,
                               RandomStream& stream);

PerturbedSample sample_discrete_exchangeable(int categories, double concentration,
                                             long long n, RandomStream& stream);

// Ground-truth delta at sample size n for models whose scale is a function
// of (spec, n). The discrete model reports delta_dist at sampling time and
// is rejected here.
double true_delta(const PerturbationSpec& spec, long long n);

// delta_dist of the symmetric-Dirichlet discrete model.
double discrete_delta_dist(int categories, double concentration);

struct ProbeRow {
  double p = 0.0;         // attained event probability
  double variance = 0.0;  // Var over realizations of the perturbed mass
  double std_error = 0.0; // Monte Carlo standard error of `variance`
};

// Monte Carlo estimate of Var(perturbed probability of A_p) for latent
// events A_p = [0, p). Used to check proportionality to p(1-p). For the
// discrete model, p is rounded to the nearest attainable j/K.
std::vector<ProbeRow> variance_law_probe(const PerturbationSpec& spec,
                                         const std::vector<double>& event_probs,
                                         long long replicates, RandomStream& stream);

}  // namespace distcal
