#include "distcal/perturbation.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "distcal/errors.hpp"

namespace distcal {

namespace {

// Above this cell count a realization switches from dense per-cell Bernoulli
// thinning to drawing the selected-cell count from Poisson(m) and placing
// the cells uniformly; the approximation error is O(selection_prob * m).
constexpr long long kDenseCellLimit = 1 << 22;

Matrix rows_to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw_domain("sample: n must be at least 1");
  const int d = static_cast<int>(rows.front().size());
  Matrix out(static_cast<int>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int>(rows[i].size()) != d)
      throw_domain("sample: base law returned rows of varying width");
    for (int j = 0; j < d; ++j) out.at(static_cast<int>(i), j) = rows[i][j];
  }
  return out;
}

}  // namespace

const char* pert_model_name(PertModel model) {
  switch (model) {
    case PertModel::None: return "none";
    case PertModel::BinnedWeights: return "binned_weights";
    case PertModel::Resample: return "resample";
    case PertModel::Cluster: return "cluster";
    case PertModel::DiscreteExchangeable: return "discrete_exchangeable";
  }
  return "unknown";
}

PertModel pert_model_from_name(const std::string& name) {
  if (name == "none") return PertModel::None;
  if (name == "binned_weights") return PertModel::BinnedWeights;
  if (name == "resample") return PertModel::Resample;
  if (name == "cluster") return PertModel::Cluster;
  if (name == "discrete_exchangeable") return PertModel::DiscreteExchangeable;
  throw Error(ErrorKind::Config, "unknown perturbation model: " + name);
}

double WeightLaw::mean() const {
  return kind == Kind::Constant ? 1.0 : shape * scale;
}

double WeightLaw::variance() const {
  return kind == Kind::Constant ? 0.0 : shape * scale * scale;
}

double WeightLaw::second_moment() const {
  const double mu = mean();
  return variance() + mu * mu;
}

double WeightLaw::draw(RandomStream& stream) const {
  return kind == Kind::Constant ? 1.0 : stream.gamma(shape, scale);
}

void PerturbationSpec::validate() const {
  if (m < 1) throw_domain("PerturbationSpec: m must be at least 1");
  if (epsilon < 0.0) throw_domain("PerturbationSpec: epsilon must be nonnegative");
  if (!(selection_prob > 0.0 && selection_prob <= 1.0))
    throw_domain("PerturbationSpec: selection_prob must lie in (0,1]");
  if (concentration <= 0.0)
    throw_domain("PerturbationSpec: concentration must be positive");
  if (weight_law.kind == WeightLaw::Kind::Gamma &&
      (weight_law.shape <= 0.0 || weight_law.scale <= 0.0))
    throw_domain("PerturbationSpec: gamma weight law needs positive shape and scale");
  if (model == PertModel::DiscreteExchangeable && m < 2)
    throw_domain("PerturbationSpec: discrete model needs at least 2 categories");
}

nlohmann::json PerturbationSpec::to_json() const {
  nlohmann::json j;
  j["model"] = pert_model_name(model);
  j["m"] = m;
  if (weight_law.kind == WeightLaw::Kind::Gamma) {
    j["weight_law"] = {{"gamma", {weight_law.shape, weight_law.scale}}};
  } else {
    j["weight_law"] = "constant";
  }
  j["selection_prob"] = selection_prob;
  j["epsilon"] = epsilon;
  j["concentration"] = concentration;
  return j;
}

PerturbationSpec PerturbationSpec::from_json(const nlohmann::json& j) {
  PerturbationSpec spec;
  try {
    spec.model = pert_model_from_name(j.at("model").get<std::string>());
    if (j.contains("m")) spec.m = j.at("m").get<long long>();
    if (j.contains("weight_law")) {
      const auto& wl = j.at("weight_law");
      if (wl.is_string() && wl.get<std::string>() == "constant") {
        spec.weight_law.kind = WeightLaw::Kind::Constant;
      } else if (wl.is_object() && wl.contains("gamma")) {
        spec.weight_law.kind = WeightLaw::Kind::Gamma;
        spec.weight_law.shape = wl.at("gamma").at(0).get<double>();
        spec.weight_law.scale = wl.at("gamma").at(1).get<double>();
      } else {
        throw Error(ErrorKind::Config, "weight_law must be \"constant\" or {\"gamma\":[shape,scale]}");
      }
    }
    if (j.contains("selection_prob")) spec.selection_prob = j.at("selection_prob").get<double>();
    if (j.contains("epsilon")) spec.epsilon = j.at("epsilon").get<double>();
    if (j.contains("concentration")) spec.concentration = j.at("concentration").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("invalid perturbation spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

long long LatentCube::total_cells() const {
  long double total = 1.0L;
  for (int a = 0; a < axes; ++a) total *= static_cast<long double>(per_axis);
  if (total > 4e18L)
    throw_domain("LatentCube: cell grid exceeds representable size");
  return static_cast<long long>(total);
}

CubeRealization realize_cube(const LatentCube& cube, RandomStream& stream) {
  if (cube.axes < 1 || cube.per_axis < 1)
    throw_domain("LatentCube: axes and per_axis must be positive");
  const long long total = cube.total_cells();
  CubeRealization real;

  if (cube.selection_prob >= 1.0) {
    if (total > kDenseCellLimit)
      throw_domain("LatentCube: too many cells for a dense realization");
    real.cells.resize(static_cast<std::size_t>(total));
    real.weights.resize(static_cast<std::size_t>(total));
    for (long long c = 0; c < total; ++c) {
      real.cells[static_cast<std::size_t>(c)] = static_cast<std::uint64_t>(c);
      real.weights[static_cast<std::size_t>(c)] = cube.weight_law.draw(stream);
    }
  } else if (total <= kDenseCellLimit) {
    for (long long c = 0; c < total; ++c) {
      if (stream.bernoulli(cube.selection_prob)) {
        real.cells.push_back(static_cast<std::uint64_t>(c));
        real.weights.push_back(cube.weight_law.draw(stream));
      }
    }
  } else {
    // Sparse regime: selected-cell count is Poisson(selection_prob * total)
    // and cells are uniform without replacement (collisions rejected).
    const double expected = cube.selection_prob * static_cast<double>(total);
    const long long count = stream.poisson(expected);
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(static_cast<std::size_t>(count) * 2);
    while (static_cast<long long>(chosen.size()) < count) {
      std::uint64_t code = 0;
      std::uint64_t radix = 1;
      for (int a = 0; a < cube.axes; ++a) {
        code += radix * stream.uniform_below(static_cast<std::uint64_t>(cube.per_axis));
        radix *= static_cast<std::uint64_t>(cube.per_axis);
      }
      chosen.insert(code);
    }
    real.cells.assign(chosen.begin(), chosen.end());
    std::sort(real.cells.begin(), real.cells.end());
    real.weights.resize(real.cells.size());
    for (auto& w : real.weights) w = cube.weight_law.draw(stream);
  }

  double totmass = 0.0;
  real.cdf.resize(real.weights.size());
  for (std::size_t i = 0; i < real.weights.size(); ++i) {
    totmass += real.weights[i];
    real.cdf[i] = totmass;
  }
  if (real.cells.empty() || !(totmass > 0.0))
    throw Error(ErrorKind::DegeneratePerturbation,
                "binned perturbation realized zero total weight");
  return real;
}

void draw_latent_point(const LatentCube& cube, const CubeRealization& real,
                       RandomStream& stream, std::span<double> u_out) {
  const std::size_t pick = categorical_from_cdf(real.cdf, stream);
  std::uint64_t code = real.cells[pick];
  const auto per_axis = static_cast<std::uint64_t>(cube.per_axis);
  for (int a = 0; a < cube.axes; ++a) {
    const std::uint64_t idx = code % per_axis;
    code /= per_axis;
    u_out[static_cast<std::size_t>(a)] =
        (static_cast<double>(idx) + stream.uniform()) / static_cast<double>(cube.per_axis);
  }
}

PerturbedSample sample_binned(const PerturbationSpec& spec,
                              const InverseCdf& base_inverse_cdf, long long n,
                              RandomStream& stream) {
  spec.validate();
  if (spec.model != PertModel::BinnedWeights)
    throw_domain("sample_binned: spec.model must be BinnedWeights");
  if (n < 1) throw_domain("sample_binned: n must be at least 1");

  LatentCube cube;
  cube.axes = 1;
  cube.per_axis = std::llround(static_cast<double>(spec.m) / spec.selection_prob);
  cube.selection_prob = spec.selection_prob;
  cube.weight_law = spec.weight_law;

  const CubeRealization real = realize_cube(cube, stream);
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(n));
  double u = 0.0;
  for (long long i = 0; i < n; ++i) {
    draw_latent_point(cube, real, stream, {&u, 1});
    rows.push_back(base_inverse_cdf(u));
  }

  PerturbedSample sample;
  sample.data = rows_to_matrix(rows);
  sample.spec = spec;
  sample.base_label = "latent_uniform";
  sample.seed = stream.seed();
  sample.stream_id = stream.stream_id();
  return sample;
}

PerturbedSample sample_resample(long long m, const BaseSampler& base_sampler,
                                long long n, RandomStream& stream) {
  if (m < 1) throw_domain("sample_resample: m must be at least 1");
  if (n < 1) throw_domain("sample_resample: n must be at least 1");
  std::vector<std::vector<double>> pool;
  pool.reserve(static_cast<std::size_t>(m));
  for (long long i = 0; i < m; ++i) pool.push_back(base_sampler(stream));
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i)
    rows.push_back(pool[stream.uniform_below(static_cast<std::uint64_t>(m))]);

  PerturbedSample sample;
  sample.data = rows_to_matrix(rows);
  sample.spec.model = PertModel::Resample;
  sample.spec.m = m;
  sample.base_label = "base_sampler";
  sample.seed = stream.seed();
  sample.stream_id = stream.stream_id();
  return sample;
}

PerturbedSample sample_cluster(long long m, double epsilon,
                               const BaseSampler& base_sampler, long long n,
                               RandomStream& stream) {
  if (m < 1) throw_domain("sample_cluster: m must be at least 1");
  if (n < 1) throw_domain("sample_cluster: n must be at least 1");
  if (epsilon <= 0.0) throw_domain("sample_cluster: epsilon must be positive");

  std::vector<std::vector<double>> anchors;
  anchors.reserve(static_cast<std::size_t>(m));
  for (long long i = 0; i < m; ++i) anchors.push_back(base_sampler(stream));

  // Conditional draw from the epsilon-ball around an anchor by rejection
  // from the base law.
  constexpr long long kMaxAttempts = 1'000'000;
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i) {
    const auto& anchor = anchors[stream.uniform_below(static_cast<std::uint64_t>(m))];
    long long attempts = 0;
    for (;;) {
      std::vector<double> cand = base_sampler(stream);
      if (cand.size() != anchor.size())
        throw_domain("sample_cluster: base law returned rows of varying width");
      double dist2 = 0.0;
      for (std::size_t j = 0; j < cand.size(); ++j) {
        const double d = cand[j] - anchor[j];
        dist2 += d * d;
      }
      if (dist2 <= epsilon * epsilon) {
        rows.push_back(std::move(cand));
        break;
      }
      if (++attempts >= kMaxAttempts)
        throw Error(ErrorKind::InfeasibleEpsilon,
                    "sample_cluster: rejection acceptance probability below 1e-6");
    }
  }

  PerturbedSample sample;
  sample.data = rows_to_matrix(rows);
  sample.spec.model = PertModel::Cluster;
  sample.spec.m = m;
  sample.spec.epsilon = epsilon;
  sample.base_label = "base_sampler";
  sample.seed = stream.seed();
  sample.stream_id = stream.stream_id();
  return sample;
}

PerturbedSample sample_discrete_exchangeable(int categories, double concentration,
                                             long long n, RandomStream& stream) {
  if (categories < 2) throw_domain("sample_discrete_exchangeable: need at least 2 categories");
  if (concentration <= 0.0)
    throw_domain("sample_discrete_exchangeable: concentration must be positive");
  if (n < 1) throw_domain("sample_discrete_exchangeable: n must be at least 1");

  const std::vector<double> xi = stream.dirichlet_symmetric(categories, concentration);
  std::vector<double> cdf(xi.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < xi.size(); ++k) {
    acc += xi[k];
    cdf[k] = acc;
  }

  Matrix data(static_cast<int>(n), 1);
  for (long long i = 0; i < n; ++i)
    data.at(static_cast<int>(i), 0) =
        static_cast<double>(categorical_from_cdf(cdf, stream) + 1);

  PerturbedSample sample;
  sample.data = std::move(data);
  sample.spec.model = PertModel::DiscreteExchangeable;
  sample.spec.m = categories;
  sample.spec.concentration = concentration;
  sample.base_label = "uniform_categories";
  sample.seed = stream.seed();
  sample.stream_id = stream.stream_id();
  sample.delta_dist = discrete_delta_dist(categories, concentration);
  return sample;
}

double discrete_delta_dist(int categories, double concentration) {
  if (categories < 2) throw_domain("discrete_delta_dist: need at least 2 categories");
  if (concentration <= 0.0) throw_domain("discrete_delta_dist: concentration must be positive");
  // K^2/(K-1) * Var(xi_1) with Var(xi_1) = (K-1) / (K^2 (K c + 1)).
  return std::sqrt(1.0 / (categories * concentration + 1.0));
}

double true_delta(const PerturbationSpec& spec, long long n) {
  spec.validate();
  if (n < 1) throw_domain("true_delta: n must be at least 1");
  const double r = static_cast<double>(n) / static_cast<double>(spec.m);
  switch (spec.model) {
    case PertModel::None:
      return 1.0;
    case PertModel::BinnedWeights: {
      // Per-cell weight is Bernoulli(q)-thinned: selected cells carry W,
      // unselected cells carry zero. Over the m/q-cell grid this gives
      // delta^2 = 1 + (n/m) * (E[W^2]/E[W]^2 - q); with q = 1 it reduces to
      // 1 + (n/m) * Var(W)/E[W]^2.
      const double mu = spec.weight_law.mean();
      const double ratio = spec.weight_law.second_moment() / (mu * mu);
      return std::sqrt(1.0 + r * (ratio - spec.selection_prob));
    }
    case PertModel::Resample:
    case PertModel::Cluster:
      return std::sqrt(1.0 + r);
    case PertModel::DiscreteExchangeable:
      throw_domain("true_delta: discrete model scale is delta_dist, reported at sampling time");
  }
  throw_domain("true_delta: unsupported model");
}

namespace {

double variance_se(const std::vector<double>& x, double var_hat) {
  // SE of the sample variance from the fourth central moment.
  const std::size_t r = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(r);
  double m4 = 0.0;
  for (double v : x) {
    const double d = v - mean;
    m4 += d * d * d * d;
  }
  m4 /= static_cast<double>(r);
  const double num = m4 - var_hat * var_hat;
  return std::sqrt(std::max(num, 0.0) / static_cast<double>(r));
}

// Perturbed mass of the latent event [0, p) under one binned realization.
double binned_interval_mass(const LatentCube& cube, const CubeRealization& real,
                            double p) {
  const double total_cells = static_cast<double>(cube.total_cells());
  const double boundary = p * total_cells;
  const auto full_below = static_cast<std::uint64_t>(std::floor(boundary));
  double mass = 0.0;
  for (std::size_t i = 0; i < real.cells.size(); ++i) {
    const std::uint64_t c = real.cells[i];
    if (c < full_below) {
      mass += real.weights[i];
    } else if (c == full_below) {
      mass += real.weights[i] * (boundary - static_cast<double>(full_below));
    }
  }
  return mass / real.cdf.back();
}

}  // namespace

std::vector<ProbeRow> variance_law_probe(const PerturbationSpec& spec,
                                         const std::vector<double>& event_probs,
                                         long long replicates, RandomStream& stream) {
  spec.validate();
  if (replicates < 1000) throw_domain("variance_law_probe: need at least 1000 replicates");
  for (double p : event_probs)
    if (!(p > 0.0 && p < 1.0))
      throw_domain("variance_law_probe: event probabilities must lie in (0,1)");

  std::vector<double> attained(event_probs);
  if (spec.model == PertModel::DiscreteExchangeable) {
    for (auto& p : attained) {
      const double j = std::max(1.0, std::round(p * static_cast<double>(spec.m)));
      p = std::min(j, static_cast<double>(spec.m - 1)) / static_cast<double>(spec.m);
    }
  }

  std::vector<std::vector<double>> draws(attained.size());
  for (auto& d : draws) d.reserve(static_cast<std::size_t>(replicates));

  LatentCube cube;
  if (spec.model == PertModel::BinnedWeights) {
    cube.axes = 1;
    cube.per_axis = std::llround(static_cast<double>(spec.m) / spec.selection_prob);
    cube.selection_prob = spec.selection_prob;
    cube.weight_law = spec.weight_law;
  }

  for (long long rep = 0; rep < replicates; ++rep) {
    switch (spec.model) {
      case PertModel::None: {
        for (std::size_t i = 0; i < attained.size(); ++i)
          draws[i].push_back(attained[i]);
        break;
      }
      case PertModel::BinnedWeights: {
        const CubeRealization real = realize_cube(cube, stream);
        for (std::size_t i = 0; i < attained.size(); ++i)
          draws[i].push_back(binned_interval_mass(cube, real, attained[i]));
        break;
      }
      case PertModel::Resample: {
        std::vector<double> us(static_cast<std::size_t>(spec.m));
        for (auto& u : us) u = stream.uniform();
        for (std::size_t i = 0; i < attained.size(); ++i) {
          long long cnt = 0;
          for (double u : us) cnt += (u < attained[i]);
          draws[i].push_back(static_cast<double>(cnt) / static_cast<double>(spec.m));
        }
        break;
      }
      case PertModel::Cluster: {
        if (spec.epsilon <= 0.0)
          throw_domain("variance_law_probe: cluster model needs positive epsilon");
        std::vector<double> anchors(static_cast<std::size_t>(spec.m));
        for (auto& a : anchors) a = stream.uniform();
        for (std::size_t i = 0; i < attained.size(); ++i) {
          const double p = attained[i];
          double mass = 0.0;
          for (double a : anchors) {
            const double lo = std::max(0.0, a - spec.epsilon);
            const double hi = std::min(1.0, a + spec.epsilon);
            const double overlap = std::max(0.0, std::min(hi, p) - lo);
            mass += overlap / (hi - lo);
          }
          draws[i].push_back(mass / static_cast<double>(spec.m));
        }
        break;
      }
      case PertModel::DiscreteExchangeable: {
        const std::vector<double> xi =
            stream.dirichlet_symmetric(static_cast<int>(spec.m), spec.concentration);
        for (std::size_t i = 0; i < attained.size(); ++i) {
          const auto j = static_cast<std::size_t>(
              std::llround(attained[i] * static_cast<double>(spec.m)));
          double mass = 0.0;
          for (std::size_t k = 0; k < j; ++k) mass += xi[k];
          draws[i].push_back(mass);
        }
        break;
      }
    }
  }

  std::vector<ProbeRow> rows(attained.size());
  for (std::size_t i = 0; i < attained.size(); ++i) {
    double mean = 0.0;
    for (double v : draws[i]) mean += v;
    mean /= static_cast<double>(replicates);
    double var = 0.0;
    for (double v : draws[i]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(replicates);
    rows[i].p = attained[i];
    rows[i].variance = var;
    rows[i].std_error = variance_se(draws[i], var);
  }
  return rows;
}

}  // namespace distcal
