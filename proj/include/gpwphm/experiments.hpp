#pragma once

// Simulation-study drivers shared by the command-line tool and the acceptance
// suite. Each driver is a pure function of its configuration and seed.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gpwphm/evaluation.hpp"
#include "gpwphm/synth.hpp"

namespace gpwphm::experiments {

// ---------------------------------------------------------------------------
// Presets.
// ---------------------------------------------------------------------------

inline SourceConfig linear_source(Eigen::Index d, double noise_var) {
  SourceConfig s;
  s.kernel.family = KernelFamily::Linear;
  s.kernel.sigma = 1.0;
  s.kernel.noise_var = noise_var;
  s.d = d;
  return s;
}

/// Geometric pattern, one linear source.
inline SimulationConfig pattern_config(Eigen::Index d, double noise_var, std::uint64_t seed) {
  SimulationConfig c;
  c.use_pattern = true;
  c.sources = {linear_source(d, noise_var)};
  c.seed = seed;
  return c;
}

/// Retrieval preset: d = 10, noise variance 0.1.
inline SimulationConfig fig2_preset(std::uint64_t seed) { return pattern_config(10, 0.1, seed); }

/// Dimensionality preset: d = 10, noise standard deviation 0.1.
inline SimulationConfig fig4_preset(std::uint64_t seed) { return pattern_config(10, 0.01, seed); }

/// One-dimensional latents through a squared-exponential map into d = 2.
inline SimulationConfig fig3_preset(std::uint64_t seed, Eigen::Index N = 100) {
  SimulationConfig c;
  c.use_pattern = false;
  c.N = N;
  c.q = 1;
  SourceConfig s;
  s.kernel.family = KernelFamily::SquaredExponential;
  s.kernel.sigma = 1.0;
  s.kernel.lengthscale = 1.0;
  s.kernel.noise_var = 0.001;
  s.d = 2;
  c.sources = {s};
  c.b = Vector::Constant(1, -1.0);
  c.rho = 10.0;
  c.nu = 10.0;
  c.seed = seed;
  return c;
}

/// Gaussian latents (q = 2) with one linear source, for held-out prediction.
inline SimulationConfig gaussian_config(Eigen::Index N, Eigen::Index d, double noise_var, double censor_frac,
                                        std::uint64_t seed) {
  SimulationConfig c;
  c.use_pattern = false;
  c.N = N;
  c.q = 2;
  c.sources = {linear_source(d, noise_var)};
  c.censor_frac = censor_frac;
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------
// Fitting.
// ---------------------------------------------------------------------------

struct FitSetup {
  PriorConfig priors;
  HyperOptions hyper;
  bool optimize_hyper = true;
};

/// MAP fit at the optimized hyperparameters (or at the PPCA-style starting
/// values when optimize_hyper is false).
inline ModelFit fit_model(const ModelData& data, Eigen::Index q, const std::vector<KernelFamily>& families,
                          const FitSetup& setup) {
  const auto specs = initial_specs(data, families, q);
  if (setup.optimize_hyper) return optimize_hyperparameters(data, q, specs, setup.priors, setup.hyper).fit;
  return fit_map(data, q, specs, setup.priors, setup.hyper.fit);
}

inline std::vector<KernelFamily> families_of(const SimulationConfig& c) {
  std::vector<KernelFamily> f;
  for (const auto& s : c.sources) f.push_back(s.kernel.family);
  return f;
}

inline ModelData bundle_data(const SyntheticBundle& b, const std::vector<std::size_t>& sources, bool survival) {
  ModelData d;
  for (auto s : sources) d.Ys.push_back(b.Ys.at(s));
  d.records = b.records;
  d.survival = survival;
  return d;
}

inline std::vector<std::size_t> all_sources(const SyntheticBundle& b) {
  std::vector<std::size_t> s(b.Ys.size());
  std::iota(s.begin(), s.end(), 0);
  return s;
}

// ---------------------------------------------------------------------------
// Latent retrieval on the geometric pattern.
// ---------------------------------------------------------------------------

struct RetrievalOutcome {
  MisalignmentErrors errors;
  ModelFit fit;
};

inline RetrievalOutcome retrieval(const SyntheticBundle& b, const std::vector<std::size_t>& sources, bool survival,
                                  const FitSetup& setup) {
  require(!b.component.empty(), "retrieval needs pattern latents");
  std::vector<KernelFamily> fam;
  for (auto s : sources) fam.push_back(b.config.sources.at(s).kernel.family);
  RetrievalOutcome out;
  out.fit = fit_model(bundle_data(b, sources, survival), 2, fam, setup);
  out.errors = misalignment_errors(out.fit.latent.X, b.component);
  return out;
}

// ---------------------------------------------------------------------------
// Held-out event-time prediction, latent versus observed space.
// ---------------------------------------------------------------------------

struct MseOutcome {
  double latent = 0.0;
  double observed = 0.0;
  std::size_t test_events = 0;
};

/// Seeded half split; the first ceil(N/2) shuffled rows train.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> half_split(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t n_train = (n + 1) / 2;
  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

inline MseOutcome held_out_mse(const SyntheticBundle& b, Eigen::Index q, const FitSetup& setup,
                               const ProjectionOptions& proj = {}) {
  const ModelData all = bundle_data(b, all_sources(b), true);
  const auto [train_idx, test_idx] = half_split(static_cast<std::size_t>(all.N()), b.config.seed ^ 0x5eedull);
  const ModelData train = select_data(all, train_idx);
  std::vector<Matrix> test_Ys;
  for (const auto& Y : all.Ys) test_Ys.push_back(select_rows(Y, test_idx));
  const auto test_records = select(all.records, test_idx);

  CvOptions latent;
  latent.q = q;
  latent.families = families_of(b.config);
  latent.priors = setup.priors;
  latent.hyper = setup.hyper;
  latent.optimize_hyper = setup.optimize_hyper;
  latent.projection = proj;
  CvOptions observed = latent;
  observed.model = CvModel::Observed;

  MseOutcome out;
  out.latent = mse_event_times(train_and_predict(train, test_Ys, latent).mean_time, test_records);
  out.observed = mse_event_times(train_and_predict(train, test_Ys, observed).mean_time, test_records);
  for (const auto& r : test_records) out.test_events += r.event ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Non-linear manifold: risk-group separation in latent and observed space.
// ---------------------------------------------------------------------------

struct ManifoldOutcome {
  LogRankResult latent_split, observed_split;
  ModelFit fit;
  ObservedWphm observed;
  KmCurve km_latent_high, km_latent_low, km_observed_high, km_observed_low;
};

inline ManifoldOutcome manifold_separation(const SyntheticBundle& b, const FitSetup& setup) {
  const ModelData data = bundle_data(b, all_sources(b), true);
  ManifoldOutcome out;
  out.fit = fit_model(data, b.config.q, families_of(b.config), setup);
  out.observed = fit_observed_wphm(data.records, concat_sources(data.Ys), setup.priors);

  std::vector<double> s_lat, s_obs;
  const Matrix Z = concat_sources(data.Ys);
  for (Eigen::Index i = 0; i < data.N(); ++i) {
    s_lat.push_back(risk_score(out.fit.latent.X.row(i).transpose(), out.fit));
    s_obs.push_back(out.observed.risk(Z.row(i).transpose()));
  }
  out.latent_split = risk_split_log_rank(s_lat, data.records);
  out.observed_split = risk_split_log_rank(s_obs, data.records);
  const RiskGroups gl = split_risk_groups(s_lat), go = split_risk_groups(s_obs);
  out.km_latent_high = kaplan_meier(select(data.records, gl.high));
  out.km_latent_low = kaplan_meier(select(data.records, gl.low));
  out.km_observed_high = kaplan_meier(select(data.records, go.high));
  out.km_observed_low = kaplan_meier(select(data.records, go.low));
  return out;
}

/// Relative change (a - b) / b, the form used for the prediction-gap tables.
inline double relative_gap(double observed, double latent) { return (observed - latent) / latent; }

inline double mean(const std::vector<double>& v) {
  require(!v.empty(), "mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace gpwphm::experiments
