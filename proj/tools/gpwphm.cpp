// Command-line front end: simulate | fit | scan | predict | evaluate.
//
// Exit codes: 0 success, 2 input error, 3 numerical or convergence error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gpwphm/evaluation.hpp"
#include "gpwphm/experiments.hpp"
#include "gpwphm/io.hpp"

namespace fs = std::filesystem;
using namespace gpwphm;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

struct ConvergenceFailure : NumericalError {
  using NumericalError::NumericalError;
};

/// "linear" or "linear+se": one family per source, a single name applies to all.
std::vector<KernelFamily> parse_families(const std::string& s, std::size_t sources) {
  std::vector<KernelFamily> f;
  for (const auto& part : io::split(s, '+')) f.push_back(kernel_family_from_string(io::trim(part)));
  if (f.size() == 1 && sources > 1) f.assign(sources, f.front());
  require(f.size() == sources, "--kernel lists " + std::to_string(f.size()) + " families but the data have " +
                                   std::to_string(sources) + " sources");
  return f;
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

std::string fmt(double v) { return io::format_double(v); }

void write_text(const std::string& path, const std::string& content) {
  if (path == "-") {
    std::cout << content;
    return;
  }
  io::atomic_write(path, content);
}

// ---------------------------------------------------------------------------
// Options per command. Each field maps to one long flag; config files use the
// same names without the leading dashes.
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string preset = "fig2";
  std::uint64_t seed = 1;
  long n = 96;
  long q = 2;
  std::vector<long> d;
  std::string kernel;
  std::vector<double> noise;
  double sigma = 1.0;
  double lengthscale = 1.0;
  double latent_sd = 1.0;
  std::vector<double> b;
  double rho = 10.0;
  double nu = 10.0;
  std::optional<double> censor_frac;
  std::string out, truth;
};

struct FitArgs {
  std::string data, out, init;
  long q = 2;
  std::string kernel = "linear";
  std::uint64_t seed = 1;
  int restarts = 0;
  bool no_survival = false;
  bool no_hyper = false;
  double rho_lb = 0.0, nu_lb = 0.0;
  int max_outer = 100;
  double tol = 1e-6;
  int search_evals = 60;
};

struct ScanArgs {
  std::string data, out;
  long q_min = 1, q_max = 4;
  std::vector<std::string> kernels{"linear"};
  std::uint64_t seed = 1;
  int restarts = 0;
  bool no_survival = false;
  int search_evals = 60;
};

struct PredictArgs {
  std::string model, data, out = "-";
  std::uint64_t seed = 1;
  int starts = 10;
};

struct EvaluateArgs {
  std::string model, data, out = "-", km, experiment;
  int folds = 0;
  long q = 2;
  std::string kernel = "linear";
  std::string metric = "harrell";
  std::uint64_t seed = 1;
  int restarts = 0;
  bool no_hyper = false;
  int replicates = 20;
  std::optional<double> censor_frac;
};

using experiments::FitSetup;

FitSetup make_setup(std::uint64_t seed, int restarts, bool survival, double rho_lb, double nu_lb, int max_outer,
                    double tol, int search_evals, bool optimize_hyper) {
  FitSetup s;
  s.hyper.fit.seed = seed;
  s.hyper.fit.restarts = restarts;
  s.hyper.fit.survival = survival;
  s.hyper.fit.rho_lb = rho_lb;
  s.hyper.fit.nu_lb = nu_lb;
  s.hyper.fit.max_outer = max_outer;
  s.hyper.fit.tol_outer = tol;
  s.hyper.search.max_evaluations = search_evals;
  s.optimize_hyper = optimize_hyper;
  return s;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

SimulationConfig simulation_config(const SimulateArgs& a) {
  SimulationConfig c;
  if (a.preset == "fig2") c = experiments::fig2_preset(a.seed);
  else if (a.preset == "fig4") c = experiments::fig4_preset(a.seed);
  else if (a.preset == "fig3") c = experiments::fig3_preset(a.seed, a.n);
  else if (a.preset == "gaussian") c = experiments::gaussian_config(a.n, 10, 0.1, 0.1, a.seed);
  else throw InputError("unknown preset '" + a.preset + "' (expected fig2, fig3, fig4 or gaussian)");
  c.seed = a.seed;
  if (a.preset == "gaussian") {
    c.q = a.q;
    c.latent_sd = a.latent_sd;
    c.b = Vector::Zero(a.q);
    c.b(0) = 1.0;
    if (a.q > 1) c.b(1) = -0.5;
  }
  std::size_t S = std::max<std::size_t>({a.d.size(), a.noise.size(), c.sources.size()});
  if (!a.kernel.empty()) S = std::max(S, io::split(a.kernel, '+').size());
  std::vector<SourceConfig> sources(S, c.sources.front());
  for (std::size_t s = 0; s < std::min(S, c.sources.size()); ++s) sources[s] = c.sources[s];
  if (!a.kernel.empty()) {
    const auto fam = parse_families(a.kernel, S);
    for (std::size_t s = 0; s < S; ++s) {
      sources[s].kernel.family = fam[s];
      sources[s].kernel.sigma = a.sigma;
      sources[s].kernel.lengthscale = a.lengthscale;
    }
  }
  for (std::size_t s = 0; s < a.d.size(); ++s) sources[s].d = a.d[s];
  if (a.d.size() == 1) for (auto& src : sources) src.d = a.d[0];
  for (std::size_t s = 0; s < a.noise.size(); ++s) sources[s].kernel.noise_var = a.noise[s];
  if (a.noise.size() == 1) for (auto& src : sources) src.kernel.noise_var = a.noise[0];
  c.sources = sources;
  if (!a.b.empty()) c.b = Eigen::Map<const Vector>(a.b.data(), static_cast<Eigen::Index>(a.b.size()));
  if (a.censor_frac) c.censor_frac = *a.censor_frac;
  if (a.preset == "gaussian") {
    c.rho = a.rho;
    c.nu = a.nu;
  }
  return c;
}

int cmd_simulate(const SimulateArgs& a) {
  require(!a.out.empty(), "simulate: --out is required");
  const SimulationConfig cfg = simulation_config(a);
  const SyntheticBundle b = simulate(cfg);
  const io::Dataset ds = io::make_dataset(b.Ys, b.records);
  write_text(a.out, io::format_dataset(ds, io::provenance_comment(cfg.seed, "simulate")));
  const std::string truth = a.truth.empty() ? a.out + ".truth" : a.truth;
  io::atomic_write(truth, io::format_truth(b));
  std::size_t censored = 0;
  for (const auto& r : b.records) censored += r.event ? 0 : 1;
  std::cerr << "simulated N=" << b.X_true.rows() << " q=" << b.X_true.cols() << " sources=" << b.Ys.size()
            << " censored=" << censored << " seed=" << cfg.seed << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

void print_fit_summary(std::ostream& os, const ModelFit& f) {
  os << "q=" << f.q() << " N=" << f.N() << " nll=" << fmt(f.nll) << " hyp_nll=" << fmt(f.hyp_nll)
     << " P=" << f.free_param_count << " converged=" << (f.converged ? "yes" : "no") << "\n";
  for (std::size_t s = 0; s < f.specs.size(); ++s)
    os << "source s" << s + 1 << ": kernel=" << to_string(f.specs[s].family) << " noise_var=" << fmt(f.specs[s].noise_var)
       << " sigma=" << fmt(f.specs[s].sigma) << " lengthscale=" << fmt(f.specs[s].lengthscale) << "\n";
  if (f.data.survival) {
    os << "b=";
    for (Eigen::Index j = 0; j < f.wphm.b.size(); ++j) os << (j ? "," : "") << fmt(f.wphm.b(j));
    os << " rho=" << fmt(f.wphm.rho) << " nu=" << fmt(f.wphm.nu) << "\n";
  }
  for (const auto& w : f.warnings) os << "warning: " << w << "\n";
}

int cmd_fit(const FitArgs& a) {
  require(!a.data.empty() && !a.out.empty(), "fit: --data and --out are required");
  const io::Dataset ds = io::read_dataset(a.data, {false, !a.no_survival});
  const ModelData data = ds.model_data(!a.no_survival);
  FitSetup setup = make_setup(a.seed, a.restarts, !a.no_survival, a.rho_lb, a.nu_lb, a.max_outer, a.tol,
                              a.search_evals, !a.no_hyper);
  std::vector<KernelSpec> specs;
  if (!a.init.empty()) {
    const io::SavedModel init = io::load_model(a.init);
    io::check_schema(init, ds);
    require(init.fit.q() == a.q, "fit: --init model has q=" + std::to_string(init.fit.q()) + ", not " +
                                     std::to_string(a.q));
    require(init.fit.N() == data.N(), "fit: --init model was trained on a different number of rows");
    specs = init.fit.specs;
    setup.hyper.fit.init_latent = init.fit.latent;
    setup.hyper.fit.init_wphm = init.fit.wphm;
    if (setup.hyper.fit.restarts == 0) setup.hyper.fit.restarts = 1;
  } else {
    specs = initial_specs(data, parse_families(a.kernel, data.Ys.size()), a.q);
  }
  ModelFit fit = setup.optimize_hyper
                     ? optimize_hyperparameters(data, a.q, specs, setup.priors, setup.hyper).fit
                     : fit_map(data, a.q, specs, setup.priors, setup.hyper.fit);
  io::save_model(a.out, fit, ds.columns, a.seed);
  print_fit_summary(std::cout, fit);
  std::cout << "outer_rounds=" << fit.outer_rounds << " grad_norm=" << fmt(fit.grad_norm) << "\n";
  if (!fit.converged) {
    std::ostringstream os;
    os << "fit did not converge (gradient norm " << fit.grad_norm << ", Hessian "
       << (fit.hessian_pd ? "positive definite" : "not positive definite") << "); model written to " << a.out
       << " for inspection";
    throw ConvergenceFailure(os.str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// scan
// ---------------------------------------------------------------------------

int cmd_scan(const ScanArgs& a) {
  require(!a.data.empty() && !a.out.empty(), "scan: --data and --out are required");
  const io::Dataset ds = io::read_dataset(a.data, {false, !a.no_survival});
  const ModelData data = ds.model_data(!a.no_survival);
  const FitSetup setup = make_setup(a.seed, a.restarts, !a.no_survival, 0.0, 0.0, 100, 1e-6, a.search_evals, true);
  std::vector<ScanRow> rows;
  std::map<std::string, ScanResult> per_kernel;
  for (const auto& k : a.kernels) {
    const auto fam = parse_families(k, data.Ys.size());
    ScanResult r = scan_dimensionality(data, a.q_min, a.q_max, fam, setup.priors, setup.hyper);
    per_kernel[r.rows.front().kernel] = r;
    for (auto& row : r.rows) rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ScanRow& x, const ScanRow& y) {
    return x.kernel != y.kernel ? x.kernel < y.kernel : x.q < y.q;
  });
  std::ostringstream os;
  os << io::provenance_comment(a.seed, "scan");
  os << "kernel,q,hyp_nll,nll,likelihood_ratio,converged,noise_var\n";
  for (const auto& r : rows) {
    std::vector<std::string> nv;
    for (const auto& s : r.specs) nv.push_back(fmt(s.noise_var));
    os << r.kernel << ',' << r.q << ',' << fmt(r.hyp_nll) << ',' << fmt(r.nll) << ',' << fmt(r.likelihood_ratio) << ','
       << (r.converged ? 1 : 0) << ',' << join(nv, ";") << '\n';
  }
  write_text(a.out, os.str());
  std::string best_kernel;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [k, r] : per_kernel) {
    std::cout << "kernel=" << k << " q*=" << r.q_star << " hyp_nll=" << fmt(r.best_hyp_nll) << "\n";
    if (r.best_hyp_nll < best) best = r.best_hyp_nll, best_kernel = k;
  }
  std::cout << "best kernel=" << best_kernel << " q*=" << per_kernel[best_kernel].q_star << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

int cmd_predict(const PredictArgs& a) {
  require(!a.model.empty() && !a.data.empty(), "predict: --model and --data are required");
  const io::SavedModel m = io::load_model(a.model);
  const io::Dataset ds = io::read_dataset(a.data, {true, false});
  io::check_schema(m, ds);
  const Predictor pred(m.fit);
  std::ostringstream os;
  os << io::provenance_comment(a.seed, "predict");
  os << "id";
  for (Eigen::Index j = 0; j < m.fit.q(); ++j) os << ",x" << j + 1;
  os << ",risk,mean_time,sd_time\n";
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    ProjectionOptions po;
    po.starts = a.starts;
    po.seed = a.seed + i;
    const LatentProjection p = pred.project(ds.row_observations(i), po);
    const EventTimePrediction e = predict_event_time(p.x_star, m.fit);
    os << ds.ids[i];
    for (Eigen::Index j = 0; j < p.x_star.size(); ++j) os << ',' << fmt(p.x_star(j));
    os << ',' << fmt(e.risk) << ',' << fmt(e.mean) << ',' << fmt(std::sqrt(e.variance)) << '\n';
  }
  write_text(a.out, os.str());
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

void emit_km(const std::string& path, std::uint64_t seed, const std::vector<std::pair<std::string, KmCurve>>& curves) {
  if (path.empty()) return;
  std::ostringstream os;
  os << io::provenance_comment(seed, "evaluate");
  write_km_csv(os, curves);
  write_text(path, os.str());
}

/// Scores a saved model on a labelled dataset.
int evaluate_model(const EvaluateArgs& a) {
  const io::SavedModel m = io::load_model(a.model);
  const io::Dataset ds = io::read_dataset(a.data, {true, true});
  io::check_schema(m, ds);
  const Predictor pred(m.fit);
  std::vector<double> risk, mean_time;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    ProjectionOptions po;
    po.seed = a.seed + i;
    const auto e = predict_event_time(pred.project(ds.row_observations(i), po).x_star, m.fit);
    risk.push_back(e.risk);
    mean_time.push_back(e.mean);
  }
  std::ostringstream os;
  os << io::provenance_comment(a.seed, "evaluate");
  os << "metric,value\n";
  auto row = [&](const std::string& k, double v) { os << k << ',' << fmt(v) << '\n'; };
  row("n", static_cast<double>(ds.rows()));
  try {
    row("concordance_" + a.metric, concordance(risk, ds.records, concordance_variant_from_string(a.metric)));
  } catch (const InputError& e) {
    std::cerr << "warning: " << e.what() << "\n";
  }
  try {
    row("mse", mse_event_times(mean_time, ds.records));
  } catch (const InputError& e) {
    std::cerr << "warning: " << e.what() << "\n";
  }
  const RiskGroups g = split_risk_groups(risk);
  if (!g.high.empty() && !g.low.empty()) {
    const auto lr = log_rank(select(ds.records, g.high), select(ds.records, g.low));
    row("logrank_chi_square", lr.chi_square);
    row("logrank_p", lr.p_value);
    emit_km(a.km, a.seed,
            {{"high", kaplan_meier(select(ds.records, g.high))}, {"low", kaplan_meier(select(ds.records, g.low))}});
  }
  write_text(a.out, os.str());
  return 0;
}

int evaluate_cv(const EvaluateArgs& a) {
  const io::Dataset ds = io::read_dataset(a.data, {false, true});
  const ModelData data = ds.model_data(true);
  CvOptions o;
  o.q = a.q;
  o.families = parse_families(a.kernel, data.Ys.size());
  const FitSetup setup = make_setup(a.seed, a.restarts, true, 0.0, 0.0, 100, 1e-6, 60, !a.no_hyper);
  o.priors = setup.priors;
  o.hyper = setup.hyper;
  o.optimize_hyper = setup.optimize_hyper;
  o.projection.seed = a.seed;
  const CvReport rep = kfold_cv(data, a.folds, o, cv_metric_from_string(a.metric), a.seed);
  std::ostringstream os;
  os << io::provenance_comment(a.seed, "evaluate");
  os << "fold,n_test,metric,value,valid\n";
  for (std::size_t f = 0; f < rep.folds.size(); ++f)
    os << f + 1 << ',' << rep.folds[f].test.size() << ',' << a.metric << ',' << fmt(rep.folds[f].value) << ','
       << (rep.folds[f].valid ? 1 : 0) << '\n';
  os << "mean," << data.N() << ',' << a.metric << ',' << fmt(rep.mean) << ',' << rep.valid_folds << '\n';
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  write_text(a.out, os.str());
  return 0;
}

/// Replicated simulation studies; one CSV row per replicate and condition.
int evaluate_experiment(const EvaluateArgs& a) {
  namespace ex = experiments;
  require(a.replicates >= 1, "--replicates must be >= 1");
  std::ostringstream os;
  os << io::provenance_comment(a.seed, "evaluate --experiment " + a.experiment);
  const FitSetup setup = make_setup(a.seed, a.restarts, true, 0.0, 0.0, 100, 1e-6, 60, !a.no_hyper);
  if (a.experiment == "fig3") {
    os << "replicate,seed,p_latent,p_observed,noise_var,sigma,lengthscale,b,rho,nu\n";
    for (int r = 0; r < a.replicates; ++r) {
      const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(r);
      const auto b = simulate(ex::fig3_preset(seed));
      const auto o = ex::manifold_separation(b, setup);
      const KernelSpec& k = o.fit.specs.front();
      os << r + 1 << ',' << seed << ',' << fmt(o.latent_split.p_value) << ',' << fmt(o.observed_split.p_value) << ','
         << fmt(k.noise_var) << ',' << fmt(k.sigma) << ',' << fmt(k.lengthscale) << ',' << fmt(o.fit.wphm.b(0)) << ','
         << fmt(o.fit.wphm.rho) << ',' << fmt(o.fit.wphm.nu) << '\n';
      if (r == 0)
        emit_km(a.km, seed, {{"latent_high", o.km_latent_high}, {"latent_low", o.km_latent_low},
                             {"observed_high", o.km_observed_high}, {"observed_low", o.km_observed_low}});
    }
  } else if (a.experiment == "table1" || a.experiment == "table2") {
    const bool multi = a.experiment == "table2";
    os << "replicate,seed,model,radial,angular,linear\n";
    for (int r = 0; r < a.replicates; ++r) {
      const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(r);
      SimulationConfig c = ex::pattern_config(10, multi ? 0.1 : 0.25, seed);
      if (multi) c.sources.push_back(ex::linear_source(100, 1.0));
      const auto b = simulate(c);
      std::vector<std::pair<std::string, std::pair<std::vector<std::size_t>, bool>>> runs;
      if (multi) runs = {{"y1", {{0}, true}}, {"y2", {{1}, true}}, {"y1+y2", {{0, 1}, true}}};
      else runs = {{"gplvm_wphm", {{0}, true}}, {"gplvm", {{0}, false}}};
      for (const auto& [name, spec] : runs) {
        const auto e = ex::retrieval(b, spec.first, spec.second, setup).errors;
        os << r + 1 << ',' << seed << ',' << name << ',' << fmt(e.radial) << ',' << fmt(e.angular) << ','
           << fmt(e.linear) << '\n';
      }
    }
  } else if (a.experiment == "table3" || a.experiment == "table5") {
    const bool cens = a.experiment == "table5";
    const std::vector<double> levels = cens ? std::vector<double>{0.10, 0.25, 0.50} : std::vector<double>{10, 25, 50, 100};
    os << "replicate,seed," << (cens ? "censor_frac" : "d") << ",mse_latent,mse_observed\n";
    for (double level : levels)
      for (int r = 0; r < a.replicates; ++r) {
        const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(r);
        const auto c = cens ? ex::gaussian_config(200, 25, 1.0, level, seed)
                            : ex::gaussian_config(200, static_cast<Eigen::Index>(level), 0.01,
                                                  a.censor_frac.value_or(0.1), seed);
        const auto o = ex::held_out_mse(simulate(c), 2, setup);
        os << r + 1 << ',' << seed << ',' << fmt(level) << ',' << fmt(o.latent) << ',' << fmt(o.observed) << '\n';
      }
  } else {
    throw InputError("unknown experiment '" + a.experiment + "' (expected fig3, table1, table2, table3 or table5)");
  }
  write_text(a.out, os.str());
  return 0;
}

int cmd_evaluate(const EvaluateArgs& a) {
  if (!a.experiment.empty()) return evaluate_experiment(a);
  require(!a.data.empty(), "evaluate: --data is required (or --experiment)");
  if (!a.model.empty()) return evaluate_model(a);
  require(a.folds >= 2, "evaluate: give --model to score a saved model, or --folds >= 2 for cross-validation");
  return evaluate_cv(a);
}

// ---------------------------------------------------------------------------
// Config files.
// ---------------------------------------------------------------------------

/// Finds the subcommand and an optional --config path in argv, and returns the
/// argument list with config entries inserted before the user's flags. Flags
/// given on the command line win over the file.
std::vector<std::string> merge_config(CLI::App& app, int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty()) return args;
  CLI::App* sub = app.get_subcommand_no_throw(args.front());
  if (!sub) return args;
  std::optional<std::string> path;
  std::vector<std::string> rest;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config") {
      require(i + 1 < args.size(), "--config needs a file argument");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!path) return args;
  const io::KvDocument cfg = io::KvDocument::load(*path);
  std::vector<std::string> out{args.front()};
  for (const auto& e : cfg.entries()) {
    const CLI::Option* opt = sub->get_option_no_throw("--" + e.key);
    if (!opt)
      throw InputError(*path + ":" + std::to_string(e.line) + ": unknown key '" + e.key + "' for command '" +
                       args.front() + "'");
    const bool on_cli = std::any_of(rest.begin(), rest.end(), [&](const std::string& r) {
      return r == "--" + e.key || r.rfind("--" + e.key + "=", 0) == 0;
    });
    if (on_cli) continue;
    if (opt->get_type_size() == 0) {
      const bool v = io::parse_bool(e.value, *path + ":" + std::to_string(e.line));
      if (v) out.push_back("--" + e.key);
    } else {
      for (const auto& part : opt->get_items_expected_max() > 1 ? io::split(e.value, ',') : std::vector<std::string>{e.value})
        out.push_back("--" + e.key + "=" + io::trim(part));
    }
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-variable survival modelling with Gaussian process latent variable models"};
  app.set_version_flag("--version", std::string("gpwphm ") + kVersion);
  app.require_subcommand(1);
  std::string config_help = "key=value file; keys are long flag names without dashes";
  std::string config_unused;

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset and its truth file");
  sim->add_option("--preset", sa.preset, "fig2 | fig3 | fig4 | gaussian")->capture_default_str();
  sim->add_option("--seed", sa.seed, "RNG seed")->capture_default_str();
  sim->add_option("--n", sa.n, "Individuals (fig3, gaussian)")->capture_default_str();
  sim->add_option("--q", sa.q, "Latent dimension (gaussian)")->capture_default_str();
  sim->add_option("--d", sa.d, "Observed dimension per source");
  sim->add_option("--kernel", sa.kernel, "Generating kernel per source, e.g. linear or linear+se");
  sim->add_option("--noise", sa.noise, "Noise variance per source");
  sim->add_option("--sigma", sa.sigma, "Kernel sigma (with --kernel)")->capture_default_str();
  sim->add_option("--lengthscale", sa.lengthscale, "SE kernel l (with --kernel)")->capture_default_str();
  sim->add_option("--latent-sd", sa.latent_sd, "Latent standard deviation (gaussian)")->capture_default_str();
  sim->add_option("--b", sa.b, "Regression coefficients");
  sim->add_option("--rho", sa.rho, "Weibull scale (gaussian)")->capture_default_str();
  sim->add_option("--nu", sa.nu, "Weibull shape (gaussian)")->capture_default_str();
  sim->add_option("--censor-frac", sa.censor_frac, "Fraction of censored individuals");
  sim->add_option("--out", sa.out, "Data CSV")->required();
  sim->add_option("--truth", sa.truth, "Truth file (default <out>.truth)");
  sim->add_option("--config", config_unused, config_help);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit the model and optimize hyperparameters");
  fit->add_option("--data", fa.data, "Training CSV")->required();
  fit->add_option("--out", fa.out, "Model file")->required();
  fit->add_option("--q", fa.q, "Latent dimension")->capture_default_str();
  fit->add_option("--kernel", fa.kernel, "linear | poly2 | se, '+'-joined per source")->capture_default_str();
  fit->add_option("--seed", fa.seed, "RNG seed")->capture_default_str();
  fit->add_option("--restarts", fa.restarts, "Random restarts (0: 1 for linear, 5 otherwise)")->capture_default_str();
  fit->add_flag("--no-survival", fa.no_survival, "Drop the survival term (plain GPLVM)");
  fit->add_flag("--no-hyper", fa.no_hyper, "Keep the starting hyperparameters");
  fit->add_option("--init", fa.init, "Warm start from a saved model (kernels taken from it)");
  fit->add_option("--rho-lb", fa.rho_lb, "Lower bound offset for rho")->capture_default_str();
  fit->add_option("--nu-lb", fa.nu_lb, "Lower bound offset for nu")->capture_default_str();
  fit->add_option("--max-outer", fa.max_outer, "Alternating rounds")->capture_default_str();
  fit->add_option("--tol", fa.tol, "Outer NLL tolerance")->capture_default_str();
  fit->add_option("--search-evals", fa.search_evals, "Hyperparameter search evaluations")->capture_default_str();
  fit->add_option("--config", config_unused, config_help);

  ScanArgs sc;
  auto* scan = app.add_subcommand("scan", "Hyper-NLL as a function of q, per kernel");
  scan->add_option("--data", sc.data, "Training CSV")->required();
  scan->add_option("--out", sc.out, "Table CSV")->required();
  scan->add_option("--q-min", sc.q_min, "Smallest q")->capture_default_str();
  scan->add_option("--q-max", sc.q_max, "Largest q")->capture_default_str();
  scan->add_option("--kernel", sc.kernels, "Kernel(s) to compare")->capture_default_str();
  scan->add_option("--seed", sc.seed, "RNG seed")->capture_default_str();
  scan->add_option("--restarts", sc.restarts, "Random restarts")->capture_default_str();
  scan->add_flag("--no-survival", sc.no_survival, "Drop the survival term");
  scan->add_option("--search-evals", sc.search_evals, "Hyperparameter search evaluations")->capture_default_str();
  scan->add_option("--config", config_unused, config_help);

  PredictArgs pa;
  auto* pred = app.add_subcommand("predict", "Project new individuals and predict event times");
  pred->add_option("--model", pa.model, "Model file")->required();
  pred->add_option("--data", pa.data, "CSV with the training columns; time/event optional")->required();
  pred->add_option("--out", pa.out, "Predictions CSV ('-' for stdout)")->capture_default_str();
  pred->add_option("--seed", pa.seed, "Projection multi-start seed")->capture_default_str();
  pred->add_option("--starts", pa.starts, "Random projection starts")->capture_default_str();
  pred->add_option("--config", config_unused, config_help);

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score a model, cross-validate, or run a simulation study");
  ev->add_option("--model", ea.model, "Saved model to score on --data");
  ev->add_option("--data", ea.data, "Labelled CSV");
  ev->add_option("--folds", ea.folds, "k-fold cross-validation on --data");
  ev->add_option("--q", ea.q, "Latent dimension for cross-validation")->capture_default_str();
  ev->add_option("--kernel", ea.kernel, "Kernel for cross-validation")->capture_default_str();
  ev->add_option("--metric", ea.metric, "harrell | uno (| mse for cross-validation)")->capture_default_str();
  ev->add_option("--seed", ea.seed, "RNG seed")->capture_default_str();
  ev->add_option("--restarts", ea.restarts, "Random restarts")->capture_default_str();
  ev->add_flag("--no-hyper", ea.no_hyper, "Skip hyperparameter optimization");
  ev->add_option("--experiment", ea.experiment, "fig3 | table1 | table2 | table3 | table5");
  ev->add_option("--replicates", ea.replicates, "Replicates per condition")->capture_default_str();
  ev->add_option("--censor-frac", ea.censor_frac, "Censoring fraction (table3)");
  ev->add_option("--out", ea.out, "Metrics CSV ('-' for stdout)")->capture_default_str();
  ev->add_option("--km", ea.km, "Kaplan-Meier curve CSV");
  ev->add_option("--config", config_unused, config_help);

  try {
    std::vector<std::string> args = merge_config(app, argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
    if (sim->parsed()) return cmd_simulate(sa);
    if (fit->parsed()) return cmd_fit(fa);
    if (scan->parsed()) return cmd_scan(sc);
    if (pred->parsed()) return cmd_predict(pa);
    if (ev->parsed()) return cmd_evaluate(ea);
    return kExitInput;
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}
