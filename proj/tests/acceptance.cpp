// Acceptance suite: one criterion per invocation (C1..C12, or "all").
// Prints one PASS/FAIL line per criterion; exit status 0 only if all pass.
// Tolerances and replicate counts are fixed here and not configurable.

#include <boost/math/quadrature/gauss.hpp>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "gpwphm/experiments.hpp"
#include "gpwphm/io.hpp"
#include "support.hpp"

using namespace gpwphm;
using namespace gpwphm::testing;
namespace ex = gpwphm::experiments;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void progress(const std::string& s) { std::cerr << "  " << s << std::endl; }

ex::FitSetup setup_for(std::uint64_t seed) {
  ex::FitSetup s;
  s.hyper.fit.seed = seed;
  return s;
}

// ---------------------------------------------------------------------------
// C1: analytic derivatives against central differences.
// ---------------------------------------------------------------------------

Outcome c1() {
  constexpr int kInstances = 50;
  constexpr double kGradTol = 1e-5, kHessTol = 1e-4;
  std::mt19937_64 rng(20240101);
  std::uniform_int_distribution<int> n_dist(3, 10), q_dist(1, 3), d_dist(2, 5);
  double worst_grad = 0.0, worst_hess = 0.0;
  std::string worst_grad_where, worst_hess_where;
  auto note = [](double e, double& worst, std::string& where, const std::string& what) {
    if (!(e <= worst)) worst = e, where = what;  // NaN counts as worst
  };
  const PriorConfig priors;
  for (int inst = 0; inst < kInstances; ++inst) {
    const Eigen::Index N = n_dist(rng), q = std::min<Eigen::Index>(q_dist(rng), N - 1), d = d_dist(rng);
    const Matrix Y = random_matrix(N, d, rng);
    const auto records = random_records(static_cast<std::size_t>(N), rng, 0.3);
    WphmParams p;
    p.b = random_vector(q, rng, 0.5);
    p.rho = 1.5 + 3.0 * std::abs(random_vector(1, rng)(0));
    p.nu = 1.3 + 2.0 * std::abs(random_vector(1, rng)(0));
    const std::string tag = "instance " + std::to_string(inst);

    // WPHM in unconstrained coordinates.
    {
      const Matrix Z = random_matrix(N, q, rng, 0.7);
      Objective f = [&](const Vector& v, Vector& g) {
        WphmParams t = p;
        t.set_unconstrained(v);
        g = wphm_grad(records, Z, t, priors);
        return wphm_nll(records, Z, t, priors);
      };
      note(finite_diff_check(f, p.unconstrained(), 1e-5).max_rel_error, worst_grad, worst_grad_where, tag + " wphm");
      auto grad = [&](const Vector& v) {
        WphmParams t = p;
        t.set_unconstrained(v);
        return wphm_grad(records, Z, t, priors);
      };
      note(max_rel_error(wphm_hessian(records, Z, p, priors), finite_diff_jacobian(grad, p.unconstrained(), 1e-5)),
           worst_hess, worst_hess_where, tag + " wphm");
    }

    for (auto fam : all_families()) {
      const auto spec = spec_of(fam, 0.2 + 0.3 * std::abs(random_vector(1, rng)(0)), 1.2, 0.7);
      const std::string ft = tag + " " + to_string(fam);
      const Matrix X0 = random_matrix(N, q, rng);

      // GPLVM term over all latent entries.
      Objective fk = [&](const Vector& v, Vector& g) {
        const Matrix X = Eigen::Map<const Matrix>(v.data(), N, q);
        Matrix G;
        const double val = gplvm_value_grad({Y}, X, {spec}, G);
        g = Eigen::Map<const Vector>(G.data(), G.size());
        return val;
      };
      note(finite_diff_check(fk, Eigen::Map<const Vector>(X0.data(), X0.size()), 1e-5).max_rel_error, worst_grad,
           worst_grad_where, ft + " gplvm");

      // Joint objective and its Hessian over the packed free parameters.
      const ModelData data{{Y}, records, true};
      LatentState L(X0);
      Objective fj = [&](const Vector& v, Vector& g) {
        LatentState Lt = L;
        WphmParams pt = p;
        unpack_params(v, Lt, pt, true);
        return joint_value_grad(data, Lt, pt, {spec}, priors, g);
      };
      const Vector v0 = pack_params(L, p, true);
      note(finite_diff_check(fj, v0, 1e-5).max_rel_error, worst_grad, worst_grad_where, ft + " joint");
      auto gj = [&](const Vector& v) {
        LatentState Lt = L;
        WphmParams pt = p;
        unpack_params(v, Lt, pt, true);
        return joint_grad(data, Lt, pt, {spec}, priors);
      };
      note(max_rel_error(assemble_hessian(data, L, p, {spec}, priors, HessianCoords::Unconstrained),
                         finite_diff_jacobian(gj, v0, 1e-5)),
           worst_hess, worst_hess_where, ft + " joint");

      // Projection objective for a new individual.
      ModelFit fit;
      fit.latent = L;
      fit.wphm = p;
      fit.specs = {spec};
      fit.data = data;
      const Predictor pred(fit);
      const SourceObservations ys{Vector(random_vector(d, rng))};
      Objective fp = [&](const Vector& x, Vector& g) { return pred.objective(x, ys, &g); };
      note(finite_diff_check(fp, random_vector(q, rng), 1e-5).max_rel_error, worst_grad, worst_grad_where,
           ft + " projection");
    }
  }
  Outcome o;
  o.pass = worst_grad < kGradTol && worst_hess < kHessTol;
  o.detail = "max gradient rel error " + num(worst_grad) + " (" + worst_grad_where + ", limit " + num(kGradTol) +
             "); max Hessian rel error " + num(worst_hess) + " (" + worst_hess_where + ", limit " + num(kHessTol) +
             ")";
  return o;
}

// ---------------------------------------------------------------------------
// C2: linear GPLVM without survival spans the top principal subspace.
// ---------------------------------------------------------------------------

Outcome c2() {
  constexpr int kDatasets = 10;
  constexpr double kAngleTol = 1e-3;
  std::mt19937_64 rng(20240202);
  std::uniform_int_distribution<int> n_dist(15, 40), d_dist(4, 8), q_dist(1, 3);
  double worst = 0.0;
  for (int k = 0; k < kDatasets; ++k) {
    const Eigen::Index N = n_dist(rng), d = d_dist(rng), q = q_dist(rng);
    ModelData data{{random_matrix(N, d, rng)}, random_records(static_cast<std::size_t>(N), rng), false};
    FitOptions o;
    o.survival = false;
    o.seed = static_cast<std::uint64_t>(k + 1);
    const auto fit = fit_map(data, q, {spec_of(KernelFamily::Linear, 0.05)}, {}, o);
    const double angle = max_principal_angle(fit.latent.X, top_pca_scores(data.Ys[0], q));
    progress("dataset " + std::to_string(k + 1) + " N=" + std::to_string(N) + " d=" + std::to_string(d) +
             " q=" + std::to_string(q) + " angle=" + num(angle));
    if (!(angle <= worst)) worst = angle;
  }
  return {worst < kAngleTol, "max principal angle " + num(worst) + " rad over " + std::to_string(kDatasets) +
                                 " datasets (limit " + num(kAngleTol) + ")"};
}

// ---------------------------------------------------------------------------
// C3: Laplace hyper-NLL against tensor Gauss-Legendre quadrature over
// w = (x1, x2, b, rho, nu) for N = 2, q = 1, d = 2 with a linear kernel.
// ---------------------------------------------------------------------------

struct TinyInstance {
  double y[2][2];
  double t[2];
  bool event[2];
  double beta2;
};

/// Joint NLL per individual, written out for the 2x2 case.
double tiny_nll(const TinyInstance& I, double x1, double x2, double b, double rho, double nu, const PriorConfig& P) {
  const double k11 = x1 * x1 + I.beta2, k22 = x2 * x2 + I.beta2, k12 = x1 * x2;
  const double det = k11 * k22 - k12 * k12;
  double quad = 0.0;
  for (int j = 0; j < 2; ++j) {
    const double a = I.y[0][j], c = I.y[1][j];
    quad += (k22 * a * a - 2 * k12 * a * c + k11 * c * c) / det;
  }
  double L = std::log(det) + 0.5 * quad + 2.0 * std::log(2 * M_PI);
  const double x[2] = {x1, x2};
  for (int i = 0; i < 2; ++i) {
    const double eta = b * x[i];
    if (I.event[i]) L -= std::log(nu / rho) + (nu - 1) * std::log(I.t[i] / rho) + eta;
    L += std::pow(I.t[i] / rho, nu) * std::exp(eta);
  }
  auto lgam = [](double v, double k, double a) { return (k - 1) * std::log(v) - v / a - k * std::log(a) - std::lgamma(k); };
  L -= lgam(nu, P.kappa0, P.alpha0) + lgam(rho, P.kappa1, P.alpha1) - 0.5 * b * b / (P.sigma0 * P.sigma0) -
       0.5 * std::log(2 * M_PI * P.sigma0 * P.sigma0);
  return L / 2.0;
}

/// -(1/N) log of the integral of exp(-N L(w)) over x1 > 0 (the sign
/// convention), x2, b real, rho > 1, nu > 1. Each axis is mapped to (-1, 1)
/// by z = c + h u / (1 - u^2) (with exp for the positive axes).
double tiny_quadrature(const TinyInstance& I, const PriorConfig& P, const double c[5], double L_star) {
  using G = boost::math::quadrature::gauss<double, 40>;
  constexpr double h = 1.5;
  std::vector<double> z, jz;
  const auto& ab = G::abscissa();
  const auto& wt = G::weights();
  for (std::size_t k = 0; k < ab.size(); ++k)
    for (double s : {1.0, -1.0}) {
      if (ab[k] == 0.0 && s < 0) continue;
      const double u = s * ab[k], den = 1 - u * u;
      z.push_back(h * u / den);
      jz.push_back(wt[k] * h * (1 + u * u) / (den * den));
    }
  const std::size_t m = z.size();
  double total = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    const double x1 = std::exp(c[0] + z[a]), wa = jz[a] * x1;
    for (std::size_t b2 = 0; b2 < m; ++b2) {
      const double x2 = c[1] + z[b2], wb = wa * jz[b2];
      for (std::size_t c3 = 0; c3 < m; ++c3) {
        const double b = c[2] + z[c3], wc = wb * jz[c3];
        for (std::size_t d = 0; d < m; ++d) {
          const double er = std::exp(c[3] + z[d]), wd = wc * jz[d] * er;
          for (std::size_t e = 0; e < m; ++e) {
            const double en = std::exp(c[4] + z[e]), w = wd * jz[e] * en;
            const double arg = -2.0 * (tiny_nll(I, x1, x2, b, 1.0 + er, 1.0 + en, P) - L_star);
            if (!(arg > -700.0) || !std::isfinite(w)) continue;  // underflow or off the end of the map
            total += w * std::exp(arg);
          }
        }
      }
    }
  }
  return L_star - std::log(total) / 2.0;
}

Outcome c3() {
  constexpr int kInstances = 5;
  constexpr double kRelTol = 0.05;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> time(0.5, 3.0);
  const PriorConfig P;
  double worst = 0.0;
  int ok = 0;
  std::string values;
  for (int k = 0; k < kInstances; ++k) {
    TinyInstance I;
    for (auto& row : I.y)
      for (double& v : row) v = normal(rng);
    for (int i = 0; i < 2; ++i) I.t[i] = time(rng), I.event[i] = true;
    if (k == 3) I.event[1] = false;
    I.beta2 = 0.2 + 0.2 * k;
    Matrix Y(2, 2);
    Y << I.y[0][0], I.y[0][1], I.y[1][0], I.y[1][1];
    const ModelData data{{Y}, {{I.t[0], I.event[0]}, {I.t[1], I.event[1]}}, true};
    FitOptions fo;
    fo.restarts = 3;
    const auto fit = fit_map(data, 1, {spec_of(KernelFamily::Linear, I.beta2)}, P, fo);
    const double lap = laplace_hyp_nll(fit);
    const double x1 = fit.latent.X(0, 0), x2 = fit.latent.X(1, 0);
    const double oracle_at_map = tiny_nll(I, x1, x2, fit.wphm.b(0), fit.wphm.rho, fit.wphm.nu, P);
    if (std::abs(oracle_at_map - fit.nll) > 1e-10 * std::abs(fit.nll))
      return {false, "closed-form oracle disagrees with the joint NLL at the optimum of instance " + std::to_string(k)};
    const double c[5] = {std::log(x1), x2, fit.wphm.b(0), std::log(fit.wphm.rho - 1.0), std::log(fit.wphm.nu - 1.0)};
    const double quad = tiny_quadrature(I, P, c, fit.nll);
    const double rel = std::abs(lap - quad) / std::abs(quad);
    progress("instance " + std::to_string(k + 1) + " laplace=" + num(lap) + " quadrature=" + num(quad) +
             " rel=" + num(rel));
    values += (k ? ", " : "") + num(rel);
    ok += rel < kRelTol ? 1 : 0;
    if (!(rel <= worst)) worst = rel;
  }
  return {ok == kInstances, std::to_string(ok) + "/" + std::to_string(kInstances) +
                                " instances within " + num(kRelTol) + " relative error; errors " + values};
}

// ---------------------------------------------------------------------------
// C4: dimensionality detection on the pattern.
// ---------------------------------------------------------------------------

Outcome c4() {
  constexpr int kRuns = 20, kNeed = 16;
  int q_hits = 0, linear_wins = 0;
  for (int r = 0; r < kRuns; ++r) {
    const std::uint64_t seed = static_cast<std::uint64_t>(r + 1);
    const auto b = simulate(ex::fig4_preset(seed));
    const ModelData data{b.Ys, b.records, true};
    HyperOptions o;
    o.fit.seed = seed;
    const PriorConfig priors;
    const auto scan = scan_dimensionality(data, 1, 4, {KernelFamily::Linear}, priors, o);
    const Eigen::Index qs = scan.q_star;
    double poly = std::numeric_limits<double>::infinity();
    if (qs >= 1) {
      HyperOptions po = o;
      po.fit.seed = seed + static_cast<std::uint64_t>(qs);
      const auto hr =
          optimize_hyperparameters(data, qs, initial_specs(data, {KernelFamily::Polynomial2}, qs), priors, po);
      if (hr.fit.hessian_pd) poly = hr.fit.hyp_nll;
    }
    q_hits += qs == 2 ? 1 : 0;
    linear_wins += scan.best_hyp_nll < poly ? 1 : 0;
    progress("seed " + std::to_string(seed) + " q*=" + std::to_string(qs) + " linear=" + num(scan.best_hyp_nll) +
             " poly2=" + num(poly));
  }
  return {q_hits >= kNeed && linear_wins >= kNeed,
          "q*=2 in " + std::to_string(q_hits) + "/" + std::to_string(kRuns) + ", linear beats poly2 in " +
              std::to_string(linear_wins) + "/" + std::to_string(kRuns) + " (need " + std::to_string(kNeed) + ")"};
}

// ---------------------------------------------------------------------------
// C5-C7: latent retrieval on the pattern.
// ---------------------------------------------------------------------------

Outcome c5() {
  constexpr int kSeeds = 10;
  const double paper[3] = {0.0051, 0.0086, 0.0288};
  std::vector<double> rad, ang, lin;
  for (int r = 0; r < kSeeds; ++r) {
    const std::uint64_t seed = static_cast<std::uint64_t>(r + 1);
    const auto b = simulate(ex::fig2_preset(seed));
    const auto e = ex::retrieval(b, {0}, true, setup_for(seed)).errors;
    rad.push_back(e.radial), ang.push_back(e.angular), lin.push_back(e.linear);
    progress("seed " + std::to_string(seed) + " radial=" + num(e.radial) + " angular=" + num(e.angular) +
             " linear=" + num(e.linear));
  }
  const double m[3] = {ex::median(rad), ex::median(ang), ex::median(lin)};
  bool pass = true;
  std::string d = "median errors";
  const char* names[3] = {"radial", "angular", "linear"};
  for (int k = 0; k < 3; ++k) {
    pass = pass && m[k] <= 3.0 * paper[k];
    d += std::string(" ") + names[k] + "=" + num(m[k]) + " (limit " + num(3.0 * paper[k]) + ")";
  }
  return {pass, d};
}

Outcome c6() {
  constexpr int kReps = 20;
  double sup[3] = {0, 0, 0}, plain[3] = {0, 0, 0};
  for (int r = 0; r < kReps; ++r) {
    const std::uint64_t seed = static_cast<std::uint64_t>(r + 1);
    const auto b = simulate(ex::pattern_config(10, 0.25, seed));
    const auto es = ex::retrieval(b, {0}, true, setup_for(seed)).errors;
    const auto ep = ex::retrieval(b, {0}, false, setup_for(seed)).errors;
    sup[0] += es.radial / kReps, sup[1] += es.angular / kReps, sup[2] += es.linear / kReps;
    plain[0] += ep.radial / kReps, plain[1] += ep.angular / kReps, plain[2] += ep.linear / kReps;
    progress("seed " + std::to_string(seed) + " with survival (" + num(es.radial) + ", " + num(es.angular) + ", " +
             num(es.linear) + ") without (" + num(ep.radial) + ", " + num(ep.angular) + ", " + num(ep.linear) + ")");
  }
  bool pass = true;
  std::string d = "mean errors with/without survival:";
  const char* names[3] = {"radial", "angular", "linear"};
  for (int k = 0; k < 3; ++k) {
    pass = pass && sup[k] < plain[k];
    d += std::string(" ") + names[k] + " " + num(sup[k]) + "/" + num(plain[k]) + " (" +
         num(100.0 * (sup[k] - plain[k]) / plain[k]) + "%)";
  }
  return {pass, d};
}

Outcome c7() {
  constexpr int kReps = 20;
  double e1[3] = {0, 0, 0}, e2[3] = {0, 0, 0}, e12[3] = {0, 0, 0};
  auto add = [](double* acc, const MisalignmentErrors& e) {
    acc[0] += e.radial / kReps, acc[1] += e.angular / kReps, acc[2] += e.linear / kReps;
  };
  for (int r = 0; r < kReps; ++r) {
    const std::uint64_t seed = static_cast<std::uint64_t>(r + 1);
    SimulationConfig c = ex::pattern_config(10, 0.1, seed);
    c.sources.push_back(ex::linear_source(100, 1.0));
    const auto b = simulate(c);
    const auto a = ex::retrieval(b, {0}, true, setup_for(seed)).errors;
    const auto s = ex::retrieval(b, {1}, true, setup_for(seed)).errors;
    const auto both = ex::retrieval(b, {0, 1}, true, setup_for(seed)).errors;
    add(e1, a), add(e2, s), add(e12, both);
    progress("seed " + std::to_string(seed) + " radial y1=" + num(a.radial) + " y2=" + num(s.radial) +
             " both=" + num(both.radial));
  }
  bool pass = true;
  std::string d = "mean errors y1/y2/combined:";
  const char* names[3] = {"radial", "angular", "linear"};
  for (int k = 0; k < 3; ++k) {
    pass = pass && e12[k] < e1[k] && e12[k] < e2[k];
    d += std::string(" ") + names[k] + " " + num(e1[k]) + "/" + num(e2[k]) + "/" + num(e12[k]);
  }
  return {pass, d};
}

// ---------------------------------------------------------------------------
// C8, C9: held-out event-time error, latent versus observed covariates.
// ---------------------------------------------------------------------------

struct MseMeans {
  double latent = 0.0, observed = 0.0;
  double gap() const { return ex::relative_gap(observed, latent); }
};

MseMeans mse_means(const std::function<SimulationConfig(std::uint64_t)>& make, int reps, const std::string& label) {
  MseMeans m;
  for (int r = 0; r < reps; ++r) {
    const std::uint64_t seed = static_cast<std::uint64_t>(r + 1);
    const auto o = ex::held_out_mse(simulate(make(seed)), 2, setup_for(seed));
    m.latent += o.latent / reps;
    m.observed += o.observed / reps;
    progress(label + " seed " + std::to_string(seed) + " latent=" + num(o.latent) + " observed=" + num(o.observed));
  }
  return m;
}

Outcome c8() {
  constexpr int kReps = 20;
  std::map<int, MseMeans> by_d;
  for (int d : {10, 50, 100})
    by_d[d] = mse_means([d](std::uint64_t s) { return ex::gaussian_config(200, d, 0.01, 0.1, s); }, kReps,
                        "d=" + std::to_string(d));
  const bool pass = by_d[50].latent < by_d[50].observed && by_d[100].latent < by_d[100].observed &&
                    by_d[100].gap() > by_d[10].gap();
  std::string d = "mean MSE latent/observed (gap):";
  for (auto& [dim, m] : by_d)
    d += " d=" + std::to_string(dim) + " " + num(m.latent) + "/" + num(m.observed) + " (" + num(100 * m.gap()) + "%)";
  return {pass, d};
}

Outcome c9() {
  constexpr int kReps = 20;
  std::vector<std::pair<double, MseMeans>> rows;
  for (double cf : {0.10, 0.25, 0.50})
    rows.emplace_back(cf, mse_means([cf](std::uint64_t s) { return ex::gaussian_config(200, 25, 1.0, cf, s); }, kReps,
                                    "censor=" + num(cf)));
  bool pass = true;
  std::string d = "observed-vs-latent gap:";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (k > 0) pass = pass && rows[k].second.gap() > rows[k - 1].second.gap();
    d += " " + num(rows[k].first) + "->" + num(100 * rows[k].second.gap()) + "%";
  }
  return {pass, d};
}

// ---------------------------------------------------------------------------
// C10: non-linear manifold, risk-group separation.
// ---------------------------------------------------------------------------

Outcome c10() {
  constexpr int kSeeds = 10, kNeed = 8;
  constexpr double kLatentP = 1e-3, kObservedP = 0.05, kHyperTol = 0.5;
  int split_ok = 0, hyper_ok = 0;
  for (int r = 0; r < kSeeds; ++r) {
    const std::uint64_t seed = static_cast<std::uint64_t>(r + 1);
    const auto b = simulate(ex::fig3_preset(seed));
    const auto o = ex::manifold_separation(b, setup_for(seed));
    const KernelSpec& k = o.fit.specs.front();
    const bool split = o.latent_split.p_value < kLatentP && o.observed_split.p_value > kObservedP;
    const bool hyper = std::abs(k.sigma - 1.0) <= kHyperTol && std::abs(k.lengthscale - 1.0) <= kHyperTol;
    split_ok += split ? 1 : 0;
    hyper_ok += hyper ? 1 : 0;
    progress("seed " + std::to_string(seed) + " p_latent=" + num(o.latent_split.p_value) +
             " p_observed=" + num(o.observed_split.p_value) + " sigma=" + num(k.sigma) + " l=" + num(k.lengthscale) +
             " noise=" + num(k.noise_var));
  }
  return {split_ok >= kNeed && hyper_ok >= kNeed,
          "split criterion met in " + std::to_string(split_ok) + "/" + std::to_string(kSeeds) +
              ", SE sigma and l within 50% in " + std::to_string(hyper_ok) + "/" + std::to_string(kSeeds) + " (need " +
              std::to_string(kNeed) + ")"};
}

// ---------------------------------------------------------------------------
// C11: survival statistics against brute force; sampler against its CDF.
// ---------------------------------------------------------------------------

double brute_km(const std::vector<SurvivalRecord>& r, double t) {
  std::set<double> times;
  for (const auto& x : r)
    if (x.event && x.time <= t) times.insert(x.time);
  double s = 1.0;
  for (double u : times) {
    double n = 0, d = 0;
    for (const auto& x : r) n += x.time >= u, d += x.event && x.time == u;
    s *= 1.0 - d / n;
  }
  return s;
}

double brute_log_rank(const std::vector<SurvivalRecord>& a, const std::vector<SurvivalRecord>& b) {
  std::set<double> times;
  for (const auto* g : {&a, &b})
    for (const auto& x : *g)
      if (x.event) times.insert(x.time);
  double O = 0, E = 0, V = 0;
  for (double u : times) {
    double na = 0, nb = 0, da = 0, db = 0;
    for (const auto& x : a) na += x.time >= u, da += x.event && x.time == u;
    for (const auto& x : b) nb += x.time >= u, db += x.event && x.time == u;
    const double n = na + nb, d = da + db;
    O += da, E += d * na / n;
    if (n > 1) V += d * na * nb * (n - d) / (n * n * (n - 1));
  }
  return V > 0 ? (O - E) * (O - E) / V : 0.0;
}

double brute_harrell(const std::vector<double>& s, const std::vector<SurvivalRecord>& r) {
  double num_ = 0, den = 0;
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r.size(); ++j)
      if (r[i].event && r[i].time < r[j].time) den += 1, num_ += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
  return num_ / den;
}

/// Asymptotic Kolmogorov tail probability P(sqrt(n) D > lambda).
double kolmogorov_p(double lambda) {
  if (lambda < 0.2) return 1.0;
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) s += (k % 2 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(s, 0.0, 1.0);
}

Outcome c11() {
  constexpr int kInstances = 100;
  constexpr double kTol = 1e-12, kAlpha = 0.01;
  std::mt19937_64 rng(20241111);
  std::uniform_int_distribution<int> n_dist(4, 30);
  std::normal_distribution<double> normal;
  double km_err = 0, lr_err = 0, c_err = 0;
  int skipped = 0;
  for (int k = 0; k < kInstances; ++k) {
    const bool ties = k % 2 == 0;
    const auto r = random_records(static_cast<std::size_t>(n_dist(rng)), rng, 0.3, ties);
    const auto km = kaplan_meier(r);
    for (double t = 0.25; t <= 3.5; t += 0.125) km_err = std::max(km_err, std::abs(km.at(t) - brute_km(r, t)));
    std::vector<double> scores(r.size());
    for (auto& s : scores) s = ties ? std::round(2 * normal(rng)) : normal(rng);
    try {
      c_err = std::max(c_err, std::abs(concordance(scores, r) - brute_harrell(scores, r)));
    } catch (const InputError&) {
      ++skipped;  // no comparable pair
    }
    const std::size_t half = r.size() / 2;
    const std::vector<SurvivalRecord> a(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(half)),
        b(r.begin() + static_cast<std::ptrdiff_t>(half), r.end());
    try {
      const double want = brute_log_rank(a, b);
      lr_err = std::max(lr_err, std::abs(log_rank(a, b).chi_square - want) / std::max(1.0, want));
    } catch (const InputError&) {
      ++skipped;  // no events
    }
  }
  // Sampler: 10,000 draws at one covariate value against the Weibull-PH CDF.
  const double rho = 3.0, nu = 2.5, eta = 0.4;
  std::mt19937_64 srng(4242);
  Vector t = sample_survival(Matrix::Constant(10000, 1, 1.0), Vector::Constant(1, eta), rho, nu, srng);
  std::sort(t.data(), t.data() + t.size());
  const double n = static_cast<double>(t.size());
  double D = 0.0;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const double F = 1.0 - std::exp(-std::pow(t(i) / rho, nu) * std::exp(eta));
    D = std::max({D, F - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - F});
  }
  const double p = kolmogorov_p(std::sqrt(n) * D);
  const bool pass = km_err <= kTol && lr_err <= kTol && c_err <= kTol && p > kAlpha;
  return {pass, "max abs error KM " + num(km_err) + ", log-rank " + num(lr_err) + ", Harrell " + num(c_err) +
                    " (limit " + num(kTol) + ", " + std::to_string(skipped) + " degenerate skips); KS D=" + num(D) +
                    " p=" + num(p) + " (alpha " + num(kAlpha) + ")"};
}

// ---------------------------------------------------------------------------
// C12: determinism and persistence.
// ---------------------------------------------------------------------------

Outcome c12() {
  auto simulated_text = [](std::uint64_t seed) {
    const auto b = simulate(ex::fig2_preset(seed));
    return io::format_dataset(io::make_dataset(b.Ys, b.records), io::provenance_comment(seed, "simulate")) +
           io::format_truth(b);
  };
  const bool sim_same = simulated_text(11) == simulated_text(11);

  const auto b = simulate(ex::gaussian_config(40, 6, 0.1, 0.2, 12));
  const ModelData data{b.Ys, b.records, true};
  const std::vector<std::vector<std::string>> cols{io::default_columns(0, 6)};
  auto fit_text = [&](ModelFit* keep) {
    ex::FitSetup s = setup_for(12);
    s.hyper.search.max_evaluations = 20;
    ModelFit f = ex::fit_model(data, 2, {KernelFamily::Linear}, s);
    std::string txt = io::format_model(f, cols, 12);
    const Matrix Xs = Predictor(f).project_rows(b.Ys);
    for (Eigen::Index i = 0; i < Xs.rows(); ++i)
      for (Eigen::Index j = 0; j < Xs.cols(); ++j) txt += io::format_double(Xs(i, j)) + "\n";
    if (keep) *keep = std::move(f);
    return txt;
  };
  ModelFit fit;
  const bool fit_same = fit_text(&fit) == fit_text(nullptr);

  const auto saved = io::parse_model(io::KvDocument::parse(io::format_model(fit, cols, 12), "model"));
  const double a = joint_nll(fit.data, fit.latent, fit.wphm, fit.specs, fit.priors);
  const double c = joint_nll(saved.fit.data, saved.fit.latent, saved.fit.wphm, saved.fit.specs, saved.fit.priors);
  const double rel = std::abs(a - c) / std::abs(a);
  return {sim_same && fit_same && rel <= 1e-12,
          std::string("simulate byte-identical: ") + (sim_same ? "yes" : "no") +
              ", fit+projection byte-identical: " + (fit_same ? "yes" : "no") + ", reloaded joint NLL rel diff " +
              num(rel) + " (limit 1e-12)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<std::string, std::function<Outcome()>> criteria{
      {"C1", c1}, {"C2", c2}, {"C3", c3}, {"C4", c4},   {"C5", c5},   {"C6", c6},
      {"C7", c7}, {"C8", c8}, {"C9", c9}, {"C10", c10}, {"C11", c11}, {"C12", c12}};
  std::vector<std::string> which;
  if (argc < 2 || std::string(argv[1]) == "all") {
    for (int k = 1; k <= 12; ++k) which.push_back("C" + std::to_string(k));
  } else {
    for (int i = 1; i < argc; ++i) which.push_back(argv[i]);
  }
  bool all = true;
  for (const auto& c : which) {
    const auto it = criteria.find(c);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion '" << c << "' (expected C1..C12 or all)\n";
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << c << ' ' << (o.pass ? "PASS" : "FAIL") << ": " << o.detail << " [" << num(secs) << " s]"
              << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
