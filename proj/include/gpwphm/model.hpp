#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gpwphm/kernels.hpp"
#include "gpwphm/optimize.hpp"
#include "gpwphm/wphm.hpp"

namespace gpwphm {

/// Rotation pins: x_{i,j} = 0 for i < q and j > i (zero-based), q(q-1)/2 entries.
inline BoolMatrix make_pin_mask(Eigen::Index N, Eigen::Index q) {
  BoolMatrix m = BoolMatrix::Constant(N, q, false);
  for (Eigen::Index i = 0; i < std::min(N, q); ++i)
    for (Eigen::Index j = i + 1; j < q; ++j) m(i, j) = true;
  return m;
}

struct LatentState {
  Matrix X;
  BoolMatrix pin_mask;

  LatentState() = default;
  explicit LatentState(Matrix x) : X(std::move(x)), pin_mask(make_pin_mask(X.rows(), X.cols())) {
    apply_pins();
  }

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }

  void apply_pins() {
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (Eigen::Index j = 0; j < X.cols(); ++j)
        if (pin_mask(i, j)) X(i, j) = 0.0;
  }

  std::vector<Eigen::Index> free_indices() const { return free_latent_indices(X.rows(), X.cols(), &pin_mask); }
  Eigen::Index free_count() const { return X.size() - pin_mask.count(); }

  Vector free_values() const {
    Vector v(free_count());
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (Eigen::Index j = 0; j < X.cols(); ++j)
        if (!pin_mask(i, j)) v(k++) = X(i, j);
    return v;
  }

  void set_free_values(const Eigen::Ref<const Vector>& v) {
    require(v.size() == free_count(), "latent free-value vector has the wrong length");
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (Eigen::Index j = 0; j < X.cols(); ++j) X(i, j) = pin_mask(i, j) ? 0.0 : v(k++);
  }

  /// Reflects every column whose diagonal anchor x_kk is negative. Returns the
  /// flipped column indices so the caller can flip matching coefficients.
  std::vector<Eigen::Index> enforce_signs() {
    std::vector<Eigen::Index> flipped;
    for (Eigen::Index k = 0; k < std::min(X.rows(), X.cols()); ++k)
      if (X(k, k) < 0.0) {
        X.col(k) *= -1.0;
        flipped.push_back(k);
      }
    return flipped;
  }

  bool signs_ok() const {
    for (Eigen::Index k = 0; k < std::min(X.rows(), X.cols()); ++k)
      if (X(k, k) < 0.0) return false;
    return true;
  }

  static LatentState random(Eigen::Index N, Eigen::Index q, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix X(N, q);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < q; ++j) X(i, j) = normal(rng);
    return LatentState(std::move(X));
  }
};

/// Observed sources plus survival records. With `survival` false the records
/// are carried along but ignored by the objective (plain GPLVM).
struct ModelData {
  std::vector<Matrix> Ys;
  std::vector<SurvivalRecord> records;
  bool survival = true;

  Eigen::Index N() const { return Ys.empty() ? 0 : Ys.front().rows(); }

  void validate() const {
    require(!Ys.empty(), "at least one observed source is required");
    for (std::size_t s = 0; s < Ys.size(); ++s) {
      require(Ys[s].rows() == N(), "source " + std::to_string(s + 1) + " row count differs from source 1");
      require(Ys[s].cols() >= 1, "source " + std::to_string(s + 1) + " has no columns");
      require(Ys[s].allFinite(), "source " + std::to_string(s + 1) + " contains non-finite values");
    }
    if (survival || !records.empty()) {
      require(static_cast<Eigen::Index>(records.size()) == N(),
              "expected " + std::to_string(N()) + " survival records, got " + std::to_string(records.size()));
      validate_records(records);
    }
  }
};

inline bool uses_latent_prior(const std::vector<KernelSpec>& specs) {
  for (const auto& s : specs)
    if (s.family == KernelFamily::SquaredExponential) return true;
  return false;
}

/// -(1/N) log N(x; 0, sigma1^2 I) over the free latent entries.
inline double latent_prior_nll(const LatentState& L, const PriorConfig& priors) {
  if (!priors.enabled) return 0.0;
  const double s2 = priors.sigma1 * priors.sigma1;
  const double n_free = static_cast<double>(L.free_count());
  return (L.X.squaredNorm() / (2.0 * s2) + 0.5 * n_free * (kLog2Pi + std::log(s2))) /
         static_cast<double>(L.rows());
}

// ---------------------------------------------------------------------------
// Parameter packing: [free X (row-major), b, rho~, nu~]; the survival block is
// absent when the survival term is disabled.
// ---------------------------------------------------------------------------

inline Eigen::Index packed_size(const LatentState& L, bool survival) {
  return L.free_count() + (survival ? L.dim() + 2 : 0);
}

inline Vector pack_params(const LatentState& L, const WphmParams& p, bool survival) {
  Vector v(packed_size(L, survival));
  v.head(L.free_count()) = L.free_values();
  if (survival) v.tail(L.dim() + 2) = p.unconstrained();
  return v;
}

inline void unpack_params(const Vector& v, LatentState& L, WphmParams& p, bool survival) {
  require(v.size() == packed_size(L, survival), "packed parameter vector has the wrong length");
  L.set_free_values(v.head(L.free_count()));
  if (survival) p.set_unconstrained(v.tail(L.dim() + 2));
}

inline void check_model_inputs(const ModelData& data, const LatentState& L, const WphmParams& p,
                               const std::vector<KernelSpec>& specs) {
  data.validate();
  check_sources(data.Ys, L.X, specs);
  if (data.survival) require(p.b.size() == L.dim(), "regression vector length must equal q");
}

/// Joint negative log posterior divided by N: GPLVM term, survival term with
/// its priors, and the Gaussian latent prior when any source uses the SE kernel.
inline double joint_nll(const ModelData& data, const LatentState& L, const WphmParams& p,
                        const std::vector<KernelSpec>& specs, const PriorConfig& priors) {
  check_model_inputs(data, L, p, specs);
  double v = gplvm_nll(data.Ys, L.X, specs);
  if (data.survival) v += wphm_nll(data.records, L.X, p, priors);
  if (uses_latent_prior(specs)) v += latent_prior_nll(L, priors);
  return v;
}

/// Value plus gradient over the packed unconstrained parameters.
inline double joint_value_grad(const ModelData& data, const LatentState& L, const WphmParams& p,
                               const std::vector<KernelSpec>& specs, const PriorConfig& priors,
                               Vector& grad) {
  check_model_inputs(data, L, p, specs);
  Matrix gx;
  double v = gplvm_value_grad(data.Ys, L.X, specs, gx);
  grad.resize(packed_size(L, data.survival));
  if (data.survival) {
    const auto ev = wphm_evaluate(data.records, L.X, p, priors, DerivOrder::Gradient);
    v += ev.value;
    gx += ev.grad_z;
    grad.tail(L.dim() + 2) = to_unconstrained_grad(ev.grad, p);
  }
  if (uses_latent_prior(specs) && priors.enabled) {
    v += latent_prior_nll(L, priors);
    gx += L.X / (static_cast<double>(L.rows()) * priors.sigma1 * priors.sigma1);
  }
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < L.rows(); ++i)
    for (Eigen::Index j = 0; j < L.dim(); ++j)
      if (!L.pin_mask(i, j)) grad(k++) = gx(i, j);
  return v;
}

inline Vector joint_grad(const ModelData& data, const LatentState& L, const WphmParams& p,
                         const std::vector<KernelSpec>& specs, const PriorConfig& priors) {
  Vector g;
  joint_value_grad(data, L, p, specs, priors, g);
  return g;
}

enum class HessianCoords { Natural, Unconstrained };

/// Full Hessian over the free parameters in packed order. Natural coordinates
/// use (rho, nu) for the survival block; unconstrained use (rho~, nu~).
inline Matrix assemble_hessian(const ModelData& data, const LatentState& L, const WphmParams& p,
                               const std::vector<KernelSpec>& specs, const PriorConfig& priors,
                               HessianCoords coords = HessianCoords::Natural) {
  check_model_inputs(data, L, p, specs);
  const Eigen::Index N = L.rows(), q = L.dim();
  const double Nd = static_cast<double>(N);
  Matrix hxx = gplvm_hessian_xx(data.Ys, L.X, specs);
  WphmEvaluation ev;
  if (data.survival) {
    ev = wphm_evaluate(data.records, L.X, p, priors, DerivOrder::Hessian);
    const Matrix bb = p.b * p.b.transpose() / Nd;
    for (Eigen::Index r = 0; r < N; ++r) hxx.block(r * q, r * q, q, q) += ev.w(r) * bb;
  }
  if (uses_latent_prior(specs) && priors.enabled)
    hxx.diagonal().array() += 1.0 / (Nd * priors.sigma1 * priors.sigma1);

  const auto idx = L.free_indices();
  const Eigen::Index nx = static_cast<Eigen::Index>(idx.size());
  if (!data.survival) return hxx(idx, idx);

  Matrix H(nx + q + 2, nx + q + 2);
  H.topLeftCorner(nx, nx) = hxx(idx, idx);
  Matrix C = Matrix::Zero(nx, q + 2);
  for (Eigen::Index k = 0; k < nx; ++k) {
    const Eigen::Index r = idx[static_cast<std::size_t>(k)] / q, mu = idx[static_cast<std::size_t>(k)] % q;
    const double w = ev.w(r);
    const double delta = data.records[static_cast<std::size_t>(r)].event ? 1.0 : 0.0;
    for (Eigen::Index eta = 0; eta < q; ++eta)
      C(k, eta) = (w * L.X(r, eta) * p.b(mu) + (eta == mu ? w - delta : 0.0)) / Nd;
    C(k, q) = -(p.nu / p.rho) * w * p.b(mu) / Nd;
    C(k, q + 1) = ev.log_ratio(r) * w * p.b(mu) / Nd;
  }
  if (coords == HessianCoords::Unconstrained) {
    C = C * wphm_chain_factors(p).asDiagonal();
    H.bottomRightCorner(q + 2, q + 2) = to_unconstrained_hess(ev.hess, ev.grad, p);
  } else {
    H.bottomRightCorner(q + 2, q + 2) = ev.hess;
  }
  H.topRightCorner(nx, q + 2) = C;
  H.bottomLeftCorner(q + 2, nx) = C.transpose();
  return H;
}

// ---------------------------------------------------------------------------
// Laplace approximation of the hyperparameter likelihood.
// ---------------------------------------------------------------------------

struct LaplaceTerms {
  double value = std::numeric_limits<double>::infinity();
  double logdet_NH = std::numeric_limits<double>::quiet_NaN();
  Eigen::Index P = 0;
  bool positive_definite = false;
};

/// L* - (P/2N) log 2pi + (1/2N) log|N H| for a P x P Hessian H of the
/// N-normalized objective.
inline LaplaceTerms laplace_terms(double nll, const Matrix& H, Eigen::Index N) {
  LaplaceTerms t;
  t.P = H.rows();
  const Matrix Hs = 0.5 * (H + H.transpose());
  Eigen::LLT<Matrix> llt(Hs);
  if (llt.info() != Eigen::Success) return t;
  double ld = 0.0;
  for (Eigen::Index i = 0; i < t.P; ++i) {
    const double d = llt.matrixLLT()(i, i);
    if (!(d > 0.0)) return t;
    ld += 2.0 * std::log(d);
  }
  const double Nd = static_cast<double>(N), Pd = static_cast<double>(t.P);
  t.logdet_NH = Pd * std::log(Nd) + ld;
  t.positive_definite = std::isfinite(t.logdet_NH);
  if (t.positive_definite) t.value = nll - Pd / (2.0 * Nd) * kLog2Pi + t.logdet_NH / (2.0 * Nd);
  return t;
}

// ---------------------------------------------------------------------------
// MAP fitting.
// ---------------------------------------------------------------------------

struct FitOptions {
  int max_outer = 100;
  double tol_outer = 1e-6;
  double stall_ratio = 0.5;  // hand over to the joint polish when a round gains > ratio * previous gain
  double grad_tol = 1e-6;
  int max_inner_iterations = 500;
  int max_polish_iterations = 3000;
  double newton_handover = 1e-4;  // gradient norm at which exact-Hessian Newton steps take over
  int max_newton_steps = 50;
  int restarts = 0;  // 0 selects 1 for all-linear kernels, 5 otherwise
  std::uint64_t seed = 1;
  bool survival = true;
  double rho_lb = 0.0, nu_lb = 0.0;
  bool compute_hessian = true;
  std::optional<LatentState> init_latent;
  std::optional<WphmParams> init_wphm;

  void validate() const {
    require(max_outer >= 1 && max_inner_iterations >= 1 && max_polish_iterations >= 1, "fit iteration limits must be >= 1");
    require(tol_outer > 0.0 && grad_tol > 0.0, "fit tolerances must be > 0");
    require(restarts >= 0, "restart count must be >= 0");
    require(rho_lb >= 0.0 && nu_lb >= 0.0, "rho/nu lower bounds must be >= 0");
  }
};

inline int default_restarts(const std::vector<KernelSpec>& specs) {
  for (const auto& s : specs)
    if (s.nonlinear()) return 5;
  return 1;
}

struct ModelFit {
  LatentState latent;
  WphmParams wphm;
  std::vector<KernelSpec> specs;
  PriorConfig priors;
  ModelData data;
  double nll = std::numeric_limits<double>::infinity();
  double hyp_nll = std::numeric_limits<double>::infinity();
  double hessian_logdet = std::numeric_limits<double>::quiet_NaN();  // log|N H|
  Eigen::Index free_param_count = 0;
  double grad_norm = std::numeric_limits<double>::infinity();
  bool converged = false;
  bool hessian_pd = false;
  int restarts_used = 0;
  int outer_rounds = 0;
  int inner_iterations = 0;
  std::uint64_t seed = 0;
  std::vector<double> outer_trace;  // joint NLL after each alternating round
  std::vector<std::string> warnings;

  Eigen::Index N() const { return latent.rows(); }
  Eigen::Index q() const { return latent.dim(); }
};

namespace detail {

/// Newton iterations on the packed parameters using the exact Hessian, with
/// Levenberg-Marquardt damping H + lambda I adapted from the step outcome. A
/// step is kept on sufficient decrease, or when the value is flat to rounding
/// level and the gradient norm drops. Returns the number of Hessian evaluations.
inline int newton_refine(const ModelData& data, LatentState& L, WphmParams& p,
                         const std::vector<KernelSpec>& specs, const PriorConfig& priors, double grad_tol,
                         int max_steps) {
  const bool surv = data.survival;
  Vector g, g_new;
  double f = joint_value_grad(data, L, p, specs, priors, g);
  double lambda = -1.0;
  int hessians = 0, failures = 0;
  Matrix H;
  bool need_hessian = true;
  while (hessians < max_steps && g.norm() > grad_tol && failures < 30) {
    if (need_hessian) {
      H = assemble_hessian(data, L, p, specs, priors, HessianCoords::Unconstrained);
      H = 0.5 * (H + H.transpose());
      ++hessians;
      need_hessian = false;
      if (lambda < 0.0) lambda = 1e-6 * std::max(1e-12, H.diagonal().cwiseAbs().maxCoeff());
    }
    Eigen::LLT<Matrix> llt(H + lambda * Matrix::Identity(H.rows(), H.cols()));
    if (llt.info() != Eigen::Success) {
      lambda *= 4.0;
      ++failures;
      continue;
    }
    const Vector d = -llt.solve(g);
    LatentState Lt = L;
    WphmParams pt = p;
    unpack_params(pack_params(L, p, surv) + d, Lt, pt, surv);
    double f_new = std::numeric_limits<double>::infinity();
    try {
      f_new = joint_value_grad(data, Lt, pt, specs, priors, g_new);
    } catch (const NumericalError&) {
    }
    const bool finite = std::isfinite(f_new) && g_new.allFinite();
    const bool decrease = finite && f_new < f + 1e-4 * g.dot(d);
    const bool flat = finite && f_new <= f + 1e-12 * (1.0 + std::abs(f)) && g_new.norm() < g.norm();
    if (decrease || flat) {
      L = std::move(Lt);
      p = std::move(pt);
      f = f_new;
      g = g_new;
      lambda = std::max(lambda / 3.0, 1e-15);
      need_hessian = true;
      failures = 0;
    } else {
      lambda *= 4.0;
      ++failures;
    }
  }
  return hessians;
}

inline ModelFit fit_from_start(const ModelData& data, const std::vector<KernelSpec>& specs,
                               const PriorConfig& priors, const FitOptions& opts, LatentState L,
                               WphmParams p) {
  ModelFit fit;
  fit.specs = specs;
  fit.priors = priors;
  const bool surv = data.survival;
  const Eigen::Index nx = L.free_count(), q = L.dim();

  OptimOptions inner;
  inner.grad_tol = opts.grad_tol;
  inner.max_iterations = opts.max_inner_iterations;

  Vector scratch;
  auto x_block = [&](const Vector& v, Vector& g) {
    LatentState Lt = L;
    Lt.set_free_values(v);
    const double f = joint_value_grad(data, Lt, p, specs, priors, scratch);
    g = scratch.head(nx);
    return f;
  };
  auto theta_block = [&](const Vector& v, Vector& g) {
    WphmParams pt = p;
    pt.set_unconstrained(v);
    const auto ev = wphm_evaluate(data.records, L.X, pt, priors, DerivOrder::Gradient);
    g = to_unconstrained_grad(ev.grad, pt);
    return ev.value;
  };

  double prev = joint_nll(data, L, p, specs, priors);
  double last_delta = std::numeric_limits<double>::infinity();
  if (!std::isfinite(prev)) throw NumericalError("fit: non-finite objective at the initial point");
  for (fit.outer_rounds = 0; fit.outer_rounds < opts.max_outer;) {
    auto rx = minimize(x_block, L.free_values(), inner);
    L.set_free_values(rx.x);
    fit.inner_iterations += rx.iterations;
    if (surv) {
      auto rt = minimize(theta_block, p.unconstrained(), inner);
      p.set_unconstrained(rt.x);
      fit.inner_iterations += rt.iterations;
    }
    ++fit.outer_rounds;
    const double cur = joint_nll(data, L, p, specs, priors);
    fit.outer_trace.push_back(cur);
    const double delta = prev - cur;
    // Block coordinate descent zig-zags at a linear rate once the blocks are
    // strongly coupled; the joint polish below finishes faster from there.
    const bool stalled = fit.outer_rounds >= 3 && delta > opts.stall_ratio * last_delta;
    const bool done = std::abs(delta) < opts.tol_outer;
    prev = cur;
    last_delta = delta;
    if (done || stalled || !surv) break;
  }

  // Joint polish so the stationarity test covers the cross terms too:
  // quasi-Newton to a loose tolerance, then Newton steps on the exact Hessian
  // (the objective carries ~1e-13 rounding noise, below which line searches
  // along gradient directions cannot make progress on ill-conditioned fits).
  OptimOptions polish = inner;
  polish.max_iterations = opts.max_inner_iterations;
  polish.grad_tol = std::max(opts.grad_tol, opts.newton_handover);
  auto joint = [&](const Vector& v, Vector& g) {
    LatentState Lt = L;
    WphmParams pt = p;
    unpack_params(v, Lt, pt, surv);
    return joint_value_grad(data, Lt, pt, specs, priors, g);
  };
  auto rj = minimize(joint, pack_params(L, p, surv), polish);
  unpack_params(rj.x, L, p, surv);
  fit.inner_iterations += rj.iterations;
  fit.inner_iterations += newton_refine(data, L, p, specs, priors, opts.grad_tol, opts.max_newton_steps);
  Vector g;
  fit.nll = joint_value_grad(data, L, p, specs, priors, g);
  fit.grad_norm = g.norm();
  if (fit.grad_norm > opts.grad_tol) {
    polish.grad_tol = opts.grad_tol;
    polish.max_iterations = opts.max_polish_iterations;
    rj = minimize(joint, pack_params(L, p, surv), polish);
    unpack_params(rj.x, L, p, surv);
    fit.inner_iterations += rj.iterations;
    fit.nll = rj.value;
    fit.grad_norm = rj.grad_norm;
  }
  fit.converged = fit.grad_norm <= opts.grad_tol;

  for (Eigen::Index k : L.enforce_signs())
    if (surv) p.b(k) = -p.b(k);
  for (Eigen::Index k = 0; k < std::min(L.rows(), q); ++k)
    if (std::abs(L.X(k, k)) < 1e-8)
      fit.warnings.push_back("latent pin anchor x_" + std::to_string(k + 1) + std::to_string(k + 1) +
                             " is close to 0; the pinned solution may not be unique");
  fit.latent = std::move(L);
  fit.wphm = std::move(p);
  fit.free_param_count = packed_size(fit.latent, surv);
  return fit;
}

inline void attach_laplace(ModelFit& fit) {
  const Matrix H = assemble_hessian(fit.data, fit.latent, fit.wphm, fit.specs, fit.priors, HessianCoords::Natural);
  const auto t = laplace_terms(fit.nll, H, fit.N());
  fit.hessian_pd = t.positive_definite;
  fit.hessian_logdet = t.logdet_NH;
  fit.hyp_nll = t.value;
  if (!fit.hessian_pd) fit.converged = false;
}

}  // namespace detail

/// Alternating MAP fit with restarts. The best positive-definite restart (by
/// joint NLL) wins; non-PD optima trigger up to R further fresh restarts.
inline ModelFit fit_map(const ModelData& data_in, Eigen::Index q, const std::vector<KernelSpec>& specs,
                        const PriorConfig& priors, const FitOptions& opts = {}) {
  opts.validate();
  priors.validate();
  ModelData data = data_in;
  data.survival = data_in.survival && opts.survival;
  data.validate();
  require(q >= 1, "latent dimension q must be >= 1");
  require(specs.size() == data.Ys.size(), "one kernel spec per source is required");
  for (const auto& s : specs) {
    s.validate();
    require(s.noise_var > 0.0, "fitting requires noise variance > 0");
  }
  const Eigen::Index N = data.N();
  const int R = opts.restarts > 0 ? opts.restarts : default_restarts(specs);
  std::mt19937_64 rng(opts.seed);

  std::optional<ModelFit> best;
  std::vector<std::string> notes;
  int attempts = 0;
  auto better = [](const ModelFit& a, const ModelFit& b) {
    if (a.hessian_pd != b.hessian_pd) return a.hessian_pd;
    return a.nll < b.nll;
  };
  auto run = [&](bool use_init) {
    LatentState L = (use_init && opts.init_latent) ? *opts.init_latent : LatentState::random(N, q, rng);
    require(L.rows() == N && L.dim() == q, "initial latent state has the wrong shape");
    WphmParams p = (use_init && opts.init_wphm) ? *opts.init_wphm : WphmParams::initial(q, opts.rho_lb, opts.nu_lb);
    p.rho_lb = opts.rho_lb;
    p.nu_lb = opts.nu_lb;
    if (p.rho <= 1.0 + p.rho_lb) p.rho = 1.0 + p.rho_lb + 1e-3;
    if (p.nu <= 1.0 + p.nu_lb) p.nu = 1.0 + p.nu_lb + 1e-3;
    ++attempts;
    try {
      ModelFit f = detail::fit_from_start(data, specs, priors, opts, std::move(L), std::move(p));
      f.data = data;
      if (opts.compute_hessian) detail::attach_laplace(f);
      if (!best || better(f, *best)) best = std::move(f);
    } catch (const NumericalError& e) {
      notes.push_back(std::string("restart ") + std::to_string(attempts) + " failed: " + e.what());
    }
  };

  for (int r = 0; r < R; ++r) run(r == 0);
  if (opts.compute_hessian)
    for (int r = 0; r < R && (!best || !best->hessian_pd); ++r) run(false);
  if (!best) throw NumericalError("fit: every restart failed" + (notes.empty() ? std::string() : " (" + notes.back() + ")"));
  best->restarts_used = attempts;
  best->seed = opts.seed;
  best->warnings.insert(best->warnings.end(), notes.begin(), notes.end());
  if (opts.compute_hessian && !best->hessian_pd)
    best->warnings.push_back("Hessian is not positive definite at the best optimum");
  return std::move(*best);
}

/// Laplace hyper-NLL of a converged fit; recomputes the Hessian.
inline double laplace_hyp_nll(const ModelFit& fit) {
  const Matrix H = assemble_hessian(fit.data, fit.latent, fit.wphm, fit.specs, fit.priors, HessianCoords::Natural);
  const auto t = laplace_terms(fit.nll, H, fit.N());
  if (!t.positive_definite)
    throw NumericalError("Hessian is not positive definite at this fit; refit from a fresh restart");
  return t.value;
}

// ---------------------------------------------------------------------------
// Hyperparameter optimization over log(beta^2) per source, plus log(sigma)
// and log(l) for squared-exponential sources.
// ---------------------------------------------------------------------------

inline Vector hyper_vector(const std::vector<KernelSpec>& specs) {
  std::vector<double> v;
  for (const auto& s : specs) {
    v.push_back(std::log(s.noise_var));
    if (s.family == KernelFamily::SquaredExponential) {
      v.push_back(std::log(s.sigma));
      v.push_back(std::log(s.lengthscale));
    }
  }
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<KernelSpec> specs_from_hyper(const std::vector<KernelSpec>& templ, const Vector& v) {
  std::vector<KernelSpec> out = templ;
  Eigen::Index k = 0;
  for (auto& s : out) {
    s.noise_var = std::exp(v(k++));
    if (s.family == KernelFamily::SquaredExponential) {
      s.sigma = std::exp(v(k++));
      s.lengthscale = std::exp(v(k++));
    } else {
      s.sigma = 1.0;
    }
  }
  require(k == v.size(), "hyperparameter vector has the wrong length");
  return out;
}

/// Starting noise level: mean of the trailing d - q eigenvalues of Y'Y/N (the
/// probabilistic-PCA noise estimate), floored at 1e-3 of the mean variance.
inline double initial_noise_guess(const Matrix& Y, Eigen::Index q) {
  const Eigen::Index d = Y.cols();
  const Matrix S = Y.transpose() * Y / static_cast<double>(Y.rows());
  const double mean_var = S.trace() / static_cast<double>(d);
  double guess = mean_var;
  if (d > q) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
    guess = es.eigenvalues().head(d - q).mean();
  }
  return std::max(guess, 1e-3 * mean_var);
}

inline std::vector<KernelSpec> initial_specs(const ModelData& data, const std::vector<KernelFamily>& families,
                                             Eigen::Index q) {
  require(families.size() == data.Ys.size(), "one kernel family per source is required");
  std::vector<KernelSpec> specs;
  for (std::size_t s = 0; s < families.size(); ++s) {
    KernelSpec k;
    k.family = families[s];
    k.noise_var = initial_noise_guess(data.Ys[s], q);
    specs.push_back(k);
  }
  return specs;
}

struct HyperOptions {
  FitOptions fit;
  NelderMeadOptions search{60, 1e-6, 1e-3, 0.5};
  bool warm_start = true;
};

struct HyperResult {
  std::vector<KernelSpec> specs;
  ModelFit fit;
  OptimResult search;
  long total_inner_iterations = 0;
  int fits = 0;
};

/// Minimizes the Laplace hyper-NLL. Each evaluation refits the MAP point,
/// warm-started from the best fit so far unless warm_start is false.
inline HyperResult optimize_hyperparameters(const ModelData& data, Eigen::Index q,
                                            const std::vector<KernelSpec>& start_specs,
                                            const PriorConfig& priors, const HyperOptions& opts = {}) {
  HyperResult res;
  FitOptions first = opts.fit;
  first.compute_hessian = true;
  ModelFit best = fit_map(data, q, start_specs, priors, first);
  res.total_inner_iterations += best.inner_iterations;
  ++res.fits;
  std::vector<KernelSpec> best_specs = best.specs;
  const double inf = std::numeric_limits<double>::infinity();

  auto objective = [&](const Vector& h) {
    std::vector<KernelSpec> specs;
    try {
      specs = specs_from_hyper(start_specs, h);
      for (const auto& s : specs)
        if (!(s.noise_var > 1e-12 && s.noise_var < 1e12 && s.sigma < 1e12 && s.lengthscale < 1e12 &&
              s.sigma > 1e-12 && s.lengthscale > 1e-12))
          return inf;
      FitOptions fo = opts.fit;
      fo.compute_hessian = true;
      if (opts.warm_start) {
        fo.init_latent = best.latent;
        fo.init_wphm = best.wphm;
        fo.restarts = 1;
      }
      ModelFit f = fit_map(data, q, specs, priors, fo);
      res.total_inner_iterations += f.inner_iterations;
      ++res.fits;
      const double v = f.hessian_pd ? f.hyp_nll : inf;
      if (v < best.hyp_nll || !best.hessian_pd) {
        best = std::move(f);
        best_specs = specs;
      }
      return v;
    } catch (const NumericalError&) {
      return inf;
    }
  };
  res.search = nelder_mead(objective, hyper_vector(best.specs), opts.search);
  res.specs = best_specs;
  res.fit = std::move(best);
  return res;
}

// ---------------------------------------------------------------------------
// Dimensionality scan.
// ---------------------------------------------------------------------------

struct ScanRow {
  std::string kernel;  // family names joined by '+', one per source
  Eigen::Index q = 0;
  double hyp_nll = std::numeric_limits<double>::infinity();
  double nll = std::numeric_limits<double>::infinity();
  double likelihood_ratio = std::numeric_limits<double>::quiet_NaN();  // exp(N (L(q) - L(q*)))
  std::vector<KernelSpec> specs;
  bool converged = false;
};

struct ScanResult {
  std::vector<ScanRow> rows;
  Eigen::Index q_star = 0;
  double best_hyp_nll = std::numeric_limits<double>::infinity();
};

inline std::string families_label(const std::vector<KernelFamily>& families) {
  std::string s;
  for (std::size_t i = 0; i < families.size(); ++i) s += (i ? "+" : "") + to_string(families[i]);
  return s;
}

/// Optimized hyper-NLL for each q in [q_min, q_max]; q* is the argmin.
inline ScanResult scan_dimensionality(const ModelData& data, Eigen::Index q_min, Eigen::Index q_max,
                                      const std::vector<KernelFamily>& families, const PriorConfig& priors,
                                      const HyperOptions& opts = {}) {
  require(q_min >= 1 && q_min <= q_max, "scan: need 1 <= q_min <= q_max");
  Eigen::Index dmin = std::numeric_limits<Eigen::Index>::max();
  for (const auto& Y : data.Ys) dmin = std::min(dmin, Y.cols());
  require(q_max <= dmin - 1, "scan: q_max must be below the smallest source dimension");
  ScanResult out;
  for (Eigen::Index q = q_min; q <= q_max; ++q) {
    HyperOptions o = opts;
    o.fit.seed = opts.fit.seed + static_cast<std::uint64_t>(q);
    auto hr = optimize_hyperparameters(data, q, initial_specs(data, families, q), priors, o);
    ScanRow row;
    row.kernel = families_label(families);
    row.q = q;
    row.hyp_nll = hr.fit.hessian_pd ? hr.fit.hyp_nll : std::numeric_limits<double>::infinity();
    row.nll = hr.fit.nll;
    row.specs = hr.specs;
    row.converged = hr.fit.converged;
    if (row.hyp_nll < out.best_hyp_nll) out.best_hyp_nll = row.hyp_nll, out.q_star = q;
    out.rows.push_back(std::move(row));
  }
  const double Nd = static_cast<double>(data.N());
  for (auto& row : out.rows) row.likelihood_ratio = std::exp(Nd * (row.hyp_nll - out.best_hyp_nll));
  return out;
}

}  // namespace gpwphm
