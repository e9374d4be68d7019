#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gpwphm/common.hpp"

namespace gpwphm {

/// Event or censoring time (t > 0) and indicator (true = primary event observed).
struct SurvivalRecord {
  double time = 1.0;
  bool event = true;
};

inline void validate_records(const std::vector<SurvivalRecord>& records) {
  for (std::size_t i = 0; i < records.size(); ++i)
    require(std::isfinite(records[i].time) && records[i].time > 0.0,
            "survival record " + std::to_string(i) + ": time must be finite and > 0");
}

inline std::size_t count_events(const std::vector<SurvivalRecord>& records) {
  std::size_t n = 0;
  for (const auto& r : records) n += r.event ? 1 : 0;
  return n;
}

/// Regression vector b, Weibull scale rho and shape nu.
///
/// The optimizer works on unconstrained rho~, nu~ with
/// rho = 1 + rho_lb + log(1 + exp(rho~)) (same form for nu), so rho > 1 + rho_lb.
struct WphmParams {
  Vector b;
  double rho = 3.0;
  double nu = 10.0;
  double rho_lb = 0.0;
  double nu_lb = 0.0;

  double rho_tilde() const { return softplus_inverse(rho - 1.0 - rho_lb); }
  double nu_tilde() const { return softplus_inverse(nu - 1.0 - nu_lb); }
  double drho_dtilde() const { return logistic(rho_tilde()); }
  double dnu_dtilde() const { return logistic(nu_tilde()); }

  void set_rho_tilde(double t) { rho = 1.0 + rho_lb + softplus(t); }
  void set_nu_tilde(double t) { nu = 1.0 + nu_lb + softplus(t); }

  /// (b, rho~, nu~) packed for the optimizer.
  Vector unconstrained() const {
    Vector v(b.size() + 2);
    v.head(b.size()) = b;
    v(b.size()) = rho_tilde();
    v(b.size() + 1) = nu_tilde();
    return v;
  }
  void set_unconstrained(const Vector& v) {
    const Eigen::Index q = v.size() - 2;
    b = v.head(q);
    set_rho_tilde(v(q));
    set_nu_tilde(v(q + 1));
  }

  static WphmParams initial(Eigen::Index q, double rho_lb = 0.0, double nu_lb = 0.0) {
    WphmParams p;
    p.b = Vector::Zero(q);
    p.rho_lb = rho_lb;
    p.nu_lb = nu_lb;
    p.rho = std::max(3.0, 1.0 + rho_lb + 1e-3);
    p.nu = std::max(10.0, 1.0 + nu_lb + 1e-3);
    return p;
  }
};

/// Gamma priors on nu (kappa0, alpha0) and rho (kappa1, alpha1), Gaussian
/// priors with standard deviation sigma0 on b and sigma1 on latent rows
/// (the latter only with a squared-exponential kernel).
struct PriorConfig {
  double kappa0 = 3.0, alpha0 = 1.0;
  double kappa1 = 3.0, alpha1 = 6.0;
  double sigma0 = 2.0;
  double sigma1 = 2.0;
  bool enabled = true;  // switched off only by unit tests

  void validate() const {
    for (double v : {kappa0, alpha0, kappa1, alpha1, sigma0, sigma1})
      require(std::isfinite(v) && v > 0.0, "prior parameters must be > 0");
  }
};

inline double base_hazard(double t, double rho, double nu) {
  require(t >= 0.0 && rho > 0.0 && nu > 0.0, "base_hazard: need t >= 0, rho > 0, nu > 0");
  return (nu / rho) * std::pow(t / rho, nu - 1.0);
}

inline double cum_hazard(double t, double rho, double nu) {
  require(t >= 0.0 && rho > 0.0 && nu > 0.0, "cum_hazard: need t >= 0, rho > 0, nu > 0");
  return std::pow(t / rho, nu);
}

inline double log_gamma_density(double x, double kappa, double alpha) {
  return (kappa - 1.0) * std::log(x) - x / alpha - kappa * std::log(alpha) - std::lgamma(kappa);
}

/// Everything the model needs from the survival term at one point. Natural
/// coordinates are ordered (b_1..b_q, rho, nu).
struct WphmEvaluation {
  double value = 0.0;
  Vector grad;         // natural coordinates
  Matrix hess;         // natural coordinates
  Matrix grad_z;       // N x q, d/dz of the data term
  Vector w;            // per-record Lambda0(t_i) exp(b.z_i)
  Vector log_ratio;    // per-record log(t_i / rho)
};

enum class DerivOrder { Value = 0, Gradient = 1, Hessian = 2 };

/// Negative log-likelihood of the survival data divided by N plus the prior
/// terms -(1/N) log p(b) p(rho) p(nu) (normalized densities).
inline WphmEvaluation wphm_evaluate(const std::vector<SurvivalRecord>& records, const Matrix& Z,
                                    const WphmParams& p, const PriorConfig& priors,
                                    DerivOrder order = DerivOrder::Hessian) {
  require(static_cast<Eigen::Index>(records.size()) == Z.rows(),
          "wphm: " + std::to_string(records.size()) + " records but " + std::to_string(Z.rows()) +
              " covariate rows");
  require(p.b.size() == Z.cols(), "wphm: regression vector length does not match covariates");
  require(!records.empty(), "wphm: no records");
  const Eigen::Index N = Z.rows(), q = Z.cols();
  const double Nd = static_cast<double>(N);
  const double rho = p.rho, nu = p.nu;

  WphmEvaluation ev;
  const Vector eta = Z * p.b;
  ev.log_ratio.resize(N);
  ev.w.resize(N);
  double n1 = 0.0, event_sum = 0.0, lam_sum = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    const double t = records[static_cast<std::size_t>(i)].time;
    const double lr = std::log(t) - std::log(rho);
    ev.log_ratio(i) = lr;
    ev.w(i) = std::exp(nu * lr + eta(i));
    lam_sum += ev.w(i);
    if (records[static_cast<std::size_t>(i)].event) {
      n1 += 1.0;
      event_sum += std::log(nu) - std::log(rho) + (nu - 1.0) * lr + eta(i);
    }
  }
  ev.value = (lam_sum - event_sum) / Nd;
  if (priors.enabled) {
    ev.value += (p.b.squaredNorm() / (2.0 * priors.sigma0 * priors.sigma0) +
                 0.5 * static_cast<double>(q) * (kLog2Pi + 2.0 * std::log(priors.sigma0)) -
                 log_gamma_density(nu, priors.kappa0, priors.alpha0) -
                 log_gamma_density(rho, priors.kappa1, priors.alpha1)) /
                Nd;
  }
  if (order == DerivOrder::Value) return ev;

  ev.grad = Vector::Zero(q + 2);
  ev.grad_z = Matrix::Zero(N, q);
  double g_rho = n1 * nu / rho, g_nu = -n1 / nu;
  for (Eigen::Index i = 0; i < N; ++i) {
    const bool event = records[static_cast<std::size_t>(i)].event;
    const double wi = ev.w(i), lr = ev.log_ratio(i);
    ev.grad.head(q) += (wi - (event ? 1.0 : 0.0)) * Z.row(i).transpose();
    ev.grad_z.row(i) = (wi - (event ? 1.0 : 0.0)) * p.b.transpose();
    g_rho -= nu / rho * wi;
    g_nu += lr * wi - (event ? lr : 0.0);
  }
  ev.grad(q) = g_rho;
  ev.grad(q + 1) = g_nu;
  ev.grad /= Nd;
  ev.grad_z /= Nd;
  if (priors.enabled) {
    ev.grad.head(q) += p.b / (Nd * priors.sigma0 * priors.sigma0);
    ev.grad(q) += (-(priors.kappa1 - 1.0) / rho + 1.0 / priors.alpha1) / Nd;
    ev.grad(q + 1) += (-(priors.kappa0 - 1.0) / nu + 1.0 / priors.alpha0) / Nd;
  }
  if (order == DerivOrder::Gradient) return ev;

  ev.hess = Matrix::Zero(q + 2, q + 2);
  double h_rr = -n1 * nu / (rho * rho), h_nn = n1 / (nu * nu), h_rn = n1 / rho;
  for (Eigen::Index i = 0; i < N; ++i) {
    const Vector z = Z.row(i).transpose();
    const double wi = ev.w(i), lr = ev.log_ratio(i);
    ev.hess.topLeftCorner(q, q).noalias() += wi * z * z.transpose();
    ev.hess.block(0, q, q, 1) += -nu / rho * wi * z;
    ev.hess.block(0, q + 1, q, 1) += lr * wi * z;
    h_rr += nu * (nu + 1.0) / (rho * rho) * wi;
    h_nn += lr * lr * wi;
    h_rn -= (nu / rho * lr + 1.0 / rho) * wi;
  }
  ev.hess(q, q) = h_rr;
  ev.hess(q + 1, q + 1) = h_nn;
  ev.hess(q, q + 1) = h_rn;
  ev.hess /= Nd;
  if (priors.enabled) {
    ev.hess.topLeftCorner(q, q).diagonal().array() += 1.0 / (Nd * priors.sigma0 * priors.sigma0);
    ev.hess(q, q) += (priors.kappa1 - 1.0) / (Nd * rho * rho);
    ev.hess(q + 1, q + 1) += (priors.kappa0 - 1.0) / (Nd * nu * nu);
  }
  ev.hess.triangularView<Eigen::StrictlyLower>() = ev.hess.transpose();
  return ev;
}

inline double wphm_nll(const std::vector<SurvivalRecord>& records, const Matrix& Z,
                       const WphmParams& p, const PriorConfig& priors) {
  return wphm_evaluate(records, Z, p, priors, DerivOrder::Value).value;
}

/// Jacobian diagonal d(b, rho, nu)/d(b, rho~, nu~).
inline Vector wphm_chain_factors(const WphmParams& p) {
  Vector j = Vector::Ones(p.b.size() + 2);
  j(p.b.size()) = p.drho_dtilde();
  j(p.b.size() + 1) = p.dnu_dtilde();
  return j;
}

inline Vector to_unconstrained_grad(const Vector& g_nat, const WphmParams& p) {
  return g_nat.cwiseProduct(wphm_chain_factors(p));
}

/// Hessian in (b, rho~, nu~): J H J plus first-derivative terms from the
/// curvature of the softplus maps.
inline Matrix to_unconstrained_hess(const Matrix& h_nat, const Vector& g_nat, const WphmParams& p) {
  const Vector j = wphm_chain_factors(p);
  const Eigen::Index n = h_nat.rows();
  Matrix h(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index c = a; c < n; ++c) h(a, c) = h(c, a) = (j(a) * j(c)) * h_nat(a, c);
  const Eigen::Index q = p.b.size();
  const double sr = p.drho_dtilde(), sn = p.dnu_dtilde();
  h(q, q) += g_nat(q) * sr * (1.0 - sr);
  h(q + 1, q + 1) += g_nat(q + 1) * sn * (1.0 - sn);
  return h;
}

/// Gradient over (b, rho~, nu~).
inline Vector wphm_grad(const std::vector<SurvivalRecord>& records, const Matrix& Z,
                        const WphmParams& p, const PriorConfig& priors) {
  return to_unconstrained_grad(wphm_evaluate(records, Z, p, priors, DerivOrder::Gradient).grad, p);
}

/// Symmetric (q+2)x(q+2) Hessian over (b, rho~, nu~).
inline Matrix wphm_hessian(const std::vector<SurvivalRecord>& records, const Matrix& Z,
                           const WphmParams& p, const PriorConfig& priors) {
  const auto ev = wphm_evaluate(records, Z, p, priors, DerivOrder::Hessian);
  return to_unconstrained_hess(ev.hess, ev.grad, p);
}

}  // namespace gpwphm
