#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "gpwphm/model.hpp"

namespace gpwphm {

/// One optional observation vector per source; std::nullopt marks a missing source.
using SourceObservations = std::vector<std::optional<Vector>>;

struct LatentProjection {
  Vector x_star;
  double objective = std::numeric_limits<double>::infinity();
  std::vector<double> kappa2;  // per source; NaN for missing sources
  bool converged = false;
};

struct ProjectionOptions {
  int starts = 10;              // random starts drawn from the latent prior
  bool nearest_start = true;    // extra start at the closest training row
  std::uint64_t seed = 1;
  double grad_tol = 1e-8;
  int max_iterations = 500;
};

struct EventTimePrediction {
  double mean = 0.0;
  double variance = 0.0;
  double risk = 0.0;
};

/// Cached per-source factorizations of a fitted model, for repeated projection.
class Predictor {
 public:
  explicit Predictor(const ModelFit& fit) : fit_(fit) {
    require(fit.N() >= 1 && fit.specs.size() == fit.data.Ys.size(), "predictor: incomplete model fit");
    for (std::size_t s = 0; s < fit.specs.size(); ++s) {
      km_.push_back(kernel_matrix(fit.latent.X, fit.specs[s]));
      alpha_.push_back(km_.back().solve(fit.data.Ys[s]));
    }
    se_prior_ = uses_latent_prior(fit.specs) && fit.priors.enabled;
    col_sd_ = Vector::Ones(fit.q());
    if (fit.N() > 1) {
      const Matrix centered = fit.latent.X.rowwise() - fit.latent.X.colwise().mean();
      col_sd_ = (centered.colwise().squaredNorm() / static_cast<double>(fit.N() - 1)).cwiseSqrt().transpose();
      for (Eigen::Index j = 0; j < col_sd_.size(); ++j)
        if (!(col_sd_(j) > 0.0)) col_sd_(j) = 1.0;
    }
  }

  const ModelFit& fit() const { return fit_; }

  /// Negative log of the projection posterior divided by N, with gradient.
  double objective(const Vector& x, const SourceObservations& ys, Vector* grad = nullptr,
                   std::vector<double>* kappa2 = nullptr) const {
    check_observations(ys);
    const double Nd = static_cast<double>(fit_.N());
    const Eigen::Index q = fit_.q();
    require(x.size() == q, "projection point has the wrong dimension");
    double J = 0.0;
    if (grad) *grad = Vector::Zero(q);
    if (kappa2) kappa2->assign(ys.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t s = 0; s < ys.size(); ++s) {
      if (!ys[s]) continue;
      const Vector& y = *ys[s];
      const double d = static_cast<double>(y.size());
      visit_kernel(fit_.specs[s], [&](const auto& k) {
        const Matrix& X = fit_.latent.X;
        Vector kv(fit_.N());
        Matrix Dk(fit_.N(), q);
        for (Eigen::Index i = 0; i < fit_.N(); ++i) {
          const Vector xi = X.row(i).transpose();
          kv(i) = k(xi, x);
          Dk.row(i) = k.grad2(xi, x).transpose();
        }
        const Vector Kik = km_[s].solve(kv);
        const Vector m = alpha_[s].transpose() * kv;
        const double k2 = k(x, x) - kv.dot(Kik) + fit_.specs[s].noise_var;
        if (!(k2 > 0.0) || !std::isfinite(k2)) throw NumericalError("projection: non-positive predictive variance");
        if (kappa2) (*kappa2)[s] = k2;
        const Vector r = y - m;
        const double rr = r.squaredNorm();
        J += (rr / (2.0 * k2) + 0.5 * d * (kLog2Pi + std::log(k2))) / Nd;
        if (grad) {
          const Vector dm_r = Dk.transpose() * (alpha_[s] * r);  // (dm/dx)' r
          const Vector dk2 = 2.0 * k.grad2(x, x) - 2.0 * Dk.transpose() * Kik;
          *grad += (-dm_r / k2 + (-rr / (2.0 * k2 * k2) + d / (2.0 * k2)) * dk2) / Nd;
        }
      });
    }
    if (se_prior_) {
      const double s2 = fit_.priors.sigma1 * fit_.priors.sigma1;
      J += (x.squaredNorm() / (2.0 * s2) + 0.5 * static_cast<double>(q) * (kLog2Pi + std::log(s2))) / Nd;
      if (grad) *grad += x / (Nd * s2);
    }
    return J;
  }

  /// MAP latent point for a new individual: best of several L-BFGS starts,
  /// ties broken by the smaller norm.
  LatentProjection project(const SourceObservations& ys, const ProjectionOptions& opts = {}) const {
    check_observations(ys);
    require(opts.starts >= 0 && (opts.starts > 0 || opts.nearest_start), "projection needs at least one start");
    const Eigen::Index q = fit_.q();
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal;
    std::vector<Vector> starts;
    if (opts.nearest_start) starts.push_back(nearest_training_row(ys));
    for (int k = 0; k < opts.starts; ++k) {
      Vector x(q);
      for (Eigen::Index j = 0; j < q; ++j)
        x(j) = normal(rng) * (se_prior_ ? fit_.priors.sigma1 : col_sd_(j));
      starts.push_back(x);
    }
    OptimOptions oo;
    oo.grad_tol = opts.grad_tol;
    oo.max_iterations = opts.max_iterations;
    auto f = [&](const Vector& x, Vector& g) { return objective(x, ys, &g); };
    LatentProjection best;
    for (const auto& x0 : starts) {
      OptimResult r;
      try {
        r = minimize(f, x0, oo);
      } catch (const NumericalError&) {
        continue;
      }
      const bool better = r.value < best.objective - 1e-12 ||
                          (std::abs(r.value - best.objective) <= 1e-12 && r.x.norm() < best.x_star.norm());
      if (best.x_star.size() == 0 || better) {
        best.x_star = r.x;
        best.objective = r.value;
        best.converged = r.converged;
      }
    }
    if (best.x_star.size() == 0) throw NumericalError("projection: every start failed");
    objective(best.x_star, ys, nullptr, &best.kappa2);
    return best;
  }

  /// Projects each row of the given per-source matrices (all sources present).
  Matrix project_rows(const std::vector<Matrix>& Ys, const ProjectionOptions& opts = {}) const {
    require(Ys.size() == fit_.specs.size(), "projection: one matrix per source is required");
    const Eigen::Index M = Ys.front().rows();
    Matrix out(M, fit_.q());
    for (Eigen::Index i = 0; i < M; ++i) {
      SourceObservations ys;
      for (const auto& Y : Ys) ys.emplace_back(Vector(Y.row(i).transpose()));
      ProjectionOptions o = opts;
      o.seed = opts.seed + static_cast<std::uint64_t>(i);
      out.row(i) = project(ys, o).x_star.transpose();
    }
    return out;
  }

 private:
  void check_observations(const SourceObservations& ys) const {
    require(ys.size() == fit_.specs.size(), "projection: expected " + std::to_string(fit_.specs.size()) +
                                                " source slots, got " + std::to_string(ys.size()));
    bool any = false;
    for (std::size_t s = 0; s < ys.size(); ++s) {
      if (!ys[s]) continue;
      any = true;
      require(ys[s]->size() == fit_.data.Ys[s].cols(),
              "projection: source " + std::to_string(s + 1) + " has " + std::to_string(ys[s]->size()) +
                  " values, expected " + std::to_string(fit_.data.Ys[s].cols()));
      require(ys[s]->allFinite(), "projection: non-finite observation in source " + std::to_string(s + 1));
    }
    require(any, "projection: at least one source must be observed");
  }

  Vector nearest_training_row(const SourceObservations& ys) const {
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < fit_.N(); ++i) {
      double dist = 0.0;
      for (std::size_t s = 0; s < ys.size(); ++s)
        if (ys[s]) dist += (fit_.data.Ys[s].row(i).transpose() - *ys[s]).squaredNorm();
      if (dist < best_d) best_d = dist, best = i;
    }
    return fit_.latent.X.row(best).transpose();
  }

  const ModelFit& fit_;
  std::vector<KernelMatrix> km_;
  std::vector<Matrix> alpha_;
  bool se_prior_ = false;
  Vector col_sd_;
};

inline LatentProjection project_new(const SourceObservations& ys, const ModelFit& fit,
                                    const ProjectionOptions& opts = {}) {
  return Predictor(fit).project(ys, opts);
}

/// Mean and variance of the event time for linear predictor eta under the
/// Weibull base hazard, by adaptive Gauss-Kronrod quadrature on [0, T_max]
/// with T_max chosen so the survival beyond it is 1e-12.
inline EventTimePrediction weibull_event_time(double eta, double rho, double nu) {
  require(std::isfinite(eta) && rho > 0.0 && nu > 0.0, "event time: need finite eta, rho > 0, nu > 0");
  const double scale = rho * std::exp(-eta / nu);
  const double t_max = scale * std::pow(-std::log(1e-12), 1.0 / nu);
  const double e = std::exp(eta);
  auto density = [&](double s) {
    if (s <= 0.0) return 0.0;
    const double lam = std::pow(s / rho, nu);
    return (nu / s) * lam * e * std::exp(-lam * e);
  };
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  double err1 = 0.0, err2 = 0.0;
  const double m1 = GK::integrate([&](double s) { return s * density(s); }, 0.0, t_max, 20, 1e-13, &err1);
  const double m2 = GK::integrate([&](double s) { return s * s * density(s); }, 0.0, t_max, 20, 1e-13, &err2);
  if (!std::isfinite(m1) || !std::isfinite(m2) || err1 > 1e-8 * std::abs(m1) || err2 > 1e-8 * std::abs(m2)) {
    std::ostringstream os;
    os << "event-time quadrature did not converge (eta=" << eta << ", rho=" << rho << ", nu=" << nu
       << ", error estimates " << err1 << ", " << err2 << ")";
    throw NumericalError(os.str());
  }
  EventTimePrediction out;
  out.mean = m1;
  out.variance = std::max(0.0, m2 - m1 * m1);
  out.risk = eta;
  return out;
}

inline double risk_score(const Vector& x_star, const ModelFit& fit) {
  require(x_star.size() == fit.wphm.b.size(), "risk score: dimension mismatch");
  return fit.wphm.b.dot(x_star);
}

inline EventTimePrediction predict_event_time(const Vector& x_star, const ModelFit& fit) {
  return weibull_event_time(risk_score(x_star, fit), fit.wphm.rho, fit.wphm.nu);
}

/// Survival model fitted directly on the observed covariates (sources
/// concatenated column-wise); the baseline the latent model is compared with.
struct ObservedWphm {
  WphmParams params;
  double nll = 0.0;
  bool converged = false;

  double risk(const Vector& z) const { return params.b.dot(z); }
  EventTimePrediction predict(const Vector& z) const { return weibull_event_time(risk(z), params.rho, params.nu); }
};

inline Matrix concat_sources(const std::vector<Matrix>& Ys) {
  require(!Ys.empty(), "no sources");
  Eigen::Index cols = 0;
  for (const auto& Y : Ys) {
    require(Y.rows() == Ys.front().rows(), "sources disagree on the number of rows");
    cols += Y.cols();
  }
  Matrix Z(Ys.front().rows(), cols);
  Eigen::Index c = 0;
  for (const auto& Y : Ys) {
    Z.middleCols(c, Y.cols()) = Y;
    c += Y.cols();
  }
  return Z;
}

inline ObservedWphm fit_observed_wphm(const std::vector<SurvivalRecord>& records, const Matrix& Z,
                                      const PriorConfig& priors = {}, const OptimOptions& opts = {}) {
  validate_records(records);
  require(Z.allFinite(), "observed covariates contain non-finite values");
  WphmParams p = WphmParams::initial(Z.cols());
  auto f = [&](const Vector& v, Vector& g) {
    WphmParams t = p;
    t.set_unconstrained(v);
    const auto ev = wphm_evaluate(records, Z, t, priors, DerivOrder::Gradient);
    g = to_unconstrained_grad(ev.grad, t);
    return ev.value;
  };
  const OptimResult r = minimize(f, p.unconstrained(), opts);
  ObservedWphm out;
  out.params = p;
  out.params.set_unconstrained(r.x);
  out.nll = r.value;
  out.converged = r.converged;
  return out;
}

}  // namespace gpwphm
