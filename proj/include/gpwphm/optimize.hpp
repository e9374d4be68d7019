#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gpwphm/common.hpp"

namespace gpwphm {

/// Returns f(x) and writes the gradient into the second argument.
using Objective = std::function<double(const Vector&, Vector&)>;

struct OptimOptions {
  int max_iterations = 2000;
  double grad_tol = 1e-6;     // on the Euclidean norm
  int memory = 10;            // L-BFGS correction pairs
  double armijo_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  int max_backtracks = 40;  // function evaluations per line search
  bool trace = false;

  void validate() const {
    require(grad_tol > 0.0, "optimizer gradient tolerance must be > 0");
    require(max_iterations > 0 && memory > 0 && max_backtracks > 0, "optimizer limits must be > 0");
    require(armijo_c1 > 0.0 && armijo_c1 < wolfe_c2 && wolfe_c2 < 1.0,
            "line-search parameters need 0 < c1 < c2 < 1");
  }
};

struct OptimResult {
  Vector x;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::vector<double> trace;
  std::string message;
};

namespace detail {

inline std::string format_point(const Vector& x) {
  std::ostringstream os;
  os.precision(6);
  os << "[";
  const Eigen::Index shown = std::min<Eigen::Index>(x.size(), 8);
  for (Eigen::Index i = 0; i < shown; ++i) os << (i ? ", " : "") << x(i);
  if (x.size() > shown) os << ", ... (" << x.size() << " entries)";
  os << "]";
  return os.str();
}

}  // namespace detail

namespace detail {

struct LinePoint {
  double a = 0.0;
  double f = 0.0;
  double dphi = 0.0;
  Vector x, g;
};

/// Minimizer of the cubic through (a, fa, da) and (b, fb, db), clamped to the
/// inner 80% of the interval; bisection when the fit is unusable.
inline double cubic_step(const LinePoint& lo, const LinePoint& hi) {
  const double a = lo.a, b = hi.a;
  const double left = std::min(a, b) + 0.1 * std::abs(b - a), right = std::max(a, b) - 0.1 * std::abs(b - a);
  double t = 0.5 * (a + b);
  if (std::isfinite(hi.f) && std::isfinite(hi.dphi)) {
    const double d1 = lo.dphi + hi.dphi - 3.0 * (lo.f - hi.f) / (a - b);
    const double disc = d1 * d1 - lo.dphi * hi.dphi;
    if (disc >= 0.0) {
      const double d2 = std::copysign(std::sqrt(disc), b - a);
      const double c = b - (b - a) * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + 2.0 * d2);
      if (std::isfinite(c)) t = c;
    }
  }
  return std::clamp(t, left, right);
}

}  // namespace detail

/// Limited-memory BFGS with a strong-Wolfe line search (bracketing + zoom).
///
/// Accepted iterates satisfy sufficient decrease, so the value sequence never
/// increases. Trial points with non-finite value or gradient count as too
/// long a step; the search only throws when no finite point can be found.
inline OptimResult minimize(const Objective& objective, const Vector& x0,
                            const OptimOptions& opts = {}) {
  opts.validate();
  OptimResult res;
  res.x = x0;
  Vector g(x0.size());
  res.value = objective(res.x, g);
  res.evaluations = 1;
  if (!std::isfinite(res.value) || !g.allFinite())
    throw NumericalError("minimize: non-finite objective at start point " +
                         detail::format_point(res.x));
  if (opts.trace) res.trace.push_back(res.value);

  std::deque<Vector> S, Y;
  std::deque<double> rhos;
  const double inf = std::numeric_limits<double>::infinity();

  for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
    res.grad_norm = g.norm();
    if (res.grad_norm <= opts.grad_tol) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      return res;
    }

    // Two-loop recursion.
    Vector d = -g;
    std::vector<double> alphas(S.size());
    for (std::size_t k = S.size(); k-- > 0;) {
      alphas[k] = rhos[k] * S[k].dot(d);
      d -= alphas[k] * Y[k];
    }
    if (!S.empty()) d *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    for (std::size_t k = 0; k < S.size(); ++k) {
      const double beta = rhos[k] * Y[k].dot(d);
      d += (alphas[k] - beta) * S[k];
    }
    double slope = g.dot(d);
    if (!(slope < 0.0) || !d.allFinite()) {
      S.clear(), Y.clear(), rhos.clear();
      d = -g;
      slope = -g.squaredNorm();
    }

    const double f0 = res.value;
    int evals_left = opts.max_backtracks;
    bool saw_finite = false;
    auto eval = [&](double a) {
      detail::LinePoint p;
      p.a = a;
      p.x = res.x + a * d;
      p.g.resize(p.x.size());
      p.f = objective(p.x, p.g);
      ++res.evaluations;
      --evals_left;
      if (!std::isfinite(p.f) || !p.g.allFinite()) {
        p.f = inf;
        p.dphi = inf;
      } else {
        saw_finite = true;
        p.dphi = p.g.dot(d);
      }
      return p;
    };
    auto armijo = [&](const detail::LinePoint& p) { return p.f <= f0 + opts.armijo_c1 * p.a * slope; };
    auto curvature = [&](const detail::LinePoint& p) { return std::abs(p.dphi) <= -opts.wolfe_c2 * slope; };

    detail::LinePoint prev;
    prev.a = 0.0, prev.f = f0, prev.dphi = slope;
    std::optional<detail::LinePoint> accepted, best_armijo;
    double a = S.empty() ? std::min(1.0, 1.0 / res.grad_norm) : 1.0;
    auto zoom = [&](detail::LinePoint lo, detail::LinePoint hi) {
      while (evals_left > 0) {
        detail::LinePoint p = eval(detail::cubic_step(lo, hi));
        if (!armijo(p) || p.f >= lo.f) {
          hi = std::move(p);
        } else {
          if (curvature(p)) return std::optional<detail::LinePoint>(std::move(p));
          if (p.dphi * (hi.a - lo.a) >= 0.0) hi = lo;
          lo = std::move(p);
          best_armijo = lo;
        }
        if (std::abs(hi.a - lo.a) <= 1e-14 * std::max(1.0, lo.a)) break;
      }
      return std::optional<detail::LinePoint>();
    };
    for (int i = 0; evals_left > 0; ++i) {
      detail::LinePoint p = eval(a);
      if (!armijo(p) || (i > 0 && p.f >= prev.f)) {
        accepted = zoom(prev, std::move(p));
        break;
      }
      best_armijo = p;
      if (curvature(p)) {
        accepted = std::move(p);
        break;
      }
      if (p.dphi >= 0.0) {
        accepted = zoom(p, prev);
        break;
      }
      prev = std::move(p);
      a *= 2.0;
    }
    if (!accepted && best_armijo && best_armijo->a > 0.0) accepted = best_armijo;

    if (!accepted) {
      if (!saw_finite)
        throw NumericalError("minimize: non-finite objective along search direction near " +
                             detail::format_point(res.x + a * d));
      if (!S.empty()) {
        // Stale curvature information; retry along steepest descent.
        S.clear(), Y.clear(), rhos.clear();
        continue;
      }
      res.message = "line search could not decrease the objective";
      return res;
    }

    Vector s = accepted->x - res.x;
    Vector y = accepted->g - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (static_cast<int>(S.size()) == opts.memory) S.pop_front(), Y.pop_front(), rhos.pop_front();
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rhos.push_back(1.0 / sy);
    }
    res.x = std::move(accepted->x);
    g = std::move(accepted->g);
    res.value = accepted->f;
    if (opts.trace) res.trace.push_back(res.value);
  }
  res.grad_norm = g.norm();
  res.converged = res.grad_norm <= opts.grad_tol;
  res.message = res.converged ? "gradient tolerance reached" : "iteration limit reached";
  return res;
}

// ---------------------------------------------------------------------------
// Derivative-free minimization for the hyperparameter search.
// ---------------------------------------------------------------------------

struct NelderMeadOptions {
  int max_evaluations = 80;
  double f_tol = 1e-7;         // spread of simplex values
  double x_tol = 1e-4;         // simplex diameter
  double initial_step = 0.5;
};

/// Plain Nelder-Mead. The trace holds the best value after each evaluation,
/// so it is non-increasing. Infinite values are valid and rank last.
inline OptimResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                               const NelderMeadOptions& opts = {}) {
  const Eigen::Index n = x0.size();
  require(n >= 1, "nelder_mead: empty start point");
  OptimResult res;
  std::vector<Vector> pts;
  std::vector<double> vals;
  double best = std::numeric_limits<double>::infinity();
  auto eval = [&](const Vector& x) {
    double v = f(x);
    if (std::isnan(v)) v = std::numeric_limits<double>::infinity();
    ++res.evaluations;
    best = std::min(best, v);
    res.trace.push_back(best);
    return v;
  };

  pts.push_back(x0);
  vals.push_back(eval(x0));
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector x = x0;
    x(i) += opts.initial_step;
    pts.push_back(x);
    vals.push_back(eval(x));
  }

  std::vector<std::size_t> order(pts.size());
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    std::vector<Vector> p2;
    std::vector<double> v2;
    for (auto k : order) p2.push_back(pts[k]), v2.push_back(vals[k]);
    pts.swap(p2);
    vals.swap(v2);
  };

  while (res.evaluations < opts.max_evaluations) {
    sort_simplex();
    ++res.iterations;
    double diam = 0.0;
    for (std::size_t k = 1; k < pts.size(); ++k) diam = std::max(diam, (pts[k] - pts[0]).lpNorm<Eigen::Infinity>());
    const double spread = vals.back() - vals.front();
    if (diam <= opts.x_tol || (std::isfinite(spread) && spread <= opts.f_tol)) {
      res.converged = true;
      break;
    }
    Vector centroid = Vector::Zero(n);
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) centroid += pts[k];
    centroid /= static_cast<double>(n);
    const Vector& worst = pts.back();

    const Vector xr = centroid + (centroid - worst);
    const double fr = eval(xr);
    if (fr < vals.front()) {
      const Vector xe = centroid + 2.0 * (centroid - worst);
      const double fe = eval(xe);
      if (fe < fr) pts.back() = xe, vals.back() = fe;
      else pts.back() = xr, vals.back() = fr;
      continue;
    }
    if (fr < vals[vals.size() - 2]) {
      pts.back() = xr, vals.back() = fr;
      continue;
    }
    const bool outside = fr < vals.back();
    const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid))
                              : Vector(centroid + 0.5 * (worst - centroid));
    const double fc = eval(xc);
    if (fc < std::min(fr, vals.back())) {
      pts.back() = xc, vals.back() = fc;
      continue;
    }
    for (std::size_t k = 1; k < pts.size(); ++k) {
      pts[k] = pts[0] + 0.5 * (pts[k] - pts[0]);
      vals[k] = eval(pts[k]);
    }
  }
  sort_simplex();
  res.x = pts.front();
  res.value = vals.front();
  return res;
}

// ---------------------------------------------------------------------------
// Finite-difference verification.
// ---------------------------------------------------------------------------

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  Eigen::Index worst_index = -1;
  Vector analytic;
  Vector numeric;
};

/// Central differences against the analytic gradient. The relative error of a
/// coordinate is |numeric - analytic| / max(|numeric|, |analytic|, 1e-3 * |analytic|_inf).
inline FiniteDiffReport finite_diff_check(const Objective& objective, const Vector& x, double step = 1e-5) {
  require(step > 0.0, "finite_diff_check: step must be > 0");
  FiniteDiffReport rep;
  rep.analytic.resize(x.size());
  objective(x, rep.analytic);
  rep.numeric.resize(x.size());
  Vector scratch(x.size()), xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp(i);
    xp(i) = orig + step;
    const double fp = objective(xp, scratch);
    xp(i) = orig - step;
    const double fm = objective(xp, scratch);
    xp(i) = orig;
    rep.numeric(i) = (fp - fm) / (2.0 * step);
  }
  const double floor = std::max(1e-3 * rep.analytic.lpNorm<Eigen::Infinity>(), 1e-12);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double denom = std::max({std::abs(rep.numeric(i)), std::abs(rep.analytic(i)), floor});
    const double err = std::abs(rep.numeric(i) - rep.analytic(i)) / denom;
    if (err > rep.max_rel_error || rep.worst_index < 0) rep.max_rel_error = err, rep.worst_index = i;
  }
  return rep;
}

/// Central-difference Jacobian of a vector-valued map (columns = inputs).
inline Matrix finite_diff_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x,
                                   double step = 1e-5) {
  const Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp(i);
    xp(i) = orig + step;
    const Vector fp = f(xp);
    xp(i) = orig - step;
    const Vector fm = f(xp);
    xp(i) = orig;
    J.col(i) = (fp - fm) / (2.0 * step);
  }
  return J;
}

/// Largest entrywise relative error between two matrices, relative to
/// max(|a|, |b|, 1e-3 * max|a|).
inline double max_rel_error(const Matrix& a, const Matrix& b) {
  const double floor = std::max(1e-3 * a.cwiseAbs().maxCoeff(), 1e-12);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double denom = std::max({std::abs(a(i, j)), std::abs(b(i, j)), floor});
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / denom);
    }
  return worst;
}

}  // namespace gpwphm
