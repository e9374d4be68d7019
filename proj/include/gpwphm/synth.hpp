#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gpwphm/kernels.hpp"
#include "gpwphm/wphm.hpp"

namespace gpwphm {

/// Two concentric circles and two lines through the origin in the plane.
struct PatternSpec {
  int outer_count = 20;
  double outer_radius = 2.0;
  int inner_count = 16;
  double inner_radius = 1.0;
  int line_count = 30;            // points per line
  double line_half_length = 1.5;  // points span [-h, h] along each line
  double slope_a = 1.0;
  double slope_b = -1.0;

  int total() const { return outer_count + inner_count + 2 * line_count; }

  void validate() const {
    require(outer_count >= 3 && inner_count >= 3, "pattern circles need at least 3 points");
    require(line_count >= 2, "pattern lines need at least 2 points");
    require(outer_radius > 0.0 && inner_radius > 0.0 && line_half_length > 0.0,
            "pattern radii and line length must be > 0");
    require(std::isfinite(slope_a) && std::isfinite(slope_b), "pattern slopes must be finite");
  }
};

enum class PatternComponent : int { OuterCircle = 0, InnerCircle = 1, LineA = 2, LineB = 3 };

struct Pattern {
  Matrix X;                                 // N x 2, rows in generation order
  std::vector<PatternComponent> component;  // per row
};

inline Pattern make_pattern(const PatternSpec& spec = {}) {
  spec.validate();
  Pattern p;
  p.X.resize(spec.total(), 2);
  Eigen::Index r = 0;
  auto circle = [&](int n, double radius, PatternComponent c) {
    for (int k = 0; k < n; ++k, ++r) {
      const double a = 2.0 * std::numbers::pi * k / n;
      p.X(r, 0) = radius * std::cos(a);
      p.X(r, 1) = radius * std::sin(a);
      p.component.push_back(c);
    }
  };
  auto line = [&](double slope, PatternComponent c) {
    const double norm = std::hypot(1.0, slope);
    for (int k = 0; k < spec.line_count; ++k, ++r) {
      const double s = -spec.line_half_length + 2.0 * spec.line_half_length * k / (spec.line_count - 1);
      p.X(r, 0) = s / norm;
      p.X(r, 1) = s * slope / norm;
      p.component.push_back(c);
    }
  };
  circle(spec.outer_count, spec.outer_radius, PatternComponent::OuterCircle);
  circle(spec.inner_count, spec.inner_radius, PatternComponent::InnerCircle);
  line(spec.slope_a, PatternComponent::LineA);
  line(spec.slope_b, PatternComponent::LineB);
  return p;
}

/// d independent columns drawn from N(0, K(X)), K including the noise term.
inline Matrix sample_observations(const Matrix& X, const KernelSpec& spec, Eigen::Index d, std::mt19937_64& rng) {
  require(d >= 1, "sample_observations: d must be >= 1");
  require(spec.noise_var > 0.0, "sample_observations: noise variance must be > 0");
  const KernelMatrix km = kernel_matrix(X, spec);
  std::normal_distribution<double> normal;
  Matrix Z(X.rows(), d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < X.rows(); ++i) Z(i, j) = normal(rng);
  return km.chol.matrixL() * Z;
}

/// Inverse-CDF event times for given uniforms z in [0, 1).
inline Vector survival_times_from_uniforms(const Matrix& X, const Vector& b, double rho, double nu, const Vector& z) {
  require(rho > 0.0 && nu > 0.0, "sample_survival: rho and nu must be > 0");
  require(b.size() == X.cols() && z.size() == X.rows(), "sample_survival: shape mismatch");
  Vector t(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double eta = X.row(i).dot(b);
    t(i) = rho * std::pow(-std::exp(-eta) * std::log1p(-z(i)), 1.0 / nu);
  }
  return t;
}

inline Vector sample_survival(const Matrix& X, const Vector& b, double rho, double nu, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector z(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    do z(i) = unif(rng);
    while (z(i) <= 0.0);  // t must be strictly positive
  }
  return survival_times_from_uniforms(X, b, rho, nu, z);
}

/// Censors round(fraction * N) randomly chosen records, replacing each time by
/// a uniform draw on (0, t_i).
inline std::vector<SurvivalRecord> apply_censoring(const Vector& times, double fraction, std::mt19937_64& rng) {
  require(fraction >= 0.0 && fraction < 1.0, "censoring fraction must lie in [0, 1)");
  const auto N = static_cast<std::size_t>(times.size());
  std::vector<SurvivalRecord> out(N);
  for (std::size_t i = 0; i < N; ++i) {
    require(times(static_cast<Eigen::Index>(i)) > 0.0, "apply_censoring: times must be > 0");
    out[i] = {times(static_cast<Eigen::Index>(i)), true};
  }
  const auto m = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(N)));
  std::vector<std::size_t> idx(N);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t k = 0; k < m; ++k) {
    auto& rec = out[idx[k]];
    std::uniform_real_distribution<double> unif(0.0, rec.time);
    double c;
    do c = unif(rng);
    while (!(c > 0.0 && c < rec.time));
    rec = {c, false};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Misalignment errors.
// ---------------------------------------------------------------------------

struct MisalignmentErrors {
  double radial = 0.0;
  double angular = 0.0;
  double linear = 0.0;
};

namespace detail {

inline double unsigned_angle(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return std::atan2(std::abs(a.x() * b.y() - a.y() * b.x()), a.dot(b));
}

/// SS_err / SS_tot of the no-intercept fit x2 = alpha x1, evaluated after
/// rotating the points so their principal direction through the origin lies
/// on the diagonal. The rotation keeps the score independent of the overall
/// orientation of the retrieved solution.
inline double line_error(std::vector<Eigen::Vector2d> pts) {
  Eigen::Matrix2d S = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) S += p * p.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(S);
  const Eigen::Vector2d u = es.eigenvectors().col(1);
  const double phi = std::numbers::pi / 4.0 - std::atan2(u.y(), u.x());
  const Eigen::Matrix2d R = Eigen::Rotation2Dd(phi).toRotationMatrix();
  double sxy = 0.0, sxx = 0.0, mean2 = 0.0;
  for (auto& p : pts) {
    p = R * p;
    sxy += p.x() * p.y();
    sxx += p.x() * p.x();
    mean2 += p.y();
  }
  mean2 /= static_cast<double>(pts.size());
  require(sxx > 0.0, "misalignment: degenerate line (all points at the origin)");
  const double alpha = sxy / sxx;
  double ss_err = 0.0, ss_tot = 0.0;
  for (const auto& p : pts) {
    ss_err += std::pow(p.y() - alpha * p.x(), 2);
    ss_tot += std::pow(p.y() - mean2, 2);
  }
  require(ss_tot > 0.0, "misalignment: degenerate line (no spread)");
  return ss_err / ss_tot;
}

}  // namespace detail

/// Radial, angular and linear misalignment of a retrieved 2-D latent pattern.
/// Deviations are absolute (signed deviations average to zero by definition
/// of the mean radius); set `signed_deviations` for the literal signed means.
inline MisalignmentErrors misalignment_errors(const Matrix& X_hat, const std::vector<PatternComponent>& component,
                                              bool signed_deviations = false) {
  require(X_hat.cols() == 2, "misalignment errors need a 2-column latent matrix");
  require(static_cast<std::size_t>(X_hat.rows()) == component.size(), "component labels must match rows");
  MisalignmentErrors e;
  auto dev = [&](double v) { return signed_deviations ? v : std::abs(v); };
  int circles = 0, lines = 0;
  for (auto c : {PatternComponent::OuterCircle, PatternComponent::InnerCircle}) {
    std::vector<Eigen::Vector2d> pts;
    for (Eigen::Index i = 0; i < X_hat.rows(); ++i)
      if (component[static_cast<std::size_t>(i)] == c) pts.emplace_back(X_hat(i, 0), X_hat(i, 1));
    if (pts.empty()) continue;
    const double n = static_cast<double>(pts.size());
    double r_mean = 0.0;
    for (const auto& p : pts) r_mean += p.norm();
    r_mean /= n;
    require(r_mean > 0.0, "misalignment: degenerate circle (mean radius 0)");
    const double theta = 2.0 * std::numbers::pi / n;
    double rad = 0.0, ang = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      rad += dev((pts[i].norm() - r_mean) / r_mean);
      ang += dev((detail::unsigned_angle(pts[i], pts[(i + 1) % pts.size()]) - theta) / theta);
    }
    e.radial += rad / n;
    e.angular += ang / n;
    ++circles;
  }
  for (auto c : {PatternComponent::LineA, PatternComponent::LineB}) {
    std::vector<Eigen::Vector2d> pts;
    for (Eigen::Index i = 0; i < X_hat.rows(); ++i)
      if (component[static_cast<std::size_t>(i)] == c) pts.emplace_back(X_hat(i, 0), X_hat(i, 1));
    if (pts.empty()) continue;
    e.linear += detail::line_error(std::move(pts));
    ++lines;
  }
  if (circles) e.radial /= circles, e.angular /= circles;
  if (lines) e.linear /= lines;
  return e;
}

// ---------------------------------------------------------------------------
// Complete synthetic datasets.
// ---------------------------------------------------------------------------

struct SourceConfig {
  KernelSpec kernel;
  Eigen::Index d = 10;
};

struct SimulationConfig {
  bool use_pattern = true;  // otherwise latents are N(0, latent_sd^2) with N x q
  PatternSpec pattern;
  Eigen::Index N = 96;
  Eigen::Index q = 2;
  double latent_sd = 1.0;
  std::vector<SourceConfig> sources{SourceConfig{}};
  Vector b = (Vector(2) << 1.0, -0.5).finished();
  double rho = 10.0;
  double nu = 10.0;
  double censor_frac = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    require(!sources.empty(), "simulation needs at least one source");
    for (const auto& s : sources) {
      s.kernel.validate();
      require(s.kernel.noise_var > 0.0, "simulation noise variance must be > 0");
      require(s.d >= 1, "simulation source dimension must be >= 1");
    }
    const Eigen::Index q_eff = use_pattern ? 2 : q;
    require(b.size() == q_eff, "simulation b must have " + std::to_string(q_eff) + " entries");
    require(rho > 0.0 && nu > 0.0, "simulation rho and nu must be > 0");
    require(fraction_ok(), "censoring fraction must lie in [0, 1)");
    if (use_pattern) pattern.validate();
    else require(N >= 2 && q >= 1 && latent_sd > 0.0, "simulation N >= 2, q >= 1, latent_sd > 0 required");
  }
  bool fraction_ok() const { return censor_frac >= 0.0 && censor_frac < 1.0; }
};

struct SyntheticBundle {
  Matrix X_true;
  std::vector<PatternComponent> component;  // empty for Gaussian latents
  std::vector<Matrix> Ys;
  Vector event_times;                       // uncensored generated times
  std::vector<SurvivalRecord> records;
  SimulationConfig config;
};

/// Fixed draw order: latents, then each source, then event times, then censoring.
inline SyntheticBundle simulate(const SimulationConfig& cfg) {
  cfg.validate();
  SyntheticBundle out;
  out.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  if (cfg.use_pattern) {
    Pattern p = make_pattern(cfg.pattern);
    out.X_true = std::move(p.X);
    out.component = std::move(p.component);
  } else {
    std::normal_distribution<double> normal(0.0, cfg.latent_sd);
    out.X_true.resize(cfg.N, cfg.q);
    for (Eigen::Index i = 0; i < cfg.N; ++i)
      for (Eigen::Index j = 0; j < cfg.q; ++j) out.X_true(i, j) = normal(rng);
  }
  for (const auto& s : cfg.sources) out.Ys.push_back(sample_observations(out.X_true, s.kernel, s.d, rng));
  out.event_times = sample_survival(out.X_true, cfg.b, cfg.rho, cfg.nu, rng);
  out.records = apply_censoring(out.event_times, cfg.censor_frac, rng);
  return out;
}

}  // namespace gpwphm
