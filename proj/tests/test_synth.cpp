#include <gtest/gtest.h>

#include <algorithm>

#include "gpwphm/experiments.hpp"
#include "gpwphm/synth.hpp"
#include "support.hpp"

using namespace gpwphm;
using namespace gpwphm::testing;

namespace {

Matrix rotate(const Matrix& X, double angle) {
  Matrix R(2, 2);
  R << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return X * R.transpose();
}

}  // namespace

TEST(Pattern, DefaultCountsAndZeroErrors) {
  const Pattern p = make_pattern();
  EXPECT_EQ(p.X.rows(), 96);
  EXPECT_EQ(std::count(p.component.begin(), p.component.end(), PatternComponent::OuterCircle), 20);
  EXPECT_EQ(std::count(p.component.begin(), p.component.end(), PatternComponent::InnerCircle), 16);
  const auto e = misalignment_errors(p.X, p.component);
  EXPECT_NEAR(e.radial, 0.0, 1e-15);
  EXPECT_NEAR(e.angular, 0.0, 1e-13);
  EXPECT_NEAR(e.linear, 0.0, 1e-15);
}

TEST(Pattern, OuterCircleRadiusTwo) {
  const Pattern p = make_pattern();
  for (Eigen::Index i = 0; i < p.X.rows(); ++i)
    if (p.component[static_cast<std::size_t>(i)] == PatternComponent::OuterCircle)
      EXPECT_NEAR(p.X.row(i).norm(), 2.0, 1e-15);
}

TEST(Pattern, RotationKeepsErrorsZero) {
  const Pattern p = make_pattern();
  for (double a : {0.3, 1.2, 2.9}) {
    const auto e = misalignment_errors(rotate(p.X, a), p.component);
    EXPECT_NEAR(e.radial, 0.0, 1e-12);
    EXPECT_NEAR(e.angular, 0.0, 1e-12);
    EXPECT_NEAR(e.linear, 0.0, 1e-12);
  }
}

TEST(Pattern, InvalidSpecRejected) {
  PatternSpec s;
  s.outer_count = 2;
  EXPECT_THROW(make_pattern(s), InputError);
}

TEST(Misalignment, InvariantUnderRotationAndScale) {
  const Pattern p = make_pattern();
  std::mt19937_64 rng(151);
  const Matrix noisy = p.X + random_matrix(p.X.rows(), 2, rng, 0.05);
  const auto base = misalignment_errors(noisy, p.component);
  EXPECT_GT(base.radial, 0.0);
  EXPECT_GT(base.angular, 0.0);
  EXPECT_GT(base.linear, 0.0);
  for (double a : {0.4, 2.0})
    for (double s : {0.01, 3.7}) {
      const auto e = misalignment_errors(s * rotate(noisy, a), p.component);
      EXPECT_NEAR(e.radial, base.radial, 1e-10);
      EXPECT_NEAR(e.angular, base.angular, 1e-10);
      EXPECT_NEAR(e.linear, base.linear, 1e-10);
    }
}

TEST(Misalignment, SignedDeviationsVanish) {
  const Pattern p = make_pattern();
  std::mt19937_64 rng(157);
  const auto e = misalignment_errors(p.X + random_matrix(p.X.rows(), 2, rng, 0.05), p.component, true);
  EXPECT_NEAR(e.radial, 0.0, 1e-12);
}

TEST(Misalignment, DegenerateCircleIsError) {
  const Pattern p = make_pattern();
  Matrix X = p.X;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    if (p.component[static_cast<std::size_t>(i)] == PatternComponent::InnerCircle) X.row(i).setZero();
  EXPECT_THROW(misalignment_errors(X, p.component), InputError);
}

TEST(SampleObservations, EmpiricalCovarianceMatchesKernel) {
  Matrix X(4, 1);
  X << 0.0, 0.3, 0.7, 1.0;
  const auto s = spec_of(KernelFamily::SquaredExponential, 0.1, 1.0, 1.0);
  std::mt19937_64 rng(163);
  const Matrix Y = sample_observations(X, s, 10000, rng);
  const Matrix C = Y * Y.transpose() / 10000.0;
  const Matrix K = kernel_matrix(X, s).K;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(C(i, j), K(i, j), 0.05 * K(i, j));
}

TEST(SampleObservations, NoiseOnlyLimit) {
  std::mt19937_64 rng(167);
  const Matrix X = random_matrix(3, 2, rng);
  const Matrix Y = sample_observations(X, spec_of(KernelFamily::Linear, 0.2, 1e-12), 20000, rng);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(Y.row(i).squaredNorm() / 20000.0, 0.2, 0.01);
}

TEST(SampleObservations, SameSeedSameDraws) {
  const Matrix X = make_pattern().X;
  std::mt19937_64 a(5), b(5);
  EXPECT_EQ(sample_observations(X, spec_of(KernelFamily::Linear), 4, a),
            sample_observations(X, spec_of(KernelFamily::Linear), 4, b));
}

TEST(SampleObservations, NonPositiveNoiseRejected) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_observations(Matrix::Zero(2, 1), spec_of(KernelFamily::Linear, 0.0), 2, rng), InputError);
}

TEST(SampleSurvival, InverseCdfPlugIn) {
  const Vector t = survival_times_from_uniforms(Matrix::Zero(1, 2), Vector::Zero(2), 2.0, 1.0,
                                                Vector::Constant(1, 1.0 - std::exp(-1.0)));
  EXPECT_NEAR(t(0), 2.0, 1e-14);
}

TEST(SampleSurvival, KolmogorovSmirnovAgainstAnalyticCdf) {
  const double rho = 3.0, nu = 2.5, eta = 0.4;
  Matrix X = Matrix::Constant(10000, 1, 1.0);
  std::mt19937_64 rng(173);
  Vector t = sample_survival(X, Vector::Constant(1, eta), rho, nu, rng);
  std::sort(t.data(), t.data() + t.size());
  double D = 0.0;
  const double n = static_cast<double>(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const double F = 1.0 - std::exp(-std::pow(t(i) / rho, nu) * std::exp(eta));
    D = std::max({D, std::abs(F - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - F)});
  }
  EXPECT_LT(D, 1.6276 / std::sqrt(n));  // asymptotic critical value at alpha = 0.01
}

TEST(SampleSurvival, ScaleDoublesTimes) {
  std::mt19937_64 rng(179);
  const Matrix X = random_matrix(20, 2, rng);
  const Vector b = random_vector(2, rng);
  std::mt19937_64 a(9), c(9);
  const Vector t1 = sample_survival(X, b, 2.0, 3.0, a), t2 = sample_survival(X, b, 4.0, 3.0, c);
  EXPECT_LT(max_rel_error(2.0 * t1, t2), 1e-14);
  EXPECT_GT(t1.minCoeff(), 0.0);
}

TEST(Censoring, ZeroFractionLeavesTimes) {
  std::mt19937_64 rng(181);
  const Vector t = Vector::LinSpaced(10, 1.0, 2.0);
  const auto r = apply_censoring(t, 0.0, rng);
  for (int i = 0; i < 10; ++i) {
    EXPECT_TRUE(r[i].event);
    EXPECT_EQ(r[i].time, t(i));
  }
}

TEST(Censoring, RoundedCountAndEarlierTimes) {
  std::mt19937_64 rng(191);
  const Vector t = (Vector::Random(200).array() + 2.0).matrix();
  const auto r = apply_censoring(t, 0.1, rng);
  int censored = 0;
  for (int i = 0; i < 200; ++i)
    if (!r[i].event) {
      ++censored;
      EXPECT_LT(r[i].time, t(i));
      EXPECT_GT(r[i].time, 0.0);
    } else {
      EXPECT_EQ(r[i].time, t(i));
    }
  EXPECT_EQ(censored, 20);
}

TEST(Censoring, FractionRangeChecked) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(apply_censoring(Vector::Ones(3), 1.0, rng), InputError);
  EXPECT_THROW(apply_censoring(Vector::Ones(3), -0.1, rng), InputError);
}

TEST(Simulate, BitReproducibleFromSeed) {
  const auto a = simulate(experiments::fig2_preset(4)), b = simulate(experiments::fig2_preset(4));
  EXPECT_EQ(a.Ys[0], b.Ys[0]);
  EXPECT_EQ(a.event_times, b.event_times);
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].time, b.records[i].time);
  const auto c = simulate(experiments::fig2_preset(5));
  EXPECT_NE(a.Ys[0], c.Ys[0]);
}

TEST(Simulate, Presets) {
  const auto f2 = simulate(experiments::fig2_preset(1));
  EXPECT_EQ(f2.Ys[0].rows(), 96);
  EXPECT_EQ(f2.Ys[0].cols(), 10);
  EXPECT_DOUBLE_EQ(f2.config.sources[0].kernel.noise_var, 0.1);
  const auto f3 = simulate(experiments::fig3_preset(1));
  EXPECT_EQ(f3.X_true.cols(), 1);
  EXPECT_EQ(f3.Ys[0].cols(), 2);
  EXPECT_EQ(f3.config.sources[0].kernel.family, KernelFamily::SquaredExponential);
  EXPECT_DOUBLE_EQ(f3.config.sources[0].kernel.noise_var, 0.001);
  EXPECT_TRUE(f3.component.empty());
  int censored = 0;
  for (const auto& r : f2.records) censored += r.event ? 0 : 1;
  EXPECT_EQ(censored, 10);  // round(0.1 * 96)
}

TEST(Simulate, ConfigValidation) {
  SimulationConfig c;
  c.b = Vector::Zero(3);
  EXPECT_THROW(simulate(c), InputError);
  c = {};
  c.sources[0].kernel.noise_var = 0.0;
  EXPECT_THROW(simulate(c), InputError);
}
