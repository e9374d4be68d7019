#pragma once

// Random instances and small numerical helpers shared by the test suites.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "gpwphm/model.hpp"

namespace gpwphm::testing {

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

inline Vector random_vector(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0) {
  return random_matrix(n, 1, rng, sd).col(0);
}

/// Haar-ish orthogonal matrix from a QR of a Gaussian matrix.
inline Matrix random_orthogonal(Eigen::Index q, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(q, q, rng));
  Matrix Q = qr.householderQ();
  const Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q; ++j)
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  return Q;
}

/// Event times in (0.5, 3), about `censor` of them censored; ties when `ties`.
inline std::vector<SurvivalRecord> random_records(std::size_t n, std::mt19937_64& rng, double censor = 0.2,
                                                  bool ties = false) {
  std::uniform_real_distribution<double> u(0.5, 3.0), c(0.0, 1.0);
  std::uniform_int_distribution<int> k(1, 6);
  std::vector<SurvivalRecord> r(n);
  for (auto& rec : r) {
    rec.time = ties ? 0.5 * k(rng) : u(rng);
    rec.event = c(rng) >= censor;
  }
  return r;
}

inline KernelSpec spec_of(KernelFamily f, double noise = 0.3, double sigma = 1.0, double l = 1.0) {
  KernelSpec s;
  s.family = f;
  s.noise_var = noise;
  s.sigma = sigma;
  s.lengthscale = l;
  return s;
}

inline const std::vector<KernelFamily>& all_families() {
  static const std::vector<KernelFamily> f{KernelFamily::Linear, KernelFamily::Polynomial2,
                                           KernelFamily::SquaredExponential};
  return f;
}

/// Largest principal angle between the column spaces of A and B.
inline double max_principal_angle(const Matrix& A, const Matrix& B) {
  const Matrix Qa = Eigen::HouseholderQR<Matrix>(A).householderQ() * Matrix::Identity(A.rows(), A.cols());
  const Matrix Qb = Eigen::HouseholderQR<Matrix>(B).householderQ() * Matrix::Identity(B.rows(), B.cols());
  Eigen::JacobiSVD<Matrix> svd(Qa.transpose() * Qb);
  const double smin = std::min(1.0, svd.singularValues().minCoeff());
  return std::acos(smin);
}

/// Top-q principal directions of the centred-free sample matrix Y (as used by
/// the GPLVM, which has no mean term): leading left singular vectors.
inline Matrix top_pca_scores(const Matrix& Y, Eigen::Index q) {
  Eigen::JacobiSVD<Matrix> svd(Y, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(q);
}

}  // namespace gpwphm::testing
