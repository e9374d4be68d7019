#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gpwphm/common.hpp"

namespace gpwphm {

enum class KernelFamily { Linear, Polynomial2, SquaredExponential };

inline std::string to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::Linear: return "linear";
    case KernelFamily::Polynomial2: return "poly2";
    case KernelFamily::SquaredExponential: return "se";
  }
  return "?";
}

inline KernelFamily kernel_family_from_string(const std::string& s) {
  if (s == "linear") return KernelFamily::Linear;
  if (s == "poly2" || s == "polynomial") return KernelFamily::Polynomial2;
  if (s == "se" || s == "squared_exponential") return KernelFamily::SquaredExponential;
  throw InputError("unknown kernel family '" + s + "' (expected linear, poly2 or se)");
}

/// Kernel family plus hyperparameters for one observed source.
///
/// `lengthscale` multiplies the squared latent distance, i.e.
/// k(a, b) = sigma * exp(-lengthscale * |a - b|^2 / 2). It is ignored by the
/// linear and polynomial families, whose `sigma` stays at 1 during fitting.
struct KernelSpec {
  KernelFamily family = KernelFamily::Linear;
  double sigma = 1.0;
  double lengthscale = 1.0;
  double noise_var = 0.1;

  bool nonlinear() const { return family != KernelFamily::Linear; }

  void validate() const {
    require(std::isfinite(sigma) && sigma > 0.0, "kernel sigma must be > 0");
    // Zero noise is accepted for direct kernel evaluation; fitting keeps it > 0.
    require(std::isfinite(noise_var) && noise_var >= 0.0, "kernel noise variance must be >= 0");
    if (family == KernelFamily::SquaredExponential)
      require(std::isfinite(lengthscale) && lengthscale > 0.0, "kernel lengthscale must be > 0");
  }
};

// Kernel functors. Each provides k(a, b), the gradient with respect to the
// second argument, the two second-derivative blocks needed by the latent
// Hessian, and the Hessian of the diagonal k(x, x).

struct LinearKernel {
  double sigma = 1.0;

  double operator()(const Vector& a, const Vector& b) const { return sigma * a.dot(b); }
  Vector grad2(const Vector& a, const Vector& /*b*/) const { return sigma * a; }
  Matrix hess22(const Vector& a, const Vector& /*b*/) const {
    return Matrix::Zero(a.size(), a.size());
  }
  /// (mu, nu) entry is d^2 k / d a_mu d b_nu.
  Matrix hess12(const Vector& a, const Vector& /*b*/) const {
    return sigma * Matrix::Identity(a.size(), a.size());
  }
  Matrix self_hess(const Vector& x) const {
    return 2.0 * sigma * Matrix::Identity(x.size(), x.size());
  }

  Matrix gram(const Matrix& A, const Matrix& B) const { return sigma * A * B.transpose(); }
  /// Row r is sum_i G(i, r) * grad2(x_i, x_r).
  Matrix weighted_grad(const Matrix& X, const Matrix& G) const { return sigma * G.transpose() * X; }
};

/// sigma * (1 + a.b)^Degree. Only Degree == 2 is reachable from KernelSpec.
template <int Degree>
struct PolynomialKernel {
  static_assert(Degree >= 1);
  double sigma = 1.0;

  double operator()(const Vector& a, const Vector& b) const {
    return sigma * std::pow(1.0 + a.dot(b), Degree);
  }
  Vector grad2(const Vector& a, const Vector& b) const {
    return sigma * Degree * std::pow(1.0 + a.dot(b), Degree - 1) * a;
  }
  Matrix hess22(const Vector& a, const Vector& b) const {
    if constexpr (Degree == 1) {
      return Matrix::Zero(a.size(), a.size());
    } else {
      return sigma * Degree * (Degree - 1) * std::pow(1.0 + a.dot(b), Degree - 2) * (a * a.transpose());
    }
  }
  Matrix hess12(const Vector& a, const Vector& b) const {
    const double s1 = 1.0 + a.dot(b);
    Matrix h = sigma * Degree * std::pow(s1, Degree - 1) * Matrix::Identity(a.size(), a.size());
    if constexpr (Degree > 1) h += sigma * Degree * (Degree - 1) * std::pow(s1, Degree - 2) * (b * a.transpose());
    return h;
  }
  Matrix self_hess(const Vector& x) const {
    const double s1 = 1.0 + x.squaredNorm();
    Matrix h = 2.0 * sigma * Degree * std::pow(s1, Degree - 1) * Matrix::Identity(x.size(), x.size());
    if constexpr (Degree > 1)
      h += 4.0 * sigma * Degree * (Degree - 1) * std::pow(s1, Degree - 2) * (x * x.transpose());
    return h;
  }

  Matrix gram(const Matrix& A, const Matrix& B) const {
    return sigma * (1.0 + (A * B.transpose()).array()).pow(Degree).matrix();
  }
  Matrix weighted_grad(const Matrix& X, const Matrix& G) const {
    const Matrix D = (sigma * Degree) * (1.0 + (X * X.transpose()).array()).pow(Degree - 1).matrix();
    return G.cwiseProduct(D).transpose() * X;
  }
};

struct SquaredExponentialKernel {
  double sigma = 1.0;
  double lengthscale = 1.0;

  double operator()(const Vector& a, const Vector& b) const {
    return sigma * std::exp(-0.5 * lengthscale * (a - b).squaredNorm());
  }
  Vector grad2(const Vector& a, const Vector& b) const {
    return lengthscale * (*this)(a, b) * (a - b);
  }
  Matrix hess22(const Vector& a, const Vector& b) const {
    const Vector d = a - b;
    const Eigen::Index q = a.size();
    return lengthscale * (*this)(a, b) *
           (lengthscale * d * d.transpose() - Matrix::Identity(q, q));
  }
  Matrix hess12(const Vector& a, const Vector& b) const { return -hess22(a, b); }
  Matrix self_hess(const Vector& x) const { return Matrix::Zero(x.size(), x.size()); }

  Matrix gram(const Matrix& A, const Matrix& B) const {
    Matrix C(A.rows(), B.rows());
    for (Eigen::Index j = 0; j < B.rows(); ++j)
      for (Eigen::Index i = 0; i < A.rows(); ++i) {
        double d2 = 0.0;
        for (Eigen::Index m = 0; m < A.cols(); ++m) {
          const double diff = A(i, m) - B(j, m);
          d2 += diff * diff;
        }
        C(i, j) = sigma * std::exp(-0.5 * lengthscale * d2);
      }
    return C;
  }
  Matrix weighted_grad(const Matrix& X, const Matrix& G) const {
    const Matrix W = G.cwiseProduct(gram(X, X));
    const Vector colsum = W.colwise().sum().transpose();
    return lengthscale * (W.transpose() * X - colsum.asDiagonal() * X);
  }
};

/// Calls f with the concrete kernel functor described by spec.
template <class F>
decltype(auto) visit_kernel(const KernelSpec& spec, F&& f) {
  switch (spec.family) {
    case KernelFamily::Linear: return f(LinearKernel{spec.sigma});
    case KernelFamily::Polynomial2: return f(PolynomialKernel<2>{spec.sigma});
    case KernelFamily::SquaredExponential:
      return f(SquaredExponentialKernel{spec.sigma, spec.lengthscale});
  }
  throw InputError("invalid kernel family");
}

/// Noise-free cross covariance between the rows of A and the rows of B.
template <class Kernel>
Matrix cross_covariance(const Kernel& k, const Matrix& A, const Matrix& B) {
  Matrix C(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const Vector a = A.row(i).transpose();
    for (Eigen::Index j = 0; j < B.rows(); ++j) C(i, j) = k(a, B.row(j).transpose());
  }
  return C;
}

inline Matrix cross_covariance(const KernelSpec& spec, const Matrix& A, const Matrix& B) {
  return visit_kernel(spec, [&](const auto& k) { return k.gram(A, B); });
}

/// K = k(X, X) + noise_var * I with its Cholesky factor and log-determinant.
struct KernelMatrix {
  Matrix K;
  Eigen::LLT<Matrix> chol;
  double logdet = 0.0;
  double jitter = 0.0;

  Eigen::Index size() const { return K.rows(); }
  Matrix solve(const Matrix& B) const { return chol.solve(B); }
  Matrix inverse() const { return chol.solve(Matrix::Identity(K.rows(), K.cols())); }
};

namespace detail {

inline bool try_factor(KernelMatrix& km) {
  km.chol.compute(km.K);
  if (km.chol.info() != Eigen::Success) return false;
  const auto& L = km.chol.matrixLLT();
  double ld = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    if (!(L(i, i) > 0.0)) return false;
    ld += std::log(L(i, i));
  }
  km.logdet = 2.0 * ld;
  return std::isfinite(km.logdet);
}

}  // namespace detail

/// Factorizes an already assembled symmetric matrix. Adds 1e-10 * mean(diag)
/// jitter once on failure; a second failure throws with the smallest pivot.
inline KernelMatrix factorize_covariance(Matrix K) {
  KernelMatrix km;
  km.K = std::move(K);
  if (detail::try_factor(km)) return km;
  const double jitter = 1e-10 * km.K.diagonal().mean();
  km.K.diagonal().array() += jitter;
  km.jitter = jitter;
  if (detail::try_factor(km)) return km;
  Eigen::LDLT<Matrix> ldlt(km.K);
  std::ostringstream os;
  os << "kernel matrix factorization failed (N=" << km.K.rows()
     << ", smallest pivot " << ldlt.vectorD().minCoeff() << ")";
  throw NumericalError(os.str());
}

inline KernelMatrix kernel_matrix(const Matrix& X, const KernelSpec& spec) {
  require(X.rows() >= 1 && X.cols() >= 1, "kernel_matrix: latent matrix must be at least 1x1");
  require(X.allFinite(), "kernel_matrix: non-finite latent values");
  spec.validate();
  Matrix K = cross_covariance(spec, X, X);
  K = 0.5 * (K + K.transpose());
  K.diagonal().array() += spec.noise_var;
  return factorize_covariance(std::move(K));
}

// ---------------------------------------------------------------------------
// GPLVM term: sum over sources of the negative log-likelihood divided by N,
//   (1/2N) sum_mu y_mu' K^-1 y_mu + (d/2N) log|K| + (d/2) log 2pi.
// ---------------------------------------------------------------------------

/// Per-source quantities shared by the value, gradient and Hessian.
struct GplvmSourceState {
  KernelMatrix km;
  Matrix alpha;  // K^-1 Y
  double nll = 0.0;
};

inline void check_sources(const std::vector<Matrix>& Ys, const Matrix& X,
                          const std::vector<KernelSpec>& specs) {
  require(!Ys.empty(), "at least one observed source is required");
  require(Ys.size() == specs.size(), "one kernel spec per source is required");
  for (std::size_t s = 0; s < Ys.size(); ++s) {
    require(Ys[s].rows() == X.rows(), "source " + std::to_string(s + 1) + " has " +
                                          std::to_string(Ys[s].rows()) + " rows, expected " +
                                          std::to_string(X.rows()));
    require(Ys[s].cols() >= 1, "source " + std::to_string(s + 1) + " has no columns");
  }
}

/// True when q < min_s d_s, the regime in which the model is identifiable.
inline bool latent_dim_ok(const std::vector<Matrix>& Ys, Eigen::Index q) {
  for (const auto& Y : Ys)
    if (q >= Y.cols()) return false;
  return true;
}

inline GplvmSourceState gplvm_source_state(const Matrix& Y, const Matrix& X, const KernelSpec& spec) {
  GplvmSourceState st{kernel_matrix(X, spec), {}, 0.0};
  const double N = static_cast<double>(X.rows());
  const double d = static_cast<double>(Y.cols());
  st.alpha = st.km.solve(Y);
  const double quad = (Y.array() * st.alpha.array()).sum();
  st.nll = quad / (2.0 * N) + d / (2.0 * N) * st.km.logdet + 0.5 * d * kLog2Pi;
  return st;
}

/// dL/dK for one source: -(1/2N) K^-1 Y Y' K^-1 + (d/2N) K^-1.
inline Matrix gplvm_dl_dk(const GplvmSourceState& st, double N, double d) {
  Matrix G = st.km.inverse() * (d / (2.0 * N));
  G.noalias() -= (st.alpha * st.alpha.transpose()) / (2.0 * N);
  return G;
}

/// Latent gradient of one source via the row trick: only K_ir depends on x_r,
/// so dL/dx_r = 2 sum_i G_ir dk(x_i, x_r)/dx_r. Pairwise reference version;
/// the fitting path uses the kernels' vectorized weighted_grad.
template <class Kernel>
Matrix gplvm_grad_from_dk(const Kernel& k, const Matrix& X, const Matrix& G) {
  const Eigen::Index N = X.rows(), q = X.cols();
  Matrix grad = Matrix::Zero(N, q);
  for (Eigen::Index r = 0; r < N; ++r) {
    const Vector xr = X.row(r).transpose();
    Vector g = Vector::Zero(q);
    for (Eigen::Index i = 0; i < N; ++i) g += G(i, r) * k.grad2(X.row(i).transpose(), xr);
    grad.row(r) = 2.0 * g.transpose();
  }
  return grad;
}

inline void apply_mask(Matrix& grad, const BoolMatrix* pinned) {
  if (!pinned) return;
  for (Eigen::Index i = 0; i < grad.rows(); ++i)
    for (Eigen::Index j = 0; j < grad.cols(); ++j)
      if ((*pinned)(i, j)) grad(i, j) = 0.0;
}

inline double gplvm_nll(const std::vector<Matrix>& Ys, const Matrix& X,
                        const std::vector<KernelSpec>& specs) {
  check_sources(Ys, X, specs);
  double total = 0.0;
  for (std::size_t s = 0; s < Ys.size(); ++s) total += gplvm_source_state(Ys[s], X, specs[s]).nll;
  return total;
}

/// Value and latent gradient with one factorization per source.
inline double gplvm_value_grad(const std::vector<Matrix>& Ys, const Matrix& X,
                               const std::vector<KernelSpec>& specs, Matrix& grad,
                               const BoolMatrix* pinned = nullptr) {
  check_sources(Ys, X, specs);
  const double N = static_cast<double>(X.rows());
  grad = Matrix::Zero(X.rows(), X.cols());
  double total = 0.0;
  for (std::size_t s = 0; s < Ys.size(); ++s) {
    const auto st = gplvm_source_state(Ys[s], X, specs[s]);
    total += st.nll;
    const Matrix G = gplvm_dl_dk(st, N, static_cast<double>(Ys[s].cols()));
    grad += visit_kernel(specs[s], [&](const auto& k) { return Matrix(2.0 * k.weighted_grad(X, G)); });
  }
  apply_mask(grad, pinned);
  return total;
}

inline Matrix gplvm_grad_x(const std::vector<Matrix>& Ys, const Matrix& X,
                           const std::vector<KernelSpec>& specs, const BoolMatrix* pinned = nullptr) {
  Matrix g;
  gplvm_value_grad(Ys, X, specs, g, pinned);
  return g;
}

/// Free latent coordinates in row-major order (a = r*q + mu), skipping pins.
inline std::vector<Eigen::Index> free_latent_indices(Eigen::Index N, Eigen::Index q,
                                                     const BoolMatrix* pinned) {
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(N * q));
  for (Eigen::Index r = 0; r < N; ++r)
    for (Eigen::Index m = 0; m < q; ++m)
      if (!pinned || !(*pinned)(r, m)) idx.push_back(r * q + m);
  return idx;
}

/// Exact Hessian of one source's term over all Nq latent coordinates.
///
/// With dK_a = e_r u_a' + u_a e_r' for a = (r, mu), where u_a[i] = dk(x_i, x_r)/dx_r,mu,
///   H_ab = tr(G d2K_ab) + (1/N) tr(P dK_a K^-1 dK_b) - (d/2N) tr(K^-1 dK_a K^-1 dK_b)
/// with P = K^-1 Y Y' K^-1. Only the upper triangle is evaluated.
template <class Kernel>
Matrix gplvm_source_hessian(const Kernel& k, const Matrix& X, const GplvmSourceState& st, double d) {
  const Eigen::Index N = X.rows(), q = X.cols(), n = N * q;
  const double Nd = static_cast<double>(N);
  const Matrix Ki = st.km.inverse();
  const Matrix P = st.alpha * st.alpha.transpose();
  Matrix G = Ki * (d / (2.0 * Nd));
  G.noalias() -= P / (2.0 * Nd);

  Matrix U(N, n);
  for (Eigen::Index r = 0; r < N; ++r) {
    const Vector xr = X.row(r).transpose();
    for (Eigen::Index i = 0; i < N; ++i) {
      const Vector g = k.grad2(X.row(i).transpose(), xr);
      for (Eigen::Index m = 0; m < q; ++m) U(i, r * q + m) = g(m);
    }
  }
  const Matrix KiU = Ki * U;
  const Matrix PU = P * U;
  const Matrix MK = U.transpose() * KiU;
  const Matrix MP = U.transpose() * PU;

  // Second-derivative-of-K contributions, grouped by row pair (r, p).
  Matrix H = Matrix::Zero(n, n);
  for (Eigen::Index r = 0; r < N; ++r) {
    const Vector xr = X.row(r).transpose();
    Matrix diag_block = G(r, r) * k.self_hess(xr);
    for (Eigen::Index i = 0; i < N; ++i)
      if (i != r) diag_block += 2.0 * G(i, r) * k.hess22(X.row(i).transpose(), xr);
    H.block(r * q, r * q, q, q) += diag_block;
    for (Eigen::Index p = r + 1; p < N; ++p)
      H.block(r * q, p * q, q, q) += 2.0 * G(r, p) * k.hess12(xr, X.row(p).transpose());
  }

  for (Eigen::Index a = 0; a < n; ++a) {
    const Eigen::Index r = a / q;
    for (Eigen::Index b = a; b < n; ++b) {
      const Eigen::Index p = b / q;
      const double t1 = KiU(p, a) * PU(r, b) + MK(a, b) * P(p, r) + Ki(r, p) * MP(a, b) +
                        KiU(r, b) * PU(p, a);
      const double t2 = 2.0 * (KiU(p, a) * KiU(r, b) + MK(a, b) * Ki(r, p));
      H(a, b) += t1 / Nd - d / (2.0 * Nd) * t2;
    }
  }
  H.triangularView<Eigen::StrictlyLower>() = H.transpose();
  return H;
}

/// Exact latent Hessian summed over sources, restricted to free coordinates.
inline Matrix gplvm_hessian_xx(const std::vector<Matrix>& Ys, const Matrix& X,
                               const std::vector<KernelSpec>& specs, const BoolMatrix* pinned = nullptr) {
  check_sources(Ys, X, specs);
  const Eigen::Index n = X.rows() * X.cols();
  Matrix H = Matrix::Zero(n, n);
  for (std::size_t s = 0; s < Ys.size(); ++s) {
    const auto st = gplvm_source_state(Ys[s], X, specs[s]);
    const double d = static_cast<double>(Ys[s].cols());
    H += visit_kernel(specs[s], [&](const auto& k) { return gplvm_source_hessian(k, X, st, d); });
  }
  if (!pinned) return H;
  const auto idx = free_latent_indices(X.rows(), X.cols(), pinned);
  return H(idx, idx);
}

}  // namespace gpwphm
