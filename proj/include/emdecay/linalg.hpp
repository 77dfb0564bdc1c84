#pragma once

// Dense linear algebra helpers shared by every module: the matrix
// exponential used for Green matrices, null spaces and column spaces,
// and eigenvalue ordering for multiset comparisons.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

namespace emdecay {

using cplx = std::complex<double>;
using MatR = Eigen::MatrixXd;
using MatC = Eigen::MatrixXcd;
using VecR = Eigen::VectorXd;
using VecC = Eigen::VectorXcd;
using Vec3 = Eigen::Vector3d;
using CVec3 = Eigen::Vector3cd;

inline constexpr cplx I_UNIT{0.0, 1.0};
inline constexpr double PI = 3.14159265358979323846;

/// Eigenvector condition number above which the matrix exponential falls
/// back from eigendecomposition to scaling-and-squaring.
inline constexpr double EXPM_COND_LIMIT = 1e8;

/// Skew matrix with Omega(a) * v == a x v.
inline Eigen::Matrix3d cross_matrix(const Vec3& a) {
  Eigen::Matrix3d m;
  m << 0.0, -a(2), a(1),
       a(2), 0.0, -a(0),
       -a(1), a(0), 0.0;
  return m;
}

inline double condition_number(const MatC& m) {
  Eigen::JacobiSVD<MatC> svd(m);
  const auto& s = svd.singularValues();
  if (s(s.size() - 1) == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / s(s.size() - 1);
}

/// Reusable spectral factorisation of a generator X so that exp(-t X)
/// can be evaluated cheaply for many t.
class ExpFactor {
 public:
  explicit ExpFactor(const MatC& generator) : generator_(generator) {
    Eigen::ComplexEigenSolver<MatC> es(generator_);
    if (es.info() == Eigen::Success) {
      vectors_ = es.eigenvectors();
      values_ = es.eigenvalues();
      cond_ = condition_number(vectors_);
      if (cond_ < EXPM_COND_LIMIT) {
        inverse_ = vectors_.partialPivLu().inverse();
        diagonal_ = true;
      }
    }
  }

  /// exp(-t X).
  MatC propagator(double t) const {
    if (t == 0.0) return MatC::Identity(generator_.rows(), generator_.cols());
    if (diagonal_) {
      VecC d = (-t * values_).array().exp();
      return vectors_ * d.asDiagonal() * inverse_;
    }
    // Scaling and squaring with a degree-13 Pade approximant.
    MatC scaled = -t * generator_;
    return scaled.exp();
  }

  bool diagonalized() const { return diagonal_; }
  double eigvec_condition() const { return cond_; }
  const VecC& eigenvalues() const { return values_; }

 private:
  MatC generator_;
  MatC vectors_;
  MatC inverse_;
  VecC values_;
  double cond_ = std::numeric_limits<double>::infinity();
  bool diagonal_ = false;
};

inline MatC expm_neg(const MatC& generator, double t) {
  return ExpFactor(generator).propagator(t);
}

/// Orthonormal basis of the null space of c (columns), via SVD with a
/// relative rank threshold.
inline MatC null_space(const MatC& c, double rel_tol = 1e-10) {
  const auto cols = c.cols();
  if (c.rows() == 0) return MatC::Identity(cols, cols);
  Eigen::JacobiSVD<MatC> svd(c, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (smax > 0.0 && s(i) > rel_tol * smax) ++rank;
  return svd.matrixV().rightCols(cols - rank);
}

/// Orthonormal basis of the column space of a real matrix.
inline MatR column_space(const MatR& a, double rel_tol = 1e-10) {
  if (a.size() == 0) return MatR(a.rows(), 0);
  Eigen::JacobiSVD<MatR> svd(a, Eigen::ComputeFullU);
  const auto& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (smax > 0.0 && s(i) > rel_tol * smax) ++rank;
  return svd.matrixU().leftCols(rank);
}

inline Eigen::Index numerical_rank(const MatC& c, double rel_tol = 1e-10) {
  return c.cols() - null_space(c, rel_tol).cols();
}

/// Quantise to a 1e-10 lattice then order lexicographically by (Re, Im).
inline std::vector<cplx> sorted_eigenvalues(const VecC& values, double quantum = 1e-10) {
  std::vector<cplx> out(values.data(), values.data() + values.size());
  auto key = [quantum](cplx z) {
    return std::pair{std::llround(z.real() / quantum), std::llround(z.imag() / quantum)};
  };
  std::sort(out.begin(), out.end(), [&](cplx a, cplx b) { return key(a) < key(b); });
  return out;
}

/// Inverse square root of a Hermitian positive definite matrix.
inline MatC hermitian_inv_sqrt(const MatC& h) {
  Eigen::SelfAdjointEigenSolver<MatC> es(h);
  VecR d = es.eigenvalues().array().rsqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().adjoint();
}

inline MatC hermitian_part(const MatC& m) { return 0.5 * (m + m.adjoint()); }

}  // namespace emdecay
