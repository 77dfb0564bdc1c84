#pragma once

// Constant-coefficient dissipative symmetric hyperbolic systems
//
//     A0 w_t + sum_j A^j w_{x_j} + L w = 0,   sum_j Q^j w_{x_j} + R w = 0,
//
// their Fourier symbols, Green matrices, constraint subspaces and spectra,
// plus the built-in Euler-Maxwell instance linearised at (n_inf, 0, 0, B_inf).

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "emdecay/linalg.hpp"

namespace emdecay {

struct ConstraintPair {
  std::vector<MatR> Q;  // n matrices, m1 x m
  MatR R;               // m1 x m
};

class HyperbolicSystem {
 public:
  HyperbolicSystem(MatR a0, std::vector<MatR> a, MatR l,
                   std::optional<ConstraintPair> constraints = std::nullopt)
      : A0_(std::move(a0)), A_(std::move(a)), L_(std::move(l)),
        constraints_(std::move(constraints)) {
    const auto m = A0_.rows();
    if (m == 0 || A0_.cols() != m) throw std::invalid_argument("A0 must be square and nonempty");
    if (A_.empty()) throw std::invalid_argument("at least one flux matrix is required");
    for (const auto& aj : A_)
      if (aj.rows() != m || aj.cols() != m) throw std::invalid_argument("flux matrix has wrong shape");
    if (L_.rows() != m || L_.cols() != m) throw std::invalid_argument("L has wrong shape");
    if (constraints_) {
      const auto m1 = constraints_->R.rows();
      if (constraints_->R.cols() != m) throw std::invalid_argument("R has wrong column count");
      if (m1 >= m) throw std::invalid_argument("constraint count m1 must be < m");
      if (constraints_->Q.size() != A_.size())
        throw std::invalid_argument("need one constraint matrix Q^j per space dimension");
      for (const auto& q : constraints_->Q)
        if (q.rows() != m1 || q.cols() != m) throw std::invalid_argument("Q^j has wrong shape");
    }
    A0_inv_ = A0_.inverse();
  }

  int m() const { return static_cast<int>(A0_.rows()); }
  int n() const { return static_cast<int>(A_.size()); }
  const MatR& A0() const { return A0_; }
  const MatR& A0_inverse() const { return A0_inv_; }
  const MatR& A(int j) const { return A_.at(static_cast<std::size_t>(j)); }
  const std::vector<MatR>& fluxes() const { return A_; }
  const MatR& L() const { return L_; }
  bool has_constraints() const { return constraints_.has_value(); }
  const std::optional<ConstraintPair>& constraints() const { return constraints_; }

  /// sum_j A^j xi_j
  MatR flux_symbol(const VecR& xi) const {
    check_dim(xi);
    MatR s = MatR::Zero(m(), m());
    for (int j = 0; j < n(); ++j) s += A_[static_cast<std::size_t>(j)] * xi(j);
    return s;
  }

  void check_dim(const VecR& xi) const {
    if (xi.size() != n()) throw std::invalid_argument("frequency has wrong dimension");
  }

 private:
  MatR A0_;
  std::vector<MatR> A_;
  MatR L_;
  std::optional<ConstraintPair> constraints_;
  MatR A0_inv_;
};

struct EulerMaxwellParams {
  double n_inf = 1.0;
  Vec3 B_inf = Vec3::Zero();
  double pressure_gamma = 2.0;
  double pressure_K = 0.5;

  void validate() const {
    if (!(n_inf > 0.0)) throw std::invalid_argument("n_inf must be positive");
    if (!(pressure_K > 0.0)) throw std::invalid_argument("pressure constant K must be positive");
    if (!(pressure_gamma > 0.0)) throw std::invalid_argument("adiabatic exponent must be positive");
  }
  double pressure(double n) const { return pressure_K * std::pow(n, pressure_gamma); }
  double dpressure(double n) const {
    return pressure_K * pressure_gamma * std::pow(n, pressure_gamma - 1.0);
  }
  /// Enthalpy coefficient a = p'(n)/n at equilibrium.
  double a_inf() const { return dpressure(n_inf) / n_inf; }
};

// State layout of the Euler-Maxwell perturbation (rho, v, E, h).
namespace em_index {
inline constexpr int RHO = 0;
inline constexpr int V = 1;
inline constexpr int E = 4;
inline constexpr int H = 7;
inline constexpr int SIZE = 10;
}  // namespace em_index

inline HyperbolicSystem build_euler_maxwell(const EulerMaxwellParams& p) {
  using namespace em_index;
  p.validate();
  const double a = p.a_inf();
  const double n = p.n_inf;
  const double dp = p.dpressure(n);
  const Eigen::Matrix3d id = Eigen::Matrix3d::Identity();

  MatR a0 = MatR::Zero(SIZE, SIZE);
  a0(RHO, RHO) = a;
  a0.block<3, 3>(V, V) = n * id;
  a0.block<3, 3>(E, E) = id;
  a0.block<3, 3>(H, H) = id;

  MatR l = MatR::Zero(SIZE, SIZE);
  l.block<3, 3>(V, V) = n * (id - cross_matrix(p.B_inf));
  l.block<3, 3>(V, E) = n * id;
  l.block<3, 3>(E, V) = -n * id;

  std::vector<MatR> flux(3, MatR::Zero(SIZE, SIZE));
  for (int j = 0; j < 3; ++j) {
    const Vec3 ej = Vec3::Unit(j);
    auto& aj = flux[static_cast<std::size_t>(j)];
    // a (u . xi) and n (u . xi) I vanish at u = 0.
    aj.block<1, 3>(RHO, V) = dp * ej.transpose();
    aj.block<3, 1>(V, RHO) = dp * ej;
    aj.block<3, 3>(E, H) = -cross_matrix(ej);
    aj.block<3, 3>(H, E) = cross_matrix(ej);
  }

  // div E + rho = 0 and div h = 0.
  ConstraintPair c;
  c.R = MatR::Zero(2, SIZE);
  c.R(0, RHO) = 1.0;
  for (int j = 0; j < 3; ++j) {
    MatR q = MatR::Zero(2, SIZE);
    q(0, E + j) = 1.0;
    q(1, H + j) = 1.0;
    c.Q.push_back(q);
  }
  return HyperbolicSystem(a0, flux, l, c);
}

struct SymbolEvaluation {
  VecR xi;
  MatC phi_hat;
  std::optional<VecR> omega;  // empty at xi = 0
};

/// Phi(xi) = A0^{-1} (i |xi| A(omega) + L) = A0^{-1} (i sum_j A^j xi_j + L).
inline SymbolEvaluation symbol(const HyperbolicSystem& sys, const VecR& xi) {
  sys.check_dim(xi);
  SymbolEvaluation out;
  out.xi = xi;
  const double r = xi.norm();
  if (r > 0.0) out.omega = xi / r;
  MatC gen = sys.L().cast<cplx>() + I_UNIT * sys.flux_symbol(xi).cast<cplx>();
  out.phi_hat = sys.A0_inverse().cast<cplx>() * gen;
  return out;
}

/// Green matrix exp(-t Phi(xi)).
inline MatC green_matrix(const HyperbolicSystem& sys, const VecR& xi, double t) {
  if (t < 0.0) throw std::invalid_argument("green_matrix requires t >= 0");
  return expm_neg(symbol(sys, xi).phi_hat, t);
}

/// Factorised Green matrix for repeated evaluation at one frequency.
class GreenFactor {
 public:
  GreenFactor(const HyperbolicSystem& sys, const VecR& xi) : factor_(symbol(sys, xi).phi_hat) {}
  MatC at(double t) const {
    if (t < 0.0) throw std::invalid_argument("green matrix requires t >= 0");
    return factor_.propagator(t);
  }
  const ExpFactor& factor() const { return factor_; }

 private:
  ExpFactor factor_;
};

struct ConstraintSubspace {
  VecR xi;
  MatC C;          // k x m
  MatC basis;      // m x (m - rank C), orthonormal columns
  MatC projector;  // m x m
};

/// C(xi) = i sum_j Q^j xi_j + R.
inline MatC constraint_symbol(const HyperbolicSystem& sys, const VecR& xi) {
  sys.check_dim(xi);
  if (!sys.has_constraints()) throw std::invalid_argument("system has no constraints");
  const auto& c = *sys.constraints();
  MatC out = c.R.cast<cplx>();
  for (int j = 0; j < sys.n(); ++j)
    out += I_UNIT * xi(j) * c.Q[static_cast<std::size_t>(j)].cast<cplx>();
  return out;
}

inline ConstraintSubspace constraint_subspace(const HyperbolicSystem& sys, const VecR& xi) {
  ConstraintSubspace out;
  out.xi = xi;
  out.C = constraint_symbol(sys, xi);
  out.basis = null_space(out.C);
  out.projector = out.basis * out.basis.adjoint();
  return out;
}

class InvarianceError : public std::runtime_error {
 public:
  InvarianceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

struct RestrictedSpectrum {
  std::vector<cplx> eigenvalues;  // sorted by (Re, Im)
  double abscissa = 0.0;          // min Re lambda
  double invariance_residual = 0.0;
};

/// Spectrum of Phi(xi), restricted to the constraint subspace when the
/// system carries constraints. Throws InvarianceError when the subspace is
/// not Phi-invariant to within `invariance_tol` (relative to |Phi|).
inline RestrictedSpectrum restricted_spectrum(const HyperbolicSystem& sys, const VecR& xi,
                                              double invariance_tol = 1e-10) {
  const MatC phi = symbol(sys, xi).phi_hat;
  MatC op = phi;
  RestrictedSpectrum out;
  if (sys.has_constraints()) {
    const auto sub = constraint_subspace(sys, xi);
    const MatC image = phi * sub.basis;
    const MatC leak = image - sub.projector * image;
    const double scale = std::max(1.0, phi.norm());
    out.invariance_residual = leak.norm() / scale;
    if (out.invariance_residual > invariance_tol)
      throw InvarianceError("constraint subspace is not invariant under the symbol",
                            out.invariance_residual);
    op = sub.basis.adjoint() * image;
  }
  Eigen::ComplexEigenSolver<MatC> es(op, false);
  out.eigenvalues = sorted_eigenvalues(es.eigenvalues());
  out.abscissa = std::numeric_limits<double>::infinity();
  for (const auto& l : out.eigenvalues) out.abscissa = std::min(out.abscissa, l.real());
  return out;
}

struct StructureReport {
  bool A0_spd = false;
  bool Aj_symmetric = false;
  bool L_nonneg = false;
  bool L_kernel_nontrivial = false;
  bool L_symmetric = false;
};

inline StructureReport check_structure(const HyperbolicSystem& sys, double tol = 1e-12) {
  StructureReport r;
  auto sym_ok = [tol](const MatR& a) {
    return (a - a.transpose()).norm() <= tol * std::max(1.0, a.norm());
  };
  {
    Eigen::SelfAdjointEigenSolver<MatR> es(0.5 * (sys.A0() + sys.A0().transpose()));
    r.A0_spd = sym_ok(sys.A0()) && es.eigenvalues().minCoeff() > 0.0;
  }
  r.Aj_symmetric = true;
  for (const auto& a : sys.fluxes()) r.Aj_symmetric = r.Aj_symmetric && sym_ok(a);
  const MatR l1 = 0.5 * (sys.L() + sys.L().transpose());
  Eigen::SelfAdjointEigenSolver<MatR> es(l1);
  r.L_nonneg = es.eigenvalues().minCoeff() >= -tol * std::max(1.0, sys.L().norm());
  r.L_kernel_nontrivial = numerical_rank(sys.L().cast<cplx>()) < sys.m();
  r.L_symmetric = sym_ok(sys.L());
  return r;
}

/// Largest characteristic speed: max |eigenvalue| of A0^{-1} A(omega) over
/// the given directions.
inline double max_characteristic_speed(const HyperbolicSystem& sys,
                                       const std::vector<VecR>& directions) {
  double c = 0.0;
  for (const auto& w : directions) {
    Eigen::GeneralizedSelfAdjointEigenSolver<MatR> es(sys.flux_symbol(w), sys.A0(),
                                                      Eigen::EigenvaluesOnly);
    c = std::max(c, es.eigenvalues().cwiseAbs().maxCoeff());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Frequency grids: log-spaced radii times a deterministic direction set.

struct XiGrid {
  std::vector<double> radii;
  std::vector<VecR> directions;

  std::size_t size() const { return radii.size() * directions.size(); }
  VecR point(std::size_t radius_index, std::size_t direction_index) const {
    return radii[radius_index] * directions[direction_index];
  }
};

inline std::vector<double> log_space(double lo, double hi, std::size_t count) {
  std::vector<double> out(count);
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  const double a = std::log10(lo), b = std::log10(hi);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  return out;
}

/// Axis directions (+/- e_j), the 2^n diagonals, then `random_count` unit
/// vectors drawn from the seeded generator.
inline std::vector<VecR> direction_set(int n, std::size_t random_count, std::uint64_t seed) {
  std::vector<VecR> dirs;
  for (int j = 0; j < n; ++j) {
    for (double s : {1.0, -1.0}) {
      VecR e = VecR::Zero(n);
      e(j) = s;
      dirs.push_back(e);
    }
  }
  if (n > 1) {
    for (int mask = 0; mask < (1 << n); ++mask) {
      VecR d(n);
      for (int j = 0; j < n; ++j) d(j) = (mask >> j) & 1 ? -1.0 : 1.0;
      dirs.push_back(d.normalized());
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  for (std::size_t k = 0; k < random_count; ++k) {
    VecR d(n);
    for (int j = 0; j < n; ++j) d(j) = g(rng);
    dirs.push_back(d.normalized());
  }
  return dirs;
}

inline XiGrid make_xi_grid(int n, double r_min = 1e-3, double r_max = 1e3,
                           std::size_t radii = 200, std::size_t random_dirs = 4,
                           std::uint64_t seed = 0) {
  return XiGrid{log_space(r_min, r_max, radii), direction_set(n, random_dirs, seed)};
}

}  // namespace emdecay
