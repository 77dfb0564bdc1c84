#pragma once

// Frequency-wise energy method for the linearised Euler-Maxwell system:
// the functionals E0..E3, the Lyapunov combination, the dissipation D,
// RK4 trajectories, the (alpha1, alpha2, c1) search, pointwise Green
// estimates and the Duhamel-type bound for nonlinear runs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emdecay/decay.hpp"
#include "emdecay/fit.hpp"
#include "emdecay/parallel.hpp"
#include "emdecay/report.hpp"
#include "emdecay/system.hpp"

namespace emdecay {

struct FrequencyState {
  Vec3 xi = Vec3::Zero();
  cplx rho{0.0, 0.0};
  CVec3 v = CVec3::Zero();
  CVec3 E = CVec3::Zero();
  CVec3 h = CVec3::Zero();

  VecC to_vector() const {
    VecC z(em_index::SIZE);
    z(em_index::RHO) = rho;
    z.segment<3>(em_index::V) = v;
    z.segment<3>(em_index::E) = E;
    z.segment<3>(em_index::H) = h;
    return z;
  }
  static FrequencyState from_vector(const Vec3& xi, const VecC& z) {
    if (z.size() != em_index::SIZE) throw std::invalid_argument("state vector must have 10 entries");
    FrequencyState s;
    s.xi = xi;
    s.rho = z(em_index::RHO);
    s.v = z.segment<3>(em_index::V);
    s.E = z.segment<3>(em_index::E);
    s.h = z.segment<3>(em_index::H);
    return s;
  }
};

/// Residuals of i xi.E + rho = 0 and i xi.h = 0.
inline std::pair<double, double> constraint_residual(const FrequencyState& s) {
  const CVec3 ixi = I_UNIT * s.xi.cast<cplx>();
  return {std::abs(ixi.cwiseProduct(s.E).sum() + s.rho), std::abs(ixi.cwiseProduct(s.h).sum())};
}

inline bool is_constrained(const FrequencyState& s, double tol = 1e-10) {
  const auto [a, b] = constraint_residual(s);
  const double scale = std::max(1.0, s.to_vector().norm());
  return a <= tol * scale && b <= tol * scale;
}

struct Energies {
  double E0 = 0.0, E1 = 0.0, E2 = 0.0, E3 = 0.0;
};

/// Unconjugated a x b (Eigen's cross conjugates complex results).
inline CVec3 cross(const CVec3& a, const CVec3& b) {
  return CVec3(a(1) * b(2) - a(2) * b(1), a(2) * b(0) - a(0) * b(2), a(0) * b(1) - a(1) * b(0));
}

/// <a, b> = sum a_k conj(b_k).
inline cplx inner(const CVec3& a, const CVec3& b) { return (a.array() * b.array().conjugate()).sum(); }

inline Energies energies(const FrequencyState& s, double a_inf, double n_inf) {
  Energies e;
  e.E0 = a_inf * std::norm(s.rho) + n_inf * s.v.squaredNorm() + s.E.squaredNorm() + s.h.squaredNorm();
  e.E1 = inner(s.v, s.E).real();
  const double r = s.xi.norm();
  if (r > 0.0) {
    const CVec3 w = (s.xi / r).cast<cplx>();
    e.E2 = inner(I_UNIT * s.rho * w, s.v).real();
    e.E3 = inner(s.E, I_UNIT * cross(s.h, w)).real();
  }
  return e;
}

struct LyapunovParams {
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double c1 = 0.0;
  double a_inf = 1.0;
  double n_inf = 1.0;
};

/// E = E0 + alpha1/(1+|xi|^2) { E1 + a |xi| E2 + alpha2 |xi|/(1+|xi|^2) E3 }.
inline double lyapunov(const FrequencyState& s, const LyapunovParams& p) {
  const Energies e = energies(s, p.a_inf, p.n_inf);
  const double r = s.xi.norm(), w = 1.0 + r * r;
  return e.E0 + p.alpha1 / w * (e.E1 + p.a_inf * r * e.E2 + p.alpha2 * r / w * e.E3);
}

inline double dissipation(const FrequencyState& s) {
  const double r2 = s.xi.squaredNorm(), w = 1.0 + r2;
  return std::norm(s.rho) + s.v.squaredNorm() + s.E.squaredNorm() / w + r2 / (w * w) * s.h.squaredNorm();
}

/// Equilibrium coefficients read back from an assembled Euler-Maxwell system.
struct EmCoefficients {
  double a_inf = 1.0;
  double n_inf = 1.0;
  Vec3 B_inf = Vec3::Zero();

  static EmCoefficients from(const EulerMaxwellParams& p) { return {p.a_inf(), p.n_inf, p.B_inf}; }
  static EmCoefficients from(const HyperbolicSystem& sys) {
    if (sys.m() != em_index::SIZE || sys.n() != 3) throw std::invalid_argument("not an Euler-Maxwell system");
    using namespace em_index;
    EmCoefficients c;
    c.a_inf = sys.A0()(RHO, RHO);
    c.n_inf = sys.A0()(V, V);
    // L_vv = n (I - [B]x)
    const Eigen::Matrix3d skew = Eigen::Matrix3d::Identity() - sys.L().block<3, 3>(V, V) / c.n_inf;
    c.B_inf = Vec3(skew(2, 1), skew(0, 2), skew(1, 0));
    return c;
  }
};

/// Nonlinear sources at one frequency: the transformed flux q2_hat (3x3)
/// and source r2_hat, entering the velocity equation as
/// (i xi . q2_hat + r2_hat) / n_inf.
struct Forcing {
  Eigen::Matrix3cd q2 = Eigen::Matrix3cd::Zero();
  CVec3 r2 = CVec3::Zero();
};

inline CVec3 forcing_vector(const Vec3& xi, const Forcing& f) {
  return I_UNIT * (f.q2 * xi.cast<cplx>()) + f.r2;
}

/// dz/dt assembled block by block; equals -Phi(xi) z when unforced.
inline FrequencyState linear_rhs(const FrequencyState& s, const EmCoefficients& p,
                                 const Forcing* forcing = nullptr) {
  const double n = p.n_inf, a = p.a_inf;
  const CVec3 ixi = I_UNIT * s.xi.cast<cplx>();
  const CVec3 b = p.B_inf.cast<cplx>();
  FrequencyState d;
  d.xi = s.xi;
  d.rho = -n * ixi.cwiseProduct(s.v).sum();
  d.v = -a * ixi * s.rho - s.E - cross(s.v, b) - s.v;
  d.E = cross(ixi, s.h) + n * s.v;
  d.h = -cross(ixi, s.E);
  if (forcing) d.v += forcing_vector(s.xi, *forcing) / n;
  return d;
}

inline FrequencyState linear_rhs(const FrequencyState& s, const HyperbolicSystem& sys,
                                 const Forcing* forcing = nullptr) {
  return linear_rhs(s, EmCoefficients::from(sys), forcing);
}

inline FrequencyState axpy(const FrequencyState& x, double h, const FrequencyState& d) {
  FrequencyState out = x;
  out.rho += h * d.rho;
  out.v += h * d.v;
  out.E += h * d.E;
  out.h += h * d.h;
  return out;
}

struct Trajectory {
  std::vector<double> t;
  std::vector<FrequencyState> states;
  std::vector<FrequencyState> slopes;  // dense-output derivative at each node
  std::vector<Forcing> forcing;        // empty for linear runs
};

/// Step bound 0.01 / (1 + |xi| |A(omega)| + |L|).
inline double trajectory_dt(const HyperbolicSystem& sys, const Vec3& xi) {
  const double r = xi.norm();
  double a_norm = 0.0;
  if (r > 0.0) a_norm = MatR(sys.flux_symbol(VecR(xi / r))).operatorNorm();
  return 0.01 / (1.0 + r * a_norm + MatR(sys.L()).operatorNorm());
}

using ForcingFn = std::function<Forcing(double)>;

/// Classical RK4 from 0 to T; the slope stored at each node is the
/// derivative of the cubic Hermite dense output there.
inline Trajectory integrate_rk4(const FrequencyState& s0, const HyperbolicSystem& sys, double T,
                                const ForcingFn& forcing = nullptr, std::optional<double> dt_max = {}) {
  const EmCoefficients p = EmCoefficients::from(sys);
  const double bound = trajectory_dt(sys, s0.xi);
  const double dt_cap = dt_max ? std::min(*dt_max, bound) : bound;
  const auto steps = static_cast<std::size_t>(std::ceil(T / dt_cap));
  const double dt = steps ? T / static_cast<double>(steps) : 0.0;
  auto f = [&](double t, const FrequencyState& z) {
    if (!forcing) return linear_rhs(z, p);
    const Forcing fo = forcing(t);
    return linear_rhs(z, p, &fo);
  };
  Trajectory tr;
  FrequencyState z = s0;
  for (std::size_t i = 0;; ++i) {
    const double t = static_cast<double>(i) * dt;
    const FrequencyState k1 = f(t, z);
    tr.t.push_back(t);
    tr.states.push_back(z);
    tr.slopes.push_back(k1);
    if (forcing) tr.forcing.push_back(forcing(t));
    if (i == steps) break;
    const FrequencyState k2 = f(t + dt / 2, axpy(z, dt / 2, k1));
    const FrequencyState k3 = f(t + dt / 2, axpy(z, dt / 2, k2));
    const FrequencyState k4 = f(t + dt, axpy(z, dt, k3));
    z = axpy(z, dt / 6, k1);
    z = axpy(z, dt / 3, k2);
    z = axpy(z, dt / 3, k3);
    z = axpy(z, dt / 6, k4);
  }
  return tr;
}

/// |dE0/dt + 2 n |v|^2| at each node, dE0/dt taken from the dense output.
inline std::vector<double> energy_identity_residual(const Trajectory& tr, double a_inf, double n_inf) {
  std::vector<double> out(tr.t.size());
  for (std::size_t i = 0; i < tr.t.size(); ++i) {
    const auto& z = tr.states[i];
    const auto& d = tr.slopes[i];
    const double de0 = 2.0 * (a_inf * (std::conj(z.rho) * d.rho).real() + n_inf * inner(d.v, z.v).real() +
                              inner(d.E, z.E).real() + inner(d.h, z.h).real());
    out[i] = std::abs(de0 + 2.0 * n_inf * z.v.squaredNorm());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quadratic-form view: every functional is z^H M z for a Hermitian M that is
// recovered from the scalar evaluation by polarisation, so the search works
// with exactly the code paths above.

inline MatC hermitian_form(const std::function<double(const VecC&)>& q, int m) {
  MatC out(m, m);
  for (int j = 0; j < m; ++j)
    for (int k = j; k < m; ++k) {
      VecC ej = VecC::Zero(m), ek = VecC::Zero(m);
      ej(j) = 1.0;
      ek(k) = 1.0;
      const cplx b = 0.25 * (q(ej + ek) - q(ej - ek) - I_UNIT * q(ej + I_UNIT * ek) + I_UNIT * q(ej - I_UNIT * ek));
      out(j, k) = b;
      out(k, j) = std::conj(b);
    }
  return out;
}

inline MatC lyapunov_form(const Vec3& xi, const LyapunovParams& p) {
  return hermitian_form([&](const VecC& z) { return lyapunov(FrequencyState::from_vector(xi, z), p); },
                        em_index::SIZE);
}

inline MatC energy_form(double a_inf, double n_inf) {
  MatC w = MatC::Identity(em_index::SIZE, em_index::SIZE);
  w(em_index::RHO, em_index::RHO) = a_inf;
  for (int k = 0; k < 3; ++k) w(em_index::V + k, em_index::V + k) = n_inf;
  return w;
}

inline MatC dissipation_form(const Vec3& xi) {
  return hermitian_form([&](const VecC& z) { return dissipation(FrequencyState::from_vector(xi, z)); },
                        em_index::SIZE);
}

/// Per-frequency data for the Lyapunov certificate on X_xi.
struct FrequencyCertificate {
  double ratio_min = 0.0;  // min of E / E0 on X_xi
  double ratio_max = 0.0;
  double rate = 0.0;       // largest c with dE/dt + c eta E <= 0 (inf when eta = 0 and dE/dt <= 0)
  double dissipation_ratio = 0.0;  // min of D / (eta E0)
};

namespace detail {

inline double min_generalized(const MatC& a, const MatC& b) {
  Eigen::GeneralizedSelfAdjointEigenSolver<MatC> es(hermitian_part(a), hermitian_part(b),
                                                    Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
  return es.eigenvalues()(0);
}
inline double max_generalized(const MatC& a, const MatC& b) {
  Eigen::GeneralizedSelfAdjointEigenSolver<MatC> es(hermitian_part(a), hermitian_part(b),
                                                    Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
  return es.eigenvalues()(es.eigenvalues().size() - 1);
}

}  // namespace detail

inline FrequencyCertificate certify_frequency(const HyperbolicSystem& sys, const Vec3& xi,
                                              const LyapunovParams& p) {
  const MatC basis = constraint_subspace(sys, VecR(xi)).basis;
  const MatC phi = symbol(sys, VecR(xi)).phi_hat;
  const MatC m = lyapunov_form(xi, p);
  const MatC w = energy_form(p.a_inf, p.n_inf);
  const MatC s = -(m * phi + phi.adjoint() * m);  // dE/dt = z^H S z
  const MatC mb = basis.adjoint() * m * basis;
  const MatC wb = basis.adjoint() * w * basis;
  const MatC sb = basis.adjoint() * s * basis;
  FrequencyCertificate c;
  c.ratio_min = detail::min_generalized(mb, wb);
  c.ratio_max = detail::max_generalized(mb, wb);
  const double et = eta(xi.norm());
  const MatC db = basis.adjoint() * dissipation_form(xi) * basis;
  if (et > 0.0) {
    c.rate = c.ratio_min > 0.0 ? detail::min_generalized(-sb, et * mb) : -std::numeric_limits<double>::infinity();
    c.dissipation_ratio = detail::min_generalized(db, et * wb);
  } else {
    Eigen::SelfAdjointEigenSolver<MatC> es(hermitian_part(sb), Eigen::EigenvaluesOnly);
    const double top = es.eigenvalues().maxCoeff();
    c.rate = top <= 1e-12 * std::max(1.0, sb.norm()) ? std::numeric_limits<double>::infinity()
                                                      : -std::numeric_limits<double>::infinity();
    c.dissipation_ratio = std::numeric_limits<double>::infinity();
  }
  return c;
}

struct GridPoint {
  Vec3 xi;
  double radius = 0.0;
  std::size_t direction = 0;
};

inline std::vector<GridPoint> grid_points(const XiGrid& g) {
  std::vector<GridPoint> out;
  for (std::size_t r = 0; r < g.radii.size(); ++r)
    for (std::size_t d = 0; d < g.directions.size(); ++d) {
      const VecR x = g.point(r, d);
      Vec3 xi = Vec3::Zero();
      xi.head(x.size()) = x;
      out.push_back({xi, g.radii[r], d});
    }
  return out;
}

struct SearchOptions {
  std::vector<double> alpha1_candidates;  // default 2^-k, k = 0..8
  std::vector<double> alpha2_candidates;
  double ratio_lo = 0.5;
  double ratio_hi = 2.0;
  double safety = 0.99;  // c1 reported as this fraction of the certified supremum
  std::size_t random_checks = 100;
  std::uint64_t seed = 0;
};

struct Violation {
  Vec3 xi = Vec3::Zero();
  VecC state;
  std::string what;
  double value = 0.0;
};

struct SearchResult {
  bool feasible = false;
  LyapunovParams params;
  double c1_supremum = 0.0;   // min over the grid of the per-frequency generalised eigenvalue
  double c1_bisection = 0.0;  // largest feasible c1 found by bisection
  double ratio_min = 0.0, ratio_max = 0.0;       // A0-weighted equivalence range
  double euclid_ratio_min = 0.0, euclid_ratio_max = 0.0;
  double dissipation_constant = 0.0;  // min over grid of D / (eta E0)
  Vec3 worst_xi = Vec3::Zero();       // where c1(xi) is smallest
  double worst_rate = 0.0;
  std::size_t grid_size = 0;
  std::size_t candidates_tried = 0;
  std::size_t random_checks_done = 0;
  std::optional<Violation> violation;
};

class SearchInfeasible : public std::runtime_error {
 public:
  SearchInfeasible(const std::string& what, Violation v) : std::runtime_error(what), violation_(std::move(v)) {}
  const Violation& violation() const { return violation_; }

 private:
  Violation violation_;
};

namespace detail {

struct CandidateScore {
  bool equivalent = true;
  double rate = std::numeric_limits<double>::infinity();
  double ratio_min = std::numeric_limits<double>::infinity();
  double ratio_max = 0.0;
  std::size_t worst = 0;
  std::size_t worst_ratio = 0;
};

inline CandidateScore score_candidate(const HyperbolicSystem& sys, const std::vector<GridPoint>& pts,
                                      const LyapunovParams& p, const SearchOptions& opt) {
  std::vector<FrequencyCertificate> certs(pts.size());
  parallel_for(pts.size(), [&](std::size_t i) { certs[i] = certify_frequency(sys, pts[i].xi, p); });
  CandidateScore s;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& c = certs[i];
    if (c.ratio_min < s.ratio_min) {
      s.ratio_min = c.ratio_min;
      s.worst_ratio = i;
    }
    if (c.ratio_max > s.ratio_max) {
      s.ratio_max = c.ratio_max;
      if (c.ratio_max > opt.ratio_hi) s.worst_ratio = i;
    }
    if (c.rate < s.rate) {
      s.rate = c.rate;
      s.worst = i;
    }
  }
  s.equivalent = s.ratio_min >= opt.ratio_lo && s.ratio_max <= opt.ratio_hi;
  return s;
}

inline VecC random_unit_in(const MatC& basis, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  VecC y(basis.cols());
  for (Eigen::Index k = 0; k < y.size(); ++k) y(k) = cplx(nd(rng), nd(rng));
  VecC z = basis * y;
  return z / z.norm();
}

/// Whether dE/dt + c eta E <= 0 on X_xi at every point (semidefinite test
/// by Cholesky with a roundoff allowance).
inline bool rate_feasible(const HyperbolicSystem& sys, const std::vector<GridPoint>& pts, const LyapunovParams& p,
                          double c) {
  std::vector<char> ok(pts.size(), 1);
  parallel_for(pts.size(), [&](std::size_t i) {
    const VecR x(pts[i].xi);
    const MatC basis = constraint_subspace(sys, x).basis;
    const MatC phi = symbol(sys, x).phi_hat;
    const MatC m = lyapunov_form(pts[i].xi, p);
    const MatC s = -(m * phi + phi.adjoint() * m);
    const MatC neg = -(basis.adjoint() * (s + c * eta(pts[i].xi.norm()) * m) * basis);
    const double slack = 1e-12 * std::max(1.0, neg.norm());
    Eigen::LLT<MatC> llt(hermitian_part(neg) + slack * MatC::Identity(neg.rows(), neg.cols()));
    ok[i] = llt.info() == Eigen::Success;
  });
  return std::all_of(ok.begin(), ok.end(), [](char b) { return b != 0; });
}

}  // namespace detail

/// Finds (alpha1, alpha2) on a coarse candidate grid maximising the
/// certified c1 = min over the grid of the largest c with
/// dE/dt + c eta E <= 0 on X_xi, subject to 1/2 <= E/E0 <= 2 there.
/// The certificate is exact per frequency (generalised eigenvalues on
/// X_xi); random states then re-check it through the scalar functionals.
inline SearchResult search_params(const HyperbolicSystem& sys, const XiGrid& grid, SearchOptions opt = {}) {
  const EmCoefficients params = EmCoefficients::from(sys);
  if (opt.alpha1_candidates.empty())
    for (int k = 0; k <= 8; ++k) opt.alpha1_candidates.push_back(std::ldexp(1.0, -k));
  if (opt.alpha2_candidates.empty()) opt.alpha2_candidates = opt.alpha1_candidates;
  const auto pts = grid_points(grid);
  SearchResult res;
  res.grid_size = pts.size();
  LyapunovParams base;
  base.a_inf = params.a_inf;
  base.n_inf = params.n_inf;

  double best = 0.0;
  detail::CandidateScore best_score;
  std::optional<detail::CandidateScore> any_score;
  LyapunovParams any_params;
  for (double a1 : opt.alpha1_candidates)
    for (double a2 : opt.alpha2_candidates) {
      LyapunovParams p = base;
      p.alpha1 = a1;
      p.alpha2 = a2;
      const auto s = detail::score_candidate(sys, pts, p, opt);
      ++res.candidates_tried;
      if (!any_score) {
        any_score = s;
        any_params = p;
      }
      if (s.equivalent && s.rate > best && std::isfinite(s.rate)) {
        best = s.rate;
        best_score = s;
        res.params = p;
      } else if (s.equivalent && std::isinf(s.rate) && s.rate > 0 && best == 0.0) {
        // Only xi = 0 in the grid: any c1 works, keep a unit rate.
        best = 1.0;
        best_score = s;
        res.params = p;
      }
    }
  if (best <= 0.0) {
    Violation v;
    const auto& s = *any_score;
    const std::size_t idx = s.equivalent ? s.worst : s.worst_ratio;
    v.xi = pts[idx].xi;
    v.what = s.equivalent ? "no positive dissipation rate" : "equivalence E/E0 outside [1/2, 2]";
    v.value = s.equivalent ? s.rate : (s.ratio_min < opt.ratio_lo ? s.ratio_min : s.ratio_max);
    // Certificate: the extremal eigenvector at that frequency.
    const MatC basis = constraint_subspace(sys, VecR(v.xi)).basis;
    const MatC mb = basis.adjoint() * lyapunov_form(v.xi, any_params) * basis;
    const MatC wb = basis.adjoint() * energy_form(base.a_inf, base.n_inf) * basis;
    Eigen::GeneralizedSelfAdjointEigenSolver<MatC> es(hermitian_part(mb), hermitian_part(wb));
    v.state = basis * es.eigenvectors().col(s.ratio_min < opt.ratio_lo ? 0 : es.eigenvectors().cols() - 1);
    res.violation = v;
    throw SearchInfeasible("Lyapunov parameter search found no feasible (alpha1, alpha2)", v);
  }
  res.c1_supremum = best;
  // Bisection on the largest feasible c1 for the chosen (alpha1, alpha2).
  {
    double lo = 0.0, hi = std::isfinite(best) ? 3.0 * best : 3.0;
    if (detail::rate_feasible(sys, pts, res.params, hi)) lo = hi;
    for (int it = 0; it < 40 && hi - lo > 1e-6 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (detail::rate_feasible(sys, pts, res.params, mid) ? lo : hi) = mid;
    }
    res.c1_bisection = lo;
  }
  res.params.c1 = opt.safety * res.c1_bisection;
  res.ratio_min = best_score.ratio_min;
  res.ratio_max = best_score.ratio_max;
  res.worst_xi = pts[best_score.worst].xi;
  res.worst_rate = best_score.rate;

  // Independent re-check on random states of X_xi through the scalar functionals.
  std::vector<std::optional<Violation>> bad(pts.size());
  std::vector<std::array<double, 3>> extra(pts.size());
  parallel_for(pts.size(), [&](std::size_t i) {
    const Vec3 xi = pts[i].xi;
    const MatC basis = constraint_subspace(sys, VecR(xi)).basis;
    const MatC phi = symbol(sys, VecR(xi)).phi_hat;
    std::mt19937_64 rng(opt.seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)));
    const double et = eta(xi.norm());
    double emin = std::numeric_limits<double>::infinity(), emax = 0.0, dmin = std::numeric_limits<double>::infinity();
    const std::size_t count = opt.random_checks + static_cast<std::size_t>(basis.cols());
    for (std::size_t k = 0; k < count; ++k) {
      const VecC z = k < static_cast<std::size_t>(basis.cols()) ? VecC(basis.col(static_cast<Eigen::Index>(k)))
                                                                : detail::random_unit_in(basis, rng);
      const auto st = FrequencyState::from_vector(xi, z);
      const double e = lyapunov(st, res.params);
      const double e0 = energies(st, base.a_inf, base.n_inf).E0;
      // dE/dt along the flow, by polarisation of E with the velocity field.
      const VecC dz = -(phi * z);
      const auto sp = FrequencyState::from_vector(xi, z + dz);
      const auto sm = FrequencyState::from_vector(xi, z - dz);
      const double de = 0.5 * (lyapunov(sp, res.params) - lyapunov(sm, res.params));
      const double ratio = e / e0;
      emin = std::min(emin, z.squaredNorm() > 0 ? e / z.squaredNorm() : 1.0);
      emax = std::max(emax, z.squaredNorm() > 0 ? e / z.squaredNorm() : 1.0);
      if (et > 0.0) dmin = std::min(dmin, dissipation(st) / (et * e0));
      const double tol = 1e-10 * (1.0 + dz.norm()) * z.norm();
      if (ratio < opt.ratio_lo || ratio > opt.ratio_hi) {
        bad[i] = Violation{xi, z, "equivalence ratio", ratio};
        break;
      }
      if (de + res.params.c1 * et * e > tol) {
        bad[i] = Violation{xi, z, "Lyapunov inequality", de + res.params.c1 * et * e};
        break;
      }
    }
    extra[i] = {emin, emax, dmin};
  });
  res.euclid_ratio_min = std::numeric_limits<double>::infinity();
  res.dissipation_constant = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (bad[i] && !res.violation) res.violation = bad[i];
    res.euclid_ratio_min = std::min(res.euclid_ratio_min, extra[i][0]);
    res.euclid_ratio_max = std::max(res.euclid_ratio_max, extra[i][1]);
    res.dissipation_constant = std::min(res.dissipation_constant, extra[i][2]);
  }
  res.random_checks_done = pts.size() * opt.random_checks;
  if (res.violation) throw SearchInfeasible("random re-check violated the certified Lyapunov inequality", *res.violation);
  res.feasible = true;
  return res;
}

/// Along exact Green evolution at `samples` instants in [0, T], checks that
/// t -> E[z(t)] exp(c1 eta t) is nonincreasing. Returns the largest relative
/// increase seen between consecutive samples (<= 0 means monotone).
inline double lyapunov_decay_defect(const HyperbolicSystem& sys, const FrequencyState& s0, const LyapunovParams& p,
                                    double T, std::size_t samples = 50) {
  const GreenFactor g(sys, VecR(s0.xi));
  const VecC z0 = s0.to_vector();
  const double et = eta(s0.xi.norm());
  double prev = std::numeric_limits<double>::quiet_NaN(), worst = -std::numeric_limits<double>::infinity();
  const double scale = lyapunov(s0, p);
  for (std::size_t k = 0; k < samples; ++k) {
    const double t = T * static_cast<double>(k) / static_cast<double>(samples - 1);
    const auto st = FrequencyState::from_vector(s0.xi, g.at(t) * z0);
    const double v = lyapunov(st, p) * std::exp(p.c1 * et * t);
    if (k) worst = std::max(worst, (v - prev) / scale);
    prev = v;
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Pointwise Green estimate |G(t)|_{X_xi} <= C exp(-c0 eta t).

/// Operator norm on X_xi, in the A0-weighted norm, of a propagator given in
/// the orthonormal coordinates of X_xi (wb = B^H A0 B).
inline double restricted_operator_norm(const MatC& green_b, const MatC& wb) {
  Eigen::SelfAdjointEigenSolver<MatC> ws(hermitian_part(wb));
  const VecR ev = ws.eigenvalues();
  const MatC sq = ws.eigenvectors() * ev.cwiseSqrt().cast<cplx>().asDiagonal() * ws.eigenvectors().adjoint();
  const MatC isq = ws.eigenvectors() * ev.cwiseSqrt().cwiseInverse().cast<cplx>().asDiagonal() * ws.eigenvectors().adjoint();
  Eigen::JacobiSVD<MatC> svd(sq * green_b * isq);
  return svd.singularValues()(0);
}

struct MarginSample {
  Vec3 xi = Vec3::Zero();
  double radius = 0.0;
  std::size_t direction = 0;
  double margin = 0.0;  // restricted spectral abscissa
  double eta = 0.0;
};

struct PointwiseReport {
  double c0 = 0.0;
  double C = 0.0;
  double max_norm = 0.0;  // with c0 = 0; > 1 would mean growth in the energy norm
  std::vector<MarginSample> margins;
  std::vector<Violation> growth;
  double sampled_excess = -1.0;  // max of (sampled amplification - operator norm); <= roundoff
  double t0_norm_deviation = 0.0;          // | |G(0)| - 1 |
  std::optional<FitResult> low_fit_worst, high_fit_worst;  // per-direction fits, farthest from the mean
  double low_slope_min = 0.0, low_slope_max = 0.0, high_slope_min = 0.0, high_slope_max = 0.0;
};

/// Per direction, log-log slope of the margin over the lowest and highest
/// decade of the radius grid.
inline void fit_margins(PointwiseReport& rep) {
  std::map<std::size_t, std::vector<const MarginSample*>> by_dir;
  double rmin = std::numeric_limits<double>::infinity(), rmax = 0.0;
  for (const auto& m : rep.margins) {
    if (m.radius <= 0.0) continue;
    by_dir[m.direction].push_back(&m);
    rmin = std::min(rmin, m.radius);
    rmax = std::max(rmax, m.radius);
  }
  rep.low_slope_min = rep.high_slope_min = std::numeric_limits<double>::infinity();
  rep.low_slope_max = rep.high_slope_max = -std::numeric_limits<double>::infinity();
  for (const auto& [d, list] : by_dir) {
    std::vector<double> lx, ly, hx, hy;
    for (const auto* m : list) {
      if (m->radius <= 10.0 * rmin * (1 + 1e-12)) {
        lx.push_back(m->radius);
        ly.push_back(m->margin);
      }
      if (m->radius >= rmax / 10.0 * (1 - 1e-12)) {
        hx.push_back(m->radius);
        hy.push_back(m->margin);
      }
    }
    if (lx.size() >= 2) {
      const auto f = fit_loglog(lx, ly);
      rep.low_slope_min = std::min(rep.low_slope_min, f.slope);
      rep.low_slope_max = std::max(rep.low_slope_max, f.slope);
    }
    if (hx.size() >= 2) {
      const auto f = fit_loglog(hx, hy);
      rep.high_slope_min = std::min(rep.high_slope_min, f.slope);
      rep.high_slope_max = std::max(rep.high_slope_max, f.slope);
    }
  }
}

inline PointwiseReport pointwise_check(const HyperbolicSystem& sys, const XiGrid& grid,
                                       const std::vector<double>& t_grid, std::size_t samples_per_xi = 8,
                                       std::uint64_t seed = 0, double growth_tol = 1e-9) {
  const auto pts = grid_points(grid);
  const MatC w = sys.A0().cast<cplx>();
  struct PerXi {
    MarginSample margin;
    std::vector<double> norms;
    double sampled = -std::numeric_limits<double>::infinity();
    double t0dev = 0.0;
  };
  std::vector<PerXi> per(pts.size());
  parallel_for(pts.size(), [&](std::size_t i) {
    const Vec3 xi = pts[i].xi;
    const VecR x = xi.head(sys.n());
    const auto spec = restricted_spectrum(sys, x);
    const MatC basis = sys.has_constraints() ? constraint_subspace(sys, x).basis : MatC::Identity(sys.m(), sys.m());
    // X_xi is invariant, so exp(-t Phi) B = B exp(-t B^H Phi B); working in
    // these coordinates keeps the modes outside X_xi from leaking roundoff.
    const ExpFactor g(MatC(basis.adjoint() * symbol(sys, x).phi_hat * basis));
    const MatC wb = basis.adjoint() * w * basis;
    PerXi& out = per[i];
    out.margin = {xi, pts[i].radius, pts[i].direction, spec.abscissa, eta(xi.norm())};
    std::mt19937_64 rng(seed ^ (0xda942042e4dd58b5ULL * (i + 1)));
    const GreenFactor full(sys, x);
    for (double t : t_grid) {
      const MatC gt = g.propagator(t);
      const double nrm = restricted_operator_norm(gt, wb);
      out.norms.push_back(nrm);
      if (t == 0.0) out.t0dev = std::max(out.t0dev, std::abs(nrm - 1.0));
      // Random states of X_xi pushed through the full Green matrix.
      const MatC gfull = full.at(t);
      for (std::size_t k = 0; k < samples_per_xi; ++k) {
        const VecC z = detail::random_unit_in(basis, rng);
        const VecC gz = gfull * z;
        const double amp = std::sqrt((gz.adjoint() * w * gz)(0).real() / (z.adjoint() * w * z)(0).real());
        out.sampled = std::max(out.sampled, amp - nrm);
      }
    }
  });
  PointwiseReport rep;
  rep.c0 = std::numeric_limits<double>::infinity();
  for (const auto& p : per) {
    rep.margins.push_back(p.margin);
    if (p.margin.eta > 0.0) rep.c0 = std::min(rep.c0, p.margin.margin / p.margin.eta);
    rep.sampled_excess = std::max(rep.sampled_excess, p.sampled);
    rep.t0_norm_deviation = std::max(rep.t0_norm_deviation, p.t0dev);
  }
  if (!std::isfinite(rep.c0)) rep.c0 = 0.0;
  for (std::size_t i = 0; i < per.size(); ++i)
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
      const double nrm = per[i].norms[k];
      rep.max_norm = std::max(rep.max_norm, nrm);
      rep.C = std::max(rep.C, nrm * std::exp(rep.c0 * per[i].margin.eta * t_grid[k]));
      if (nrm > 1.0 + growth_tol)
        rep.growth.push_back(Violation{pts[i].xi, VecC(), "energy-norm growth at t=" + fmt_num(t_grid[k]), nrm});
    }
  fit_margins(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Duhamel-type bound for nonlinear runs.

/// Recorded history at one frequency: states and sources (flux Q = q2/n,
/// source R = r2/n) at increasing times.
struct SourceHistory {
  Vec3 xi = Vec3::Zero();
  std::vector<double> t;
  std::vector<VecC> z;
  std::vector<Eigen::Matrix3cd> Q;
  std::vector<CVec3> R;
};

struct DuhamelConstants {
  double c = 0.0;        // exponent constant used in exp(-c eta t)
  double C = 0.0;        // calibrated prefactor
  double K_max = 0.0;    // sup of the forcing gain over the recorded frequencies
};

/// dE/dt + c eta E <= K(xi) |f|^2 with f = i xi.Q + R entering the velocity
/// equation; K is the sup over X_xi of the quadratic gain.
inline double forcing_gain(const HyperbolicSystem& sys, const Vec3& xi, const LyapunovParams& p, double c) {
  const VecR x = xi.head(sys.n());
  const MatC basis = constraint_subspace(sys, x).basis;
  const MatC phi = symbol(sys, x).phi_hat;
  const MatC m = lyapunov_form(xi, p);
  const MatC s = -(m * phi + phi.adjoint() * m);
  const double et = eta(xi.norm());
  const MatC nb = -(basis.adjoint() * (s + c * et * m) * basis);
  MatC inj = MatC::Zero(em_index::SIZE, 3);
  for (int k = 0; k < 3; ++k) inj(em_index::V + k, k) = 1.0;
  const MatC g = basis.adjoint() * m * inj;
  const MatC gain = g.adjoint() * hermitian_part(nb).llt().solve(g);
  Eigen::SelfAdjointEigenSolver<MatC> es(hermitian_part(gain), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

/// |z|_W^2 <= C [ e^{-c eta t}|z0|_W^2 + int e^{-c eta (t-s)} (|xi|^2|Q|^2 + |R|^2) ds ]
/// with c = c1/2, C = max(4, 8 K_max): E ~ |z|_W^2 within [1/2, 2] and
/// |i xi.Q + R|^2 <= 2(|xi|^2|Q|^2 + |R|^2).
inline DuhamelConstants calibrate_duhamel(const HyperbolicSystem& sys, const std::vector<Vec3>& xis,
                                          const LyapunovParams& p) {
  DuhamelConstants k;
  k.c = 0.5 * p.c1;
  for (const auto& xi : xis) {
    if (xi.norm() == 0.0) continue;
    k.K_max = std::max(k.K_max, forcing_gain(sys, xi, p, k.c));
  }
  k.C = std::max(4.0, 8.0 * k.K_max);
  return k;
}

struct DuhamelReport {
  DuhamelConstants constants;
  double tolerance_multiplier = 1.1;
  double max_ratio = 0.0;  // LHS / RHS (RHS without the 1.1)
  std::size_t points = 0;
  std::vector<Violation> violations;
};

inline DuhamelReport duhamel_check(const std::vector<SourceHistory>& hist, const DuhamelConstants& k,
                                   const MatC& w, double tol_mult = 1.1) {
  DuhamelReport rep;
  rep.constants = k;
  rep.tolerance_multiplier = tol_mult;
  for (const auto& h : hist) {
    const double et = eta(h.xi.norm());
    const double r2 = h.xi.squaredNorm();
    auto src = [&](std::size_t i) { return r2 * h.Q[i].squaredNorm() + h.R[i].squaredNorm(); };
    auto wnorm = [&](const VecC& z) { return (z.adjoint() * w * z)(0).real(); };
    const double z0 = wnorm(h.z.front());
    // Running integral I(t_i) = int_0^{t_i} e^{-c eta (t_i - s)} src(s) ds by trapezoid,
    // updated with the exact decay factor between samples.
    double integral = 0.0;
    for (std::size_t i = 0; i < h.t.size(); ++i) {
      if (i) {
        const double dt = h.t[i] - h.t[i - 1];
        const double decay = std::exp(-k.c * et * dt);
        integral = decay * integral + 0.5 * dt * (decay * src(i - 1) + src(i));
      }
      const double lhs = wnorm(h.z[i]);
      const double rhs = k.C * (std::exp(-k.c * et * h.t[i]) * z0 + integral);
      ++rep.points;
      if (rhs > 0.0) rep.max_ratio = std::max(rep.max_ratio, lhs / rhs);
      else if (lhs > 0.0) rep.max_ratio = std::numeric_limits<double>::infinity();
      if (lhs > tol_mult * rhs)
        rep.violations.push_back(Violation{h.xi, h.z[i], "Duhamel bound at t=" + fmt_num(h.t[i]), lhs / rhs});
    }
  }
  return rep;
}

inline nlohmann::json vec_json(const Vec3& v) { return {json_num(v(0)), json_num(v(1)), json_num(v(2))}; }

inline nlohmann::json search_json(const SearchResult& r, const XiGrid& grid, const PointwiseReport* pw = nullptr) {
  nlohmann::json j;
  j["params"] = {{"alpha1", json_num(r.params.alpha1)}, {"alpha2", json_num(r.params.alpha2)}, {"c1", json_num(r.params.c1)}};
  j["c1_supremum"] = json_num(r.c1_supremum);
  j["c1_bisection"] = json_num(r.c1_bisection);
  j["grid"] = {{"r_min", json_num(grid.radii.front())}, {"r_max", json_num(grid.radii.back())},
               {"radii", grid.radii.size()}, {"directions", grid.directions.size()}, {"points", r.grid_size}};
  j["equivalence"] = {{"weighted", {json_num(r.ratio_min), json_num(r.ratio_max)}},
                      {"euclidean", {json_num(r.euclid_ratio_min), json_num(r.euclid_ratio_max)}}};
  j["dissipation_constant"] = json_num(r.dissipation_constant);
  j["worst_point"] = {{"xi", vec_json(r.worst_xi)}, {"ratio", json_num(r.worst_rate)}};
  j["candidates_tried"] = r.candidates_tried;
  j["random_checks"] = r.random_checks_done;
  if (pw) j["fitted"] = {{"c0", json_num(pw->c0)}, {"C", json_num(pw->C)}};
  return j;
}

}  // namespace emdecay
