#include <gtest/gtest.h>

#include <random>

#include "emdecay/system.hpp"
#include "emdecay/system_io.hpp"

using namespace emdecay;

namespace {

VecR vec3(double a, double b, double c) {
  VecR v(3);
  v << a, b, c;
  return v;
}

// Independent assembly of the 10x10 symbol straight from the component equations.
MatC assemble_em_symbol(double n_inf, double a_inf, double dp, const Vec3& b_inf, const Vec3& xi) {
  MatC phi = MatC::Zero(10, 10);
  const cplx i(0.0, 1.0);
  // a rho_t + i dp xi.v = 0
  for (int k = 0; k < 3; ++k) phi(0, 1 + k) = i * dp * xi(k) / a_inf;
  // n v_t + i dp xi rho + n (v + v x B) + n E = 0
  for (int k = 0; k < 3; ++k) {
    phi(1 + k, 0) = i * dp * xi(k) / n_inf;
    phi(1 + k, 1 + k) += 1.0;
    phi(1 + k, 4 + k) = 1.0;
  }
  const Eigen::Matrix3d vxb = -cross_matrix(b_inf);  // v x B = -B x v
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) phi(1 + r, 1 + c) += vxb(r, c);
  // E_t - i xi x h - n v = 0
  const Eigen::Matrix3d xx = cross_matrix(xi);
  for (int r = 0; r < 3; ++r) {
    phi(4 + r, 1 + r) = -n_inf;
    for (int c = 0; c < 3; ++c) {
      phi(4 + r, 7 + c) = -i * xx(r, c);
      phi(7 + r, 4 + c) = i * xx(r, c);
    }
  }
  return phi;
}

MatC taylor_exp_neg(const MatC& x) {
  const double nx = x.operatorNorm();
  MatC sum = MatC::Identity(x.rows(), x.cols());
  MatC term = sum;
  double bound = 1.0;
  for (int k = 1; k < 200; ++k) {
    term = term * (-x) / static_cast<double>(k);
    sum += term;
    bound = bound * nx / (k + 1);
    // Remainder <= |X|^{k+1}/(k+1)! e^{|X|}
    if (bound * std::exp(nx) < 1e-16) break;
  }
  return sum;
}

double rel_err(const MatC& a, const MatC& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

}  // namespace

TEST(EulerMaxwell, DefaultCoefficients) {
  EulerMaxwellParams p;
  EXPECT_DOUBLE_EQ(p.a_inf(), 1.0);
  const auto sys = build_euler_maxwell(p);
  EXPECT_EQ(sys.m(), 10);
  EXPECT_EQ(sys.n(), 3);
  EXPECT_TRUE(sys.A0().isApprox(MatR::Identity(10, 10)));
}

TEST(EulerMaxwell, AInfMatchesFiniteDifferenceOfPressure) {
  EulerMaxwellParams p;
  p.n_inf = 1.7;
  p.pressure_K = 0.3;
  p.pressure_gamma = 5.0 / 3.0;
  const double h = 1e-6;
  const double dp = (p.pressure(p.n_inf + h) - p.pressure(p.n_inf - h)) / (2 * h);
  EXPECT_NEAR(p.a_inf(), dp / p.n_inf, 1e-8);
}

TEST(EulerMaxwell, RejectsBadParams) {
  for (auto mutate : {+[](EulerMaxwellParams& p) { p.n_inf = 0.0; },
                      +[](EulerMaxwellParams& p) { p.pressure_K = -1.0; },
                      +[](EulerMaxwellParams& p) { p.pressure_gamma = 0.0; }}) {
    EulerMaxwellParams p;
    mutate(p);
    EXPECT_THROW(build_euler_maxwell(p), std::invalid_argument);
  }
}

TEST(EulerMaxwell, StructureReport) {
  EulerMaxwellParams p;
  p.B_inf = Vec3(0.0, 0.0, 1.0);
  const auto rep = check_structure(build_euler_maxwell(p));
  EXPECT_TRUE(rep.A0_spd);
  EXPECT_TRUE(rep.Aj_symmetric);
  EXPECT_TRUE(rep.L_nonneg);
  EXPECT_TRUE(rep.L_kernel_nontrivial);
  EXPECT_FALSE(rep.L_symmetric);
}

TEST(EulerMaxwell, VelocityBlockSymmetricPart) {
  EulerMaxwellParams p;
  p.n_inf = 2.0;
  p.B_inf = Vec3(0.0, 0.0, 1.0);
  const auto sys = build_euler_maxwell(p);
  const MatR blk = sys.L().block(1, 1, 3, 3);
  EXPECT_TRUE((0.5 * (blk + blk.transpose())).isApprox(2.0 * MatR::Identity(3, 3)));
}

TEST(Structure, ZeroDissipationAndNonSymmetricFlux) {
  MatR a0 = MatR::Identity(2, 2);
  MatR a1(2, 2);
  a1 << 0, 1, 1, 0;
  HyperbolicSystem s(a0, {a1}, MatR::Zero(2, 2));
  auto rep = check_structure(s);
  EXPECT_TRUE(rep.L_nonneg);
  EXPECT_TRUE(rep.L_kernel_nontrivial);
  a1(0, 1) = 2.0;
  HyperbolicSystem bad(a0, {a1}, MatR::Zero(2, 2));
  EXPECT_FALSE(check_structure(bad).Aj_symmetric);
}

TEST(Symbol, ZeroAndLinearity) {
  const auto sys = build_euler_maxwell({});
  const auto s0 = symbol(sys, VecR::Zero(3));
  EXPECT_FALSE(s0.omega.has_value());
  EXPECT_LT((s0.phi_hat - (sys.A0_inverse() * sys.L()).cast<cplx>()).norm(), 1e-15);
  const VecR xi = vec3(0.3, -0.2, 0.7);
  const MatC base = (sys.A0_inverse() * sys.L()).cast<cplx>();
  const MatC d1 = symbol(sys, xi).phi_hat - base;
  const MatC d2 = symbol(sys, 2 * xi).phi_hat - base;
  EXPECT_LT((d2 - 2.0 * d1).norm(), 1e-14);
}

TEST(Symbol, MatchesIndependentAssembly) {
  EulerMaxwellParams p;
  p.n_inf = 1.3;
  p.B_inf = Vec3(0.2, -0.1, 0.5);
  const auto sys = build_euler_maxwell(p);
  const Vec3 xi(0.4, 1.1, -0.3);
  const MatC ref = assemble_em_symbol(p.n_inf, p.a_inf(), p.dpressure(p.n_inf), p.B_inf, xi);
  EXPECT_LT((symbol(sys, VecR(xi)).phi_hat - ref).norm(), 1e-13);
}

TEST(Symbol, EigenvaluesMatchDenseSolver) {
  const auto sys = build_euler_maxwell({});
  const Vec3 xi(1.0, 0.0, 0.0);
  const MatC ref = assemble_em_symbol(1.0, 1.0, 1.0, Vec3::Zero(), xi);
  Eigen::ComplexEigenSolver<MatC> es(ref, false);
  Eigen::ComplexEigenSolver<MatC> mine(symbol(sys, VecR(xi)).phi_hat, false);
  auto a = sorted_eigenvalues(es.eigenvalues(), 1e-8);
  auto b = sorted_eigenvalues(mine.eigenvalues(), 1e-8);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_LT(std::abs(a[k] - b[k]), 1e-10);
}

TEST(Green, IdentityAtZeroAndTaylorOracle) {
  const auto sys = build_euler_maxwell({});
  const VecR xi = vec3(1.0, 0.0, 0.0);
  EXPECT_LT((green_matrix(sys, xi, 0.0) - MatC::Identity(10, 10)).norm(), 1e-15);
  const MatC phi = symbol(sys, xi).phi_hat;
  EXPECT_LT(rel_err(green_matrix(sys, xi, 1.0), taylor_exp_neg(phi)), 1e-10);
  const VecR xi2 = vec3(0.3, 0.4, -0.866);
  EXPECT_LT(rel_err(green_matrix(sys, xi2 / xi2.norm(), 1.0),
                    taylor_exp_neg(symbol(sys, xi2 / xi2.norm()).phi_hat)),
            1e-10);
}

TEST(Green, RejectsNegativeTime) {
  const auto sys = build_euler_maxwell({});
  EXPECT_THROW(green_matrix(sys, VecR::Zero(3), -1.0), std::invalid_argument);
}

TEST(Green, PadeFallbackAgreesWithTaylor) {
  // A Jordan block is defective, so the eigenvector route is refused.
  MatC j = MatC::Zero(3, 3);
  j(0, 0) = j(1, 1) = j(2, 2) = 0.5;
  j(0, 1) = j(1, 2) = 1.0;
  ExpFactor f(j);
  EXPECT_FALSE(f.diagonalized());
  EXPECT_LT(rel_err(f.propagator(0.7), taylor_exp_neg(0.7 * j)), 1e-12);
}

TEST(Green, SemigroupOnScanGrid) {
  EulerMaxwellParams p;
  p.B_inf = Vec3(0.0, 0.0, 0.5);
  const auto sys = build_euler_maxwell(p);
  const auto grid = make_xi_grid(3, 1e-3, 1e3, 9, 2, 7);
  const std::vector<double> ts{0.0, 0.5, 2.0, 5.0, 10.0};
  for (std::size_t r = 0; r < grid.radii.size(); ++r)
    for (std::size_t d = 0; d < grid.directions.size(); ++d) {
      const GreenFactor g(sys, grid.point(r, d));
      for (double t : ts)
        for (double s : ts) {
          if (t + s > 10.0) continue;
          const MatC lhs = g.at(t + s);
          EXPECT_LE((lhs - g.at(t) * g.at(s)).norm(), 1e-9 * lhs.norm())
              << "|xi|=" << grid.radii[r] << " t=" << t << " s=" << s;
        }
    }
}

TEST(Constraints, DimensionsAndNullity) {
  const auto sys = build_euler_maxwell({});
  const auto s0 = constraint_subspace(sys, VecR::Zero(3));
  EXPECT_EQ(s0.basis.cols(), 9);
  const VecR xi = vec3(0.2, -1.0, 0.4);
  const auto s1 = constraint_subspace(sys, xi);
  EXPECT_EQ(s1.basis.cols(), 8);
  // Rank oracle: the two rows are independent whenever xi != 0.
  Eigen::FullPivLU<MatC> lu(s1.C);
  EXPECT_EQ(lu.rank(), 2);
  EXPECT_LT((s1.C * s1.basis).norm(), 1e-12);
  EXPECT_LT((s1.projector * s1.projector - s1.projector).norm(), 1e-12);
  EXPECT_LT((s1.projector.adjoint() - s1.projector).norm(), 1e-14);
}

TEST(Constraints, RowsEncodeGaussLaws) {
  const auto sys = build_euler_maxwell({});
  const VecR xi = vec3(0.5, 0.25, -1.5);
  const MatC c = constraint_symbol(sys, xi);
  EXPECT_EQ(c(0, em_index::RHO), cplx(1.0, 0.0));
  for (int j = 0; j < 3; ++j) {
    EXPECT_EQ(c(0, em_index::E + j), cplx(0.0, xi(j)));
    EXPECT_EQ(c(1, em_index::H + j), cplx(0.0, xi(j)));
  }
}

TEST(Constraints, RequiresConstraintPair) {
  HyperbolicSystem s(MatR::Identity(1, 1), {MatR::Zero(1, 1)}, MatR::Identity(1, 1));
  EXPECT_THROW(constraint_subspace(s, VecR::Zero(1)), std::invalid_argument);
}

TEST(Constraints, GreenInvarianceOnScanGrid) {
  EulerMaxwellParams p;
  p.B_inf = Vec3(0.3, 0.0, 0.4);
  const auto sys = build_euler_maxwell(p);
  const auto grid = make_xi_grid(3, 1e-3, 1e3, 9, 2, 11);
  for (std::size_t r = 0; r < grid.radii.size(); ++r)
    for (std::size_t d = 0; d < grid.directions.size(); ++d) {
      const VecR xi = grid.point(r, d);
      const auto sub = constraint_subspace(sys, xi);
      const GreenFactor g(sys, xi);
      const MatC comp = MatC::Identity(10, 10) - sub.projector;
      for (double t : {0.0, 0.1, 1.0, 3.0, 10.0})
        EXPECT_LE((comp * g.at(t) * sub.basis).norm(), 1e-9) << "|xi|=" << grid.radii[r];
    }
}

TEST(Spectrum, ZeroFrequencyRoots) {
  const auto sys = build_euler_maxwell({});
  const auto spec = restricted_spectrum(sys, VecR::Zero(3));
  ASSERT_EQ(spec.eigenvalues.size(), 9u);
  // Oscillator lambda^2 - lambda + n = 0 per component, plus three static h modes.
  const cplx plus(0.5, std::sqrt(3.0) / 2), minus(0.5, -std::sqrt(3.0) / 2);
  int np = 0, nm = 0, nz = 0;
  for (auto l : spec.eigenvalues) {
    if (std::abs(l - plus) < 1e-10) ++np;
    if (std::abs(l - minus) < 1e-10) ++nm;
    if (std::abs(l) < 1e-10) ++nz;
  }
  EXPECT_EQ(np, 3);
  EXPECT_EQ(nm, 3);
  EXPECT_EQ(nz, 3);
  EXPECT_NEAR(spec.abscissa, 0.0, 1e-12);
}

TEST(Spectrum, AbscissaIsMinRealPart) {
  const auto sys = build_euler_maxwell({});
  const auto spec = restricted_spectrum(sys, vec3(0.7, 0.1, 0.0));
  double mn = 1e300;
  for (auto l : spec.eigenvalues) mn = std::min(mn, l.real());
  EXPECT_DOUBLE_EQ(spec.abscissa, mn);
}

TEST(Spectrum, NonnegativeRealPartsOnScanGrid) {
  EulerMaxwellParams p;
  p.B_inf = Vec3(0.0, 0.0, 1.0);
  const auto sys = build_euler_maxwell(p);
  const auto grid = make_xi_grid(3, 1e-3, 1e3, 40, 4, 3);
  for (std::size_t r = 0; r < grid.radii.size(); ++r)
    for (std::size_t d = 0; d < grid.directions.size(); ++d)
      for (auto l : restricted_spectrum(sys, grid.point(r, d)).eigenvalues)
        EXPECT_GE(l.real(), -1e-10);
}

TEST(Spectrum, RejectsNonInvariantConstraint) {
  // Constraint x1 = 0 is not preserved by a rotation generator.
  MatR a0 = MatR::Identity(2, 2);
  MatR l(2, 2);
  l << 1, -1, 1, 1;
  ConstraintPair c;
  c.Q = {MatR::Zero(1, 2)};
  c.R = MatR::Zero(1, 2);
  c.R(0, 0) = 1.0;
  HyperbolicSystem s(a0, {MatR::Zero(2, 2)}, l, c);
  EXPECT_THROW(restricted_spectrum(s, VecR::Zero(1)), InvarianceError);
}

TEST(Spectrum, RotationAboutBackgroundField) {
  EulerMaxwellParams p;
  p.B_inf = Vec3(0.0, 0.0, 0.8);
  const auto sys = build_euler_maxwell(p);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 10; ++trial) {
    const Vec3 xi(nd(rng), nd(rng), nd(rng));
    const double ang = 0.1 + trial;
    const Eigen::Matrix3d g = Eigen::AngleAxisd(ang, Vec3::UnitZ()).toRotationMatrix();
    Eigen::ComplexEigenSolver<MatC> e1(symbol(sys, VecR(xi)).phi_hat, false);
    Eigen::ComplexEigenSolver<MatC> e2(symbol(sys, VecR(g * xi)).phi_hat, false);
    // Greedy matching is robust to quantisation boundaries.
    std::vector<cplx> a(e1.eigenvalues().data(), e1.eigenvalues().data() + 10);
    std::vector<cplx> b(e2.eigenvalues().data(), e2.eigenvalues().data() + 10);
    for (auto x : a) {
      auto it = std::min_element(b.begin(), b.end(),
                                 [x](cplx u, cplx v) { return std::abs(u - x) < std::abs(v - x); });
      EXPECT_LT(std::abs(*it - x), 1e-10);
      b.erase(it);
    }
  }
}

TEST(Grid, DirectionSetLayout) {
  const auto dirs = direction_set(3, 5, 42);
  ASSERT_EQ(dirs.size(), 6u + 8u + 5u);
  for (const auto& d : dirs) EXPECT_NEAR(d.norm(), 1.0, 1e-14);
  EXPECT_EQ(dirs, direction_set(3, 5, 42));
  const auto g = make_xi_grid(3);
  EXPECT_EQ(g.radii.size(), 200u);
  EXPECT_NEAR(g.radii.front(), 1e-3, 1e-15);
  EXPECT_NEAR(g.radii.back(), 1e3, 1e-9);
}

TEST(Io, RoundTripExplicitAndBuiltin) {
  nlohmann::json j = {{"builtin", "euler_maxwell"},
                      {"params", {{"n_inf", 1.0}, {"B_inf", {0.0, 0.0, 1.0}}, {"gamma", 2.0}, {"K", 0.5}}}};
  const auto sys = system_from_json(j);
  const auto back = system_from_json(system_to_json(sys));
  EXPECT_TRUE(back.L().isApprox(sys.L()));
  EXPECT_TRUE(back.A(2).isApprox(sys.A(2)));
  ASSERT_TRUE(back.has_constraints());
  EXPECT_TRUE(back.constraints()->R.isApprox(sys.constraints()->R));
}
