#include <gtest/gtest.h>

#include <random>

#include <boost/math/special_functions/gamma.hpp>

#include "emdecay/kernel.hpp"

using namespace emdecay;

namespace {

GridField gaussian_field(int n, int points, double box, double s) {
  GridField g = GridField::cube(n, points, box);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto x = g.position(i);
    g.at(i) = std::exp(-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (2 * s * s));
  }
  return g;
}

GridField random_field(int n, int points, int comps, std::uint64_t seed) {
  GridField g = GridField::cube(n, points, 10.0, comps);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (auto& v : g.values()) v = cplx(nd(rng), nd(rng));
  return g;
}

double max_diff(const GridField& a, const GridField& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

double max_abs(const GridField& a) {
  double m = 0.0;
  for (const auto& v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

TEST(GridField, ValidatesShape) {
  EXPECT_THROW(GridField(4, {8, 8, 8, 8}, {1, 1, 1, 1}), std::invalid_argument);
  EXPECT_THROW(GridField(1, {12}, {1.0}), std::invalid_argument);
  EXPECT_THROW(GridField(2, {8}, {1.0, 1.0}), std::invalid_argument);
}

TEST(GridField, DefaultBoxes) {
  EXPECT_EQ(GridField::default_box(1).shape()[0], 1024);
  EXPECT_EQ(GridField::default_box(2).shape()[1], 256);
  EXPECT_EQ(GridField::default_box(3).shape()[2], 128);
  EXPECT_NEAR(GridField::default_box(3).box()[0], 64 * PI, 1e-12);
}

TEST(GridField, CoordinatesInFftOrder) {
  GridField g = GridField::cube(1, 8, 8.0);
  EXPECT_DOUBLE_EQ(g.position(0)[0], 0.0);
  EXPECT_DOUBLE_EQ(g.position(3)[0], 3.0);
  EXPECT_DOUBLE_EQ(g.position(4)[0], -4.0);
  EXPECT_DOUBLE_EQ(g.frequency(7)[0], -2.0 * PI / 8.0);
  EXPECT_TRUE(g.on_boundary(4));
}

TEST(GridField, RoundTripAndParseval) {
  for (int n = 1; n <= 3; ++n) {
    const GridField g = random_field(n, n == 3 ? 16 : 32, 2, 3 + n);
    const GridField s = to_spectral(g);
    const GridField back = to_physical(s);
    EXPECT_LE(max_diff(back, g), 1e-12 * max_abs(g));
    const double l2 = lp_norm(g, 2.0);
    EXPECT_NEAR(spectral_l2(s), l2, 1e-10 * l2);
  }
}

TEST(GridField, ContinuousTransformScaling) {
  // exp(-x^2/2) has transform sqrt(2 pi) exp(-xi^2/2).
  const GridField g = gaussian_field(1, 256, 40.0, 1.0);
  const GridField s = to_spectral(g);
  for (std::size_t i : {0u, 5u, 20u})
    EXPECT_NEAR(s.at(i).real(), std::sqrt(2 * PI) * std::exp(-0.5 * std::pow(s.frequency(i)[0], 2)), 1e-12);
}

TEST(LpNorm, UnitBumpSupNorm) {
  GridField g = GridField::cube(1, 64, 10.0);
  for (std::size_t i = 0; i < g.size(); ++i) g.at(i) = std::abs(g.position(i)[0]) < 2.5 ? 1.0 : 0.0;
  EXPECT_DOUBLE_EQ(lp_norm(g, std::numeric_limits<double>::infinity()), 1.0);
}

TEST(LpNorm, GaussianL2) {
  const GridField g = gaussian_field(1, 1024, 64 * PI, 1.0);
  EXPECT_NEAR(lp_norm(g, 2.0), std::pow(PI, 0.25), 1e-12);
  EXPECT_NEAR(lp_norm(g, 1.0), std::sqrt(2 * PI), 1e-12);
}

TEST(LpNorm, RejectsSpectralField) {
  EXPECT_THROW(lp_norm(to_spectral(GridField::cube(1, 8, 1.0)), 2.0), std::invalid_argument);
}

TEST(BoundaryCheck, RejectsWideData) {
  EXPECT_NO_THROW(check_boundary_decay(gaussian_field(2, 64, 64 * PI, 3.0)));
  EXPECT_THROW(check_boundary_decay(gaussian_field(2, 64, 20.0, 3.0)), std::invalid_argument);
}

TEST(Kernel, IdentityAtTimeZero) {
  const GridField g = gaussian_field(2, 64, 40.0, 1.5);
  EXPECT_LE(max_diff(kernel_apply(g, 0, 0.0), g), 1e-12);
}

TEST(Kernel, SecondOrderEqualsTwoFirstOrder) {
  const GridField g = gaussian_field(3, 32, 30.0, 2.0);
  const GridField two = kernel_apply(g, 2, 0.0);
  const GridField twice = kernel_apply(kernel_apply(g, 1, 0.0), 1, 0.0);
  EXPECT_LE(max_diff(two, twice), 1e-12 * max_abs(two));
}

TEST(Kernel, CompositionOfMultipliers) {
  const EtaProfile p;
  const GridField g = gaussian_field(2, 64, 40.0, 1.0);
  for (auto [k1, t1, k2, t2] : std::vector<std::tuple<int, double, int, double>>{{0, 1.0, 1, 2.0}, {2, 0.5, 1, 0.0}, {1, 3.0, 1, 3.0}}) {
    const GridField lhs = kernel_apply(kernel_apply(g, k2, t2, p), k1, t1, p);
    const GridField rhs = kernel_apply(g, k1 + k2, t1 + t2, p);
    EXPECT_LE(max_diff(lhs, rhs), 1e-10);
  }
}

TEST(Kernel, NormNonincreasingInTime) {
  const GridField g = gaussian_field(2, 64, 64.0, 2.0);
  for (int k : {0, 1, 3}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double t : {0.0, 0.5, 1.0, 5.0, 20.0, 100.0}) {
      const double v = lp_norm(kernel_apply(g, k, t), 2.0);
      EXPECT_LE(v, prev * (1 + 1e-12));
      prev = v;
    }
  }
}

TEST(Kernel, ModulusDiscardsPhaseButPhaseModeKeepsIt) {
  // A shifted bump has a transform with nontrivial phase.
  GridField g = GridField::cube(1, 256, 60.0);
  for (std::size_t i = 0; i < g.size(); ++i) g.at(i) = std::exp(-0.5 * std::pow(g.position(i)[0] - 5.0, 2));
  const GridField phase = kernel_apply(g, 0, 0.0, {}, KernelMode::phase);
  EXPECT_LE(max_diff(phase, g), 1e-12);
  const GridField mod = kernel_apply(g, 0, 0.0, {}, KernelMode::modulus);
  EXPECT_NEAR(std::abs(mod.at(0)), 1.0, 1e-10);  // recentred at the origin
  EXPECT_NEAR(lp_norm(mod, 2.0), lp_norm(g, 2.0), 1e-10);
}

TEST(Kernel, BandSplitAddsUp) {
  const GridField g = gaussian_field(2, 64, 40.0, 1.0);
  const GridField lo = kernel_apply(g, 1, 2.0, {}, KernelMode::modulus, Band::low(1.0));
  const GridField hi = kernel_apply(g, 1, 2.0, {}, KernelMode::modulus, Band::high(1.0));
  const GridField all = kernel_apply(g, 1, 2.0);
  GridField sum = lo;
  for (std::size_t i = 0; i < sum.values().size(); ++i) sum.values()[i] += hi.values()[i];
  EXPECT_LE(max_diff(sum, all), 1e-14);
}

TEST(Radial, MatchesGridAtModerateTimes) {
  const double s = 3.0;
  const GridField g = gaussian_field(3, 128, 64 * PI, s);
  const auto d = RadialDatum::gaussian(3, s);
  const EtaProfile p;
  for (double t : {0.0, 2.0, 10.0}) {
    for (int k : {0, 1}) {
      const double grid2 = lp_norm(kernel_apply(g, k, t, p), 2.0);
      const double rad2 = radial_kernel_norm(d, k, t, p, LebesgueExponent(2));
      EXPECT_NEAR(grid2, rad2, 1e-6 * rad2) << "t=" << t << " k=" << k;
      const double gridinf = lp_norm(kernel_apply(g, k, t, p), std::numeric_limits<double>::infinity());
      const double radinf = radial_kernel_norm(d, k, t, p, LebesgueExponent::infinity());
      // |xi|^k is not smooth at the origin, which costs the k = 1 Riemann sum some accuracy.
      EXPECT_NEAR(gridinf, radinf, 1e-5 * radinf) << "t=" << t << " k=" << k;
    }
  }
}

TEST(Radial, DerivativeL2MatchesGrid) {
  const GridField g = gaussian_field(2, 256, 64 * PI, 3.0);
  const auto d = RadialDatum::gaussian(2, 3.0);
  for (int m : {0, 2, 3}) {
    const double grid = derivative_lp_norm(g, m, 2.0);
    EXPECT_NEAR(radial_derivative_l2(d, m), grid, 1e-8 * grid);
  }
}

TEST(Lpqlr, GaussianLowFrequencyRateThreeDims) {
  const auto d = RadialDatum::gaussian(3, 3.0);
  NormSpec spec;  // p=2, q=1, r=2, k=0, j=0, l=2, n=3
  const double data_low = std::pow(2 * PI * 9.0, 1.5);
  const double data_high = radial_derivative_l2(d, 2);
  const auto rep = verify_lpqlr(d, data_low, data_high, spec, EtaProfile{}, default_t_grid());
  ASSERT_TRUE(rep.low_fit.has_value());
  EXPECT_TRUE(rep.low_fit->accepted);
  EXPECT_NEAR(rep.low_fit->slope, -0.75, 0.05);
  EXPECT_TRUE(rep.c_star_bounded);
}

TEST(Lpqlr, SupNormWithL1DataStaysBounded) {
  const double s = 3.0;
  const GridField g = gaussian_field(3, 128, 32 * PI, s);
  NormSpec spec;
  spec.p = LebesgueExponent::infinity();
  spec.r = LebesgueExponent(1);
  spec.l = 4;
  const double data_low = lp_norm(g, 1.0);
  const double data_high = derivative_lp_norm(g, spec.k + spec.l, 1.0);
  const auto rep = verify_lpqlr(RadialDatum::gaussian(3, s), data_low, data_high, spec, EtaProfile{}, default_t_grid());
  EXPECT_TRUE(std::isfinite(rep.c_star));
  EXPECT_LE(rep.c_star_growth, 2.0);
  EXPECT_NEAR(rep.low_fit->slope, -1.5, 0.05);
}

TEST(Lpqlr, GridRouteAtTimeZeroIsFinite) {
  const GridField g = gaussian_field(1, 1024, 64 * PI, 3.0);
  NormSpec spec;
  spec.n = 1;
  const auto rep = verify_lpqlr(g, spec, EtaProfile{}, {0.0, 1.0, 4.0});
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_TRUE(std::isfinite(rep.c_star));
  EXPECT_GT(rep.rows[0].lhs, 0.0);
  EXPECT_NEAR(rep.rows[0].lhs, lp_norm(g, 2.0), 1e-12);
  EXPECT_EQ(lpqlr_csv(rep).str().substr(0, 34), "t,lhs_norm,rhs_low,rhs_high,ratio\n");
}

TEST(Lpqlr, RejectsBadInputs) {
  NormSpec spec;
  spec.n = 1;
  EXPECT_THROW(verify_lpqlr(gaussian_field(1, 64, 10.0, 3.0), spec, EtaProfile{}, {1.0}), std::invalid_argument);
  EXPECT_THROW(verify_lpqlr(gaussian_field(1, 1024, 64 * PI, 3.0), spec, EtaProfile{}, {2.0, 1.0}),
               std::invalid_argument);
}

TEST(WeightIntegral, TimeZeroClosedForm) {
  for (auto [l, s2, n] : std::vector<std::tuple<double, double, int>>{{2, 2, 3}, {3, 2, 3}, {2, 2, 2}, {2, 1, 1}}) {
    const double exact = unit_sphere_area(n) * std::pow(2.0, n - l * s2) / (l * s2 - n);
    EXPECT_NEAR(high_freq_weight_integral(EtaProfile{}, l, s2, 2.0, 0.0, n), exact, 1e-10 * exact);
  }
}

TEST(WeightIntegral, IncompleteGammaOracle) {
  const EtaProfile p;
  const double sigma = 2.0;
  for (auto [l, s2, n] : std::vector<std::tuple<double, double, int>>{{2, 2, 3}, {3, 2, 3}, {2, 1, 1}})
    for (double t : {1.0, 1e2, 1e4}) {
      const double a = (l * s2 - n) / sigma;
      const double c = 0.7, R0 = 1.5;
      const double exact = unit_sphere_area(n) / sigma * std::pow(c * t, -a) *
                           boost::math::tgamma_lower(a, c * t * std::pow(R0, -sigma));
      EXPECT_NEAR(high_freq_weight_integral(p, l, s2, R0, t, n, c), exact, 1e-9 * exact);
    }
}

TEST(WeightIntegral, FittedExponents) {
  for (auto [l, s2, n] : std::vector<std::tuple<double, double, int>>{{2, 2, 3}, {3, 2, 3}, {2, 2, 2}, {2, 1, 1}}) {
    const auto f = fit_high_freq_weight(EtaProfile{}, l, s2, n, 1.0, log_space(1e2, 1e4, 24));
    EXPECT_NEAR(f.fit.slope, f.predicted, 0.05);
  }
  EXPECT_NEAR(fit_high_freq_weight(EtaProfile{}, 2, 2, 3, 1.0, log_space(1e2, 1e4, 24)).predicted, -0.5, 1e-15);
}

TEST(WeightIntegral, DivergentBoundary) {
  EXPECT_THROW(high_freq_weight_integral(EtaProfile{}, 1.5, 2.0, 1.0, 1.0, 3), std::invalid_argument);
}
