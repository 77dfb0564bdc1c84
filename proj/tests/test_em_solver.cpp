#include <gtest/gtest.h>

#include <random>

#include "emdecay/em_solver.hpp"

using namespace emdecay;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.dims = 2;
  c.N = 64;
  c.L = 64.0 * PI;
  c.T = 2.0;
  c.init.epsilon = 1e-3;
  c.params.B_inf = Vec3(0.0, 0.0, 1.0);
  return c;
}

PerturbationField random_field(int n, std::uint64_t seed) {
  RunConfig c = small_config();
  c.N = n;
  c.init.profile = "random_band_limited";
  c.init.seed = seed;
  c.init.width = 10.0;
  c.init.v = Vec3(1.0, -0.5, 0.3);
  c.init.h = Vec3(0.2, 0.4, 1.0);
  c.init.E_solenoidal = Vec3(0.0, 0.3, 0.5);
  c.init.epsilon = 0.05;
  EmSolver s(c);
  return s.to_field(s.initial_state(), 0.0);
}

double field_norm(const GridField& g) {
  double s = 0.0;
  for (const auto& v : g.values()) s += std::norm(v);
  return std::sqrt(s * g.cell_volume());
}

}  // namespace

TEST(NonlinearTerms, VanishAtZero) {
  EulerMaxwellParams p;
  const auto s = point_sources(0.0, Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), p);
  EXPECT_EQ(s.Q.norm(), 0.0);
  EXPECT_EQ(s.R.norm(), 0.0);
}

TEST(NonlinearTerms, SourceWithoutVelocity) {
  EulerMaxwellParams p;
  p.n_inf = 1.5;
  const double rho = 0.2;
  const Vec3 e(0.3, -0.1, 2.0), h(0.5, 0.5, -0.2);
  const auto s = point_sources(rho, Vec3::Zero(), e, h, p);
  const Vec3 r2 = -rho * e;
  for (int k = 0; k < 3; ++k) EXPECT_EQ(s.R(k), r2(k) / p.n_inf);
}

TEST(NonlinearTerms, PressureRemainderAndConvection) {
  EulerMaxwellParams p;
  p.pressure_gamma = 3.0;
  p.pressure_K = 0.7;
  const double rho = 0.1, n = 1.1;
  const Vec3 v(0.2, -0.3, 0.1);
  const auto s = point_sources(rho, v, Vec3::Zero(), Vec3::Zero(), p);
  const double excess = 0.7 * (std::pow(n, 3) - 1.0) - 0.7 * 3.0 * rho;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      EXPECT_NEAR(s.Q(a, b), -v(a) * v(b) / n - (a == b ? excess : 0.0), 1e-15);
  EXPECT_THROW(point_sources(-1.5, v, Vec3::Zero(), Vec3::Zero(), p), PositivityError);
}

TEST(NonlinearTerms, QuadraticScaling) {
  const auto f = random_field(64, 3);
  std::vector<double> lam = {1e-4, 2e-4, 5e-4, 1e-3, 2e-3};
  std::vector<double> q, r;
  for (double l : lam) {
    PerturbationField g = f;
    for (auto& v : g.z.values()) v *= l;
    const auto t = nonlinear_terms(g);
    q.push_back(field_norm(t.Q));
    r.push_back(field_norm(t.R));
  }
  EXPECT_NEAR(fit_loglog(lam, q).slope, 2.0, 0.01);
  EXPECT_NEAR(fit_loglog(lam, r).slope, 2.0, 0.01);
}

TEST(InitialData, ZeroAmplitude) {
  RunConfig c = small_config();
  c.init.epsilon = 0.0;
  EmSolver s(c);
  InitialDataReport rep;
  const auto z = s.initial_state(&rep);
  EXPECT_EQ(z.norm(), 0.0);
  EXPECT_EQ(rep.divE_res, 0.0);
  EXPECT_EQ(rep.divh_res, 0.0);
}

TEST(InitialData, ConstraintsAndMeanZeroDensity) {
  for (const std::string prof : {"gaussian_bump", "multi_bump", "random_band_limited"}) {
    RunConfig c = small_config();
    c.init.profile = prof;
    c.init.width = prof == "random_band_limited" ? 10.0 : 4.0;
    c.init.h = Vec3(1.0, 0.5, 1.0);  // needs projection
    c.init.E_solenoidal = Vec3(0.3, 0.0, 0.2);
    EmSolver s(c);
    InitialDataReport rep;
    s.initial_state(&rep);
    EXPECT_LE(rep.divE_res, 1e-12 * rep.l2) << prof;
    EXPECT_LE(rep.divh_res, 1e-12 * rep.l2) << prof;
    EXPECT_NEAR(rep.rho_mean, 0.0, 1e-18) << prof;
    EXPECT_TRUE(std::isfinite(rep.l1) && rep.l1 > 0.0) << prof;
    EXPECT_TRUE(std::isfinite(rep.h3) && rep.h3 > 0.0) << prof;
    EXPECT_LE(rep.boundary_ratio, 1e-12) << prof;
  }
}

TEST(InitialData, Rejections) {
  RunConfig c = small_config();
  c.init.epsilon = 5.0;
  c.init.width = 1.0;
  EXPECT_THROW(EmSolver(c).initial_state(), PositivityError);
  c = small_config();
  c.init.width = 40.0;
  EXPECT_THROW(EmSolver(c).initial_state(), std::invalid_argument);
  c = small_config();
  c.init.profile = "square";
  EXPECT_THROW(EmSolver(c).initial_state(), std::invalid_argument);
  c = small_config();
  c.N = 48;
  EXPECT_THROW(EmSolver{c}, std::invalid_argument);
}

TEST(InitialData, L1Normalisation) {
  RunConfig c = small_config();
  c.init.l1_normalize = true;
  c.init.epsilon = 2e-3;
  EmSolver s(c);
  InitialDataReport rep;
  s.initial_state(&rep);
  EXPECT_NEAR(rep.l1, 2e-3, 1e-15);
}

TEST(Transforms, RoundTripAndParseval) {
  RunConfig c = small_config();
  EmSolver s(c);
  const auto z = s.initial_state();
  const auto f = s.to_field(z, 0.0);
  const EmSolver::State back = s.from_field(f);
  EXPECT_LT((back - z).norm(), 1e-14 * z.norm());
  EXPECT_NEAR(s.l2_norm(z), field_norm(f.z), 1e-12 * s.l2_norm(z));
}

TEST(Step, ZeroStaysZero) {
  RunConfig c = small_config();
  EmSolver s(c);
  EmSolver::State z = EmSolver::State::Zero(10, static_cast<Eigen::Index>(s.modes()));
  s.step(z);
  EXPECT_EQ(z.norm(), 0.0);
}

TEST(Step, LinearRegimeMatchesGreenMatrix) {
  RunConfig c = small_config();
  c.nonlinear = false;
  EmSolver s(c);
  const auto z0 = s.initial_state();
  EmSolver::State z = z0;
  const int steps = 2 * s.steps_per_sample();
  for (int k = 0; k < steps; ++k) s.step(z);
  const double t = steps * s.dt();
  double worst = 0.0;
  for (std::size_t m = 0; m < s.modes(); m += 7) {
    const VecC ref = green_matrix(s.system(), VecR(s.frequency(m)), t) * z0.col(static_cast<Eigen::Index>(m));
    worst = std::max(worst, (ref - z.col(static_cast<Eigen::Index>(m))).norm());
  }
  EXPECT_LE(worst, 1e-10 * z0.cwiseAbs().maxCoeff());
}

TEST(Step, FourthOrderSelfConvergence) {
  // Richardson: e(dt) / e(dt/2) with e(dt) = |z_dt - z_{dt/2}| at t = 1.
  auto solve = [](double dt) {
    RunConfig c = small_config();
    c.init.epsilon = 1e-3;
    c.init.width = 3.0;
    c.sample_dt = 1.0;
    c.dt = dt;
    EmSolver s(c);
    auto z = s.initial_state();
    for (int k = 0; k < s.steps_per_sample(); ++k) s.step(z);
    return z;
  };
  const auto a = solve(0.25), b = solve(0.125), d = solve(0.0625);
  const double order = std::log2((a - b).norm() / (b - d).norm());
  EXPECT_GE(order, 3.7) << order;
}

TEST(Simulate, ZeroAmplitudeMonitors) {
  RunConfig c = small_config();
  c.init.epsilon = 0.0;
  c.T = 1.0;
  const auto r = EmSolver(c).simulate();
  for (std::size_t i = 0; i < r.monitors.t.size(); ++i) {
    EXPECT_EQ(r.monitors.l2[i], 0.0);
    EXPECT_EQ(r.monitors.N[i], 0.0);
    EXPECT_EQ(r.monitors.D2[i], 0.0);
  }
}

TEST(Simulate, LinearRunMatchesGreenAtSamples) {
  RunConfig c = small_config();
  c.nonlinear = false;
  c.T = 3.0;
  c.spectra_subsample = 4;
  EmSolver s(c);
  const auto z0 = s.initial_state();
  const auto r = s.simulate();
  ASSERT_EQ(r.spectra.size(), 4u);
  for (const auto& h : r.spectra) {
    std::size_t m = 0;
    while ((s.frequency(m) - h.xi).norm() > 0) ++m;
    for (std::size_t i = 0; i < h.t.size(); i += 10) {
      const VecC ref = green_matrix(s.system(), VecR(h.xi), h.t[i]) * z0.col(static_cast<Eigen::Index>(m));
      EXPECT_LE((ref - h.z[i]).norm(), 1e-10 * std::max(1e-30, z0.col(static_cast<Eigen::Index>(m)).norm()));
    }
  }
}

TEST(Simulate, NonlinearRunMonitorsAndDuhamel) {
  RunConfig c = small_config();
  c.T = 6.0;
  c.spectra_subsample = 6;
  EmSolver s(c);
  const auto r = s.simulate();
  const auto& m = r.monitors;
  ASSERT_EQ(m.t.size(), 25u);
  for (std::size_t i = 1; i < m.t.size(); ++i) {
    EXPECT_GE(m.N[i], m.N[i - 1]);
    EXPECT_GE(m.D2[i], m.D2[i - 1]);
  }
  EXPECT_LE(r.max_constraint_residual, 1e-8);
  EXPECT_GT(*std::min_element(m.min_density.begin(), m.min_density.end()), 0.5);
  double n1 = 0.0;
  for (std::size_t i = 0; i < m.t.size(); ++i)
    if (m.t[i] <= 1.0) n1 = m.N[i];
  EXPECT_LE(m.N.back(), 10.0 * n1);
  // Duhamel bound on the recorded modes with searched Lyapunov parameters.
  SearchOptions o;
  o.random_checks = 20;
  const auto params = search_params(s.system(), make_xi_grid(3, 1e-2, 1e1, 12, 2, 0), o).params;
  std::vector<Vec3> xis;
  for (const auto& h : r.spectra) xis.push_back(h.xi);
  const auto k = calibrate_duhamel(s.system(), xis, params);
  const auto rep = duhamel_check(r.spectra, k, s.system().A0().cast<cplx>());
  EXPECT_TRUE(rep.violations.empty()) << rep.max_ratio;
  EXPECT_GT(rep.points, 0u);
}

TEST(Simulate, WrapWarning) {
  RunConfig c = small_config();
  c.N = 16;
  c.L = 8.0;
  c.T = 10.0;
  c.init.width = 0.5;
  const auto r = EmSolver(c).simulate();
  EXPECT_FALSE(r.warnings.empty());
}

TEST(DecayReport, SyntheticPowerLaw) {
  Monitors m;
  for (int i = 0; i <= 160; ++i) {
    const double t = 0.25 * i;
    m.t.push_back(t);
    m.l2.push_back(std::pow(1.0 + t, -0.75));
  }
  const auto r = decay_report(m, 5.0, 40.0);
  EXPECT_NEAR(r.fit.slope, -0.75, 1e-12);
  EXPECT_NEAR(r.band, 1.0, 1e-12);
  EXPECT_TRUE(r.pass);
  EXPECT_THROW(decay_report(m, 1.0, 40.0), std::invalid_argument);
}

TEST(DecayReport, SlowDecayFails) {
  Monitors m;
  for (int i = 0; i <= 160; ++i) {
    const double t = 0.25 * i;
    m.t.push_back(t);
    m.l2.push_back(std::pow(1.0 + t, -0.3));
  }
  EXPECT_FALSE(decay_report(m, 5.0, 40.0).pass);
}

TEST(GagliardoNirenberg, SingleModeEquality) {
  for (int dims : {1, 2, 3}) {
    GridField g = GridField::cube(dims, 16, 2.0 * PI);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto x = g.position(i);
      g.at(i) = std::exp(I_UNIT * (3.0 * x[0] + (dims > 1 ? -2.0 * x[1] : 0.0)));
    }
    const auto r = gn_check(g);
    EXPECT_NEAR(r.first_over_third, 1.0, 1e-13);
    EXPECT_NEAR(r.second_over_third, 1.0, 1e-13);
    EXPECT_NEAR(r.first_over_second, 1.0, 1e-13);
  }
}

TEST(GagliardoNirenberg, ScaleInvariance) {
  GridField g = random_field(64, 9).z;
  GridField one(g.dim(), g.shape(), g.box(), 1);
  for (std::size_t i = 0; i < g.size(); ++i) one.at(i) = g.at(i, em_index::V);
  const auto a = gn_check(one);
  for (auto& v : one.values()) v *= 3.7;
  const auto b = gn_check(one);
  EXPECT_NEAR(a.first_over_third, b.first_over_third, 1e-14);
  EXPECT_NEAR(a.second_over_third, b.second_over_third, 1e-14);
  EXPECT_NEAR(a.first_over_second, b.first_over_second, 1e-14);
}

TEST(GagliardoNirenberg, CorpusStableAcrossResolutions) {
  const auto coarse = gn_corpus(2, 32, 16.0 * PI, 1.0, 1000, 5);
  const auto fine = gn_corpus(2, 64, 16.0 * PI, 1.0, 1000, 5);
  EXPECT_EQ(coarse.fields, 1000u);
  EXPECT_TRUE(std::isfinite(coarse.max_ratio));
  EXPECT_LE(coarse.max_ratio, 1.0 + 1e-12);  // Hoelder in frequency
  EXPECT_NEAR(fine.max_ratio / coarse.max_ratio, 1.0, 0.05);
  EXPECT_THROW(gn_corpus(2, 8, 16.0 * PI, 1.0, 1, 0), std::invalid_argument);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = small_config();
  c.init.profile = "multi_bump";
  c.init.h = Vec3(0.1, 0.2, 0.3);
  c.T = 12.5;
  c.csv_path = "out.csv";
  const auto back = run_config_from_json(run_config_to_json(c));
  EXPECT_EQ(back.N, c.N);
  EXPECT_EQ(back.init.profile, "multi_bump");
  EXPECT_EQ((back.init.h - c.init.h).norm(), 0.0);
  EXPECT_EQ(back.T, 12.5);
  EXPECT_EQ(back.csv_path, "out.csv");
  EXPECT_EQ((back.params.B_inf - c.params.B_inf).norm(), 0.0);
  nlohmann::json j = {{"grid", {{"L", "64pi"}}}};
  EXPECT_DOUBLE_EQ(run_config_from_json(j).L, 64.0 * PI);
}

TEST(Monitors, CsvHeader) {
  Monitors m;
  m.t = {0.0};
  m.l2 = m.h3 = m.N = m.D2 = m.divE_res = m.divh_res = m.min_density = {1.0};
  const auto csv = monitors_csv(m).str();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,l2,h3,N,D2,divE_res,divh_res");
}
