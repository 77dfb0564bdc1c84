// emdecay: command-line front end.
//
//   emdecay <command> --config run.json [--seed N] [--threads N] [--out DIR]
//
// Exit status: 0 ok, 1 invalid input, 2 a numerical check failed.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "emdecay/em_solver.hpp"
#include "emdecay/fourier_energy.hpp"
#include "emdecay/general_hyp.hpp"
#include "emdecay/kernel.hpp"
#include "emdecay/system_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emdecay;

namespace {

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Context {
  json config;
  std::uint64_t seed = 0;
  fs::path out;
};

struct Outcome {
  json report;
  bool checks_passed = true;
};

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << s;
}

void write_report(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

HyperbolicSystem system_of(const json& cfg) {
  if (!cfg.contains("system")) return build_euler_maxwell(EulerMaxwellParams{});
  const json& s = cfg.at("system");
  HyperbolicSystem sys = s.is_string() ? system_from_json(read_json_file(s.get<std::string>())) : system_from_json(s);
  const auto st = check_structure(sys);
  if (!st.A0_spd) throw ValidationError("A0 must be symmetric positive definite");
  if (!st.Aj_symmetric) throw ValidationError("flux matrices A^j must be symmetric");
  if (!st.L_nonneg) throw ValidationError("symmetric part of L must be positive semidefinite");
  return sys;
}

std::vector<double> t_grid_of(const json& cfg, double lo, double hi, std::size_t count) {
  if (!cfg.contains("t_grid")) return log_space(lo, hi, count);
  const json& t = cfg.at("t_grid");
  if (t.is_array()) return t.get<std::vector<double>>();
  return log_space(t.value("t_min", lo), t.value("t_max", hi), t.value("count", count));
}

LebesgueExponent exponent_of(const json& j, const char* key, long long dflt) {
  if (!j.contains(key)) return LebesgueExponent(dflt);
  const json& v = j.at(key);
  return v.is_string() ? LebesgueExponent::parse(v.get<std::string>()) : LebesgueExponent(v.get<long long>());
}

NormSpec spec_of(const json& cfg) {
  NormSpec s;
  if (cfg.contains("spec")) {
    const json& j = cfg.at("spec");
    s.p = exponent_of(j, "p", 2);
    s.q = exponent_of(j, "q", 1);
    s.r = exponent_of(j, "r", 2);
    s.k = j.value("k", s.k);
    s.j = j.value("j", s.j);
    s.l = j.value("l", s.l);
    s.n = j.value("n", s.n);
  }
  s.validate();
  return s;
}

json spec_json(const NormSpec& s) {
  return {{"p", s.p.str()}, {"q", s.q.str()}, {"r", s.r.str()}, {"k", s.k}, {"j", s.j}, {"l", s.l}, {"n", s.n}};
}

XiGrid xi_grid_of(const json& cfg, int n, std::uint64_t seed, std::size_t radii, double lo, double hi) {
  const json g = cfg.value("xi_grid", json::object());
  return make_xi_grid(n, g.value("r_min", lo), g.value("r_max", hi), g.value("radii", radii),
                      g.value("random_directions", std::size_t{4}), seed);
}

// --- spectrum ---------------------------------------------------------------

Outcome run_spectrum(const Context& ctx) {
  const auto sys = system_of(ctx.config);
  const auto grid = xi_grid_of(ctx.config, sys.n(), ctx.seed, 200, 1e-3, 1e3);
  const EtaProfile profile;
  const std::size_t nr = grid.radii.size(), nd = grid.directions.size();
  std::vector<double> mu(nr * nd);
  parallel_for(nr * nd, [&](std::size_t idx) {
    mu[idx] = restricted_spectrum(sys, grid.point(idx % nr, idx / nr)).abscissa;
  });
  CsvWriter csv({"xi_norm", "omega_id", "re_lambda_min", "eta", "ratio"});
  double c0 = std::numeric_limits<double>::infinity(), cmax = 0.0;
  for (std::size_t d = 0; d < nd; ++d)
    for (std::size_t i = 0; i < nr; ++i) {
      const double r = grid.radii[i], m = mu[d * nr + i], e = eta(r, profile);
      csv.row({r, static_cast<double>(d), m, e, m / e});
      c0 = std::min(c0, m / e);
      cmax = std::max(cmax, m / e);
    }
  const double decades = std::log10(grid.radii.back() / grid.radii.front());
  const std::size_t span = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(nr / decades)) + 1);
  double lo_min = 1e300, lo_max = -1e300, hi_min = 1e300, hi_max = -1e300;
  for (std::size_t d = 0; d < nd; ++d) {
    std::vector<double> r(grid.radii.begin(), grid.radii.end()), m(mu.begin() + static_cast<long>(d * nr),
                                                                    mu.begin() + static_cast<long>((d + 1) * nr));
    if (*std::min_element(m.begin(), m.end()) <= 0.0) continue;
    const auto lo = fit_loglog({r.begin(), r.begin() + static_cast<long>(span)}, {m.begin(), m.begin() + static_cast<long>(span)});
    const auto hi = fit_loglog({r.end() - static_cast<long>(span), r.end()}, {m.end() - static_cast<long>(span), m.end()});
    lo_min = std::min(lo_min, lo.slope);
    lo_max = std::max(lo_max, lo.slope);
    hi_min = std::min(hi_min, hi.slope);
    hi_max = std::max(hi_max, hi.slope);
  }
  write_text(ctx.out / "spectrum.csv", csv.str());
  const bool pass = c0 > 0.0 && std::abs(lo_min - 2.0) <= 0.15 && std::abs(lo_max - 2.0) <= 0.15 &&
                    std::abs(hi_min + 2.0) <= 0.15 && std::abs(hi_max + 2.0) <= 0.15;
  json j = {{"command", "spectrum"},
            {"paper_anchor", "pointwise dissipative margin Re lambda(xi) >= c0 eta(xi) on the constraint subspace"},
            {"grid", {{"r_min", json_num(grid.radii.front())}, {"r_max", json_num(grid.radii.back())},
                      {"radii", nr}, {"directions", nd}, {"rows", nr * nd}}},
            {"c0", json_num(c0)},
            {"ratio_max", json_num(cmax)},
            {"low_slope", {json_num(lo_min), json_num(lo_max)}},
            {"high_slope", {json_num(hi_min), json_num(hi_max)}},
            {"expected", {{"low_slope", 2}, {"high_slope", -2}, {"tolerance", 0.15}}},
            {"verdict", pass ? "pass" : "fail"}};
  write_report(ctx.out / "spectrum.json", j);
  return {j, pass};
}

// --- lyapunov ---------------------------------------------------------------

Outcome run_lyapunov(const Context& ctx) {
  const auto sys = system_of(ctx.config);
  if (sys.m() != em_index::SIZE || sys.n() != 3)
    throw ValidationError("lyapunov needs the Euler-Maxwell system (the functional is specific to it)");
  const auto grid = xi_grid_of(ctx.config, 3, ctx.seed, 24, 1e-3, 1e3);
  SearchOptions opt;
  opt.seed = ctx.seed;
  opt.random_checks = ctx.config.value("random_checks", opt.random_checks);
  if (ctx.config.contains("alpha1_candidates"))
    opt.alpha1_candidates = ctx.config.at("alpha1_candidates").get<std::vector<double>>();
  if (ctx.config.contains("alpha2_candidates"))
    opt.alpha2_candidates = ctx.config.at("alpha2_candidates").get<std::vector<double>>();
  json j;
  try {
    const auto res = search_params(sys, grid, opt);
    std::optional<PointwiseReport> pw;
    if (ctx.config.value("pointwise", true)) {
      const auto pgrid = make_xi_grid(3, 1e-2, 1e2, 41, 8, ctx.seed);
      pw = pointwise_check(sys, pgrid, log_space(1e-2, 1e3, 16), 8, ctx.seed);
    }
    j = search_json(res, grid, pw ? &*pw : nullptr);
    j["verdict"] = res.feasible ? "pass" : "fail";
  } catch (const SearchInfeasible& e) {
    const auto& v = e.violation();
    j = {{"verdict", "fail"},
         {"error", e.what()},
         {"violation", {{"xi", vec_json(v.xi)}, {"what", v.what}, {"value", json_num(v.value)}}}};
  }
  j["command"] = "lyapunov";
  j["paper_anchor"] = "frequency-wise Lyapunov functional: equivalence to |z|^2 and dE/dt + c1 eta E <= 0";
  write_report(ctx.out / "lyapunov.json", j);
  return {j, j["verdict"] == "pass"};
}

// --- lpqlr ------------------------------------------------------------------

RadialDatum radial_datum_of(const json& d, const NormSpec& s) {
  const std::string kind = d.value("kind", "gaussian");
  if (kind == "gaussian") return RadialDatum::gaussian(s.n, d.value("width", 3.0));
  if (kind == "bessel_potential") {
    // Order chosen so the datum sits just inside the required regularity.
    const double delta = d.value("delta", 0.02);
    const double base = s.r.reciprocal() == Rational(1, 2) ? s.k + s.l + 0.5 * s.n : s.k + s.l;
    return RadialDatum::bessel_potential(s.n, d.value("order", base + delta));
  }
  throw ValidationError("unknown datum kind: " + kind);
}

GridField gaussian_sample(int n, double width) {
  static const int points[] = {0, 1024, 256, 128};
  const double len = 32.0 * PI;
  return GridField::sample(n, std::vector<int>(static_cast<std::size_t>(n), points[n]),
                           std::vector<double>(static_cast<std::size_t>(n), len), [width](const auto& x) {
                             return cplx(std::exp(-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (2 * width * width)), 0.0);
                           });
}

Outcome run_lpqlr(const Context& ctx) {
  const NormSpec spec = spec_of(ctx.config);
  EtaProfile profile;
  if (ctx.config.contains("profile"))
    profile = EtaProfile(ctx.config.at("profile").value("a", 1), ctx.config.at("profile").value("b", 2));
  LpqlrOptions opt;
  opt.R0 = ctx.config.value("R0", opt.R0);
  const auto tg = t_grid_of(ctx.config, 10.0, 1e3, 24);
  opt.fit_t0 = tg.front();
  opt.fit_t1 = tg.back();
  const json datum = ctx.config.value("datum", json{{"kind", "gaussian"}, {"width", 3.0}});
  if (datum.value("kind", "gaussian") != "gaussian") throw ValidationError("main datum must be a gaussian");
  const double width = datum.value("width", 3.0);
  const GridField g = gaussian_sample(spec.n, width);
  const double data_low = derivative_lp_norm(g, spec.j, spec.q.value());
  const double data_high = derivative_lp_norm(g, spec.k + spec.l, spec.r.value());
  const auto rep = verify_lpqlr(radial_datum_of(datum, spec), data_low, data_high, spec, profile, tg, opt);
  write_text(ctx.out / "lpqlr.csv", lpqlr_csv(rep).str());
  json j = lpqlr_json(rep);
  const double low_pred = to_double(rep.prediction.low_exp), high_pred = to_double(rep.prediction.high_exp);
  const bool low_ok = rep.low_fit && std::abs(rep.low_fit->slope - low_pred) <= 0.05;
  bool high_ok = true;
  json high_j = nullptr;
  if (ctx.config.contains("high_datum")) {
    const auto hd = radial_datum_of(ctx.config.at("high_datum"), spec);
    const auto hrep = verify_lpqlr(hd, 1.0, 1.0, spec, profile, tg, opt);
    high_ok = hrep.high_fit && std::abs(hrep.high_fit->slope - high_pred) <= 0.1;
    high_j = {{"route", hrep.route}, {"high_fit", part_fit_json(hrep.high_fit)}};
  }
  const bool pass = low_ok && high_ok && std::isfinite(rep.c_star);
  j["high_datum"] = high_j;
  j["verdict"] = {{"low_fit", rep.low_fit ? json_num(rep.low_fit->slope) : json(nullptr)},
                  {"high_fit", high_j.is_null() ? json(nullptr) : high_j["high_fit"]["slope"]},
                  {"C_star_finite", std::isfinite(rep.c_star)},
                  {"tolerances", {{"low", 0.05}, {"high", 0.1}}},
                  {"status", pass ? "pass" : "fail"}};
  j["command"] = "lpqlr";
  j["paper_anchor"] = "Lp-Lq-Lr decay estimate for the regularity-loss kernel |xi|^k exp(-eta t)";
  write_report(ctx.out / "lpqlr.json", j);
  return {j, pass};
}

// --- simulate ---------------------------------------------------------------

Outcome run_simulate(const Context& ctx) {
  RunConfig cfg = run_config_from_json(ctx.config);
  if (ctx.config.contains("seed") || ctx.seed) cfg.init.seed = ctx.seed;
  try {
    validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  const fs::path csv_path = cfg.csv_path.empty() ? ctx.out / "monitors.csv" : ctx.out / cfg.csv_path;
  const fs::path json_path = cfg.json_path.empty() ? ctx.out / "simulate.json" : ctx.out / cfg.json_path;
  EmSolver solver(cfg);
  SimulationResult res;
  json j;
  bool pass = true;
  try {
    res = solver.simulate();
  } catch (const PositivityError& e) {
    j = {{"error", e.what()}, {"min_density", json_num(e.min_density())}, {"verdict", "fail"}};
    pass = false;
  } catch (const BlowUpError& e) {
    j = {{"error", e.what()}, {"verdict", "fail"}};
    pass = false;
  }
  if (pass) {
    write_text(csv_path, monitors_csv(res.monitors).str());
    const json an = ctx.config.value("analysis", json::object());
    const double t1 = an.value("t1", std::min(cfg.T, 0.9 * res.wrap_time));
    std::optional<DecayReport> dr;
    try {
      dr = decay_report(res.monitors, an.value("t0", 5.0), t1, an.value("slope_max", -0.6), an.value("band_max", 4.0));
    } catch (const std::invalid_argument& e) {
      throw ValidationError(e.what());
    }
    j = simulation_json(cfg, res, dr);
    double n1 = res.monitors.N.front();
    for (std::size_t i = 0; i < res.monitors.t.size(); ++i)
      if (res.monitors.t[i] <= 1.0 + 1e-12) n1 = res.monitors.N[i];
    const bool bounded = res.monitors.N.back() <= 10.0 * n1;
    const bool constraints = res.max_constraint_residual <= 1e-8;
    pass = dr->pass && bounded && constraints;
    j["checks"] = {{"decay", dr->pass}, {"N_bounded", bounded}, {"constraints", constraints}};
    j["verdict"] = pass ? "pass" : "fail";
  }
  j["command"] = "simulate";
  j["paper_anchor"] = "nonlinear L2 decay (1+t)^(-3/4) with bounded time-weighted energy N(t)";
  write_report(json_path, j);
  return {j, pass};
}

// --- appendix ---------------------------------------------------------------

Outcome run_appendix(const Context& ctx) {
  const auto sys = system_of(ctx.config);
  NormSpec spec = spec_of(ctx.config);
  if (spec.n != sys.n()) throw ValidationError("spec.n must equal the system dimension");
  json j = {{"command", "appendix"},
            {"paper_anchor", "constraint splitting Pi1/Pi2 and the Lp decay property of general constrained systems"}};
  bool pass = true;
  if (sys.has_constraints()) {
    const auto split = constraint_split(sys);
    const double res = split_residuals(split).max();
    j["split"] = {{"rank", split.rank}, {"Pi1", matrix_to_json(split.Pi1)}, {"identity_residual", json_num(res)}};
    pass = pass && res <= 1e-12;
  }
  const json d = ctx.config.value("datum", json::object());
  const double width = d.value("width", 3.0);
  VecC weights = VecC::Ones(sys.m());
  if (d.contains("weights")) {
    const auto w = d.at("weights").get<std::vector<double>>();
    if (static_cast<int>(w.size()) != sys.m()) throw ValidationError("datum.weights needs m entries");
    for (int c = 0; c < sys.m(); ++c) weights(c) = w[static_cast<std::size_t>(c)];
  }
  // Constraint-projected Gaussian: w0_hat(xi) = P(xi) a exp(-width^2 |xi|^2 / 2).
  auto w_hat = [&sys, weights, width](const VecR& xi) -> VecC {
    const double g = std::exp(-0.5 * width * width * xi.squaredNorm());
    if (!sys.has_constraints()) return weights * g;
    return constraint_subspace(sys, xi).projector * weights * g;
  };
  // Data norms on a box sample of the same datum.
  static const int points[] = {0, 1024, 256, 64};
  const int n = sys.n();
  GridField sample(n, std::vector<int>(static_cast<std::size_t>(n), points[n]),
                   std::vector<double>(static_cast<std::size_t>(n), 32.0 * PI), sys.m(), Space::spectral);
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto f = sample.frequency(i);
    VecR xi(n);
    for (int a = 0; a < n; ++a) xi(a) = f[static_cast<std::size_t>(a)];
    const VecC w = xi.norm() > 0.0 ? w_hat(xi) : VecC(VecC::Zero(sys.m()));
    for (int c = 0; c < sys.m(); ++c) sample.at(i, c) = w(c);
  }
  const GridField phys = to_physical(sample);
  const double data_low = derivative_lp_norm(phys, spec.j, spec.q.value());
  const double data_high = derivative_lp_norm(phys, spec.k + spec.l, spec.r.value());
  DecayPropertyOptions opt;
  const auto tg = t_grid_of(ctx.config, 10.0, 1e3, 24);
  opt.fit_t0 = tg.front();
  opt.fit_t1 = tg.back();
  DecayPropertyReport rep;
  QuadratureOptions quad;
  if (ctx.config.contains("quadrature")) {
    const json& q = ctx.config.at("quadrature");
    quad.panels_per_decade = q.value("panels_per_decade", quad.panels_per_decade);
    quad.polar_nodes = q.value("polar_nodes", quad.polar_nodes);
    quad.azimuth_nodes = q.value("azimuth_nodes", quad.azimuth_nodes);
  }
  try {
    if (spec.p.reciprocal() == Rational(1, 2)) {
      rep = verify_decay_property(sys, SpectralDatum{n, w_hat, "projected_gaussian"}, data_low, data_high, spec, tg,
                                  opt, quad);
    } else {
      rep = verify_decay_property(sys, phys, spec, tg, opt);
    }
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  write_text(ctx.out / "appendix.csv", decay_property_csv(rep).str());
  j["decay_property"] = decay_property_json(rep);
  pass = pass && rep.persistence_ok;
  std::string status = "not_applicable";
  if (rep.prediction && rep.fit) {
    const bool rate_ok = std::abs(rep.fit->slope - to_double(rep.prediction->low_exp)) <= 0.1;
    pass = pass && rate_ok;
    status = rate_ok ? "pass" : "fail";
  }
  if (!rep.persistence_ok) status = "fail";
  j["verdict"] = {{"status", pass ? status : "fail"}, {"rate_tolerance", 0.1}, {"persistence_tolerance", 1e-9}};
  write_report(ctx.out / "appendix.json", j);
  return {j, pass};
}

// --- report -----------------------------------------------------------------

Outcome run_report(const Context& ctx) {
  std::vector<std::string> names = {"spectrum.json", "lyapunov.json", "lpqlr.json", "simulate.json", "appendix.json"};
  if (ctx.config.contains("inputs")) names = ctx.config.at("inputs").get<std::vector<std::string>>();
  json entries = json::array();
  std::ostringstream md;
  md << "# emdecay summary\n\n| output | checks | verdict |\n|---|---|---|\n";
  bool pass = true;
  for (const auto& name : names) {
    const fs::path p = ctx.out / name;
    if (!fs::exists(p)) {
      if (ctx.config.contains("inputs")) throw ValidationError("missing input " + p.string());
      continue;
    }
    const json r = read_json_file(p.string());
    std::string verdict = "unknown";
    if (r.contains("verdict")) {
      const json& v = r.at("verdict");
      verdict = v.is_string() ? v.get<std::string>() : v.value("status", std::string("unknown"));
    }
    pass = pass && verdict != "fail";
    const std::string anchor = r.value("paper_anchor", std::string("(none)"));
    entries.push_back({{"file", name}, {"command", r.value("command", std::string())}, {"paper_anchor", anchor},
                       {"verdict", verdict}});
    md << "| " << name << " | " << anchor << " | " << verdict << " |\n";
  }
  json j = {{"command", "report"},
            {"paper_anchor", "summary mapping each artifact to the statement it checks"},
            {"entries", entries},
            {"verdict", pass ? "pass" : "fail"}};
  write_text(ctx.out / "report.md", md.str());
  write_report(ctx.out / "report.json", j);
  return {j, true};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decay checks for dissipative hyperbolic systems of regularity-loss type"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::string out = ".";
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "64-bit seed (overrides the config)");
  app.add_option("--threads", threads, "worker threads (0 = hardware)");
  app.add_option("--out", out, "output directory");
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"spectrum", "restricted spectral abscissa scan"},
      {"lyapunov", "Lyapunov parameter search"},
      {"lpqlr", "kernel Lp-Lq-Lr bound verification"},
      {"simulate", "nonlinear pseudo-spectral run"},
      {"appendix", "constraint split and decay property"},
      {"report", "merge reports in the output directory"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n";
    std::cerr << json{{"status", "validation_error"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Context ctx;
    if (config_path.empty()) {
      if (command != "report") throw ValidationError("--config is required");
      ctx.config = json::object();
    } else {
      ctx.config = read_json_file(config_path);
    }
    if (!ctx.config.is_object()) throw ValidationError("config must be a JSON object");
    if (ctx.config.contains("command") && ctx.config.at("command") != command)
      throw ValidationError("config is for command '" + ctx.config.at("command").get<std::string>() + "'");
    ctx.seed = seed ? *seed : ctx.config.value("seed", std::uint64_t{0});
    ctx.out = out;
    fs::create_directories(ctx.out);
    set_thread_count(threads);
    Outcome r;
    if (command == "spectrum") r = run_spectrum(ctx);
    else if (command == "lyapunov") r = run_lyapunov(ctx);
    else if (command == "lpqlr") r = run_lpqlr(ctx);
    else if (command == "simulate") r = run_simulate(ctx);
    else if (command == "appendix") r = run_appendix(ctx);
    else r = run_report(ctx);
    if (!r.checks_passed) {
      std::cerr << json{{"status", "check_failed"}, {"command", command}, {"verdict", r.report.value("verdict", json())}}.dump()
                << "\n";
      return 2;
    }
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << json{{"status", "validation_error"}, {"command", command}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << json{{"status", "validation_error"}, {"command", command}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << json{{"status", "validation_error"}, {"command", command}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"status", "check_failed"}, {"command", command}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }
}
