#pragma once

// General constrained dissipative systems: the image/complement split of
// the constraint, detection of the (a, b) dissipation profile from the
// restricted spectrum, and empirical checks of the resulting L^p decay
// estimate along the exact Green evolution.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "emdecay/decay.hpp"
#include "emdecay/fit.hpp"
#include "emdecay/grid_field.hpp"
#include "emdecay/kernel.hpp"
#include "emdecay/parallel.hpp"
#include "emdecay/report.hpp"
#include "emdecay/system.hpp"

namespace emdecay {

struct ConstraintSplit {
  MatR Pi1;    // orthogonal projector onto Image(R)
  MatR Pi2;    // I - Pi1
  MatR image;  // orthonormal basis of Image(R)
  int rank = 0;
};

struct SplitResiduals {
  double idempotent = 0.0;  // |Pi1^2 - Pi1|
  double symmetric = 0.0;   // |Pi1^T - Pi1|
  double orthogonal = 0.0;  // |Pi1 Pi2|
  double complete = 0.0;    // |Pi1 + Pi2 - I|
  double max() const { return std::max({idempotent, symmetric, orthogonal, complete}); }
};

/// Rank threshold 1e-10 relative to the largest singular value of R.
inline ConstraintSplit constraint_split(const std::vector<MatR>& Q, const MatR& R) {
  for (const auto& q : Q)
    if (q.rows() != R.rows()) throw std::invalid_argument("Q^j and R must have the same row count");
  const auto m1 = R.rows();
  ConstraintSplit s;
  s.image = column_space(R, 1e-10);
  s.rank = static_cast<int>(s.image.cols());
  s.Pi1 = s.rank ? MatR(s.image * s.image.transpose()) : MatR::Zero(m1, m1);
  s.Pi2 = MatR::Identity(m1, m1) - s.Pi1;
  return s;
}

inline ConstraintSplit constraint_split(const HyperbolicSystem& sys) {
  if (!sys.has_constraints()) throw std::invalid_argument("system has no constraints");
  return constraint_split(sys.constraints()->Q, sys.constraints()->R);
}

inline SplitResiduals split_residuals(const ConstraintSplit& s) {
  const auto m1 = s.Pi1.rows();
  SplitResiduals r;
  r.idempotent = (s.Pi1 * s.Pi1 - s.Pi1).norm();
  r.symmetric = (s.Pi1.transpose() - s.Pi1).norm();
  r.orthogonal = (s.Pi1 * s.Pi2).norm();
  r.complete = (s.Pi1 + s.Pi2 - MatR::Identity(m1, m1)).norm();
  return r;
}

// ---------------------------------------------------------------------------
// Dissipation profile mu(xi) ~ |xi|^{2a} / (1 + |xi|^2)^b, read off the
// restricted spectral abscissa.

struct ProfileFit {
  bool applicable = false;
  std::string reason;
  EtaProfile profile;
  double low_slope = 0.0, high_slope = 0.0;      // mean over directions
  double low_spread = 0.0, high_spread = 0.0;    // max - min over directions
  double c_min = 0.0, c_max = 0.0;               // range of mu / eta over the scan
  double min_abscissa = 0.0;
};

inline ProfileFit fit_profile(const HyperbolicSystem& sys, std::size_t directions = 14, std::uint64_t seed = 0,
                              double r_min = 1e-2, double r_max = 1e2, std::size_t radii = 41,
                              double slope_tol = 0.25) {
  const auto dirs = direction_set(sys.n(), directions > 6 ? directions - 6 : 0, seed);
  const auto rs = log_space(r_min, r_max, radii);
  const std::size_t decade = std::max<std::size_t>(3, radii / static_cast<std::size_t>(std::log10(r_max / r_min)));
  std::vector<std::vector<double>> mu(dirs.size(), std::vector<double>(rs.size()));
  parallel_for(dirs.size() * rs.size(), [&](std::size_t idx) {
    const std::size_t d = idx / rs.size(), i = idx % rs.size();
    mu[d][i] = restricted_spectrum(sys, VecR(rs[i] * dirs[d])).abscissa;
  });
  ProfileFit out;
  out.min_abscissa = std::numeric_limits<double>::infinity();
  for (const auto& row : mu)
    for (double v : row) out.min_abscissa = std::min(out.min_abscissa, v);
  if (!(out.min_abscissa > 1e-14)) {
    out.reason = "restricted spectral abscissa is not positive away from the origin";
    return out;
  }
  std::vector<double> lo, hi;
  for (const auto& row : mu) {
    const std::vector<double> rl(rs.begin(), rs.begin() + static_cast<long>(decade));
    const std::vector<double> ml(row.begin(), row.begin() + static_cast<long>(decade));
    const std::vector<double> rh(rs.end() - static_cast<long>(decade), rs.end());
    const std::vector<double> mh(row.end() - static_cast<long>(decade), row.end());
    lo.push_back(fit_loglog(rl, ml).slope);
    hi.push_back(fit_loglog(rh, mh).slope);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  out.low_slope = mean(lo);
  out.high_slope = mean(hi);
  out.low_spread = *std::max_element(lo.begin(), lo.end()) - *std::min_element(lo.begin(), lo.end());
  out.high_spread = *std::max_element(hi.begin(), hi.end()) - *std::min_element(hi.begin(), hi.end());
  const double a2 = std::round(out.low_slope / 2.0) * 2.0, g2 = std::round(-out.high_slope / 2.0) * 2.0;
  if (std::abs(out.low_slope - a2) > slope_tol || std::abs(out.high_slope + g2) > slope_tol ||
      out.low_spread > 2 * slope_tol || out.high_spread > 2 * slope_tol) {
    out.reason = "margin exponents are not even integers uniformly in direction";
    return out;
  }
  const int a = static_cast<int>(a2 / 2), gap = static_cast<int>(g2 / 2);
  if (a < 1) {
    out.reason = "no low-frequency degeneracy (strongly dissipative); outside the (a, b) family";
    return out;
  }
  if (gap < 1) {
    out.reason = "no high-frequency loss (b = a); estimate has no regularity-loss part";
    return out;
  }
  out.profile = EtaProfile(a, a + gap);
  out.c_min = std::numeric_limits<double>::infinity();
  for (std::size_t d = 0; d < dirs.size(); ++d)
    for (std::size_t i = 0; i < rs.size(); ++i) {
      const double c = mu[d][i] / eta(rs[i], out.profile);
      out.c_min = std::min(out.c_min, c);
      out.c_max = std::max(out.c_max, c);
    }
  out.applicable = true;
  return out;
}

// ---------------------------------------------------------------------------
// Decay property along the Green evolution.

struct DecayPropertyOptions {
  double fit_t0 = 10.0;
  double fit_t1 = 1e3;
  double constraint_tol = 1e-10;      // admissibility of w0
  double persistence_tol = 1e-9;      // along the evolution
  std::optional<EtaProfile> profile;  // skip detection when given
};

struct DecayPropertyRow {
  double t = 0.0;
  double lhs = 0.0;
  double rhs_low = 0.0, rhs_high = 0.0;
  double ratio = 0.0;
  double constraint_residual = 0.0;  // relative to |w0_hat|
};

struct DecayPropertyReport {
  NormSpec spec;
  ProfileFit profile;
  std::optional<DecayPrediction> prediction;
  std::string route;
  double data_low = 0.0, data_high = 0.0;
  std::vector<DecayPropertyRow> rows;
  double C = 0.0;  // max lhs / rhs over the t-grid
  std::optional<FitResult> fit;
  double max_constraint_residual = 0.0;
  bool persistence_ok = true;
  // The functional E(t, xi) ~ |w_hat|^2 has no construction for general
  // systems; the dissipative inequality is certified through the restricted
  // spectral abscissa instead.
  std::string certification = "restricted spectral abscissa (no constructed energy functional)";
};

namespace detail {

inline void finish_decay_report(DecayPropertyReport& rep, const DecayPropertyOptions& opt) {
  std::vector<std::pair<double, double>> series;
  for (auto& row : rep.rows) {
    if (rep.prediction) {
      row.rhs_low = std::pow(1.0 + row.t, to_double(rep.prediction->low_exp)) * rep.data_low;
      row.rhs_high = std::pow(1.0 + row.t, to_double(rep.prediction->high_exp)) * rep.data_high;
      const double rhs = row.rhs_low + row.rhs_high;
      row.ratio = rhs > 0.0 ? row.lhs / rhs : (row.lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
      rep.C = std::max(rep.C, row.ratio);
    }
    rep.max_constraint_residual = std::max(rep.max_constraint_residual, row.constraint_residual);
    series.emplace_back(row.t, row.lhs);
  }
  rep.persistence_ok = rep.max_constraint_residual <= opt.persistence_tol;
  try {
    rep.fit = fit_exponent(series, opt.fit_t0, opt.fit_t1, 4);
  } catch (const std::invalid_argument&) {
    rep.fit.reset();
  }
}

inline void prepare(DecayPropertyReport& rep, const HyperbolicSystem& sys, const NormSpec& spec,
                    const std::vector<double>& t_grid, const DecayPropertyOptions& opt) {
  spec.validate();
  if (spec.n != sys.n()) throw std::invalid_argument("spec.n differs from the system dimension");
  check_t_grid(t_grid);
  const auto st = check_structure(sys);
  if (!st.A0_spd || !st.Aj_symmetric || !st.L_nonneg)
    throw std::invalid_argument("system fails the structural minima (A0 spd, A^j symmetric, L1 >= 0)");
  rep.spec = spec;
  if (opt.profile) {
    rep.profile.applicable = true;
    rep.profile.profile = *opt.profile;
  } else {
    rep.profile = fit_profile(sys);
  }
  if (rep.profile.applicable) rep.prediction = predict(spec, rep.profile.profile);
}

inline double constraint_defect(const HyperbolicSystem& sys, const VecR& xi, const VecC& w) {
  return sys.has_constraints() ? (constraint_symbol(sys, xi) * w).squaredNorm() : 0.0;
}

}  // namespace detail

/// Grid route: w0 is a physical field with sys.m() components on a periodic
/// box; every mode is evolved by its Green matrix and norms are Riemann sums.
inline DecayPropertyReport verify_decay_property(const HyperbolicSystem& sys, const GridField& w0,
                                                 const NormSpec& spec, const std::vector<double>& t_grid,
                                                 const DecayPropertyOptions& opt = {}) {
  DecayPropertyReport rep;
  detail::prepare(rep, sys, spec, t_grid, opt);
  if (w0.dim() != sys.n() || w0.components() != sys.m())
    throw std::invalid_argument("initial field must have the system's dimension and component count");
  rep.route = "grid";
  rep.data_low = derivative_lp_norm(w0, spec.j, spec.q.value());
  rep.data_high = derivative_lp_norm(w0, spec.k + spec.l, spec.r.value());
  const GridField hat = to_spectral(w0);
  const std::size_t modes = hat.size();
  const int m = sys.m();
  std::vector<VecR> xis(modes);
  std::vector<VecC> w_hat(modes);
  double total = 0.0, defect = 0.0;
  for (std::size_t i = 0; i < modes; ++i) {
    const auto f = hat.frequency(i);
    xis[i] = VecR(sys.n());
    for (int a = 0; a < sys.n(); ++a) xis[i](a) = f[static_cast<std::size_t>(a)];
    w_hat[i] = VecC(m);
    for (int c = 0; c < m; ++c) w_hat[i](c) = hat.at(i, c);
    total += w_hat[i].squaredNorm();
    defect += detail::constraint_defect(sys, xis[i], w_hat[i]);
  }
  if (total > 0.0 && std::sqrt(defect / total) > opt.constraint_tol)
    throw std::invalid_argument("initial data violates the constraint (relative residual " +
                                fmt_num(std::sqrt(defect / total)) + ")");
  std::vector<GreenFactor> green;
  green.reserve(modes);
  for (std::size_t i = 0; i < modes; ++i) green.emplace_back(sys, xis[i]);
  rep.rows.resize(t_grid.size());
  for (std::size_t it = 0; it < t_grid.size(); ++it) {
    const double t = t_grid[it];
    GridField ev = hat;
    std::vector<double> def(modes, 0.0);
    parallel_for(modes, [&](std::size_t i) {
      const VecC w = green[i].at(t) * w_hat[i];
      def[i] = detail::constraint_defect(sys, xis[i], w);
      const double scale = spec.k == 0 ? 1.0 : std::pow(xis[i].norm(), spec.k);
      for (int c = 0; c < m; ++c) ev.at(i, c) = scale * w(c);
    });
    DecayPropertyRow row;
    row.t = t;
    row.lhs = lp_norm(to_physical(std::move(ev)), spec.p.value());
    double d = 0.0;
    for (double v : def) d += v;
    row.constraint_residual = total > 0.0 ? std::sqrt(d / total) : 0.0;
    rep.rows[it] = row;
  }
  detail::finish_decay_report(rep, opt);
  return rep;
}

/// Initial datum on the whole space given through its transform.
struct SpectralDatum {
  int n = 3;
  std::function<VecC(const VecR&)> w_hat;
  std::string label;
};

struct QuadratureOptions {
  double r_min = 1e-5;
  double r_max = 1e3;
  int panels_per_decade = 2;
  int polar_nodes = 12;    // Gauss-Legendre in cos(theta), n = 3
  int azimuth_nodes = 24;  // trapezoid in phi, n = 2, 3
};

namespace detail {

struct QuadNode {
  VecR xi;
  double weight;  // includes r^{n-1} dr and the angular measure
};

/// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch).
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int count) {
  MatR J = MatR::Zero(count, count);
  for (int i = 1; i < count; ++i) J(i, i - 1) = J(i - 1, i) = i / std::sqrt(4.0 * i * i - 1.0);
  Eigen::SelfAdjointEigenSolver<MatR> es(J);
  std::pair<std::vector<double>, std::vector<double>> out;
  for (int i = 0; i < count; ++i) {
    out.first.push_back(es.eigenvalues()(i));
    out.second.push_back(2.0 * es.eigenvectors()(0, i) * es.eigenvectors()(0, i));
  }
  return out;
}

inline std::vector<QuadNode> whole_space_nodes(int n, const QuadratureOptions& q) {
  using GL = boost::math::quadrature::gauss<double, 8>;
  std::vector<double> r, wr;
  const double decades = std::log10(q.r_max / q.r_min);
  const int panels = std::max(1, static_cast<int>(std::ceil(decades * q.panels_per_decade)));
  const double step = std::log(q.r_max / q.r_min) / panels;
  auto push = [&](double lo, double hi) {
    const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
    auto add = [&](double x, double w) {
      r.push_back(c + h * x);
      wr.push_back(h * w * std::pow(c + h * x, n - 1));
    };
    const auto& xs = GL::abscissa();
    const auto& ws = GL::weights();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      add(xs[i], ws[i]);
      if (xs[i] != 0.0) add(-xs[i], ws[i]);
    }
  };
  for (int p = 0; p < panels; ++p)
    push(q.r_min * std::exp(p * step), q.r_min * std::exp((p + 1) * step));
  std::vector<std::pair<VecR, double>> dirs;
  if (n == 1) {
    dirs = {{VecR::Constant(1, 1.0), 1.0}, {VecR::Constant(1, -1.0), 1.0}};
  } else if (n == 2) {
    for (int k = 0; k < q.azimuth_nodes; ++k) {
      const double ph = 2.0 * PI * k / q.azimuth_nodes;
      VecR d(2);
      d << std::cos(ph), std::sin(ph);
      dirs.emplace_back(d, 2.0 * PI / q.azimuth_nodes);
    }
  } else {
    const auto rule = gauss_legendre(q.polar_nodes);
    for (std::size_t i = 0; i < rule.first.size(); ++i) {
      const double ct = rule.first[i], st = std::sqrt(1.0 - ct * ct);
      for (int k = 0; k < q.azimuth_nodes; ++k) {
        const double ph = 2.0 * PI * (k + 0.5) / q.azimuth_nodes;
        VecR d(3);
        d << st * std::cos(ph), st * std::sin(ph), ct;
        dirs.emplace_back(d, rule.second[i] * 2.0 * PI / q.azimuth_nodes);
      }
    }
  }
  std::vector<QuadNode> out;
  out.reserve(r.size() * dirs.size());
  for (std::size_t i = 0; i < r.size(); ++i)
    for (const auto& [d, w] : dirs) out.push_back({r[i] * d, wr[i] * w});
  return out;
}

}  // namespace detail

/// Whole-space route (p = 2): |d^k w(t)|_2^2 = (2 pi)^{-n} int |xi|^{2k} |G(t, xi) w0_hat|^2 dxi
/// by product quadrature. Data norms come from the caller.
inline DecayPropertyReport verify_decay_property(const HyperbolicSystem& sys, const SpectralDatum& datum,
                                                 double data_low, double data_high, const NormSpec& spec,
                                                 const std::vector<double>& t_grid,
                                                 const DecayPropertyOptions& opt = {},
                                                 const QuadratureOptions& quad = {}) {
  DecayPropertyReport rep;
  detail::prepare(rep, sys, spec, t_grid, opt);
  if (datum.n != sys.n()) throw std::invalid_argument("datum dimension differs from the system");
  if (spec.p.reciprocal() != Rational(1, 2)) throw std::invalid_argument("whole-space route supports p = 2 only");
  rep.route = "whole_space:" + datum.label;
  rep.data_low = data_low;
  rep.data_high = data_high;
  const auto nodes = detail::whole_space_nodes(sys.n(), quad);
  std::vector<VecC> w0(nodes.size());
  std::vector<std::optional<GreenFactor>> green(nodes.size());
  double total = 0.0, worst_defect = 0.0;
  parallel_for(nodes.size(), [&](std::size_t i) {
    w0[i] = datum.w_hat(nodes[i].xi);
    green[i].emplace(sys, nodes[i].xi);
  });
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double w2 = w0[i].squaredNorm();
    total += nodes[i].weight * w2;
    if (w2 > 0.0) worst_defect = std::max(worst_defect, std::sqrt(detail::constraint_defect(sys, nodes[i].xi, w0[i]) / w2));
  }
  if (worst_defect > opt.constraint_tol)
    throw std::invalid_argument("initial datum violates the constraint (relative residual " + fmt_num(worst_defect) + ")");
  const double coef = std::pow(2.0 * PI, -sys.n());
  rep.rows.resize(t_grid.size());
  for (std::size_t it = 0; it < t_grid.size(); ++it) {
    const double t = t_grid[it];
    std::vector<double> mass(nodes.size()), def(nodes.size());
    parallel_for(nodes.size(), [&](std::size_t i) {
      const VecC w = green[i]->at(t) * w0[i];
      const double r = nodes[i].xi.norm();
      mass[i] = nodes[i].weight * (spec.k == 0 ? 1.0 : std::pow(r, 2 * spec.k)) * w.squaredNorm();
      const double w2 = w0[i].squaredNorm();
      def[i] = w2 > 0.0 ? std::sqrt(detail::constraint_defect(sys, nodes[i].xi, w) / w2) : 0.0;
    });
    DecayPropertyRow row;
    row.t = t;
    double s = 0.0;
    for (double v : mass) s += v;
    row.lhs = std::sqrt(coef * s);
    row.constraint_residual = *std::max_element(def.begin(), def.end());
    rep.rows[it] = row;
  }
  (void)total;
  detail::finish_decay_report(rep, opt);
  return rep;
}

inline CsvWriter decay_property_csv(const DecayPropertyReport& rep) {
  CsvWriter w({"t", "lhs_norm", "rhs_low", "rhs_high", "ratio", "constraint_residual"});
  for (const auto& r : rep.rows) w.row({r.t, r.lhs, r.rhs_low, r.rhs_high, r.ratio, r.constraint_residual});
  return w;
}

inline std::string rational_str(const Rational& r) {
  return r.denominator() == 1 ? std::to_string(r.numerator())
                              : std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

inline nlohmann::json decay_property_json(const DecayPropertyReport& rep) {
  const auto& s = rep.spec;
  nlohmann::json j = {
      {"spec", {{"p", s.p.str()}, {"q", s.q.str()}, {"r", s.r.str()}, {"k", s.k}, {"j", s.j}, {"l", s.l}, {"n", s.n}}},
      {"route", rep.route},
      {"applicable", rep.profile.applicable},
      {"profile_fit", {{"low_slope", json_num(rep.profile.low_slope)}, {"high_slope", json_num(rep.profile.high_slope)},
                       {"c_min", json_num(rep.profile.c_min)}, {"c_max", json_num(rep.profile.c_max)}}},
      {"certification", rep.certification},
      {"data_norms", {{"low", json_num(rep.data_low)}, {"high", json_num(rep.data_high)}}},
      {"C", json_num(rep.C)},
      {"max_constraint_residual", json_num(rep.max_constraint_residual)},
      {"persistence_ok", rep.persistence_ok}};
  if (!rep.profile.applicable) j["reason"] = rep.profile.reason;
  if (rep.profile.applicable)
    j["profile"] = {{"a", rep.profile.profile.a}, {"b", rep.profile.profile.b}};
  if (rep.prediction)
    j["predicted"] = {{"low", rational_str(rep.prediction->low_exp)}, {"high", rational_str(rep.prediction->high_exp)}};
  j["fit"] = rep.fit ? nlohmann::json{{"slope", json_num(rep.fit->slope)}, {"r_squared", json_num(rep.fit->r_squared)},
                                      {"samples", rep.fit->samples}}
                     : nlohmann::json(nullptr);
  return j;
}

}  // namespace emdecay
