#pragma once

// The decay kernel |xi|^k e^{-eta(xi) t} applied to |phi_hat|, its
// frequency-split norms, and empirical checks of the L^p-L^q-L^r bound.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "emdecay/decay.hpp"
#include "emdecay/fit.hpp"
#include "emdecay/grid_field.hpp"
#include "emdecay/parallel.hpp"
#include "emdecay/report.hpp"
#include "emdecay/system.hpp"

namespace emdecay {

enum class KernelMode {
  modulus,  // acts on |phi_hat| as in the estimate
  phase     // extra: acts on phi_hat itself, keeping its phase
};

/// Frequency band lo <= |xi| <= hi (hi may be infinite).
struct Band {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  bool contains(double r) const { return r >= lo && r <= hi; }
  static Band all() { return {}; }
  static Band low(double r0) { return {0.0, r0}; }
  static Band high(double r0) { return {std::nextafter(r0, 2 * r0 + 1), std::numeric_limits<double>::infinity()}; }
};

inline double kernel_weight(double r, int k, double t, const EtaProfile& profile) {
  return (k == 0 ? 1.0 : std::pow(r, k)) * std::exp(-eta(r, profile) * t);
}

/// F^{-1}[ |xi|^k e^{-eta t} |phi_hat| ] restricted to `band`.
inline GridField kernel_apply(const GridField& phi, int k, double t, const EtaProfile& profile = {},
                              KernelMode mode = KernelMode::modulus, Band band = Band::all()) {
  if (k < 0) throw std::invalid_argument("kernel order must be >= 0");
  if (t < 0.0) throw std::invalid_argument("kernel time must be >= 0");
  GridField s = to_spectral(phi);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double r = s.frequency_norm(i);
    const double w = band.contains(r) ? kernel_weight(r, k, t, profile) : 0.0;
    for (int c = 0; c < s.components(); ++c) {
      cplx& v = s.at(i, c);
      v = mode == KernelMode::modulus ? cplx(w * std::abs(v), 0.0) : w * v;
    }
  }
  return to_physical(std::move(s));
}

inline double unit_sphere_area(int n) {
  return 2.0 * std::pow(PI, 0.5 * n) / std::tgamma(0.5 * n);
}

namespace detail {

// Integral of f over [lo, hi] on a dyadic ladder, so that sharply peaked
// integrands at any scale are resolved. hi may be infinite, in which case
// the ladder stops once segments become negligible and keep shrinking.
inline double ladder_integral(const std::function<double(double)>& f, double lo, double hi,
                              double anchor = 1.0) {
  using boost::math::quadrature::gauss_kronrod;
  auto seg = [&f](double a, double b) {
    return gauss_kronrod<double, 31>::integrate(f, a, b, 6, 1e-11);
  };
  double total = 0.0;
  if (lo < anchor) {
    // Downward from min(anchor, hi) towards lo.
    double b = std::min(anchor, hi);
    const double floor = std::max(lo, anchor * 1e-14);
    while (b > floor) {
      const double a = std::max(floor, b / 2.0);
      total += seg(a, b);
      b = a;
    }
    if (floor > lo) total += seg(lo, floor);
    if (hi <= anchor) return total;
    lo = anchor;
  }
  double a = lo;
  double prev = std::numeric_limits<double>::infinity();
  int quiet = 0;
  for (int i = 0; i < 400 && a < hi; ++i) {
    const double b = std::isinf(hi) ? a * 2.0 : std::min(hi, a * 2.0);
    const double part = seg(a, b);
    total += part;
    if (std::isinf(hi)) {
      if (total != 0.0 && std::abs(part) <= 1e-17 * std::abs(total) && std::abs(part) <= prev) {
        if (++quiet >= 4) break;
      } else {
        quiet = 0;
      }
      prev = std::abs(part);
    }
    a = b;
  }
  return total;
}

}  // namespace detail

/// Radially symmetric datum known through the modulus of its transform;
/// kernel norms are then evaluated by quadrature on the whole space with no
/// box or resolution error. Supports p = 2 (Plancherel) and p = inf (the
/// multiplier is nonnegative, so the sup sits at x = 0).
struct RadialDatum {
  int n = 3;
  std::function<double(double)> transform_modulus;
  std::string label;

  /// phi(x) = exp(-|x|^2 / (2 s^2)).
  static RadialDatum gaussian(int n, double s) {
    const double amp = std::pow(2.0 * PI * s * s, 0.5 * n);
    return {n, [amp, s](double r) { return amp * std::exp(-0.5 * s * s * r * r); },
            "gaussian(s=" + std::to_string(s) + ")"};
  }

  /// |phi_hat| = (1 + |xi|^2)^{-order/2}: finite regularity, power-law tail.
  static RadialDatum bessel_potential(int n, double order) {
    return {n, [order](double r) { return std::pow(1.0 + r * r, -0.5 * order); },
            "bessel_potential(order=" + std::to_string(order) + ")"};
  }
};

inline double radial_kernel_norm(const RadialDatum& d, int k, double t, const EtaProfile& profile,
                                 const LebesgueExponent& p, Band band = Band::all()) {
  const double coef = unit_sphere_area(d.n) / std::pow(2.0 * PI, d.n);
  const double scale = 1.0 / std::sqrt(1.0 + t);  // where low-frequency mass concentrates
  if (p.is_infinite()) {
    auto f = [&](double r) {
      return kernel_weight(r, k, t, profile) * d.transform_modulus(r) * std::pow(r, d.n - 1);
    };
    return coef * detail::ladder_integral(f, band.lo, band.hi, band.lo > 0.0 ? band.lo : scale);
  }
  if (p.reciprocal() != Rational(1, 2))
    throw std::invalid_argument("radial kernel norms support p = 2 and p = inf only");
  auto f = [&](double r) {
    const double w = kernel_weight(r, k, t, profile) * d.transform_modulus(r);
    return w * w * std::pow(r, d.n - 1);
  };
  const double anchor = band.lo > 0.0 ? band.lo : scale;
  return std::sqrt(coef * detail::ladder_integral(f, band.lo, band.hi, anchor));
}

/// Grid L^2 norm of |grad|^m phi computed on the radial datum by Plancherel.
inline double radial_derivative_l2(const RadialDatum& d, int m) {
  const double coef = unit_sphere_area(d.n) / std::pow(2.0 * PI, d.n);
  auto f = [&](double r) {
    const double w = std::pow(r, m) * d.transform_modulus(r);
    return w * w * std::pow(r, d.n - 1);
  };
  return std::sqrt(coef * detail::ladder_integral(f, 0.0, std::numeric_limits<double>::infinity(), 1.0));
}

struct PartFit {
  double slope = 0.0;
  double r_squared = 0.0;
  std::size_t samples = 0;
  bool accepted = false;  // r^2 above the reporting threshold
};

struct LpqlrRow {
  double t = 0.0;
  double lhs = 0.0;
  double lhs_low = 0.0;
  double lhs_high = 0.0;
  double rhs_low = 0.0;
  double rhs_high = 0.0;
  double ratio = 0.0;
};

struct LpqlrOptions {
  double R0 = 1.0;
  double fit_t0 = 10.0;
  double fit_t1 = 1e3;
  double min_r_squared = 0.995;
  double growth_limit = 2.0;
};

struct LpqlrReport {
  NormSpec spec;
  EtaProfile profile;
  DecayPrediction prediction;
  LpqlrOptions options;
  std::string route;
  double data_low = 0.0;   // |grad^j phi|_q
  double data_high = 0.0;  // |grad^{k+l} phi|_r
  std::vector<LpqlrRow> rows;
  double c_star = 0.0;
  // Growth of the running maximum of LHS/RHS over the t-grid: C* computed
  // on [t_0, t] divided by C* computed on [t_0, t_0].
  double c_star_growth = 0.0;
  bool c_star_bounded = false;
  std::optional<PartFit> low_fit;
  std::optional<PartFit> high_fit;
};

inline std::vector<double> default_t_grid() { return log_space(10.0, 1e3, 24); }

inline std::optional<PartFit> fit_part(const std::vector<std::pair<double, double>>& series,
                                       const LpqlrOptions& opt) {
  std::vector<std::pair<double, double>> pos;
  for (const auto& s : series)
    if (s.second > 0.0 && std::isfinite(s.second)) pos.push_back(s);
  try {
    const auto f = fit_exponent(pos, opt.fit_t0, opt.fit_t1);
    return PartFit{f.slope, f.r_squared, f.samples, f.r_squared >= opt.min_r_squared};
  } catch (const std::invalid_argument&) {
    return std::nullopt;  // part underflowed to zero inside the window
  }
}

namespace detail {

inline void check_t_grid(const std::vector<double>& t_grid) {
  if (t_grid.empty()) throw std::invalid_argument("empty t-grid");
  for (std::size_t i = 0; i < t_grid.size(); ++i)
    if (t_grid[i] < 0.0 || (i && t_grid[i] <= t_grid[i - 1]))
      throw std::invalid_argument("t-grid must be nonnegative and increasing");
}

inline LpqlrReport finish_lpqlr(LpqlrReport rep) {
  const double lo = rep.data_low, hi = rep.data_high;
  std::vector<std::pair<double, double>> low_series, high_series;
  double first = 0.0, rmax = 0.0;
  for (auto& row : rep.rows) {
    row.rhs_low = std::pow(1.0 + row.t, to_double(rep.prediction.low_exp)) * lo;
    row.rhs_high = std::pow(1.0 + row.t, to_double(rep.prediction.high_exp)) * hi;
    const double rhs = row.rhs_low + row.rhs_high;
    row.ratio = rhs > 0.0 ? row.lhs / rhs : (row.lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    rep.c_star = std::max(rep.c_star, row.ratio);
    if (row.t > 0.0 && row.ratio > 0.0) {
      if (first == 0.0) first = row.ratio;
      rmax = std::max(rmax, row.ratio);
    }
    low_series.emplace_back(row.t, row.lhs_low);
    high_series.emplace_back(row.t, row.lhs_high);
  }
  rep.c_star_growth = first > 0.0 ? rmax / first : 1.0;
  rep.c_star_bounded = std::isfinite(rep.c_star) && rep.c_star_growth <= rep.options.growth_limit;
  rep.low_fit = fit_part(low_series, rep.options);
  rep.high_fit = fit_part(high_series, rep.options);
  return rep;
}

}  // namespace detail

/// Grid route: every norm is a Riemann sum on the periodic box.
inline LpqlrReport verify_lpqlr(const GridField& phi, const NormSpec& spec, const EtaProfile& profile,
                                const std::vector<double>& t_grid, const LpqlrOptions& opt = {}) {
  spec.validate();
  if (phi.dim() != spec.n) throw std::invalid_argument("field dimension differs from spec.n");
  check_boundary_decay(phi);
  detail::check_t_grid(t_grid);
  LpqlrReport rep;
  rep.spec = spec;
  rep.profile = profile;
  rep.prediction = predict(spec, profile);
  rep.options = opt;
  rep.route = "grid";
  rep.data_low = derivative_lp_norm(phi, spec.j, spec.q.value());
  rep.data_high = derivative_lp_norm(phi, spec.k + spec.l, spec.r.value());
  rep.rows.resize(t_grid.size());
  const double p = spec.p.value();
  parallel_for(t_grid.size(), [&](std::size_t i) {
    const double t = t_grid[i];
    LpqlrRow row;
    row.t = t;
    row.lhs = lp_norm(kernel_apply(phi, spec.k, t, profile), p);
    row.lhs_low = lp_norm(kernel_apply(phi, spec.k, t, profile, KernelMode::modulus, Band::low(opt.R0)), p);
    row.lhs_high = lp_norm(kernel_apply(phi, spec.k, t, profile, KernelMode::modulus, Band::high(opt.R0)), p);
    rep.rows[i] = row;
  });
  return detail::finish_lpqlr(std::move(rep));
}

/// Whole-space route: left-hand norms by radial quadrature, data norms
/// supplied by the caller (e.g. from a well-resolved grid sample).
inline LpqlrReport verify_lpqlr(const RadialDatum& datum, double data_low, double data_high,
                                const NormSpec& spec, const EtaProfile& profile,
                                const std::vector<double>& t_grid, const LpqlrOptions& opt = {}) {
  spec.validate();
  if (datum.n != spec.n) throw std::invalid_argument("datum dimension differs from spec.n");
  detail::check_t_grid(t_grid);
  LpqlrReport rep;
  rep.spec = spec;
  rep.profile = profile;
  rep.prediction = predict(spec, profile);
  rep.options = opt;
  rep.route = "radial:" + datum.label;
  rep.data_low = data_low;
  rep.data_high = data_high;
  rep.rows.resize(t_grid.size());
  parallel_for(t_grid.size(), [&](std::size_t i) {
    const double t = t_grid[i];
    LpqlrRow row;
    row.t = t;
    row.lhs = radial_kernel_norm(datum, spec.k, t, profile, spec.p);
    row.lhs_low = radial_kernel_norm(datum, spec.k, t, profile, spec.p, Band::low(opt.R0));
    row.lhs_high = radial_kernel_norm(datum, spec.k, t, profile, spec.p, Band::high(opt.R0));
    rep.rows[i] = row;
  });
  return detail::finish_lpqlr(std::move(rep));
}

inline CsvWriter lpqlr_csv(const LpqlrReport& rep) {
  CsvWriter w({"t", "lhs_norm", "rhs_low", "rhs_high", "ratio"});
  for (const auto& r : rep.rows) w.row({r.t, r.lhs, r.rhs_low, r.rhs_high, r.ratio});
  return w;
}

inline nlohmann::json part_fit_json(const std::optional<PartFit>& f) {
  if (!f) return nullptr;
  return {{"slope", json_num(f->slope)}, {"r_squared", json_num(f->r_squared)},
          {"samples", f->samples}, {"accepted", f->accepted}};
}

inline nlohmann::json lpqlr_json(const LpqlrReport& rep) {
  const auto& s = rep.spec;
  return {{"spec", {{"p", s.p.str()}, {"q", s.q.str()}, {"r", s.r.str()}, {"k", s.k}, {"j", s.j}, {"l", s.l}, {"n", s.n}}},
          {"profile", {{"a", rep.profile.a}, {"b", rep.profile.b}}},
          {"route", rep.route},
          {"R0", json_num(rep.options.R0)},
          {"predicted", {{"low", to_double(rep.prediction.low_exp)}, {"high", to_double(rep.prediction.high_exp)},
                         {"low_exact", std::to_string(rep.prediction.low_exp.numerator()) + "/" + std::to_string(rep.prediction.low_exp.denominator())},
                         {"high_exact", std::to_string(rep.prediction.high_exp.numerator()) + "/" + std::to_string(rep.prediction.high_exp.denominator())}}},
          {"data_norms", {{"low", json_num(rep.data_low)}, {"high", json_num(rep.data_high)}}},
          {"low_fit", part_fit_json(rep.low_fit)},
          {"high_fit", part_fit_json(rep.high_fit)},
          {"C_star", json_num(rep.c_star)},
          {"C_star_growth", json_num(rep.c_star_growth)},
          {"C_star_bounded", rep.c_star_bounded}};
}

/// |S^{n-1}| int_{R0}^inf e^{-c t r^{-sigma2}} r^{n-1-l s2} dr.
inline double high_freq_weight_integral(const EtaProfile& profile, double l, double s2, double R0, double t,
                                        int n = 3, double c = 1.0) {
  const double power = l * s2;
  if (!(power > n)) throw std::invalid_argument("weight integral diverges unless l*s2 > n");
  if (!(R0 > 0.0) || t < 0.0) throw std::invalid_argument("weight integral needs R0 > 0, t >= 0");
  const double sigma = to_double(profile.sigma2());
  auto f = [&](double r) { return std::exp(-c * t * std::pow(r, -sigma)) * std::pow(r, n - 1 - power); };
  return unit_sphere_area(n) *
         detail::ladder_integral(f, R0, std::numeric_limits<double>::infinity(), R0);
}

struct WeightIntegralFit {
  std::vector<std::pair<double, double>> series;
  double predicted = 0.0;
  FitResult fit;
};

inline WeightIntegralFit fit_high_freq_weight(const EtaProfile& profile, double l, double s2, int n, double R0,
                                              const std::vector<double>& t_grid, double c = 1.0) {
  WeightIntegralFit out;
  out.series.resize(t_grid.size());
  parallel_for(t_grid.size(), [&](std::size_t i) {
    out.series[i] = {t_grid[i], high_freq_weight_integral(profile, l, s2, R0, t_grid[i], n, c)};
  });
  out.predicted = (n - l * s2) / to_double(profile.sigma2());
  out.fit = fit_exponent(out.series, t_grid.front(), t_grid.back());
  return out;
}

}  // namespace emdecay
