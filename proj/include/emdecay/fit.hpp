#pragma once

// Least-squares power-law fits in log-log coordinates.

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace emdecay {

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t samples = 0;
};

/// Ordinary least squares of y on x. r^2 is 1 for a perfect (or constant) fit.
inline FitResult linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("linear_fit needs >= 2 paired samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("linear_fit needs distinct abscissae");
  FitResult f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.intercept + f.slope * x[i]);
    sse += e * e;
  }
  f.r_squared = syy > 0.0 ? std::max(0.0, 1.0 - sse / syy) : 1.0;
  f.samples = x.size();
  return f;
}

/// Slope of log(value) against log(1 + t) over samples with t in [t0, t1].
inline FitResult fit_exponent(const std::vector<std::pair<double, double>>& series, double t0,
                              double t1, std::size_t min_samples = 8) {
  std::vector<double> x, y;
  for (const auto& [t, v] : series) {
    if (t < t0 || t > t1) continue;
    if (!(v > 0.0)) throw std::invalid_argument("fit_exponent needs positive values");
    x.push_back(std::log1p(t));
    y.push_back(std::log(v));
  }
  if (x.size() < min_samples) throw std::invalid_argument("fit_exponent: too few samples in window");
  return linear_fit(x, y);
}

/// Slope of log(y) against log(x) (no shift), e.g. decay margins vs |xi|.
inline FitResult fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::invalid_argument("fit_loglog needs positive data");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  return linear_fit(lx, ly);
}

}  // namespace emdecay
