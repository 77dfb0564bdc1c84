#pragma once

// Dissipative-rate profiles eta(xi) = |xi|^{2a} / (1 + |xi|^2)^b and the
// decay exponents they predict for
//
//   || F^{-1}[ |xi|^k e^{-eta t} |phi_hat| ] ||_{L^p}
//       <= C (1+t)^{low}  || d^j phi ||_{L^q} + (1+t)^{high} || d^{k+l} phi ||_{L^r}
//
// with low = -gamma_{s1}(q,p) - (k-j)/s1 and high = -l/s2 + gamma_{s2}(r,p),
// gamma_s(q,p) = (n/s)(1/q - 1/p). Exponents are carried as exact rationals.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <boost/rational.hpp>

namespace emdecay {

using Rational = boost::rational<long long>;

inline double to_double(const Rational& r) {
  return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator());
}

/// A Lebesgue exponent in [1, inf], stored through its reciprocal.
class LebesgueExponent {
 public:
  constexpr LebesgueExponent() = default;
  /// p >= 1; use LebesgueExponent::infinity() for p = inf.
  explicit LebesgueExponent(long long p) : inv_(1, checked(p)) {}
  static LebesgueExponent infinity() {
    LebesgueExponent e;
    e.inv_ = Rational(0);
    return e;
  }
  static LebesgueExponent from_reciprocal(Rational inv) {
    if (inv < Rational(0) || inv > Rational(1)) throw std::invalid_argument("reciprocal exponent must lie in [0, 1]");
    LebesgueExponent e;
    e.inv_ = inv;
    return e;
  }
  /// Parses "1", "2", "inf".
  static LebesgueExponent parse(const std::string& s) {
    if (s == "inf" || s == "infinity") return infinity();
    return LebesgueExponent(std::stoll(s));
  }

  const Rational& reciprocal() const { return inv_; }
  bool is_infinite() const { return inv_.numerator() == 0; }
  double value() const {
    return is_infinite() ? std::numeric_limits<double>::infinity() : 1.0 / to_double(inv_);
  }
  std::string str() const {
    if (is_infinite()) return "inf";
    if (inv_.numerator() == 1) return std::to_string(inv_.denominator());
    return std::to_string(value());
  }
  friend bool operator==(const LebesgueExponent& a, const LebesgueExponent& b) {
    return a.inv_ == b.inv_;
  }

 private:
  static long long checked(long long p) {
    if (p < 1) throw std::invalid_argument("Lebesgue exponent must be >= 1");
    return p;
  }
  Rational inv_{1, 1};
};

struct EtaProfile {
  int a = 1;
  int b = 2;

  EtaProfile() = default;
  EtaProfile(int a_, int b_) : a(a_), b(b_) {
    if (a < 1 || b < 1) throw std::invalid_argument("eta profile needs a >= 1 and b >= 1");
  }
  /// Low-frequency order: eta ~ |xi|^{sigma1} as |xi| -> 0.
  Rational sigma1() const { return Rational(2 * a); }
  /// High-frequency order: eta ~ |xi|^{-sigma2} as |xi| -> inf (b > a only).
  Rational sigma2() const {
    if (b <= a) throw std::domain_error("eta profile has no high-frequency decay (b <= a)");
    return Rational(2 * (b - a));
  }
  bool regularity_loss() const { return b > a; }
};

/// eta(|xi|) = |xi|^{2a} / (1 + |xi|^2)^b.
inline double eta(double xi_norm, const EtaProfile& profile = {}) {
  if (xi_norm < 0.0) throw std::invalid_argument("eta needs |xi| >= 0");
  const double r2 = xi_norm * xi_norm;
  return std::pow(r2, profile.a) / std::pow(1.0 + r2, profile.b);
}

/// gamma_sigma(q, p) = (n / sigma)(1/q - 1/p).
inline Rational gamma_exponent(const Rational& sigma, const LebesgueExponent& q,
                               const LebesgueExponent& p, int n) {
  if (sigma <= Rational(0)) throw std::invalid_argument("sigma must be positive");
  return Rational(n) / sigma * (q.reciprocal() - p.reciprocal());
}

inline double gamma_exponent(double sigma, double q, double p, int n) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  const double iq = std::isinf(q) ? 0.0 : 1.0 / q;
  const double ip = std::isinf(p) ? 0.0 : 1.0 / p;
  return static_cast<double>(n) / sigma * (iq - ip);
}

struct NormSpec {
  LebesgueExponent p{2};
  LebesgueExponent q{1};
  LebesgueExponent r{2};
  int k = 0;
  int j = 0;
  int l = 2;
  int n = 3;

  /// Throws std::invalid_argument when the exponent constraints fail.
  void validate() const {
    const Rational half(1, 2);
    if (n < 1) throw std::invalid_argument("space dimension must be >= 1");
    if (q.reciprocal() < half || r.reciprocal() < half)
      throw std::invalid_argument("need 1 <= q, r <= 2");
    if (p.reciprocal() > half) throw std::invalid_argument("need p >= 2");
    if (j < 0 || j > k) throw std::invalid_argument("need 0 <= j <= k");
    if (l < 0) throw std::invalid_argument("need l >= 0");
    const bool p_r_two = p.reciprocal() == half && r.reciprocal() == half;
    const Rational bound = Rational(n) * (r.reciprocal() - p.reciprocal());
    if (!p_r_two && !(Rational(l) > bound))
      throw std::invalid_argument("need l > n(1/r - 1/p) (l >= 0 allowed only when p = r = 2)");
  }
};

struct DecayPrediction {
  Rational low_exp;
  Rational high_exp;
};

inline DecayPrediction predict(const NormSpec& spec, const EtaProfile& profile = {}) {
  spec.validate();
  const Rational s1 = profile.sigma1();
  const Rational s2 = profile.sigma2();
  DecayPrediction out;
  out.low_exp = -gamma_exponent(s1, spec.q, spec.p, spec.n) - Rational(spec.k - spec.j) / s1;
  out.high_exp = -Rational(spec.l) / s2 + gamma_exponent(s2, spec.r, spec.p, spec.n);
  return out;
}

}  // namespace emdecay
