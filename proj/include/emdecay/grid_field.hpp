#pragma once

// Uniform periodic grids in 1-3 dimensions with FFTW-backed transforms.
//
// Samples are stored in FFT order: index i on an axis of length L with N
// points sits at x = i dx for i < N/2 and at (i - N) dx otherwise, so the
// origin is index 0. Spectral values approximate the continuous transform
// phi_hat(xi) = int phi(x) e^{-i x.xi} dx, i.e. cell volume times the DFT.

#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <tuple>
#include <vector>

#include <fftw3.h>

#include "emdecay/linalg.hpp"

namespace emdecay {

enum class Space { physical, spectral };

class GridField {
 public:
  GridField() = default;
  GridField(int n, std::vector<int> shape, std::vector<double> box, int components = 1,
            Space space = Space::physical)
      : n_(n), shape_(std::move(shape)), box_(std::move(box)), components_(components), space_(space) {
    if (n_ < 1 || n_ > 3) throw std::invalid_argument("grid dimension must be 1, 2 or 3");
    if (static_cast<int>(shape_.size()) != n_ || static_cast<int>(box_.size()) != n_)
      throw std::invalid_argument("grid shape/box size must match dimension");
    if (components_ < 1) throw std::invalid_argument("grid needs at least one component");
    total_ = 1;
    for (int a = 0; a < n_; ++a) {
      const int s = shape_[static_cast<std::size_t>(a)];
      if (s < 2 || (s & (s - 1)) != 0) throw std::invalid_argument("grid sizes must be powers of two");
      if (!(box_[static_cast<std::size_t>(a)] > 0.0)) throw std::invalid_argument("box lengths must be positive");
      total_ *= static_cast<std::size_t>(s);
    }
    values_.assign(total_ * static_cast<std::size_t>(components_), cplx(0.0, 0.0));
  }

  /// Cube of side `length` with `points` samples per axis.
  static GridField cube(int n, int points, double length, int components = 1) {
    return GridField(n, std::vector<int>(static_cast<std::size_t>(n), points),
                     std::vector<double>(static_cast<std::size_t>(n), length), components);
  }

  /// Default resolution per dimension on the 64 pi box.
  static GridField default_box(int n, int components = 1) {
    static const int points[] = {0, 1024, 256, 128};
    if (n < 1 || n > 3) throw std::invalid_argument("grid dimension must be 1, 2 or 3");
    return cube(n, points[n], 64.0 * PI, components);
  }

  /// Samples f at each grid point (physical space, one component).
  static GridField sample(int n, std::vector<int> shape, std::vector<double> box,
                          const std::function<cplx(const std::array<double, 3>&)>& f) {
    GridField g(n, std::move(shape), std::move(box));
    for (std::size_t i = 0; i < g.size(); ++i) g.values_[i] = f(g.position(i));
    return g;
  }

  int dim() const { return n_; }
  const std::vector<int>& shape() const { return shape_; }
  const std::vector<double>& box() const { return box_; }
  int components() const { return components_; }
  Space space() const { return space_; }
  void set_space(Space s) { space_ = s; }
  std::size_t size() const { return total_; }

  double spacing(int axis) const { return box_[static_cast<std::size_t>(axis)] / shape_[static_cast<std::size_t>(axis)]; }
  double cell_volume() const {
    double v = 1.0;
    for (int a = 0; a < n_; ++a) v *= spacing(a);
    return v;
  }
  double box_volume() const {
    double v = 1.0;
    for (double b : box_) v *= b;
    return v;
  }

  /// Signed FFT-order integer index along one axis.
  int signed_index(int axis, int i) const {
    const int s = shape_[static_cast<std::size_t>(axis)];
    return i < s / 2 ? i : i - s;
  }

  std::array<int, 3> multi_index(std::size_t idx) const {
    std::array<int, 3> m{0, 0, 0};
    for (int a = n_ - 1; a >= 0; --a) {
      const auto s = static_cast<std::size_t>(shape_[static_cast<std::size_t>(a)]);
      m[static_cast<std::size_t>(a)] = static_cast<int>(idx % s);
      idx /= s;
    }
    return m;
  }

  std::array<double, 3> position(std::size_t idx) const {
    const auto m = multi_index(idx);
    std::array<double, 3> x{0.0, 0.0, 0.0};
    for (int a = 0; a < n_; ++a)
      x[static_cast<std::size_t>(a)] = signed_index(a, m[static_cast<std::size_t>(a)]) * spacing(a);
    return x;
  }

  std::array<double, 3> frequency(std::size_t idx) const {
    const auto m = multi_index(idx);
    std::array<double, 3> k{0.0, 0.0, 0.0};
    for (int a = 0; a < n_; ++a)
      k[static_cast<std::size_t>(a)] =
          2.0 * PI / box_[static_cast<std::size_t>(a)] * signed_index(a, m[static_cast<std::size_t>(a)]);
    return k;
  }

  double frequency_norm(std::size_t idx) const {
    const auto k = frequency(idx);
    return std::sqrt(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]);
  }

  /// True when some axis index sits on the face x = -L/2.
  bool on_boundary(std::size_t idx) const {
    const auto m = multi_index(idx);
    for (int a = 0; a < n_; ++a)
      if (m[static_cast<std::size_t>(a)] == shape_[static_cast<std::size_t>(a)] / 2) return true;
    return false;
  }

  cplx& at(std::size_t idx, int comp = 0) { return values_[static_cast<std::size_t>(comp) * total_ + idx]; }
  const cplx& at(std::size_t idx, int comp = 0) const {
    return values_[static_cast<std::size_t>(comp) * total_ + idx];
  }
  cplx* component(int comp) { return values_.data() + static_cast<std::size_t>(comp) * total_; }
  const cplx* component(int comp) const { return values_.data() + static_cast<std::size_t>(comp) * total_; }
  std::vector<cplx>& values() { return values_; }
  const std::vector<cplx>& values() const { return values_; }

  /// Pointwise Euclidean modulus across components.
  double modulus(std::size_t idx) const {
    double s = 0.0;
    for (int c = 0; c < components_; ++c) s += std::norm(at(idx, c));
    return std::sqrt(s);
  }

  bool same_grid(const GridField& o) const {
    return n_ == o.n_ && shape_ == o.shape_ && box_ == o.box_;
  }

 private:
  int n_ = 1;
  std::vector<int> shape_{2};
  std::vector<double> box_{1.0};
  int components_ = 1;
  Space space_ = Space::physical;
  std::size_t total_ = 0;
  std::vector<cplx> values_;
};

namespace detail {

// FFTW planning is not thread-safe; plans are created once per
// (shape, sign) under a lock and executed with the new-array interface.
class FftPlans {
 public:
  static FftPlans& instance() {
    static FftPlans p;
    return p;
  }
  fftw_plan get(const std::vector<int>& shape, int sign) {
    std::lock_guard lock(mutex_);
    const auto key = std::make_tuple(shape, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    std::size_t total = 1;
    for (int s : shape) total *= static_cast<std::size_t>(s);
    std::vector<cplx> scratch(total);
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan plan = fftw_plan_dft(static_cast<int>(shape.size()), shape.data(), buf, buf, sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!plan) throw std::runtime_error("fftw planning failed");
    plans_.emplace(key, plan);
    return plan;
  }
  ~FftPlans() {
    for (auto& [k, p] : plans_) fftw_destroy_plan(p);
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<std::vector<int>, int>, fftw_plan> plans_;
};

inline void fft_inplace(GridField& g, int sign) {
  fftw_plan plan = FftPlans::instance().get(g.shape(), sign);
  for (int c = 0; c < g.components(); ++c) {
    auto* p = reinterpret_cast<fftw_complex*>(g.component(c));
    fftw_execute_dft(plan, p, p);
  }
}

}  // namespace detail

inline GridField to_spectral(GridField g) {
  if (g.space() != Space::physical) throw std::invalid_argument("field is already spectral");
  detail::fft_inplace(g, FFTW_FORWARD);
  const double dv = g.cell_volume();
  for (auto& v : g.values()) v *= dv;
  g.set_space(Space::spectral);
  return g;
}

inline GridField to_physical(GridField g) {
  if (g.space() != Space::spectral) throw std::invalid_argument("field is already physical");
  detail::fft_inplace(g, FFTW_BACKWARD);
  const double scale = 1.0 / g.box_volume();
  for (auto& v : g.values()) v *= scale;
  g.set_space(Space::physical);
  return g;
}

/// Riemann-sum L^p norm (grid maximum for p = inf) of the pointwise modulus.
inline double lp_norm(const GridField& g, double p) {
  if (g.space() != Space::physical) throw std::invalid_argument("lp_norm needs a physical field");
  if (!(p >= 1.0)) throw std::invalid_argument("lp_norm needs p >= 1");
  if (std::isinf(p)) {
    double m = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) m = std::max(m, g.modulus(i));
    return m;
  }
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += std::pow(g.modulus(i), p);
  return std::pow(s * g.cell_volume(), 1.0 / p);
}

/// L^2 norm from spectral data via Parseval.
inline double spectral_l2(const GridField& g) {
  if (g.space() != Space::spectral) throw std::invalid_argument("spectral_l2 needs a spectral field");
  double s = 0.0;
  for (const auto& v : g.values()) s += std::norm(v);
  return std::sqrt(s / g.box_volume());
}

/// Multiplies each spectral sample by m(xi).
inline GridField apply_multiplier(GridField g, const std::function<cplx(const std::array<double, 3>&)>& m) {
  if (g.space() != Space::spectral) throw std::invalid_argument("multiplier needs a spectral field");
  for (std::size_t i = 0; i < g.size(); ++i) {
    const cplx w = m(g.frequency(i));
    for (int c = 0; c < g.components(); ++c) g.at(i, c) *= w;
  }
  return g;
}

/// Radial multiplier m(|xi|) applied to a physical field.
inline GridField filter(const GridField& phys, const std::function<double(double)>& m) {
  GridField s = to_spectral(phys);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double w = m(s.frequency_norm(i));
    for (int c = 0; c < s.components(); ++c) s.at(i, c) *= w;
  }
  return to_physical(std::move(s));
}

/// L^q norm of |grad|^j phi, the derivative taken as the Fourier multiplier |xi|^j.
inline double derivative_lp_norm(const GridField& phys, int order, double q) {
  if (order == 0) return lp_norm(phys, q);
  return lp_norm(filter(phys, [order](double r) { return std::pow(r, order); }), q);
}

/// Throws std::invalid_argument when |phi| on the box faces exceeds
/// tol times its maximum.
inline void check_boundary_decay(const GridField& g, double tol = 1e-12) {
  if (g.space() != Space::physical) throw std::invalid_argument("boundary check needs a physical field");
  double peak = 0.0, edge = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double m = g.modulus(i);
    peak = std::max(peak, m);
    if (g.on_boundary(i)) edge = std::max(edge, m);
  }
  if (edge > tol * peak)
    throw std::invalid_argument("test function does not decay at the box boundary (ratio " +
                                std::to_string(peak > 0 ? edge / peak : 0.0) + ")");
}

}  // namespace emdecay
