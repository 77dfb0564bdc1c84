#pragma once

// Pseudo-spectral solver for the Euler-Maxwell perturbation system on a
// periodic box (3D, or a 2D slice with fields independent of x3).
// Linear part: exact per-mode Green matrices. Nonlinear part: Lawson
// (integrating-factor) RK4, 2/3-rule dealiasing.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emdecay/fit.hpp"
#include "emdecay/fourier_energy.hpp"
#include "emdecay/grid_field.hpp"
#include "emdecay/parallel.hpp"
#include "emdecay/report.hpp"
#include "emdecay/system.hpp"
#include "emdecay/system_io.hpp"

namespace emdecay {

class PositivityError : public std::runtime_error {
 public:
  PositivityError(const std::string& what, double min_n) : std::runtime_error(what), min_n_(min_n) {}
  double min_density() const { return min_n_; }

 private:
  double min_n_;
};

class BlowUpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Pointwise nonlinear terms.

struct PointSources {
  Eigen::Matrix3d Q;  // q2 / n_inf
  Vec3 R;             // r2 / n_inf
};

/// q2 = -n^2 v(x)v / n - [p(n) - p(n_inf) - p'(n_inf) rho] I,  r2 = -rho E - n_inf v x h.
inline PointSources point_sources(double rho, const Vec3& v, const Vec3& E, const Vec3& h,
                                  const EulerMaxwellParams& p) {
  const double ni = p.n_inf, n = ni + rho;
  if (!(n > 0.0)) throw PositivityError("density is not positive", n);
  const double excess = p.pressure(n) - p.pressure(ni) - p.dpressure(ni) * rho;
  PointSources s;
  s.Q = (-(ni * ni / n) * (v * v.transpose()) - excess * Eigen::Matrix3d::Identity()) / ni;
  s.R = (-rho * E - ni * v.cross(h)) / ni;
  return s;
}

/// Perturbation z = (rho, v, E, h) sampled on a physical grid.
struct PerturbationField {
  GridField z;  // 10 components, physical space
  EulerMaxwellParams params;
  double time = 0.0;

  double min_density() const {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < z.size(); ++i) m = std::min(m, params.n_inf + z.at(i, em_index::RHO).real());
    return m;
  }
};

struct NonlinearTerms {
  GridField Q;  // 9 components, row-major (i, j)
  GridField R;  // 3 components
};

inline NonlinearTerms nonlinear_terms(const PerturbationField& f) {
  using namespace em_index;
  const auto& g = f.z;
  NonlinearTerms out{GridField(g.dim(), g.shape(), g.box(), 9), GridField(g.dim(), g.shape(), g.box(), 3)};
  auto& qv = out.Q.values();
  auto& rv = out.R.values();
  const std::size_t n = g.size();
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 v, e, h;
    for (int k = 0; k < 3; ++k) {
      v(k) = g.at(i, V + k).real();
      e(k) = g.at(i, E + k).real();
      h(k) = g.at(i, H + k).real();
    }
    const double rho = g.at(i, RHO).real();
    if (!(f.params.n_inf + rho > 0.0))
      throw PositivityError("density is not positive at grid point " + std::to_string(i), f.params.n_inf + rho);
    const auto s = point_sources(rho, v, e, h, f.params);
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) qv[static_cast<std::size_t>(3 * a + b) * n + i] = s.Q(a, b);
      rv[static_cast<std::size_t>(a) * n + i] = s.R(a);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration.

struct InitConfig {
  std::string profile = "gaussian_bump";  // gaussian_bump | multi_bump | random_band_limited
  double epsilon = 1e-3;
  std::uint64_t seed = 0;
  double width = 4.0;       // Gaussian width (bumps) or window width (band-limited)
  int bumps = 3;            // multi_bump
  double k_max = 1.0;       // random_band_limited cutoff
  double rho = 1.0;         // component weights of the profile
  Vec3 v = Vec3(1.0, 0.0, 0.0);
  Vec3 h = Vec3(0.0, 0.0, 1.0);
  Vec3 E_solenoidal = Vec3::Zero();
  bool l1_normalize = false;  // rescale so that |z0|_{L1} = epsilon
};

struct RunConfig {
  int dims = 2;  // 2: slice mode (fields independent of x3), 3: full box
  int N = 256;
  double L = 64.0 * PI;
  EulerMaxwellParams params;
  InitConfig init;
  double T = 40.0;
  double dt = 0.05;  // upper bound; the actual step divides sample_dt
  double sample_dt = 0.25;
  bool nonlinear = true;
  int spectra_subsample = 6;
  std::string csv_path;
  std::string json_path;
};

inline nlohmann::json vec3_json(const Vec3& v) { return {v(0), v(1), v(2)}; }
inline Vec3 vec3_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"grid", {{"N", c.N}, {"L", c.L}, {"dims", c.dims}}},
          {"params", euler_maxwell_params_to_json(c.params)},
          {"init",
           {{"profile", c.init.profile}, {"epsilon", c.init.epsilon}, {"seed", c.init.seed},
            {"width", c.init.width}, {"bumps", c.init.bumps}, {"k_max", c.init.k_max},
            {"weights", {{"rho", c.init.rho}, {"v", vec3_json(c.init.v)}, {"h", vec3_json(c.init.h)},
                         {"E_solenoidal", vec3_json(c.init.E_solenoidal)}}},
            {"l1_normalize", c.init.l1_normalize}}},
          {"time", {{"T", c.T}, {"dt", c.dt}, {"sample_dt", c.sample_dt}}},
          {"nonlinear", c.nonlinear},
          {"outputs", {{"csv_path", c.csv_path}, {"json_path", c.json_path}, {"spectra_subsample", c.spectra_subsample}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    c.N = g.value("N", c.N);
    if (g.contains("L")) {
      const auto& l = g.at("L");
      c.L = l.is_string() && l.get<std::string>() == "64pi" ? 64.0 * PI : l.get<double>();
    }
    c.dims = g.value("dims", c.dims);
  }
  if (j.contains("params")) c.params = euler_maxwell_params_from_json(j.at("params"));
  if (j.contains("init")) {
    const auto& i = j.at("init");
    c.init.profile = i.value("profile", c.init.profile);
    c.init.epsilon = i.value("epsilon", c.init.epsilon);
    c.init.seed = i.value("seed", c.init.seed);
    c.init.width = i.value("width", c.init.width);
    c.init.bumps = i.value("bumps", c.init.bumps);
    c.init.k_max = i.value("k_max", c.init.k_max);
    c.init.l1_normalize = i.value("l1_normalize", c.init.l1_normalize);
    if (i.contains("weights")) {
      const auto& w = i.at("weights");
      c.init.rho = w.value("rho", c.init.rho);
      if (w.contains("v")) c.init.v = vec3_from(w.at("v"));
      if (w.contains("h")) c.init.h = vec3_from(w.at("h"));
      if (w.contains("E_solenoidal")) c.init.E_solenoidal = vec3_from(w.at("E_solenoidal"));
    }
  }
  if (j.contains("time")) {
    const auto& t = j.at("time");
    c.T = t.value("T", c.T);
    c.dt = t.value("dt", c.dt);
    c.sample_dt = t.value("sample_dt", c.sample_dt);
  }
  c.nonlinear = j.value("nonlinear", c.nonlinear);
  if (j.contains("outputs")) {
    const auto& o = j.at("outputs");
    c.csv_path = o.value("csv_path", c.csv_path);
    c.json_path = o.value("json_path", c.json_path);
    c.spectra_subsample = o.value("spectra_subsample", c.spectra_subsample);
  }
  return c;
}

inline void validate(const RunConfig& c) {
  if (c.dims != 2 && c.dims != 3) throw std::invalid_argument("dims must be 2 (slice) or 3");
  if (c.N < 8 || (c.N & (c.N - 1)) != 0) throw std::invalid_argument("N must be a power of two >= 8");
  if (!(c.L > 0.0)) throw std::invalid_argument("box length must be positive");
  if (!(c.T >= 0.0) || !(c.dt > 0.0) || !(c.sample_dt > 0.0)) throw std::invalid_argument("bad time settings");
  if (!(c.init.epsilon >= 0.0)) throw std::invalid_argument("epsilon must be nonnegative");
  c.params.validate();
}

// ---------------------------------------------------------------------------

namespace detail {

// Real-to-complex transforms on one shape with owned, aligned buffers.
class RealFft {
 public:
  RealFft(std::vector<int> shape) : shape_(std::move(shape)) {
    real_size_ = 1;
    for (int s : shape_) real_size_ *= static_cast<std::size_t>(s);
    half_size_ = real_size_ / static_cast<std::size_t>(shape_.back()) * static_cast<std::size_t>(shape_.back() / 2 + 1);
    real_ = static_cast<double*>(fftw_malloc(sizeof(double) * real_size_));
    cplx_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * half_size_));
    const int rank = static_cast<int>(shape_.size());
    forward_ = fftw_plan_dft_r2c(rank, shape_.data(), real_, cplx_, FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_c2r(rank, shape_.data(), cplx_, real_, FFTW_ESTIMATE);
    if (!forward_ || !backward_) throw std::runtime_error("fftw planning failed");
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
    fftw_free(real_);
    fftw_free(cplx_);
  }
  std::size_t real_size() const { return real_size_; }
  std::size_t half_size() const { return half_size_; }
  double* real() { return real_; }
  cplx* spectral() { return reinterpret_cast<cplx*>(cplx_); }
  void forward() { fftw_execute(forward_); }
  void backward() { fftw_execute(backward_); }

 private:
  std::vector<int> shape_;
  std::size_t real_size_ = 0, half_size_ = 0;
  double* real_ = nullptr;
  fftw_complex* cplx_ = nullptr;
  fftw_plan forward_ = nullptr, backward_ = nullptr;
};

}  // namespace detail

struct Monitors {
  std::vector<double> t, l2, h3, N, D2, divE_res, divh_res, min_density;
};

struct InitialDataReport {
  double l1 = 0.0, l2 = 0.0, h3 = 0.0;
  double divE_res = 0.0, divh_res = 0.0;
  double min_density = 0.0;
  double rho_mean = 0.0;
  double boundary_ratio = 0.0;  // max on the boundary faces over the peak
};

struct SimulationResult {
  Monitors monitors;
  std::vector<SourceHistory> spectra;
  InitialDataReport init;
  std::vector<std::string> warnings;
  double dt = 0.0;
  double wrap_time = 0.0;
  double max_constraint_residual = 0.0;  // relative to the initial L2 norm
};

class EmSolver {
 public:
  using State = Eigen::Matrix<cplx, em_index::SIZE, Eigen::Dynamic>;
  using Green = Eigen::Matrix<cplx, em_index::SIZE, em_index::SIZE>;

  explicit EmSolver(RunConfig cfg) : cfg_(std::move(cfg)), sys_(build_euler_maxwell(cfg_.params)) {
    validate(cfg_);
    shape_.assign(static_cast<std::size_t>(cfg_.dims), cfg_.N);
    fft_ = std::make_unique<detail::RealFft>(shape_);
    const std::size_t m = fft_->half_size();
    const double dk = 2.0 * PI / cfg_.L;
    const int half = cfg_.N / 2 + 1;
    xi_.resize(m);
    weight_.resize(m);
    mask_.resize(m);
    for (std::size_t idx = 0; idx < m; ++idx) {
      std::array<int, 3> mi{0, 0, 0};
      std::size_t rest = idx;
      mi[static_cast<std::size_t>(cfg_.dims - 1)] = static_cast<int>(rest % static_cast<std::size_t>(half));
      rest /= static_cast<std::size_t>(half);
      for (int a = cfg_.dims - 2; a >= 0; --a) {
        const int raw = static_cast<int>(rest % static_cast<std::size_t>(cfg_.N));
        rest /= static_cast<std::size_t>(cfg_.N);
        mi[static_cast<std::size_t>(a)] = raw < cfg_.N / 2 ? raw : raw - cfg_.N;
      }
      Vec3 k = Vec3::Zero();
      bool keep = true;
      for (int a = 0; a < cfg_.dims; ++a) {
        k(a) = dk * mi[static_cast<std::size_t>(a)];
        keep = keep && 3 * std::abs(mi[static_cast<std::size_t>(a)]) < cfg_.N;
      }
      xi_[idx] = k;
      mask_[idx] = keep ? 1.0 : 0.0;
      const int last = mi[static_cast<std::size_t>(cfg_.dims - 1)];
      weight_[idx] = (last == 0 || 2 * last == cfg_.N) ? 1.0 : 2.0;
    }
    double dv = 1.0;
    for (int a = 0; a < cfg_.dims; ++a) dv *= cfg_.L / cfg_.N;
    cell_volume_ = dv;
    box_volume_ = std::pow(cfg_.L, cfg_.dims);

    // Step divides the sampling interval.
    const double dx = cfg_.L / cfg_.N;
    const double cfl = 0.25 * dx / max_characteristic_speed(sys_, direction_set(3, 0, 0));
    const double bound = std::min({cfg_.dt, cfl, cfg_.sample_dt});
    steps_per_sample_ = static_cast<int>(std::ceil(cfg_.sample_dt / bound - 1e-12));
    dt_ = cfg_.sample_dt / steps_per_sample_;

    green_full_.resize(m);
    green_half_.resize(m);
    parallel_for(m, [&](std::size_t i) {
      const GreenFactor g(sys_, VecR(xi_[i]));
      green_full_[i] = g.at(dt_);
      green_half_[i] = g.at(0.5 * dt_);
    });
  }

  const RunConfig& config() const { return cfg_; }
  const HyperbolicSystem& system() const { return sys_; }
  double dt() const { return dt_; }
  int steps_per_sample() const { return steps_per_sample_; }
  std::size_t modes() const { return xi_.size(); }
  const Vec3& frequency(std::size_t m) const { return xi_[m]; }
  double mask(std::size_t m) const { return mask_[m]; }
  double box_volume() const { return box_volume_; }
  double wrap_time() const {
    return cfg_.L / (2.0 * max_characteristic_speed(sys_, direction_set(3, 0, 0)));
  }

  // --- transforms -----------------------------------------------------------

  /// Physical samples (component-major, real) to half-spectrum coefficients,
  /// scaled by the cell volume.
  MatC forward(const std::vector<double>& phys, int components) const {
    MatC out = MatC::Zero(components, static_cast<Eigen::Index>(modes()));
    const std::size_t n = fft_->real_size();
    for (int c = 0; c < components; ++c) {
      std::copy_n(phys.data() + static_cast<std::size_t>(c) * n, n, fft_->real());
      fft_->forward();
      const cplx* s = fft_->spectral();
      for (std::size_t m = 0; m < modes(); ++m) out(c, static_cast<Eigen::Index>(m)) = s[m] * cell_volume_;
    }
    return out;
  }
  /// One spectral row back to physical samples.
  void backward_row(const State& z, int row, double* dst) const {
    cplx* s = fft_->spectral();
    for (std::size_t m = 0; m < modes(); ++m) s[m] = z(row, static_cast<Eigen::Index>(m)) / box_volume_;
    fft_->backward();
    std::copy_n(fft_->real(), fft_->real_size(), dst);
  }
  std::vector<double> backward(const State& z) const {
    const std::size_t n = fft_->real_size();
    std::vector<double> phys(n * em_index::SIZE);
    for (int c = 0; c < em_index::SIZE; ++c) backward_row(z, c, phys.data() + static_cast<std::size_t>(c) * n);
    return phys;
  }

  GridField grid_template(int components) const {
    return GridField(cfg_.dims, shape_, std::vector<double>(static_cast<std::size_t>(cfg_.dims), cfg_.L), components);
  }

  PerturbationField to_field(const State& z, double t) const {
    PerturbationField f{grid_template(em_index::SIZE), cfg_.params, t};
    const auto phys = backward(z);
    auto& vals = f.z.values();
    for (std::size_t i = 0; i < phys.size(); ++i) vals[i] = phys[i];
    return f;
  }
  State from_field(const PerturbationField& f) const {
    std::vector<double> phys(f.z.values().size());
    for (std::size_t i = 0; i < phys.size(); ++i) phys[i] = f.z.values()[i].real();
    return forward(phys, em_index::SIZE);
  }

  // --- initial data ---------------------------------------------------------

  State initial_state(InitialDataReport* report = nullptr) const {
    using namespace em_index;
    const auto& in = cfg_.init;
    const std::size_t n = fft_->real_size();
    GridField env = grid_template(1);
    const auto envelope = profile_envelope(env, in);
    // Boundary-decay precondition on the envelope.
    double peak = 0.0, face = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      peak = std::max(peak, std::abs(envelope[i]));
      if (env.on_boundary(i)) face = std::max(face, std::abs(envelope[i]));
    }
    if (peak > 0.0 && face > 1e-12 * peak)
      throw std::invalid_argument("initial profile is not concentrated: boundary/peak = " + fmt_num(face / peak));

    // rho0 = eps w_rho s Lap(phi) is mean-zero and localised, and so is the
    // unique curl-free E0 = -eps w_rho s grad(phi) with div E0 = -rho0. A net
    // charge would instead force a long-range, non-integrable E0.
    const MatC one = forward(envelope, 1);
    State z = State::Zero(SIZE, static_cast<Eigen::Index>(modes()));
    const double eps = in.epsilon;
    for (std::size_t m = 0; m < modes(); ++m) {
      const auto mi = static_cast<Eigen::Index>(m);
      const cplx phi = one(0, mi) * mask_[m];
      const Vec3& k = xi_[m];
      const double k2 = k.squaredNorm();
      const CVec3 kc = k.cast<cplx>();
      auto col = z.col(mi);
      col(RHO) = -eps * in.rho * in.width * k2 * phi;
      col.segment<3>(V) = eps * in.v.cast<cplx>() * phi;
      CVec3 h = eps * in.h.cast<cplx>() * phi, e = eps * in.E_solenoidal.cast<cplx>() * phi;
      if (k2 > 0.0) {
        h -= kc * (kc.transpose() * h)(0) / k2;
        e -= kc * (kc.transpose() * e)(0) / k2;
      } else {
        e.setZero();
      }
      col.segment<3>(H) = h;
      col.segment<3>(E) = e - eps * in.rho * in.width * I_UNIT * kc * phi;
    }
    if (in.l1_normalize && in.epsilon > 0.0) {
      const double l1 = l1_norm(z);
      if (l1 > 0.0) z *= in.epsilon / l1;
    }
    const double min_n = min_density(z);
    if (min_n < 0.5 * cfg_.params.n_inf)
      throw PositivityError("initial density falls below n_inf/2; reduce epsilon", min_n);
    if (report) {
      report->l1 = l1_norm(z);
      report->l2 = l2_norm(z);
      report->h3 = sobolev_norm(z, 3);
      const auto [re, rh] = constraint_residuals(z);
      report->divE_res = re;
      report->divh_res = rh;
      report->min_density = min_n;
      report->rho_mean = z(RHO, 0).real() / box_volume_;
      report->boundary_ratio = peak > 0.0 ? face / peak : 0.0;
    }
    return z;
  }

  // --- norms ----------------------------------------------------------------

  double weighted_sum(const State& z, const std::function<double(std::size_t)>& mult, int r0 = 0,
                      int rows = em_index::SIZE) const {
    double s = 0.0;
    for (std::size_t m = 0; m < modes(); ++m) {
      const double w = mult(m);
      if (w == 0.0) continue;
      s += weight_[m] * w * z.block(r0, static_cast<Eigen::Index>(m), rows, 1).squaredNorm();
    }
    return s / box_volume_;
  }
  double l2_norm(const State& z) const {
    return std::sqrt(weighted_sum(z, [](std::size_t) { return 1.0; }));
  }
  double sobolev_norm(const State& z, int s, int r0 = 0, int rows = em_index::SIZE) const {
    return std::sqrt(weighted_sum(z, [&](std::size_t m) { return std::pow(1.0 + xi_[m].squaredNorm(), s); }, r0, rows));
  }
  /// |(rho,v)|_{H3}^2 + |E|_{H2}^2 + |grad h|_{H1}^2
  double dissipation_density(const State& z) const {
    using namespace em_index;
    const double a = weighted_sum(z, [&](std::size_t m) { return std::pow(1.0 + xi_[m].squaredNorm(), 3); }, RHO, 4);
    const double b = weighted_sum(z, [&](std::size_t m) { return std::pow(1.0 + xi_[m].squaredNorm(), 2); }, E, 3);
    const double c = weighted_sum(
        z, [&](std::size_t m) { return xi_[m].squaredNorm() * (1.0 + xi_[m].squaredNorm()); }, H, 3);
    return a + b + c;
  }
  std::pair<double, double> constraint_residuals(const State& z) const {
    using namespace em_index;
    double se = 0.0, sh = 0.0;
    for (std::size_t m = 0; m < modes(); ++m) {
      const auto col = z.col(static_cast<Eigen::Index>(m));
      const CVec3 ik = I_UNIT * xi_[m].cast<cplx>();
      const cplx de = (ik.transpose() * col.segment<3>(E))(0) + col(RHO);
      const cplx dh = (ik.transpose() * col.segment<3>(H))(0);
      se += weight_[m] * std::norm(de);
      sh += weight_[m] * std::norm(dh);
    }
    return {std::sqrt(se / box_volume_), std::sqrt(sh / box_volume_)};
  }
  double l1_norm(const State& z) const {
    const auto phys = backward(z);
    const std::size_t n = fft_->real_size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double q = 0.0;
      for (int c = 0; c < em_index::SIZE; ++c) q += phys[static_cast<std::size_t>(c) * n + i] * phys[static_cast<std::size_t>(c) * n + i];
      s += std::sqrt(q);
    }
    return s * cell_volume_;
  }
  double min_density(const State& z) const {
    std::vector<double> rho(fft_->real_size());
    backward_row(z, em_index::RHO, rho.data());
    return cfg_.params.n_inf + *std::min_element(rho.begin(), rho.end());
  }

  // --- dynamics -------------------------------------------------------------

  struct ModeSources {
    Eigen::Matrix3cd Q;
    CVec3 R;
  };

  /// Nonlinear right-hand side (velocity rows only): i k.Q_hat + R_hat,
  /// dealiased. Optionally returns (Q_hat, R_hat) at the requested modes.
  State nonlinear(const State& z, const std::vector<std::size_t>* record = nullptr,
                  std::vector<ModeSources>* recorded = nullptr, double* min_n = nullptr) const {
    using namespace em_index;
    const std::size_t n = fft_->real_size();
    State zt = z;
    for (std::size_t m = 0; m < modes(); ++m) zt.col(static_cast<Eigen::Index>(m)) *= mask_[m];
    std::vector<double> phys(n * SIZE);
    for (int c = 0; c < SIZE; ++c) backward_row(zt, c, phys.data() + static_cast<std::size_t>(c) * n);
    std::vector<double> src(n * 12);  // Q (9, row-major) then R (3)
    double lowest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      auto at = [&](int c) { return phys[static_cast<std::size_t>(c) * n + i]; };
      const double rho = at(RHO);
      lowest = std::min(lowest, cfg_.params.n_inf + rho);
      if (cfg_.params.n_inf + rho < 0.5 * cfg_.params.n_inf)
        throw PositivityError("density fell below n_inf/2", cfg_.params.n_inf + rho);
      const auto s = point_sources(rho, Vec3(at(V), at(V + 1), at(V + 2)), Vec3(at(E), at(E + 1), at(E + 2)),
                                   Vec3(at(H), at(H + 1), at(H + 2)), cfg_.params);
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) src[static_cast<std::size_t>(3 * a + b) * n + i] = s.Q(a, b);
        src[static_cast<std::size_t>(9 + a) * n + i] = s.R(a);
      }
    }
    if (min_n) *min_n = lowest;
    Eigen::Matrix<cplx, 12, Eigen::Dynamic> hat(12, static_cast<Eigen::Index>(modes()));
    for (int c = 0; c < 12; ++c) {
      std::copy_n(src.data() + static_cast<std::size_t>(c) * n, n, fft_->real());
      fft_->forward();
      const cplx* s = fft_->spectral();
      for (std::size_t m = 0; m < modes(); ++m) hat(c, static_cast<Eigen::Index>(m)) = s[m] * cell_volume_;
    }
    State out = State::Zero(SIZE, static_cast<Eigen::Index>(modes()));
    for (std::size_t m = 0; m < modes(); ++m) {
      if (mask_[m] == 0.0) continue;
      const auto col = hat.col(static_cast<Eigen::Index>(m));
      for (int a = 0; a < 3; ++a) {
        cplx f = col(9 + a);
        for (int b = 0; b < 3; ++b) f += I_UNIT * xi_[m](b) * col(3 * a + b);
        out(V + a, static_cast<Eigen::Index>(m)) = f;
      }
    }
    if (record && recorded) {
      recorded->clear();
      for (std::size_t m : *record) {
        ModeSources s;
        for (int a = 0; a < 3; ++a) {
          for (int b = 0; b < 3; ++b) s.Q(a, b) = hat(3 * a + b, static_cast<Eigen::Index>(m));
          s.R(a) = hat(9 + a, static_cast<Eigen::Index>(m));
        }
        recorded->push_back(s);
      }
    }
    return out;
  }

  State apply(const std::vector<Green>& g, const State& z) const {
    State out(z.rows(), z.cols());
    for (std::size_t m = 0; m < modes(); ++m)
      out.col(static_cast<Eigen::Index>(m)).noalias() = g[m] * z.col(static_cast<Eigen::Index>(m));
    return out;
  }

  /// One Lawson RK4 step. With the nonlinearity off this is exact propagation.
  void step(State& z, const std::vector<std::size_t>* record = nullptr,
            std::vector<ModeSources>* recorded = nullptr, double* min_n = nullptr) const {
    if (!cfg_.nonlinear) {
      z = apply(green_full_, z);
      return;
    }
    const double h = dt_;
    const State k1 = nonlinear(z, record, recorded, min_n);
    const State zh = apply(green_half_, z);
    const State k1h = apply(green_half_, k1);
    const State k2 = nonlinear(zh + 0.5 * h * k1h);
    const State k3 = nonlinear(zh + 0.5 * h * k2);
    const State k4 = nonlinear(apply(green_half_, zh) + h * apply(green_half_, k3));
    const State mid = apply(green_half_, State(k1h + 2.0 * (k2 + k3)));
    z = apply(green_full_, z) + (h / 6.0) * (mid + k4);
  }

  /// Modes recorded for the Duhamel check: lowest axis and diagonal modes
  /// at dyadic indices inside the dealiasing mask.
  std::vector<std::size_t> subsample_modes(int count) const {
    std::vector<std::size_t> out;
    const double dk = 2.0 * PI / cfg_.L;
    for (int j = 1; static_cast<int>(out.size()) < count && 3 * j < cfg_.N; j *= 2) {
      for (const Vec3 target : {Vec3(j * dk, 0, 0), Vec3(j * dk, j * dk, 0)}) {
        for (std::size_t m = 0; m < modes(); ++m)
          if ((xi_[m] - target).norm() < 1e-9 * dk && mask_[m] != 0.0) {
            out.push_back(m);
            break;
          }
        if (static_cast<int>(out.size()) >= count) break;
      }
    }
    return out;
  }

  SimulationResult simulate() const {
    SimulationResult res;
    res.dt = dt_;
    res.wrap_time = wrap_time();
    if (cfg_.T > res.wrap_time)
      res.warnings.push_back("horizon T=" + fmt_num(cfg_.T) + " exceeds the wrap-around time " + fmt_num(res.wrap_time));
    State z = initial_state(&res.init);
    const double h3_0 = res.init.h3;
    const double scale = std::max(res.init.l2, std::numeric_limits<double>::min());
    const auto record_modes = subsample_modes(cfg_.spectra_subsample);
    for (std::size_t m : record_modes) {
      SourceHistory s;
      s.xi = xi_[m];
      res.spectra.push_back(s);
    }
    auto record = [&](double t, const std::vector<VecC>& cols, const std::vector<ModeSources>& src) {
      for (std::size_t r = 0; r < record_modes.size(); ++r) {
        auto& s = res.spectra[r];
        s.t.push_back(t);
        s.z.push_back(cols[r]);
        s.Q.push_back(src.empty() ? Eigen::Matrix3cd::Zero() : src[r].Q);
        s.R.push_back(src.empty() ? CVec3::Zero() : src[r].R);
      }
    };
    auto columns = [&](const State& zz) {
      std::vector<VecC> cols;
      for (std::size_t m : record_modes) cols.emplace_back(zz.col(static_cast<Eigen::Index>(m)));
      return cols;
    };
    auto& mon = res.monitors;
    double n_run = 0.0, d2 = 0.0, prev_d = 0.0;
    auto sample = [&](double t, double min_n) {
      const double l2 = l2_norm(z), h3 = sobolev_norm(z, 3), dd = dissipation_density(z);
      if (h3_0 > 0.0 && h3 > 10.0 * h3_0) throw BlowUpError("H3 norm exceeded 10x its initial value at t=" + fmt_num(t));
      if (!mon.t.empty()) d2 += 0.5 * (t - mon.t.back()) * (prev_d + dd);
      prev_d = dd;
      n_run = std::max(n_run, std::pow(1.0 + t, 0.75) * l2);
      const auto [re, rh] = constraint_residuals(z);
      res.max_constraint_residual = std::max(res.max_constraint_residual, std::max(re, rh) / scale);
      mon.t.push_back(t);
      mon.l2.push_back(l2);
      mon.h3.push_back(h3);
      mon.N.push_back(n_run);
      mon.D2.push_back(d2);
      mon.divE_res.push_back(re);
      mon.divh_res.push_back(rh);
      mon.min_density.push_back(std::isfinite(min_n) ? min_n : min_density(z));
    };
    const auto samples = static_cast<long>(std::floor(cfg_.T / cfg_.sample_dt + 1e-9));
    std::vector<ModeSources> src;
    double min_n = std::numeric_limits<double>::quiet_NaN();
    for (long s = 0;; ++s) {
      const double ts = s * cfg_.sample_dt;
      sample(ts, min_n);
      if (s == samples) break;
      for (int k = 0; k < steps_per_sample_; ++k) {
        const double t = ts + k * dt_;
        const auto before = columns(z);
        if (cfg_.nonlinear) {
          double mn = std::numeric_limits<double>::quiet_NaN();
          step(z, &record_modes, &src, &mn);  // sources are those of the state at t
          min_n = mn;
        } else {
          step(z);
        }
        if (!record_modes.empty()) record(t, before, src);
      }
    }
    if (!record_modes.empty()) {
      std::vector<ModeSources> last;
      if (cfg_.nonlinear) nonlinear(z, &record_modes, &last);
      record(static_cast<double>(samples) * cfg_.sample_dt, columns(z), last);
    }
    return res;
  }

 private:
  std::vector<double> profile_envelope(const GridField& g, const InitConfig& in) const {
    const std::size_t n = g.size();
    std::vector<double> f(n, 0.0);
    if (in.width <= 0.0) throw std::invalid_argument("profile width must be positive");
    auto gauss = [&](const std::array<double, 3>& x, const Vec3& c, double s) {
      double r2 = 0.0;
      for (int a = 0; a < cfg_.dims; ++a) r2 += (x[static_cast<std::size_t>(a)] - c(a)) * (x[static_cast<std::size_t>(a)] - c(a));
      return std::exp(-r2 / (2.0 * s * s));
    };
    std::mt19937_64 rng(in.seed);
    if (in.profile == "gaussian_bump") {
      for (std::size_t i = 0; i < n; ++i) f[i] = gauss(g.position(i), Vec3::Zero(), in.width);
    } else if (in.profile == "multi_bump") {
      std::uniform_real_distribution<double> u(-cfg_.L / 8, cfg_.L / 8);
      std::uniform_real_distribution<double> amp(0.5, 1.0);
      for (int b = 0; b < std::max(1, in.bumps); ++b) {
        Vec3 c = Vec3::Zero();
        for (int a = 0; a < cfg_.dims; ++a) c(a) = u(rng);
        const double w = (b % 2 ? -1.0 : 1.0) * amp(rng);
        for (std::size_t i = 0; i < n; ++i) f[i] += w * gauss(g.position(i), c, in.width);
      }
    } else if (in.profile == "random_band_limited") {
      // Gaussian window times a random superposition of plane waves with |k| <= k_max.
      std::normal_distribution<double> nd;
      std::uniform_real_distribution<double> phase(0.0, 2.0 * PI);
      const int waves = 24;
      std::vector<std::pair<Vec3, double>> plane;
      std::vector<double> amps;
      for (int w = 0; w < waves; ++w) {
        Vec3 k = Vec3::Zero();
        for (int a = 0; a < cfg_.dims; ++a) k(a) = nd(rng);
        k *= in.k_max * std::uniform_real_distribution<double>(0.0, 1.0)(rng) / std::max(k.norm(), 1e-12);
        plane.push_back({k, phase(rng)});
        amps.push_back(nd(rng));
      }
      for (std::size_t i = 0; i < n; ++i) {
        const auto x = g.position(i);
        double s = 0.0;
        for (std::size_t w = 0; w < plane.size(); ++w)
          s += amps[w] * std::cos(plane[w].first(0) * x[0] + plane[w].first(1) * x[1] + plane[w].first(2) * x[2] +
                                  plane[w].second);
        f[i] = s * gauss(x, Vec3::Zero(), in.width) / std::sqrt(static_cast<double>(waves));
      }
    } else {
      throw std::invalid_argument("unknown profile '" + in.profile + "'");
    }
    return f;
  }

  RunConfig cfg_;
  HyperbolicSystem sys_;
  std::vector<int> shape_;
  std::unique_ptr<detail::RealFft> fft_;
  std::vector<Vec3> xi_;
  std::vector<double> weight_, mask_;
  double cell_volume_ = 1.0, box_volume_ = 1.0;
  double dt_ = 0.0;
  int steps_per_sample_ = 1;
  std::vector<Green> green_full_, green_half_;
};

// ---------------------------------------------------------------------------
// Reports.

inline CsvWriter monitors_csv(const Monitors& m) {
  CsvWriter w({"t", "l2", "h3", "N", "D2", "divE_res", "divh_res"});
  for (std::size_t i = 0; i < m.t.size(); ++i)
    w.row({m.t[i], m.l2[i], m.h3[i], m.N[i], m.D2[i], m.divE_res[i], m.divh_res[i]});
  return w;
}

struct DecayReport {
  FitResult fit;
  double t0 = 0.0, t1 = 0.0;
  double target = -0.75;
  double band = 0.0;  // max/min of |z|_{L2}(1+t)^{3/4} over the window
  bool pass = false;
  std::vector<std::string> warnings;
};

/// Slope of log|z|_{L2} against log(1+t) on [t0, t1].
inline DecayReport decay_report(const Monitors& m, double t0, double t1, double slope_max = -0.6,
                                double band_max = 4.0) {
  if (t0 < 2.0) throw std::invalid_argument("decay window must start after the transient (t >= 2)");
  std::vector<std::pair<double, double>> series;
  for (std::size_t i = 0; i < m.t.size(); ++i) series.emplace_back(m.t[i], m.l2[i]);
  DecayReport r;
  r.t0 = t0;
  r.t1 = t1;
  r.fit = fit_exponent(series, t0, t1, 4);
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& [t, v] : series)
    if (t >= t0 && t <= t1) {
      const double c = v * std::pow(1.0 + t, 0.75);
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
  r.band = hi / lo;
  r.pass = r.fit.slope <= slope_max && r.band <= band_max;
  if (r.fit.r_squared < 0.95) r.warnings.push_back("r^2 = " + fmt_num(r.fit.r_squared) + " < 0.95");
  return r;
}

inline nlohmann::json decay_json(const DecayReport& r) {
  nlohmann::json w = nlohmann::json::array();
  for (const auto& s : r.warnings) w.push_back(s);
  return {{"window", {json_num(r.t0), json_num(r.t1)}}, {"slope", json_num(r.fit.slope)},
          {"r_squared", json_num(r.fit.r_squared)}, {"target", json_num(r.target)},
          {"compensated_band", json_num(r.band)}, {"pass", r.pass}, {"warnings", w}};
}

inline nlohmann::json simulation_json(const RunConfig& cfg, const SimulationResult& res,
                                      const std::optional<DecayReport>& decay = {}) {
  const auto& m = res.monitors;
  nlohmann::json w = nlohmann::json::array();
  for (const auto& s : res.warnings) w.push_back(s);
  nlohmann::json j = {
      {"config", run_config_to_json(cfg)},
      {"dt", json_num(res.dt)},
      {"wrap_time", json_num(res.wrap_time)},
      {"initial", {{"l1", json_num(res.init.l1)}, {"l2", json_num(res.init.l2)}, {"h3", json_num(res.init.h3)},
                   {"divE_res", json_num(res.init.divE_res)}, {"divh_res", json_num(res.init.divh_res)},
                   {"min_density", json_num(res.init.min_density)}, {"rho_mean", json_num(res.init.rho_mean)}}},
      {"final", m.t.empty() ? nlohmann::json() :
                    nlohmann::json{{"t", json_num(m.t.back())}, {"l2", json_num(m.l2.back())},
                                   {"N", json_num(m.N.back())}, {"D2", json_num(m.D2.back())}}},
      {"max_constraint_residual_rel", json_num(res.max_constraint_residual)},
      {"warnings", w}};
  if (!m.t.empty()) {
    double n1 = m.N.front();
    for (std::size_t i = 0; i < m.t.size(); ++i)
      if (m.t[i] <= 1.0 + 1e-12) n1 = m.N[i];
    j["N_ratio_T_over_1"] = json_num(n1 > 0.0 ? m.N.back() / n1 : 0.0);
    j["min_density"] = json_num(*std::min_element(m.min_density.begin(), m.min_density.end()));
  }
  if (decay) j["decay"] = decay_json(*decay);
  return j;
}

// ---------------------------------------------------------------------------
// Gagliardo-Nirenberg ratios with |d^k f| read as the L2 norm of |grad|^k f.

struct GnRatios {
  double first_over_third = 0.0;   // |Df| / (|f|^{2/3} |D^3 f|^{1/3})
  double second_over_third = 0.0;  // |D^2 f| / (|f|^{1/3} |D^3 f|^{2/3})
  double first_over_second = 0.0;  // |Df| / (|f|^{1/2} |D^2 f|^{1/2})
  double max() const { return std::max({first_over_third, second_over_third, first_over_second}); }
};

inline GnRatios gn_ratios_spectral(const GridField& spec) {
  if (spec.space() != Space::spectral) throw std::invalid_argument("expected a spectral field");
  double s[4] = {0, 0, 0, 0};
  for (int c = 0; c < spec.components(); ++c)
    for (std::size_t i = 0; i < spec.size(); ++i) {
      const double k2 = spec.frequency_norm(i) * spec.frequency_norm(i);
      const double a = std::norm(spec.at(i, c));
      s[0] += a;
      s[1] += k2 * a;
      s[2] += k2 * k2 * a;
      s[3] += k2 * k2 * k2 * a;
    }
  if (s[0] == 0.0) throw std::invalid_argument("Gagliardo-Nirenberg ratios need a nonzero field");
  // Common 1/V factors cancel in every ratio.
  const double f0 = std::sqrt(s[0]), f1 = std::sqrt(s[1]), f2 = std::sqrt(s[2]), f3 = std::sqrt(s[3]);
  GnRatios r;
  r.first_over_third = f1 / (std::cbrt(f0 * f0) * std::cbrt(f3));
  r.second_over_third = f2 / (std::cbrt(f0) * std::cbrt(f3 * f3));
  r.first_over_second = f1 / std::sqrt(f0 * f2);
  return r;
}

inline GnRatios gn_check(const GridField& f) {
  return f.space() == Space::spectral ? gn_ratios_spectral(f) : gn_ratios_spectral(to_spectral(f));
}

struct GnCorpusReport {
  std::size_t fields = 0;
  double max_ratio = 0.0;
  GnRatios worst;
};

/// Random band-limited fields: coefficients on the integer wave vectors with
/// |k| <= k_max are drawn in a resolution-independent order, so the same
/// corpus is produced on any grid that resolves the band.
inline GnCorpusReport gn_corpus(int dims, int points, double length, double k_max, std::size_t count,
                                std::uint64_t seed) {
  GridField g = GridField::cube(dims, points, length);
  const double dk = 2.0 * PI / length;
  const int jmax = static_cast<int>(std::floor(k_max / dk));
  if (3 * jmax >= points) throw std::invalid_argument("band exceeds the dealiasing cutoff of this grid");
  std::vector<std::array<int, 3>> waves;
  for (int a = -jmax; a <= jmax; ++a)
    for (int b = (dims > 1 ? -jmax : 0); b <= (dims > 1 ? jmax : 0); ++b)
      for (int c = (dims > 2 ? -jmax : 0); c <= (dims > 2 ? jmax : 0); ++c)
        if ((a * a + b * b + c * c) * dk * dk <= k_max * k_max && (a || b || c)) waves.push_back({a, b, c});
  auto index_of = [&](const std::array<int, 3>& w) {
    std::size_t idx = 0;
    for (int a = 0; a < dims; ++a) {
      const int m = w[static_cast<std::size_t>(a)];
      idx = idx * static_cast<std::size_t>(points) + static_cast<std::size_t>(m >= 0 ? m : m + points);
    }
    return idx;
  };
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<std::size_t> pick(1, std::max<std::size_t>(1, waves.size()));
  GnCorpusReport rep;
  for (std::size_t f = 0; f < count; ++f) {
    GridField s(dims, g.shape(), g.box(), 1, Space::spectral);
    auto& vals = s.values();
    // A random number of active waves with random decay across the band.
    const std::size_t active = pick(rng);
    const double slope = 3.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    for (std::size_t w = 0; w < waves.size(); ++w) {
      const cplx c(nd(rng), nd(rng));
      if (w < active) {
        const auto& wv = waves[w];
        const double k = dk * std::sqrt(double(wv[0] * wv[0] + wv[1] * wv[1] + wv[2] * wv[2]));
        vals[index_of(wv)] = c * std::pow(1.0 + k, -slope);
      }
    }
    const auto r = gn_ratios_spectral(s);
    ++rep.fields;
    if (r.max() > rep.max_ratio) {
      rep.max_ratio = r.max();
      rep.worst = r;
    }
  }
  return rep;
}

}  // namespace emdecay
