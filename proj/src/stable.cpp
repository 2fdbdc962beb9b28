#include "fkstable/stable.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_sf_bessel.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>

namespace fkstable::stable {

namespace {

const double kPi = 3.14159265358979323846;

struct GslInit {
  GslInit() { gsl_set_error_handler_off(); }
};
const GslInit g_gsl_init;

double norm_of(const double* x, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) s += x[i] * x[i];
  return std::sqrt(s);
}

// Oscillating kernel B(z) of the inversion integral and (approximate)
// locations of its positive zeros, used as panel boundaries.
struct OscKernel {
  enum Kind { kCos, kSin, kBessel } kind;
  double nu = 0.0;

  double operator()(double z) const {
    switch (kind) {
      case kCos: return std::cos(z);
      case kSin: return std::sin(z);
      default: break;
    }
    if (nu == 0.0) return gsl_sf_bessel_J0(z);
    if (nu == 1.0) return gsl_sf_bessel_J1(z);
    double ip;
    if (std::modf(nu, &ip) == 0.0) return gsl_sf_bessel_Jn(static_cast<int>(ip), z);
    return gsl_sf_bessel_Jnu(nu, z);
  }

  // k-th positive zero, k >= 1. Bessel zeros via McMahon's expansion; panel
  // boundaries only need to track the sign changes, not hit them exactly.
  double zero(std::uint64_t k) const {
    if (kind == kCos) return (static_cast<double>(k) - 0.5) * kPi;
    if (kind == kSin) return static_cast<double>(k) * kPi;
    double mu = 4.0 * nu * nu;
    double beta = (static_cast<double>(k) + 0.5 * nu - 0.25) * kPi;
    double b8 = 8.0 * beta;
    return beta - (mu - 1.0) / b8 -
           4.0 * (mu - 1.0) * (7.0 * mu - 31.0) / (3.0 * b8 * b8 * b8);
  }
};

// I = int_0^inf exp(-u^alpha) u^pw B(u r) du, by panels: a tanh-sinh panel at
// the origin (u^alpha and u^pw are non-smooth there), then Gauss-Legendre panels
// bounded by kernel zeros and by a geometric growth cap; the sweep stops once
// two consecutive panels are below tolerance past the envelope peak.
double osc_integral(double alpha, double pw, const OscKernel& B, double r,
                    double rel_tol) {
  auto env = [&](double u) { return std::pow(u, pw) * std::exp(-std::pow(u, alpha)); };
  double ustar = pw > 0 ? std::pow(pw / alpha, 1.0 / alpha) : 0.0;
  double env_max = pw > 0 ? env(ustar) : 1.0;

  double u_end = std::max(2.0 * ustar, 1.0);
  while (env(u_end) > 1e-21 * env_max) u_end *= 1.2;

  auto f = [&](double u) { return env(u) * B(u * r); };

  // Next kernel zero strictly beyond cur, compared after division by r so a
  // rounded quotient can never produce a zero-width panel.
  std::uint64_t k = 1;
  auto next_zero = [&](double cur) {
    while (B.zero(k) / r <= cur) ++k;
    return B.zero(k) / r;
  };

  bool oscillatory = r > 0 && B.zero(1) / r < u_end;
  double c0 = std::min(u_end, std::max(ustar, 1.0));
  if (oscillatory) c0 = std::min(c0, B.zero(1) / r);

  KahanSum sum;
  sum.add(tanh_sinh(f, 0.0, c0, std::min(1e-12, 0.01 * rel_tol)));

  double cur = c0;
  double prev_abs = std::numeric_limits<double>::infinity();
  std::uint64_t panels = 0;
  const std::uint64_t max_panels = 30000000;
  while (cur < u_end) {
    double nxt = std::min(u_end, cur * 1.6 + 0.5);
    if (r > 0) {
      double z = next_zero(cur);
      if (z < nxt) nxt = z;
    }
    double v = gauss_legendre_16(f, cur, nxt);
    sum.add(v);
    double tol_abs = rel_tol * std::max(std::abs(sum.get()), 1e-300);
    if (cur > ustar && panels > 2 && std::abs(v) < 0.25 * tol_abs &&
        prev_abs < 0.25 * tol_abs) {
      break;
    }
    prev_abs = std::abs(v);
    cur = nxt;
    if (++panels > max_panels) {
      throw NumericError("density quadrature did not converge (panel cap)");
    }
  }
  return sum.get();
}

double lgamma_abs(double x) { return std::lgamma(x); }

void write_bytes(std::ofstream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void read_bytes(std::ifstream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw ConfigError("density table file truncated");
}

}  // namespace

double stable_constant(int d, double gamma) {
  require(d >= 1, "stable_constant: d >= 1");
  require(gamma < d && gamma != 0.0, "stable_constant: need gamma < d, gamma != 0");
  double lg = -gamma * std::log(2.0) - 0.5 * d * std::log(kPi) +
              lgamma_abs(0.5 * (d - gamma)) - lgamma_abs(0.5 * gamma);
  return std::exp(lg);
}

double levy_measure_radial(const StableParams& prm, double r) {
  prm.validate();
  require(r > 0.0, "levy_measure: x must be nonzero");
  return stable_constant(prm.d, -prm.alpha) * std::pow(r, -prm.d - prm.alpha);
}

double levy_measure_density(const StableParams& prm, const double* x) {
  return levy_measure_radial(prm, norm_of(x, prm.d));
}

double potential_kernel_radial(const StableParams& prm, double r) {
  prm.validate();
  require(r > 0.0, "potential_kernel: x must be nonzero");
  if (prm.alpha < prm.d) {
    return stable_constant(prm.d, prm.alpha) * std::pow(r, prm.alpha - prm.d);
  }
  // d = 1 compensated kernels.
  if (prm.alpha == 1.0) return std::log(1.0 / r) / kPi;
  return std::pow(r, prm.alpha - 1.0) /
         (2.0 * std::tgamma(prm.alpha) * std::cos(0.5 * kPi * prm.alpha));
}

double potential_kernel(const StableParams& prm, const double* x) {
  return potential_kernel_radial(prm, norm_of(x, prm.d));
}

double density_at_zero(const StableParams& prm) {
  prm.validate();
  double d = prm.d;
  double lg = std::lgamma(d / prm.alpha) - std::lgamma(0.5 * d) -
              d * std::log(2.0) - 0.5 * d * std::log(kPi);
  return std::exp(lg) * (2.0 / prm.alpha);
}

double density_quadrature(const StableParams& prm, double r, double rel_tol) {
  prm.validate();
  require(r >= 0.0, "density_quadrature: r >= 0");
  if (r == 0.0) return density_at_zero(prm);
  if (prm.d == 1) {
    OscKernel B{OscKernel::kCos, 0.0};
    return osc_integral(prm.alpha, 0.0, B, r, rel_tol) / kPi;
  }
  double nu = 0.5 * prm.d - 1.0;
  OscKernel B{OscKernel::kBessel, nu};
  if (prm.d == 3) B = OscKernel{OscKernel::kSin, 0.0};  // J_1/2 up to prefactor
  double I;
  if (prm.d == 3) {
    // p1(r) = (2 pi^2 r)^{-1} int exp(-u^alpha) u sin(u r) du
    I = osc_integral(prm.alpha, 1.0, B, r, rel_tol);
    return I / (2.0 * kPi * kPi * r);
  }
  I = osc_integral(prm.alpha, 0.5 * prm.d, B, r, rel_tol);
  return std::pow(2.0 * kPi, -0.5 * prm.d) * std::pow(r, 1.0 - 0.5 * prm.d) * I;
}

double density_quadrature_derivative(const StableParams& prm, double r, double rel_tol) {
  prm.validate();
  require(r >= 0.0, "density_quadrature_derivative: r >= 0");
  if (r == 0.0) return 0.0;
  if (prm.d == 1) {
    OscKernel B{OscKernel::kSin, 0.0};
    return -osc_integral(prm.alpha, 1.0, B, r, rel_tol) / kPi;
  }
  double nu = 0.5 * prm.d;
  OscKernel B{OscKernel::kBessel, nu};
  double I = osc_integral(prm.alpha, 0.5 * prm.d + 1.0, B, r, rel_tol);
  return -std::pow(2.0 * kPi, -0.5 * prm.d) * std::pow(r, 1.0 - 0.5 * prm.d) * I;
}

DensityTable::DensityTable(StableParams prm, DensityTableConfig cfg)
    : prm_(prm), cfg_(cfg) {
  prm_.validate();
  require(cfg_.r_min > 0 && cfg_.r_switch > cfg_.r_min, "DensityTable: bad radii");
  require(cfg_.log_step > 0, "DensityTable: bad log_step");
  build();
}

void DensityTable::build() {
  p0_ = density_at_zero(prm_);
  tail_coeff_ = stable_constant(prm_.d, -prm_.alpha);

  double lo = std::log(cfg_.r_min), hi = std::log(cfg_.r_switch);
  std::size_t n = static_cast<std::size_t>(std::ceil((hi - lo) / cfg_.log_step)) + 1;
  n = std::max<std::size_t>(n, 8);
  double step = (hi - lo) / static_cast<double>(n - 1);

  lr_.resize(n);
  lv_.resize(n);
  slope_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double lr = lo + step * static_cast<double>(i);
    double r = std::exp(lr);
    double v = density_quadrature(prm_, r, cfg_.quad_rel_tol);
    if (!(v > 0.0)) throw NumericError("density table: nonpositive density value");
    double dv = density_quadrature_derivative(prm_, r, cfg_.quad_rel_tol);
    lr_[i] = lr;
    lv_[i] = std::log(v);
    slope_[i] = r * dv / v;
  }
  p_rmin_ = std::exp(lv_.front());
  loglog_ = Pchip(lr_, lv_, slope_);

  double p_sw = std::exp(lv_.back());
  double tail_sw = tail_coeff_ * std::pow(cfg_.r_switch, -prm_.d - prm_.alpha);
  tail_err_ratio_ =
      std::abs(p_sw - tail_sw) / p_sw / std::pow(cfg_.r_switch, -prm_.alpha);
}

double DensityTable::p1(double r) const {
  require(r >= 0.0, "p1: r >= 0");
  if (r <= cfg_.r_min) {
    double w = r / cfg_.r_min;
    return p0_ + (p_rmin_ - p0_) * w * w;
  }
  if (r < cfg_.r_switch) return std::exp(loglog_(std::log(r)));
  return tail_coeff_ * std::pow(r, -prm_.d - prm_.alpha);
}

double DensityTable::p_radial(double t, double r) const {
  require(t > 0.0, "transition density: t > 0");
  double ts = std::pow(t, -1.0 / prm_.alpha);
  return std::pow(t, -static_cast<double>(prm_.d) / prm_.alpha) * p1(ts * r);
}

double DensityTable::p(double t, const double* x) const {
  return p_radial(t, norm_of(x, prm_.d));
}

DensityTable::Info DensityTable::p_info(double t, double r) const {
  Info out;
  require(t > 0.0, "transition density: t > 0");
  double rhat = std::pow(t, -1.0 / prm_.alpha) * r;
  out.value = std::pow(t, -static_cast<double>(prm_.d) / prm_.alpha) * p1(rhat);
  out.tail_regime = rhat >= cfg_.r_switch;
  if (out.tail_regime) {
    out.est_rel_err = std::min(1.0, tail_err_ratio_ * std::pow(rhat, -prm_.alpha));
  } else {
    out.est_rel_err = std::max(1e-8, 10.0 * cfg_.quad_rel_tol);
  }
  return out;
}

std::string DensityTable::cache_name() const {
  std::ostringstream os;
  os.precision(10);
  os << "dtab_a" << prm_.alpha << "_d" << prm_.d << "_m" << cfg_.r_min << "_s"
     << cfg_.r_switch << "_h" << cfg_.log_step;
  return os.str();
}

namespace {
constexpr char kTableMagic[8] = {'F', 'K', 'D', 'T', 'A', 'B', '0', '1'};
}

void DensityTable::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot open density table file for writing: " + path);
  write_bytes(os, kTableMagic, sizeof kTableMagic);
  write_bytes(os, &prm_.alpha, sizeof(double));
  std::int64_t d = prm_.d;
  write_bytes(os, &d, sizeof d);
  write_bytes(os, &cfg_, sizeof cfg_);
  write_bytes(os, &p0_, sizeof p0_);
  write_bytes(os, &p_rmin_, sizeof p_rmin_);
  write_bytes(os, &tail_coeff_, sizeof tail_coeff_);
  write_bytes(os, &tail_err_ratio_, sizeof tail_err_ratio_);
  std::uint64_t n = lr_.size();
  write_bytes(os, &n, sizeof n);
  write_bytes(os, lr_.data(), n * sizeof(double));
  write_bytes(os, lv_.data(), n * sizeof(double));
  write_bytes(os, slope_.data(), n * sizeof(double));
  if (!os) throw ConfigError("short write on density table file: " + path);
}

DensityTable DensityTable::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open density table file: " + path);
  char magic[8];
  read_bytes(is, magic, sizeof magic);
  if (std::memcmp(magic, kTableMagic, sizeof magic) != 0) {
    throw ConfigError("density table file has wrong magic/version: " + path);
  }
  DensityTable t;
  read_bytes(is, &t.prm_.alpha, sizeof(double));
  std::int64_t d = 0;
  read_bytes(is, &d, sizeof d);
  t.prm_.d = static_cast<int>(d);
  read_bytes(is, &t.cfg_, sizeof t.cfg_);
  read_bytes(is, &t.p0_, sizeof t.p0_);
  read_bytes(is, &t.p_rmin_, sizeof t.p_rmin_);
  read_bytes(is, &t.tail_coeff_, sizeof t.tail_coeff_);
  read_bytes(is, &t.tail_err_ratio_, sizeof t.tail_err_ratio_);
  std::uint64_t n = 0;
  read_bytes(is, &n, sizeof n);
  if (n < 2 || n > (1u << 24)) throw ConfigError("density table file corrupt: " + path);
  t.prm_.validate();
  t.lr_.resize(n);
  t.lv_.resize(n);
  t.slope_.resize(n);
  read_bytes(is, t.lr_.data(), n * sizeof(double));
  read_bytes(is, t.lv_.data(), n * sizeof(double));
  read_bytes(is, t.slope_.data(), n * sizeof(double));
  t.loglog_ = Pchip(t.lr_, t.lv_, t.slope_);
  return t;
}

namespace {
std::mutex g_table_mu;
std::string g_cache_dir;
std::map<std::string, std::shared_ptr<const DensityTable>> g_tables;
}  // namespace

void set_density_cache_dir(const std::string& dir) {
  std::lock_guard<std::mutex> lk(g_table_mu);
  g_cache_dir = dir;
}

std::string density_cache_dir() {
  std::lock_guard<std::mutex> lk(g_table_mu);
  return g_cache_dir;
}

std::shared_ptr<const DensityTable> density_table(const StableParams& prm,
                                                  const DensityTableConfig& cfg) {
  prm.validate();
  std::ostringstream key;
  key.precision(10);
  key << prm.alpha << "|" << prm.d << "|" << cfg.r_min << "|" << cfg.r_switch << "|"
      << cfg.log_step;
  std::lock_guard<std::mutex> lk(g_table_mu);
  auto it = g_tables.find(key.str());
  if (it != g_tables.end()) return it->second;

  std::shared_ptr<DensityTable> tab;
  std::filesystem::path file;
  // Try the disk cache first, then build and persist.
  if (!g_cache_dir.empty()) {
    std::ostringstream fn;
    fn.precision(10);
    fn << "dtab_a" << prm.alpha << "_d" << prm.d << "_m" << cfg.r_min << "_s"
       << cfg.r_switch << "_h" << cfg.log_step << ".bin";
    file = std::filesystem::path(g_cache_dir) / fn.str();
    if (std::filesystem::exists(file)) {
      try {
        tab = std::make_shared<DensityTable>(DensityTable::load(file.string()));
        if (tab->params().alpha != prm.alpha || tab->params().d != prm.d) tab.reset();
      } catch (const std::exception&) {
        tab.reset();
      }
    }
  }
  if (!tab) {
    tab = std::make_shared<DensityTable>(prm, cfg);
    if (!g_cache_dir.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(g_cache_dir, ec);
      try {
        tab->save(file.string());
      } catch (const std::exception&) {
        // cache persistence is best-effort
      }
    }
  }
  g_tables[key.str()] = tab;
  return tab;
}

double transition_density(const StableParams& prm, double t, const double* x) {
  return density_table(prm)->p(t, x);
}

double transition_density_radial(const StableParams& prm, double t, double r) {
  return density_table(prm)->p_radial(t, r);
}

DensityTable::Info transition_density_info(const StableParams& prm, double t, double r) {
  return density_table(prm)->p_info(t, r);
}

BoundsCheck density_bounds_check(const StableParams& prm, const std::vector<double>& t_grid,
                                 const std::vector<double>& r_grid) {
  prm.validate();
  require(!t_grid.empty() && !r_grid.empty(), "density_bounds_check: empty grids");
  BoundsCheck out;
  auto tab = density_table(prm);
  double dd = prm.d;
  for (double t : t_grid) {
    require(t > 0, "density_bounds_check: t > 0");
    for (double r : r_grid) {
      double p = tab->p_radial(t, r);
      double env = std::pow(t, -dd / prm.alpha);
      if (r > 0) env = std::min(env, t * std::pow(r, -dd - prm.alpha));
      out.t.push_back(t);
      out.r.push_back(r);
      out.p.push_back(p);
      out.envelope.push_back(env);
      out.max_over = std::max(out.max_over, p / env);
      out.max_under = std::max(out.max_under, env / p);
    }
  }
  out.C = std::max(out.max_over, out.max_under);
  return out;
}

double sample_standard_1d(double alpha, RngStream& rng) {
  double u = (rng.uniform() - 0.5) * kPi;  // open (-pi/2, pi/2)
  double w = rng.exponential();
  double t1 = std::sin(alpha * u) / std::pow(std::cos(u), 1.0 / alpha);
  double t2 = std::pow(std::cos((1.0 - alpha) * u) / w, (1.0 - alpha) / alpha);
  return t1 * t2;
}

double sample_subordinator(double gamma, RngStream& rng) {
  require(gamma > 0.0 && gamma < 1.0, "sample_subordinator: gamma in (0,1)");
  double u = rng.uniform() * kPi;  // open (0, pi)
  double w = rng.exponential();
  double su = std::sin(u);
  double a = std::pow(std::sin(gamma * u) / su, gamma / (1.0 - gamma)) *
             (std::sin((1.0 - gamma) * u) / su);
  return std::pow(a / w, (1.0 - gamma) / gamma);
}

void sample_increment(const StableParams& prm, double t, RngStream& rng, double* out) {
  prm.validate();
  require(t > 0.0, "sample_increment: t > 0");
  double scale = std::pow(t, 1.0 / prm.alpha);
  if (prm.d == 1) {
    out[0] = scale * sample_standard_1d(prm.alpha, rng);
    return;
  }
  double s = sample_subordinator(0.5 * prm.alpha, rng);
  double c = scale * std::sqrt(2.0 * s);
  for (int i = 0; i < prm.d; ++i) out[i] = c * rng.normal();
}

std::vector<double> sample_increment(const StableParams& prm, double t, RngStream& rng) {
  std::vector<double> out(static_cast<std::size_t>(prm.d));
  sample_increment(prm, t, rng, out.data());
  return out;
}

double bridge_weight(const StableParams& prm, double s, const double* x, double t,
                     const double* y) {
  prm.validate();
  require(t > s, "bridge_weight: requires s < t");
  std::vector<double> diff(static_cast<std::size_t>(prm.d));
  for (int i = 0; i < prm.d; ++i) diff[static_cast<std::size_t>(i)] = y[i] - x[i];
  return transition_density(prm, t - s, diff.data());
}

namespace {

// Grid inverse-CDF draw from f(z) ~ p(dt1, z - a) p(dt2, b - z), d = 1 only.
double bridge_fallback_1d(const DensityTable& tab, double a, double b, double dt1,
                          double dt2, RngStream& rng, const BridgeOpts& opts) {
  double alpha = tab.params().alpha;
  double w = opts.fallback_width * (std::pow(dt1, 1.0 / alpha) + std::pow(dt2, 1.0 / alpha));
  double lo = std::min(a, b) - w, hi = std::max(a, b) + w;
  int n = std::max(16, opts.fallback_grid);
  double dz = (hi - lo) / n;
  std::vector<double> cdf(static_cast<std::size_t>(n) + 1, 0.0);
  double prev = tab.p_radial(dt1, std::abs(lo - a)) * tab.p_radial(dt2, std::abs(b - lo));
  for (int j = 1; j <= n; ++j) {
    double z = lo + dz * j;
    double f = tab.p_radial(dt1, std::abs(z - a)) * tab.p_radial(dt2, std::abs(b - z));
    cdf[static_cast<std::size_t>(j)] =
        cdf[static_cast<std::size_t>(j) - 1] + 0.5 * (prev + f) * dz;
    prev = f;
  }
  double total = cdf.back();
  if (!(total > 0.0)) throw NumericError("bridge fallback: vanishing conditional mass");
  double target = rng.uniform() * total;
  auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
  std::size_t j = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()),
                                        cdf.size() - 1);
  double c0 = cdf[j - 1], c1 = cdf[j];
  double th = (c1 > c0) ? (target - c0) / (c1 - c0) : 0.5;
  return lo + dz * (static_cast<double>(j - 1) + th);
}

}  // namespace

PathSkeleton sample_bridge_skeleton(const StableParams& prm, double s, const double* x,
                                    double t, const double* y,
                                    const std::vector<double>& interior_times,
                                    RngStream& rng, const BridgeOpts& opts,
                                    BridgeDiagnostics* diag) {
  prm.validate();
  require(t > s, "bridge: requires s < t");
  for (std::size_t i = 0; i < interior_times.size(); ++i) {
    require(interior_times[i] > s && interior_times[i] < t,
            "bridge: interior times must lie in (s,t)");
    if (i > 0) {
      require(interior_times[i] > interior_times[i - 1],
              "bridge: interior times must be strictly increasing");
    }
  }
  auto tab = density_table(prm);
  int d = prm.d;
  std::size_t n_pts = interior_times.size() + 2;

  PathSkeleton out;
  out.d = d;
  out.times.resize(n_pts);
  out.pos.assign(n_pts * static_cast<std::size_t>(d), 0.0);
  out.times.front() = s;
  out.times.back() = t;
  std::copy(x, x + d, out.point(0));
  std::copy(y, y + d, out.point(n_pts - 1));
  for (std::size_t i = 0; i < interior_times.size(); ++i) out.times[i + 1] = interior_times[i];

  std::vector<double> cur(x, x + d), z(static_cast<std::size_t>(d)),
      diff(static_cast<std::size_t>(d));
  double t_prev = s;
  for (std::size_t i = 1; i + 1 < n_pts; ++i) {
    double tau = out.times[i];
    double dt1 = tau - t_prev;
    double dt2 = t - tau;
    bool forward = dt2 >= dt1;  // test acceptance against the longer gap
    double bound = tab->p_radial(forward ? dt2 : dt1, 0.0);
    bool accepted = false;
    for (std::uint64_t it = 0; it < opts.max_rejections; ++it) {
      if (diag) ++diag->proposals;
      if (forward) {
        sample_increment(prm, dt1, rng, z.data());
        for (int c = 0; c < d; ++c) {
          z[static_cast<std::size_t>(c)] += cur[static_cast<std::size_t>(c)];
          diff[static_cast<std::size_t>(c)] = y[c] - z[static_cast<std::size_t>(c)];
        }
        if (rng.uniform() * bound < tab->p(dt2, diff.data())) {
          accepted = true;
          break;
        }
      } else {
        sample_increment(prm, dt2, rng, z.data());
        for (int c = 0; c < d; ++c) {
          z[static_cast<std::size_t>(c)] = y[c] - z[static_cast<std::size_t>(c)];
          diff[static_cast<std::size_t>(c)] =
              z[static_cast<std::size_t>(c)] - cur[static_cast<std::size_t>(c)];
        }
        if (rng.uniform() * bound < tab->p(dt1, diff.data())) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      if (d == 1) {
        if (diag) ++diag->fallbacks;
        z[0] = bridge_fallback_1d(*tab, cur[0], y[0], dt1, dt2, rng, opts);
      } else {
        std::ostringstream msg;
        msg << "bridge: rejection cap " << opts.max_rejections
            << " exceeded at time " << tau << " (d = " << d
            << ", no inverse-CDF fallback above d = 1)";
        throw NumericError(msg.str());
      }
    }
    std::copy(z.begin(), z.end(), out.point(i));
    cur = z;
    t_prev = tau;
  }
  return out;
}

}  // namespace fkstable::stable
