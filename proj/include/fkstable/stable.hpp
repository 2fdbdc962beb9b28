#pragma once
// Rotationally invariant alpha-stable process core: exact increment samplers,
// transition density evaluation by numerical Fourier inversion with cached
// radial tables, Levy measure and potential kernels, and exact bridge
// skeleton sampling by rejection.

#include <memory>
#include <string>
#include <vector>

#include "fkstable/common.hpp"

namespace fkstable::stable {

// Isotropic stable process with E^0 exp(i xi . X_t) = exp(-t |xi|^alpha).
// alpha = 2 is excluded throughout.
struct StableParams {
  double alpha = 1.0;
  int d = 1;

  void validate() const {
    require(alpha > 0.0 && alpha < 2.0, "StableParams: alpha must lie in (0,2)");
    require(d >= 1, "StableParams: d must be >= 1");
  }
};

// A_{d,gamma} = 2^{-gamma} pi^{-d/2} Gamma((d-gamma)/2) / |Gamma(gamma/2)|,
// for gamma < d, gamma != 0 (gamma < 0 allowed).
double stable_constant(int d, double gamma);

// nu(x) = A_{d,-alpha} |x|^{-d-alpha}; x must be nonzero.
double levy_measure_density(const StableParams& prm, const double* x);
double levy_measure_radial(const StableParams& prm, double r);

// Potential kernel Pi_alpha. For alpha < d the Riesz kernel
// A_{d,alpha} |x|^{alpha-d}; for d = 1 the compensated kernels
//   alpha = 1: (1/pi) log(1/|x|),
//   alpha > 1: |x|^{alpha-1} / (2 Gamma(alpha) cos(pi alpha / 2))  (negative).
// x = 0 is rejected.
double potential_kernel(const StableParams& prm, const double* x);
double potential_kernel_radial(const StableParams& prm, double r);

// Standard 1d symmetric stable variate (t = 1) by the CMS construction.
double sample_standard_1d(double alpha, RngStream& rng);

// Positive strictly stable variate with E exp(-lambda S) = exp(-lambda^gamma),
// 0 < gamma < 1 (Kanter construction).
double sample_subordinator(double gamma, RngStream& rng);

// Increment over time t > 0 written to out[0..d). d = 1 uses CMS directly;
// d >= 2 subordinates a Gaussian vector: X = t^{1/alpha} sqrt(2 S) Z.
void sample_increment(const StableParams& prm, double t, RngStream& rng, double* out);
std::vector<double> sample_increment(const StableParams& prm, double t, RngStream& rng);

// Direct quadrature evaluation of p(1, |x| = r): oscillatory Fourier-Hankel
// inversion summed between kernel zeros with an alternating tail cutoff.
// Oracle-grade; used to build tables and in cross-checks.
double density_quadrature(const StableParams& prm, double r, double rel_tol = 1e-9);
// d p(1, r) / dr by the differentiated inversion integral.
double density_quadrature_derivative(const StableParams& prm, double r,
                                     double rel_tol = 1e-9);
// p(1, 0) in closed Gamma form.
double density_at_zero(const StableParams& prm);

struct DensityTableConfig {
  double r_min = 1e-4;     // below: even quadratic blend into p(1,0)
  double r_switch = 100.0; // above: first-order tail t * nu(x)
  double log_step = 0.02;  // node spacing in log r
  double quad_rel_tol = 1e-9;
};

// Radial table of p(1, r) with exact-slope monotone cubic interpolation in
// log-log coordinates; p(t, x) is obtained by the scaling reduction
// p(t,x) = t^{-d/alpha} p(1, t^{-1/alpha} x).
class DensityTable {
 public:
  DensityTable(StableParams prm, DensityTableConfig cfg = {});

  const StableParams& params() const { return prm_; }
  const DensityTableConfig& config() const { return cfg_; }

  double p1(double r) const;
  double p_radial(double t, double r) const;
  double p(double t, const double* x) const;

  struct Info {
    double value = 0.0;
    bool tail_regime = false;   // evaluated from the t*nu(x) tail branch
    double est_rel_err = 0.0;
  };
  Info p_info(double t, double r) const;

  void save(const std::string& path) const;
  static DensityTable load(const std::string& path);
  std::string cache_name() const;

 private:
  DensityTable() = default;
  void build();

  StableParams prm_;
  DensityTableConfig cfg_;
  double p0_ = 0.0;          // p(1,0)
  double p_rmin_ = 0.0;      // p(1,r_min)
  double tail_coeff_ = 0.0;  // A_{d,-alpha}
  double tail_err_ratio_ = 0.0;  // measured |p-tail|/p at r_switch over r^-alpha
  std::vector<double> lr_, lv_, slope_;
  Pchip loglog_;
};

// Process-wide table registry. Tables are built lazily per (alpha, d,
// resolution) and optionally persisted under the cache directory.
void set_density_cache_dir(const std::string& dir);
std::string density_cache_dir();
std::shared_ptr<const DensityTable> density_table(const StableParams& prm,
                                                  const DensityTableConfig& cfg = {});

double transition_density(const StableParams& prm, double t, const double* x);
double transition_density_radial(const StableParams& prm, double t, double r);
DensityTable::Info transition_density_info(const StableParams& prm, double t, double r);

// Two-sided bound check: env(t,r) = min(t r^{-d-alpha}, t^{-d/alpha}).
// Returns the empirical smallest C >= 1 with env/C <= p <= C env on the grid,
// together with the witness arrays.
struct BoundsCheck {
  double C = 1.0;
  double max_over = 1.0;   // max p/env
  double max_under = 1.0;  // max env/p
  std::vector<double> t, r, p, envelope;
};
BoundsCheck density_bounds_check(const StableParams& prm, const std::vector<double>& t_grid,
                                 const std::vector<double>& r_grid);

// Finite-dimensional bridge weight p(t - s, y - x); requires s < t.
double bridge_weight(const StableParams& prm, double s, const double* x, double t,
                     const double* y);

struct BridgeOpts {
  std::uint64_t max_rejections = 1000000;  // per interior point
  int fallback_grid = 4096;                // d = 1 inverse-CDF fallback
  double fallback_width = 40.0;            // in units of the local time scale
};

struct BridgeDiagnostics {
  std::uint64_t proposals = 0;
  std::uint64_t fallbacks = 0;
};

// Sequential exact sampling of the bridge from (s,x) to (t,y) on the given
// strictly increasing interior time grid. Endpoints are included in the
// returned skeleton. Each interior point is drawn by rejection from the free
// increment on the longer adjacent gap; after max_rejections the d = 1 path
// falls back to grid inverse-CDF sampling, d >= 2 raises NumericError.
PathSkeleton sample_bridge_skeleton(const StableParams& prm, double s, const double* x,
                                    double t, const double* y,
                                    const std::vector<double>& interior_times,
                                    RngStream& rng, const BridgeOpts& opts = {},
                                    BridgeDiagnostics* diag = nullptr);

}  // namespace fkstable::stable
