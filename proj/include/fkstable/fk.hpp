#pragma once
// Monte Carlo side of the semigroup: Feynman-Kac expectations over stable
// path skeletons, the kernel via exact bridges, exit-time functionals on
// balls, and the tail integral with its power-law envelope. Everything is
// chunk-deterministic: (seed, chunk index) fixes the stream, reduction is
// ordered, so estimates are bit-identical for a fixed chunk layout no matter
// the thread count.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fkstable/common.hpp"
#include "fkstable/potentials.hpp"
#include "fkstable/stable.hpp"

namespace fkstable::fk {

using potentials::PotentialSpec;
using stable::StableParams;

// Quadrature of int_0^t V(X_s) ds on the skeleton. Trapezoid is the default;
// the bias is first order in dt either way because paths jump.
enum class IntegralRule { kLeft, kTrapezoid };

struct FKConfig {
  double dt = 1e-2;
  std::uint64_t n_paths = 10000;
  std::uint64_t seed = 1;
  IntegralRule integral_rule = IntegralRule::kTrapezoid;
  int threads = 1;
  std::uint64_t chunk_size = 1024;
  // Shared with the spectral module: |V| clamped here along paths, <= 0
  // disables. Clamp events are counted in RunStats.
  double v_cap = 1e6;
  // Exit-time cap when V has no positive lower bound on D (otherwise the cap
  // is 50 / inf_D V and this field is ignored).
  double horizon = 0.0;
  // When set, the first skeletons of chunk 0 are dumped here (binary).
  std::string dump_path;

  void validate() const {
    require(dt > 0.0, "fk: dt must be positive");
    require(n_paths >= 100, "fk: need at least 100 paths");
  }
};

using BoundedFn = std::function<double(const double* x, int d)>;

// Side-channel diagnostics; pass where you care.
struct RunStats {
  std::uint64_t cap_hits = 0;  // V evaluations clamped at +-v_cap
};

// T_t f(x) = E^x[exp(-int_0^t V(X_s) ds) f(X_t)] over n_paths skeletons with
// step dt. Raises NumericError when V- pumps the weight past e^700 (mass
// blowup) or a sample comes out non-finite.
MCEstimate fk_expectation(const std::vector<double>& x, double t, const BoundedFn& f,
                          const PotentialSpec& V, const StableParams& prm, const FKConfig& cfg,
                          RunStats* stats = nullptr);

// u(t,x,y) estimated as p(t, y-x) times the bridge average of e_V(t). V == 0
// gives p(t, y-x) with zero variance.
MCEstimate fk_kernel_bridge(const std::vector<double>& x, const std::vector<double>& y, double t,
                            const PotentialSpec& V, const StableParams& prm, const FKConfig& cfg,
                            RunStats* stats = nullptr);

// Least-squares fit of log sup_x E^x[e_V(t)] ~ C0 + C1 t over t_grid, sup over
// the flat x_grid (stride d). Stands in for the non-constructive growth
// constants; `exponential` is false when the fit residual exceeds the
// threshold.
struct SurvivalFit {
  double C0 = 0.0;
  double C1 = 0.0;
  double max_residual = 0.0;
  bool exponential = true;
  std::vector<double> t;
  std::vector<double> log_sup;
};
SurvivalFit survival_growth(const PotentialSpec& V, const StableParams& prm,
                            const std::vector<double>& t_grid, const std::vector<double>& x_grid,
                            const FKConfig& cfg, double residual_threshold = 0.25);

struct Ball {
  std::vector<double> center;
  double radius = 0.0;

  double distance_from_center(const double* x, int d) const;
  bool contains(const double* x, int d) const;
};

// u_D(x) = E^x[e_V(tau_D)] and v_D(x) = E^x[int_0^tau e_V(s) ds] with tau_D
// detected on the skeleton (first point outside D). The step halves within
// 5 dt^{1/alpha} of the boundary. Paths still inside D at the horizon are
// counted at their running weight and reported as censored; censored weight
// must stay under 0.1% of the total or the run raises NumericError.
struct ExitResult {
  MCEstimate u_D;
  MCEstimate v_D;
  double mean_exit_time = 0.0;
  double frac_exit_after_1 = 0.0;  // P^x(tau_D > 1) estimate, unweighted
  double censored_weight_fraction = 0.0;
  double horizon = 0.0;
  std::uint64_t cap_hits = 0;
};
ExitResult exit_functionals(const Ball& D, const PotentialSpec& V, const std::vector<double>& x,
                            const StableParams& prm, const FKConfig& cfg);

// int_{B(x,|x|/4)^c} (1+|y|)^{-gamma} |x-y|^{-d-alpha} dy by panel quadrature,
// radial around x. Requires |x| >= 1, gamma >= 0, gamma != d.
double tail_integral(double gamma, double absx, const StableParams& prm);

// Envelope C |x|^{-gamma'} with gamma' = min(gamma + alpha, d + alpha) pinned
// and C the largest ratio on the grid; `slope` is the fitted log-log decay
// for comparison against -gamma'.
struct TailEnvelope {
  double C = 0.0;
  double exponent = 0.0;  // -gamma'
  double slope = 0.0;
  std::vector<double> absx;
  std::vector<double> integral;
};
TailEnvelope tail_envelope(double gamma, const StableParams& prm,
                           std::vector<double> absx_grid = {});

// One-line JSON run record: op, estimate, stderr, n, dt, seed, censored mass.
std::string run_json(const std::string& op, const MCEstimate& est, const FKConfig& cfg,
                     double censored_fraction = 0.0);

}  // namespace fkstable::fk
