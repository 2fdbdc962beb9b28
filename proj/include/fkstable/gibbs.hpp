#pragma once
// Ground-state-transform machinery on the spectral grid: the discrete-time
// chain with kernel u~(t_unit,x,y) phi0^2(y) h, the conditional window kernel
// with fixed boundary, DLR tower checks, boundary-convergence curves, and
// pathwise diagnostics. Everything deterministic here is grid matrix
// arithmetic over the model's retained region (phi0 above its floor); Monte
// Carlo enters only for path sampling, under the usual chunked-stream
// contract. d = 1 models only.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fkstable/common.hpp"
#include "fkstable/spectral.hpp"

namespace fkstable::gibbs {

using spectral::SpectralModel;

// Row-stochastic transition over the retained nodes. Rows of the raw kernel
// must sum to 1 within 1e-6 (they are then renormalized exactly), phi0^2 must
// be stationary to 1e-6 in l1, and detailed balance must hold to 1e-8;
// build_chain fails loudly otherwise, naming the worst row.
struct PPhi1Chain {
  const SpectralModel* model = nullptr;
  double t_unit = 0.0;
  std::vector<std::size_t> idx;  // retained flat grid indices
  std::vector<double> coord;     // node coordinate per retained index
  std::vector<double> rho;       // stationary law, sums to 1 exactly
  std::vector<double> P;         // row-major n x n, rows sum to 1 exactly
  std::vector<double> cdf;       // per-row cumulative rows for sampling
  double row_defect = 0.0;       // worst |raw row sum - 1|
  double stationarity_defect = 0.0;  // ||rho P - rho||_1 after renorm
  double reversibility_defect = 0.0; // max |rho_i P_ij - rho_j P_ji|
  double min_entry = 0.0;        // most negative raw kernel entry

  std::size_t n() const { return idx.size(); }
  std::size_t node_near(double x) const;  // nearest retained node
};

PPhi1Chain build_chain(const SpectralModel& m, double t_unit);

// P(t1) P(t2) vs P(t1+t2), max absolute entry difference (semigroup check).
double composition_defect(const SpectralModel& m, double t1, double t2);

// Two-sided sample on times {-n_minus..n_plus} t_unit. Forward and backward
// halves are independent given the start; empty start draws omega(0) from
// rho, otherwise start = {x} snaps to the nearest retained node (must lie
// within half a grid step).
PathSkeleton sample_path(const PPhi1Chain& c, int n_minus, int n_plus,
                         const std::vector<double>& start, RngStream& rng);

// Finite cylinder {omega(t_i) in [lo_i, hi_i]}: times strictly increasing,
// intervals act through node-sampled indicators (grid-aligned events).
struct CylinderEvent {
  std::vector<double> times;
  std::vector<std::pair<double, double>> bands;
};

struct GibbsWindow {
  double T = 0.0;
  double left = 0.0;   // boundary point at time -T
  double right = 0.0;  // boundary point at time +T
};

// mu_T(event | boundary): the u-kernel chain from (-T, left) through the
// event indicators to (+T, right), normalized by Z_T = u(2T, left, right).
// All consecutive gaps (boundary to first time, etc.) must be >= t_min.
// Boundary nodes must be retained; Z_T below the kernel floor (boundary too
// deep in the tail) raises NumericError. Empty event returns 1 exactly.
double gibbs_kernel(const GibbsWindow& w, const SpectralModel& m, const CylinderEvent& ev);

// Stationary path-measure weight of the cylinder (the T -> inf limit law).
double stationary_measure(const SpectralModel& m, const CylinderEvent& ev);

struct EventPair {
  CylinderEvent inner;  // times in (-S, S)
  CylinderEvent band;   // times in [-T, -S] u [S, T]
};

struct DlrReport {
  double max_discrepancy = 0.0;
  std::vector<double> lhs;  // mu(A n B) per pair, one-chain evaluation
  std::vector<double> rhs;  // mu(mu_S(A | omega(+-S)) 1_B), split evaluation
};

// Tower identity mu(mu_S(A, .) 1_B) = mu(A n B) on the grid: the two sides
// are evaluated through different factorizations (one joint chain vs an
// explicit conditional kernel, divided and reassembled), so agreement is a
// real arithmetic check, not a tautology. Gaps in the assembled time lists
// must clear t_min.
DlrReport dlr_check(const SpectralModel& m, double S, double T,
                    const std::vector<EventPair>& pairs);

using BoundaryProfile = std::function<double(double signed_N)>;

BoundaryProfile profile_constant(double c);
BoundaryProfile profile_power(double c, double p);  // c sgn(N) |N|^p
BoundaryProfile profile_exponential(double c);      // sgn(N) e^{c |N|}

struct BoundaryCurve {
  std::vector<double> N;
  std::vector<double> mu_N;         // NaN where the kernel was unavailable
  std::vector<double> discrepancy;  // |mu_N - mu_limit|
  std::vector<double> ratio_dev;    // worst probe deviation of the kernel
                                    // ratio from e^{2 lambda_0 T} phi0 phi0
  std::vector<std::string> status;  // "ok" or the per-N failure reason
  double mu_limit = 0.0;            // stationary measure of the event
};

// mu_N(event | boundary profile(+-N)) against the stationary limit over the
// N grid. Failures for profiles that leave the retained region or sink the
// kernel below its floor are recorded per N, not thrown: that regime is
// reported without a verdict.
BoundaryCurve boundary_convergence(const SpectralModel& m, double T, const BoundaryProfile& prof,
                                   const CylinderEvent& ev, const std::vector<double>& N_grid);

struct TypicalPathOpts {
  int N0 = 1;  // statistic starts at |N| = N0
  std::uint64_t seed = 1;
  int threads = 1;
  std::uint64_t chunk_size = 256;
};

struct TypicalPathReport {
  double violating_fraction = 0.0;
  double median_stat = 0.0;
  std::vector<double> stats;  // per-path max a_{|N|}/phi0(omega(N))
};

// Stationary two-sided paths to +-N_max; per path the statistic
// max_{N0 <= |N| <= N_max} a(|N|)/phi0(omega(N)), reported against the given
// threshold. Refuses sequences whose fitted log-log decay exponent on
// [N0, N_max] is above -1.05: the theorem needs a summable sequence and a
// divergent-sum request is a caller error.
TypicalPathReport typical_path_check(const PPhi1Chain& c, std::uint64_t n_paths, int N_max,
                                     const std::function<double(int)>& a, double threshold,
                                     const TypicalPathOpts& opts = {});

struct InverseMoment {
  double sup = 0.0;
  double arg_x = 0.0;
  std::vector<double> value;  // E_x[1/phi0(X_t)] per retained node
};

// Grid sup of sum_y P_t(x, y)/phi0(y) with P_t = P^{t/t_unit}; t must be an
// integer multiple of t_unit. x_grid coordinates snap to retained nodes;
// empty means every retained node. Large t tends to <phi0, 1>.
InverseMoment inverse_gs_moment(const PPhi1Chain& c, double t,
                                const std::vector<double>& x_grid = {});

}  // namespace fkstable::gibbs
