#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "fkstable/common.hpp"
#include "fkstable/potentials.hpp"
#include "fkstable/stable.hpp"

namespace fkstable::spectral {

using potentials::PotentialSpec;
using stable::StableParams;

// Truncated periodic box [-L, L)^d with n points per axis, x_i = -L + i h.
struct GridSpec {
  int d = 1;
  double L = 0.0;
  int n = 0;

  double h() const { return 2.0 * L / n; }
  std::size_t total() const;
  double coord(int i) const { return -L + h() * i; }
  // flat index <-> point, row-major over axes
  void point(std::size_t flat, double* out) const;
  int axis_index(double x) const;  // nearest grid index on one axis
  std::size_t flat_index(const double* x) const;
  void validate() const;
};

// H = (-Delta)^{alpha/2} + V on the box: Fourier multiplier |k|^alpha plus the
// diagonal of V sampled on the grid. Singular V is capped at +-v_cap within
// h/2 of each declared singularity; elsewhere V must be finite.
class Hamiltonian {
 public:
  Hamiltonian(const GridSpec& grid, const StableParams& prm, const PotentialSpec& V,
              double v_cap = 1e6);
  ~Hamiltonian();
  Hamiltonian(Hamiltonian&&) noexcept;
  Hamiltonian& operator=(Hamiltonian&&) noexcept;
  Hamiltonian(const Hamiltonian&) = delete;
  Hamiltonian& operator=(const Hamiltonian&) = delete;

  // out = H in; single-task (internal scratch buffers are not synchronized)
  void apply(const double* in, double* out) const;
  std::vector<double> apply(const std::vector<double>& f) const;

  const GridSpec& grid() const;
  const StableParams& params() const;
  const PotentialSpec& potential() const;
  const std::vector<double>& potential_values() const;  // capped grid samples
  double v_cap() const;
  bool cap_applied() const;
  double v_min() const;
  double v_max() const;
  // operator norm bound of the multiplier part, (sqrt(d) pi n / (2L))^alpha
  double multiplier_bound() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct SpectralModel {
  GridSpec grid;
  StableParams prm{1.0, 1};
  std::string potential_name;
  std::vector<double> v_values;  // capped V on the grid (decay fits, FK reuse)
  double v_neg_radius = 0.0;

  std::vector<double> eigenvalues;  // ascending, size n_modes
  std::vector<double> residuals;    // ||H phi - lambda phi||_2, unit-l2 modes
  // mode k occupies [k*total, (k+1)*total); normalized so h^d sum phi^2 = 1
  std::vector<double> modes;

  bool no_ground_state = false;   // gap within a few IR quanta: box artifact
  bool degenerate_ground = false;
  double gap_resolution_ratio = 0.0;  // (l1-l0) / (pi/L)^alpha
  double cap_sensitivity = std::numeric_limits<double>::quiet_NaN();
  double boundary_ratio = 0.0;  // max phi0 on the outermost shell / max phi0
  double t_min_cached = 0.0;

  int n_modes() const { return static_cast<int>(eigenvalues.size()); }
  const double* mode(int k) const { return modes.data() + static_cast<std::size_t>(k) * grid.total(); }
  double phi0(std::size_t i) const { return modes[i]; }
  double phi0_max() const;
  double phi0_floor() const { return 1e-10 * phi0_max(); }
  double gap() const { return eigenvalues.at(1) - eigenvalues.at(0); }
  // smallest probe time with the mode-sum kernel positive over the above-floor
  // sample; positivity of u/ũ is only asserted from here on
  double t_min() const { return t_min_cached; }

  void save(const std::string& path) const;
  static SpectralModel load(const std::string& path);
};

// CheFSI (Chebyshev-filtered subspace iteration) for the n_modes smallest
// eigenpairs. Residual contract: ||H phi_k - lambda_k phi_k|| <= 1e-8 (1+|l_k|).
SpectralModel ground_state(const Hamiltonian& H, int n_modes);

// Dense cross-check for small grids (total <= 4096): builds the full matrix by
// applying H to basis vectors and calls a dense symmetric eigensolver.
struct DenseEig {
  std::vector<double> eigenvalues;
  std::vector<std::vector<double>> vectors;  // unit l2, not h-normalized
};
DenseEig dense_eigensolve(const Hamiltonian& H, int n_modes);

// u(t,x_i,x_j) = sum_{k<m} e^{-lambda_k t} phi_k(i) phi_k(j). trunc_tol guards
// the first omitted term's scale e^{-lambda_{m-1} t} max phi_{m-1}^2.
double semigroup_kernel(const SpectralModel& m, double t, std::size_t ix, std::size_t iy,
                        int modes = -1,
                        double trunc_tol = std::numeric_limits<double>::infinity());

// ũ(t,x,y) = e^{lambda_0 t} u(t,x,y) / (phi0(x) phi0(y)); requires t >= t_min
// and both points above the phi0 floor, errors instead of dividing blindly.
double intrinsic_kernel(const SpectralModel& m, double t, std::size_t ix, std::size_t iy);

struct ProjectionDecay {
  double rate = 0.0;       // fitted slope of -log s(t); approx lambda_1
  double intercept = 0.0;
  std::vector<double> t;
  std::vector<double> s;   // s(t) = max |u - e^{-l0 t} phi0 phi0| over pairs
};
ProjectionDecay projection_decay(const SpectralModel& m, const std::vector<double>& t_grid);

struct DecayFit {
  double slope = 0.0;      // log phi0 vs log[1/(V (1+|x|)^{d+alpha})], approx 1
  double exponent = 0.0;   // log phi0 vs log(1+|x|): pure power-law exponent
  double curvature = 0.0;  // quadratic coefficient of the last accepted window
  double r_lo = 0.0, r_hi = 0.0;
  int shrink_count = 0;
  int points = 0;
  bool envelope_only = false;  // V vanishes on the window: pure (1+|x|)^{-d-a}
};
DecayFit decay_fit(const SpectralModel& m, double r_lo, double r_hi);

}  // namespace fkstable::spectral
