#include "fkstable/spectral.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <utility>

namespace fkstable::spectral {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::size_t kMaxTotalPoints = std::size_t{1} << 20;
constexpr double kBoundaryMassTol = 1e-5;   // phi0 edge/max post-check
constexpr double kGapResolutionFactor = 4.0;  // gap under 4 IR quanta: no ground state
constexpr double kDegenerateTol = 1e-9;
constexpr double kResidualHard = 1e-8;    // contract
constexpr double kResidualTarget = 1e-10;  // aim lower for headroom

double pow_int(double b, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

}  // namespace

std::size_t GridSpec::total() const {
  std::size_t t = 1;
  for (int a = 0; a < d; ++a) t *= static_cast<std::size_t>(n);
  return t;
}

void GridSpec::point(std::size_t flat, double* out) const {
  for (int a = d - 1; a >= 0; --a) {
    out[a] = coord(static_cast<int>(flat % static_cast<std::size_t>(n)));
    flat /= static_cast<std::size_t>(n);
  }
}

int GridSpec::axis_index(double x) const {
  int i = static_cast<int>(std::lround((x + L) / h()));
  return std::clamp(i, 0, n - 1);
}

std::size_t GridSpec::flat_index(const double* x) const {
  std::size_t f = 0;
  for (int a = 0; a < d; ++a) f = f * static_cast<std::size_t>(n) + axis_index(x[a]);
  return f;
}

void GridSpec::validate() const {
  if (d != 1 && d != 2) throw ConfigError("grid: dimension must be 1 or 2");
  if (!(L > 0.0) || !std::isfinite(L)) throw ConfigError("grid: half_width must be positive");
  if (n < 8) throw ConfigError("grid: need at least 8 points per axis");
  if ((n & (n - 1)) != 0) throw ConfigError("grid: n_points must be a power of two");
  if (total() > kMaxTotalPoints) throw ConfigError("grid: total points exceed the memory budget");
}

struct Hamiltonian::Impl {
  GridSpec grid;
  StableParams prm;
  PotentialSpec pot;
  double cap = 0.0;
  bool cap_applied = false;
  std::vector<double> v;        // capped diagonal
  std::vector<double> mult_hc;  // multiplier in half-complex layout
  double vmin = 0.0, vmax = 0.0, mult_bound = 0.0;
  mutable std::vector<double> buf;
  fftw_plan fwd = nullptr, inv = nullptr;

  ~Impl() {
    if (fwd) fftw_destroy_plan(fwd);
    if (inv) fftw_destroy_plan(inv);
  }
};

Hamiltonian::Hamiltonian(const GridSpec& grid, const StableParams& prm, const PotentialSpec& V,
                         double v_cap)
    : impl_(std::make_unique<Impl>()) {
  grid.validate();
  prm.validate();
  if (prm.d != grid.d) throw ConfigError("hamiltonian: params dimension must match the grid");
  auto& im = *impl_;
  im.grid = grid;
  im.prm = prm;
  im.pot = V;
  im.cap = v_cap;

  const std::size_t total = grid.total();
  const double h = grid.h();
  im.v.resize(total);
  std::vector<double> x(grid.d);
  const auto& sing = V.singularities();
  for (std::size_t i = 0; i < total; ++i) {
    grid.point(i, x.data());
    double val = V.evaluate(x.data(), grid.d);
    const potentials::Singularity* near = nullptr;
    for (const auto& s : sing) {
      double r2 = 0.0;
      for (int a = 0; a < grid.d; ++a) {
        double loc = a < static_cast<int>(s.location.size()) ? s.location[a] : 0.0;
        r2 += (x[a] - loc) * (x[a] - loc);
      }
      if (r2 <= 0.25 * h * h) {
        near = &s;
        break;
      }
    }
    if (near != nullptr && v_cap > 0.0) {
      double capped = std::isfinite(val) ? std::clamp(val, -v_cap, v_cap) : near->sign * v_cap;
      if (capped != val) im.cap_applied = true;
      val = capped;
    }
    if (!std::isfinite(val)) {
      std::ostringstream os;
      os << "hamiltonian: V not finite at a grid point (x0=" << x[0]
         << (near ? "; singularity with no cap configured)" : ")");
      throw PreconditionError(os.str());
    }
    im.v[i] = val;
  }
  im.vmin = *std::min_element(im.v.begin(), im.v.end());
  im.vmax = *std::max_element(im.v.begin(), im.v.end());

  // |k|^alpha in the tensor half-complex layout: entry i on an axis carries the
  // absolute frequency index min(i, n-i), identical for the cos and sin parts.
  im.mult_hc.resize(total);
  const double base = kPi / grid.L;
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t rem = i;
    double k2 = 0.0;
    for (int a = 0; a < grid.d; ++a) {
      int idx = static_cast<int>(rem % static_cast<std::size_t>(grid.n));
      rem /= static_cast<std::size_t>(grid.n);
      int f = std::min(idx, grid.n - idx);
      k2 += (base * f) * (base * f);
    }
    im.mult_hc[i] = k2 > 0.0 ? std::pow(k2, 0.5 * prm.alpha) : 0.0;
  }
  double kmax2 = grid.d * (base * (grid.n / 2)) * (base * (grid.n / 2));
  im.mult_bound = std::pow(kmax2, 0.5 * prm.alpha);

  im.buf.resize(total);
  if (grid.d == 1) {
    im.fwd = fftw_plan_r2r_1d(grid.n, im.buf.data(), im.buf.data(), FFTW_R2HC, FFTW_ESTIMATE);
    im.inv = fftw_plan_r2r_1d(grid.n, im.buf.data(), im.buf.data(), FFTW_HC2R, FFTW_ESTIMATE);
  } else {
    im.fwd = fftw_plan_r2r_2d(grid.n, grid.n, im.buf.data(), im.buf.data(), FFTW_R2HC, FFTW_R2HC,
                              FFTW_ESTIMATE);
    im.inv = fftw_plan_r2r_2d(grid.n, grid.n, im.buf.data(), im.buf.data(), FFTW_HC2R, FFTW_HC2R,
                              FFTW_ESTIMATE);
  }
  if (!im.fwd || !im.inv) throw NumericError("hamiltonian: fftw plan creation failed");
}

Hamiltonian::~Hamiltonian() = default;
Hamiltonian::Hamiltonian(Hamiltonian&&) noexcept = default;
Hamiltonian& Hamiltonian::operator=(Hamiltonian&&) noexcept = default;

void Hamiltonian::apply(const double* in, double* out) const {
  const auto& im = *impl_;
  const std::size_t total = im.grid.total();
  std::copy(in, in + total, im.buf.begin());
  fftw_execute(im.fwd);
  for (std::size_t i = 0; i < total; ++i) im.buf[i] *= im.mult_hc[i];
  fftw_execute(im.inv);
  const double norm = 1.0 / static_cast<double>(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = im.buf[i] * norm + im.v[i] * in[i];
}

std::vector<double> Hamiltonian::apply(const std::vector<double>& f) const {
  require(f.size() == impl_->grid.total(), "hamiltonian: input size mismatch");
  std::vector<double> out(f.size());
  apply(f.data(), out.data());
  return out;
}

const GridSpec& Hamiltonian::grid() const { return impl_->grid; }
const StableParams& Hamiltonian::params() const { return impl_->prm; }
const PotentialSpec& Hamiltonian::potential() const { return impl_->pot; }
const std::vector<double>& Hamiltonian::potential_values() const { return impl_->v; }
double Hamiltonian::v_cap() const { return impl_->cap; }
bool Hamiltonian::cap_applied() const { return impl_->cap_applied; }
double Hamiltonian::v_min() const { return impl_->vmin; }
double Hamiltonian::v_max() const { return impl_->vmax; }
double Hamiltonian::multiplier_bound() const { return impl_->mult_bound; }

namespace {

void apply_block(const Hamiltonian& H, const Eigen::MatrixXd& X, Eigen::MatrixXd& Y) {
  Y.resize(X.rows(), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) H.apply(X.col(j).data(), Y.col(j).data());
}

Eigen::MatrixXd thin_q(const Eigen::MatrixXd& X) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
  return qr.householderQ() * Eigen::MatrixXd::Identity(X.rows(), X.cols());
}

struct ChefsiResult {
  Eigen::VectorXd theta;  // p Ritz values, ascending
  Eigen::MatrixXd X;      // N x p Ritz vectors, unit l2 columns
  std::vector<double> resid;
  bool ok = false;
};

// Chebyshev-filtered subspace iteration. The damping interval [a, b] covers
// the unwanted upper spectrum; b = multiplier bound + max V is a rigorous
// upper bound, so the filter never amplifies anything above the kept block.
ChefsiResult chefsi(const Hamiltonian& H, int n_wanted, const Eigen::MatrixXd* warm) {
  const std::size_t N = H.grid().total();
  const int p =
      static_cast<int>(std::min<std::size_t>(N, std::max(2 * n_wanted, std::max(n_wanted + 4, 16))));
  const double b = H.multiplier_bound() + std::max(H.v_max(), 0.0) + 1.0 +
                   0.01 * std::abs(H.multiplier_bound() + H.v_max());

  Eigen::MatrixXd X(N, p);
  RngStream rng(0x9a3f52c1d4e6b708ULL, 11);
  for (Eigen::Index j = 0; j < p; ++j)
    for (std::size_t i = 0; i < N; ++i) X(i, j) = rng.normal();
  {
    // structured seeds: constant + a centered bump, good overlaps in both the
    // free and the confined regimes
    const GridSpec& g = H.grid();
    std::vector<double> x(g.d);
    double sig = g.L / 6.0;
    for (std::size_t i = 0; i < N; ++i) {
      g.point(i, x.data());
      double r2 = 0.0;
      for (int a = 0; a < g.d; ++a) r2 += x[a] * x[a];
      X(i, 0) = 1.0;
      X(i, 1) += 4.0 * std::exp(-0.5 * r2 / (sig * sig));
    }
  }
  if (warm != nullptr) {
    Eigen::Index c = std::min<Eigen::Index>(warm->cols(), p);
    X.leftCols(c) = warm->leftCols(c);
  }
  X = thin_q(X);

  Eigen::MatrixXd HX, T, Y0, Y1;
  apply_block(H, X, HX);

  ChefsiResult best;
  best.resid.assign(n_wanted, std::numeric_limits<double>::infinity());
  double best_rel = std::numeric_limits<double>::infinity();
  double last_window_rel = std::numeric_limits<double>::infinity();
  int degree = 60;
  const int max_outer = 250;

  for (int iter = 0; iter < max_outer; ++iter) {
    Eigen::MatrixXd S = X.transpose() * HX;
    S = 0.5 * (S + S.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    Eigen::VectorXd theta = es.eigenvalues();
    X = (X * es.eigenvectors()).eval();
    HX = (HX * es.eigenvectors()).eval();

    std::vector<double> resid(n_wanted);
    double max_rel = 0.0;
    for (int j = 0; j < n_wanted; ++j) {
      resid[j] = (HX.col(j) - theta[j] * X.col(j)).norm();
      max_rel = std::max(max_rel, resid[j] / (1.0 + std::abs(theta[j])));
    }
    if (max_rel < best_rel) {
      best_rel = max_rel;
      best.theta = theta;
      best.X = X;
      best.resid = resid;
    }
    if (max_rel <= kResidualTarget) break;
    if (iter >= 40 && max_rel <= 10 * kResidualTarget) break;
    if (iter % 8 == 7) {
      // stagnation: sharpen the filter
      if (max_rel > 0.5 * last_window_rel) degree = std::min(degree * 2, 500);
      last_window_rel = max_rel;
    }

    // Lock converged leading pairs and filter only the rest. Without this a
    // deeply bound state (lambda_0 far below the continuum) gets amplified
    // past double precision in one pass and the block collapses to rank one,
    // starving every other mode.
    int n_locked = 0;
    while (n_locked < n_wanted &&
           resid[n_locked] <= 0.5 * kResidualTarget * (1.0 + std::abs(theta[n_locked]))) {
      ++n_locked;
    }
    n_locked = std::min(n_locked, p - 1);
    const int act = p - n_locked;

    double a = theta[p - 1];
    double lead = theta[n_wanted - 1];
    if (!(a > lead)) a = lead + 0.05 * (b - lead);
    if (!(a < b)) a = 0.5 * (lead + b);
    const double e = 0.5 * (b - a), c = 0.5 * (b + a);

    Eigen::MatrixXd locked;
    if (n_locked > 0) locked = X.leftCols(n_locked);
    Y0 = X.rightCols(act);
    Y1 = (HX.rightCols(act) - c * X.rightCols(act)) / e;
    if (n_locked > 0) Y1 -= locked * (locked.transpose() * Y1).eval();
    for (int k = 2; k <= degree; ++k) {
      apply_block(H, Y1, T);
      T = ((2.0 / e) * (T - c * Y1) - Y0).eval();
      // re-projecting every step keeps the locked directions from leaking
      // back in and being re-amplified by the filter
      if (n_locked > 0) T -= locked * (locked.transpose() * T).eval();
      Y0.swap(Y1);
      Y1.swap(T);
      if ((k & 7) == 0) {
        double mx = Y1.cwiseAbs().maxCoeff();
        if (mx > 1e100) {
          Y1 /= mx;
          Y0 /= mx;
        }
      }
    }
    if (!Y1.allFinite()) throw NumericError("ground_state: filter overflowed (spectrum bound?)");
    X.rightCols(act) = Y1;
    X = thin_q(X);
    apply_block(H, X, HX);
  }

  best.ok = true;
  for (int j = 0; j < n_wanted; ++j) {
    if (!(best.resid[j] <= kResidualHard * (1.0 + std::abs(best.theta[j])))) best.ok = false;
  }
  return best;
}

std::vector<std::size_t> probe_indices(const SpectralModel& m) {
  const std::size_t total = m.grid.total();
  const double floor = m.phi0_floor();
  std::vector<std::size_t> above;
  for (std::size_t i = 0; i < total; ++i)
    if (m.phi0(i) >= floor) above.push_back(i);
  std::vector<std::size_t> out;
  if (above.empty()) return out;
  std::size_t stride = std::max<std::size_t>(1, above.size() / 64);
  for (std::size_t a = 0; a < above.size(); a += stride) out.push_back(above[a]);
  out.push_back(above.front());
  out.push_back(above.back());
  for (int k = 0; k < m.n_modes(); ++k) {
    const double* mk = m.mode(k);
    std::size_t arg = 0;
    double mx = -1.0;
    for (std::size_t i = 0; i < total; ++i) {
      if (std::abs(mk[i]) > mx) {
        mx = std::abs(mk[i]);
        arg = i;
      }
    }
    out.push_back(arg);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double compute_t_min(const SpectralModel& m) {
  auto idx = probe_indices(m);
  const int q = static_cast<int>(idx.size());
  const int M = m.n_modes();
  Eigen::MatrixXd F(M, q);
  for (int k = 0; k < M; ++k)
    for (int a = 0; a < q; ++a) F(k, a) = m.mode(k)[idx[a]];
  const double l0 = m.eigenvalues[0];
  for (double t : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0}) {
    Eigen::VectorXd w(M);
    for (int k = 0; k < M; ++k) w[k] = std::exp(-(m.eigenvalues[k] - l0) * t);
    Eigen::MatrixXd U = F.transpose() * w.asDiagonal() * F;
    if (U.minCoeff() > 0.0) return t;
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace

double SpectralModel::phi0_max() const {
  double mx = 0.0;
  const std::size_t total = grid.total();
  for (std::size_t i = 0; i < total; ++i) mx = std::max(mx, modes[i]);
  return mx;
}

SpectralModel ground_state(const Hamiltonian& H, int n_modes) {
  require(n_modes >= 2, "ground_state: n_modes must be at least 2 (the gap is needed)");
  require(n_modes <= 64, "ground_state: n_modes too large for the subspace solver");
  const GridSpec& g = H.grid();
  const std::size_t total = g.total();
  require(static_cast<std::size_t>(n_modes) * 4 <= total, "ground_state: grid too small");

  auto res = chefsi(H, n_modes, nullptr);
  if (!res.ok) throw NumericError("ground_state: eigensolver missed the residual tolerance");

  SpectralModel m;
  m.grid = g;
  m.prm = H.params();
  m.potential_name = H.potential().name();
  m.v_values = H.potential_values();
  m.v_neg_radius = H.potential().negative_support_radius();
  m.eigenvalues.assign(res.theta.data(), res.theta.data() + n_modes);
  m.residuals = res.resid;

  const double hd = pow_int(g.h(), g.d);
  const double scale = 1.0 / std::sqrt(hd);
  m.modes.resize(static_cast<std::size_t>(n_modes) * total);
  for (int k = 0; k < n_modes; ++k) {
    double sign_stat = 0.0;
    if (k == 0) {
      sign_stat = res.X.col(0).sum();
    } else {
      Eigen::Index arg;
      res.X.col(k).cwiseAbs().maxCoeff(&arg);
      sign_stat = res.X(arg, k);
    }
    const double s = (sign_stat < 0.0 ? -1.0 : 1.0) * scale;
    for (std::size_t i = 0; i < total; ++i)
      m.modes[static_cast<std::size_t>(k) * total + i] = s * res.X(i, k);
  }

  const double ir = std::pow(kPi / g.L, m.prm.alpha);
  m.gap_resolution_ratio = m.gap() / ir;
  m.no_ground_state = m.gap_resolution_ratio < kGapResolutionFactor;
  m.degenerate_ground = m.gap() <= kDegenerateTol * (1.0 + std::abs(m.eigenvalues[0]));

  double mn = m.modes[0];
  for (std::size_t i = 0; i < total; ++i) mn = std::min(mn, m.phi0(i));
  if (!(mn > 0.0)) {
    throw NumericError("ground_state: phi0 is not strictly positive on the grid");
  }

  // boundary mass post-check: the box must contain the decay region
  double edge = 0.0;
  std::vector<double> x(g.d);
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t rem = i;
    bool shell = false;
    for (int a = 0; a < g.d; ++a) {
      int idx = static_cast<int>(rem % static_cast<std::size_t>(g.n));
      rem /= static_cast<std::size_t>(g.n);
      if (idx == 0 || idx == g.n - 1) shell = true;
    }
    if (shell) edge = std::max(edge, m.phi0(i));
  }
  m.boundary_ratio = edge / m.phi0_max();
  if (!m.no_ground_state && m.boundary_ratio >= kBoundaryMassTol) {
    std::ostringstream os;
    os << "ground_state: phi0 boundary/max ratio " << m.boundary_ratio
       << " exceeds " << kBoundaryMassTol << "; enlarge half_width";
    throw PreconditionError(os.str());
  }

  m.t_min_cached = compute_t_min(m);

  if (H.cap_applied()) {
    Hamiltonian h10(g, H.params(), H.potential(), H.v_cap() * 10.0);
    auto res10 = chefsi(h10, 2, &res.X);
    if (res10.ok) m.cap_sensitivity = std::abs(res10.theta[0] - m.eigenvalues[0]);
  }
  return m;
}

DenseEig dense_eigensolve(const Hamiltonian& H, int n_modes) {
  const std::size_t total = H.grid().total();
  require(total <= 4096, "dense_eigensolve: grid too large for the dense path");
  require(n_modes >= 1 && static_cast<std::size_t>(n_modes) <= total,
          "dense_eigensolve: bad mode count");
  Eigen::MatrixXd M(total, total);
  std::vector<double> e(total, 0.0), col(total);
  for (std::size_t j = 0; j < total; ++j) {
    e[j] = 1.0;
    H.apply(e.data(), col.data());
    e[j] = 0.0;
    for (std::size_t i = 0; i < total; ++i) M(i, j) = col[i];
  }
  M = 0.5 * (M + M.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  DenseEig out;
  out.eigenvalues.assign(es.eigenvalues().data(), es.eigenvalues().data() + n_modes);
  out.vectors.resize(n_modes);
  for (int k = 0; k < n_modes; ++k) {
    out.vectors[k].assign(es.eigenvectors().col(k).data(),
                          es.eigenvectors().col(k).data() + total);
  }
  return out;
}

double semigroup_kernel(const SpectralModel& m, double t, std::size_t ix, std::size_t iy,
                        int modes, double trunc_tol) {
  require(t > 0.0, "semigroup_kernel: t must be positive");
  const std::size_t total = m.grid.total();
  require(ix < total && iy < total, "semigroup_kernel: grid index out of range");
  if (modes < 0) modes = m.n_modes();
  require(modes >= 1 && modes <= m.n_modes(), "semigroup_kernel: bad mode count");
  if (std::isfinite(trunc_tol)) {
    const double* last = m.mode(modes - 1);
    double mx = 0.0;
    for (std::size_t i = 0; i < total; ++i) mx = std::max(mx, std::abs(last[i]));
    double est = std::exp(-m.eigenvalues[modes - 1] * t) * mx * mx;
    if (est > trunc_tol) {
      throw NumericError("semigroup_kernel: mode-truncation estimate exceeds tolerance");
    }
  }
  double u = 0.0;
  for (int k = 0; k < modes; ++k) {
    // the mode product is grouped first so u(t,x,y) == u(t,y,x) bitwise
    u += std::exp(-m.eigenvalues[k] * t) * (m.mode(k)[ix] * m.mode(k)[iy]);
  }
  if (t >= m.t_min() && !(u > 0.0)) {
    throw NumericError("semigroup_kernel: kernel not positive beyond t_min");
  }
  return u;
}

double intrinsic_kernel(const SpectralModel& m, double t, std::size_t ix, std::size_t iy) {
  require(t > 0.0, "intrinsic_kernel: t must be positive");
  if (t < m.t_min()) {
    throw PreconditionError("intrinsic_kernel: t below t_min(model)");
  }
  const std::size_t total = m.grid.total();
  require(ix < total && iy < total, "intrinsic_kernel: grid index out of range");
  const double floor = m.phi0_floor();
  const double px = m.phi0(ix), py = m.phi0(iy);
  if (px < floor || py < floor) {
    throw PreconditionError("intrinsic_kernel: phi0 below floor at a requested point");
  }
  // gauge-shifted sum avoids exp overflow for strongly negative lambda_0
  double s = 0.0;
  const double l0 = m.eigenvalues[0];
  for (int k = 0; k < m.n_modes(); ++k) {
    s += std::exp(-(m.eigenvalues[k] - l0) * t) * (m.mode(k)[ix] * m.mode(k)[iy]);
  }
  double val = s / (px * py);
  if (!(val > 0.0)) throw NumericError("intrinsic_kernel: non-positive value past t_min");
  return val;
}

ProjectionDecay projection_decay(const SpectralModel& m, const std::vector<double>& t_grid) {
  require(t_grid.size() >= 2, "projection_decay: need at least two times");
  for (double t : t_grid) require(t > 2.0, "projection_decay: t_grid must lie in (2, inf)");
  require(m.n_modes() >= 2, "projection_decay: need at least two modes");

  auto idx = probe_indices(m);
  const int q = static_cast<int>(idx.size());
  const int M = m.n_modes();
  Eigen::MatrixXd F(M, q);
  for (int k = 0; k < M; ++k)
    for (int a = 0; a < q; ++a) F(k, a) = m.mode(k)[idx[a]];

  ProjectionDecay out;
  out.t = t_grid;
  out.s.resize(t_grid.size());
  for (std::size_t ti = 0; ti < t_grid.size(); ++ti) {
    Eigen::VectorXd w(M);
    w[0] = 0.0;  // projection removes the ground term
    for (int k = 1; k < M; ++k) w[k] = std::exp(-m.eigenvalues[k] * t_grid[ti]);
    Eigen::MatrixXd U = F.transpose() * w.asDiagonal() * F;
    out.s[ti] = U.cwiseAbs().maxCoeff();
    if (!(out.s[ti] > 0.0) || !std::isfinite(std::log(out.s[ti]))) {
      throw NumericError("projection_decay: s(t) underflowed inside the fit window");
    }
  }
  // least squares on log s = intercept - rate * t
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  const double n = static_cast<double>(t_grid.size());
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    double y = std::log(out.s[i]);
    st += t_grid[i];
    sy += y;
    stt += t_grid[i] * t_grid[i];
    sty += t_grid[i] * y;
  }
  double slope = (n * sty - st * sy) / (n * stt - st * st);
  out.rate = -slope;
  out.intercept = (sy - slope * st) / n;
  return out;
}

DecayFit decay_fit(const SpectralModel& m, double r_lo, double r_hi) {
  require(r_lo > 0.0 && r_hi > r_lo, "decay_fit: bad window");
  require(r_hi < m.grid.L, "decay_fit: window must lie inside the grid");
  if (std::isfinite(m.v_neg_radius)) {
    require(r_lo > m.v_neg_radius, "decay_fit: window overlaps the negative support of V");
  } else {
    throw PreconditionError("decay_fit: V has unbounded negative support");
  }

  const std::size_t total = m.grid.total();
  const double floor = m.phi0_floor();
  const double da = m.grid.d + m.prm.alpha;
  std::vector<double> xs(m.grid.d);

  DecayFit out;
  out.r_lo = r_lo;
  out.r_hi = r_hi;
  double hi = r_hi;
  for (int attempt = 0;; ++attempt) {
    std::vector<double> u, lp, z;
    double vmin_win = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < total; ++i) {
      m.grid.point(i, xs.data());
      double r2 = 0.0;
      for (int a = 0; a < m.grid.d; ++a) r2 += xs[a] * xs[a];
      double r = std::sqrt(r2);
      if (r < r_lo || r > hi) continue;
      if (m.phi0(i) < floor) continue;
      u.push_back(std::log1p(r));
      lp.push_back(std::log(m.phi0(i)));
      vmin_win = std::min(vmin_win, m.v_values[i]);
      z.push_back(0.0);  // filled below once the V mode is known
    }
    if (u.size() < 8) throw PreconditionError("decay_fit: too few usable points in the window");

    out.envelope_only = !(vmin_win > 0.0);
    {
      std::size_t j = 0;
      for (std::size_t i = 0; i < total && j < u.size(); ++i) {
        m.grid.point(i, xs.data());
        double r2 = 0.0;
        for (int a = 0; a < m.grid.d; ++a) r2 += xs[a] * xs[a];
        double r = std::sqrt(r2);
        if (r < r_lo || r > hi) continue;
        if (m.phi0(i) < floor) continue;
        z[j] = out.envelope_only ? -da * std::log1p(r)
                                 : -(std::log(m.v_values[i]) + da * std::log1p(r));
        ++j;
      }
    }

    // quadratic curvature probe in log(1+r); boundary truncation bends the
    // tail profile and must shrink the window rather than bias the slope
    const std::size_t np = u.size();
    double umin = u.front(), umax = u.front();
    for (double v : u) {
      umin = std::min(umin, v);
      umax = std::max(umax, v);
    }
    Eigen::MatrixXd A(np, 3);
    Eigen::VectorXd y(np);
    for (std::size_t i = 0; i < np; ++i) {
      double uc = u[i] - 0.5 * (umin + umax);
      A(i, 0) = 1.0;
      A(i, 1) = uc;
      A(i, 2) = uc * uc;
      y[i] = lp[i];
    }
    Eigen::Vector3d c = A.colPivHouseholderQr().solve(y);
    double du = umax - umin;
    out.curvature = c[2];
    bool contaminated = std::abs(c[2]) * du * du > 0.1 * std::max(std::abs(c[1]) * du, 0.5);
    if (contaminated) {
      if (attempt >= 6) {
        throw NumericError("decay_fit: window contaminated by boundary truncation");
      }
      hi = r_lo + 0.75 * (hi - r_lo);
      out.shrink_count = attempt + 1;
      continue;
    }

    auto ls_slope = [&](const std::vector<double>& xv) {
      double sx = 0, sy2 = 0, sxx = 0, sxy = 0;
      double nn = static_cast<double>(np);
      for (std::size_t i = 0; i < np; ++i) {
        sx += xv[i];
        sy2 += lp[i];
        sxx += xv[i] * xv[i];
        sxy += xv[i] * lp[i];
      }
      return (nn * sxy - sx * sy2) / (nn * sxx - sx * sx);
    };
    out.slope = ls_slope(z);
    out.exponent = ls_slope(u);
    out.r_hi = hi;
    out.points = static_cast<int>(np);
    return out;
  }
}

namespace {

template <typename T>
void wr(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T rd(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void wr_vec(std::ostream& os, const std::vector<double>& v) {
  wr<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> rd_vec(std::istream& is, std::size_t expect = 0) {
  auto sz = rd<std::uint64_t>(is);
  if (expect != 0 && sz != expect) throw ConfigError("spectral model file: size mismatch");
  std::vector<double> v(sz);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sz * sizeof(double)));
  return v;
}

constexpr std::uint64_t kModelMagic = 0x314d4345'50534b46ULL;  // "FKSPEC M1"

}  // namespace

void SpectralModel::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("spectral model save: cannot open " + path);
  wr(os, kModelMagic);
  wr<std::uint32_t>(os, 1);
  wr<std::int32_t>(os, grid.d);
  wr(os, grid.L);
  wr<std::int32_t>(os, grid.n);
  wr(os, prm.alpha);
  wr<std::int32_t>(os, prm.d);
  wr<std::uint64_t>(os, potential_name.size());
  os.write(potential_name.data(), static_cast<std::streamsize>(potential_name.size()));
  wr(os, v_neg_radius);
  wr<std::uint8_t>(os, no_ground_state ? 1 : 0);
  wr<std::uint8_t>(os, degenerate_ground ? 1 : 0);
  wr(os, gap_resolution_ratio);
  wr(os, cap_sensitivity);
  wr(os, boundary_ratio);
  wr(os, t_min_cached);
  wr_vec(os, eigenvalues);
  wr_vec(os, residuals);
  wr_vec(os, v_values);
  wr_vec(os, modes);
  if (!os) throw ConfigError("spectral model save: write failed for " + path);
}

SpectralModel SpectralModel::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("spectral model load: cannot open " + path);
  if (rd<std::uint64_t>(is) != kModelMagic) {
    throw ConfigError("spectral model load: bad magic in " + path);
  }
  if (rd<std::uint32_t>(is) != 1) throw ConfigError("spectral model load: unsupported version");
  SpectralModel m;
  m.grid.d = rd<std::int32_t>(is);
  m.grid.L = rd<double>(is);
  m.grid.n = rd<std::int32_t>(is);
  m.prm.alpha = rd<double>(is);
  m.prm.d = rd<std::int32_t>(is);
  auto nsz = rd<std::uint64_t>(is);
  m.potential_name.resize(nsz);
  is.read(m.potential_name.data(), static_cast<std::streamsize>(nsz));
  m.v_neg_radius = rd<double>(is);
  m.no_ground_state = rd<std::uint8_t>(is) != 0;
  m.degenerate_ground = rd<std::uint8_t>(is) != 0;
  m.gap_resolution_ratio = rd<double>(is);
  m.cap_sensitivity = rd<double>(is);
  m.boundary_ratio = rd<double>(is);
  m.t_min_cached = rd<double>(is);
  m.grid.validate();
  m.prm.validate();
  m.eigenvalues = rd_vec(is);
  m.residuals = rd_vec(is);
  m.v_values = rd_vec(is, m.grid.total());
  m.modes = rd_vec(is, m.eigenvalues.size() * m.grid.total());
  if (!is) throw ConfigError("spectral model load: truncated file " + path);
  if (m.eigenvalues.size() < 2) throw ConfigError("spectral model load: fewer than two modes");
  return m;
}

}  // namespace fkstable::spectral
