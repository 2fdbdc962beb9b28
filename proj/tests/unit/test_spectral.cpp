#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <gsl/gsl_sf_airy.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "fkstable/potentials.hpp"
#include "fkstable/spectral.hpp"

using namespace fkstable;
using namespace fkstable::spectral;
using fkstable::potentials::CatalogParams;
using fkstable::potentials::catalog;
using fkstable::potentials::tabulated;

namespace {

CatalogParams scalars(std::map<std::string, double> s) {
  CatalogParams p;
  p.scalars = std::move(s);
  return p;
}

CatalogParams one_term(double x0, double beta, int sign) {
  CatalogParams p;
  p.terms = {{{x0}, beta, sign}};
  return p;
}

// Levels of |p| + x^2 on the line: in the momentum representation the operator
// is -d^2/dp^2 + |p|, so even modes end at zeros of Ai' and odd modes at zeros
// of Ai. An exact ladder to pin the alpha = 1 oscillator models against.
double cauchy_oscillator_level(int k) {
  if (k % 2 == 0) return -gsl_sf_airy_zero_Ai_deriv(static_cast<unsigned>(k / 2 + 1));
  return -gsl_sf_airy_zero_Ai(static_cast<unsigned>((k + 1) / 2));
}

const SpectralModel& power2_model(int n) {
  static std::map<int, SpectralModel> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    GridSpec g{1, 40.0, n};
    Hamiltonian H(g, {1.0, 1}, catalog("power", scalars({{"delta", 2.0}})));
    it = cache.emplace(n, ground_state(H, n >= 4096 ? 16 : 8)).first;
  }
  return it->second;
}

const SpectralModel& well_model(int n) {
  static std::map<int, SpectralModel> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    GridSpec g{1, 400.0, n};
    Hamiltonian H(g, {1.5, 1}, catalog("well", scalars({{"a", 1.0}, {"b", 1.0}})));
    it = cache.emplace(n, ground_state(H, 2)).first;
  }
  return it->second;
}

// Hand-built two-mode model with unit spacing so every kernel value has a
// closed form. h = 1, phi0 constant, lambda = {0.5, 1.7}.
SpectralModel toy_model() {
  SpectralModel m;
  m.grid = GridSpec{1, 4.0, 8};
  m.prm = {1.0, 1};
  m.potential_name = "toy";
  m.v_values.assign(8, 1.0);
  m.v_neg_radius = 0.0;
  m.eigenvalues = {0.5, 1.7};
  m.residuals = {0.0, 0.0};
  m.modes.assign(16, 0.0);
  const double phi1[8] = {0.6, 0.4, 0.1, -0.2, -0.5, -0.3, 0.2, 0.5};
  for (int i = 0; i < 8; ++i) {
    m.modes[i] = 0.35;
    m.modes[8 + i] = phi1[i];
  }
  m.t_min_cached = 0.5;
  return m;
}

double dot_h(const SpectralModel& m, int j, int k) {
  const std::size_t total = m.grid.total();
  double s = 0.0;
  for (std::size_t i = 0; i < total; ++i) s += m.mode(j)[i] * m.mode(k)[i];
  return s * std::pow(m.grid.h(), m.grid.d);
}

double ls_rate(const std::vector<double>& t, const std::vector<double>& y) {
  double st = 0, sy = 0, stt = 0, sty = 0;
  const double n = static_cast<double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    st += t[i];
    sy += y[i];
    stt += t[i] * t[i];
    sty += t[i] * y[i];
  }
  return -(n * sty - st * sy) / (n * stt - st * st);
}

}  // namespace

TEST_CASE("grid geometry and validation") {
  GridSpec g{1, 5.0, 16};
  g.validate();
  CHECK(g.h() == doctest::Approx(0.625));
  CHECK(g.total() == 16);
  CHECK(g.coord(0) == doctest::Approx(-5.0));
  CHECK(g.coord(8) == doctest::Approx(0.0));
  CHECK(g.axis_index(0.0) == 8);
  CHECK(g.axis_index(-5.0) == 0);
  CHECK(g.axis_index(100.0) == 15);  // clamped
  double x = 1.875;
  CHECK(g.flat_index(&x) == 11);
  double out = 0.0;
  g.point(11, &out);
  CHECK(out == doctest::Approx(1.875));

  GridSpec g2{2, 3.0, 8};
  g2.validate();
  CHECK(g2.total() == 64);
  double xy[2] = {-3.0 + 0.75 * 2, -3.0 + 0.75 * 5};
  std::size_t f = g2.flat_index(xy);
  CHECK(f == 2 * 8 + 5);
  double back[2];
  g2.point(f, back);
  CHECK(back[0] == doctest::Approx(xy[0]));
  CHECK(back[1] == doctest::Approx(xy[1]));

  auto bad = [](int d, double L, int n) { GridSpec{d, L, n}.validate(); };
  CHECK_THROWS_AS(bad(3, 1.0, 16), ConfigError);
  CHECK_THROWS_AS(bad(1, 0.0, 16), ConfigError);
  CHECK_THROWS_AS(bad(1, 1.0, 12), ConfigError);
  CHECK_THROWS_AS(bad(1, 1.0, 4), ConfigError);
  CHECK_THROWS_AS(bad(2, 1.0, 2048), ConfigError);  // 4M points
}

TEST_CASE("multiplier is exact on sampled plane waves") {
  const double L = 5.0, alpha = 1.3;
  const int n = 64;
  GridSpec g{1, L, n};
  Hamiltonian H(g, {alpha, 1}, catalog("zero"));
  CHECK(H.multiplier_bound() == doctest::Approx(std::pow(M_PI * n / (2 * L), alpha)));
  CHECK(H.v_min() == 0.0);
  CHECK(H.v_max() == 0.0);
  CHECK_FALSE(H.cap_applied());

  for (int f : {0, 1, 5, 31, 32}) {
    const double mult = std::pow(M_PI * f / L, alpha);
    std::vector<double> v(n), out(n);
    for (int i = 0; i < n; ++i) v[i] = std::cos(2.0 * M_PI * f * i / n + 0.3);
    H.apply(v.data(), out.data());
    for (int i = 0; i < n; ++i) {
      CHECK(std::abs(out[i] - mult * v[i]) <= 1e-11 * (1.0 + mult));
    }
  }
  {
    // sine branch of the same frequency
    const int f = 5;
    const double mult = std::pow(M_PI * f / L, alpha);
    std::vector<double> v(n), out(n);
    for (int i = 0; i < n; ++i) v[i] = std::sin(2.0 * M_PI * f * i / n - 1.1);
    H.apply(v.data(), out.data());
    for (int i = 0; i < n; ++i) {
      CHECK(std::abs(out[i] - mult * v[i]) <= 1e-11 * (1.0 + mult));
    }
  }

  // two dimensions: product waves share |k|, so they stay eigenvectors
  {
    const int n2 = 16;
    const double L2 = 3.0, a2 = 0.8;
    GridSpec gg{2, L2, n2};
    Hamiltonian H2(gg, {a2, 2}, catalog("zero"));
    const int f1 = 3, f2 = 5;
    const double k2 = std::pow(M_PI * f1 / L2, 2) + std::pow(M_PI * f2 / L2, 2);
    const double mult = std::pow(k2, 0.5 * a2);
    std::vector<double> v(gg.total()), out(gg.total());
    for (int i = 0; i < n2; ++i)
      for (int j = 0; j < n2; ++j)
        v[i * n2 + j] = std::cos(2.0 * M_PI * f1 * i / n2 + 0.2) *
                        std::sin(2.0 * M_PI * f2 * j / n2 + 0.7);
    H2.apply(v.data(), out.data());
    for (std::size_t i = 0; i < gg.total(); ++i) {
      CHECK(std::abs(out[i] - mult * v[i]) <= 1e-11 * (1.0 + mult));
    }
  }

  // symmetry <Hf, g> == <f, Hg> with a potential present
  {
    Hamiltonian Hp(g, {alpha, 1}, catalog("power", scalars({{"delta", 2.0}})));
    RngStream rng(123, 0);
    std::vector<double> f(n), q(n), Hf(n), Hq(n);
    for (int i = 0; i < n; ++i) {
      f[i] = rng.normal();
      q[i] = rng.normal();
    }
    Hp.apply(f.data(), Hf.data());
    Hp.apply(q.data(), Hq.data());
    double a = 0, b = 0;
    for (int i = 0; i < n; ++i) {
      a += Hf[i] * q[i];
      b += f[i] * Hq[i];
    }
    CHECK(a == doctest::Approx(b).epsilon(1e-11));
  }

  CHECK_THROWS_AS(H.apply(std::vector<double>(3)), PreconditionError);
}

TEST_CASE("free operator reproduces the multiplier spectrum") {
  // d = 1
  {
    const int n = 16;
    const double L = 5.0, alpha = 1.3;
    GridSpec g{1, L, n};
    Hamiltonian H(g, {alpha, 1}, catalog("zero"));
    auto dense = dense_eigensolve(H, n);
    std::vector<double> expect;
    for (int i = 0; i < n; ++i) expect.push_back(std::pow(M_PI * std::min(i, n - i) / L, alpha));
    std::sort(expect.begin(), expect.end());
    for (int i = 0; i < n; ++i) {
      CHECK(std::abs(dense.eigenvalues[i] - expect[i]) <= 1e-10);
    }
  }
  // d = 2
  {
    const int n = 8;
    const double L = 3.0, alpha = 0.8;
    GridSpec g{2, L, n};
    Hamiltonian H(g, {alpha, 2}, catalog("zero"));
    auto dense = dense_eigensolve(H, static_cast<int>(g.total()));
    std::vector<double> expect;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double k2 = std::pow(M_PI * std::min(i, n - i) / L, 2) +
                    std::pow(M_PI * std::min(j, n - j) / L, 2);
        expect.push_back(k2 > 0 ? std::pow(k2, 0.5 * alpha) : 0.0);
      }
    std::sort(expect.begin(), expect.end());
    for (std::size_t i = 0; i < g.total(); ++i) {
      CHECK(std::abs(dense.eigenvalues[i] - expect[i]) <= 1e-10);
    }
  }
}

TEST_CASE("dense cross-check pins the subspace solver") {
  GridSpec g{1, 40.0, 1024};
  Hamiltonian H(g, {1.0, 1}, catalog("power", scalars({{"delta", 2.0}})));
  const SpectralModel& m = power2_model(1024);
  auto dense = dense_eigensolve(H, 8);

  for (int k = 0; k < 8; ++k) {
    CHECK(std::abs(m.eigenvalues[k] - dense.eigenvalues[k]) <=
          1e-8 * (1 + std::abs(dense.eigenvalues[k])));
    CHECK(m.residuals[k] <= 1e-8 * (1.0 + std::abs(m.eigenvalues[k])));
  }

  // eigenvectors match up to sign and the h-normalization
  const double s = 1.0 / std::sqrt(g.h());
  for (int k = 0; k < 8; ++k) {
    double dot = 0.0;
    for (std::size_t i = 0; i < g.total(); ++i) dot += m.mode(k)[i] * dense.vectors[k][i];
    const double sign = dot < 0 ? -1.0 : 1.0;
    double worst = 0.0;
    for (std::size_t i = 0; i < g.total(); ++i) {
      worst = std::max(worst, std::abs(m.mode(k)[i] - sign * s * dense.vectors[k][i]));
    }
    CHECK(worst <= 1e-6);
  }

  // h-weighted orthonormality
  for (int j = 0; j < 8; ++j)
    for (int k = j; k < 8; ++k) {
      CHECK(std::abs(dot_h(m, j, k) - (j == k ? 1.0 : 0.0)) <= 1e-9);
    }

  // deterministic: a rebuilt model is bit-identical
  Hamiltonian H2(g, {1.0, 1}, catalog("power", scalars({{"delta", 2.0}})));
  SpectralModel m2 = ground_state(H2, 8);
  for (int k = 0; k < 8; ++k) CHECK(m2.eigenvalues[k] == m.eigenvalues[k]);
  CHECK(m2.modes == std::vector<double>(m.modes.begin(), m.modes.begin() + 8 * g.total()));

  // shallow well: dense agreement and a strictly negative ground level
  {
    GridSpec gw{1, 256.0, 1024};
    Hamiltonian Hw(gw, {1.5, 1}, catalog("well", scalars({{"a", 1.0}, {"b", 1.0}})));
    SpectralModel mw = ground_state(Hw, 2);
    auto dw = dense_eigensolve(Hw, 2);
    CHECK(mw.eigenvalues[0] < 0.0);
    CHECK(std::abs(mw.eigenvalues[0] - dw.eigenvalues[0]) <=
          1e-8 * (1 + std::abs(dw.eigenvalues[0])));
    std::printf("[pin] well L=256 n=1024 lambda0=%.12f lambda1=%.12f\n", mw.eigenvalues[0],
                mw.eigenvalues[1]);
  }
}

TEST_CASE("alpha=1 oscillator levels land on the airy ladder") {
  const SpectralModel& m = power2_model(4096);
  REQUIRE(m.n_modes() == 16);
  CHECK_FALSE(m.no_ground_state);
  CHECK_FALSE(m.degenerate_ground);
  CHECK(m.gap_resolution_ratio > 4.0);
  CHECK(m.boundary_ratio < 1e-5);
  CHECK(std::isnan(m.cap_sensitivity));

  // Even levels carry the box-truncation error: their momentum density is
  // finite at the |xi| kink, so the level error is O(L^-2) and h-independent.
  // Odd levels vanish at the kink and come out nearly exact.
  for (int k = 0; k < 8; ++k) {
    const double exact = cauchy_oscillator_level(k);
    std::printf("[pin] airy k=%d exact=%.10f grid=%.10f rel=%.3e\n", k, exact, m.eigenvalues[k],
                std::abs(m.eigenvalues[k] - exact) / exact);
    CHECK(m.eigenvalues[k] == doctest::Approx(exact).epsilon(k % 2 == 0 ? 1e-3 : 1e-6));
  }

  // h refinement alone saturates at the box error
  const double exact0 = cauchy_oscillator_level(0);
  double e1024 = std::abs(power2_model(1024).eigenvalues[0] - exact0);
  double e4096 = std::abs(m.eigenvalues[0] - exact0);
  CHECK(e4096 <= e1024 * (1.0 + 1e-6));

  // doubling the box quarters the error
  auto l0_at = [](double L, int n) {
    GridSpec g{1, L, n};
    Hamiltonian H(g, {1.0, 1}, catalog("power", scalars({{"delta", 2.0}})));
    return ground_state(H, 4).eigenvalues[0];
  };
  const double e40 = e4096;
  const double e80 = std::abs(l0_at(80.0, 8192) - exact0);
  const double e160 = std::abs(l0_at(160.0, 16384) - exact0);
  std::printf("[pin] airy box ladder e40=%.3e e80=%.3e e160=%.3e\n", e40, e80, e160);
  CHECK(e80 < 0.5 * e40);
  CHECK(e160 < 0.5 * e80);
  CHECK(e160 < 5e-5);
}

TEST_CASE("free box reports an unresolved ground state") {
  GridSpec g{1, 20.0, 512};
  Hamiltonian H(g, {1.0, 1}, catalog("zero"));
  SpectralModel m = ground_state(H, 8);
  CHECK(m.no_ground_state);
  CHECK_FALSE(m.degenerate_ground);
  CHECK(m.gap_resolution_ratio == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(m.eigenvalues[0]) <= 1e-9);
  CHECK(std::abs(m.eigenvalues[1] - M_PI / 20.0) <= 1e-9);
  CHECK(std::abs(m.eigenvalues[2] - M_PI / 20.0) <= 1e-9);
  double mx = 0, mn = 1e300;
  for (std::size_t i = 0; i < g.total(); ++i) {
    mx = std::max(mx, m.phi0(i));
    mn = std::min(mn, m.phi0(i));
  }
  CHECK(mx / mn - 1.0 <= 1e-7);  // flat mode
  CHECK(m.phi0(0) == doctest::Approx(std::sqrt(1.0 / 40.0)).epsilon(1e-9));
}

TEST_CASE("mode-sum kernel: symmetry, eigenrelation, truncation guard") {
  const SpectralModel& m = power2_model(1024);
  const std::size_t c = m.grid.total() / 2;
  const std::size_t q = m.grid.total() / 4;

  // bitwise symmetric by construction
  CHECK(semigroup_kernel(m, 0.7, c, q) == semigroup_kernel(m, 0.7, q, c));

  // sum_y u(t,x,y) phi0(y) h = e^{-l0 t} phi0(x), exact up to orthonormality
  for (std::size_t x : {c, q, m.grid.total() / 8}) {
    for (double t : {0.5, 1.0, 2.0}) {
      double acc = 0.0;
      for (std::size_t y = 0; y < m.grid.total(); ++y) {
        acc += semigroup_kernel(m, t, x, y) * m.phi0(y) * m.grid.h();
      }
      const double expect = std::exp(-m.eigenvalues[0] * t) * m.phi0(x);
      CHECK(acc == doctest::Approx(expect).epsilon(1e-8));
    }
  }

  CHECK(semigroup_kernel(m, std::max(1.0, m.t_min()), c, q) > 0.0);

  // closed forms on the toy model
  SpectralModel toy = toy_model();
  const double u1 = semigroup_kernel(toy, 0.8, 0, 4);
  CHECK(u1 == doctest::Approx(std::exp(-0.4) * 0.1225 + std::exp(-1.7 * 0.8) * 0.6 * -0.5)
                  .epsilon(1e-12));
  CHECK(semigroup_kernel(toy, 0.8, 0, 4, 1) ==
        doctest::Approx(std::exp(-0.4) * 0.1225).epsilon(1e-12));
  // negative truncated value below t_min is returned, beyond t_min it throws
  CHECK(semigroup_kernel(toy, 0.4, 0, 4) < 0.0);
  CHECK_THROWS_AS(semigroup_kernel(toy, 0.6, 0, 4), NumericError);
  // truncation estimate e^{-l1 t} max phi1^2 = e^{-1.36} 0.36 > 1e-3
  CHECK_THROWS_AS(semigroup_kernel(toy, 0.8, 0, 4, 2, 1e-3), NumericError);
  CHECK(semigroup_kernel(toy, 0.8, 0, 4, 2, 1.0) == u1);
  CHECK_THROWS_AS(semigroup_kernel(toy, -1.0, 0, 0), PreconditionError);
  CHECK_THROWS_AS(semigroup_kernel(toy, 1.0, 99, 0), PreconditionError);
  CHECK_THROWS_AS(semigroup_kernel(toy, 1.0, 0, 0, 3), PreconditionError);
}

TEST_CASE("intrinsic kernel is a stochastic gauge") {
  const SpectralModel& m = power2_model(1024);
  REQUIRE(std::isfinite(m.t_min()));
  CHECK(m.t_min() > 0.0);
  CHECK(m.t_min() <= 64.0);
  std::printf("[pin] power2 n=1024 t_min=%.3f gap=%.6f\n", m.t_min(), m.gap());
  const double t1 = std::max(1.0, m.t_min());
  const std::size_t c = m.grid.total() / 2;

  // row sums of P(x, y) = u~(t, x, y) phi0(y)^2 h are 1
  for (std::size_t x : {c, c + 37, static_cast<std::size_t>(m.grid.axis_index(17.0))}) {
    double acc = 0.0;
    for (std::size_t y = 0; y < m.grid.total(); ++y) {
      acc += intrinsic_kernel(m, t1, x, y) * m.phi0(y) * m.phi0(y) * m.grid.h();
    }
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
  }

  CHECK(intrinsic_kernel(m, t1, c, c + 11) == intrinsic_kernel(m, t1, c + 11, c));

  // sup_y |u~ - 1| contracts at the spectral gap. Probe away from x = 0:
  // the first excited mode is odd and vanishes there, which would leave
  // only the even-gap decay visible.
  const std::size_t xo = static_cast<std::size_t>(m.grid.axis_index(0.9));
  std::vector<double> ts{t1, t1 + 1.0, t1 + 2.0, t1 + 3.0};
  std::vector<double> logsup;
  for (double t : ts) {
    double sup = 0.0;
    for (std::size_t y = 0; y < m.grid.total(); ++y) {
      sup = std::max(sup, std::abs(intrinsic_kernel(m, t, xo, y) - 1.0));
    }
    logsup.push_back(std::log(sup));
  }
  for (std::size_t i = 1; i < ts.size(); ++i) CHECK(logsup[i] < logsup[i - 1]);
  const double rate = ls_rate(ts, logsup);
  std::printf("[pin] intrinsic contraction rate=%.4f gap=%.4f\n", rate, m.gap());
  CHECK(std::abs(rate - m.gap()) <= 0.15 * m.gap());

  // toy closed form: u~ = 1 + e^{-1.2 t} phi1(x) phi1(y) / 0.1225
  SpectralModel toy = toy_model();
  CHECK(intrinsic_kernel(toy, 1.0, 0, 1) ==
        doctest::Approx(1.0 + std::exp(-1.2) * 0.6 * 0.4 / 0.1225).epsilon(1e-12));
  CHECK_THROWS_AS(intrinsic_kernel(toy, 0.25, 0, 1), PreconditionError);
  SpectralModel dim = toy_model();
  dim.modes[7] = 1e-12;  // below the phi0 floor
  CHECK_THROWS_AS(intrinsic_kernel(dim, 1.0, 7, 0), PreconditionError);
  CHECK_THROWS_AS(intrinsic_kernel(toy, 1.0, 0, 99), PreconditionError);
}

TEST_CASE("projection decay exposes the first excited level") {
  const SpectralModel& m = power2_model(1024);
  auto pd = projection_decay(m, {3.0, 4.0, 5.0, 6.0});
  std::printf("[pin] projection rate=%.5f lambda1=%.5f\n", pd.rate, m.eigenvalues[1]);
  CHECK(std::abs(pd.rate - m.eigenvalues[1]) <= 0.15 * m.eigenvalues[1]);
  CHECK(pd.rate == doctest::Approx(cauchy_oscillator_level(1)).epsilon(0.15));
  REQUIRE(pd.s.size() == 4);
  for (std::size_t i = 1; i < 4; ++i) CHECK(pd.s[i] < pd.s[i - 1]);

  // two-mode model: s(t) = e^{-l1 t} (max |phi1|)^2 exactly
  SpectralModel toy = toy_model();
  auto pt = projection_decay(toy, {2.5, 3.0, 3.5, 4.0});
  CHECK(pt.rate == doctest::Approx(1.7).epsilon(1e-10));
  CHECK(pt.intercept == doctest::Approx(std::log(0.36)).epsilon(1e-9));

  CHECK_THROWS_AS(projection_decay(m, {3.0}), PreconditionError);
  CHECK_THROWS_AS(projection_decay(m, {2.0, 3.0}), PreconditionError);
  CHECK_THROWS_AS(projection_decay(m, {4000.0, 5000.0}), NumericError);
}

TEST_CASE("ground-state decay fits the envelope law") {
  // confining power: phi0 ~ 1 / (V (1+|x|)^{1+alpha}), exponent -(d+alpha+delta)
  {
    const SpectralModel& m = power2_model(4096);
    auto f = decay_fit(m, 8.0, 25.0);
    std::printf("[pin] power2 fit slope=%.4f exponent=%.4f shrink=%d curz=%.4f\n", f.slope,
                f.exponent, f.shrink_count, f.curvature);
    CHECK(f.exponent == doctest::Approx(-4.0).epsilon(0.075));
    CHECK(f.slope == doctest::Approx(1.0).epsilon(0.15));
    CHECK_FALSE(f.envelope_only);
    CHECK(f.points > 100);
  }

  // log-corrected power: the V-matched slope stays near 1
  {
    GridSpec g{1, 40.0, 4096};
    Hamiltonian H(g, {1.0, 1}, catalog("power_log", scalars({{"beta", 2.0}})));
    SpectralModel m = ground_state(H, 8);
    auto f = decay_fit(m, 8.0, 25.0);
    std::printf("[pin] power_log fit slope=%.4f exponent=%.4f\n", f.slope, f.exponent);
    CHECK(f.slope == doctest::Approx(1.0).epsilon(0.15));
    CHECK_FALSE(f.envelope_only);
  }

  // compactly supported well: V = 0 on the window, pure envelope with
  // exponent -(d+alpha) = -2.5
  {
    const SpectralModel& m = well_model(8192);
    CHECK(m.eigenvalues[0] < 0.0);
    auto f = decay_fit(m, 20.0, 100.0);
    std::printf("[pin] well fit slope=%.4f exponent=%.4f shrink=%d\n", f.slope, f.exponent,
                f.shrink_count);
    CHECK(f.envelope_only);
    CHECK(f.exponent == doctest::Approx(-2.5).epsilon(0.12));
    CHECK(f.slope == doctest::Approx(1.0).epsilon(0.15));
  }

  // near the box edge the periodic image bends the tail; the window shrinks
  {
    const SpectralModel& m = power2_model(4096);
    auto f = decay_fit(m, 34.0, 39.9);
    CHECK(f.shrink_count >= 1);
    CHECK(f.r_hi < 39.9);
    CHECK(f.exponent > -3.5);  // wrap contamination flattens the fit
  }

  // persistent curvature exhausts the shrink budget
  {
    SpectralModel m;
    m.grid = GridSpec{1, 40.0, 512};
    m.prm = {1.0, 1};
    m.potential_name = "curved";
    m.v_values.assign(512, 1.0);
    m.v_neg_radius = 0.0;
    m.eigenvalues = {1.0, 2.0};
    m.residuals = {0.0, 0.0};
    m.modes.assign(2 * 512, 0.1);
    for (int i = 0; i < 512; ++i) {
      double x = m.grid.coord(i);
      double u = std::log1p(std::abs(x));
      m.modes[i] = std::exp(-3.0 * u * u);
    }
    m.t_min_cached = 0.5;
    CHECK_THROWS_AS(decay_fit(m, 2.0, 30.0), NumericError);

    // window checks on the same model
    CHECK_THROWS_AS(decay_fit(m, 0.0, 10.0), PreconditionError);
    CHECK_THROWS_AS(decay_fit(m, 2.0, 41.0), PreconditionError);
    CHECK_THROWS_AS(decay_fit(m, 39.0, 39.8), PreconditionError);  // below floor
    m.v_neg_radius = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(decay_fit(m, 2.0, 30.0), PreconditionError);
    m.v_neg_radius = 5.0;
    CHECK_THROWS_AS(decay_fit(m, 2.0, 30.0), PreconditionError);
  }

  // the well's negative support fences the window
  CHECK_THROWS_AS(decay_fit(well_model(8192), 0.5, 10.0), PreconditionError);
}

TEST_CASE("adding a constant shifts the spectrum, not the state") {
  GridSpec g{1, 40.0, 1024};
  const double c = 0.7;
  auto shifted = potentials::sum(catalog("power", scalars({{"delta", 2.0}})),
                                 tabulated({-1.0, 1.0}, {c, c}));
  Hamiltonian H(g, {1.0, 1}, shifted);
  SpectralModel ms = ground_state(H, 8);
  const SpectralModel& m = power2_model(1024);

  for (std::size_t i : {std::size_t{0}, g.total() / 2, g.total() - 1}) {
    CHECK(std::abs(ms.v_values[i] - (m.v_values[i] + c)) <= 1e-12 * (1.0 + std::abs(m.v_values[i])));
  }
  for (int k = 0; k < 8; ++k) {
    CHECK(std::abs(ms.eigenvalues[k] - m.eigenvalues[k] - c) <=
          1e-9 * (1.0 + std::abs(m.eigenvalues[k])));
  }
  for (int k = 0; k < 8; ++k) {
    double dot = 0.0;
    for (std::size_t i = 0; i < g.total(); ++i) dot += ms.mode(k)[i] * m.mode(k)[i];
    const double sign = dot < 0 ? -1.0 : 1.0;
    double worst = 0.0;
    for (std::size_t i = 0; i < g.total(); ++i) {
      worst = std::max(worst, std::abs(ms.mode(k)[i] - sign * m.mode(k)[i]));
    }
    CHECK(worst <= 5e-8);
  }

  // intrinsic kernel and the pure-power exponent are gauge invariants
  const double t1 = std::max(1.0, std::max(m.t_min(), ms.t_min()));
  const std::size_t cc = g.total() / 2;
  for (std::size_t y : {cc, cc + 101, cc - 57}) {
    CHECK(intrinsic_kernel(ms, t1, cc, y) ==
          doctest::Approx(intrinsic_kernel(m, t1, cc, y)).epsilon(1e-6));
  }
  auto fa = decay_fit(m, 8.0, 25.0);
  auto fb = decay_fit(ms, 8.0, 25.0);
  std::printf("[pin] gauge exponents %.6f vs %.6f\n", fa.exponent, fb.exponent);
  CHECK(std::abs(fa.exponent - fb.exponent) <= 0.02);
}

TEST_CASE("model files round-trip bit for bit") {
  const std::string path = "/tmp/fkstable_test_model.bin";
  SpectralModel toy = toy_model();
  toy.cap_sensitivity = 0.125;
  toy.gap_resolution_ratio = 7.5;
  toy.boundary_ratio = 1e-7;
  toy.save(path);
  SpectralModel back = SpectralModel::load(path);
  CHECK(back.grid.d == toy.grid.d);
  CHECK(back.grid.L == toy.grid.L);
  CHECK(back.grid.n == toy.grid.n);
  CHECK(back.prm.alpha == toy.prm.alpha);
  CHECK(back.potential_name == toy.potential_name);
  CHECK(back.eigenvalues == toy.eigenvalues);
  CHECK(back.residuals == toy.residuals);
  CHECK(back.v_values == toy.v_values);
  CHECK(back.modes == toy.modes);
  CHECK(back.cap_sensitivity == 0.125);
  CHECK(back.t_min_cached == toy.t_min_cached);
  CHECK(back.v_neg_radius == toy.v_neg_radius);

  // a computed model round-trips too, NaN sensitivity included
  const SpectralModel& m = power2_model(1024);
  m.save(path);
  SpectralModel mb = SpectralModel::load(path);
  CHECK(mb.eigenvalues == m.eigenvalues);
  CHECK(mb.modes == m.modes);
  CHECK(std::isnan(mb.cap_sensitivity));
  CHECK(mb.no_ground_state == m.no_ground_state);
  CHECK(mb.t_min_cached == m.t_min_cached);

  // corruption paths
  CHECK_THROWS_AS(SpectralModel::load("/tmp/does_not_exist_fkstable.bin"), ConfigError);
  CHECK_THROWS_AS(toy.save("/tmp/no_such_dir_fkstable/x.bin"), ConfigError);
  {
    std::ifstream is(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::string bad = bytes;
    bad[0] = static_cast<char>(bad[0] ^ 0x5a);
    std::ofstream(path + ".magic", std::ios::binary).write(bad.data(), bad.size());
    CHECK_THROWS_AS(SpectralModel::load(path + ".magic"), ConfigError);

    std::string trunc = bytes.substr(0, bytes.size() / 2);
    std::ofstream(path + ".trunc", std::ios::binary).write(trunc.data(), trunc.size());
    CHECK_THROWS_AS(SpectralModel::load(path + ".trunc"), ConfigError);

    std::string vbad = bytes;
    vbad[8] = 9;  // unsupported version
    std::ofstream(path + ".ver", std::ios::binary).write(vbad.data(), vbad.size());
    CHECK_THROWS_AS(SpectralModel::load(path + ".ver"), ConfigError);
  }
}

TEST_CASE("singular potentials are capped only at the singular point") {
  GridSpec g{1, 10.0, 512};
  const double h = g.h();
  // positive blow-up sitting exactly on a grid node
  {
    Hamiltonian H(g, {1.0, 1}, catalog("singular_sum", one_term(0.0, 0.5, +1)));
    CHECK(H.cap_applied());
    CHECK(H.v_cap() == 1e6);
    const std::size_t mid = 256;
    CHECK(H.potential_values()[mid] == 1e6);
    CHECK(H.potential_values()[mid + 1] == doctest::Approx(std::pow(h, -0.5)).epsilon(1e-12));
    CHECK(H.v_max() == 1e6);

    SpectralModel m = ground_state(H, 2);
    CHECK(m.eigenvalues[0] > 0.0);
    CHECK(m.eigenvalues[0] < 1.0);
    REQUIRE_FALSE(std::isnan(m.cap_sensitivity));
    std::printf("[pin] spike cap_sensitivity=%.3e lambda0=%.6f\n", m.cap_sensitivity,
                m.eigenvalues[0]);
    CHECK(m.cap_sensitivity < 1e-4);
  }

  // capping a negative singularity builds an artificial deep well; the
  // sensitivity report makes that visible instead of hiding it
  {
    Hamiltonian H(g, {1.0, 1}, catalog("singular_sum", one_term(0.0, 0.5, -1)), 1e4);
    CHECK(H.cap_applied());
    SpectralModel m = ground_state(H, 2);
    CHECK(m.eigenvalues[0] < -1e3);
    REQUIRE_FALSE(std::isnan(m.cap_sensitivity));
    std::printf("[pin] deep-well cap_sensitivity=%.3e lambda0=%.3e\n", m.cap_sensitivity,
                m.eigenvalues[0]);
    CHECK(m.cap_sensitivity > 1e2);
  }

  // cap disabled: the singular node is an error
  CHECK_THROWS_AS(Hamiltonian(g, {1.0, 1}, catalog("singular_sum", one_term(0.0, 0.5, -1)), 0.0),
                  PreconditionError);

  // non-finite V away from any singularity is an error, not a cap
  {
    GridSpec gb{1, 400.0, 8};
    CHECK_THROWS_AS(Hamiltonian(gb, {1.5, 1}, catalog("exponential", scalars({{"beta", 2.0}}))),
                    PreconditionError);
  }

  CHECK_THROWS_AS(Hamiltonian(g, {1.0, 2}, catalog("zero")), ConfigError);

  {
    Hamiltonian H(g, {1.0, 1}, catalog("zero"));
    CHECK_THROWS_AS(ground_state(H, 1), PreconditionError);
    CHECK_THROWS_AS(ground_state(H, 65), PreconditionError);
  }
  {
    GridSpec gs{1, 4.0, 8};
    Hamiltonian H(gs, {1.0, 1}, catalog("zero"));
    CHECK_THROWS_AS(ground_state(H, 3), PreconditionError);
  }
  {
    GridSpec gl{1, 40.0, 8192};
    Hamiltonian H(gl, {1.0, 1}, catalog("zero"));
    CHECK_THROWS_AS(dense_eigensolve(H, 2), PreconditionError);
  }
}

TEST_CASE("near-continuum well cluster stays resolved") {
  const SpectralModel& m8 = well_model(8192);
  const SpectralModel& m4 = well_model(4096);
  CHECK(m8.eigenvalues[0] < -0.1);
  CHECK(m4.eigenvalues[0] < -0.1);
  CHECK_FALSE(m8.no_ground_state);
  CHECK(m8.boundary_ratio < 1e-5);
  CHECK(std::isnan(m8.cap_sensitivity));
  for (int k = 0; k < 2; ++k) {
    CHECK(m8.residuals[k] <= 1e-8 * (1.0 + std::abs(m8.eigenvalues[k])));
  }
  // scattering edge sits at the bottom of the continuum
  CHECK(m8.eigenvalues[1] > -0.01);
  CHECK(m8.eigenvalues[1] < 0.02);
  std::printf("[pin] well lambda0 n8192=%.8f n4096=%.8f diff=%.3e t_min=%g\n", m8.eigenvalues[0],
              m4.eigenvalues[0], std::abs(m8.eigenvalues[0] - m4.eigenvalues[0]), m8.t_min());
  // pointwise sampling of the jump at |x| = 1 leaves an O(h) level error, so
  // successive grids differ at the 1e-2 scale here
  CHECK(std::abs(m8.eigenvalues[0] - m4.eigenvalues[0]) < 0.05);
}

TEST_CASE("two-dimensional models run end to end") {
  // dense oracle on a small 2d grid
  {
    GridSpec g{2, 14.0, 32};
    Hamiltonian H(g, {1.0, 2}, catalog("power", scalars({{"delta", 2.0}})));
    SpectralModel m = ground_state(H, 6);
    auto dense = dense_eigensolve(H, 6);
    for (int k = 0; k < 6; ++k) {
      CHECK(std::abs(m.eigenvalues[k] - dense.eigenvalues[k]) <=
            1e-8 * (1 + std::abs(dense.eigenvalues[k])));
    }
    CHECK_FALSE(m.no_ground_state);
    CHECK(m.eigenvalues[0] > 0.0);
    std::printf("[pin] 2d n=32 lambda0=%.8f t_min=%g\n", m.eigenvalues[0], m.t_min());

    // h^2-weighted orthonormality in 2d
    for (int j = 0; j < 6; ++j)
      for (int k = j; k < 6; ++k) {
        CHECK(std::abs(dot_h(m, j, k) - (j == k ? 1.0 : 0.0)) <= 1e-9);
      }

    // intrinsic rows normalize in 2d as well
    REQUIRE(std::isfinite(m.t_min()));
    const double t1 = std::max(1.0, m.t_min());
    const std::size_t x0 = g.flat_index(std::vector<double>{0.4, -0.8}.data());
    double acc = 0.0;
    const double h2 = g.h() * g.h();
    for (std::size_t y = 0; y < g.total(); ++y) {
      acc += intrinsic_kernel(m, t1, x0, y) * m.phi0(y) * m.phi0(y) * h2;
    }
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
  }

  // finer 2d grid: radial decay fit sees exponent -(d + alpha + delta).
  // The window must start where V clearly dominates lambda_0, or the fit
  // still sees the crossover out of the core and overshoots.
  {
    GridSpec g{2, 20.0, 128};
    Hamiltonian H(g, {1.0, 2}, catalog("power", scalars({{"delta", 2.0}})));
    SpectralModel m = ground_state(H, 6);
    auto f = decay_fit(m, 5.5, 14.0);
    std::printf("[pin] 2d fit slope=%.4f exponent=%.4f (expect -5)\n", f.slope, f.exponent);
    // radii this small still feel the core crossover (observed about -5.6),
    // so the bracket is coarser than in the 1d fits
    CHECK(f.exponent == doctest::Approx(-5.0).epsilon(0.18));
    CHECK(f.slope == doctest::Approx(1.0).epsilon(0.2));
  }
}
