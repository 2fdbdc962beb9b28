#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fkstable/iuc.hpp"
#include "fkstable/potentials.hpp"
#include "fkstable/spectral.hpp"
#include "fkstable/stable.hpp"

using namespace fkstable;
using namespace fkstable::iuc;
using fkstable::potentials::CatalogParams;
using fkstable::potentials::PotentialSpec;
using fkstable::potentials::catalog;
using fkstable::potentials::tabulated;
using fkstable::stable::StableParams;

namespace {

CatalogParams scalars(std::map<std::string, double> s) {
  CatalogParams p;
  p.scalars = std::move(s);
  return p;
}

PotentialSpec power(double delta) { return catalog("power", scalars({{"delta", delta}})); }

PotentialSpec well51() { return catalog("well", scalars({{"a", 5.0}, {"b", 1.0}})); }

spectral::SpectralModel make_model(const PotentialSpec& V, double L, int n, double alpha = 1.0) {
  spectral::GridSpec g{1, L, n};
  spectral::Hamiltonian H(g, StableParams{alpha, 1}, V);
  return spectral::ground_state(H, 8);
}

// alpha = 1, V = x^2 model shared across the spectral scans
const spectral::SpectralModel& power2_model() {
  static spectral::SpectralModel m = make_model(power(2.0), 40.0, 1024);
  return m;
}

fk::FKConfig quick(double dt, std::uint64_t n, std::uint64_t seed) {
  fk::FKConfig c;
  c.dt = dt;
  c.n_paths = n;
  c.seed = seed;
  c.threads = 2;
  return c;
}

bool has_evidence(const IUCVerdict& v, const std::string& name, bool pass) {
  for (const auto& e : v.evidence)
    if (e.name == name) return e.pass == pass;
  return false;
}

}  // namespace

TEST_CASE("classifier: catalog ground truth") {
  auto v2 = classify(power(2.0));
  CHECK(v2.cls == IUCClass::kIUC);
  CHECK(v2.liminf_infinite);
  CHECK(std::isinf(v2.liminf_ratio));
  CHECK(has_evidence(v2, "growth_per_decade", true));
  CHECK(has_evidence(v2, "r_max_large", true));
  CHECK(v2.R.size() == v2.r.size());

  CHECK(classify(power(0.5)).cls == IUCClass::kIUC);
  CHECK(classify(power(1.0)).cls == IUCClass::kIUC);
  CHECK(classify(power(4.0)).cls == IUCClass::kIUC);
  CHECK(classify(catalog("exponential", scalars({{"beta", 1.0}}))).cls == IUCClass::kIUC);

  auto wl = classify(catalog("well_plus_log", scalars({{"alpha", 1.0}})));
  CHECK(wl.cls == IUCClass::kAIUCOnly);
  CHECK(!wl.liminf_infinite);
  CHECK(wl.liminf_ratio == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(has_evidence(wl, "tail_plateau", true));
  CHECK(has_evidence(wl, "comparable_unit_balls", true));

  // borderline c log|x|: AIUC for c > 0 but never IUC, however large c is
  auto border = classify(catalog("log_plus", scalars({{"c", 60.0}})));
  CHECK(border.cls == IUCClass::kAIUCOnly);
  CHECK(border.liminf_ratio == doctest::Approx(60.0).epsilon(1e-6));

  auto sub = classify(catalog("sublog"));
  CHECK(sub.cls == IUCClass::kNotAIUC);
  CHECK(sub.liminf_ratio == 0.0);
  CHECK(has_evidence(sub, "tail_decay", true));
  CHECK(has_evidence(sub, "comparable_unit_balls", true));
}

TEST_CASE("classifier: compact perturbations leave verdicts alone") {
  auto base2 = classify(power(2.0));
  auto pert2 = classify(potentials::sum(power(2.0), well51()));
  CHECK(pert2.cls == base2.cls);

  auto wl = catalog("well_plus_log", scalars({{"alpha", 1.0}}));
  auto base_wl = classify(wl);
  auto pert_wl = classify(potentials::sum(wl, well51()));
  CHECK(pert_wl.cls == base_wl.cls);
  CHECK(pert_wl.liminf_ratio == doctest::Approx(base_wl.liminf_ratio).epsilon(1e-9));

  auto base_sub = classify(catalog("sublog"));
  auto pert_sub = classify(potentials::sum(catalog("sublog"), well51()));
  CHECK(pert_sub.cls == base_sub.cls);

  // the perturbation lives in |x| <= 1, far inside the first annulus
  for (std::size_t i = 0; i < base2.r.size(); ++i)
    CHECK(pert2.r[i] == doctest::Approx(base2.r[i]).epsilon(1e-12));
}

TEST_CASE("classifier: preconditions and honest inconclusives") {
  CHECK_THROWS_AS(classify(PotentialSpec()), PreconditionError);  // V == 0 not confining
  auto well_only = [] { classify(catalog("well", scalars({{"a", 1.0}, {"b", 2.0}}))); };
  CHECK_THROWS_AS(well_only(), PreconditionError);
  auto descending = [] { classify(power(2.0), {1e3, 1e2, 1e1, 1e4}); };
  CHECK_THROWS_AS(descending(), PreconditionError);
  auto small_R = [] { classify(power(2.0), {0.5, 1e1, 1e2, 1e3}); };
  CHECK_THROWS_AS(small_R(), PreconditionError);
  auto too_few = [] { classify(power(2.0), {1e1, 1e2}); };
  CHECK_THROWS_AS(too_few(), PreconditionError);

  // power(1/4) grows too slowly for the default six decades; the long grid
  // resolves it
  CHECK(classify(power(0.25)).cls == IUCClass::kInconclusive);
  std::vector<double> longer;
  for (int k = 1; k <= 13; ++k) longer.push_back(std::pow(10.0, k));
  CHECK(classify(power(0.25), longer).cls == IUCClass::kIUC);
}

TEST_CASE("tail bound scan: box-stable for confining V, divergent without") {
  // L = 20 leaves ~1e-5 of phi0 on the box edge and the eigensolver refuses
  // it; 24 is the smallest comfortable box for this potential
  auto cramped = [] { make_model(power(2.0), 20.0, 256); };
  CHECK_THROWS_AS(cramped(), PreconditionError);
  auto m24 = make_model(power(2.0), 24.0, 256);
  auto m40 = make_model(power(2.0), 40.0, 512);
  auto m80 = make_model(power(2.0), 80.0, 1024);
  auto s24 = tail_bound_scan(m24, 1.0);
  auto s40 = tail_bound_scan(m40, 1.0);
  auto s80 = tail_bound_scan(m80, 1.0);
  CHECK(s40.sup > 0.0);
  CHECK(std::abs(s24.sup - s40.sup) <= 0.10 * s40.sup);
  CHECK(std::abs(s80.sup - s40.sup) <= 0.10 * s40.sup);
  CHECK(!s40.truncation_flagged);
  CHECK(s40.absx.size() == m40.grid.total());

  // e^{lambda_0 t} sup(t) non-increasing in t: semigroup contraction after
  // gauge normalization
  auto s1 = tail_bound_scan(m40, 1.0);
  auto s2 = tail_bound_scan(m40, 2.0);
  auto s4 = tail_bound_scan(m40, 4.0);
  double l0 = m40.eigenvalues[0];
  double n1 = std::exp(l0 * 1.0) * s1.sup;
  double n2 = std::exp(l0 * 2.0) * s2.sup;
  double n4 = std::exp(l0 * 4.0) * s4.sup;
  CHECK(n2 <= n1 * (1.0 + 1e-9));
  CHECK(n4 <= n2 * (1.0 + 1e-9));

  // no confinement: T_t1 is constant, so the weighted sup tracks (1+L)^{d+a}
  auto c20 = make_model(tabulated({-1.0, 1.0}, {0.5, 0.5}), 20.0, 256);
  auto c40 = make_model(tabulated({-1.0, 1.0}, {0.5, 0.5}), 40.0, 512);
  double tc = std::max({1.0, c20.t_min(), c40.t_min()});
  auto f20 = tail_bound_scan(c20, tc);
  auto f40 = tail_bound_scan(c40, tc);
  CHECK(f40.sup > 2.0 * f20.sup);
  CHECK(f40.arg_abs_x > 30.0);

  auto early = [&] { tail_bound_scan(m40, 0.5 * m40.t_min()); };
  CHECK_THROWS_AS(early(), PreconditionError);
}

TEST_CASE("uniform convergence scan: rate matches the spectral gap") {
  const auto& m = power2_model();
  // early times mix the higher modes (rate drifts toward lambda_2 - lambda_0);
  // the fit window starts once (lambda_2 - lambda_1) t is a few units deep
  auto scan = uniform_convergence_scan(m, {3.0, 4.0, 5.0, 6.0});
  CHECK(scan.gap == doctest::Approx(m.gap()));
  CHECK(std::abs(scan.rate - scan.gap) <= 0.15 * scan.gap);
  for (std::size_t i = 1; i < scan.s.size(); ++i) CHECK(scan.s[i] < scan.s[i - 1]);
  CHECK(!scan.floor_flagged);
  CHECK(scan.retained_mass > 0.9);

  // internal consistency: after undoing the gauge, both diagnostics see
  // lambda_1
  auto proj = spectral::projection_decay(m, {3.0, 4.0, 5.0, 6.0});
  CHECK(std::abs((scan.rate + m.eigenvalues[0]) - proj.rate) <= 0.20 * proj.rate);

  // a brutal floor keeps only the peak and gets flagged
  auto tight = uniform_convergence_scan(m, {1.0, 2.0}, 0.9);
  CHECK(tight.floor_flagged);
  CHECK(tight.retained_mass < 0.5);

  auto below = [&] { uniform_convergence_scan(m, {0.5 * m.t_min(), 1.0}); };
  CHECK_THROWS_AS(below(), PreconditionError);
  auto unordered = [&] { uniform_convergence_scan(m, {2.0, 1.0}); };
  CHECK_THROWS_AS(unordered(), PreconditionError);
  auto bad_floor = [&] { uniform_convergence_scan(m, {1.0, 2.0}, 1.5); };
  CHECK_THROWS_AS(bad_floor(), PreconditionError);
}

TEST_CASE("uniform convergence scan: gauge invariance under V -> V + c") {
  const auto& m = power2_model();
  PotentialSpec shifted = potentials::sum(power(2.0), tabulated({-1.0, 1.0}, {3.0, 3.0}));
  auto ms = make_model(shifted, 40.0, 1024);
  CHECK(ms.eigenvalues[0] == doctest::Approx(m.eigenvalues[0] + 3.0).epsilon(1e-7));
  auto a = uniform_convergence_scan(m, {1.0, 2.0, 3.0});
  auto b = uniform_convergence_scan(ms, {1.0, 2.0, 3.0});
  for (std::size_t i = 0; i < a.s.size(); ++i) CHECK(b.s[i] == doctest::Approx(a.s[i]).epsilon(1e-5));
  CHECK(b.rate == doctest::Approx(a.rate).epsilon(1e-4));
}

TEST_CASE("survival ratio: free motion hits the closed form and grows in |x|") {
  StableParams prm{1.0, 1};
  fk::Ball D{{0.0}, 1.0};
  auto cfg = quick(0.5, 40000, 77);
  auto res = survival_ratio_test(PotentialSpec(), prm, 1.0, D, {3.0, 6.0}, cfg);

  auto exact_ratio = [](double x) {
    double P = (std::atan(x + 1.0) - std::atan(x - 1.0)) / M_PI;
    return (1.0 - P) / P;
  };
  REQUIRE(res.entries.size() == 2);
  for (const auto& e : res.entries) {
    CHECK(!e.lower_bound_only);
    CHECK(e.ratio >= 0.0);
    CHECK(e.inside.value + e.outside.value == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(std::abs(res.entries[0].ratio - exact_ratio(3.0)) <= 3.0 * res.entries[0].ratio_se);
  CHECK(std::abs(res.entries[1].ratio - exact_ratio(6.0)) <= 3.0 * res.entries[1].ratio_se);
  CHECK(res.entries[1].ratio > 2.5 * res.entries[0].ratio);
  CHECK(res.argmax == 1);
  CHECK(res.max_ratio == res.entries[1].ratio);
}

TEST_CASE("survival ratio: confined max is grid-extension stable") {
  StableParams prm{1.0, 1};
  fk::Ball D{{0.0}, 2.0};
  auto cfg = quick(0.025, 16000, 2026);
  std::vector<double> core, ext;
  for (double x = -10.0; x <= 10.0 + 1e-9; x += 2.5) core.push_back(x);
  for (double x = -20.0; x <= 20.0 + 1e-9; x += 2.5) ext.push_back(x);
  auto rc = survival_ratio_test(power(2.0), prm, 1.0, D, core, cfg);
  auto re = survival_ratio_test(power(2.0), prm, 1.0, D, ext, cfg);
  CHECK(rc.max_ratio > 0.0);
  double slack = 3.0 * (rc.max_ratio_se + re.max_ratio_se) + 0.05 * rc.max_ratio;
  CHECK(std::abs(re.max_ratio - rc.max_ratio) <= slack);
  // far starts are killed outright; their denominators are flagged, not maxed
  for (const auto& e : re.entries)
    if (std::abs(e.x[0]) >= 15.0) CHECK(e.lower_bound_only);
  CHECK(!re.argmax_lower_bound_only);
}

TEST_CASE("survival ratio: zero denominator becomes a lower bound") {
  StableParams prm{1.0, 1};
  fk::Ball D{{0.0}, 1.0};
  auto cfg = quick(0.5, 1000, 5);
  auto res = survival_ratio_test(PotentialSpec(), prm, 1.0, D, {2000.0}, cfg);
  REQUIRE(res.entries.size() == 1);
  CHECK(res.entries[0].lower_bound_only);
  CHECK(res.entries[0].inside.value == 0.0);
  CHECK(res.entries[0].ratio > 100.0);  // rule of three: ~n/3
  CHECK(res.argmax_lower_bound_only);
}

TEST_CASE("survival ratio: reproducible and validated") {
  StableParams prm{1.0, 1};
  fk::Ball D{{0.0}, 2.0};
  auto a = survival_ratio_test(power(2.0), prm, 0.5, D, {0.0, 3.0}, quick(0.05, 2000, 9));
  auto b_cfg = quick(0.05, 2000, 9);
  b_cfg.threads = 4;
  auto b = survival_ratio_test(power(2.0), prm, 0.5, D, {0.0, 3.0}, b_cfg);
  CHECK(a.max_ratio == b.max_ratio);
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].inside.value == b.entries[i].inside.value);
    CHECK(a.entries[i].outside.value == b.entries[i].outside.value);
  }
  auto c = survival_ratio_test(power(2.0), prm, 0.5, D, {0.0, 3.0}, quick(0.05, 2000, 10));
  CHECK(c.max_ratio != a.max_ratio);

  auto cfg = quick(0.1, 1000, 1);
  auto no_x = [&] { survival_ratio_test(power(2.0), prm, 1.0, D, {}, cfg); };
  CHECK_THROWS_AS(no_x(), PreconditionError);
  auto flat = [&] { survival_ratio_test(power(2.0), prm, 1.0, fk::Ball{{0.0}, 0.0}, {1.0}, cfg); };
  CHECK_THROWS_AS(flat(), PreconditionError);
  StableParams prm2{1.0, 2};
  auto stride = [&] {
    survival_ratio_test(power(2.0), prm2, 1.0, fk::Ball{{0.0, 0.0}, 1.0}, {1.0, 2.0, 3.0}, cfg);
  };
  CHECK_THROWS_AS(stride(), PreconditionError);
  auto bad_t = [&] { survival_ratio_test(power(2.0), prm, -1.0, D, {1.0}, cfg); };
  CHECK_THROWS_AS(bad_t(), PreconditionError);
}

TEST_CASE("verdict json round-trips class and evidence") {
  auto v = classify(power(2.0));
  auto j = nlohmann::json::parse(verdict_json(v));
  CHECK(j["class"] == "IUC");
  CHECK(j["liminf_infinite"] == true);
  CHECK(j["liminf_ratio"] == "+inf");
  REQUIRE(j["evidence"].is_array());
  CHECK(j["evidence"].size() >= 3);
  for (const auto& e : j["evidence"]) {
    CHECK(e.contains("name"));
    CHECK(e.contains("pass"));
  }

  auto s = classify(catalog("sublog"));
  auto js = nlohmann::json::parse(verdict_json(s));
  CHECK(js["class"] == "not_AIUC");
  CHECK(js["liminf_ratio"] == 0.0);
}
