#include "fkstable/fk.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace fkstable::fk {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
// e^700 is the declared mass-generation ceiling; past it the estimator is
// meaningless and the run aborts.
constexpr double kLogMassCeiling = 700.0;
constexpr double kCensoredLimit = 1e-3;

// Clamp V to [-cap, cap] (cap > 0), mapping +-inf onto the matching cap sign.
// NaN passes through and poisons the sample, which is reported after the
// reduction.
double capped_v(const PotentialSpec& V, const double* x, int d, double cap, double& hits) {
  double v = V.evaluate(x, d);
  if (cap > 0.0) {
    if (std::isinf(v)) {
      hits += 1.0;
      return v > 0.0 ? cap : -cap;
    }
    if (v > cap) {
      hits += 1.0;
      return cap;
    }
    if (v < -cap) {
      hits += 1.0;
      return -cap;
    }
  }
  return v;
}

double step_integral(IntegralRule rule, double v0, double v1, double dt) {
  return rule == IntegralRule::kLeft ? v0 * dt : 0.5 * (v0 + v1) * dt;
}

// Chunk extras layout shared by the estimators below.
enum Extra : std::size_t { kCap = 0, kBlowup = 1, kNonFinite = 2, kNumExtraCommon = 3 };

void raise_common(const char* op, const std::vector<double>& extra) {
  if (extra.size() > kBlowup && extra[kBlowup] > 0.0) {
    std::ostringstream os;
    os << op << ": mass blowup, exp(-int V ds) exceeded e^" << kLogMassCeiling << " on "
       << static_cast<std::uint64_t>(extra[kBlowup]) << " path(s)";
    throw NumericError(os.str());
  }
  if (extra.size() > kNonFinite && extra[kNonFinite] > 0.0) {
    throw NumericError(std::string(op) + ": non-finite sample weight (is f bounded?)");
  }
}

void write_skeleton_dump(const std::string& path, int d, const std::vector<PathSkeleton>& sk) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("fk: cannot open dump file " + path);
  const char magic[8] = {'F', 'K', 'S', 'K', 'E', 'L', '0', '1'};
  os.write(magic, 8);
  std::uint32_t dd = static_cast<std::uint32_t>(d), cnt = static_cast<std::uint32_t>(sk.size());
  os.write(reinterpret_cast<const char*>(&dd), 4);
  os.write(reinterpret_cast<const char*>(&cnt), 4);
  for (const auto& s : sk) {
    std::uint64_t n = s.size();
    os.write(reinterpret_cast<const char*>(&n), 8);
    os.write(reinterpret_cast<const char*>(s.times.data()), static_cast<std::streamsize>(8 * n));
    os.write(reinterpret_cast<const char*>(s.pos.data()),
             static_cast<std::streamsize>(8 * n * static_cast<std::uint64_t>(d)));
  }
  if (!os) throw ConfigError("fk: short write on dump file " + path);
}

std::vector<double> fit_line(const std::vector<double>& t, const std::vector<double>& y) {
  double st = 0, sy = 0, stt = 0, sty = 0;
  const double n = static_cast<double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    st += t[i];
    sy += y[i];
    stt += t[i] * t[i];
    sty += t[i] * y[i];
  }
  double det = n * stt - st * st;
  if (det <= 0.0) throw NumericError("fk: degenerate grid in line fit");
  double slope = (n * sty - st * sy) / det;
  double icept = (sy - slope * st) / n;
  return {icept, slope};
}

}  // namespace

MCEstimate fk_expectation(const std::vector<double>& x, double t, const BoundedFn& f,
                          const PotentialSpec& V, const StableParams& prm, const FKConfig& cfg,
                          RunStats* stats) {
  cfg.validate();
  prm.validate();
  require(x.size() == static_cast<std::size_t>(prm.d), "fk_expectation: x has wrong dimension");
  require(t > 0.0 && std::isfinite(t), "fk_expectation: t must be positive");
  require(static_cast<bool>(f), "fk_expectation: f is empty");

  const int d = prm.d;
  const std::uint64_t m = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(t / cfg.dt - 1e-9)));

  std::vector<PathSkeleton> dump;
  const bool want_dump = !cfg.dump_path.empty();

  auto work = [&](std::uint64_t chunk, std::uint64_t n, RngStream& rng) -> std::vector<double> {
    KahanSum s, s2;
    double caps = 0, blow = 0, nonf = 0, cnt = 0;
    std::vector<double> xc(d), inc(d);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::copy(x.begin(), x.end(), xc.begin());
      PathSkeleton* rec = nullptr;
      if (want_dump && chunk == 0 && dump.size() < 16) {
        dump.push_back({d, {0.0}, std::vector<double>(xc)});
        rec = &dump.back();
      }
      double integral = 0.0;
      double vprev = capped_v(V, xc.data(), d, cfg.v_cap, caps);
      double tau = 0.0;
      bool bad = false;
      for (std::uint64_t k = 1; k <= m; ++k) {
        double tk = std::min(static_cast<double>(k) * cfg.dt, t);
        double step = tk - tau;
        stable::sample_increment(prm, step, rng, inc.data());
        for (int a = 0; a < d; ++a) xc[a] += inc[a];
        double vnext = capped_v(V, xc.data(), d, cfg.v_cap, caps);
        integral += step_integral(cfg.integral_rule, vprev, vnext, step);
        vprev = vnext;
        tau = tk;
        if (rec) {
          rec->times.push_back(tk);
          rec->pos.insert(rec->pos.end(), xc.begin(), xc.end());
        }
        if (-integral > kLogMassCeiling) {
          blow += 1.0;
          bad = true;
          break;
        }
      }
      if (bad) continue;
      double w = std::exp(-integral) * f(xc.data(), d);
      if (!std::isfinite(w)) {
        nonf += 1.0;
        continue;
      }
      s.add(w);
      s2.add(w * w);
      cnt += 1.0;
    }
    return {s.get(), s2.get(), cnt, caps, blow, nonf};
  };

  auto chunks = run_chunked({cfg.n_paths, cfg.chunk_size, cfg.seed, cfg.threads}, work);
  auto red = reduce_moments(chunks);
  raise_common("fk_expectation", red.extra);
  if (stats) stats->cap_hits = static_cast<std::uint64_t>(red.extra[kCap]);
  if (want_dump) write_skeleton_dump(cfg.dump_path, d, dump);
  return red.est;
}

MCEstimate fk_kernel_bridge(const std::vector<double>& x, const std::vector<double>& y, double t,
                            const PotentialSpec& V, const StableParams& prm, const FKConfig& cfg,
                            RunStats* stats) {
  cfg.validate();
  prm.validate();
  const int d = prm.d;
  require(x.size() == static_cast<std::size_t>(d) && y.size() == static_cast<std::size_t>(d),
          "fk_kernel_bridge: endpoint has wrong dimension");
  require(t > 0.0 && std::isfinite(t), "fk_kernel_bridge: t must be positive");

  std::vector<double> interior;
  for (std::uint64_t k = 1; static_cast<double>(k) * cfg.dt < t * (1.0 - 1e-12); ++k)
    interior.push_back(static_cast<double>(k) * cfg.dt);

  const double mass = stable::bridge_weight(prm, 0.0, x.data(), t, y.data());
  // endpoints deep in the tail make rejection hopeless; bail out to the
  // inverse-CDF fallback early, it is exact enough for MC and far cheaper
  stable::BridgeOpts bopts;
  bopts.max_rejections = 4096;

  auto work = [&](std::uint64_t, std::uint64_t n, RngStream& rng) -> std::vector<double> {
    KahanSum s, s2;
    double caps = 0, blow = 0, nonf = 0, cnt = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      PathSkeleton sk =
          stable::sample_bridge_skeleton(prm, 0.0, x.data(), t, y.data(), interior, rng, bopts);
      double integral = 0.0;
      double vprev = capped_v(V, sk.point(0), d, cfg.v_cap, caps);
      bool bad = false;
      for (std::size_t k = 1; k < sk.size(); ++k) {
        double vnext = capped_v(V, sk.point(k), d, cfg.v_cap, caps);
        integral +=
            step_integral(cfg.integral_rule, vprev, vnext, sk.times[k] - sk.times[k - 1]);
        vprev = vnext;
        if (-integral > kLogMassCeiling) {
          blow += 1.0;
          bad = true;
          break;
        }
      }
      if (bad) continue;
      double w = std::exp(-integral);
      if (!std::isfinite(w)) {
        nonf += 1.0;
        continue;
      }
      s.add(w);
      s2.add(w * w);
      cnt += 1.0;
    }
    return {s.get(), s2.get(), cnt, caps, blow, nonf};
  };

  auto chunks = run_chunked({cfg.n_paths, cfg.chunk_size, cfg.seed, cfg.threads}, work);
  auto red = reduce_moments(chunks);
  raise_common("fk_kernel_bridge", red.extra);
  if (stats) stats->cap_hits = static_cast<std::uint64_t>(red.extra[kCap]);
  red.est.value *= mass;
  red.est.std_err *= mass;
  return red.est;
}

SurvivalFit survival_growth(const PotentialSpec& V, const StableParams& prm,
                            const std::vector<double>& t_grid, const std::vector<double>& x_grid,
                            const FKConfig& cfg, double residual_threshold) {
  prm.validate();
  require(t_grid.size() >= 2, "survival_growth: need at least two times");
  for (double t : t_grid) require(t > 0.0, "survival_growth: times must be positive");
  const int d = prm.d;
  require(!x_grid.empty() && x_grid.size() % static_cast<std::size_t>(d) == 0,
          "survival_growth: x_grid must be a flat array with stride d");
  auto known = V.kato_known(prm);
  require(!(known.has_value() && !known.value()),
          "survival_growth: V is not Kato-decomposable for these parameters");

  const std::size_t n_x = x_grid.size() / static_cast<std::size_t>(d);
  auto one = [](const double*, int) { return 1.0; };

  SurvivalFit fit;
  fit.t = t_grid;
  for (double t : t_grid) {
    double sup = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n_x; ++i) {
      std::vector<double> x0(x_grid.begin() + static_cast<std::ptrdiff_t>(i * d),
                             x_grid.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
      sup = std::max(sup, fk_expectation(x0, t, one, V, prm, cfg).value);
    }
    if (!(sup > 0.0)) throw NumericError("survival_growth: non-positive supremum estimate");
    fit.log_sup.push_back(std::log(sup));
  }

  auto line = fit_line(fit.t, fit.log_sup);
  fit.C0 = line[0];
  fit.C1 = line[1];
  for (std::size_t i = 0; i < fit.t.size(); ++i)
    fit.max_residual =
        std::max(fit.max_residual, std::abs(fit.C0 + fit.C1 * fit.t[i] - fit.log_sup[i]));
  fit.exponential = fit.max_residual <= residual_threshold;
  return fit;
}

double Ball::distance_from_center(const double* x, int d) const {
  double r2 = 0.0;
  for (int a = 0; a < d; ++a) {
    double u = x[a] - center[a];
    r2 += u * u;
  }
  return std::sqrt(r2);
}

bool Ball::contains(const double* x, int d) const { return distance_from_center(x, d) < radius; }

namespace {

// inf of the capped potential over a probe lattice in D: uniform radial cover
// plus declared kinks and singular locations that fall inside.
double inf_on_ball(const PotentialSpec& V, const Ball& D, int d, double cap) {
  double hits = 0.0;
  double lo = std::numeric_limits<double>::infinity();
  auto probe = [&](const double* x) { lo = std::min(lo, capped_v(V, x, d, cap, hits)); };
  if (d == 1) {
    const int n = 257;
    for (int i = 0; i < n; ++i) {
      double x = D.center[0] - D.radius + 2.0 * D.radius * i / (n - 1);
      probe(&x);
    }
    for (double k : V.kinks())
      if (std::abs(k - D.center[0]) < D.radius) probe(&k);
  } else {
    const int nr = 17, na = 32;
    std::vector<double> x(d, 0.0);
    probe(D.center.data());
    for (int i = 1; i <= nr; ++i)
      for (int j = 0; j < na; ++j) {
        double r = D.radius * i / nr * (i == nr ? 0.999 : 1.0);
        double th = 2.0 * kPi * j / na;
        x = D.center;
        x[0] += r * std::cos(th);
        x[1] += r * std::sin(th);
        probe(x.data());
      }
  }
  for (const auto& s : V.singularities()) {
    std::vector<double> loc(static_cast<std::size_t>(d), 0.0);
    for (int a = 0; a < d && a < static_cast<int>(s.location.size()); ++a) loc[a] = s.location[a];
    if (D.contains(loc.data(), d)) probe(loc.data());
  }
  return lo;
}

}  // namespace

ExitResult exit_functionals(const Ball& D, const PotentialSpec& V, const std::vector<double>& x,
                            const StableParams& prm, const FKConfig& cfg) {
  cfg.validate();
  prm.validate();
  const int d = prm.d;
  require(D.center.size() == static_cast<std::size_t>(d), "exit_functionals: ball dimension");
  require(D.radius > 0.0, "exit_functionals: ball radius must be positive");
  require(x.size() == static_cast<std::size_t>(d), "exit_functionals: x has wrong dimension");
  require(D.contains(x.data(), d), "exit_functionals: start point must lie inside D");

  const double zeta = inf_on_ball(V, D, d, cfg.v_cap);
  double horizon;
  if (zeta > 0.0) {
    // residual weight beyond the cap is at most e^{-50}
    horizon = 50.0 / zeta;
  } else {
    require(cfg.horizon > 0.0,
            "exit_functionals: V has no positive lower bound on D, set cfg.horizon");
    horizon = cfg.horizon;
  }
  // step halves inside this collar around the boundary
  const double collar = 5.0 * std::pow(cfg.dt, 1.0 / prm.alpha);

  // extras: cap, blowup, nonfinite, censored weight, tau sum, tau > 1 count,
  // v-moment sums
  auto work = [&](std::uint64_t, std::uint64_t n, RngStream& rng) -> std::vector<double> {
    KahanSum su, su2, sv, sv2;
    double caps = 0, blow = 0, nonf = 0, cnt = 0, cens = 0, tau_sum = 0, after1 = 0;
    std::vector<double> xc(d), inc(d);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::copy(x.begin(), x.end(), xc.begin());
      double integral = 0.0, v_time = 0.0, tau = 0.0;
      double vprev = capped_v(V, xc.data(), d, cfg.v_cap, caps);
      bool exited = false, bad = false;
      while (tau < horizon) {
        double dist = D.radius - D.distance_from_center(xc.data(), d);
        double step = dist < collar ? 0.5 * cfg.dt : cfg.dt;
        step = std::min(step, horizon - tau);
        stable::sample_increment(prm, step, rng, inc.data());
        for (int a = 0; a < d; ++a) xc[a] += inc[a];
        double vnext = capped_v(V, xc.data(), d, cfg.v_cap, caps);
        double di = step_integral(cfg.integral_rule, vprev, vnext, step);
        double e0 = std::exp(-integral), e1 = std::exp(-(integral + di));
        v_time += cfg.integral_rule == IntegralRule::kLeft ? e0 * step : 0.5 * (e0 + e1) * step;
        integral += di;
        tau += step;
        vprev = vnext;
        if (-integral > kLogMassCeiling) {
          blow += 1.0;
          bad = true;
          break;
        }
        if (!D.contains(xc.data(), d)) {
          exited = true;
          break;
        }
      }
      if (bad) continue;
      double w = std::exp(-integral);
      if (!std::isfinite(w) || !std::isfinite(v_time)) {
        nonf += 1.0;
        continue;
      }
      if (!exited) cens += w;
      su.add(w);
      su2.add(w * w);
      sv.add(v_time);
      sv2.add(v_time * v_time);
      tau_sum += tau;
      if (tau > 1.0) after1 += 1.0;
      cnt += 1.0;
    }
    return {su.get(), su2.get(), cnt,     caps,     blow,     nonf,
            cens,     tau_sum,   after1,  sv.get(), sv2.get()};
  };

  auto chunks = run_chunked({cfg.n_paths, cfg.chunk_size, cfg.seed, cfg.threads}, work);
  auto red = reduce_moments(chunks);
  raise_common("exit_functionals", red.extra);

  ExitResult out;
  out.u_D = red.est;
  out.horizon = horizon;
  out.cap_hits = static_cast<std::uint64_t>(red.extra[kCap]);
  const double cnt = static_cast<double>(red.est.n_samples);
  const double cens = red.extra[3];
  out.mean_exit_time = red.extra[4] / cnt;
  out.frac_exit_after_1 = red.extra[5] / cnt;
  double sv = red.extra[6], sv2 = red.extra[7];
  out.v_D.value = sv / cnt;
  out.v_D.n_samples = red.est.n_samples;
  double var = cnt > 1.5 ? std::max(0.0, (sv2 - sv * sv / cnt) / (cnt - 1.0)) : 0.0;
  out.v_D.std_err = std::sqrt(var / cnt);

  double total_weight = red.est.value * cnt;
  out.censored_weight_fraction = total_weight > 0.0 ? cens / total_weight : (cens > 0 ? 1.0 : 0.0);
  if (out.censored_weight_fraction >= kCensoredLimit) {
    std::ostringstream os;
    os << "exit_functionals: censored weight fraction " << out.censored_weight_fraction
       << " exceeds " << kCensoredLimit << " (horizon " << horizon << " too short)";
    throw NumericError(os.str());
  }
  return out;
}

namespace {

// angular average of (1 + |x + r u|)^{-gamma} over the unit sphere directions,
// times the sphere measure: 2 point masses in d = 1, arc integral in d = 2.
double angular_factor(double gamma, double absx, double r, int d) {
  if (d == 1)
    return std::pow(1.0 + std::abs(absx - r), -gamma) + std::pow(1.0 + (absx + r), -gamma);
  auto f = [&](double th) {
    double yy = std::sqrt(absx * absx + r * r + 2.0 * absx * r * std::cos(th));
    return 2.0 * std::pow(1.0 + yy, -gamma);
  };
  // |y| varies on the angular scale ~ 1/sqrt(|x| r) near the close point at
  // th = pi (sharp when r is close to |x|, sharper still for large gamma), so
  // refine geometrically toward it
  double acc = gauss_legendre_16(f, 0.0, 0.5 * kPi);
  double w = 0.5 * kPi;
  const double w_min =
      std::max(1e-7, 0.25 / (std::sqrt(absx * r) * std::sqrt(1.0 + gamma)));
  while (w > w_min) {
    acc += gauss_legendre_16(f, kPi - w, kPi - 0.5 * w);
    w *= 0.5;
  }
  acc += gauss_legendre_16(f, kPi - w, kPi);
  return acc;
}

}  // namespace

namespace {

// [a, b] by geometric panels shrinking toward one endpoint, for integrands
// whose variation scale collapses there (the (1+|x-r|)^{-gamma} spike at
// r = |x|). w_min caps the finest panel.
double refine_toward(const std::function<double(double)>& f, double a, double b, bool toward_b,
                     double w_min) {
  double acc = 0.0;
  double w = b - a;
  w_min = std::min(w_min, w);
  while (w > w_min) {
    acc += toward_b ? gauss_legendre_16(f, b - w, b - 0.5 * w)
                    : gauss_legendre_16(f, a + 0.5 * w, a + w);
    w *= 0.5;
  }
  acc += toward_b ? gauss_legendre_16(f, b - w, b) : gauss_legendre_16(f, a, a + w);
  return acc;
}

}  // namespace

double tail_integral(double gamma, double absx, const StableParams& prm) {
  prm.validate();
  require(absx >= 1.0, "tail_integral: need |x| >= 1");
  require(gamma >= 0.0, "tail_integral: gamma must be nonnegative");
  require(gamma != static_cast<double>(prm.d), "tail_integral: gamma = d is excluded");
  require(prm.d <= 2, "tail_integral: only d <= 2 is implemented");
  if (gamma > 1e6)
    throw NumericError("tail_integral: quadrature unreliable for gamma > 1e6");

  const double alpha = prm.alpha;
  const int d = prm.d;
  auto radial = [&](double r) {
    return std::pow(r, -1.0 - alpha) * angular_factor(gamma, absx, r, d);
  };
  // the (1+|x-r|)^{-gamma} factor varies on the scale 1/gamma around r = |x|
  const double w_kink = std::max(absx * 1e-12, 0.25 / std::max(gamma, 1.0));

  // geometric panels from |x|/4, with a refined breakpoint at r = |x| where
  // the d = 1 integrand has a kink; past the last panel the integrand is the
  // pure power S_d r^{-1-alpha-gamma}, added in closed form
  double total = 0.0;
  double lo = absx / 4.0;
  for (int panel = 0; panel < 400; ++panel) {
    double hi = lo * 2.0;
    double part;
    if (lo < absx && absx < hi) {
      part = refine_toward(radial, lo, absx, true, w_kink) +
             refine_toward(radial, absx, hi, false, w_kink);
    } else {
      part = gauss_legendre_16(radial, lo, hi);
    }
    total += part;
    lo = hi;
    if (part < 1e-14 * total && hi > 4.0 * absx) break;
  }
  const double sphere = d == 1 ? 2.0 : 2.0 * kPi;
  total += sphere * std::pow(lo, -(alpha + gamma)) / (alpha + gamma);
  if (!(total > 0.0) || !std::isfinite(total))
    throw NumericError("tail_integral: quadrature failed (gamma too large?)");
  return total;
}

TailEnvelope tail_envelope(double gamma, const StableParams& prm, std::vector<double> absx_grid) {
  if (absx_grid.empty()) absx_grid = {4.0, 8.0, 16.0, 32.0, 64.0, 128.0};
  require(absx_grid.size() >= 2, "tail_envelope: need at least two radii");

  TailEnvelope env;
  env.exponent = -std::min(gamma + prm.alpha, static_cast<double>(prm.d) + prm.alpha);
  env.absx = absx_grid;
  std::vector<double> lx, li;
  for (double ax : absx_grid) {
    double v = tail_integral(gamma, ax, prm);
    env.integral.push_back(v);
    env.C = std::max(env.C, v * std::pow(ax, -env.exponent));
    lx.push_back(std::log(ax));
    li.push_back(std::log(v));
  }
  env.slope = fit_line(lx, li)[1];
  return env;
}

std::string run_json(const std::string& op, const MCEstimate& est, const FKConfig& cfg,
                     double censored_fraction) {
  nlohmann::json j{{"op", op},
                   {"estimate", est.value},
                   {"stderr", est.std_err},
                   {"n", est.n_samples},
                   {"dt", cfg.dt},
                   {"seed", cfg.seed},
                   {"censored_fraction", censored_fraction}};
  return j.dump();
}

}  // namespace fkstable::fk
