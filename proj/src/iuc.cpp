#include "fkstable/iuc.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "json.hpp"

#include "fkstable/stable.hpp"

namespace fkstable::iuc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// inf over the annulus [R, 10R] (log-spaced samples plus declared kinks,
// both axis directions) of V and of V/log|x|.
struct AnnulusMin {
  double v = kInf;
  double ratio = kInf;
};

AnnulusMin annulus_min(const PotentialSpec& V, double R, int samples) {
  AnnulusMin out;
  std::vector<double> radii;
  radii.reserve(static_cast<std::size_t>(samples) + V.kinks().size() + 2);
  for (int j = 0; j <= samples; ++j)
    radii.push_back(R * std::pow(10.0, static_cast<double>(j) / samples));
  for (double k : V.kinks()) {
    double a = std::abs(k);
    if (a >= R && a <= 10.0 * R) radii.push_back(a);
  }
  for (double r : radii) {
    double lg = std::log(r);
    for (double sgn : {1.0, -1.0}) {
      double x = sgn * r;
      double val = V.evaluate(&x, 1);
      if (std::isnan(val)) continue;  // singular point exactly hit
      out.v = std::min(out.v, val);
      out.ratio = std::min(out.ratio, val / lg);
    }
  }
  return out;
}

bool declared_confining(const PotentialSpec& V) {
  switch (V.growth_class()) {
    case potentials::GrowthClass::kLogarithmic:  // param 0 = sub-log, still unbounded
    case potentials::GrowthClass::kPolynomial:
    case potentials::GrowthClass::kExponential:
      return true;
    default:
      return false;
  }
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  double det = n * sxx - sx * sx;
  if (!(det > 0.0)) throw NumericError("iuc: degenerate fit abscissae");
  return (n * sxy - sx * sy) / det;
}

}  // namespace

const char* iuc_class_name(IUCClass c) {
  switch (c) {
    case IUCClass::kIUC: return "IUC";
    case IUCClass::kAIUCOnly: return "AIUC_only";
    case IUCClass::kNotAIUC: return "not_AIUC";
    default: return "inconclusive";
  }
}

IUCVerdict classify(const PotentialSpec& V, std::vector<double> R_grid, const ClassifyOpts& opts) {
  if (R_grid.empty()) R_grid = {1e1, 1e2, 1e3, 1e4, 1e5, 1e6};
  const int W = opts.growth_decades;
  require(W >= 2, "classify: growth_decades must be >= 2");
  require(static_cast<int>(R_grid.size()) >= W + 1,
          "classify: R_grid needs at least growth_decades + 1 entries");
  for (std::size_t i = 0; i < R_grid.size(); ++i) {
    require(R_grid[i] > 1.0, "classify: R_grid entries must exceed 1");
    if (i) require(R_grid[i] > R_grid[i - 1], "classify: R_grid must be ascending");
  }
  require(opts.growth_factor > 1.0 && opts.decay_factor < 1.0 && opts.samples_per_decade >= 8,
          "classify: malformed thresholds");

  IUCVerdict out;
  out.R = R_grid;
  std::vector<double> v_min;
  for (double R : R_grid) {
    AnnulusMin am = annulus_min(V, R, opts.samples_per_decade);
    v_min.push_back(am.v);
    out.r.push_back(am.ratio);
  }

  // Precondition: V -> infinity, by declared class or by the annulus infima
  // rising across the grid.
  bool meta = declared_confining(V);
  bool numeric = v_min.back() >= v_min.front() + 0.5;
  for (std::size_t i = 0; numeric && i + 1 < v_min.size(); ++i)
    if (v_min[i + 1] < v_min[i] - 1e-9 * std::max(1.0, std::abs(v_min[i]))) numeric = false;
  out.evidence.push_back({"confining", meta || numeric, v_min.back()});
  if (!(meta || numeric))
    throw PreconditionError("classify: V does not confirm V(x) -> infinity on the R grid");

  const std::size_t n = out.r.size();
  const std::size_t tail0 = n - 1 - static_cast<std::size_t>(W);  // window start

  // Growth surrogate for r -> infinity.
  double ratio_min = kInf, ratio_max = -kInf;
  for (std::size_t i = tail0; i + 1 < n; ++i) {
    double q = (out.r[i] > 0.0) ? out.r[i + 1] / out.r[i] : -kInf;
    ratio_min = std::min(ratio_min, q);
    ratio_max = std::max(ratio_max, q);
  }
  bool grows = ratio_min >= opts.growth_factor;
  bool big = out.r.back() > opts.big_value;
  out.evidence.push_back({"growth_per_decade", grows, ratio_min});
  out.evidence.push_back({"r_max_large", big, out.r.back()});
  if (grows && big) {
    out.cls = IUCClass::kIUC;
    out.liminf_infinite = true;
    out.liminf_ratio = kInf;
    return out;
  }

  double tail_min = kInf;
  bool monotone_down = true;
  for (std::size_t i = tail0; i < n; ++i) {
    tail_min = std::min(tail_min, out.r[i]);
    if (i > tail0 && out.r[i] > out.r[i - 1] + 1e-12 * std::abs(out.r[i - 1]))
      monotone_down = false;
  }
  bool nonpositive = tail_min <= 0.0;
  double total_ratio = out.r[tail0] > 0.0 ? out.r.back() / out.r[tail0] : -kInf;
  bool decays = nonpositive ||
                (monotone_down && out.r.back() > 0.0 &&
                 total_ratio <= std::pow(opts.decay_factor, W));
  bool plateau = !decays && tail_min > 0.0 && ratio_min >= opts.decay_factor &&
                 ratio_max <= opts.plateau_ceiling &&
                 out.r.back() / tail_min <= std::pow(opts.plateau_ceiling, W);
  out.evidence.push_back({"tail_nonpositive", nonpositive, tail_min});
  out.evidence.push_back({"tail_decay", decays, total_ratio});
  out.evidence.push_back({"tail_plateau", plateau, ratio_min});

  if (!decays && !plateau) {
    out.cls = IUCClass::kInconclusive;  // growth too slow to resolve, or noise
    out.liminf_ratio = tail_min;
    return out;
  }

  // Both remaining verdicts lean on the necessity direction, valid for
  // potentials comparable on unit balls; probe that before claiming.
  double M = kNaN;
  bool comparable = false;
  try {
    M = potentials::comparability_constant(V, R_grid.front(), R_grid.back(), 49,
                                           std::max(3, opts.ball_samples));
    comparable = M <= opts.comparability_cap;
  } catch (const PreconditionError&) {
    comparable = false;  // V < 1 somewhere: no comparability statement
  }
  out.evidence.push_back({"comparable_unit_balls", comparable, M});
  if (!comparable) {
    out.cls = IUCClass::kInconclusive;
    out.liminf_ratio = tail_min;
    return out;
  }

  if (decays) {
    out.cls = IUCClass::kNotAIUC;
    out.liminf_ratio = std::min(0.0, tail_min);
  } else {
    out.cls = IUCClass::kAIUCOnly;
    out.liminf_ratio = tail_min;
  }
  return out;
}

TailBoundScan tail_bound_scan(const SpectralModel& m, double t) {
  require(!m.eigenvalues.empty(), "tail_bound_scan: model has no modes");
  require(t >= m.t_min(), "tail_bound_scan: t below the model's t_min");
  const std::size_t total = m.grid.total();
  const int nm = m.n_modes();
  const int nm_half = std::max(1, nm / 2);
  const double hd = std::pow(m.grid.h(), m.grid.d);

  std::vector<double> coef(nm);  // e^{-lambda_k t} <phi_k, 1>
  for (int k = 0; k < nm; ++k) {
    const double* ph = m.mode(k);
    KahanSum s;
    for (std::size_t j = 0; j < total; ++j) s.add(ph[j]);
    coef[k] = std::exp(-m.eigenvalues[k] * t) * hd * s.get();
  }

  TailBoundScan out;
  out.sup = -kInf;
  out.absx.resize(total);
  out.weighted.resize(total);
  double sup_half = -kInf;
  std::vector<double> xb(m.grid.d);
  const double expo = m.grid.d + m.prm.alpha;
  for (std::size_t j = 0; j < total; ++j) {
    double full = 0.0, half = 0.0;
    for (int k = 0; k < nm; ++k) {
      double term = coef[k] * m.mode(k)[j];
      full += term;
      if (k < nm_half) half += term;
    }
    m.grid.point(j, xb.data());
    double r2 = 0.0;
    for (double c : xb) r2 += c * c;
    double absx = std::sqrt(r2);
    double w = std::pow(1.0 + absx, expo);
    out.absx[j] = absx;
    out.weighted[j] = full * w;
    if (out.weighted[j] > out.sup) {
      out.sup = out.weighted[j];
      out.arg_abs_x = absx;
    }
    sup_half = std::max(sup_half, half * w);
  }
  out.m_sensitivity = std::abs(out.sup - sup_half) / std::max(std::abs(out.sup), 1e-300);
  out.truncation_flagged = out.m_sensitivity > 0.1;
  return out;
}

UniformScan uniform_convergence_scan(const SpectralModel& m, const std::vector<double>& t_grid,
                                     double floor_frac) {
  require(m.n_modes() >= 2, "uniform_convergence_scan: need at least two modes");
  require(t_grid.size() >= 2, "uniform_convergence_scan: need at least two times");
  require(floor_frac > 0.0 && floor_frac < 1.0, "uniform_convergence_scan: floor_frac in (0,1)");
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    require(t_grid[i] >= m.t_min(), "uniform_convergence_scan: t below the model's t_min");
    if (i) require(t_grid[i] > t_grid[i - 1], "uniform_convergence_scan: t_grid must ascend");
  }

  const std::size_t total = m.grid.total();
  const double floor = floor_frac * m.phi0_max();
  std::vector<std::size_t> idx;
  double mass = 0.0;
  const double hd = std::pow(m.grid.h(), m.grid.d);
  for (std::size_t j = 0; j < total; ++j) {
    if (m.phi0(j) >= floor) {
      idx.push_back(j);
      mass += m.phi0(j) * m.phi0(j);
    }
  }
  require(idx.size() >= 2, "uniform_convergence_scan: floor region empty");

  UniformScan out;
  out.gap = m.gap();
  out.retained_mass = mass * hd;  // phi0 is h-normalized, so this is in [0,1]
  out.retained_points = idx.size();
  out.floor_flagged = out.retained_mass < 0.5;

  // Pair scan cost is quadratic; thin the retained set evenly if large.
  const std::size_t cap = 1536;
  if (idx.size() > cap) {
    std::vector<std::size_t> thin;
    thin.reserve(cap);
    for (std::size_t i = 0; i < cap; ++i) thin.push_back(idx[i * idx.size() / cap]);
    idx.swap(thin);
  }
  const std::size_t P = idx.size();
  const int nm = m.n_modes();
  std::vector<double> psi(static_cast<std::size_t>(nm - 1) * P);  // phi_k/phi0
  for (int k = 1; k < nm; ++k)
    for (std::size_t i = 0; i < P; ++i)
      psi[(k - 1) * P + i] = m.mode(k)[idx[i]] / m.phi0(idx[i]);

  out.t = t_grid;
  out.s.resize(t_grid.size());
  std::vector<double> a(nm - 1);
  for (std::size_t ti = 0; ti < t_grid.size(); ++ti) {
    for (int k = 1; k < nm; ++k)
      a[k - 1] = std::exp(-(m.eigenvalues[k] - m.eigenvalues[0]) * t_grid[ti]);
    double worst = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
      for (std::size_t j = i; j < P; ++j) {
        double dev = 0.0;
        for (int k = 0; k < nm - 1; ++k) dev += a[k] * psi[k * P + i] * psi[k * P + j];
        worst = std::max(worst, std::abs(dev));
      }
    }
    out.s[ti] = worst;
  }

  std::vector<double> tf, lf;
  for (std::size_t i = 0; i < out.s.size(); ++i) {
    if (out.s[i] > 0.0) {
      tf.push_back(out.t[i]);
      lf.push_back(std::log(out.s[i]));
    }
  }
  if (tf.size() < 2) throw NumericError("uniform_convergence_scan: s(t) vanished; nothing to fit");
  out.rate = -fit_slope(tf, lf);
  return out;
}

SurvivalRatio survival_ratio_test(const PotentialSpec& V, const StableParams& prm, double t,
                                  const Ball& D, const std::vector<double>& x_grid,
                                  const FKConfig& cfg) {
  prm.validate();
  cfg.validate();
  require(t > 0.0, "survival_ratio_test: t must be positive");
  require(D.radius > 0.0 && static_cast<int>(D.center.size()) == prm.d,
          "survival_ratio_test: ball dimension mismatch");
  require(!x_grid.empty() && x_grid.size() % static_cast<std::size_t>(prm.d) == 0,
          "survival_ratio_test: x_grid must be nonempty with stride d");

  const int d = prm.d;
  const std::size_t n_x = x_grid.size() / static_cast<std::size_t>(d);
  const std::uint64_t m_steps =
      std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(t / cfg.dt - 1e-9)));
  const double cap = cfg.v_cap;

  SurvivalRatio out;
  out.entries.resize(n_x);
  for (std::size_t ix = 0; ix < n_x; ++ix) {
    const double* x0 = x_grid.data() + ix * static_cast<std::size_t>(d);
    ChunkPlan plan{cfg.n_paths, cfg.chunk_size, cfg.seed, cfg.threads};
    auto chunks = run_chunked(plan, [&](std::uint64_t, std::uint64_t n, RngStream& rng) {
      // {sum_in, sq_in, count, sum_out, sq_out, caps, blowups}
      std::vector<double> acc(7, 0.0);
      std::vector<double> pos(d), step(d);
      for (std::uint64_t p = 0; p < n; ++p) {
        std::memcpy(pos.data(), x0, sizeof(double) * static_cast<std::size_t>(d));
        double v_prev = V.evaluate(pos.data(), d);
        double I = 0.0;
        bool blew = false;
        for (std::uint64_t k = 1; k <= m_steps; ++k) {
          double tk = std::min(static_cast<double>(k) * cfg.dt, t);
          double dt_k = tk - std::min(static_cast<double>(k - 1) * cfg.dt, t);
          stable::sample_increment(prm, dt_k, rng, step.data());
          for (int c = 0; c < d; ++c) pos[c] += step[c];
          double v_now = V.evaluate(pos.data(), d);
          double a = v_prev, b = v_now;
          if (cap > 0.0) {
            if (!(std::abs(a) <= cap)) { a = std::copysign(cap, a); acc[5] += 1.0; }
            if (!(std::abs(b) <= cap)) { b = std::copysign(cap, b); acc[5] += 1.0; }
          }
          I += 0.5 * (a + b) * dt_k;
          v_prev = v_now;
          if (-I > 700.0) { blew = true; break; }
        }
        if (blew) { acc[6] += 1.0; continue; }
        double w = std::exp(-I);
        if (D.contains(pos.data(), d)) {
          acc[0] += w;
          acc[1] += w * w;
        } else {
          acc[3] += w;
          acc[4] += w * w;
        }
        acc[2] += 1.0;
      }
      return acc;
    });

    double s_in = 0, q_in = 0, cnt = 0, s_out = 0, q_out = 0, caps = 0, blow = 0;
    for (const auto& c : chunks) {
      s_in += c[0];
      q_in += c[1];
      cnt += c[2];
      s_out += c[3];
      q_out += c[4];
      caps += c[5];
      blow += c[6];
    }
    if (blow > 0.0)
      throw NumericError("survival_ratio_test: mass blowup, exp(-int V ds) exceeded e^700");
    out.cap_hits += static_cast<std::uint64_t>(caps);

    SurvivalEntry& e = out.entries[ix];
    e.x.assign(x0, x0 + d);
    auto moments = [&](double s, double q) {
      MCEstimate est;
      est.n_samples = static_cast<std::uint64_t>(cnt);
      est.value = s / cnt;
      double var = std::max(0.0, (q - cnt * est.value * est.value) / (cnt - 1.0));
      est.std_err = std::sqrt(var / cnt);
      return est;
    };
    e.inside = moments(s_in, q_in);
    e.outside = moments(s_out, q_out);

    if (e.inside.value <= 3.0 * e.inside.std_err) {
      e.lower_bound_only = true;
      double den = e.inside.value + 3.0 * e.inside.std_err;
      if (den <= 0.0) den = 3.0 / cnt;  // rule of three: zero observed inside-mass
      e.ratio = std::max(0.0, e.outside.value - 3.0 * e.outside.std_err) / den;
      e.ratio_se = 0.0;
    } else {
      double abar = e.inside.value, bbar = e.outside.value;
      e.ratio = bbar / abar;
      // Delta method with the (negative) sample covariance of the disjoint
      // indicator weights: cov = -n abar bbar / (n-1).
      double va = e.inside.std_err * e.inside.std_err * cnt;
      double vb = e.outside.std_err * e.outside.std_err * cnt;
      double cab = -cnt * abar * bbar / (cnt - 1.0);
      double rel = va / (abar * abar) + vb / (bbar * bbar) - 2.0 * cab / (abar * bbar);
      e.ratio_se = std::abs(e.ratio) * std::sqrt(std::max(0.0, rel) / cnt);
    }
    if (ix == 0 || e.ratio > out.max_ratio) {
      out.max_ratio = e.ratio;
      out.max_ratio_se = e.ratio_se;
      out.argmax = ix;
      out.argmax_lower_bound_only = e.lower_bound_only;
    }
  }
  return out;
}

std::string verdict_json(const IUCVerdict& v) {
  nlohmann::json j;
  j["class"] = iuc_class_name(v.cls);
  j["liminf_infinite"] = v.liminf_infinite;
  if (std::isfinite(v.liminf_ratio))
    j["liminf_ratio"] = v.liminf_ratio;
  else
    j["liminf_ratio"] = v.liminf_infinite ? "+inf" : "nan";
  nlohmann::json ev = nlohmann::json::array();
  for (const auto& e : v.evidence) {
    nlohmann::json item;
    item["name"] = e.name;
    item["pass"] = e.pass;
    if (std::isfinite(e.value))
      item["value"] = e.value;
    else
      item["value"] = nullptr;
    ev.push_back(item);
  }
  j["evidence"] = ev;
  return j.dump(2);
}

}  // namespace fkstable::iuc
