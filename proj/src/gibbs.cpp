#include "fkstable/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fkstable::gibbs {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kRowTol = 1e-6;        // raw row-sum defect budget
constexpr double kStationaryTol = 1e-6; // ||rho P - rho||_1 after renorm
constexpr double kReversibilityTol = 1e-8;
constexpr double kNegEntryTol = 1e-8;   // most negative raw entry tolerated
constexpr double kKernelFloor = 1e-8;   // Z_T floor in intrinsic units
constexpr double kProbSlack = 1e-9;     // clamp slack for kernel probabilities
constexpr double kGapSlack = 1e-12;
constexpr double kSummableSlope = -1.05;

// Retained-region view of a model: modes restricted to nodes with phi0 above
// its floor, plus the shifted kernel u_hat(t) = e^{lambda_0 t} u(t) whose mode
// weights e^{-(lambda_k - lambda_0) t} never overflow.
struct Ops {
  const SpectralModel* m = nullptr;
  std::vector<std::size_t> idx;
  std::vector<double> coord;
  std::vector<double> phi;  // k-major: phi[k*n + i] = phi_k at retained node i
  std::vector<double> lam;
  double h = 0.0;
  std::size_t n = 0;
  int nm = 0;

  double phi0(std::size_t i) const { return phi[i]; }

  explicit Ops(const SpectralModel& model) : m(&model) {
    require(model.grid.d == 1, "gibbs: one-dimensional models only");
    require(model.n_modes() >= 2, "gibbs: need at least two modes");
    const double floor = model.phi0_floor();
    const std::size_t total = model.grid.total();
    for (std::size_t i = 0; i < total; ++i)
      if (model.phi0(i) >= floor) idx.push_back(i);
    require(idx.size() >= 8, "gibbs: retained region is degenerate");
    n = idx.size();
    nm = model.n_modes();
    h = model.grid.h();
    coord.resize(n);
    for (std::size_t i = 0; i < n; ++i) coord[i] = model.grid.coord(static_cast<int>(idx[i]));
    lam = model.eigenvalues;
    phi.resize(static_cast<std::size_t>(nm) * n);
    for (int k = 0; k < nm; ++k) {
      const double* mk = model.mode(k);
      for (std::size_t i = 0; i < n; ++i) phi[static_cast<std::size_t>(k) * n + i] = mk[idx[i]];
    }
  }

  std::size_t nearest(double x, const char* who) const {
    require(std::isfinite(x), std::string(who) + ": point is not finite");
    auto it = std::lower_bound(coord.begin(), coord.end(), x);
    std::size_t j = static_cast<std::size_t>(it - coord.begin());
    if (j == n || (j > 0 && x - coord[j - 1] < coord[j] - x)) --j;
    require(std::abs(coord[j] - x) <= 0.5 * h + 1e-9,
            std::string(who) + ": point lies outside the retained grid");
    return j;
  }

  // v_j = u_hat(dt, node i0, j), no h weight at either end
  std::vector<double> point_vec(std::size_t i0, double dt) const {
    std::vector<double> v(n, 0.0);
    for (int k = 0; k < nm; ++k) {
      const double* pk = phi.data() + static_cast<std::size_t>(k) * n;
      double c = std::exp(-(lam[k] - lam[0]) * dt) * pk[i0];
      for (std::size_t j = 0; j < n; ++j) v[j] += c * pk[j];
    }
    return v;
  }

  // v <- integral u_hat(dt, ., y) v(y) h dy over the retained nodes
  void propagate(std::vector<double>& v, double dt) const {
    std::vector<double> out(n, 0.0);
    for (int k = 0; k < nm; ++k) {
      const double* pk = phi.data() + static_cast<std::size_t>(k) * n;
      KahanSum ip;
      for (std::size_t j = 0; j < n; ++j) ip.add(pk[j] * v[j]);
      double c = std::exp(-(lam[k] - lam[0]) * dt) * h * ip.get();
      for (std::size_t j = 0; j < n; ++j) out[j] += c * pk[j];
    }
    v = std::move(out);
  }

  void apply_band(std::vector<double>& v, const std::pair<double, double>& band) const {
    for (std::size_t j = 0; j < n; ++j)
      if (coord[j] < band.first || coord[j] > band.second) v[j] = 0.0;
  }

  double u_hat(double dt, std::size_t i, std::size_t j) const {
    KahanSum s;
    for (int k = 0; k < nm; ++k) {
      const double* pk = phi.data() + static_cast<std::size_t>(k) * n;
      s.add(std::exp(-(lam[k] - lam[0]) * dt) * pk[i] * pk[j]);
    }
    return s.get();
  }
};

void validate_event(const CylinderEvent& ev, const char* who) {
  require(ev.bands.size() == ev.times.size(),
          std::string(who) + ": one interval per event time required");
  for (std::size_t i = 0; i < ev.times.size(); ++i) {
    require(std::isfinite(ev.times[i]), std::string(who) + ": event time is not finite");
    if (i > 0)
      require(ev.times[i] > ev.times[i - 1], std::string(who) + ": event times must increase");
    require(ev.bands[i].first <= ev.bands[i].second && std::isfinite(ev.bands[i].first) &&
                std::isfinite(ev.bands[i].second),
            std::string(who) + ": malformed event interval");
  }
}

void check_gaps(const std::vector<double>& times, double t_min, const char* who) {
  for (std::size_t i = 1; i < times.size(); ++i)
    if (times[i] - times[i - 1] < t_min - kGapSlack) {
      std::ostringstream os;
      os << who << ": gap " << (times[i] - times[i - 1]) << " between times " << times[i - 1]
         << " and " << times[i] << " is below t_min = " << t_min;
      throw PreconditionError(os.str());
    }
}

// Chain the hat-kernel through the event indicators: v starts as the value at
// the initial time (already indicator-filtered if needed), gaps[i] separates
// band i-1 from band i.
void chain_bands(const Ops& ops, std::vector<double>& v, const CylinderEvent& ev,
                 std::size_t first_band, double lead_gap) {
  for (std::size_t i = first_band; i < ev.times.size(); ++i) {
    double gap = (i == first_band) ? lead_gap : ev.times[i] - ev.times[i - 1];
    ops.propagate(v, gap);
    ops.apply_band(v, ev.bands[i]);
  }
}

double clamp_probability(double p, const char* who) {
  if (!(p >= -kProbSlack && p <= 1.0 + kProbSlack)) {
    std::ostringstream os;
    os << who << ": value " << p << " leaves [0,1] beyond slack; mode truncation too coarse";
    throw NumericError(os.str());
  }
  return std::min(1.0, std::max(0.0, p));
}

std::size_t sample_cdf(const std::vector<double>& cdf, std::size_t begin, std::size_t len,
                       double u) {
  const double* b = cdf.data() + begin;
  return static_cast<std::size_t>(std::upper_bound(b, b + len, u) - b);
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

std::size_t PPhi1Chain::node_near(double x) const {
  require(!coord.empty(), "node_near: chain not built");
  require(std::isfinite(x), "node_near: point is not finite");
  auto it = std::lower_bound(coord.begin(), coord.end(), x);
  std::size_t j = static_cast<std::size_t>(it - coord.begin());
  if (j == coord.size() || (j > 0 && x - coord[j - 1] < coord[j] - x)) --j;
  double h = model ? model->grid.h() : 0.0;
  require(std::abs(coord[j] - x) <= 0.5 * h + 1e-9, "node_near: point outside the retained grid");
  return j;
}

PPhi1Chain build_chain(const SpectralModel& m, double t_unit) {
  require(std::isfinite(t_unit) && t_unit > 0.0, "build_chain: t_unit must be positive");
  require(t_unit >= m.t_min() - kGapSlack,
          "build_chain: t_unit below t_min; kernel positivity is not certified there");
  Ops ops(m);
  const std::size_t n = ops.n;
  const int nm = ops.nm;

  PPhi1Chain c;
  c.model = &m;
  c.t_unit = t_unit;
  c.idx = ops.idx;
  c.coord = ops.coord;

  // S_ij = u~(t, i, j) via the half-step factor B_ik = psi_k(i) e^{-gap_k t/2}
  std::vector<double> B(n * static_cast<std::size_t>(nm));
  for (std::size_t i = 0; i < n; ++i) {
    double p0 = ops.phi0(i);
    for (int k = 0; k < nm; ++k)
      B[i * nm + k] =
          ops.phi[static_cast<std::size_t>(k) * n + i] / p0 * std::exp(-(ops.lam[k] - ops.lam[0]) * 0.5 * t_unit);
  }
  std::vector<double> w(n);  // unnormalized stationary weights phi0^2 h
  double w_total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    w[j] = ops.phi0(j) * ops.phi0(j) * ops.h;
    w_total += w[j];
  }

  c.P.assign(n * n, 0.0);
  double worst_defect = 0.0;
  std::size_t worst_row = 0;
  double min_entry = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = c.P.data() + i * n;
    const double* bi = B.data() + i * nm;
    KahanSum rs;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = B.data() + j * nm;
      double s = 0.0;
      for (int k = 0; k < nm; ++k) s += bi[k] * bj[k];
      double pij = s * w[j];
      row[j] = pij;
      rs.add(pij);
      min_entry = std::min(min_entry, pij);
    }
    double defect = std::abs(rs.get() - 1.0);
    if (defect > worst_defect) {
      worst_defect = defect;
      worst_row = i;
    }
  }
  c.row_defect = worst_defect;
  c.min_entry = min_entry;
  if (worst_defect > kRowTol) {
    std::ostringstream os;
    os << "build_chain: raw row sum defect " << worst_defect << " at node x = "
       << c.coord[worst_row] << " exceeds " << kRowTol;
    throw NumericError(os.str());
  }
  if (min_entry < -kNegEntryTol) {
    std::ostringstream os;
    os << "build_chain: kernel entry " << min_entry << " is negative beyond tolerance at t_unit = "
       << t_unit;
    throw NumericError(os.str());
  }

  // exact renormalization: clamp the (tiny) negative dust, divide by row sums,
  // park the fp residual on the row maximum
  for (std::size_t i = 0; i < n; ++i) {
    double* row = c.P.data() + i * n;
    KahanSum rs;
    for (std::size_t j = 0; j < n; ++j) {
      if (row[j] < 0.0) row[j] = 0.0;
      rs.add(row[j]);
    }
    double r = rs.get();
    std::size_t jmax = 0;
    KahanSum after;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] /= r;
      after.add(row[j]);
      if (row[j] > row[jmax]) jmax = j;
    }
    row[jmax] += 1.0 - after.get();
  }

  c.rho.resize(n);
  KahanSum rho_sum;
  std::size_t rho_max = 0;
  for (std::size_t j = 0; j < n; ++j) {
    c.rho[j] = w[j] / w_total;
    rho_sum.add(c.rho[j]);
    if (c.rho[j] > c.rho[rho_max]) rho_max = j;
  }
  c.rho[rho_max] += 1.0 - rho_sum.get();

  double stat = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    KahanSum col;
    for (std::size_t i = 0; i < n; ++i) col.add(c.rho[i] * c.P[i * n + j]);
    stat += std::abs(col.get() - c.rho[j]);
  }
  c.stationarity_defect = stat;
  if (stat > kStationaryTol) {
    std::ostringstream os;
    os << "build_chain: ||rho P - rho||_1 = " << stat << " exceeds " << kStationaryTol;
    throw NumericError(os.str());
  }

  double rev = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      rev = std::max(rev, std::abs(c.rho[i] * c.P[i * n + j] - c.rho[j] * c.P[j * n + i]));
  c.reversibility_defect = rev;
  if (rev > kReversibilityTol) {
    std::ostringstream os;
    os << "build_chain: detailed balance defect " << rev << " exceeds " << kReversibilityTol;
    throw NumericError(os.str());
  }

  c.cdf.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    KahanSum acc;
    for (std::size_t j = 0; j < n; ++j) {
      acc.add(c.P[i * n + j]);
      c.cdf[i * n + j] = acc.get();
    }
    c.cdf[i * n + n - 1] = 1.0;
  }
  return c;
}

double composition_defect(const SpectralModel& m, double t1, double t2) {
  PPhi1Chain a = build_chain(m, t1);
  PPhi1Chain b = build_chain(m, t2);
  PPhi1Chain ab = build_chain(m, t1 + t2);
  const std::size_t n = a.n();
  double worst = 0.0;
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    const double* ai = a.P.data() + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b.P.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aik * bk[j];
    }
    const double* ci = ab.P.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, std::abs(row[j] - ci[j]));
  }
  return worst;
}

PathSkeleton sample_path(const PPhi1Chain& c, int n_minus, int n_plus,
                         const std::vector<double>& start, RngStream& rng) {
  require(c.model != nullptr && !c.P.empty(), "sample_path: chain not built");
  require(n_minus >= 0 && n_plus >= 0, "sample_path: negative horizon");
  const std::size_t n = c.n();

  std::size_t s0;
  if (start.empty()) {
    std::vector<double> rho_cdf(n);
    KahanSum acc;
    for (std::size_t j = 0; j < n; ++j) {
      acc.add(c.rho[j]);
      rho_cdf[j] = acc.get();
    }
    rho_cdf[n - 1] = 1.0;
    s0 = sample_cdf(rho_cdf, 0, n, rng.uniform());
  } else {
    require(start.size() == 1, "sample_path: start must be a single coordinate (d = 1)");
    s0 = c.node_near(start[0]);
  }

  PathSkeleton path;
  path.d = 1;
  const std::size_t len = static_cast<std::size_t>(n_minus) + static_cast<std::size_t>(n_plus) + 1;
  path.times.resize(len);
  path.pos.resize(len);
  for (std::size_t i = 0; i < len; ++i)
    path.times[i] = (static_cast<double>(i) - n_minus) * c.t_unit;
  path.pos[static_cast<std::size_t>(n_minus)] = c.coord[s0];

  // forward then backward, independent given the start (detailed balance makes
  // the backward kernel equal to P)
  std::size_t cur = s0;
  for (int s = 1; s <= n_plus; ++s) {
    cur = sample_cdf(c.cdf, cur * n, n, rng.uniform());
    path.pos[static_cast<std::size_t>(n_minus + s)] = c.coord[cur];
  }
  cur = s0;
  for (int s = 1; s <= n_minus; ++s) {
    cur = sample_cdf(c.cdf, cur * n, n, rng.uniform());
    path.pos[static_cast<std::size_t>(n_minus - s)] = c.coord[cur];
  }
  return path;
}

double gibbs_kernel(const GibbsWindow& w, const SpectralModel& m, const CylinderEvent& ev) {
  require(std::isfinite(w.T) && w.T > 0.0, "gibbs_kernel: window half-width must be positive");
  validate_event(ev, "gibbs_kernel");
  Ops ops(m);
  std::size_t il = ops.nearest(w.left, "gibbs_kernel");
  std::size_t ir = ops.nearest(w.right, "gibbs_kernel");

  std::vector<double> times;
  times.push_back(-w.T);
  for (double t : ev.times) {
    require(t > -w.T && t < w.T, "gibbs_kernel: event time outside the window");
    times.push_back(t);
  }
  times.push_back(w.T);
  check_gaps(times, m.t_min(), "gibbs_kernel");

  double z_hat = ops.u_hat(2.0 * w.T, il, ir);
  double z_tilde = z_hat / (ops.phi0(il) * ops.phi0(ir));
  if (!(z_tilde > kKernelFloor)) {
    std::ostringstream os;
    os << "gibbs_kernel: Z_T at the kernel floor (u~(2T) = " << z_tilde
       << "); boundary too deep in the tail for this window";
    throw NumericError(os.str());
  }
  if (ev.times.empty()) return 1.0;

  std::vector<double> v = ops.point_vec(il, ev.times.front() + w.T);
  ops.apply_band(v, ev.bands.front());
  chain_bands(ops, v, ev, 1, ev.times.size() > 1 ? ev.times[1] - ev.times[0] : 0.0);
  ops.propagate(v, w.T - ev.times.back());
  return clamp_probability(v[ir] / z_hat, "gibbs_kernel");
}

double stationary_measure(const SpectralModel& m, const CylinderEvent& ev) {
  validate_event(ev, "stationary_measure");
  if (ev.times.empty()) return 1.0;
  check_gaps(ev.times, m.t_min(), "stationary_measure");
  Ops ops(m);

  std::vector<double> v(ops.n);
  for (std::size_t i = 0; i < ops.n; ++i) v[i] = ops.phi0(i);
  ops.apply_band(v, ev.bands.front());
  chain_bands(ops, v, ev, 1, ev.times.size() > 1 ? ev.times[1] - ev.times[0] : 0.0);
  KahanSum mu;
  for (std::size_t i = 0; i < ops.n; ++i) mu.add(v[i] * ops.phi0(i));
  return clamp_probability(ops.h * mu.get(), "stationary_measure");
}

namespace {

// Merge coincident times (within 1e-12) by intersecting their intervals.
CylinderEvent merge_events(const CylinderEvent& a, const CylinderEvent& b) {
  struct Entry {
    double t;
    std::pair<double, double> band;
  };
  std::vector<Entry> all;
  for (std::size_t i = 0; i < a.times.size(); ++i) all.push_back({a.times[i], a.bands[i]});
  for (std::size_t i = 0; i < b.times.size(); ++i) all.push_back({b.times[i], b.bands[i]});
  std::sort(all.begin(), all.end(), [](const Entry& x, const Entry& y) { return x.t < y.t; });
  CylinderEvent out;
  for (const Entry& e : all) {
    if (!out.times.empty() && e.t - out.times.back() < 1e-12) {
      out.bands.back().first = std::max(out.bands.back().first, e.band.first);
      out.bands.back().second = std::min(out.bands.back().second, e.band.second);
      if (out.bands.back().first > out.bands.back().second) {
        // empty intersection: a valid band no grid node can hit
        out.bands.back() = {1e300, 1e300};
      }
    } else {
      out.times.push_back(e.t);
      out.bands.push_back(e.band);
    }
  }
  return out;
}

// Split a band event at +-S: strictly-left times, strictly-right times, and
// indicators sitting exactly on a split point.
struct BandSplit {
  CylinderEvent left, right;
  std::vector<std::pair<double, double>> at_minus_s, at_plus_s;
};

BandSplit split_band(const CylinderEvent& band, double S, double T) {
  BandSplit out;
  for (std::size_t i = 0; i < band.times.size(); ++i) {
    double t = band.times[i];
    require((t >= -T - kGapSlack && t <= -S + kGapSlack) || (t >= S - kGapSlack && t <= T + kGapSlack),
            "dlr_check: band event time outside [-T,-S] u [S,T]");
    if (std::abs(t + S) < 1e-12)
      out.at_minus_s.push_back(band.bands[i]);
    else if (std::abs(t - S) < 1e-12)
      out.at_plus_s.push_back(band.bands[i]);
    else if (t < -S) {
      out.left.times.push_back(t);
      out.left.bands.push_back(band.bands[i]);
    } else {
      out.right.times.push_back(t);
      out.right.bands.push_back(band.bands[i]);
    }
  }
  return out;
}

}  // namespace

DlrReport dlr_check(const SpectralModel& m, double S, double T,
                    const std::vector<EventPair>& pairs) {
  require(std::isfinite(S) && std::isfinite(T) && 0.0 < S && S < T,
          "dlr_check: need 0 < S < T");
  require(!pairs.empty(), "dlr_check: no event pairs given");
  Ops ops(m);
  const std::size_t n = ops.n;
  const double t_min = m.t_min();

  // u_hat(2S) over all retained pairs, via the half-step factor
  std::vector<double> B(n * static_cast<std::size_t>(ops.nm));
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < ops.nm; ++k)
      B[i * ops.nm + k] = ops.phi[static_cast<std::size_t>(k) * n + i] *
                          std::exp(-(ops.lam[k] - ops.lam[0]) * S);
  std::vector<double> U(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < ops.nm; ++k) s += B[i * ops.nm + k] * B[j * ops.nm + k];
      U[i * n + j] = s;
    }

  DlrReport rep;
  std::vector<double> K(n * n);
  for (const EventPair& pair : pairs) {
    validate_event(pair.inner, "dlr_check");
    validate_event(pair.band, "dlr_check");
    for (double t : pair.inner.times)
      require(t > -S && t < S, "dlr_check: inner event time outside (-S, S)");
    BandSplit bs = split_band(pair.band, S, T);

    // every split-chain gap must clear t_min (this refines the joint chain, so
    // the merged evaluation below is covered too)
    std::vector<double> split_times = bs.left.times;
    split_times.push_back(-S);
    for (double t : pair.inner.times) split_times.push_back(t);
    split_times.push_back(S);
    for (double t : bs.right.times) split_times.push_back(t);
    check_gaps(split_times, t_min, "dlr_check");

    // LHS: one joint chain through A n B
    double lhs = stationary_measure(m, merge_events(pair.inner, pair.band));

    // RHS: band chains stopped at -S and +S
    std::vector<double> vl(n), vr(n);
    for (std::size_t i = 0; i < n; ++i) vl[i] = vr[i] = ops.phi0(i);
    if (!bs.left.times.empty()) {
      ops.apply_band(vl, bs.left.bands.front());
      chain_bands(ops, vl, bs.left, 1,
                  bs.left.times.size() > 1 ? bs.left.times[1] - bs.left.times[0] : 0.0);
      ops.propagate(vl, -S - bs.left.times.back());
    }
    for (const auto& band : bs.at_minus_s) ops.apply_band(vl, band);
    if (!bs.right.times.empty()) {
      // mirror: chain from +T downward, kernels are symmetric in time
      CylinderEvent rev;
      for (std::size_t i = bs.right.times.size(); i-- > 0;) {
        rev.times.push_back(-bs.right.times[i]);
        rev.bands.push_back(bs.right.bands[i]);
      }
      ops.apply_band(vr, rev.bands.front());
      chain_bands(ops, vr, rev, 1, rev.times.size() > 1 ? rev.times[1] - rev.times[0] : 0.0);
      ops.propagate(vr, -S - rev.times.back());
    }
    for (const auto& band : bs.at_plus_s) ops.apply_band(vr, band);

    // conditional kernel K_A(i, j) from (-S, i) to (S, j) through the inner
    // indicators, divided by u_hat(2S) and multiplied back entry by entry:
    // the division is the point of the check, do not cancel it algebraically
    if (pair.inner.times.empty()) {
      std::fill(K.begin(), K.end(), 1.0);
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v = ops.point_vec(i, pair.inner.times.front() + S);
        ops.apply_band(v, pair.inner.bands.front());
        chain_bands(ops, v, pair.inner, 1,
                    pair.inner.times.size() > 1 ? pair.inner.times[1] - pair.inner.times[0] : 0.0);
        ops.propagate(v, S - pair.inner.times.back());
        for (std::size_t j = 0; j < n; ++j) {
          double u = U[i * n + j];
          K[i * n + j] = (u > 1e-300) ? v[j] / u : 0.0;
        }
      }
    }

    KahanSum acc;
    for (std::size_t i = 0; i < n; ++i) {
      if (vl[i] == 0.0) continue;
      KahanSum inner_sum;
      for (std::size_t j = 0; j < n; ++j)
        inner_sum.add(U[i * n + j] * K[i * n + j] * vr[j]);
      acc.add(vl[i] * inner_sum.get());
    }
    double rhs = acc.get() * ops.h * ops.h;

    rep.lhs.push_back(lhs);
    rep.rhs.push_back(rhs);
    rep.max_discrepancy = std::max(rep.max_discrepancy, std::abs(lhs - rhs));
  }
  return rep;
}

BoundaryProfile profile_constant(double c) {
  return [c](double) { return c; };
}

BoundaryProfile profile_power(double c, double p) {
  return [c, p](double N) { return (N < 0 ? -c : c) * std::pow(std::abs(N), p); };
}

BoundaryProfile profile_exponential(double c) {
  return [c](double N) { return (N < 0 ? -1.0 : 1.0) * std::exp(c * std::abs(N)); };
}

BoundaryCurve boundary_convergence(const SpectralModel& m, double T, const BoundaryProfile& prof,
                                   const CylinderEvent& ev, const std::vector<double>& N_grid) {
  require(std::isfinite(T) && T > 0.0, "boundary_convergence: T must be positive");
  require(!N_grid.empty(), "boundary_convergence: empty N grid");
  validate_event(ev, "boundary_convergence");
  for (double t : ev.times)
    require(t > -T && t < T, "boundary_convergence: event time outside (-T, T)");
  for (std::size_t i = 0; i < N_grid.size(); ++i) {
    require(N_grid[i] > T, "boundary_convergence: every N must exceed the event horizon T");
    if (i > 0) require(N_grid[i] > N_grid[i - 1], "boundary_convergence: N grid must increase");
  }

  Ops ops(m);
  BoundaryCurve curve;
  curve.N = N_grid;
  curve.mu_limit = stationary_measure(m, ev);

  // probe pairs for the kernel-ratio diagnostic, taken in the core of the well
  const std::size_t pa = ops.nearest(-1.0, "boundary_convergence");
  const std::size_t pb = ops.nearest(0.0, "boundary_convergence");
  const std::size_t pc = ops.nearest(1.0, "boundary_convergence");
  const std::pair<std::size_t, std::size_t> probes[3] = {{pa, pb}, {pb, pc}, {pa, pc}};

  for (double N : N_grid) {
    double mu = kNaN, dev = kNaN;
    std::string status = "ok";
    try {
      GibbsWindow w{N, prof(-N), prof(N)};
      mu = gibbs_kernel(w, m, ev);
      std::size_t il = ops.nearest(w.left, "boundary_convergence");
      std::size_t ir = ops.nearest(w.right, "boundary_convergence");
      double denom = ops.u_hat(2.0 * N, il, ir);
      dev = 0.0;
      for (const auto& pr : probes) {
        double ratio = ops.u_hat(N - T, il, pr.first) * ops.u_hat(N - T, pr.second, ir) / denom;
        double limit = ops.phi0(pr.first) * ops.phi0(pr.second);
        dev = std::max(dev, std::abs(ratio - limit) / limit);
      }
    } catch (const PreconditionError& e) {
      status = e.what();
      mu = kNaN;
      dev = kNaN;
    } catch (const NumericError& e) {
      status = e.what();
      mu = kNaN;
      dev = kNaN;
    }
    curve.mu_N.push_back(mu);
    curve.discrepancy.push_back(std::isnan(mu) ? kNaN : std::abs(mu - curve.mu_limit));
    curve.ratio_dev.push_back(dev);
    curve.status.push_back(status);
  }
  return curve;
}

TypicalPathReport typical_path_check(const PPhi1Chain& c, std::uint64_t n_paths, int N_max,
                                     const std::function<double(int)>& a, double threshold,
                                     const TypicalPathOpts& opts) {
  require(c.model != nullptr && !c.P.empty(), "typical_path_check: chain not built");
  require(n_paths >= 1, "typical_path_check: need at least one path");
  require(opts.N0 >= 1, "typical_path_check: N0 must be at least 1");
  require(std::isfinite(threshold) && threshold > 0.0,
          "typical_path_check: threshold must be positive");
  const int fit_lo = std::max(2, opts.N0);
  require(N_max >= fit_lo + 2, "typical_path_check: horizon too short to assess summability");

  std::vector<double> a_tab(static_cast<std::size_t>(N_max - opts.N0) + 1);
  for (int k = opts.N0; k <= N_max; ++k) {
    double v = a(k);
    require(std::isfinite(v) && v > 0.0, "typical_path_check: a_n must be positive and finite");
    a_tab[static_cast<std::size_t>(k - opts.N0)] = v;
  }
  {
    std::vector<double> ks, vs;
    for (int k = fit_lo; k <= N_max; ++k) {
      ks.push_back(static_cast<double>(k));
      vs.push_back(a_tab[static_cast<std::size_t>(k - opts.N0)]);
    }
    double slope = fit_loglog_slope(ks, vs);
    if (!(slope <= kSummableSlope)) {
      std::ostringstream os;
      os << "typical_path_check: a_n decays like n^(" << slope
         << "); the statement needs a summable sequence (slope <= " << kSummableSlope << ")";
      throw PreconditionError(os.str());
    }
  }

  const std::size_t n = c.n();
  std::vector<double> rho_cdf(n);
  {
    KahanSum acc;
    for (std::size_t j = 0; j < n; ++j) {
      acc.add(c.rho[j]);
      rho_cdf[j] = acc.get();
    }
    rho_cdf[n - 1] = 1.0;
  }
  std::vector<double> inv_phi0(n);
  for (std::size_t j = 0; j < n; ++j) inv_phi0[j] = 1.0 / c.model->phi0(c.idx[j]);

  ChunkPlan plan;
  plan.n_total = n_paths;
  plan.chunk_size = opts.chunk_size;
  plan.seed = opts.seed;
  plan.threads = opts.threads;

  auto chunks = run_chunked(plan, [&](std::uint64_t, std::uint64_t cnt, RngStream& rng) {
    std::vector<double> out;
    out.reserve(cnt + 2);
    out.push_back(static_cast<double>(cnt));
    out.push_back(0.0);  // violations
    for (std::uint64_t p = 0; p < cnt; ++p) {
      double stat = 0.0;
      std::size_t s0 = sample_cdf(rho_cdf, 0, n, rng.uniform());
      for (int dir = 0; dir < 2; ++dir) {
        std::size_t cur = s0;
        for (int k = 1; k <= N_max; ++k) {
          cur = sample_cdf(c.cdf, cur * n, n, rng.uniform());
          if (k >= opts.N0)
            stat = std::max(stat, a_tab[static_cast<std::size_t>(k - opts.N0)] * inv_phi0[cur]);
        }
      }
      if (stat > threshold) out[1] += 1.0;
      out.push_back(stat);
    }
    return out;
  });

  TypicalPathReport rep;
  double total = 0.0, viol = 0.0;
  for (const auto& ch : chunks) {
    total += ch[0];
    viol += ch[1];
    rep.stats.insert(rep.stats.end(), ch.begin() + 2, ch.end());
  }
  rep.violating_fraction = viol / total;
  std::vector<double> sorted = rep.stats;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t sz = sorted.size();
  rep.median_stat = (sz % 2 == 1) ? sorted[sz / 2] : 0.5 * (sorted[sz / 2 - 1] + sorted[sz / 2]);
  return rep;
}

InverseMoment inverse_gs_moment(const PPhi1Chain& c, double t, const std::vector<double>& x_grid) {
  require(c.model != nullptr && !c.P.empty(), "inverse_gs_moment: chain not built");
  require(std::isfinite(t) && t > 0.0, "inverse_gs_moment: t must be positive");
  const double steps_real = t / c.t_unit;
  const long long steps = std::llround(steps_real);
  require(steps >= 1 && std::abs(static_cast<double>(steps) * c.t_unit - t) <= 1e-9 * std::max(1.0, t),
          "inverse_gs_moment: t must be a positive integer multiple of t_unit");

  const std::size_t n = c.n();
  std::vector<double> v(n), next(n);
  for (std::size_t j = 0; j < n; ++j) v[j] = 1.0 / c.model->phi0(c.idx[j]);
  for (long long s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = c.P.data() + i * n;
      KahanSum acc;
      for (std::size_t j = 0; j < n; ++j) acc.add(row[j] * v[j]);
      next[i] = acc.get();
    }
    v.swap(next);
  }

  InverseMoment out;
  out.value = v;
  std::vector<std::size_t> nodes;
  if (x_grid.empty()) {
    nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) nodes[i] = i;
  } else {
    for (double x : x_grid) nodes.push_back(c.node_near(x));
  }
  double sup = -std::numeric_limits<double>::infinity();
  std::size_t arg = nodes.front();
  for (std::size_t i : nodes)
    if (v[i] > sup) {
      sup = v[i];
      arg = i;
    }
  out.sup = sup;
  out.arg_x = c.coord[arg];
  return out;
}

}  // namespace fkstable::gibbs
