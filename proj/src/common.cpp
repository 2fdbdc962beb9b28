#include "fkstable/common.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

namespace fkstable {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) {
  // xoshiro256++ state from a splitmix chain over (seed, stream_id).
  std::uint64_t z = seed ^ (0x6a09e667f3bcc909ULL + splitmix64(stream_id));
  for (auto& s : s_) {
    z = splitmix64(z);
    s = z;
  }
  // All-zero state is invalid for xoshiro.
  if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 0x9e3779b97f4a7c15ULL;
}

static inline std::uint64_t rotl64(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

std::uint64_t RngStream::next_u64() {
  std::uint64_t result = rotl64(s_[0] + s_[3], 23) + s_[0];
  std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl64(s_[3], 45);
  return result;
}

double RngStream::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::uniform(double a, double b) { return a + (b - a) * uniform(); }

double RngStream::exponential() { return -std::log(uniform()); }

double RngStream::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  double f = std::sqrt(-2.0 * std::log(s) / s);
  cached_normal_ = v * f;
  has_cached_ = true;
  return u * f;
}

std::vector<std::vector<double>> run_chunked(
    const ChunkPlan& plan,
    const std::function<std::vector<double>(std::uint64_t, std::uint64_t, RngStream&)>& work) {
  if (plan.n_total == 0) return {};
  std::uint64_t chunk_size = plan.chunk_size == 0 ? plan.n_total : plan.chunk_size;
  std::uint64_t n_chunks = (plan.n_total + chunk_size - 1) / chunk_size;
  std::vector<std::vector<double>> results(n_chunks);

  auto run_range = [&](std::uint64_t c) {
    std::uint64_t lo = c * chunk_size;
    std::uint64_t n = std::min(chunk_size, plan.n_total - lo);
    RngStream rng(plan.seed, c);
    results[c] = work(c, n, rng);
  };

  int threads = plan.threads;
  if (threads <= 1 || n_chunks == 1) {
    for (std::uint64_t c = 0; c < n_chunks; ++c) run_range(c);
  } else {
    std::atomic<std::uint64_t> next{0};
    auto worker = [&]() {
      for (;;) {
        std::uint64_t c = next.fetch_add(1);
        if (c >= n_chunks) break;
        run_range(c);
      }
    };
    std::vector<std::thread> pool;
    int n_threads = std::min<std::uint64_t>(static_cast<std::uint64_t>(threads), n_chunks);
    pool.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return results;
}

ChunkedMoments reduce_moments(const std::vector<std::vector<double>>& chunks) {
  KahanSum s, s2, n;
  std::vector<KahanSum> extras;
  for (const auto& c : chunks) {
    if (c.size() < 3) throw NumericError("chunk result must carry {sum, sum_sq, count}");
    s.add(c[0]);
    s2.add(c[1]);
    n.add(c[2]);
    if (c.size() > 3) {
      extras.resize(std::max(extras.size(), c.size() - 3));
      for (std::size_t i = 3; i < c.size(); ++i) extras[i - 3].add(c[i]);
    }
  }
  ChunkedMoments out;
  double cnt = n.get();
  if (cnt <= 0) throw NumericError("no samples accumulated");
  out.est.n_samples = static_cast<std::uint64_t>(cnt + 0.5);
  out.est.value = s.get() / cnt;
  double var = 0.0;
  if (cnt > 1.5) {
    var = (s2.get() - s.get() * s.get() / cnt) / (cnt - 1.0);
    if (var < 0) var = 0;
  }
  out.est.std_err = std::sqrt(var / cnt);
  out.extra.reserve(extras.size());
  for (auto& e : extras) out.extra.push_back(e.get());
  return out;
}

Pchip::Pchip(std::vector<double> x, std::vector<double> y)
    : x_(std::move(x)), y_(std::move(y)) {
  std::size_t n = x_.size();
  require(n >= 2 && n == y_.size(), "pchip needs >= 2 nodes");
  m_.assign(n, 0.0);
  // Fritsch-Carlson slope estimates: weighted harmonic mean of secants.
  std::vector<double> del(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) del[i] = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
  m_[0] = del[0];
  m_[n - 1] = del[n - 2];
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (del[i - 1] * del[i] <= 0) {
      m_[i] = 0.0;
    } else {
      double h0 = x_[i] - x_[i - 1], h1 = x_[i + 1] - x_[i];
      double w1 = 2 * h1 + h0, w2 = h1 + 2 * h0;
      m_[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
    }
  }
  limit_slopes();
}

Pchip::Pchip(std::vector<double> x, std::vector<double> y, std::vector<double> slope)
    : x_(std::move(x)), y_(std::move(y)), m_(std::move(slope)) {
  require(x_.size() >= 2 && x_.size() == y_.size() && x_.size() == m_.size(),
          "pchip nodes/values/slopes mismatch");
  limit_slopes();
}

void Pchip::limit_slopes() {
  for (std::size_t i = 0; i + 1 < x_.size(); ++i) {
    double del = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
    if (del == 0.0) {
      m_[i] = 0.0;
      m_[i + 1] = 0.0;
      continue;
    }
    double a = m_[i] / del, b = m_[i + 1] / del;
    if (a < 0) m_[i] = 0.0;
    if (b < 0) m_[i + 1] = 0.0;
    double r = a * a + b * b;
    if (r > 9.0) {
      double tau = 3.0 / std::sqrt(r);
      m_[i] = tau * a * del;
      m_[i + 1] = tau * b * del;
    }
  }
}

double Pchip::operator()(double xq) const {
  std::size_t n = x_.size();
  if (xq <= x_[0]) xq = x_[0];
  if (xq >= x_[n - 1]) xq = x_[n - 1];
  std::size_t lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    std::size_t mid = (lo + hi) / 2;
    (x_[mid] <= xq ? lo : hi) = mid;
  }
  double h = x_[lo + 1] - x_[lo];
  double t = (xq - x_[lo]) / h;
  double t2 = t * t, t3 = t2 * t;
  double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
  double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
  return h00 * y_[lo] + h10 * h * m_[lo] + h01 * y_[lo + 1] + h11 * h * m_[lo + 1];
}

double Pchip::derivative(double xq) const {
  std::size_t n = x_.size();
  if (xq <= x_[0]) xq = x_[0];
  if (xq >= x_[n - 1]) xq = x_[n - 1];
  std::size_t lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    std::size_t mid = (lo + hi) / 2;
    (x_[mid] <= xq ? lo : hi) = mid;
  }
  double h = x_[lo + 1] - x_[lo];
  double t = (xq - x_[lo]) / h;
  double t2 = t * t;
  double d00 = (6 * t2 - 6 * t) / h, d10 = 3 * t2 - 4 * t + 1;
  double d01 = (-6 * t2 + 6 * t) / h, d11 = 3 * t2 - 2 * t;
  return d00 * y_[lo] + d10 * m_[lo] + d01 * y_[lo + 1] + d11 * m_[lo + 1];
}

QuadResult tanh_sinh_ex(const std::function<double(double)>& f, double a, double b,
                        double rel_tol, int max_level) {
  // Level-doubling tanh-sinh. Node offsets from the endpoints are computed
  // through 1 - tanh(z) = 2/(1 + exp(2z)) directly, so integrable endpoint
  // singularities are sampled down to offsets ~1e-300 instead of being lost
  // to rounding of tanh toward 1.
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  const double pi_2 = 1.5707963267948966;
  double h = 1.0;
  KahanSum sum;
  sum.add(pi_2 * f(mid));  // t = 0 node
  double integral_prev = 0.0;
  double diff = 0.0;
  for (int level = 0; level <= max_level; ++level) {
    // At level 0 take t = h, 2h, ...; afterwards only odd multiples of the
    // refined step are new.
    double t0 = (level == 0) ? h : h * 0.5;
    double dt = (level == 0) ? h : h;
    if (level > 0) h *= 0.5;
    KahanSum lvl;
    for (double t = t0; t <= 7.0; t += dt) {
      double z = pi_2 * std::sinh(t);
      double omu = 2.0 / (1.0 + std::exp(2.0 * z));  // 1 - tanh(z)
      double delta = half * omu;
      if (delta <= 0.0) break;
      double w = pi_2 * std::cosh(t) * omu * (2.0 - omu);
      double xl = a + delta, xu = b - delta;
      double fv = 0.0;
      if (xl > a) fv += f(xl);
      if (xu < b) fv += f(xu);
      lvl.add(w * fv);
    }
    sum.add(lvl.get());
    double integral = sum.get() * h * half;
    diff = std::abs(integral - integral_prev);
    if (level >= 2 && diff <= rel_tol * std::max(std::abs(integral), 1e-300)) {
      return {integral, diff, true};
    }
    integral_prev = integral;
  }
  return {integral_prev, diff, false};
}

double tanh_sinh(const std::function<double(double)>& f, double a, double b,
                 double rel_tol, int max_level) {
  return tanh_sinh_ex(f, a, b, rel_tol, max_level).value;
}

namespace {
constexpr double kGl16X[8] = {
    0.0950125098376374401853193, 0.2816035507792589132304605,
    0.4580167776572273863424194, 0.6178762444026437484466718,
    0.7554044083550030338951012, 0.8656312023878317438804679,
    0.9445750230732325760779884, 0.9894009349916499325961542};
constexpr double kGl16W[8] = {
    0.1894506104550684962853967, 0.1826034150449235888667637,
    0.1691565193950025381893121, 0.1495959888165767320815017,
    0.1246289712555338720524763, 0.0951585116824927848099251,
    0.0622535239386478928628438, 0.0271524594117540948517806};
}  // namespace

double gauss_legendre_16(const std::function<double(double)>& f, double a, double b) {
  double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  KahanSum s;
  for (int i = 0; i < 8; ++i) {
    s.add(kGl16W[i] * (f(mid + half * kGl16X[i]) + f(mid - half * kGl16X[i])));
  }
  return s.get() * half;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string format_hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace fkstable
