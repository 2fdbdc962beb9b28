#pragma once
// Shared plumbing: error taxonomy, reproducible RNG substreams, chunked Monte
// Carlo execution with deterministic reduction, path containers and a few
// numeric helpers (Kahan sums, monotone cubic interpolation, tanh-sinh and
// Gauss-Legendre panel quadrature).

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fkstable {

inline constexpr const char* kVersion = "0.1.0";

// Error taxonomy. The CLI maps ConfigError -> exit 2, NumericError -> 3,
// PreconditionError -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PreconditionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw PreconditionError(msg);
}

// Monte Carlo estimate with a standard error from independent samples.
struct MCEstimate {
  double value = 0.0;
  double std_err = 0.0;
  std::uint64_t n_samples = 0;
};

// Piecewise-constant-time path sample, endpoints included. Positions are
// row-major with stride d.
struct PathSkeleton {
  int d = 1;
  std::vector<double> times;
  std::vector<double> pos;

  std::size_t size() const { return times.size(); }
  const double* point(std::size_t i) const { return pos.data() + i * static_cast<std::size_t>(d); }
  double* point(std::size_t i) { return pos.data() + i * static_cast<std::size_t>(d); }
};

std::uint64_t splitmix64(std::uint64_t x);

// Deterministic substream RNG: stream identity is (seed, stream_id), so chunked
// runs reproduce bit-identically for a fixed chunk layout regardless of thread
// count. Normal variates use polar Box-Muller with an explicit cache.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();
  // Uniform on the open interval (0,1); never returns an exact endpoint.
  double uniform();
  double uniform(double a, double b);
  double exponential();  // mean 1
  double normal();

 private:
  std::uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

// Splits n_total samples into chunks of chunk_size, runs `work` possibly in
// parallel, and reduces the per-chunk results in chunk order. `work` receives
// (chunk_index, n_in_chunk, rng) with rng seeded from (seed, chunk_index).
struct ChunkPlan {
  std::uint64_t n_total = 0;
  std::uint64_t chunk_size = 1u << 14;
  std::uint64_t seed = 1;
  int threads = 1;
};

std::vector<std::vector<double>> run_chunked(
    const ChunkPlan& plan,
    const std::function<std::vector<double>(std::uint64_t chunk, std::uint64_t n, RngStream&)>& work);

// Mean/stderr from a chunked sum reduction. Each work() call returns
// {sum, sum_sq, count[, extra...]}; extras are summed and returned.
struct ChunkedMoments {
  MCEstimate est;
  std::vector<double> extra;
};
ChunkedMoments reduce_moments(const std::vector<std::vector<double>>& chunks);

struct KahanSum {
  double s = 0.0, c = 0.0;
  void add(double x) {
    double y = x - c;
    double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  double get() const { return s; }
};

// Monotone cubic Hermite interpolant. Slopes may be supplied exactly (they are
// then limited where they would break monotonicity, Fritsch-Carlson style) or
// estimated from the data.
class Pchip {
 public:
  Pchip() = default;
  Pchip(std::vector<double> x, std::vector<double> y);
  Pchip(std::vector<double> x, std::vector<double> y, std::vector<double> slope);

  double operator()(double xq) const;
  double derivative(double xq) const;
  double x_front() const { return x_.front(); }
  double x_back() const { return x_.back(); }

 private:
  void limit_slopes();
  std::vector<double> x_, y_, m_;
};

// Tanh-sinh quadrature on [a,b]; integrable endpoint singularities allowed.
double tanh_sinh(const std::function<double(double)>& f, double a, double b,
                 double rel_tol = 1e-12, int max_level = 12);

// As tanh_sinh, but reports whether the level-doubling refinement met rel_tol
// (it will not for non-integrable endpoint behaviour).
struct QuadResult {
  double value = 0.0;
  double err_est = 0.0;
  bool converged = false;
};
QuadResult tanh_sinh_ex(const std::function<double(double)>& f, double a, double b,
                        double rel_tol = 1e-12, int max_level = 12);

// Fixed-order Gauss-Legendre on [a,b] (order 16), for smooth panels.
double gauss_legendre_16(const std::function<double(double)>& f, double a, double b);

// FNV-1a over a byte string; used for config hashes in outputs.
std::uint64_t fnv1a64(const std::string& bytes);

std::string format_hex64(std::uint64_t v);

}  // namespace fkstable
