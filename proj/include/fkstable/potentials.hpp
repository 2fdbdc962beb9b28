#pragma once
// Catalog of Kato-decomposable potentials with growth/singularity metadata and
// the numerical surrogate for the fractional Kato-class membership test.

#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fkstable/common.hpp"
#include "fkstable/stable.hpp"

namespace fkstable::potentials {

using stable::StableParams;

enum class GrowthClass {
  kDecayingToZero,  // V(x) -> 0 as |x| -> inf
  kBounded,
  kLogarithmic,  // V(x)/log|x| -> c; c == 0 means sub-logarithmic but unbounded
  kPolynomial,   // log V / log|x| -> delta
  kExponential,  // log V(x) / |x| -> beta
};

const char* growth_class_name(GrowthClass g);

// Local blow-up |x - location|^{-exponent} with sign -1 (negative part) or +1.
struct Singularity {
  std::vector<double> location;
  double exponent = 0.0;
  int sign = -1;
};

// Immutable potential with metadata. The positive/negative parts are the
// canonical split max(+-V, 0), so evaluate == positive_part - negative_part
// holds identically wherever V is finite.
class PotentialSpec {
 public:
  using Fn = std::function<double(const double* x, int d)>;

  PotentialSpec();  // V == 0

  double evaluate(const double* x, int d) const;
  double evaluate1(double x) const;  // d = 1 convenience
  double positive_part(const double* x, int d) const;
  double negative_part(const double* x, int d) const;

  const std::string& name() const { return name_; }
  const std::vector<Singularity>& singularities() const { return sing_; }
  // 1-d abscissae where the profile is non-smooth (jumps or slope kinks);
  // quadratures split panels there.
  const std::vector<double>& kinks() const { return kinks_; }
  GrowthClass growth_class() const { return growth_; }
  double growth_param() const { return growth_param_; }
  // Radius bounding supp V-: 0 when V >= 0 everywhere, +inf when unbounded.
  double negative_support_radius() const { return neg_radius_; }
  bool unbounded_above() const;
  const std::string& kato_note() const { return kato_note_; }

  // Analytic Kato-decomposability when a rule applies: potentials that are
  // locally bounded are decomposable; local singularities |x - x_i|^{-beta_i}
  // need every beta_i < alpha when alpha < d and beta_i < 1 when alpha >= d = 1.
  // nullopt when the catalog has no rule for this combination.
  std::optional<bool> kato_known(const StableParams& prm) const;

  static PotentialSpec make(std::string name, Fn f, std::vector<Singularity> sing,
                            std::vector<double> kinks, GrowthClass growth, double growth_param,
                            double neg_radius, std::string kato_note = {});

 private:
  std::string name_ = "zero";
  Fn f_;
  std::vector<Singularity> sing_;
  std::vector<double> kinks_;
  GrowthClass growth_ = GrowthClass::kBounded;
  double growth_param_ = 0.0;
  double neg_radius_ = 0.0;
  std::string kato_note_;
};

struct CatalogParams {
  std::map<std::string, double> scalars;
  std::vector<Singularity> terms;  // singular_sum only
};

// Named entries:
//   zero
//   power         {delta > 0}                 |x|^delta
//   power_log     {beta > 0}                  |x|^beta log(1+|x|)
//   exponential   {beta > 0}                  e^{beta |x|}
//   singular_sum  terms                       sum eps_i |x - x_i|^{-beta_i}
//   well          {a > 0, b > 0}              -a on {|x| <= b}, 0 outside
//   log_plus      {c > 0}                     c log|x| on {|x| > 1}, 0 inside
//   well_plus_log {alpha}                     log|x| 1_{|x|>1} - |x|^{-alpha/2} 1_{|x|<=1}
//   sublog        {}                          log|x|/loglog|x| beyond e^2, constant inside
// Unknown names raise ConfigError.
PotentialSpec catalog(const std::string& name, const CatalogParams& p = {});

// Custom potential from tabulated values with linear interpolation, clamped to
// the edge values outside the table. The abscissa is x itself in d = 1 and |x|
// in higher dimensions.
PotentialSpec tabulated(std::vector<double> x, std::vector<double> v);

// Pointwise sum; metadata merged with the faster growth class dominating.
PotentialSpec sum(const PotentialSpec& a, const PotentialSpec& b);

struct GrowthDiag {
  bool consistent = false;
  double measured = 0.0;
  std::string detail;
};

// Numeric confirmation of the declared growth class on radii [R, 100R]
// (class-specific default when R == 0), evaluated along the first axis.
GrowthDiag growth_diagnostic(const PotentialSpec& v, double R = 0.0);

struct KatoReport {
  std::vector<double> epsilon_grid;   // decreasing
  std::vector<double> sup_integrals;  // sup_x int_{|y-x|<eps} |V(y) Pi(y-x)| dy
  std::string verdict;                // kato | kato_local_only | not_kato | inconclusive
  double threshold = 1e-3;
  double offending_x = std::numeric_limits<double>::quiet_NaN();
};

// Numerical surrogate for the spatial Kato-class condition, d = 1 only.
// Defaults: epsilon_grid {0.5, 0.25, 0.1, 0.05, 0.01}; x_grid built from the
// declared singularities plus a coarse cover of [-3, 3]. Verdict is kato (or
// kato_local_only when V is unbounded above, so only restrictions to balls
// qualify) iff the sup sequence is nonincreasing and ends below threshold.
KatoReport kato_check(const PotentialSpec& v, const StableParams& prm,
                      std::vector<double> epsilon_grid = {},
                      std::vector<double> x_grid = {}, double threshold = 1e-3);

// Cross-check via the equivalent semigroup condition: returns per t in t_grid
// the sup over x_grid of int_0^t P_s|V|(x) ds. Requires |V| bounded with
// bounded support (the potential-well use case), d = 1.
std::vector<double> kato_semigroup_check(const PotentialSpec& v, const StableParams& prm,
                                         const std::vector<double>& t_grid,
                                         const std::vector<double>& x_grid);

// sup over sampled centers |x| in [R, R_outer] of sup_{z,y in B(x,1)} V(z)/V(y).
// Precondition (checked on the samples): V >= 1 on every such ball.
double comparability_constant(const PotentialSpec& v, double R, double R_outer = 0.0,
                              int n_centers = 65, int n_ball = 33);

}  // namespace fkstable::potentials
