#pragma once

// First-order Takagi-Sugeno fuzzy system mapping an operating point (p, v2)
// to duty commands (d1, d2).  Three Gaussian membership functions per input
// give 9 rules (all antecedent pairs); each rule carries one affine
// consequent per output channel, evaluated on range-normalized inputs.  The
// consequent coefficients are fitted to an optimal-duty surface by linear
// least squares, which is exact because the defuzzified output is linear in
// them.  A nearest-neighbor lookup over the same surface serves as the
// discrete baseline the fuzzy modulator is compared against.

#include <array>
#include <stdexcept>
#include <string>

#include "dabtps/pso.hpp"

namespace dabtps {

struct GaussianMf {
  double center = 0.0;
  double sigma = 1.0;  // > 0
};

// exp(-(x - center)^2 / (2 sigma^2)); 1 at the center, in (0, 1] everywhere
double gaussian_mf(double x, const GaussianMf& mf);

// num / den of sum(w_i * v_i) / sum(w_i); the building block of
// defuzzification, exposed for direct arithmetic checks
double weighted_average(const std::array<double, 9>& values,
                        const std::array<double, 9>& weights);

struct FisRanges {
  double p_min = 0.0;
  double p_max = 1.0;
  double v2_min = 0.0;
  double v2_max = 1.0;
  void validate() const;
  double norm_p(double p) const { return (p - p_min) / (p_max - p_min); }
  double norm_v2(double v2) const {
    return (v2 - v2_min) / (v2_max - v2_min);
  }
};

// antecedent placement, in physical input units
struct FisDesign {
  std::array<GaussianMf, 3> p_mfs;
  std::array<GaussianMf, 3> v2_mfs;
  void validate() const;
};

// centers at {min, midpoint, max} of each range, sigma = range / 4
FisDesign default_fis_design(const FisRanges& ranges);

struct DutyCommand {
  double d1 = 0.0;
  double d2 = 0.0;
};

struct TsFis {
  FisRanges ranges;  // normalizes the consequent inputs
  std::array<GaussianMf, 3> p_mfs;
  std::array<GaussianMf, 3> v2_mfs;
  // rule r = 3*i + j pairs p_mfs[i] with v2_mfs[j]; each consequent triple
  // (a, b, c) evaluates as a + b*p_norm + c*v2_norm
  std::array<std::array<double, 3>, 9> d1_coeffs{};
  std::array<std::array<double, 3>, 9> d2_coeffs{};
};

// Product t-norm firing strengths, firing-strength-weighted average of the
// rule consequents, clamped to [0, 1].  Weights are computed with their
// common exponential scale factored out, so arbitrarily far (finite) inputs
// still produce a positive total weight instead of underflowing to 0/0.
DutyCommand evaluate_fis(const TsFis& fis, double p, double v2);

struct SingularFit : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Least-squares consequent fit to the surface (antecedents stay fixed).
// Each channel solves the 27-coefficient normal equations by Gaussian
// elimination with partial pivoting over all surface points.  Throws
// SingularFit when the grid cannot pin the coefficients down (fewer
// informative points than coefficients, e.g. the minimal 3x3 grid).
TsFis fit_fis(const OptimalSurface& surface, const FisRanges& ranges);
TsFis fit_fis(const OptimalSurface& surface, const FisRanges& ranges,
              const FisDesign& design);

struct ChannelDeviation {
  double mean_abs = 0.0;
  double max_abs = 0.0;
};
struct SurfaceDeviation {
  ChannelDeviation d1;
  ChannelDeviation d2;
};

// fit residuals: |FIS - surface| per channel over the surface grid points
SurfaceDeviation surface_deviation(const TsFis& fis,
                                   const OptimalSurface& surface);

// Discrete baseline: nearest stored grid point by Euclidean distance with
// each axis normalized by its stored range; ties resolve to the lowest flat
// index.
struct LutBaseline {
  OptimalSurface surface;
  double p_scale = 1.0;   // 1 / (p axis range)
  double v2_scale = 1.0;  // 1 / (v2 axis range)
};

LutBaseline make_lut(const OptimalSurface& surface);
DutyCommand lut_lookup(const LutBaseline& lut, double p, double v2);

void save_fis(const std::string& path, const TsFis& fis);
TsFis load_fis(const std::string& path);

}  // namespace dabtps
