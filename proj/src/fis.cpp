#include "dabtps/fis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "dabtps/text_io.hpp"

namespace dabtps {

double gaussian_mf(double x, const GaussianMf& mf) {
  const double z = (x - mf.center) / mf.sigma;
  return std::exp(-0.5 * z * z);
}

double weighted_average(const std::array<double, 9>& values,
                        const std::array<double, 9>& weights) {
  double num = 0.0;
  double den = 0.0;
  for (int r = 0; r < 9; ++r) {
    num += weights[r] * values[r];
    den += weights[r];
  }
  return num / den;
}

void FisRanges::validate() const {
  if (!(p_min < p_max)) {
    throw std::invalid_argument("fis ranges: p_min must be below p_max");
  }
  if (!(v2_min < v2_max)) {
    throw std::invalid_argument("fis ranges: v2_min must be below v2_max");
  }
}

void FisDesign::validate() const {
  for (const auto& mf : p_mfs) {
    if (!(mf.sigma > 0.0)) {
      throw std::invalid_argument("fis design: p sigma must be positive");
    }
  }
  for (const auto& mf : v2_mfs) {
    if (!(mf.sigma > 0.0)) {
      throw std::invalid_argument("fis design: v2 sigma must be positive");
    }
  }
}

FisDesign default_fis_design(const FisRanges& ranges) {
  ranges.validate();
  FisDesign d;
  const double p_mid = 0.5 * (ranges.p_min + ranges.p_max);
  const double p_sigma = (ranges.p_max - ranges.p_min) / 4.0;
  d.p_mfs = {GaussianMf{ranges.p_min, p_sigma}, GaussianMf{p_mid, p_sigma},
             GaussianMf{ranges.p_max, p_sigma}};
  const double v2_mid = 0.5 * (ranges.v2_min + ranges.v2_max);
  const double v2_sigma = (ranges.v2_max - ranges.v2_min) / 4.0;
  d.v2_mfs = {GaussianMf{ranges.v2_min, v2_sigma},
              GaussianMf{v2_mid, v2_sigma},
              GaussianMf{ranges.v2_max, v2_sigma}};
  return d;
}

namespace {

// Normalized firing strengths.  Each product of two Gaussians is
// exp(e_r) with e_r <= 0; factoring out max(e_r) before exponentiating
// keeps the largest weight at exactly 1, so the total stays positive for
// any finite input no matter how far outside the design range it lies.
// The common factor cancels in the weighted average.
std::array<double, 9> firing_strengths(const TsFis& fis, double p,
                                       double v2) {
  // cap |z| so z^2 cannot overflow to infinity; beyond this the weight is
  // an exact zero after rescaling anyway
  constexpr double kZCap = 1e150;
  std::array<double, 3> ep;
  std::array<double, 3> ev;
  for (int i = 0; i < 3; ++i) {
    const double zp = std::min(
        std::abs((p - fis.p_mfs[i].center) / fis.p_mfs[i].sigma), kZCap);
    ep[i] = -0.5 * zp * zp;
    const double zv = std::min(
        std::abs((v2 - fis.v2_mfs[i].center) / fis.v2_mfs[i].sigma), kZCap);
    ev[i] = -0.5 * zv * zv;
  }
  std::array<double, 9> e;
  double e_max = -1e300;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      e[3 * i + j] = ep[i] + ev[j];
      e_max = std::max(e_max, e[3 * i + j]);
    }
  }
  std::array<double, 9> w;
  double total = 0.0;
  for (int r = 0; r < 9; ++r) {
    w[r] = std::exp(e[r] - e_max);
    total += w[r];
  }
  for (int r = 0; r < 9; ++r) {
    w[r] /= total;
  }
  return w;
}

double clamp_unit(double x) { return std::clamp(x, 0.0, 1.0); }

}  // namespace

DutyCommand evaluate_fis(const TsFis& fis, double p, double v2) {
  const std::array<double, 9> w = firing_strengths(fis, p, v2);
  const double pn = fis.ranges.norm_p(p);
  const double vn = fis.ranges.norm_v2(v2);
  double d1 = 0.0;
  double d2 = 0.0;
  for (int r = 0; r < 9; ++r) {
    d1 += w[r] * (fis.d1_coeffs[r][0] + fis.d1_coeffs[r][1] * pn +
                  fis.d1_coeffs[r][2] * vn);
    d2 += w[r] * (fis.d2_coeffs[r][0] + fis.d2_coeffs[r][1] * pn +
                  fis.d2_coeffs[r][2] * vn);
  }
  return DutyCommand{clamp_unit(d1), clamp_unit(d2)};
}

namespace {

// Solve A x = b (n x n, row-major) in place by Gaussian elimination with
// partial pivoting.  Throws SingularFit when a pivot collapses relative to
// the matrix scale, which is how a rank-deficient fit surfaces.
std::vector<double> solve_linear_system(std::vector<double> a,
                                        std::vector<double> b, int n) {
  double scale = 0.0;
  for (double v : a) {
    scale = std::max(scale, std::abs(v));
  }
  if (scale == 0.0) {
    throw SingularFit("fis fit: zero normal matrix");
  }
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    double best = std::abs(a[col * n + col]);
    for (int row = col + 1; row < n; ++row) {
      const double mag = std::abs(a[row * n + col]);
      if (mag > best) {
        best = mag;
        pivot = row;
      }
    }
    if (best <= 1e-12 * scale) {
      throw SingularFit(
          "fis fit: rank-deficient normal equations; the surface grid does "
          "not determine all consequent coefficients");
    }
    if (pivot != col) {
      for (int k = col; k < n; ++k) {
        std::swap(a[col * n + k], a[pivot * n + k]);
      }
      std::swap(b[col], b[pivot]);
    }
    const double inv = 1.0 / a[col * n + col];
    for (int row = col + 1; row < n; ++row) {
      const double f = a[row * n + col] * inv;
      if (f == 0.0) {
        continue;
      }
      for (int k = col; k < n; ++k) {
        a[row * n + k] -= f * a[col * n + k];
      }
      b[row] -= f * b[col];
    }
  }
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  for (int row = n - 1; row >= 0; --row) {
    double acc = b[row];
    for (int k = row + 1; k < n; ++k) {
      acc -= a[row * n + k] * x[k];
    }
    x[row] = acc / a[row * n + row];
  }
  return x;
}

void check_surface(const OptimalSurface& surface) {
  if (surface.n_p < 3 || surface.n_v2 < 3) {
    throw std::invalid_argument("fis fit: surface grid must be at least 3x3");
  }
  if (surface.points.size() !=
      static_cast<std::size_t>(surface.n_p) *
          static_cast<std::size_t>(surface.n_v2)) {
    throw std::invalid_argument("fis fit: surface point count mismatch");
  }
}

}  // namespace

TsFis fit_fis(const OptimalSurface& surface, const FisRanges& ranges,
              const FisDesign& design) {
  check_surface(surface);
  ranges.validate();
  design.validate();

  TsFis fis;
  fis.ranges = ranges;
  fis.p_mfs = design.p_mfs;
  fis.v2_mfs = design.v2_mfs;

  // The defuzzified output is sum_r wbar_r (a_r + b_r pn + c_r vn): linear
  // in the 27 coefficients with features [wbar_r, wbar_r*pn, wbar_r*vn].
  constexpr int kCoeffs = 27;
  const std::size_t n_rows = surface.points.size();
  std::vector<double> phi(n_rows * kCoeffs);
  std::vector<double> y1(n_rows);
  std::vector<double> y2(n_rows);
  for (std::size_t s = 0; s < n_rows; ++s) {
    const SurfacePoint& pt = surface.points[s];
    const std::array<double, 9> w = firing_strengths(fis, pt.p, pt.v2);
    const double pn = fis.ranges.norm_p(pt.p);
    const double vn = fis.ranges.norm_v2(pt.v2);
    double* row = phi.data() + s * kCoeffs;
    for (int r = 0; r < 9; ++r) {
      row[3 * r + 0] = w[r];
      row[3 * r + 1] = w[r] * pn;
      row[3 * r + 2] = w[r] * vn;
    }
    y1[s] = pt.d1_opt;
    y2[s] = pt.d2_opt;
  }

  // normal equations, shared between the two channels
  std::vector<double> gram(kCoeffs * kCoeffs, 0.0);
  std::vector<double> rhs1(kCoeffs, 0.0);
  std::vector<double> rhs2(kCoeffs, 0.0);
  for (std::size_t s = 0; s < n_rows; ++s) {
    const double* row = phi.data() + s * kCoeffs;
    for (int i = 0; i < kCoeffs; ++i) {
      if (row[i] == 0.0) {
        continue;
      }
      for (int j = 0; j < kCoeffs; ++j) {
        gram[i * kCoeffs + j] += row[i] * row[j];
      }
      rhs1[i] += row[i] * y1[s];
      rhs2[i] += row[i] * y2[s];
    }
  }

  const std::vector<double> c1 = solve_linear_system(gram, rhs1, kCoeffs);
  const std::vector<double> c2 = solve_linear_system(gram, rhs2, kCoeffs);
  for (int r = 0; r < 9; ++r) {
    for (int k = 0; k < 3; ++k) {
      fis.d1_coeffs[r][k] = c1[3 * r + k];
      fis.d2_coeffs[r][k] = c2[3 * r + k];
    }
  }
  return fis;
}

TsFis fit_fis(const OptimalSurface& surface, const FisRanges& ranges) {
  return fit_fis(surface, ranges, default_fis_design(ranges));
}

SurfaceDeviation surface_deviation(const TsFis& fis,
                                   const OptimalSurface& surface) {
  if (surface.points.empty()) {
    throw std::invalid_argument("surface deviation: empty surface");
  }
  SurfaceDeviation dev;
  double sum1 = 0.0;
  double sum2 = 0.0;
  for (const SurfacePoint& pt : surface.points) {
    const DutyCommand cmd = evaluate_fis(fis, pt.p, pt.v2);
    const double e1 = std::abs(cmd.d1 - pt.d1_opt);
    const double e2 = std::abs(cmd.d2 - pt.d2_opt);
    sum1 += e1;
    sum2 += e2;
    dev.d1.max_abs = std::max(dev.d1.max_abs, e1);
    dev.d2.max_abs = std::max(dev.d2.max_abs, e2);
  }
  dev.d1.mean_abs = sum1 / static_cast<double>(surface.points.size());
  dev.d2.mean_abs = sum2 / static_cast<double>(surface.points.size());
  return dev;
}

LutBaseline make_lut(const OptimalSurface& surface) {
  if (surface.points.empty() ||
      surface.points.size() != static_cast<std::size_t>(surface.n_p) *
                                   static_cast<std::size_t>(surface.n_v2)) {
    throw std::invalid_argument("lut: malformed surface");
  }
  LutBaseline lut;
  lut.surface = surface;
  double p_lo = surface.points.front().p;
  double p_hi = p_lo;
  double v_lo = surface.points.front().v2;
  double v_hi = v_lo;
  for (const SurfacePoint& pt : surface.points) {
    p_lo = std::min(p_lo, pt.p);
    p_hi = std::max(p_hi, pt.p);
    v_lo = std::min(v_lo, pt.v2);
    v_hi = std::max(v_hi, pt.v2);
  }
  lut.p_scale = p_hi > p_lo ? 1.0 / (p_hi - p_lo) : 1.0;
  lut.v2_scale = v_hi > v_lo ? 1.0 / (v_hi - v_lo) : 1.0;
  return lut;
}

DutyCommand lut_lookup(const LutBaseline& lut, double p, double v2) {
  const std::vector<SurfacePoint>& pts = lut.surface.points;
  std::size_t best = 0;
  double best_d2 = 0.0;
  bool first = true;
  for (std::size_t s = 0; s < pts.size(); ++s) {
    const double dp = (p - pts[s].p) * lut.p_scale;
    const double dv = (v2 - pts[s].v2) * lut.v2_scale;
    const double d2 = dp * dp + dv * dv;
    if (first || d2 < best_d2) {  // strict: ties keep the lowest index
      best = s;
      best_d2 = d2;
      first = false;
    }
  }
  return DutyCommand{pts[best].d1_opt, pts[best].d2_opt};
}

void save_fis(const std::string& path, const TsFis& fis) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path);
  }
  out << "dabtps-fis v1\n";
  out << "ranges " << format_g17(fis.ranges.p_min) << ' '
      << format_g17(fis.ranges.p_max) << ' '
      << format_g17(fis.ranges.v2_min) << ' '
      << format_g17(fis.ranges.v2_max) << '\n';
  for (const auto& mf : fis.p_mfs) {
    out << "p_mf " << format_g17(mf.center) << ' '
        << format_g17(mf.sigma) << '\n';
  }
  for (const auto& mf : fis.v2_mfs) {
    out << "v2_mf " << format_g17(mf.center) << ' '
        << format_g17(mf.sigma) << '\n';
  }
  for (int r = 0; r < 9; ++r) {
    out << "rule " << r;
    for (int k = 0; k < 3; ++k) {
      out << ' ' << format_g17(fis.d1_coeffs[r][k]);
    }
    for (int k = 0; k < 3; ++k) {
      out << ' ' << format_g17(fis.d2_coeffs[r][k]);
    }
    out << '\n';
  }
  if (!out.good()) {
    throw std::runtime_error("write failed: " + path);
  }
}

TsFis load_fis(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open: " + path);
  }
  std::string line;
  if (!std::getline(in, line) || line != "dabtps-fis v1") {
    throw std::runtime_error("not a fis file: " + path);
  }
  TsFis fis;
  auto expect_line = [&](const char* what) {
    if (!std::getline(in, line)) {
      throw std::runtime_error(std::string("fis file truncated: missing ") +
                               what);
    }
    return std::istringstream(line);
  };
  {
    auto ss = expect_line("ranges");
    std::string tag;
    ss >> tag >> fis.ranges.p_min >> fis.ranges.p_max >> fis.ranges.v2_min >>
        fis.ranges.v2_max;
    if (tag != "ranges" || ss.fail()) {
      throw std::runtime_error("fis file: bad ranges line");
    }
  }
  auto read_mfs = [&](const char* tag_want,
                      std::array<GaussianMf, 3>& mfs) {
    for (auto& mf : mfs) {
      auto ss = expect_line(tag_want);
      std::string tag;
      ss >> tag >> mf.center >> mf.sigma;
      if (tag != tag_want || ss.fail() || !(mf.sigma > 0.0)) {
        throw std::runtime_error(std::string("fis file: bad ") + tag_want +
                                 " line");
      }
    }
  };
  read_mfs("p_mf", fis.p_mfs);
  read_mfs("v2_mf", fis.v2_mfs);
  for (int r = 0; r < 9; ++r) {
    auto ss = expect_line("rule");
    std::string tag;
    int idx = -1;
    ss >> tag >> idx;
    for (int k = 0; k < 3; ++k) {
      ss >> fis.d1_coeffs[r][k];
    }
    for (int k = 0; k < 3; ++k) {
      ss >> fis.d2_coeffs[r][k];
    }
    if (tag != "rule" || idx != r || ss.fail()) {
      throw std::runtime_error("fis file: bad rule line");
    }
  }
  fis.ranges.validate();
  return fis;
}

}  // namespace dabtps
