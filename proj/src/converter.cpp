#include "dabtps/converter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

namespace dabtps {

namespace {

// breakpoints closer than this (in units of T) are treated as one edge
constexpr double kMergeTol = 1e-12;

double wrap2(double u) {
  u = std::fmod(u, 2.0);
  return u < 0.0 ? u + 2.0 : u;
}

// is u inside [a, a + len) on the circle of circumference 2?
bool in_wrapped(double u, double a, double len) {
  if (len <= 0.0) return false;
  if (len >= 2.0) return true;
  return wrap2(u - a) < len;
}

int vp_sign_at(double u, double d1) {
  if (d1 > 0.0 && u < d1) return +1;
  if (u >= 1.0 && u < 1.0 + d1) return -1;
  return 0;
}

int vs_sign_at(double u, double a, double d2) {
  if (in_wrapped(u, a, d2)) return +1;
  if (in_wrapped(u, wrap2(a + 1.0), d2)) return -1;
  return 0;
}

// d0 measures the shift between pulse CENTERS, which makes transferred power
// an odd function of d0 (and peak current an even one) for every duty pair.
// The primary pulse is anchored at [0, d1), so the secondary pulse start in
// units of T is d0 + (d1 - d2)/2.
double vs_pulse_start(const ModulationTriple& m) {
  return wrap2(m.d0 + 0.5 * (m.d1 - m.d2));
}

}  // namespace

void ConverterParams::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (!(v1 > 0.0)) fail("v1 must be positive");
  if (!(fs > 0.0)) fail("fs must be positive");
  if (!(l > 0.0)) fail("l must be positive");
  if (!(n > 0.0)) fail("n must be positive");
  if (!(p_min > 0.0) || !(p_max >= p_min)) fail("need 0 < p_min <= p_max");
  if (!(v2_min > 0.0) || !(v2_max >= v2_min)) fail("need 0 < v2_min <= v2_max");
  // Inductor sizing: the stage must reach p_max at full duty cycles across
  // the whole v2 range, and capability is lowest at v2_min.
  const double l_bound = n * v1 * v2_min / (8.0 * fs * p_max);
  if (l > l_bound) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "inductance %.6g H violates sizing bound L <= "
                  "n*V1*V2/(8*fs*Pmax) = %.6g H at v2 = %.6g V",
                  l, l_bound, v2_min);
    fail(buf);
  }
}

void ModulationTriple::validate() const {
  if (!(d0 >= -1.0 && d0 <= 1.0))
    throw std::invalid_argument("d0 out of range [-1, 1]");
  if (!(d1 >= 0.0 && d1 <= 1.0))
    throw std::invalid_argument("d1 out of range [0, 1]");
  if (!(d2 >= 0.0 && d2 <= 1.0))
    throw std::invalid_argument("d2 out of range [0, 1]");
}

SwitchingSchedule synthesize_waveforms(const ConverterParams& params, double v2,
                                       const ModulationTriple& m) {
  m.validate();
  if (!(v2 > 0.0)) throw std::invalid_argument("v2 must be positive");

  // Work in units of T (u in [0, 2)); scale to seconds at the end.
  const double a = vs_pulse_start(m);  // secondary positive pulse start

  double cand[9];
  int n_cand = 0;
  cand[n_cand++] = 0.0;  // schedule always starts at t = 0
  if (m.d1 > 0.0) {
    cand[n_cand++] = m.d1;
    cand[n_cand++] = 1.0;
    cand[n_cand++] = wrap2(1.0 + m.d1);
  }
  if (m.d2 > 0.0) {
    cand[n_cand++] = a;
    cand[n_cand++] = wrap2(a + m.d2);
    cand[n_cand++] = wrap2(a + 1.0);
    cand[n_cand++] = wrap2(a + 1.0 + m.d2);
  }

  std::sort(cand, cand + n_cand);

  // merge coincident edges; also fold edges that land within tolerance of 2
  // back onto the period start
  double merged[9];
  int n_merged = 0;
  for (int i = 0; i < n_cand; ++i) {
    if (cand[i] >= 2.0 - kMergeTol) continue;
    if (n_merged > 0 && cand[i] - merged[n_merged - 1] < kMergeTol) continue;
    merged[n_merged++] = cand[i];
  }

  SwitchingSchedule s;
  s.period = params.period();
  s.vp_mag = params.v1;
  s.vs_mag = params.n * v2;
  s.n_segments = n_merged;
  if (n_merged > 8)
    throw std::logic_error("schedule exceeded 8 segments");  // unreachable

  const double half = params.half_period();
  for (int k = 0; k < n_merged; ++k) {
    const double seg_end = k + 1 < n_merged ? merged[k + 1] : 2.0;
    const double mid = 0.5 * (merged[k] + seg_end);
    s.breakpoints[k] = merged[k] * half;
    s.vp_sign[k] = static_cast<std::int8_t>(vp_sign_at(mid, m.d1));
    s.vs_sign[k] = static_cast<std::int8_t>(vs_sign_at(mid, a, m.d2));
  }
  s.breakpoints[0] = 0.0;
  return s;
}

SteadyStateSolution solve_steady_state(const ConverterParams& params, double v2,
                                       const ModulationTriple& m) {
  SteadyStateSolution sol;
  sol.schedule = synthesize_waveforms(params, v2, m);
  sol.v2 = v2;
  const SwitchingSchedule& s = sol.schedule;

  // integrate from a provisional start of zero
  double i[9];
  i[0] = 0.0;
  for (int k = 0; k < s.n_segments; ++k) {
    const double dt = s.segment_end(k) - s.breakpoints[k];
    const double slope = (s.vp_level(k) - s.vs_level(k)) / params.l;
    i[k + 1] = i[k] + slope * dt;
  }

  // the applied volt-seconds sum to zero, so i is periodic; remove the DC
  // offset so the period mean vanishes (trapezoid rule is exact here)
  double mean = 0.0;
  for (int k = 0; k < s.n_segments; ++k) {
    const double dt = s.segment_end(k) - s.breakpoints[k];
    mean += 0.5 * (i[k] + i[k + 1]) * dt;
  }
  mean /= s.period;

  double pk = 0.0;
  for (int k = 0; k < s.n_segments; ++k) {
    sol.i_at_breakpoints[k] = i[k] - mean;
    pk = std::max(pk, std::abs(sol.i_at_breakpoints[k]));
  }
  sol.i_pk = pk;

  // piecewise-linear current against piecewise-constant vp
  double e = 0.0;
  for (int k = 0; k < s.n_segments; ++k) {
    const double dt = s.segment_end(k) - s.breakpoints[k];
    const double i_a = i[k] - mean;
    const double i_b = i[k + 1] - mean;
    e += s.vp_level(k) * 0.5 * (i_a + i_b) * dt;
  }
  sol.p_avg = e / s.period;
  return sol;
}

double sps_power_closed_form(const ConverterParams& params, double v2,
                             double d0) {
  return params.n * params.v1 * v2 * d0 * (1.0 - std::abs(d0)) /
         (2.0 * params.fs * params.l);
}

namespace {

double power_at(const ConverterParams& params, double v2, double d0, double d1,
                double d2) {
  return solve_steady_state(params, v2, {d0, d1, d2}).p_avg;
}

}  // namespace

PowerCapability max_power_capability(const ConverterParams& params, double v2,
                                     double d1, double d2) {
  constexpr int kScan = 65;        // coarse scan resolution over d0 in [0, 1]
  constexpr double kTolD0 = 1e-6;  // golden-section termination width

  double best_p = -1.0;
  int best_i = 0;
  double p_scan[kScan];
  for (int i = 0; i < kScan; ++i) {
    const double d0 = static_cast<double>(i) / (kScan - 1);
    p_scan[i] = power_at(params, v2, d0, d1, d2);
    if (p_scan[i] > best_p) {
      best_p = p_scan[i];
      best_i = i;
    }
  }

  double lo = std::max(0.0, (best_i - 1) / double(kScan - 1));
  double hi = std::min(1.0, (best_i + 1) / double(kScan - 1));

  // golden-section maximization inside the bracket
  constexpr double kInvPhi = 0.6180339887498949;
  double x1 = hi - kInvPhi * (hi - lo);
  double x2 = lo + kInvPhi * (hi - lo);
  double f1 = power_at(params, v2, x1, d1, d2);
  double f2 = power_at(params, v2, x2, d1, d2);
  while (hi - lo > kTolD0) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kInvPhi * (hi - lo);
      f2 = power_at(params, v2, x2, d1, d2);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kInvPhi * (hi - lo);
      f1 = power_at(params, v2, x1, d1, d2);
    }
  }

  PowerCapability cap;
  cap.d0_at_max = 0.5 * (lo + hi);
  cap.p_max = power_at(params, v2, cap.d0_at_max, d1, d2);
  if (cap.p_max < best_p) {  // keep the scan point if refinement lost it
    cap.p_max = best_p;
    cap.d0_at_max = static_cast<double>(best_i) / (kScan - 1);
  }
  return cap;
}

double solve_d0_for_power(const ConverterParams& params, double v2,
                          double p_target, double d1, double d2) {
  return solve_d0_for_power(params, v2, p_target, d1, d2,
                            max_power_capability(params, v2, d1, d2));
}

double solve_d0_for_power(const ConverterParams& params, double v2,
                          double p_target, double d1, double d2,
                          const PowerCapability& cap) {
  if (!(p_target >= 0.0))
    throw std::invalid_argument("p_target must be non-negative");
  const double tol_p = std::max(1e-6 * p_target, 1e-3);

  if (p_target > cap.p_max) {
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "p_target %.6g W exceeds capability %.6g W at d1=%.6g d2=%.6g",
                  p_target, cap.p_max, d1, d2);
    throw InfeasiblePower(buf);
  }

  // coarse scan over [-1, d0_at_max]; keep the rising crossing whose
  // midpoint lies nearest d0 = 0
  constexpr int kScan = 129;
  const double lo_end = -1.0;
  const double hi_end = cap.d0_at_max;
  double a = 0.0, b = 0.0;
  bool found = false;
  double best_mid = 1e30;
  double prev_d0 = lo_end;
  double prev_p = power_at(params, v2, prev_d0, d1, d2);
  for (int i = 1; i < kScan; ++i) {
    const double d0 = lo_end + (hi_end - lo_end) * i / (kScan - 1);
    const double p = power_at(params, v2, d0, d1, d2);
    if (prev_p <= p_target && p_target <= p) {
      const double mid = std::abs(0.5 * (prev_d0 + d0));
      if (!found || mid < best_mid) {
        found = true;
        best_mid = mid;
        a = prev_d0;
        b = d0;
      }
    }
    prev_d0 = d0;
    prev_p = p;
  }
  if (!found) {
    // capability refinement can leave the last grid value a hair under the
    // target; fall back to the bracket ending at the capability point
    a = hi_end - (hi_end - lo_end) / (kScan - 1);
    b = hi_end;
  }

  double fa = power_at(params, v2, a, d1, d2) - p_target;
  double d0 = 0.5 * (a + b);
  for (int it = 0; it < 200; ++it) {
    d0 = 0.5 * (a + b);
    const double f = power_at(params, v2, d0, d1, d2) - p_target;
    if (std::abs(f) <= tol_p) return d0;
    if ((f < 0.0) == (fa < 0.0)) {
      a = d0;
      fa = f;
    } else {
      b = d0;
    }
  }
  return d0;
}

OracleResult dense_integration_oracle(const ConverterParams& params, double v2,
                                      const ModulationTriple& m,
                                      int steps_per_period) {
  m.validate();
  if (steps_per_period < 1000)
    throw std::invalid_argument("steps_per_period must be >= 1000");

  constexpr int kPeriods = 50;
  const int n = steps_per_period;
  const double dt = params.period() / n;
  const double du = 2.0 / n;  // step in units of T
  const double a = vs_pulse_start(m);
  const double inv_l = 1.0 / params.l;
  const double vs_mag = params.n * v2;

  // march with the switching state sampled at each step midpoint; the
  // bridge levels come straight from the pulse definition
  auto w_at = [&](double u) {
    return params.v1 * vp_sign_at(u, m.d1) - vs_mag * vs_sign_at(u, a, m.d2);
  };

  double i = 0.0;
  for (long j = 0; j < static_cast<long>(kPeriods - 1) * n; ++j) {
    const double u = wrap2((j + 0.5) * du);
    i += dt * w_at(u) * inv_l;
  }

  // final period: record samples, then remove the DC offset
  std::vector<double> samples(n + 1);
  std::vector<double> vp_mid(n);
  samples[0] = i;
  for (int j = 0; j < n; ++j) {
    const double u = wrap2((j + 0.5) * du);
    vp_mid[j] = params.v1 * vp_sign_at(u, m.d1);
    i += dt * w_at(u) * inv_l;
    samples[j + 1] = i;
  }

  double mean = 0.0;
  for (int j = 0; j < n; ++j) mean += 0.5 * (samples[j] + samples[j + 1]);
  mean /= n;

  OracleResult r;
  double pk = 0.0;
  double e = 0.0;
  for (int j = 0; j < n; ++j) {
    const double ia = samples[j] - mean;
    const double ib = samples[j + 1] - mean;
    pk = std::max(pk, std::abs(ia));
    e += vp_mid[j] * 0.5 * (ia + ib);
  }
  pk = std::max(pk, std::abs(samples[n] - mean));
  r.i_pk = pk;
  r.p_avg = e / n;
  return r;
}

ModeSignature classify_mode(const SwitchingSchedule& schedule) {
  // one token per segment: sign of vp then sign of vs
  static constexpr char kSym[3] = {'-', '0', '+'};
  ModeSignature sig;
  for (int k = 0; k < schedule.n_segments; ++k) {
    if (k > 0) sig.token += '|';
    sig.token += kSym[schedule.vp_sign[k] + 1];
    sig.token += kSym[schedule.vs_sign[k] + 1];
  }
  return sig;
}

}  // namespace dabtps
