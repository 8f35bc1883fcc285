#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dabtps {

// Fixed circuit constants of the dual-active-bridge stage plus the operating
// ranges the design must cover. Voltages in volts, fs in hertz, l in henries.
// n refers the secondary voltage to the primary side: vs_referred = n * v2.
struct ConverterParams {
  double v1 = 0.0;
  double fs = 0.0;      // switching frequency; full period = 1/fs = 2T
  double l = 0.0;       // series (leakage) inductance
  double n = 1.0;       // transformer turns ratio
  double p_min = 0.0;
  double p_max = 0.0;
  double v2_min = 0.0;
  double v2_max = 0.0;

  // throws std::invalid_argument; the inductor sizing bound
  // l <= n*v1*v2/(8*fs*p_max) is checked at v2_min so every in-range
  // operating point stays reachable at full duty cycles
  void validate() const;

  double half_period() const { return 0.5 / fs; }  // T in seconds
  double period() const { return 1.0 / fs; }       // 2T in seconds
};

// Phase-shift triple. d0 is the bridge-to-bridge shift between pulse centers
// in units of the half period T (positive shifts the secondary pulse later,
// transferring power forward); d1 and d2 are the primary/secondary pulse
// widths in units of T.
struct ModulationTriple {
  double d0 = 0.0;  // [-1, 1]
  double d1 = 0.0;  // [0, 1]
  double d2 = 0.0;  // [0, 1]

  void validate() const;  // throws std::invalid_argument
};

// One switching period of the two bridge voltages, as at most 8 constant
// segments. Segment k spans [breakpoints[k], breakpoints[k+1]) with
// breakpoints[n_segments] implicitly equal to period. Levels are encoded as
// signs times the stored magnitudes: vp in {+v1, 0, -v1},
// vs (referred to primary) in {+n*v2, 0, -n*v2}. Both waveforms are
// half-wave antisymmetric: level(t + T) = -level(t).
struct SwitchingSchedule {
  double period = 0.0;
  double vp_mag = 0.0;  // v1
  double vs_mag = 0.0;  // n * v2
  int n_segments = 0;
  std::array<double, 8> breakpoints{};  // ascending, breakpoints[0] == 0
  std::array<std::int8_t, 8> vp_sign{};
  std::array<std::int8_t, 8> vs_sign{};

  double vp_level(int k) const { return vp_sign[k] * vp_mag; }
  double vs_level(int k) const { return vs_sign[k] * vs_mag; }
  double segment_end(int k) const {
    return k + 1 < n_segments ? breakpoints[k + 1] : period;
  }
};

// Periodic inductor-current solution for one schedule. The current is
// piecewise linear, zero-mean over the period and half-wave antisymmetric;
// its extrema sit on breakpoints, so i_pk is a max over breakpoint values.
struct SteadyStateSolution {
  SwitchingSchedule schedule;
  std::array<double, 8> i_at_breakpoints{};
  double i_pk = 0.0;   // max |i_l|, amperes
  double p_avg = 0.0;  // (1/2T) * integral of vp * i_l, watts
  double v2 = 0.0;
};

// Canonical token for the ordering of bridge switching edges inside one
// period. Two triples whose edges interleave the same way share a signature.
struct ModeSignature {
  std::string token;
  bool operator==(const ModeSignature&) const = default;
};

struct InfeasiblePower : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Builds the two three-level square waves for one period. The primary
// positive pulse occupies [0, d1*T); the secondary positive pulse is the
// primary pulse's center shifted by d0*T, i.e. it occupies
// [(d0 + (d1-d2)/2)*T, (d0 + (d1+d2)/2)*T) modulo 2T; negative pulses mirror
// one half period later. Measuring d0 center to center makes transferred
// power odd in d0 and peak current even in d0 for every duty pair, and
// reduces to the familiar two-level shift when d1 = d2 = 1. Coinciding edges
// are merged and zero-length segments dropped.
SwitchingSchedule synthesize_waveforms(const ConverterParams& params, double v2,
                                       const ModulationTriple& m);

// Exact piecewise-linear steady state: integrate di/dt = (vp - vs)/l across
// the segments, then shift so the period mean of i_l is zero.
SteadyStateSolution solve_steady_state(const ConverterParams& params, double v2,
                                       const ModulationTriple& m);

// Closed-form average power for single-phase-shift operation (d1 = d2 = 1):
// p = n*v1*v2*d0*(1-|d0|) / (2*fs*l). Used as an independent cross-check.
double sps_power_closed_form(const ConverterParams& params, double v2,
                             double d0);

struct PowerCapability {
  double p_max = 0.0;     // watts
  double d0_at_max = 0.0; // argmax over d0 in [0, 1]
};

// Maximum average power reachable at fixed (d1, d2): coarse scan of d0 over
// [0, 1] followed by golden-section refinement to |delta d0| < 1e-6.
PowerCapability max_power_capability(const ConverterParams& params, double v2,
                                     double d1, double d2);

// Finds d0 on the monotone rising branch nearest d0 = 0 such that
// p_avg(d0) matches p_target within max(1e-6 * p_target, 1e-3 W).
// Throws InfeasiblePower when p_target exceeds the capability at (d1, d2).
double solve_d0_for_power(const ConverterParams& params, double v2,
                          double p_target, double d1, double d2);

// Same, reusing an already-computed capability (hot loops).
double solve_d0_for_power(const ConverterParams& params, double v2,
                          double p_target, double d1, double d2,
                          const PowerCapability& cap);

struct OracleResult {
  double i_pk = 0.0;
  double p_avg = 0.0;
};

// Independent brute-force verifier: fixed-step time marching of
// di/dt = (vp - vs)/l from i = 0 over many periods, evaluating the bridge
// levels directly from the pulse definition (no shared code with the
// segment solver), removing the DC offset and reporting the final period.
// steps_per_period >= 1000.
OracleResult dense_integration_oracle(const ConverterParams& params, double v2,
                                      const ModulationTriple& m,
                                      int steps_per_period);

ModeSignature classify_mode(const SwitchingSchedule& schedule);

}  // namespace dabtps
