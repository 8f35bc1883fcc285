#pragma once

// Switched time-domain validation loop: the converter bridges drive the
// series inductor into a capacitor/resistor load, a PI regulator on the
// voltage error commands the bridge phase shift d0, and the fuzzy modulator
// commands the duty pair (d1, d2) from filtered power and the voltage
// reference.  One control update per switching period, explicit fixed-step
// integration in between.

#include <cstddef>
#include <string>
#include <vector>

#include "dabtps/converter.hpp"
#include "dabtps/fis.hpp"

namespace dabtps {

struct PiState {
  double kp = 0.0;  // duty per volt
  double ki = 0.0;  // duty per volt-second
  double integrator = 0.0;
  double out_min = -1.0;
  double out_max = 1.0;
};

// candidate = kp*error + integrator + ki*error*dt.  Inside the limits the
// integrator absorbs the new ki term and the candidate is returned; at a
// limit the output clamps and the integrator holds (anti-windup).
double pi_step(PiState& state, double error, double dt);

struct PlantState {
  double t = 0.0;    // seconds
  double i_l = 0.0;  // inductor current, amperes
  double v_c = 0.0;  // output capacitor voltage (= v2), volts
  double c_out = 470e-6;
  double r_load = 1.0;
  // small series resistance in the inductor branch.  A perfectly lossless
  // branch would hold any DC current offset pumped in during transients
  // forever (nothing in di/dt damps it), permanently inflating the cycle
  // peaks; a realistic parasitic gives the offset an l/r_l decay path.
  double r_l = 0.02;
};

// One explicit first-order step of the switched plant with the bridge
// levels held constant: di_l/dt = (vp - n*s2*v_c - r_l*i_l)/l and
// c_out*dv_c/dt = n*s2*i_l - v_c/r_load, s2 in {-1, 0, +1}.
void plant_step(PlantState& plant, const ConverterParams& params, double vp,
                int s2, double dt);

struct LoopEvent {
  enum class Kind { V2Ref, RLoad };
  double t = 0.0;
  Kind kind = Kind::V2Ref;
  double value = 0.0;
};

struct LoopScenario {
  double v2_ref = 0.0;
  double r_load = 0.0;
  double duration = 0.0;              // seconds
  int substeps_per_period = 2000;     // >= 1000 so dt <= period/1000
  double c_out = 470e-6;
  double r_l = 0.02;                  // inductor-branch series resistance
  std::vector<LoopEvent> events;      // ascending in t, all inside duration
  void validate() const;              // throws std::invalid_argument
};

struct LoopRow {
  double t = 0.0;     // control instant, start of the period
  double v2 = 0.0;    // capacitor voltage sampled at the control instant
  double i_o = 0.0;   // load current at the control instant
  double p_meas = 0.0;  // filtered power the modulator saw
  double d0 = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double i_pk_cycle = 0.0;  // max |i_l| over the period just integrated
};

// Per-period energy bookkeeping with the same rectangle rule as the
// integrator, so the residual isolates genuine accounting errors instead of
// discretization noise.
struct PeriodAudit {
  double e_in = 0.0;    // source energy, integral of vp*i_l
  double e_load = 0.0;  // load-resistor dissipation
  double e_loss = 0.0;  // series-resistance dissipation
  double de_cap = 0.0;  // capacitor stored-energy change
  double de_ind = 0.0;  // inductor stored-energy change
  double residual_fraction() const;
};

struct LoopTrace {
  std::vector<LoopRow> rows;          // one per switching period
  std::vector<PeriodAudit> audits;    // parallel to rows
  std::vector<double> integrator;     // PI integrator after each update
  bool diverged = false;
};

// Marches the scenario one switching period at a time: apply due events,
// sample v2, update the PI and the fuzzy commands, synthesize that period's
// bridge waveforms, integrate the plant through them, log one row.  Aborts
// with diverged = true (partial trace kept) once |v2| exceeds twice the
// converter's v2_max.
LoopTrace run_scenario(const LoopScenario& scenario, const TsFis& fis,
                       PiState pi, const ConverterParams& params);

// header exactly: t_s,v2_v,io_a,p_w,d0,d1,d2,ipk_cycle_a
void write_trace_csv(const std::string& path, const LoopTrace& trace);

void save_scenario(const std::string& path, const LoopScenario& scenario);
LoopScenario load_scenario(const std::string& path);

}  // namespace dabtps
