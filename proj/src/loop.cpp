#include "dabtps/loop.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dabtps/text_io.hpp"

namespace dabtps {

namespace {
// first-order low-pass time constant for the power measurement
constexpr double kPowerFilterTau = 2e-3;
}  // namespace

double pi_step(PiState& state, double error, double dt) {
  if (!(dt > 0.0)) {
    throw std::invalid_argument("pi_step: dt must be positive");
  }
  const double next_integrator = state.integrator + state.ki * error * dt;
  const double candidate = state.kp * error + next_integrator;
  if (candidate > state.out_max) {
    return state.out_max;  // integrator holds
  }
  if (candidate < state.out_min) {
    return state.out_min;
  }
  state.integrator = next_integrator;
  return candidate;
}

void plant_step(PlantState& plant, const ConverterParams& params, double vp,
                int s2, double dt) {
  const double di =
      (vp - params.n * s2 * plant.v_c - plant.r_l * plant.i_l) / params.l;
  const double dv =
      (params.n * s2 * plant.i_l - plant.v_c / plant.r_load) / plant.c_out;
  plant.i_l += di * dt;
  plant.v_c += dv * dt;
  plant.t += dt;
}

void LoopScenario::validate() const {
  if (!(v2_ref > 0.0)) {
    throw std::invalid_argument("scenario: v2_ref must be positive");
  }
  if (!(r_load > 0.0)) {
    throw std::invalid_argument("scenario: r_load must be positive");
  }
  if (!(c_out > 0.0)) {
    throw std::invalid_argument("scenario: c_out must be positive");
  }
  if (r_l < 0.0) {
    throw std::invalid_argument("scenario: r_l must be non-negative");
  }
  if (!(duration > 0.0)) {
    throw std::invalid_argument("scenario: duration must be positive");
  }
  if (substeps_per_period < 1000) {
    throw std::invalid_argument(
        "scenario: at least 1000 substeps per period required");
  }
  double prev = 0.0;
  for (const LoopEvent& ev : events) {
    if (ev.t < prev) {
      throw std::invalid_argument("scenario: events must be time-ordered");
    }
    if (ev.t >= duration) {
      throw std::invalid_argument("scenario: event beyond duration");
    }
    if (!(ev.value > 0.0)) {
      throw std::invalid_argument("scenario: event value must be positive");
    }
    prev = ev.t;
  }
}

double PeriodAudit::residual_fraction() const {
  const double residual = e_in - e_load - e_loss - de_cap - de_ind;
  const double scale =
      std::max({std::abs(e_in), std::abs(e_load), 1e-12});
  return std::abs(residual) / scale;
}

LoopTrace run_scenario(const LoopScenario& scenario, const TsFis& fis,
                       PiState pi, const ConverterParams& params) {
  scenario.validate();
  params.validate();

  const double period = params.period();
  const double dt = period / scenario.substeps_per_period;
  const long n_periods = std::lround(scenario.duration / period);
  if (n_periods < 1) {
    throw std::invalid_argument("scenario: duration under one period");
  }

  PlantState plant;
  plant.v_c = scenario.v2_ref;
  plant.c_out = scenario.c_out;
  plant.r_load = scenario.r_load;
  plant.r_l = scenario.r_l;

  double v2_ref = scenario.v2_ref;
  // seed the filter at the power the initial operating point implies, so
  // the modulator does not start from a spurious zero-power reading
  double p_filt = v2_ref * v2_ref / plant.r_load;
  const double filter_gain = 1.0 - std::exp(-period / kPowerFilterTau);
  const double v2_abort = 2.0 * params.v2_max;

  LoopTrace trace;
  trace.rows.reserve(static_cast<std::size_t>(n_periods));
  std::size_t next_event = 0;

  for (long k = 0; k < n_periods; ++k) {
    const double t_k = static_cast<double>(k) * period;
    while (next_event < scenario.events.size() &&
           scenario.events[next_event].t <= t_k + 0.5 * period) {
      const LoopEvent& ev = scenario.events[next_event];
      if (ev.kind == LoopEvent::Kind::V2Ref) {
        v2_ref = ev.value;
      } else {
        plant.r_load = ev.value;
      }
      ++next_event;
    }

    const double v2_meas = plant.v_c;
    const double io_meas = plant.v_c / plant.r_load;
    const double p_seen = p_filt;
    const double d0 = pi_step(pi, v2_ref - v2_meas, period);
    const DutyCommand duties = evaluate_fis(fis, p_seen, v2_ref);
    const ModulationTriple triple{d0, duties.d1, duties.d2};
    const SwitchingSchedule sched =
        synthesize_waveforms(params, v2_ref, triple);

    const double v_start = plant.v_c;
    const double i_start = plant.i_l;
    PeriodAudit audit;
    double p_accum = 0.0;
    double i_pk = std::abs(plant.i_l);
    int seg = 0;
    for (int m = 0; m < scenario.substeps_per_period; ++m) {
      const double tau = static_cast<double>(m) * dt;
      while (seg + 1 < sched.n_segments && tau >= sched.breakpoints[seg + 1]) {
        ++seg;
      }
      const double vp = sched.vp_level(seg);
      const int s2 = sched.vs_sign[seg];
      const double p_load = plant.v_c * plant.v_c / plant.r_load;
      audit.e_in += vp * plant.i_l * dt;
      audit.e_load += p_load * dt;
      audit.e_loss += plant.r_l * plant.i_l * plant.i_l * dt;
      p_accum += p_load * dt;
      plant_step(plant, params, vp, s2, dt);
      i_pk = std::max(i_pk, std::abs(plant.i_l));
    }
    audit.de_cap =
        0.5 * plant.c_out * (plant.v_c * plant.v_c - v_start * v_start);
    audit.de_ind =
        0.5 * params.l * (plant.i_l * plant.i_l - i_start * i_start);

    p_filt += filter_gain * (p_accum / period - p_filt);

    trace.rows.push_back(LoopRow{t_k, v2_meas, io_meas, p_seen, d0,
                                 duties.d1, duties.d2, i_pk});
    trace.audits.push_back(audit);
    trace.integrator.push_back(pi.integrator);

    if (std::abs(plant.v_c) > v2_abort) {
      trace.diverged = true;
      break;
    }
  }
  return trace;
}

void write_trace_csv(const std::string& path, const LoopTrace& trace) {
  std::string out = "t_s,v2_v,io_a,p_w,d0,d1,d2,ipk_cycle_a\n";
  for (const LoopRow& r : trace.rows) {
    append_g17(out, r.t);
    out += ',';
    append_g17(out, r.v2);
    out += ',';
    append_g17(out, r.i_o);
    out += ',';
    append_g17(out, r.p_meas);
    out += ',';
    append_g17(out, r.d0);
    out += ',';
    append_g17(out, r.d1);
    out += ',';
    append_g17(out, r.d2);
    out += ',';
    append_g17(out, r.i_pk_cycle);
    out += '\n';
  }
  write_text_file(path, out);
}

void save_scenario(const std::string& path, const LoopScenario& scenario) {
  scenario.validate();
  std::string out = "dabtps-scenario v1\n";
  out += "initial " + format_g17(scenario.v2_ref) + ' ' +
         format_g17(scenario.r_load) + '\n';
  out += "duration " + format_g17(scenario.duration) + '\n';
  out += "substeps " + std::to_string(scenario.substeps_per_period) + '\n';
  out += "c_out " + format_g17(scenario.c_out) + '\n';
  out += "r_l " + format_g17(scenario.r_l) + '\n';
  for (const LoopEvent& ev : scenario.events) {
    out += "event " + format_g17(ev.t) + ' ' +
           (ev.kind == LoopEvent::Kind::V2Ref ? std::string("v2_ref")
                                              : std::string("r_load")) +
           ' ' + format_g17(ev.value) + '\n';
  }
  write_text_file(path, out);
}

LoopScenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open: " + path);
  }
  std::string line;
  if (!std::getline(in, line) || line != "dabtps-scenario v1") {
    throw std::runtime_error("not a scenario file: " + path);
  }
  LoopScenario sc;
  bool have_initial = false;
  bool have_duration = false;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "initial") {
      ss >> sc.v2_ref >> sc.r_load;
      have_initial = true;
    } else if (tag == "duration") {
      ss >> sc.duration;
      have_duration = true;
    } else if (tag == "substeps") {
      ss >> sc.substeps_per_period;
    } else if (tag == "c_out") {
      ss >> sc.c_out;
    } else if (tag == "r_l") {
      ss >> sc.r_l;
    } else if (tag == "event") {
      LoopEvent ev;
      std::string kind;
      ss >> ev.t >> kind >> ev.value;
      if (kind == "v2_ref") {
        ev.kind = LoopEvent::Kind::V2Ref;
      } else if (kind == "r_load") {
        ev.kind = LoopEvent::Kind::RLoad;
      } else {
        throw std::runtime_error("scenario file: unknown event kind " + kind);
      }
      sc.events.push_back(ev);
    } else {
      throw std::runtime_error("scenario file: unknown tag " + tag);
    }
    if (ss.fail()) {
      throw std::runtime_error("scenario file: malformed line: " + line);
    }
  }
  if (!have_initial || !have_duration) {
    throw std::runtime_error("scenario file: missing initial or duration");
  }
  sc.validate();
  return sc;
}

}  // namespace dabtps
