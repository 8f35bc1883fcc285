#include "dabtps/pso.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "dabtps/text_io.hpp"

namespace dabtps {

void PsoConfig::validate() const {
  if (n_particles < 2) throw std::invalid_argument("need at least 2 particles");
  if (max_iterations < 1) throw std::invalid_argument("need >= 1 iteration");
  if (!(omega_start >= omega_end))
    throw std::invalid_argument("inertia schedule must be non-increasing");
  if (c1 < 0.0 || c2 < 0.0)
    throw std::invalid_argument("acceleration coefficients must be >= 0");
  if (!(v_max > 0.0)) throw std::invalid_argument("v_max must be positive");
  if (stagnation_window < 1)
    throw std::invalid_argument("stagnation window must be >= 1");
  if (stagnation_tol < 0.0)
    throw std::invalid_argument("stagnation tolerance must be >= 0");
}

double PsoConfig::omega_at(int iteration) const {
  if (max_iterations <= 1) return omega_start;
  const int m = std::clamp(iteration, 0, max_iterations - 1);
  return omega_start +
         (omega_end - omega_start) * double(m) / double(max_iterations - 1);
}

void update_particle(Particle& p, const std::array<double, 2>& g_best_x,
                     double omega, double c1, double c2,
                     const std::array<double, 2>& r1,
                     const std::array<double, 2>& r2, double v_max,
                     bool literal_position_update) {
  const std::array<double, 2> v_old = p.v;
  for (int k = 0; k < 2; ++k) {
    double v =
        omega * p.v[std::size_t(k)] +
        c1 * r1[std::size_t(k)] * (p.p_best_x[std::size_t(k)] - p.x[std::size_t(k)]) +
        c2 * r2[std::size_t(k)] * (g_best_x[std::size_t(k)] - p.x[std::size_t(k)]);
    v = std::clamp(v, -v_max, v_max);
    p.v[std::size_t(k)] = v;
    const double step =
        literal_position_update ? v_old[std::size_t(k)] : v;
    double x = p.x[std::size_t(k)] + step;
    if (x < 0.0) {
      x = 0.0;
      p.v[std::size_t(k)] = 0.0;
    } else if (x > 1.0) {
      x = 1.0;
      p.v[std::size_t(k)] = 0.0;
    }
    p.x[std::size_t(k)] = x;
  }
}

namespace {

// personal/global best refresh in fixed particle order, so the result is
// independent of how the objective evaluations were scheduled
void refresh_bests(Swarm& swarm, const std::vector<double>& values) {
  for (std::size_t i = 0; i < swarm.particles.size(); ++i) {
    auto& p = swarm.particles[i];
    if (values[i] < p.p_best_value) {
      p.p_best_value = values[i];
      p.p_best_x = p.x;
    }
  }
  for (const auto& p : swarm.particles) {
    if (p.p_best_value < swarm.g_best_value) {
      swarm.g_best_value = p.p_best_value;
      swarm.g_best_x = p.p_best_x;
    }
  }
}

void evaluate_all(const Swarm& swarm, const Objective2d& objective,
                  std::vector<double>& values) {
  const int n = int(swarm.particles.size());
  values.resize(std::size_t(n));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const auto& x = swarm.particles[std::size_t(i)].x;
    values[std::size_t(i)] = objective(x[0], x[1]);
  }
}

}  // namespace

Swarm init_swarm(const PsoConfig& cfg, const Objective2d& objective, Rng& rng) {
  cfg.validate();
  Swarm swarm;
  swarm.particles.resize(std::size_t(cfg.n_particles));
  for (auto& p : swarm.particles) {
    p.x = {rng.next_double(), rng.next_double()};
    p.v = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
    p.p_best_x = p.x;
    p.p_best_value = std::numeric_limits<double>::infinity();
  }
  std::vector<double> values;
  evaluate_all(swarm, objective, values);
  swarm.g_best_value = std::numeric_limits<double>::infinity();
  refresh_bests(swarm, values);
  return swarm;
}

void step_swarm(Swarm& swarm, const PsoConfig& cfg,
                const Objective2d& objective, Rng& rng) {
  const double omega = cfg.omega_at(swarm.iteration);
  const double prev_best = swarm.g_best_value;
  for (auto& p : swarm.particles) {
    const std::array<double, 2> r1 = {rng.next_double(), rng.next_double()};
    const std::array<double, 2> r2 = {rng.next_double(), rng.next_double()};
    update_particle(p, swarm.g_best_x, omega, cfg.c1, cfg.c2, r1, r2,
                    cfg.v_max, cfg.literal_position_update);
  }
  std::vector<double> values;
  evaluate_all(swarm, objective, values);
  refresh_bests(swarm, values);
  ++swarm.iteration;
  if (swarm.g_best_value > prev_best)
    throw std::logic_error("swarm best worsened between iterations");
}

PsoResult minimize_2d(const Objective2d& objective, const PsoConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Swarm swarm = init_swarm(cfg, objective, rng);
  // best-value history for the stagnation stop: quit once the total
  // improvement across the last stagnation_window iterations falls under
  // stagnation_tol
  std::vector<double> history{swarm.g_best_value};
  while (swarm.iteration < cfg.max_iterations) {
    step_swarm(swarm, cfg, objective, rng);
    history.push_back(swarm.g_best_value);
    if (int(history.size()) > cfg.stagnation_window) {
      const double window_gain =
          history[history.size() - 1 - std::size_t(cfg.stagnation_window)] -
          swarm.g_best_value;
      if (window_gain < cfg.stagnation_tol) break;
    }
  }
  return {swarm.g_best_x[0], swarm.g_best_x[1], swarm.g_best_value,
          swarm.iteration};
}

double modulation_objective(const ConverterParams& params, const MlpModel& model,
                            double p, double v2, double d1, double d2) {
  const double capability = max_power_capability(params, v2, d1, d2).p_max;
  if (capability >= p) return model.forward({p, v2, d1, d2});
  return kInfeasiblePenalty + (p - capability);
}

PsoResult optimize_point(const ConverterParams& params, const MlpModel& model,
                         double p, double v2, const PsoConfig& cfg) {
  params.validate();
  if (!(p > 0.0)) throw std::invalid_argument("power target must be positive");
  if (!(v2 > 0.0)) throw std::invalid_argument("v2 must be positive");
  const auto objective = [&](double d1, double d2) {
    return modulation_objective(params, model, p, v2, d1, d2);
  };
  const PsoResult result = minimize_2d(objective, cfg);
  if (result.value >= kInfeasiblePenalty) {
    std::ostringstream msg;
    msg << "no feasible duty pair found at p=" << p << " W, v2=" << v2 << " V";
    throw NoFeasiblePoint(msg.str());
  }
  return result;
}

LatticeMin brute_force_reference_serial(const Objective2d& objective,
                                        int grid_n) {
  if (grid_n < 101) throw std::invalid_argument("reference grid needs >= 101");
  // divide per index (not multiply by a step) so decimal lattice points like
  // 30/100 come out as the nearest double to 0.3 exactly
  const double denom = double(grid_n - 1);
  LatticeMin best{0.0, 0.0, std::numeric_limits<double>::infinity()};
  for (int i = 0; i < grid_n; ++i) {
    const double d1 = double(i) / denom;
    for (int j = 0; j < grid_n; ++j) {
      const double d2 = double(j) / denom;
      const double value = objective(d1, d2);
      if (value < best.value) best = {d1, d2, value};
    }
  }
  return best;
}

LatticeMin brute_force_reference(const Objective2d& objective, int grid_n) {
  if (grid_n < 101) throw std::invalid_argument("reference grid needs >= 101");
  const double denom = double(grid_n - 1);
  std::vector<LatticeMin> row_best(
      std::size_t(grid_n),
      {0.0, 0.0, std::numeric_limits<double>::infinity()});
#pragma omp parallel for schedule(dynamic, 4)
  for (int i = 0; i < grid_n; ++i) {
    const double d1 = double(i) / denom;
    LatticeMin best = row_best[std::size_t(i)];
    for (int j = 0; j < grid_n; ++j) {
      const double d2 = double(j) / denom;
      const double value = objective(d1, d2);
      if (value < best.value) best = {d1, d2, value};
    }
    row_best[std::size_t(i)] = best;
  }
  // rows reduced in ascending order with strict comparison, so ties resolve
  // to the lowest flat index exactly like the serial scan
  LatticeMin best = row_best[0];
  for (int i = 1; i < grid_n; ++i)
    if (row_best[std::size_t(i)].value < best.value)
      best = row_best[std::size_t(i)];
  return best;
}

namespace {

template <typename PointFn>
OptimalSurface sweep_impl(const ConverterParams& params, const MlpModel& model,
                          const std::vector<double>& p_values,
                          const std::vector<double>& v2_values,
                          const PsoConfig& cfg, std::uint64_t master_seed,
                          PointFn&& run_points) {
  params.validate();
  cfg.validate();
  if (p_values.empty() || v2_values.empty())
    throw std::invalid_argument("sweep needs a non-empty operating grid");

  OptimalSurface surface;
  surface.n_p = int(p_values.size());
  surface.n_v2 = int(v2_values.size());
  surface.points.resize(p_values.size() * v2_values.size());

  run_points(int(surface.points.size()), [&](int flat) {
    const double p = p_values[std::size_t(flat) / v2_values.size()];
    const double v2 = v2_values[std::size_t(flat) % v2_values.size()];
    PsoConfig point_cfg = cfg;
    point_cfg.seed = derive_seed(master_seed, std::uint64_t(flat));
    const PsoResult r = optimize_point(params, model, p, v2, point_cfg);
    if (!(r.value > 0.0))
      throw std::runtime_error("surrogate predicts non-positive current");
    surface.points[std::size_t(flat)] = {p, v2, r.d1, r.d2, r.value};
  });
  return surface;
}

}  // namespace

OptimalSurface sweep_serial(const ConverterParams& params,
                            const MlpModel& model,
                            const std::vector<double>& p_values,
                            const std::vector<double>& v2_values,
                            const PsoConfig& cfg, std::uint64_t master_seed) {
  return sweep_impl(params, model, p_values, v2_values, cfg, master_seed,
                    [](int n, auto&& body) {
                      for (int flat = 0; flat < n; ++flat) body(flat);
                    });
}

OptimalSurface sweep(const ConverterParams& params, const MlpModel& model,
                     const std::vector<double>& p_values,
                     const std::vector<double>& v2_values, const PsoConfig& cfg,
                     std::uint64_t master_seed) {
  return sweep_impl(
      params, model, p_values, v2_values, cfg, master_seed,
      [](int n, auto&& body) {
        // operating points are independent; exceptions are collected and the
        // one with the lowest flat index is rethrown so behavior matches the
        // serial sweep
        std::exception_ptr error;
        int error_index = n;
#pragma omp parallel for schedule(dynamic, 1)
        for (int flat = 0; flat < n; ++flat) {
          try {
            body(flat);
          } catch (...) {
#pragma omp critical
            if (flat < error_index) {
              error_index = flat;
              error = std::current_exception();
            }
          }
        }
        if (error) std::rethrow_exception(error);
      });
}

void write_surface_csv(const std::string& path, const OptimalSurface& surface) {
  if (surface.points.size() !=
      std::size_t(surface.n_p) * std::size_t(surface.n_v2))
    throw std::invalid_argument("surface grid dims do not match point count");
  std::string text = "p_w,v2_v,d1_opt,d2_opt,i_pk_opt_a\n";
  for (const auto& pt : surface.points) {
    append_g17(text, pt.p);
    text += ',';
    append_g17(text, pt.v2);
    text += ',';
    append_g17(text, pt.d1_opt);
    text += ',';
    append_g17(text, pt.d2_opt);
    text += ',';
    append_g17(text, pt.i_pk_opt);
    text += '\n';
  }
  write_text_file(path, text);
}

OptimalSurface read_surface_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "p_w,v2_v,d1_opt,d2_opt,i_pk_opt_a")
    throw std::runtime_error(path + ": not an optimal-surface CSV");

  OptimalSurface surface;
  std::vector<double> p_axis, v2_axis;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 5)
      throw std::runtime_error(path + ": expected 5 columns, got: " + line);
    SurfacePoint pt;
    pt.p = parse_double(cells[0]);
    pt.v2 = parse_double(cells[1]);
    pt.d1_opt = parse_double(cells[2]);
    pt.d2_opt = parse_double(cells[3]);
    pt.i_pk_opt = parse_double(cells[4]);
    if (p_axis.empty() || pt.p != p_axis.back()) p_axis.push_back(pt.p);
    if (p_axis.size() == 1) v2_axis.push_back(pt.v2);
    surface.points.push_back(pt);
  }
  surface.n_p = int(p_axis.size());
  surface.n_v2 = int(v2_axis.size());
  if (surface.points.size() !=
      std::size_t(surface.n_p) * std::size_t(surface.n_v2))
    throw std::runtime_error(path + ": rows do not form a rectangular grid");
  for (std::size_t i = 0; i < surface.points.size(); ++i) {
    const auto& pt = surface.points[i];
    if (pt.p != p_axis[i / v2_axis.size()] ||
        pt.v2 != v2_axis[i % v2_axis.size()])
      throw std::runtime_error(path + ": rows do not form a rectangular grid");
  }
  return surface;
}

}  // namespace dabtps
