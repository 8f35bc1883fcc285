#pragma once

// Particle-swarm search for the optimal duty pair (d1, d2) at one operating
// point (p, v2), minimizing surrogate-predicted peak current subject to the
// converter being able to reach the commanded power.  Infeasible duty pairs
// are penalized by a large constant plus the capability gap, which keeps the
// search total on [0,1]^2 while pulling particles toward feasibility.

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dabtps/converter.hpp"
#include "dabtps/mlp.hpp"
#include "dabtps/rng.hpp"

namespace dabtps {

struct PsoConfig {
  int n_particles = 20;
  int max_iterations = 100;
  // inertia decreases linearly from omega_start at iteration 0 to omega_end
  // at iteration max_iterations - 1
  double omega_start = 0.9;
  double omega_end = 0.4;
  double c1 = 2.05;  // cognitive pull toward the particle's own best
  double c2 = 2.05;  // social pull toward the swarm best
  double v_max = 1.0;  // per-component velocity clamp
  // stop early when the best value improves by less than stagnation_tol
  // (absolute, in total) across the last stagnation_window iterations.  With
  // c1 = c2 = 2.05 the swarm routinely goes 20+ iterations between best
  // improvements while still exploring, so the window must cover such
  // droughts or the search quits far from the optimum.
  int stagnation_window = 40;
  double stagnation_tol = 1e-6;
  // position update as literally printed in the source material
  // (x' = x + old v); the default uses the freshly updated velocity
  bool literal_position_update = false;
  std::uint64_t seed = 0;

  void validate() const;
  double omega_at(int iteration) const;
};

struct Particle {
  std::array<double, 2> x;  // position = (d1, d2)
  std::array<double, 2> v;
  std::array<double, 2> p_best_x;
  double p_best_value;
};

struct Swarm {
  std::vector<Particle> particles;
  std::array<double, 2> g_best_x;
  double g_best_value;
  int iteration = 0;
};

using Objective2d = std::function<double(double d1, double d2)>;

// One particle's velocity/position move with the random draws passed in
// explicitly (r1, r2 are per-dimension uniforms).  Velocity components are
// clamped to [-v_max, v_max]; a position component pushed out of [0, 1] is
// clamped to the bound and its stored velocity component zeroed.  Best
// bookkeeping happens in step_swarm after the objective evaluation.
void update_particle(Particle& p, const std::array<double, 2>& g_best_x,
                     double omega, double c1, double c2,
                     const std::array<double, 2>& r1,
                     const std::array<double, 2>& r2, double v_max,
                     bool literal_position_update);

// Fresh swarm: positions uniform on [0,1]^2, velocities uniform on
// [-0.1, 0.1], drawn per particle as x0, x1, v0, v1; bests initialized from
// the first evaluation.
Swarm init_swarm(const PsoConfig& cfg, const Objective2d& objective, Rng& rng);

// One iteration: draw randoms and move every particle (fixed particle order),
// evaluate the objective at the new positions, then update personal and
// global bests in particle index order.  Throws std::logic_error if the
// global best ever worsens.
void step_swarm(Swarm& swarm, const PsoConfig& cfg,
                const Objective2d& objective, Rng& rng);

struct PsoResult {
  double d1 = 0.0;
  double d2 = 0.0;
  double value = 0.0;
  int iterations = 0;  // iterations actually run (stagnation may stop early)
};

// Core engine over an arbitrary objective on [0,1]^2.
PsoResult minimize_2d(const Objective2d& objective, const PsoConfig& cfg);

// Penalty offset for duty pairs that cannot reach the commanded power.
constexpr double kInfeasiblePenalty = 1e6;

// Surrogate-predicted peak current if (d1, d2) can deliver p at v2, else
// kInfeasiblePenalty + (p - capability) so the penalty shrinks as the duty
// pair approaches feasibility.
double modulation_objective(const ConverterParams& params, const MlpModel& model,
                            double p, double v2, double d1, double d2);

struct NoFeasiblePoint : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// PSO over modulation_objective at one operating point.  Throws
// NoFeasiblePoint if the search terminates with every particle still
// penalized (cannot happen for operating points inside the design ranges of
// a properly sized converter; kept as a defensive error).
PsoResult optimize_point(const ConverterParams& params, const MlpModel& model,
                         double p, double v2, const PsoConfig& cfg);

struct LatticeMin {
  double d1 = 0.0;
  double d2 = 0.0;
  double value = 0.0;
};

// Exhaustive minimum of the objective over the grid_n x grid_n lattice on
// [0,1]^2 (grid_n >= 101).  Ties resolve to the lowest flat index with d1
// varying slowest.  The parallel and serial versions return bit-identical
// results.
LatticeMin brute_force_reference(const Objective2d& objective, int grid_n);
LatticeMin brute_force_reference_serial(const Objective2d& objective,
                                        int grid_n);

struct SurfacePoint {
  double p = 0.0;
  double v2 = 0.0;
  double d1_opt = 0.0;
  double d2_opt = 0.0;
  double i_pk_opt = 0.0;  // surrogate objective value at the optimum
};

// Optimal duty pairs over a rectangular operating grid, row-major with p
// varying slowest.
struct OptimalSurface {
  int n_p = 0;
  int n_v2 = 0;
  std::vector<SurfacePoint> points;
};

// optimize_point at every (p, v2) grid combination.  Each point runs under
// its own seed derived from (master_seed, flat point index), so the surface
// is reproducible and independent of evaluation order.  NoFeasiblePoint is
// rethrown with the offending operating point identified.
OptimalSurface sweep(const ConverterParams& params, const MlpModel& model,
                     const std::vector<double>& p_values,
                     const std::vector<double>& v2_values, const PsoConfig& cfg,
                     std::uint64_t master_seed);
OptimalSurface sweep_serial(const ConverterParams& params,
                            const MlpModel& model,
                            const std::vector<double>& p_values,
                            const std::vector<double>& v2_values,
                            const PsoConfig& cfg, std::uint64_t master_seed);

void write_surface_csv(const std::string& path, const OptimalSurface& surface);
OptimalSurface read_surface_csv(const std::string& path);

}  // namespace dabtps
