#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dabtps/converter.hpp"
#include "test_support.hpp"

using namespace dabtps;
using dabtps::testing::bench_params;
using dabtps::testing::random_triple;

namespace {

constexpr double kT = 25e-6;  // half period at fs = 20 kHz

double rel_err(double got, double want) {
  return std::abs(got - want) / std::abs(want);
}

// level of the synthesized schedule at an arbitrary time in [0, period)
std::pair<double, double> levels_at(const SwitchingSchedule& s, double t) {
  int k = s.n_segments - 1;
  for (int j = 0; j + 1 < s.n_segments; ++j) {
    if (t >= s.breakpoints[j] && t < s.breakpoints[j + 1]) {
      k = j;
      break;
    }
  }
  return {s.vp_level(k), s.vs_level(k)};
}

}  // namespace

TEST_CASE("params validation accepts the design case") {
  CHECK_NOTHROW(bench_params().validate());
}

TEST_CASE("params validation rejects an undersized inductor") {
  ConverterParams p = bench_params();
  p.p_max = 3000.0;  // capability at v2_min is ~1428 W, so this cannot fit
  try {
    p.validate();
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("8*fs*Pmax") != std::string::npos);
  }
}

TEST_CASE("modulation triple range checks") {
  CHECK_NOTHROW((ModulationTriple{-1.0, 0.0, 1.0}).validate());
  CHECK_THROWS_AS((ModulationTriple{1.5, 0.5, 0.5}).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS((ModulationTriple{0.0, -0.1, 0.5}).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS((ModulationTriple{0.0, 0.5, 1.1}).validate(),
                  std::invalid_argument);
}

TEST_CASE("single phase shift schedule has four segments") {
  const auto s = synthesize_waveforms(bench_params(), 200.0, {0.5, 1.0, 1.0});
  REQUIRE(s.n_segments == 4);
  CHECK(s.breakpoints[0] == 0.0);
  CHECK(s.breakpoints[1] == doctest::Approx(0.5 * kT).epsilon(1e-12));
  CHECK(s.breakpoints[2] == doctest::Approx(1.0 * kT).epsilon(1e-12));
  CHECK(s.breakpoints[3] == doctest::Approx(1.5 * kT).epsilon(1e-12));
  // vp: + + - -   vs: - + + -
  CHECK(s.vp_sign[0] == 1);
  CHECK(s.vp_sign[1] == 1);
  CHECK(s.vp_sign[2] == -1);
  CHECK(s.vp_sign[3] == -1);
  CHECK(s.vs_sign[0] == -1);
  CHECK(s.vs_sign[1] == 1);
  CHECK(s.vs_sign[2] == 1);
  CHECK(s.vs_sign[3] == -1);
  CHECK(s.vp_mag == 200.0);
  CHECK(s.vs_mag == 200.0);
}

TEST_CASE("aligned full-duty schedule collapses to two segments") {
  const auto s = synthesize_waveforms(bench_params(), 200.0, {0.0, 1.0, 1.0});
  REQUIRE(s.n_segments == 2);
  CHECK(s.breakpoints[0] == 0.0);
  CHECK(s.breakpoints[1] == doctest::Approx(kT).epsilon(1e-12));
  CHECK(s.vp_sign[0] == 1);
  CHECK(s.vs_sign[0] == 1);
  CHECK(s.vp_sign[1] == -1);
  CHECK(s.vs_sign[1] == -1);
}

TEST_CASE("interleaved triple produces all eight segments") {
  // d0=0.3, d1=0.8, d2=0.9: secondary pulse center sits 0.3T after the
  // primary pulse center, so the secondary positive pulse spans
  // [0.25T, 1.15T) and its mirror wraps to [1.25T, 2T) + [0, 0.15T)
  const auto s = synthesize_waveforms(bench_params(), 200.0, {0.3, 0.8, 0.9});
  REQUIRE(s.n_segments == 8);
  const double want[8] = {0.0, 0.15, 0.25, 0.8, 1.0, 1.15, 1.25, 1.8};
  for (int k = 0; k < 8; ++k)
    CHECK(s.breakpoints[k] == doctest::Approx(want[k] * kT).epsilon(1e-9));
  const int vp[8] = {1, 1, 1, 0, -1, -1, -1, 0};
  const int vs[8] = {-1, 0, 1, 1, 1, 0, -1, -1};
  for (int k = 0; k < 8; ++k) {
    CHECK(int(s.vp_sign[k]) == vp[k]);
    CHECK(int(s.vs_sign[k]) == vs[k]);
  }
}

TEST_CASE("schedules are half-wave antisymmetric with zero average") {
  const auto params = bench_params();
  Rng rng(20240);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = random_triple(rng);
    const double v2 = rng.uniform(params.v2_min, params.v2_max);
    const auto s = synthesize_waveforms(params, v2, m);

    REQUIRE(s.n_segments >= 1);
    REQUIRE(s.n_segments <= 8);
    CHECK(s.breakpoints[0] == 0.0);
    for (int k = 1; k < s.n_segments; ++k)
      CHECK(s.breakpoints[k] > s.breakpoints[k - 1]);

    // sample both half periods at offsets away from any edge
    const double half = 0.5 * s.period;
    for (int j = 0; j < 40; ++j) {
      const double t = (j + 0.31) * half / 40.0;
      const auto [vp_a, vs_a] = levels_at(s, t);
      const auto [vp_b, vs_b] = levels_at(s, t + half);
      CHECK(vp_a == doctest::Approx(-vp_b).epsilon(1e-12));
      CHECK(vs_a == doctest::Approx(-vs_b).epsilon(1e-12));
    }

    // each waveform integrates to zero over a period
    double avg_vp = 0.0, avg_vs = 0.0;
    for (int k = 0; k < s.n_segments; ++k) {
      const double dt = s.segment_end(k) - s.breakpoints[k];
      avg_vp += s.vp_level(k) * dt;
      avg_vs += s.vs_level(k) * dt;
    }
    CHECK(std::abs(avg_vp) <= 1e-9 * s.vp_mag * s.period);
    CHECK(std::abs(avg_vs) <= 1e-9 * s.vs_mag * s.period);
  }
}

TEST_CASE("single phase shift steady state matches the hand solution") {
  // d0 = 0.5 at matched voltages: current ramps over [0, T/2) with slope
  // 400 V / L, holds flat, and mirrors; i_pk = 125/7 A, p = 12500/7 W
  const auto sol = solve_steady_state(bench_params(), 200.0, {0.5, 1.0, 1.0});
  CHECK(rel_err(sol.i_pk, 125.0 / 7.0) < 1e-12);
  CHECK(rel_err(sol.p_avg, 12500.0 / 7.0) < 1e-12);
}

TEST_CASE("aligned bridges at matched voltage carry no current") {
  const auto sol = solve_steady_state(bench_params(), 200.0, {0.0, 1.0, 1.0});
  CHECK(std::abs(sol.i_pk) < 1e-12);
  CHECK(std::abs(sol.p_avg) < 1e-9);
}

TEST_CASE("kilowatt-level single phase shift point") {
  // d0 = 0.1683 gives d0*(1-d0) ~ 0.14, i.e. ~1 kW at the design constants
  const auto sol = solve_steady_state(bench_params(), 200.0, {0.1683, 1.0, 1.0});
  CHECK(rel_err(sol.i_pk, 6.010714285714286) < 1e-12);
  CHECK(rel_err(sol.p_avg, 999.8222142857143) < 1e-11);
}

TEST_CASE("solver agrees with the closed-form power expression") {
  const auto params = bench_params();
  for (const double v2 : {160.0, 200.0, 230.0}) {
    for (int i = 0; i <= 40; ++i) {
      const double d0 = -1.0 + 2.0 * i / 40.0;
      const double want = sps_power_closed_form(params, v2, d0);
      const auto sol = solve_steady_state(params, v2, {d0, 1.0, 1.0});
      CHECK(std::abs(sol.p_avg - want) <=
            1e-9 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST_CASE("steady state is periodic zero-mean and symmetric in d0") {
  const auto params = bench_params();
  Rng rng(777);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = random_triple(rng);
    const double v2 = rng.uniform(params.v2_min, params.v2_max);
    const auto sol = solve_steady_state(params, v2, m);
    const auto& s = sol.schedule;

    // period mean of the piecewise-linear current is zero
    double mean = 0.0;
    for (int k = 0; k < s.n_segments; ++k) {
      const double dt = s.segment_end(k) - s.breakpoints[k];
      const double i_b = k + 1 < s.n_segments ? sol.i_at_breakpoints[k + 1]
                                              : sol.i_at_breakpoints[0];
      mean += 0.5 * (sol.i_at_breakpoints[k] + i_b) * dt;
    }
    const double scale = std::max(sol.i_pk, 1e-6);
    CHECK(std::abs(mean / s.period) <= 1e-9 * scale);

    // propagating the slopes across one period returns to the start
    double i_end = sol.i_at_breakpoints[0];
    for (int k = 0; k < s.n_segments; ++k) {
      const double dt = s.segment_end(k) - s.breakpoints[k];
      i_end += (s.vp_level(k) - s.vs_level(k)) / params.l * dt;
    }
    CHECK(std::abs(i_end - sol.i_at_breakpoints[0]) <= 1e-9 * scale);

    // reversing d0 time-reverses the waveforms: power flow flips sign
    // and the current stress is unchanged
    const auto mirror = solve_steady_state(params, v2, {-m.d0, m.d1, m.d2});
    CHECK(std::abs(mirror.p_avg + sol.p_avg) <=
          1e-9 * std::max(std::abs(sol.p_avg), 1e-6));
    CHECK(std::abs(mirror.i_pk - sol.i_pk) <= 1e-9 * scale);
  }
}

TEST_CASE("phase shifts one half period apart wrap to the same schedule") {
  const auto params = bench_params();
  Rng rng(404);
  for (int trial = 0; trial < 50; ++trial) {
    const double d1 = rng.uniform(0.05, 1.0);
    const double d2 = rng.uniform(0.05, 1.0);
    const auto lo = solve_steady_state(params, 200.0, {-1.0, d1, d2});
    const auto hi = solve_steady_state(params, 200.0, {1.0, d1, d2});
    CHECK(lo.schedule.n_segments == hi.schedule.n_segments);
    CHECK(std::abs(lo.p_avg - hi.p_avg) <= 1e-9 * std::max(1.0, std::abs(hi.p_avg)));
    CHECK(std::abs(lo.i_pk - hi.i_pk) <= 1e-9 * std::max(1.0, hi.i_pk));
  }
}

TEST_CASE("full-duty capability reproduces the rated power limit") {
  const auto cap = max_power_capability(bench_params(), 200.0, 1.0, 1.0);
  CHECK(rel_err(cap.p_max, 12500.0 / 7.0) < 1e-6);
  CHECK(std::abs(cap.d0_at_max - 0.5) < 1e-5);
}

TEST_CASE("capability vanishes when either bridge idles") {
  const auto params = bench_params();
  CHECK(max_power_capability(params, 200.0, 0.0, 0.7).p_max ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(max_power_capability(params, 200.0, 0.7, 0.0).p_max ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("capability matches a dense scan at partial duty cycles") {
  const auto params = bench_params();
  const double d1 = 0.8, d2 = 0.9, v2 = 200.0;
  double best = -1.0;
  for (int i = 0; i <= 2000; ++i) {
    const double d0 = static_cast<double>(i) / 2000.0;
    best = std::max(best,
                    solve_steady_state(params, v2, {d0, d1, d2}).p_avg);
  }
  const auto cap = max_power_capability(params, v2, d1, d2);
  CHECK(cap.p_max >= best - 1e-6 * best);
  CHECK(rel_err(cap.p_max, best) < 1e-5);
}

TEST_CASE("phase shift solve hits the requested power") {
  const auto params = bench_params();
  const double d0 = solve_d0_for_power(params, 200.0, 1000.0, 1.0, 1.0);
  CHECK(std::abs(d0 - 0.16833752096446) < 1e-6);
  const auto sol = solve_steady_state(params, 200.0, {d0, 1.0, 1.0});
  CHECK(std::abs(sol.p_avg - 1000.0) <= 1e-3);
  CHECK(std::abs(sol.i_pk - 6.0120543) < 1e-4);
}

TEST_CASE("zero power request lands on zero phase shift") {
  const double d0 = solve_d0_for_power(bench_params(), 200.0, 0.0, 1.0, 1.0);
  CHECK(std::abs(d0) < 1e-5);
}

TEST_CASE("phase shift solve rejects power beyond capability") {
  CHECK_THROWS_AS(solve_d0_for_power(bench_params(), 200.0, 2000.0, 1.0, 1.0),
                  InfeasiblePower);
  CHECK_THROWS_AS(solve_d0_for_power(bench_params(), 200.0, -5.0, 1.0, 1.0),
                  std::invalid_argument);
}

TEST_CASE("phase shift solve tracks random feasible targets") {
  const auto params = bench_params();
  Rng rng(31337);
  int solved = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const double d1 = rng.uniform(0.05, 1.0);
    const double d2 = rng.uniform(0.05, 1.0);
    const double v2 = rng.uniform(params.v2_min, params.v2_max);
    const auto cap = max_power_capability(params, v2, d1, d2);
    if (cap.p_max < 1.0) continue;
    const double target = rng.uniform(0.0, 0.999) * cap.p_max;
    const double d0 = solve_d0_for_power(params, v2, target, d1, d2, cap);
    const auto sol = solve_steady_state(params, v2, {d0, d1, d2});
    CHECK(std::abs(sol.p_avg - target) <= std::max(1e-6 * target, 1e-3));
    ++solved;
  }
  CHECK(solved > 40);
}

TEST_CASE("dense marching reproduces the single phase shift peak") {
  const auto params = bench_params();
  const auto r = dense_integration_oracle(params, 200.0, {0.5, 1.0, 1.0}, 20000);
  CHECK(rel_err(r.i_pk, 125.0 / 7.0) < 1e-3);
  CHECK(rel_err(r.p_avg, 12500.0 / 7.0) < 1e-3);
}

TEST_CASE("dense marching converges toward the segment solver") {
  const auto params = bench_params();
  const ModulationTriple m{0.2913, 0.7771, 0.9107};
  const auto exact = solve_steady_state(params, 200.0, m);
  const auto coarse = dense_integration_oracle(params, 200.0, m, 2000);
  const auto fine = dense_integration_oracle(params, 200.0, m, 20000);
  CHECK(rel_err(fine.i_pk, exact.i_pk) < 1e-3);
  CHECK(rel_err(fine.i_pk, exact.i_pk) <= rel_err(coarse.i_pk, exact.i_pk) + 1e-9);
}

TEST_CASE("dense marching rejects too-coarse stepping") {
  CHECK_THROWS_AS(
      dense_integration_oracle(bench_params(), 200.0, {0.5, 1.0, 1.0}, 500),
      std::invalid_argument);
}

TEST_CASE("mode signatures track edge ordering not timing") {
  const auto params = bench_params();
  const auto a = classify_mode(synthesize_waveforms(params, 200.0, {0.5, 1.0, 1.0}));
  const auto b = classify_mode(synthesize_waveforms(params, 200.0, {0.4, 1.0, 1.0}));
  CHECK(a == b);

  const auto c = classify_mode(synthesize_waveforms(params, 200.0, {0.3, 0.8, 0.9}));
  const auto d = classify_mode(synthesize_waveforms(params, 200.0, {0.05, 0.8, 0.9}));
  CHECK_FALSE(c == d);

  const auto e = classify_mode(synthesize_waveforms(params, 200.0, {0.3, 0.8, 0.9}));
  CHECK(c == e);
}
