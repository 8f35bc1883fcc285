#pragma once

// Run orchestration: the flat-text run configuration, the artifact chain
// (dataset -> surrogate -> optimal surface -> fuzzy controller) with
// digest-based resume, the modulation-strategy comparison study, and the
// closed-loop batch runner.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dabtps/converter.hpp"
#include "dabtps/dataset.hpp"
#include "dabtps/fis.hpp"
#include "dabtps/loop.hpp"
#include "dabtps/mlp.hpp"
#include "dabtps/pso.hpp"
#include "dabtps/rng.hpp"

namespace dabtps {

// One run's complete knob set, loadable from a "dabtps-config v1" file of
// `key value` lines (# comments and blank lines allowed). Unset keys keep
// the defaults below, which reproduce the desk-scale design study.
// `master_seed` is the one mandatory key: every random stream in the run
// derives from it, and a config file that omits it is rejected rather than
// silently seeded from the clock.
struct PipelineConfig {
  ConverterParams params;  // design-case values; see default_config()
  GridSpec grid;           // dataset sampling axes
  TrainConfig train;       // surrogate recipe (its .seed is derived, not a key)
  PsoConfig pso;           // per-point search knobs (.seed derived per point)
  int surface_p = 10;      // optimal-surface operating grid
  int surface_v2 = 8;
  double pi_kp = 0.004;    // closed-loop controller gains
  double pi_ki = 4.0;
  double c_out = 470e-6;   // output capacitance, farads
  double r_l = 0.02;       // inductor series resistance, ohms
  int substeps = 2000;     // plant substeps per switching period
  std::vector<std::string> scenarios;  // extra closed-loop scenario files
  std::string out_dir = "out";
  std::uint64_t master_seed = 0;

  void validate() const;

  // endpoint-inclusive linear axes for the optimal surface
  std::vector<double> surface_p_axis() const;
  std::vector<double> surface_v2_axis() const;

  // artifact locations inside out_dir
  std::string dataset_path() const;
  std::string model_path() const;
  std::string train_stats_path() const;
  std::string surface_path() const;
  std::string fis_path() const;
  std::string comparison_path() const;
  std::string report_path() const;
  std::string trace_path(int scenario_index) const;    // 1-based
  std::string scenario_path(int scenario_index) const; // built-ins, 1-based

  // per-stage random streams, all derived from master_seed
  std::uint64_t dataset_seed() const { return derive_seed(master_seed, 1); }
  std::uint64_t split_seed() const { return derive_seed(master_seed, 2); }
  std::uint64_t train_seed() const { return derive_seed(master_seed, 3); }
  std::uint64_t sweep_seed() const { return derive_seed(master_seed, 4); }
};

// Desk-scale defaults. master_seed is left at 0: set it before running, or
// load a config file (which must carry it).
PipelineConfig default_config();

// load_config starts from default_config(), applies the file's keys (any
// unknown key is an error), requires master_seed, and validates. save_config
// writes every key, so a saved file documents all defaults.
PipelineConfig load_config(const std::string& path);
void save_config(const std::string& path, const PipelineConfig& config);

// --- digest-based stage resume ---------------------------------------------
// Every artifact gets a `<file>.digest` sidecar recording a fingerprint of
// the inputs that produced it (the relevant config keys plus upstream
// artifact digests) and the artifact's own content hash. A stage whose
// artifact passes both checks is skipped; anything stale is rebuilt. Rerunning
// with an identical config is therefore a no-op that leaves identical digests.

std::string file_digest(const std::string& path);  // 16-hex content hash
bool artifact_fresh(const std::string& artifact_path,
                    const std::string& fingerprint);
void stamp_artifact(const std::string& artifact_path,
                    const std::string& fingerprint);

struct StageStatus {
  std::string stage;
  bool rebuilt = false;  // false: resumed from a fresh artifact
  std::string digest;    // content digest of the stage's primary artifact
  double seconds = 0.0;
};

// Failures inside a stage carry the stage name both in the message and as a
// field; whatever the stage wrote before failing stays on disk.
struct StageError : std::runtime_error {
  std::string stage;
  StageError(const std::string& stage_name, const std::string& message)
      : std::runtime_error("[" + stage_name + "] " + message),
        stage(stage_name) {}
};

// The four artifact-producing stages. Each requires its upstream artifact to
// exist already (StageError otherwise) — run_pipeline chains them in order.
StageStatus run_gen_data(const PipelineConfig& config);
StageStatus run_train_nn(const PipelineConfig& config);
StageStatus run_optimize(const PipelineConfig& config, bool emit_plots = false);
StageStatus run_fit_fis(const PipelineConfig& config);

// Training bookkeeping persisted next to the model. Wall time feeds the
// report; the file is not digest-tracked because timings differ run to run.
struct TrainStats {
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  double wall_seconds = 0.0;
  Deviation dev_train{0.0, 0.0};
  Deviation dev_val{0.0, 0.0};
  Deviation dev_test{0.0, 0.0};
};
void save_train_stats(const std::string& path, const TrainStats& stats);
TrainStats load_train_stats(const std::string& path);

// --- strategy comparison ----------------------------------------------------

struct ComparisonRow {
  double p = 0.0, v2 = 0.0;
  std::string strategy;  // "SPSM" | "LUT-TPSM" | "AI-TPSM"
  double d0 = 0.0, d1 = 0.0, d2 = 0.0;
  double i_pk = 0.0;  // always from the exact solver, never the surrogate
  bool feasible = true;
};

// Three rows per operating point (SPSM, LUT-TPSM, AI-TPSM in that order; p
// varies slowest, then v2). Duties per strategy: full squares / nearest
// stored optimum / fuzzy controller output. d0 then solves the power command
// and i_pk comes from the exact steady state. A strategy whose duties cannot
// reach the commanded power is flagged infeasible (d0 and i_pk NaN) without
// disturbing the other strategies at that point.
std::vector<ComparisonRow> compare_sweep(const ConverterParams& params,
                                         const TsFis& fis,
                                         const LutBaseline& lut,
                                         const std::vector<double>& p_values,
                                         const std::vector<double>& v2_values);

// Header exactly: p_w,v2_v,strategy,d0,d1,d2,i_pk_a
void write_comparison_csv(const std::string& path,
                          const std::vector<ComparisonRow>& rows);

// The study voltages: the range ends plus 200 V when it lies inside the
// range (the design-case nominal), else the midpoint.
std::vector<double> comparison_v2_values(const PipelineConfig& config);

StageStatus run_compare(const PipelineConfig& config, bool emit_plots = false);

// --- closed-loop batch -------------------------------------------------------

// The two reference step studies:
//   1: 40 ohm load, v2_ref 200 V stepping to 160 V mid-run
//   2: 52.9 ohm load, v2_ref 230 V stepping to 200 V mid-run
// Plant knobs (c_out, r_l, substeps) come from the config.
std::vector<LoopScenario> builtin_scenarios(const PipelineConfig& config);

// Runs config.scenarios (or the built-ins when the list is empty, writing
// their scenario files to out_dir) through the fitted fuzzy controller with
// the configured PI gains; one trace CSV per scenario, digest-tracked.
std::vector<StageStatus> run_loop_stage(const PipelineConfig& config);

// --- figure data -------------------------------------------------------------

// Plot-ready CSVs in out_dir keyed to the figures they reproduce: fig14a /
// fig14b (optimal d1 / d2 over the operating plane), fig15 (peak current at
// the stored optima, re-evaluated by the exact solver), fig26 / fig27 /
// fig28 (strategy comparison at the three study voltages, ascending).
void emit_surface_figures(const PipelineConfig& config,
                          const OptimalSurface& surface);
void emit_comparison_figures(const PipelineConfig& config,
                             const std::vector<ComparisonRow>& rows);

// --- whole run ---------------------------------------------------------------

struct ValidationSummary {
  int n_pass = 0;
  int n_criteria = 0;
  bool all_pass() const { return n_pass == n_criteria; }
};

struct PipelineRun {
  std::vector<StageStatus> stages;
  ValidationSummary validation;
};

// gen-data -> train-nn -> optimize -> fit-fis -> validate. Stages resume from
// fresh artifacts; the validate step always recomputes its metrics and
// rewrites report.txt and comparison.csv.
PipelineRun run_pipeline(const PipelineConfig& config, bool emit_plots = false);

}  // namespace dabtps
