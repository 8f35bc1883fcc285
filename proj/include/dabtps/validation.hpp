#pragma once

// The ten acceptance checks the study is judged by, each returning a
// pass/fail verdict with its measured numbers. All tolerances are pinned in
// the implementation, not configurable.

#include <string>
#include <vector>

#include "dabtps/pipeline.hpp"

namespace dabtps {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;   // measured values, human-readable
  double seconds = 0.0;
};

struct ValidationReport {
  std::vector<CriterionResult> criteria;
  int n_pass() const;
  bool all_pass() const;
};

// Evaluates all ten checks against the design case and the run's artifacts
// (dataset, model, training stats, surface, and fuzzy controller must exist
// — run the pipeline stages first; StageError("validate") otherwise).
// Writes comparison.csv and the two step-study trace CSVs as evidence;
// emit_plots additionally writes the comparison figure CSVs.
ValidationReport run_validation(const PipelineConfig& config,
                                bool emit_plots = false);

// Plain-text run summary: stage table, training stats, per-criterion lines,
// and the reporting notes. Overwrites report.txt in out_dir.
void write_report(const PipelineConfig& config,
                  const std::vector<StageStatus>& stages,
                  const ValidationReport& report);

// Stage rows for a report assembled outside run_pipeline (the standalone
// validate path): content digests of whatever is on disk, no timings.
std::vector<StageStatus> artifact_statuses(const PipelineConfig& config);

}  // namespace dabtps
