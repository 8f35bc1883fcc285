#include "dabtps/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "dabtps/pipeline.hpp"
#include "dabtps/validation.hpp"

namespace dabtps {

namespace {

void print_stage(const StageStatus& st) {
  std::printf("[%s] %s  digest %s  %.2f s\n", st.stage.c_str(),
              st.rebuilt ? "rebuilt" : "resumed", st.digest.c_str(),
              st.seconds);
}

void print_criteria(const ValidationReport& report) {
  for (const auto& c : report.criteria)
    std::printf("%2d %s %s: %s\n", c.id, c.pass ? "PASS" : "FAIL",
                c.name.c_str(), c.detail.c_str());
  std::printf("passed %d/%d\n", report.n_pass(), int(report.criteria.size()));
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"AI-designed triple-phase-shift modulation pipeline for a "
               "dual-active-bridge converter"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  long long seed = 0;
  int epochs = 0;
  int batch = 0;
  bool emit_plots = false;
  auto* opt_config =
      app.add_option("-c,--config", config_path, "config file to load");
  auto* opt_out = app.add_option("--out-dir", out_dir,
                                 "artifact directory (overrides config)");
  auto* opt_seed = app.add_option(
      "--seed", seed, "master seed; required unless the config file sets it");
  auto* opt_epochs =
      app.add_option("--epochs", epochs, "training epoch cap override");
  auto* opt_batch =
      app.add_option("--batch", batch, "training batch size override");
  app.add_flag("--emit-plots-data", emit_plots,
               "also write the per-figure CSVs (fig14a ... fig28)");

  const char* subcommands[] = {"gen-data", "train-nn", "optimize", "fit-fis",
                               "compare",  "run-loop", "validate", "pipeline"};
  const char* briefs[] = {
      "solve the converter over the sampling grid and write the dataset",
      "fit the peak-current surrogate on the dataset",
      "sweep the duty-pair search over the operating grid",
      "fit the fuzzy modulator to the optimal surface",
      "tabulate SPSM / LUT-TPSM / AI-TPSM current stress",
      "simulate the closed-loop step scenarios",
      "evaluate the acceptance checks against existing artifacts",
      "run every stage in order, then validate"};
  for (std::size_t i = 0; i < std::size(subcommands); ++i)
    app.add_subcommand(subcommands[i], briefs[i])->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n(run with --help for usage)\n";
    return 2;
  }

  // assemble the effective config; anything wrong here is a usage error
  PipelineConfig cfg;
  try {
    cfg = opt_config->count() ? load_config(config_path) : default_config();
    if (opt_seed->count()) {
      if (seed < 0) throw std::runtime_error("--seed must be >= 0");
      cfg.master_seed = std::uint64_t(seed);
    } else if (!opt_config->count()) {
      throw std::runtime_error(
          "a master seed is required: pass --seed N or a config file with "
          "master_seed (runs are never clock-seeded)");
    }
    if (opt_out->count()) cfg.out_dir = out_dir;
    if (opt_epochs->count()) cfg.train.max_epochs = epochs;
    if (opt_batch->count()) cfg.train.batch_size = batch;
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "gen-data") {
      print_stage(run_gen_data(cfg));
    } else if (cmd == "train-nn") {
      print_stage(run_train_nn(cfg));
      const TrainStats stats = load_train_stats(cfg.train_stats_path());
      std::printf(
          "epochs %d (best %d), wall %.1f s, test deviation %.2f%% avg / "
          "%.2f%% max\n",
          stats.epochs_run, stats.best_epoch, stats.wall_seconds,
          stats.dev_test.avg_pct, stats.dev_test.max_pct);
    } else if (cmd == "optimize") {
      print_stage(run_optimize(cfg, emit_plots));
    } else if (cmd == "fit-fis") {
      print_stage(run_fit_fis(cfg));
    } else if (cmd == "compare") {
      print_stage(run_compare(cfg, emit_plots));
    } else if (cmd == "run-loop") {
      for (const auto& st : run_loop_stage(cfg)) print_stage(st);
    } else if (cmd == "validate") {
      const ValidationReport report = run_validation(cfg, emit_plots);
      write_report(cfg, artifact_statuses(cfg), report);
      print_criteria(report);
      std::printf("report written to %s\n", cfg.report_path().c_str());
      return report.all_pass() ? 0 : 1;
    } else if (cmd == "pipeline") {
      const PipelineRun run = run_pipeline(cfg, emit_plots);
      for (const auto& st : run.stages) print_stage(st);
      std::printf("validation: passed %d/%d (details in %s)\n",
                  run.validation.n_pass, run.validation.n_criteria,
                  cfg.report_path().c_str());
      return run.validation.all_pass() ? 0 : 1;
    }
    return 0;
  } catch (const StageError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"dabtps"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(int(argv.size()), argv.data());
}

}  // namespace dabtps
