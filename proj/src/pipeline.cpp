#include "dabtps/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "dabtps/text_io.hpp"
#include "dabtps/validation.hpp"

namespace dabtps {

namespace {

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    v[std::size_t(i)] = lo + (hi - lo) * double(i) / double(n - 1);
  v.front() = lo;
  v.back() = hi;
  return v;
}

std::string hex16(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[std::size_t(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

void key_num(std::string& out, const char* key, double v) {
  out += key;
  out += ' ';
  append_g17(out, v);
  out += '\n';
}

void key_int(std::string& out, const char* key, long long v) {
  out += key;
  out += ' ';
  out += std::to_string(v);
  out += '\n';
}

// canonical key-value body shared by save_config and the stage fingerprints
std::string params_text(const ConverterParams& p) {
  std::string s;
  key_num(s, "v1", p.v1);
  key_num(s, "fs", p.fs);
  key_num(s, "l", p.l);
  key_num(s, "n", p.n);
  key_num(s, "p_min", p.p_min);
  key_num(s, "p_max", p.p_max);
  key_num(s, "v2_min", p.v2_min);
  key_num(s, "v2_max", p.v2_max);
  return s;
}

std::string grid_text(const GridSpec& g) {
  std::string s;
  key_int(s, "grid_p", g.n_p);
  key_int(s, "grid_v2", g.n_v2);
  key_int(s, "grid_d1", g.n_d1);
  key_int(s, "grid_d2", g.n_d2);
  return s;
}

std::string train_text(const TrainConfig& t) {
  std::string s;
  key_num(s, "lr", t.learning_rate);
  key_num(s, "l2", t.l2);
  key_int(s, "max_epochs", t.max_epochs);
  key_int(s, "batch_size", t.batch_size);
  key_int(s, "patience", t.patience);
  key_int(s, "log_target", t.log_target ? 1 : 0);
  return s;
}

std::string pso_text(const PsoConfig& p) {
  std::string s;
  key_int(s, "pso_particles", p.n_particles);
  key_int(s, "pso_iterations", p.max_iterations);
  key_num(s, "pso_omega_start", p.omega_start);
  key_num(s, "pso_omega_end", p.omega_end);
  key_num(s, "pso_c1", p.c1);
  key_num(s, "pso_c2", p.c2);
  key_num(s, "pso_vmax", p.v_max);
  key_int(s, "pso_stagnation_window", p.stagnation_window);
  key_num(s, "pso_stagnation_tol", p.stagnation_tol);
  return s;
}

std::string fingerprint_of(const std::string& input) {
  return hex16(fnv1a64(input));
}

std::string sidecar_path(const std::string& artifact) {
  return artifact + ".digest";
}

void require_artifact(const char* stage, const std::string& path,
                      const char* producer) {
  if (!file_exists(path))
    throw StageError(stage, "missing upstream artifact " + path + "; run " +
                                producer + " first");
}

// the surrogate shape used throughout the study
const std::vector<int> kSurrogateDims{4, 128, 32, 1};
constexpr double kTrainFraction = 0.70;
constexpr double kValFraction = 0.15;
constexpr double kTestFraction = 0.15;

}  // namespace

void PipelineConfig::validate() const {
  params.validate();
  grid.validate();
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (!(train.learning_rate > 0.0)) fail("lr must be positive");
  if (!(train.l2 >= 0.0)) fail("l2 must be non-negative");
  if (train.max_epochs < 1) fail("max_epochs must be >= 1");
  if (train.batch_size < 1) fail("batch_size must be >= 1");
  if (train.patience < 1) fail("patience must be >= 1");
  pso.validate();
  // the fuzzy fit needs at least a 3x3 surface to identify its consequents
  if (surface_p < 3 || surface_v2 < 3) fail("surface axes need >= 3 points");
  if (!(pi_kp >= 0.0) || !(pi_ki >= 0.0)) fail("pi gains must be >= 0");
  if (!(c_out > 0.0)) fail("c_out must be positive");
  if (!(r_l >= 0.0)) fail("r_l must be >= 0");
  if (substeps < 1000) fail("substeps must be >= 1000");
  if (out_dir.empty()) fail("out_dir must be set");
}

std::vector<double> PipelineConfig::surface_p_axis() const {
  return linspace(params.p_min, params.p_max, surface_p);
}

std::vector<double> PipelineConfig::surface_v2_axis() const {
  return linspace(params.v2_min, params.v2_max, surface_v2);
}

std::string PipelineConfig::dataset_path() const {
  return out_dir + "/dataset.csv";
}
std::string PipelineConfig::model_path() const { return out_dir + "/model.txt"; }
std::string PipelineConfig::train_stats_path() const {
  return out_dir + "/train_stats.txt";
}
std::string PipelineConfig::surface_path() const {
  return out_dir + "/surface.csv";
}
std::string PipelineConfig::fis_path() const { return out_dir + "/fis.txt"; }
std::string PipelineConfig::comparison_path() const {
  return out_dir + "/comparison.csv";
}
std::string PipelineConfig::report_path() const {
  return out_dir + "/report.txt";
}
std::string PipelineConfig::trace_path(int scenario_index) const {
  return out_dir + "/trace_" + std::to_string(scenario_index) + ".csv";
}
std::string PipelineConfig::scenario_path(int scenario_index) const {
  return out_dir + "/scenario_" + std::to_string(scenario_index) + ".txt";
}

PipelineConfig default_config() {
  PipelineConfig cfg;
  cfg.params.v1 = 200.0;
  cfg.params.fs = 20e3;
  cfg.params.l = 140e-6;
  cfg.params.n = 1.0;
  cfg.params.p_min = 100.0;
  cfg.params.p_max = 1000.0;
  cfg.params.v2_min = 160.0;
  cfg.params.v2_max = 230.0;
  // grid and pso keep their struct defaults; the training recipe overrides
  // the generic ones: small batches buy more adaptive steps per epoch, and
  // the epoch cap doubles as the stopping rule because validation loss is
  // still falling when it hits
  cfg.train.max_epochs = 6000;
  cfg.train.batch_size = 32;
  cfg.train.patience = 6000;
  cfg.train.log_target = true;
  return cfg;
}

PipelineConfig load_config(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "dabtps-config v1")
    throw std::runtime_error(path + ": not a config file (bad header)");

  PipelineConfig cfg = default_config();
  bool seed_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto sep = line.find(' ');
    if (sep == std::string::npos)
      throw std::runtime_error(path + ": bad config line: " + line);
    const std::string key = line.substr(0, sep);
    const std::string value = line.substr(sep + 1);
    if (value.empty())
      throw std::runtime_error(path + ": empty value for key " + key);

    auto num = [&] { return parse_double(value); };
    auto integer = [&] { return parse_long(value); };

    if (key == "v1") cfg.params.v1 = num();
    else if (key == "fs") cfg.params.fs = num();
    else if (key == "l") cfg.params.l = num();
    else if (key == "n") cfg.params.n = num();
    else if (key == "p_min") cfg.params.p_min = num();
    else if (key == "p_max") cfg.params.p_max = num();
    else if (key == "v2_min") cfg.params.v2_min = num();
    else if (key == "v2_max") cfg.params.v2_max = num();
    else if (key == "grid_p") cfg.grid.n_p = int(integer());
    else if (key == "grid_v2") cfg.grid.n_v2 = int(integer());
    else if (key == "grid_d1") cfg.grid.n_d1 = int(integer());
    else if (key == "grid_d2") cfg.grid.n_d2 = int(integer());
    else if (key == "lr") cfg.train.learning_rate = num();
    else if (key == "l2") cfg.train.l2 = num();
    else if (key == "max_epochs") cfg.train.max_epochs = int(integer());
    else if (key == "batch_size") cfg.train.batch_size = int(integer());
    else if (key == "patience") cfg.train.patience = int(integer());
    else if (key == "log_target") cfg.train.log_target = integer() != 0;
    else if (key == "pso_particles") cfg.pso.n_particles = int(integer());
    else if (key == "pso_iterations") cfg.pso.max_iterations = int(integer());
    else if (key == "pso_omega_start") cfg.pso.omega_start = num();
    else if (key == "pso_omega_end") cfg.pso.omega_end = num();
    else if (key == "pso_c1") cfg.pso.c1 = num();
    else if (key == "pso_c2") cfg.pso.c2 = num();
    else if (key == "pso_vmax") cfg.pso.v_max = num();
    else if (key == "pso_stagnation_window")
      cfg.pso.stagnation_window = int(integer());
    else if (key == "pso_stagnation_tol") cfg.pso.stagnation_tol = num();
    else if (key == "surface_p") cfg.surface_p = int(integer());
    else if (key == "surface_v2") cfg.surface_v2 = int(integer());
    else if (key == "pi_kp") cfg.pi_kp = num();
    else if (key == "pi_ki") cfg.pi_ki = num();
    else if (key == "c_out") cfg.c_out = num();
    else if (key == "r_l") cfg.r_l = num();
    else if (key == "substeps") cfg.substeps = int(integer());
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "master_seed") {
      const long long s = integer();
      if (s < 0) throw std::runtime_error(path + ": master_seed must be >= 0");
      cfg.master_seed = std::uint64_t(s);
      seed_seen = true;
    } else if (key == "scenario") {
      cfg.scenarios.push_back(value);
    } else {
      throw std::runtime_error(path + ": unknown config key " + key);
    }
  }
  if (!seed_seen)
    throw std::runtime_error(
        path + ": master_seed is required (runs are never clock-seeded)");
  cfg.validate();
  return cfg;
}

void save_config(const std::string& path, const PipelineConfig& cfg) {
  std::string out = "dabtps-config v1\n";
  out += "# converter design case\n";
  out += params_text(cfg.params);
  out += "# dataset sampling grid\n";
  out += grid_text(cfg.grid);
  out += "# surrogate training\n";
  out += train_text(cfg.train);
  out += "# duty-pair search\n";
  out += pso_text(cfg.pso);
  out += "# optimal-surface operating grid\n";
  key_int(out, "surface_p", cfg.surface_p);
  key_int(out, "surface_v2", cfg.surface_v2);
  out += "# closed loop\n";
  key_num(out, "pi_kp", cfg.pi_kp);
  key_num(out, "pi_ki", cfg.pi_ki);
  key_num(out, "c_out", cfg.c_out);
  key_num(out, "r_l", cfg.r_l);
  key_int(out, "substeps", cfg.substeps);
  out += "# run\n";
  out += "out_dir " + cfg.out_dir + '\n';
  key_int(out, "master_seed", (long long)cfg.master_seed);
  for (const auto& s : cfg.scenarios) out += "scenario " + s + '\n';
  write_text_file(path, out);
}

// --- digests -----------------------------------------------------------------

std::string file_digest(const std::string& path) {
  return hex16(fnv1a64(read_text_file(path)));
}

bool artifact_fresh(const std::string& artifact_path,
                    const std::string& fingerprint) {
  if (!file_exists(artifact_path) || !file_exists(sidecar_path(artifact_path)))
    return false;
  std::istringstream in(read_text_file(sidecar_path(artifact_path)));
  std::string line;
  if (!std::getline(in, line) || line != "dabtps-digest v1") return false;
  std::string fp, content;
  while (std::getline(in, line)) {
    const auto cells = split(line, ' ');
    if (cells.size() != 2) return false;
    if (cells[0] == "fingerprint") fp = cells[1];
    else if (cells[0] == "content") content = cells[1];
  }
  return fp == fingerprint && !content.empty() &&
         content == file_digest(artifact_path);
}

void stamp_artifact(const std::string& artifact_path,
                    const std::string& fingerprint) {
  std::string text = "dabtps-digest v1\n";
  text += "fingerprint " + fingerprint + '\n';
  text += "content " + file_digest(artifact_path) + '\n';
  write_text_file(sidecar_path(artifact_path), text);
}

// --- stages ------------------------------------------------------------------

StageStatus run_gen_data(const PipelineConfig& cfg) {
  const char* stage = "gen-data";
  try {
    cfg.validate();
    const std::string path = cfg.dataset_path();
    const std::string fp = fingerprint_of(
        "gen-data|" + params_text(cfg.params) + grid_text(cfg.grid) + "seed " +
        std::to_string(cfg.dataset_seed()));
    StageStatus st{stage, false, "", 0.0};
    const double t0 = now_seconds();
    if (!artifact_fresh(path, fp)) {
      const SampleSet set = generate_dataset(cfg.params, cfg.grid);
      write_samples_csv(path, set);
      write_dataset_meta(path, cfg.params, cfg.grid, cfg.dataset_seed(),
                         file_digest(path));
      stamp_artifact(path, fp);
      st.rebuilt = true;
    }
    st.digest = file_digest(path);
    st.seconds = now_seconds() - t0;
    return st;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

StageStatus run_train_nn(const PipelineConfig& cfg) {
  const char* stage = "train-nn";
  try {
    cfg.validate();
    require_artifact(stage, cfg.dataset_path(), "gen-data");
    const std::string path = cfg.model_path();
    std::string input = "train-nn|dataset ";
    input += file_digest(cfg.dataset_path());
    input += '\n';
    input += train_text(cfg.train);
    input += "split ";
    append_g17(input, kTrainFraction);
    input += ' ';
    append_g17(input, kValFraction);
    input += ' ';
    append_g17(input, kTestFraction);
    input += "\nseeds " + std::to_string(cfg.split_seed()) + ' ' +
             std::to_string(cfg.train_seed()) + '\n';
    const std::string fp = fingerprint_of(input);

    StageStatus st{stage, false, "", 0.0};
    const double t0 = now_seconds();
    if (!artifact_fresh(path, fp) || !file_exists(cfg.train_stats_path())) {
      SampleSet set;
      set.params = cfg.params;
      set.spec = cfg.grid;
      set.records = read_samples_csv(cfg.dataset_path());
      const auto splits = split_dataset(set, kTrainFraction, kValFraction,
                                        kTestFraction, cfg.split_seed());
      const auto train_d = to_regression_data(set, splits.train);
      const auto val_d = to_regression_data(set, splits.validate);
      const auto test_d = to_regression_data(set, splits.test);

      MlpModel model =
          make_mlp(kSurrogateDims, derive_seed(cfg.train_seed(), 0));
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(cfg.train_seed(), 1);
      const auto report = train(model, train_d, val_d, tc);
      save_model(path, model);
      stamp_artifact(path, fp);

      TrainStats stats;
      stats.epochs_run = report.epochs_run;
      stats.best_epoch = report.best_epoch;
      stats.best_val_loss = report.best_val_loss;
      stats.wall_seconds = now_seconds() - t0;
      stats.dev_train = evaluate_deviation(model, train_d);
      stats.dev_val = evaluate_deviation(model, val_d);
      stats.dev_test = evaluate_deviation(model, test_d);
      save_train_stats(cfg.train_stats_path(), stats);
      st.rebuilt = true;
    }
    st.digest = file_digest(path);
    st.seconds = now_seconds() - t0;
    return st;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

StageStatus run_optimize(const PipelineConfig& cfg, bool emit_plots) {
  const char* stage = "optimize";
  try {
    cfg.validate();
    require_artifact(stage, cfg.model_path(), "train-nn");
    const std::string path = cfg.surface_path();
    std::string input = "optimize|model ";
    input += file_digest(cfg.model_path());
    input += '\n';
    input += params_text(cfg.params);
    input += pso_text(cfg.pso);
    key_int(input, "surface_p", cfg.surface_p);
    key_int(input, "surface_v2", cfg.surface_v2);
    input += "seed " + std::to_string(cfg.sweep_seed()) + '\n';
    const std::string fp = fingerprint_of(input);

    StageStatus st{stage, false, "", 0.0};
    const double t0 = now_seconds();
    if (!artifact_fresh(path, fp)) {
      const MlpModel model = load_model(cfg.model_path());
      const OptimalSurface surface =
          sweep(cfg.params, model, cfg.surface_p_axis(), cfg.surface_v2_axis(),
                cfg.pso, cfg.sweep_seed());
      write_surface_csv(path, surface);
      stamp_artifact(path, fp);
      st.rebuilt = true;
    }
    if (emit_plots)
      emit_surface_figures(cfg, read_surface_csv(path));
    st.digest = file_digest(path);
    st.seconds = now_seconds() - t0;
    return st;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

StageStatus run_fit_fis(const PipelineConfig& cfg) {
  const char* stage = "fit-fis";
  try {
    cfg.validate();
    require_artifact(stage, cfg.surface_path(), "optimize");
    const std::string path = cfg.fis_path();
    std::string input = "fit-fis|surface ";
    input += file_digest(cfg.surface_path());
    input += '\n';
    input += params_text(cfg.params);
    const std::string fp = fingerprint_of(input);

    StageStatus st{stage, false, "", 0.0};
    const double t0 = now_seconds();
    if (!artifact_fresh(path, fp)) {
      const OptimalSurface surface = read_surface_csv(cfg.surface_path());
      const FisRanges ranges{cfg.params.p_min, cfg.params.p_max,
                             cfg.params.v2_min, cfg.params.v2_max};
      const TsFis fis = fit_fis(surface, ranges);
      save_fis(path, fis);
      stamp_artifact(path, fp);
      st.rebuilt = true;
    }
    st.digest = file_digest(path);
    st.seconds = now_seconds() - t0;
    return st;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void save_train_stats(const std::string& path, const TrainStats& stats) {
  std::string out = "dabtps-train-stats v1\n";
  key_int(out, "epochs_run", stats.epochs_run);
  key_int(out, "best_epoch", stats.best_epoch);
  key_num(out, "best_val_loss", stats.best_val_loss);
  key_num(out, "wall_seconds", stats.wall_seconds);
  key_num(out, "dev_train_avg_pct", stats.dev_train.avg_pct);
  key_num(out, "dev_train_max_pct", stats.dev_train.max_pct);
  key_num(out, "dev_val_avg_pct", stats.dev_val.avg_pct);
  key_num(out, "dev_val_max_pct", stats.dev_val.max_pct);
  key_num(out, "dev_test_avg_pct", stats.dev_test.avg_pct);
  key_num(out, "dev_test_max_pct", stats.dev_test.max_pct);
  write_text_file(path, out);
}

TrainStats load_train_stats(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "dabtps-train-stats v1")
    throw std::runtime_error(path + ": not a train-stats file");
  TrainStats s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ' ');
    if (cells.size() != 2)
      throw std::runtime_error(path + ": bad stats line: " + line);
    const std::string& key = cells[0];
    const double v = parse_double(cells[1]);
    if (key == "epochs_run") s.epochs_run = int(v);
    else if (key == "best_epoch") s.best_epoch = int(v);
    else if (key == "best_val_loss") s.best_val_loss = v;
    else if (key == "wall_seconds") s.wall_seconds = v;
    else if (key == "dev_train_avg_pct") s.dev_train.avg_pct = v;
    else if (key == "dev_train_max_pct") s.dev_train.max_pct = v;
    else if (key == "dev_val_avg_pct") s.dev_val.avg_pct = v;
    else if (key == "dev_val_max_pct") s.dev_val.max_pct = v;
    else if (key == "dev_test_avg_pct") s.dev_test.avg_pct = v;
    else if (key == "dev_test_max_pct") s.dev_test.max_pct = v;
    else throw std::runtime_error(path + ": unknown stats key " + key);
  }
  return s;
}

// --- comparison --------------------------------------------------------------

std::vector<ComparisonRow> compare_sweep(const ConverterParams& params,
                                         const TsFis& fis,
                                         const LutBaseline& lut,
                                         const std::vector<double>& p_values,
                                         const std::vector<double>& v2_values) {
  params.validate();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<ComparisonRow> rows;
  rows.reserve(p_values.size() * v2_values.size() * 3);
  for (double p : p_values) {
    for (double v2 : v2_values) {
      const DutyCommand lut_cmd = lut_lookup(lut, p, v2);
      const DutyCommand fis_cmd = evaluate_fis(fis, p, v2);
      const struct {
        const char* name;
        double d1, d2;
      } strategies[3] = {{"SPSM", 1.0, 1.0},
                         {"LUT-TPSM", lut_cmd.d1, lut_cmd.d2},
                         {"AI-TPSM", fis_cmd.d1, fis_cmd.d2}};
      for (const auto& s : strategies) {
        ComparisonRow row;
        row.p = p;
        row.v2 = v2;
        row.strategy = s.name;
        row.d1 = s.d1;
        row.d2 = s.d2;
        try {
          row.d0 = solve_d0_for_power(params, v2, p, s.d1, s.d2);
          row.i_pk =
              solve_steady_state(params, v2, {row.d0, s.d1, s.d2}).i_pk;
          row.feasible = true;
        } catch (const InfeasiblePower&) {
          row.d0 = nan;
          row.i_pk = nan;
          row.feasible = false;
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

void write_comparison_csv(const std::string& path,
                          const std::vector<ComparisonRow>& rows) {
  std::string out = "p_w,v2_v,strategy,d0,d1,d2,i_pk_a\n";
  for (const auto& r : rows) {
    append_g17(out, r.p);
    out += ',';
    append_g17(out, r.v2);
    out += ',';
    out += r.strategy;
    out += ',';
    append_g17(out, r.d0);
    out += ',';
    append_g17(out, r.d1);
    out += ',';
    append_g17(out, r.d2);
    out += ',';
    append_g17(out, r.i_pk);
    out += '\n';
  }
  write_text_file(path, out);
}

std::vector<double> comparison_v2_values(const PipelineConfig& cfg) {
  const double lo = cfg.params.v2_min;
  const double hi = cfg.params.v2_max;
  double mid = (lo + hi) / 2.0;
  if (lo < 200.0 && 200.0 < hi) mid = 200.0;
  return {lo, mid, hi};
}

StageStatus run_compare(const PipelineConfig& cfg, bool emit_plots) {
  const char* stage = "compare";
  try {
    cfg.validate();
    require_artifact(stage, cfg.surface_path(), "optimize");
    require_artifact(stage, cfg.fis_path(), "fit-fis");
    const std::string path = cfg.comparison_path();
    std::string input = "compare|surface ";
    input += file_digest(cfg.surface_path());
    input += " fis ";
    input += file_digest(cfg.fis_path());
    input += '\n';
    input += params_text(cfg.params);
    key_int(input, "surface_p", cfg.surface_p);
    for (double v2 : comparison_v2_values(cfg)) key_num(input, "v2", v2);
    const std::string fp = fingerprint_of(input);

    StageStatus st{stage, false, "", 0.0};
    const double t0 = now_seconds();
    const bool fresh = artifact_fresh(path, fp);
    if (!fresh || emit_plots) {
      const OptimalSurface surface = read_surface_csv(cfg.surface_path());
      const TsFis fis = load_fis(cfg.fis_path());
      const LutBaseline lut = make_lut(surface);
      const auto rows = compare_sweep(cfg.params, fis, lut,
                                      cfg.surface_p_axis(),
                                      comparison_v2_values(cfg));
      if (!fresh) {
        write_comparison_csv(path, rows);
        stamp_artifact(path, fp);
        st.rebuilt = true;
      }
      if (emit_plots) emit_comparison_figures(cfg, rows);
    }
    st.digest = file_digest(path);
    st.seconds = now_seconds() - t0;
    return st;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// --- closed loop -------------------------------------------------------------

std::vector<LoopScenario> builtin_scenarios(const PipelineConfig& cfg) {
  LoopScenario a;
  a.v2_ref = 200.0;
  a.r_load = 40.0;
  a.duration = 0.2;
  a.substeps_per_period = cfg.substeps;
  a.c_out = cfg.c_out;
  a.r_l = cfg.r_l;
  a.events = {{0.1, LoopEvent::Kind::V2Ref, 160.0}};

  LoopScenario b = a;
  b.v2_ref = 230.0;
  b.r_load = 52.9;
  b.events = {{0.1, LoopEvent::Kind::V2Ref, 200.0}};
  return {a, b};
}

std::vector<StageStatus> run_loop_stage(const PipelineConfig& cfg) {
  const char* stage = "run-loop";
  try {
    cfg.validate();
    require_artifact(stage, cfg.fis_path(), "fit-fis");
    const TsFis fis = load_fis(cfg.fis_path());

    // resolve the scenario list to files on disk so the fingerprints can
    // hash exactly what ran
    std::vector<std::string> files = cfg.scenarios;
    if (files.empty()) {
      const auto builtins = builtin_scenarios(cfg);
      for (std::size_t i = 0; i < builtins.size(); ++i) {
        const std::string p = cfg.scenario_path(int(i) + 1);
        save_scenario(p, builtins[i]);
        files.push_back(p);
      }
    }

    std::vector<StageStatus> statuses;
    for (std::size_t i = 0; i < files.size(); ++i) {
      const int index = int(i) + 1;
      const LoopScenario scenario = load_scenario(files[i]);
      const std::string path = cfg.trace_path(index);
      std::string input = "run-loop|fis ";
      input += file_digest(cfg.fis_path());
      input += " scenario ";
      input += file_digest(files[i]);
      input += '\n';
      input += params_text(cfg.params);
      key_num(input, "pi_kp", cfg.pi_kp);
      key_num(input, "pi_ki", cfg.pi_ki);
      const std::string fp = fingerprint_of(input);

      StageStatus st{stage + std::string(":") + std::to_string(index), false,
                     "", 0.0};
      const double t0 = now_seconds();
      if (!artifact_fresh(path, fp)) {
        PiState pi;
        pi.kp = cfg.pi_kp;
        pi.ki = cfg.pi_ki;
        const LoopTrace trace = run_scenario(scenario, fis, pi, cfg.params);
        write_trace_csv(path, trace);
        stamp_artifact(path, fp);
        st.rebuilt = true;
      }
      st.digest = file_digest(path);
      st.seconds = now_seconds() - t0;
      statuses.push_back(std::move(st));
    }
    return statuses;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// --- figures -----------------------------------------------------------------

void emit_surface_figures(const PipelineConfig& cfg,
                          const OptimalSurface& surface) {
  std::string d1_csv = "p_w,v2_v,d1_opt\n";
  std::string d2_csv = "p_w,v2_v,d2_opt\n";
  std::string ipk_csv = "p_w,v2_v,i_pk_a\n";
  for (const auto& pt : surface.points) {
    append_g17(d1_csv, pt.p);
    d1_csv += ',';
    append_g17(d1_csv, pt.v2);
    d1_csv += ',';
    append_g17(d1_csv, pt.d1_opt);
    d1_csv += '\n';

    append_g17(d2_csv, pt.p);
    d2_csv += ',';
    append_g17(d2_csv, pt.v2);
    d2_csv += ',';
    append_g17(d2_csv, pt.d2_opt);
    d2_csv += '\n';

    // report the exact solver's view of the stored optimum, not the
    // surrogate objective value the search minimized
    double i_pk = std::numeric_limits<double>::quiet_NaN();
    try {
      const double d0 =
          solve_d0_for_power(cfg.params, pt.v2, pt.p, pt.d1_opt, pt.d2_opt);
      i_pk = solve_steady_state(cfg.params, pt.v2, {d0, pt.d1_opt, pt.d2_opt})
                 .i_pk;
    } catch (const InfeasiblePower&) {
    }
    append_g17(ipk_csv, pt.p);
    ipk_csv += ',';
    append_g17(ipk_csv, pt.v2);
    ipk_csv += ',';
    append_g17(ipk_csv, i_pk);
    ipk_csv += '\n';
  }
  write_text_file(cfg.out_dir + "/fig14a.csv", d1_csv);
  write_text_file(cfg.out_dir + "/fig14b.csv", d2_csv);
  write_text_file(cfg.out_dir + "/fig15.csv", ipk_csv);
}

void emit_comparison_figures(const PipelineConfig& cfg,
                             const std::vector<ComparisonRow>& rows) {
  const auto v2s = comparison_v2_values(cfg);
  const char* names[3] = {"fig26.csv", "fig27.csv", "fig28.csv"};
  for (int k = 0; k < 3; ++k) {
    std::string csv = "p_w,spsm_i_pk_a,lut_tpsm_i_pk_a,ai_tpsm_i_pk_a\n";
    // rows arrive grouped in strategy triples per (p, v2) point
    for (std::size_t i = 0; i + 2 < rows.size(); i += 3) {
      if (rows[i].v2 != v2s[std::size_t(k)]) continue;
      append_g17(csv, rows[i].p);
      csv += ',';
      append_g17(csv, rows[i].i_pk);  // SPSM
      csv += ',';
      append_g17(csv, rows[i + 1].i_pk);  // LUT-TPSM
      csv += ',';
      append_g17(csv, rows[i + 2].i_pk);  // AI-TPSM
      csv += '\n';
    }
    write_text_file(cfg.out_dir + "/" + names[k], csv);
  }
}

// --- whole run ---------------------------------------------------------------

PipelineRun run_pipeline(const PipelineConfig& cfg, bool emit_plots) {
  cfg.validate();
  PipelineRun run;
  run.stages.push_back(run_gen_data(cfg));
  run.stages.push_back(run_train_nn(cfg));
  run.stages.push_back(run_optimize(cfg, emit_plots));
  run.stages.push_back(run_fit_fis(cfg));

  const double t0 = now_seconds();
  const ValidationReport report = run_validation(cfg, emit_plots);
  run.stages.push_back({"validate", true, "", now_seconds() - t0});
  write_report(cfg, run.stages, report);
  run.stages.back().digest = file_digest(cfg.report_path());

  run.validation.n_pass = report.n_pass();
  run.validation.n_criteria = int(report.criteria.size());
  return run;
}

}  // namespace dabtps
