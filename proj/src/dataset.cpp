#include "dabtps/dataset.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "dabtps/rng.hpp"
#include "dabtps/text_io.hpp"
#include "dabtps/version.hpp"

namespace dabtps {

namespace {

double axis_value(double lo, double hi, int i, int n) {
  if (i == n - 1) return hi;  // exact endpoint inclusion
  return lo + (hi - lo) * double(i) / double(n - 1);
}

SampleRecord solve_grid_point(const ConverterParams& params,
                              const GridPoint& g) {
  SampleRecord rec{g.p, g.v2, g.d1, g.d2,
                   std::numeric_limits<double>::quiet_NaN(),
                   std::numeric_limits<double>::quiet_NaN(), false};
  const auto cap = max_power_capability(params, g.v2, g.d1, g.d2);
  if (cap.p_max < g.p) return rec;  // infeasible is data, not failure
  rec.d0 = solve_d0_for_power(params, g.v2, g.p, g.d1, g.d2, cap);
  rec.i_pk = solve_steady_state(params, g.v2, {rec.d0, g.d1, g.d2}).i_pk;
  rec.feasible = true;
  return rec;
}

// counts whose exact value is an integer must not lose it to representation
// error (0.70 * 10 evaluates to 6.999...96 in binary)
std::int64_t fraction_count(double fraction, std::int64_t n) {
  const double x = fraction * double(n);
  const double r = std::round(x);
  if (std::abs(x - r) < 1e-6 * std::max(1.0, std::abs(x)))
    return std::int64_t(r);
  return std::int64_t(std::floor(x));
}

}  // namespace

void GridSpec::validate() const {
  if (n_p < 2 || n_v2 < 2 || n_d1 < 2 || n_d2 < 2)
    throw std::invalid_argument("grid needs at least 2 points per axis");
}

std::vector<GridPoint> build_grid(const ConverterParams& params,
                                  const GridSpec& spec) {
  params.validate();
  spec.validate();
  std::vector<GridPoint> grid;
  grid.reserve(std::size_t(spec.size()));
  for (int ip = 0; ip < spec.n_p; ++ip) {
    const double p = axis_value(params.p_min, params.p_max, ip, spec.n_p);
    for (int iv = 0; iv < spec.n_v2; ++iv) {
      const double v2 = axis_value(params.v2_min, params.v2_max, iv, spec.n_v2);
      for (int i1 = 0; i1 < spec.n_d1; ++i1) {
        const double d1 = axis_value(0.0, 1.0, i1, spec.n_d1);
        for (int i2 = 0; i2 < spec.n_d2; ++i2) {
          const double d2 = axis_value(0.0, 1.0, i2, spec.n_d2);
          grid.push_back({p, v2, d1, d2});
        }
      }
    }
  }
  return grid;
}

SampleSet generate_dataset(const ConverterParams& params,
                           const GridSpec& spec) {
  const auto grid = build_grid(params, spec);
  SampleSet set{params, spec, {}};
  set.records.resize(grid.size());
  const std::int64_t n = std::int64_t(grid.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (std::int64_t i = 0; i < n; ++i)
    set.records[std::size_t(i)] = solve_grid_point(params, grid[std::size_t(i)]);
  return set;
}

SampleSet generate_dataset_serial(const ConverterParams& params,
                                  const GridSpec& spec) {
  const auto grid = build_grid(params, spec);
  SampleSet set{params, spec, {}};
  set.records.reserve(grid.size());
  for (const auto& g : grid) set.records.push_back(solve_grid_point(params, g));
  return set;
}

SplitIndices split_dataset(const SampleSet& set, double f_train,
                           double f_validate, double f_test,
                           std::uint64_t seed) {
  if (f_train < 0.0 || f_validate < 0.0 || f_test < 0.0)
    throw std::invalid_argument("split fractions must be non-negative");
  if (std::abs(f_train + f_validate + f_test - 1.0) > 1e-12)
    throw std::invalid_argument("split fractions must sum to 1");

  std::vector<int> feasible;
  for (int i = 0; i < int(set.records.size()); ++i)
    if (set.records[std::size_t(i)].feasible) feasible.push_back(i);

  Rng rng(seed);
  shuffle_in_place(feasible, rng);

  const std::int64_t n = std::int64_t(feasible.size());
  const std::int64_t n_train = fraction_count(f_train, n);
  const std::int64_t n_val = fraction_count(f_validate, n);
  if (n_train + n_val > n)
    throw std::invalid_argument("split fractions leave no room for test");

  SplitIndices out;
  out.train.assign(feasible.begin(), feasible.begin() + n_train);
  out.validate.assign(feasible.begin() + n_train,
                      feasible.begin() + n_train + n_val);
  out.test.assign(feasible.begin() + n_train + n_val, feasible.end());
  return out;
}

void write_samples_csv(const std::string& path, const SampleSet& set) {
  std::string text = "p_w,v2_v,d1,d2,d0,i_pk_a,feasible\n";
  text.reserve(text.size() + set.records.size() * 96);
  for (const auto& r : set.records) {
    append_g17(text, r.p);
    text += ',';
    append_g17(text, r.v2);
    text += ',';
    append_g17(text, r.d1);
    text += ',';
    append_g17(text, r.d2);
    text += ',';
    append_g17(text, r.d0);
    text += ',';
    append_g17(text, r.i_pk);
    text += ',';
    text += r.feasible ? '1' : '0';
    text += '\n';
  }
  write_text_file(path, text);
}

std::vector<SampleRecord> read_samples_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<SampleRecord> records;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line != "p_w,v2_v,d1,d2,d0,i_pk_a,feasible")
        throw std::runtime_error(path + ": unexpected CSV header: " + line);
      continue;
    }
    const auto cells = split(line, ',');
    if (cells.size() != 7)
      throw std::runtime_error(path + ": expected 7 columns, got line: " + line);
    SampleRecord r{};
    r.p = parse_double(cells[0]);
    r.v2 = parse_double(cells[1]);
    r.d1 = parse_double(cells[2]);
    r.d2 = parse_double(cells[3]);
    r.d0 = parse_double(cells[4]);
    r.i_pk = parse_double(cells[5]);
    const long f = parse_long(cells[6]);
    if (f != 0 && f != 1)
      throw std::runtime_error(path + ": feasible flag must be 0 or 1");
    r.feasible = f == 1;
    records.push_back(r);
  }
  return records;
}

std::string meta_path_for(const std::string& csv_path) {
  const std::size_t dot = csv_path.rfind('.');
  const std::size_t slash = csv_path.rfind('/');
  const bool has_ext =
      dot != std::string::npos && (slash == std::string::npos || dot > slash);
  return (has_ext ? csv_path.substr(0, dot) : csv_path) + ".meta.json";
}

void write_dataset_meta(const std::string& csv_path,
                        const ConverterParams& params, const GridSpec& spec,
                        std::uint64_t seed, const std::string& digest) {
  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["seed"] = seed;
  j["params"] = {{"v1", params.v1},         {"fs", params.fs},
                 {"l", params.l},           {"n", params.n},
                 {"p_min", params.p_min},   {"p_max", params.p_max},
                 {"v2_min", params.v2_min}, {"v2_max", params.v2_max}};
  j["grid"] = {{"n_p", spec.n_p},
               {"n_v2", spec.n_v2},
               {"n_d1", spec.n_d1},
               {"n_d2", spec.n_d2}};
  if (!digest.empty()) j["config_digest"] = digest;
  write_text_file(meta_path_for(csv_path), j.dump(2) + "\n");
}

}  // namespace dabtps
