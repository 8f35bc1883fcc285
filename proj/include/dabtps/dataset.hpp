#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dabtps/converter.hpp"

namespace dabtps {

// Axis counts for the (P, V2, D1, D2) sampling grid; the ranges come from
// ConverterParams. Every axis is linearly spaced and endpoint-inclusive.
struct GridSpec {
  int n_p = 10;
  int n_v2 = 10;
  int n_d1 = 15;
  int n_d2 = 15;

  void validate() const;  // all counts >= 2
  std::int64_t size() const {
    return std::int64_t(n_p) * n_v2 * n_d1 * n_d2;
  }
};

struct GridPoint {
  double p, v2, d1, d2;
};

// One solved observation. For infeasible commands (power above the duty
// pair's capability) d0 and i_pk are quiet NaN and feasible is false.
struct SampleRecord {
  double p, v2, d1, d2;
  double d0, i_pk;
  bool feasible;
};

struct SampleSet {
  ConverterParams params;
  GridSpec spec;
  std::vector<SampleRecord> records;  // grid order, d2 fastest
};

// Cartesian product in row-major order: p slowest, then v2, d1, d2.
std::vector<GridPoint> build_grid(const ConverterParams& params,
                                  const GridSpec& spec);

// Solve every grid point: capability check, d0 from the power command, then
// the steady-state peak current. The parallel version fans grid points out
// across OpenMP workers and writes results into their grid slots, so the
// output is identical to the serial reference for any worker count.
SampleSet generate_dataset(const ConverterParams& params, const GridSpec& spec);
SampleSet generate_dataset_serial(const ConverterParams& params,
                                  const GridSpec& spec);

// Index triple over the feasible records only; disjoint and exhaustive.
struct SplitIndices {
  std::vector<int> train, validate, test;
};

// Deterministic shuffle under the seed, then counts floor(f_train*N) and
// floor(f_validate*N) with the remainder as test. Counts within floating
// point noise of an exact integer snap to it (so 0.70 of 10 is 7, not 6).
SplitIndices split_dataset(const SampleSet& set, double f_train,
                           double f_validate, double f_test,
                           std::uint64_t seed);

// CSV persistence. Header: p_w,v2_v,d1,d2,d0,i_pk_a,feasible
// Numerics are written with 17 significant digits so doubles round-trip
// bit-exactly; infeasible rows carry nan in the d0 and i_pk_a columns.
void write_samples_csv(const std::string& path, const SampleSet& set);
std::vector<SampleRecord> read_samples_csv(const std::string& path);

// Provenance sidecar next to the CSV (same stem, .meta.json): params, grid,
// seed, and tool version; digest is included when non-empty.
void write_dataset_meta(const std::string& csv_path,
                        const ConverterParams& params, const GridSpec& spec,
                        std::uint64_t seed, const std::string& digest = "");
std::string meta_path_for(const std::string& csv_path);

}  // namespace dabtps
