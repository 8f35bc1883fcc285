#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dabtps/dataset.hpp"

namespace dabtps {

// Per-feature min-max mapping to [0, 1]. Degenerate (constant) features get
// hi = lo + 1 so the mapping stays invertible.
struct Normalizer {
  std::vector<double> lo, hi;

  double norm(double v, std::size_t k) const {
    return (v - lo[k]) / (hi[k] - lo[k]);
  }
  double denorm(double v, std::size_t k) const {
    return lo[k] + v * (hi[k] - lo[k]);
  }
};

Normalizer fit_normalizer(const std::vector<double>& values, int n_features);

// How the scalar target is represented inside the normalized training
// space: as-is, or through a natural log so that squared error penalizes
// relative rather than absolute deviation — the right fit when targets span
// orders of magnitude and accuracy is judged in percent.
enum class OutputTransform { linear, log };

// Fully connected network with rectifier hidden layers and an identity
// output layer. Weights are row-major [out][in] per layer. The surrogate
// uses dims {4, 128, 32, 1}; the module itself is shape-agnostic so tests
// can probe hand-sized models.
struct MlpModel {
  std::vector<int> dims;
  std::vector<std::vector<double>> w;  // per layer, out*in row-major
  std::vector<std::vector<double>> b;  // per layer, out
  Normalizer in_norm;                  // dims.front() features
  Normalizer out_norm;                 // dims.back() features
  OutputTransform out_transform = OutputTransform::linear;

  int n_layers() const { return int(dims.size()) - 1; }

  // normalized-space pass; in has dims.front() values, out dims.back()
  void forward_normalized(const double* in, double* out) const;

  // physical units in and out, for the 4-input 1-output surrogate shape;
  // undoes the output transform, so predictions are always in amperes
  double forward(const std::array<double, 4>& x) const;
};

// Scaled-uniform fan-in initialization (U[-1/sqrt(fan_in), +1/sqrt(fan_in)])
// with identity normalizers; deterministic under the seed.
MlpModel make_mlp(const std::vector<int>& dims, std::uint64_t seed);

// Inputs/targets in normalized space, one row per sample.
struct NormalizedBatch {
  const double* x;  // n * in_dim
  const double* y;  // n * out_dim
  int n;
};

struct Gradients {
  double loss;
  std::vector<std::vector<double>> w, b;  // same shapes as the model
};

// Mean squared error on normalized targets plus l2 * (sum of squared
// weights); biases are exempt from the penalty. Gradients are exact.
Gradients compute_gradients(const MlpModel& model, const NormalizedBatch& batch,
                            double l2);

struct TrainConfig {
  double learning_rate = 1e-3;
  double l2 = 1e-5;
  int max_epochs = 1000;
  int batch_size = 256;
  int patience = 50;  // epochs without validation improvement before stopping
  bool log_target = false;  // train against ln(y); requires positive targets
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> train_loss;  // per epoch, shuffled-batch average
  std::vector<double> val_loss;    // per epoch, plain MSE on validation
  int epochs_run = 0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

struct DivergenceDetected : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Physical-unit training pairs.
struct RegressionData {
  std::vector<std::array<double, 4>> x;
  std::vector<double> y;
};

RegressionData to_regression_data(const SampleSet& set,
                                  const std::vector<int>& indices);

// Adagrad (per-parameter accumulator G += g^2, step lr*g/(sqrt(G)+1e-8))
// over shuffled mini-batches; fits the model's normalizers from the training
// split; keeps and restores the parameters with the lowest validation loss.
// Deterministic under cfg.seed. Throws DivergenceDetected on non-finite loss.
TrainReport train(MlpModel& model, const RegressionData& train_data,
                  const RegressionData& val_data, const TrainConfig& cfg);

struct Deviation {
  double avg_pct, max_pct;
};

// Percentage deviation 100*|predicted - actual|/actual per record; targets
// must be strictly positive.
Deviation evaluate_deviation(const MlpModel& model, const RegressionData& data);

// Portable text model file, 17-significant-digit decimals; round-trips the
// model bit-exactly.
void save_model(const std::string& path, const MlpModel& model);
MlpModel load_model(const std::string& path);

}  // namespace dabtps
