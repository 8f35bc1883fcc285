#include "dabtps/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "dabtps/rng.hpp"
#include "dabtps/text_io.hpp"

namespace dabtps {

namespace {

void check_shape(const MlpModel& m) {
  if (m.dims.size() < 2) throw std::invalid_argument("model needs >= 2 dims");
  if (m.w.size() != m.dims.size() - 1 || m.b.size() != m.dims.size() - 1)
    throw std::invalid_argument("layer count mismatch");
  for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
    const std::size_t rows = std::size_t(m.dims[l + 1]);
    const std::size_t cols = std::size_t(m.dims[l]);
    if (m.w[l].size() != rows * cols || m.b[l].size() != rows)
      throw std::invalid_argument("layer size mismatch");
  }
}

struct Workspace {
  // activations per layer (index 0 = input), pre-activation kept implicitly:
  // hidden activations are post-rectifier, and delta propagation only needs
  // the activation sign
  std::vector<std::vector<double>> a;
  std::vector<std::vector<double>> delta;

  explicit Workspace(const std::vector<int>& dims) {
    a.resize(dims.size());
    delta.resize(dims.size());
    for (std::size_t i = 0; i < dims.size(); ++i) {
      a[i].resize(std::size_t(dims[i]));
      delta[i].resize(std::size_t(dims[i]));
    }
  }
};

// Buffers for whole-batch passes: activations and deltas are n x width
// row-major per layer, plus per-call transposed weights so the inner loops
// are contiguous updates the compiler vectorizes without reassociating any
// reduction (keeping results bit-identical to the one-sample-at-a-time
// formulation).
struct BatchWorkspace {
  std::vector<std::vector<double>> a;      // a[l]: n * dims[l]
  std::vector<std::vector<double>> delta;  // delta[l]: n * dims[l], l >= 1
  std::vector<std::vector<double>> wt;     // wt[l]: dims[l] x dims[l+1]
  int capacity = 0;

  void ensure(const std::vector<int>& dims, int n) {
    if (a.size() != dims.size()) {
      a.assign(dims.size(), {});
      delta.assign(dims.size(), {});
      wt.assign(dims.size() - 1, {});
      capacity = 0;
    }
    if (n > capacity) {
      for (std::size_t l = 0; l < dims.size(); ++l) {
        a[l].resize(std::size_t(n) * std::size_t(dims[l]));
        delta[l].resize(std::size_t(n) * std::size_t(dims[l]));
      }
      capacity = n;
    }
    for (std::size_t l = 0; l + 1 < dims.size(); ++l)
      wt[l].resize(std::size_t(dims[l]) * std::size_t(dims[l + 1]));
  }
};

// whole batch through the network: fills ws.a[l] for every layer
void batched_forward(const MlpModel& m, const double* xs, int n,
                     BatchWorkspace& ws) {
  ws.ensure(m.dims, n);
  const int last = m.n_layers();
  for (int l = 0; l < last; ++l) {
    const int rows = m.dims[std::size_t(l) + 1];
    const int cols = m.dims[std::size_t(l)];
    const auto& wl = m.w[std::size_t(l)];
    auto& wt = ws.wt[std::size_t(l)];
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        wt[std::size_t(c) * rows + r] = wl[std::size_t(r) * cols + c];
  }
  std::copy(xs, xs + std::size_t(n) * m.dims.front(), ws.a[0].begin());
  for (int l = 0; l < last; ++l) {
    const int rows = m.dims[std::size_t(l) + 1];
    const int cols = m.dims[std::size_t(l)];
    const auto& bl = m.b[std::size_t(l)];
    const auto& wt = ws.wt[std::size_t(l)];
    const double* src = ws.a[std::size_t(l)].data();
    double* dst = ws.a[std::size_t(l) + 1].data();
    for (int i = 0; i < n; ++i) {
      const double* x = src + std::size_t(i) * cols;
      double* y = dst + std::size_t(i) * rows;
      std::copy(bl.begin(), bl.end(), y);
      for (int c = 0; c < cols; ++c) {
        const double xc = x[c];
        if (xc == 0.0) continue;
        const double* wrow = wt.data() + std::size_t(c) * rows;
        for (int r = 0; r < rows; ++r) y[r] += xc * wrow[r];
      }
      if (l + 1 < last)
        for (int r = 0; r < rows; ++r)
          if (y[r] < 0.0) y[r] = 0.0;
    }
  }
}

// forward through one sample; hidden layers rectified, output affine
void forward_into(const MlpModel& m, const double* in, Workspace& ws) {
  const int n_in = m.dims.front();
  std::copy(in, in + n_in, ws.a[0].begin());
  const int last = m.n_layers();
  for (int l = 0; l < last; ++l) {
    const auto& wl = m.w[std::size_t(l)];
    const auto& bl = m.b[std::size_t(l)];
    const auto& src = ws.a[std::size_t(l)];
    auto& dst = ws.a[std::size_t(l) + 1];
    const int rows = m.dims[std::size_t(l) + 1];
    const int cols = m.dims[std::size_t(l)];
    for (int r = 0; r < rows; ++r) {
      const double* row = wl.data() + std::size_t(r) * cols;
      double acc = bl[std::size_t(r)];
      for (int c = 0; c < cols; ++c) acc += row[c] * src[std::size_t(c)];
      dst[std::size_t(r)] = (l + 1 < last && acc < 0.0) ? 0.0 : acc;
    }
  }
}

}  // namespace

Normalizer fit_normalizer(const std::vector<double>& values, int n_features) {
  if (values.empty() || n_features <= 0 ||
      values.size() % std::size_t(n_features) != 0)
    throw std::invalid_argument("normalizer needs n*k values");
  Normalizer nm;
  nm.lo.assign(std::size_t(n_features), std::numeric_limits<double>::infinity());
  nm.hi.assign(std::size_t(n_features),
               -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t k = i % std::size_t(n_features);
    nm.lo[k] = std::min(nm.lo[k], values[i]);
    nm.hi[k] = std::max(nm.hi[k], values[i]);
  }
  for (int k = 0; k < n_features; ++k) {
    if (!(nm.hi[std::size_t(k)] > nm.lo[std::size_t(k)]))
      nm.hi[std::size_t(k)] = nm.lo[std::size_t(k)] + 1.0;  // constant feature
  }
  return nm;
}

void MlpModel::forward_normalized(const double* in, double* out) const {
  Workspace ws(dims);
  forward_into(*this, in, ws);
  const auto& last = ws.a.back();
  std::copy(last.begin(), last.end(), out);
}

double MlpModel::forward(const std::array<double, 4>& x) const {
  if (dims.front() != 4 || dims.back() != 1)
    throw std::invalid_argument("physical forward needs a 4->1 model");
  double xn[4];
  for (std::size_t k = 0; k < 4; ++k) xn[k] = in_norm.norm(x[k], k);
  double yn;
  forward_normalized(xn, &yn);
  const double t = out_norm.denorm(yn, 0);
  return out_transform == OutputTransform::log ? std::exp(t) : t;
}

MlpModel make_mlp(const std::vector<int>& dims, std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("model needs >= 2 dims");
  for (int d : dims)
    if (d < 1) throw std::invalid_argument("layer widths must be >= 1");
  MlpModel m;
  m.dims = dims;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t rows = std::size_t(dims[l + 1]);
    const std::size_t cols = std::size_t(dims[l]);
    const double bound = 1.0 / std::sqrt(double(cols));
    std::vector<double> wl(rows * cols);
    for (auto& v : wl) v = rng.uniform(-bound, bound);
    m.w.push_back(std::move(wl));
    m.b.emplace_back(rows, 0.0);
  }
  m.in_norm.lo.assign(std::size_t(dims.front()), 0.0);
  m.in_norm.hi.assign(std::size_t(dims.front()), 1.0);
  m.out_norm.lo.assign(std::size_t(dims.back()), 0.0);
  m.out_norm.hi.assign(std::size_t(dims.back()), 1.0);
  return m;
}

namespace {

// Shared by the public entry point and the training loop, which reuses the
// gradient and workspace buffers across batches instead of reallocating.
// Everything accumulates in a fixed order (samples ascending, then indices
// ascending), so results are reproducible run to run.
void compute_gradients_into(const MlpModel& model, const NormalizedBatch& batch,
                            double l2, Gradients& g, BatchWorkspace& ws) {
  if (batch.n <= 0) throw std::invalid_argument("batch must be non-empty");

  const int n = batch.n;
  const int n_out = model.dims.back();
  const int last = model.n_layers();

  g.loss = 0.0;
  if (int(g.w.size()) != last) {
    g.w.clear();
    g.b.clear();
    for (int l = 0; l < last; ++l) {
      g.w.emplace_back(model.w[std::size_t(l)].size(), 0.0);
      g.b.emplace_back(model.b[std::size_t(l)].size(), 0.0);
    }
  } else {
    for (int l = 0; l < last; ++l) {
      std::fill(g.w[std::size_t(l)].begin(), g.w[std::size_t(l)].end(), 0.0);
      std::fill(g.b[std::size_t(l)].begin(), g.b[std::size_t(l)].end(), 0.0);
    }
  }

  batched_forward(model, batch.x, n, ws);

  const double inv_n = 1.0 / double(n);
  {
    const double* out = ws.a[std::size_t(last)].data();
    double* dlast = ws.delta[std::size_t(last)].data();
    for (int i = 0; i < n * n_out; ++i) {
      const double e = out[i] - batch.y[i];
      g.loss += e * e * inv_n;
      dlast[i] = 2.0 * e * inv_n;
    }
  }

  // first-layer weight gradients accumulate transposed so the inner loop
  // runs over the wide hidden dimension; folded back after the sample loop
  auto& gwt = ws.wt[0];
  const int rows0 = model.dims[1];
  const int cols0 = model.dims[0];
  std::fill(gwt.begin(), gwt.end(), 0.0);

  for (int l = last - 1; l >= 0; --l) {
    const int rows = model.dims[std::size_t(l) + 1];
    const int cols = model.dims[std::size_t(l)];
    const auto& wl = model.w[std::size_t(l)];
    const double* src = ws.a[std::size_t(l)].data();
    const double* dl = ws.delta[std::size_t(l) + 1].data();
    auto& gw = g.w[std::size_t(l)];
    auto& gb = g.b[std::size_t(l)];
    double* dprev = l > 0 ? ws.delta[std::size_t(l)].data() : nullptr;

    for (int i = 0; i < n; ++i) {
      const double* d = dl + std::size_t(i) * rows;
      const double* x = src + std::size_t(i) * cols;
      for (int r = 0; r < rows; ++r)
        if (d[r] != 0.0) gb[std::size_t(r)] += d[r];

      if (l == 0) {
        for (int c = 0; c < cols; ++c) {
          const double xc = x[c];
          if (xc == 0.0) continue;
          double* gt = gwt.data() + std::size_t(c) * rows;
          for (int r = 0; r < rows; ++r) gt[r] += d[r] * xc;
        }
      } else {
        for (int r = 0; r < rows; ++r) {
          const double dr = d[r];
          if (dr == 0.0) continue;
          double* gw_row = gw.data() + std::size_t(r) * cols;
          for (int c = 0; c < cols; ++c) gw_row[c] += dr * x[c];
        }
      }

      if (l > 0) {
        double* dp = dprev + std::size_t(i) * cols;
        std::fill(dp, dp + cols, 0.0);
        for (int r = 0; r < rows; ++r) {
          const double dr = d[r];
          if (dr == 0.0) continue;
          const double* w_row = wl.data() + std::size_t(r) * cols;
          for (int c = 0; c < cols; ++c) dp[c] += dr * w_row[c];
        }
        // rectifier gate: the activation is zero exactly where the unit was
        // clamped, and its subgradient there is taken as zero
        for (int c = 0; c < cols; ++c)
          if (x[c] <= 0.0) dp[c] = 0.0;
      }
    }
  }

  {
    auto& gw0 = g.w[0];
    for (int r = 0; r < rows0; ++r)
      for (int c = 0; c < cols0; ++c)
        gw0[std::size_t(r) * cols0 + c] = gwt[std::size_t(c) * rows0 + r];
  }

  if (l2 != 0.0) {
    for (int l = 0; l < last; ++l) {
      const auto& wl = model.w[std::size_t(l)];
      auto& gw = g.w[std::size_t(l)];
      double sq = 0.0;
      for (std::size_t i = 0; i < wl.size(); ++i) {
        sq += wl[i] * wl[i];
        gw[i] += 2.0 * l2 * wl[i];
      }
      g.loss += l2 * sq;
    }
  }
}

}  // namespace

Gradients compute_gradients(const MlpModel& model, const NormalizedBatch& batch,
                            double l2) {
  check_shape(model);
  Gradients g;
  BatchWorkspace ws;
  compute_gradients_into(model, batch, l2, g, ws);
  return g;
}

RegressionData to_regression_data(const SampleSet& set,
                                  const std::vector<int>& indices) {
  RegressionData d;
  d.x.reserve(indices.size());
  d.y.reserve(indices.size());
  for (int i : indices) {
    const auto& r = set.records[std::size_t(i)];
    if (!r.feasible)
      throw std::invalid_argument("regression data must be feasible records");
    d.x.push_back({r.p, r.v2, r.d1, r.d2});
    d.y.push_back(r.i_pk);
  }
  return d;
}

TrainReport train(MlpModel& model, const RegressionData& train_data,
                  const RegressionData& val_data, const TrainConfig& cfg) {
  check_shape(model);
  if (model.dims.front() != 4 || model.dims.back() != 1)
    throw std::invalid_argument("training expects a 4->1 model");
  if (train_data.x.empty() || val_data.x.empty())
    throw std::invalid_argument("training and validation must be non-empty");
  if (cfg.learning_rate <= 0.0 || cfg.l2 < 0.0 || cfg.batch_size < 1)
    throw std::invalid_argument("bad train config");

  model.out_transform =
      cfg.log_target ? OutputTransform::log : OutputTransform::linear;
  auto transform_target = [&](double y) {
    if (!cfg.log_target) return y;
    if (!(y > 0.0))
      throw std::invalid_argument("log-target training needs positive targets");
    return std::log(y);
  };

  // normalizers come from the training split only
  {
    std::vector<double> flat;
    flat.reserve(train_data.x.size() * 4);
    for (const auto& x : train_data.x)
      flat.insert(flat.end(), x.begin(), x.end());
    model.in_norm = fit_normalizer(flat, 4);
    std::vector<double> targets = train_data.y;
    for (double& y : targets) y = transform_target(y);
    model.out_norm = fit_normalizer(targets, 1);
  }

  auto normalize = [&](const RegressionData& d, std::vector<double>& xs,
                       std::vector<double>& ys) {
    xs.resize(d.x.size() * 4);
    ys.resize(d.y.size());
    for (std::size_t i = 0; i < d.x.size(); ++i) {
      for (std::size_t k = 0; k < 4; ++k)
        xs[i * 4 + k] = model.in_norm.norm(d.x[i][k], k);
      ys[i] = model.out_norm.norm(transform_target(d.y[i]), 0);
    }
  };
  std::vector<double> tx, ty, vx, vy;
  normalize(train_data, tx, ty);
  normalize(val_data, vx, vy);

  const int n_train = int(train_data.x.size());
  const int last = model.n_layers();

  // Adagrad accumulators
  std::vector<std::vector<double>> acc_w, acc_b;
  for (int l = 0; l < last; ++l) {
    acc_w.emplace_back(model.w[std::size_t(l)].size(), 0.0);
    acc_b.emplace_back(model.b[std::size_t(l)].size(), 0.0);
  }

  BatchWorkspace val_ws;
  auto val_mse = [&]() {
    batched_forward(model, vx.data(), int(vy.size()), val_ws);
    const double* out = val_ws.a.back().data();
    double sum = 0.0;
    for (std::size_t i = 0; i < vy.size(); ++i) {
      const double e = out[i] - vy[i];
      sum += e * e;
    }
    return sum / double(vy.size());
  };

  TrainReport report;
  std::vector<std::vector<double>> best_w = model.w, best_b = model.b;
  report.best_val_loss = std::numeric_limits<double>::infinity();

  Rng rng(cfg.seed);
  std::vector<int> order(static_cast<std::size_t>(n_train));
  for (int i = 0; i < n_train; ++i) order[std::size_t(i)] = i;
  std::vector<double> bx(std::size_t(cfg.batch_size) * 4),
      by(std::size_t(cfg.batch_size));
  Gradients g;
  BatchWorkspace ws;

  constexpr double kEps = 1e-8;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_in_place(order, rng);

    double epoch_loss = 0.0;
    int n_batches = 0;
    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int bn = std::min(cfg.batch_size, n_train - start);
      for (int i = 0; i < bn; ++i) {
        const std::size_t src = std::size_t(order[std::size_t(start + i)]);
        std::memcpy(bx.data() + std::size_t(i) * 4, tx.data() + src * 4,
                    4 * sizeof(double));
        by[std::size_t(i)] = ty[src];
      }
      compute_gradients_into(model, {bx.data(), by.data(), bn}, cfg.l2, g, ws);
      if (!std::isfinite(g.loss))
        throw DivergenceDetected("non-finite training loss at epoch " +
                                 std::to_string(epoch));
      epoch_loss += g.loss;
      ++n_batches;

      for (int l = 0; l < last; ++l) {
        auto& wl = model.w[std::size_t(l)];
        auto& bl = model.b[std::size_t(l)];
        const auto& gw = g.w[std::size_t(l)];
        const auto& gb = g.b[std::size_t(l)];
        auto& aw = acc_w[std::size_t(l)];
        auto& ab = acc_b[std::size_t(l)];
        for (std::size_t i = 0; i < wl.size(); ++i) {
          aw[i] += gw[i] * gw[i];
          wl[i] -= cfg.learning_rate * gw[i] / (std::sqrt(aw[i]) + kEps);
        }
        for (std::size_t i = 0; i < bl.size(); ++i) {
          ab[i] += gb[i] * gb[i];
          bl[i] -= cfg.learning_rate * gb[i] / (std::sqrt(ab[i]) + kEps);
        }
      }
    }

    const double vloss = val_mse();
    if (!std::isfinite(vloss))
      throw DivergenceDetected("non-finite validation loss at epoch " +
                               std::to_string(epoch));
    report.train_loss.push_back(epoch_loss / double(n_batches));
    report.val_loss.push_back(vloss);
    report.epochs_run = epoch + 1;

    if (vloss < report.best_val_loss) {
      report.best_val_loss = vloss;
      report.best_epoch = epoch;
      best_w = model.w;
      best_b = model.b;
    } else if (epoch - report.best_epoch >= cfg.patience) {
      break;  // validation stalled
    }
  }

  model.w = std::move(best_w);
  model.b = std::move(best_b);
  return report;
}

Deviation evaluate_deviation(const MlpModel& model,
                             const RegressionData& data) {
  if (data.x.empty()) throw std::invalid_argument("empty evaluation set");
  double sum = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < data.x.size(); ++i) {
    if (!(data.y[i] > 0.0))
      throw std::invalid_argument("deviation needs positive targets");
    const double pct =
        100.0 * std::abs(model.forward(data.x[i]) - data.y[i]) / data.y[i];
    sum += pct;
    worst = std::max(worst, pct);
  }
  return {sum / double(data.x.size()), worst};
}

void save_model(const std::string& path, const MlpModel& model) {
  check_shape(model);
  std::string text = "dabtps-mlp v1\n";
  text += "dims";
  for (int d : model.dims) text += ' ' + std::to_string(d);
  text += '\n';
  text += "transform ";
  text += model.out_transform == OutputTransform::log ? "log" : "linear";
  text += '\n';
  auto dump_row = [&text](const char* tag, const std::vector<double>& vals) {
    text += tag;
    for (double v : vals) {
      text += ' ';
      append_g17(text, v);
    }
    text += '\n';
  };
  dump_row("in_lo", model.in_norm.lo);
  dump_row("in_hi", model.in_norm.hi);
  dump_row("out_lo", model.out_norm.lo);
  dump_row("out_hi", model.out_norm.hi);
  for (int l = 0; l < model.n_layers(); ++l) {
    text += "layer " + std::to_string(l) + '\n';
    dump_row("w", model.w[std::size_t(l)]);
    dump_row("b", model.b[std::size_t(l)]);
  }
  write_text_file(path, text);
}

MlpModel load_model(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;

  auto next_line = [&](const char* what) {
    if (!std::getline(in, line))
      throw std::runtime_error(path + ": truncated model file, expected " +
                               what);
    return line;
  };
  auto parse_row = [&](const std::string& tag,
                       std::size_t count) -> std::vector<double> {
    next_line(tag.c_str());
    const auto cells = split(line, ' ');
    if (cells.empty() || cells[0] != tag)
      throw std::runtime_error(path + ": expected row '" + tag + "', got: " +
                               line);
    if (cells.size() != count + 1)
      throw std::runtime_error(path + ": row '" + tag + "' has " +
                               std::to_string(cells.size() - 1) + " values, " +
                               "expected " + std::to_string(count));
    std::vector<double> vals(count);
    for (std::size_t i = 0; i < count; ++i) vals[i] = parse_double(cells[i + 1]);
    return vals;
  };

  if (next_line("header") != "dabtps-mlp v1")
    throw std::runtime_error(path + ": not a model file (bad header)");

  MlpModel m;
  next_line("dims");
  {
    const auto cells = split(line, ' ');
    if (cells.size() < 3 || cells[0] != "dims")
      throw std::runtime_error(path + ": bad dims line");
    for (std::size_t i = 1; i < cells.size(); ++i)
      m.dims.push_back(int(parse_long(cells[i])));
  }
  next_line("transform");
  {
    const auto cells = split(line, ' ');
    if (cells.size() != 2 || cells[0] != "transform")
      throw std::runtime_error(path + ": bad transform line: " + line);
    if (cells[1] == "linear")
      m.out_transform = OutputTransform::linear;
    else if (cells[1] == "log")
      m.out_transform = OutputTransform::log;
    else
      throw std::runtime_error(path + ": unknown output transform '" +
                               cells[1] + "'");
  }
  const std::size_t n_in = std::size_t(m.dims.front());
  const std::size_t n_out = std::size_t(m.dims.back());
  m.in_norm.lo = parse_row("in_lo", n_in);
  m.in_norm.hi = parse_row("in_hi", n_in);
  m.out_norm.lo = parse_row("out_lo", n_out);
  m.out_norm.hi = parse_row("out_hi", n_out);
  for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
    if (next_line("layer") != "layer " + std::to_string(l))
      throw std::runtime_error(path + ": expected 'layer " +
                               std::to_string(l) + "', got: " + line);
    const std::size_t rows = std::size_t(m.dims[l + 1]);
    const std::size_t cols = std::size_t(m.dims[l]);
    m.w.push_back(parse_row("w", rows * cols));
    m.b.push_back(parse_row("b", rows));
  }
  check_shape(m);
  return m;
}

}  // namespace dabtps
