#include "swe/stacked_net.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "swe/stats.hpp"

namespace swe::stacked {

void StackedNet::validate() const {
  if (blocks.empty()) throw DimensionError("StackedNet: no blocks");
  const std::size_t d = readout.size();
  for (const Matrix& w : blocks) {
    if (w.rows() != d || w.cols() != d) {
      throw DimensionError("StackedNet: block " + w.shape_string() + " does not match readout of length " +
                           std::to_string(d));
    }
  }
}

ForwardResult forward(const StackedNet& net, std::span<const double> x) {
  const std::size_t d = net.dim();
  if (x.size() != d) {
    throw DimensionError("forward: input of length " + std::to_string(x.size()) +
                         " for width " + std::to_string(d));
  }
  ForwardResult out;
  out.cache.hidden.reserve(net.depth() + 1);
  out.cache.activation.reserve(net.depth());
  out.cache.hidden.emplace_back(x.begin(), x.end());
  for (const Matrix& w : net.blocks) {
    const std::vector<double>& h = out.cache.hidden.back();
    std::vector<double> a = matvec(w, h);
    std::vector<double> next(d);
    for (std::size_t i = 0; i < d; ++i) {
      a[i] = std::tanh(a[i]);
      next[i] = h[i] + a[i];
    }
    out.cache.activation.push_back(std::move(a));
    out.cache.hidden.push_back(std::move(next));
  }
  out.y = dot(net.readout, out.cache.hidden.back());
  return out;
}

GradientSet backward(const StackedNet& net, const ForwardCache& cache, double dy) {
  const std::size_t L = net.depth();
  const std::size_t d = net.dim();
  if (cache.hidden.size() != L + 1 || cache.activation.size() != L) {
    throw DimensionError("backward: cache depth does not match the network");
  }
  for (const auto& h : cache.hidden)
    if (h.size() != d) throw DimensionError("backward: cache width does not match the network");

  GradientSet grads(L, Matrix(d, d));
  std::vector<double> delta(d);
  for (std::size_t i = 0; i < d; ++i) delta[i] = dy * net.readout[i];
  std::vector<double> pre(d);
  for (std::size_t l = L; l-- > 0;) {
    const auto& a = cache.activation[l];
    const auto& h_in = cache.hidden[l];
    for (std::size_t i = 0; i < d; ++i) pre[i] = delta[i] * (1.0 - a[i] * a[i]);
    Matrix& g = grads[l];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) g(i, j) = pre[i] * h_in[j];
    const Matrix& w = net.blocks[l];
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += w(i, j) * pre[i];
      delta[j] += s;
    }
  }
  return grads;
}

SyntheticTask make_task(const TaskConfig& config) {
  if (config.depth == 0 || config.dim == 0) {
    throw std::invalid_argument("make_task: depth and width must be positive");
  }
  Rng rng(config.seed);
  const double std = config.teacher_scale / std::sqrt(static_cast<double>(config.dim));
  SyntheticTask task;
  for (std::size_t l = 0; l < config.depth; ++l)
    task.teacher.blocks.push_back(gaussian_matrix(config.dim, config.dim, 0.0, std, rng));
  task.teacher.readout = gaussian_vector(config.dim, 0.0, 1.0, rng);
  const double norm = norm2(task.teacher.readout);
  for (double& v : task.teacher.readout) v /= norm;

  auto label = [&](const Matrix& x) {
    std::vector<double> y(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
      y[i] = forward(task.teacher, x.data().subspan(i * x.cols(), x.cols())).y;
    return y;
  };
  task.train_x = gaussian_matrix(config.train_samples, config.dim, 0.0, 1.0, rng);
  task.test_x = gaussian_matrix(config.test_samples, config.dim, 0.0, 1.0, rng);
  task.train_y = label(task.train_x);
  task.test_y = label(task.test_x);
  return task;
}

double dataset_mse(const StackedNet& net, const Matrix& x, const std::vector<double>& y) {
  if (x.rows() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double r = forward(net, x.data().subspan(i * x.cols(), x.cols())).y - y[i];
    s += r * r;
  }
  return s / static_cast<double>(x.rows());
}

const std::vector<std::string>& stacked_trace_columns() {
  static const std::vector<std::string> cols = {"step", "train_mse", "test_mse"};
  return cols;
}

namespace {

bool ties_exact(const LayerWeights& blocks, UnitShape unit) {
  for (std::size_t u = 1; u < unit.repeats; ++u)
    for (std::size_t j = 0; j < unit.size; ++j)
      if (!(blocks[u * unit.size + j] == blocks[j])) return false;
  return true;
}

// Tie classes follow the mode: all layers for repara/symmetric-stem modes.
UnitShape tie_unit(const SweSchedule& s, std::size_t depth) {
  if (s.mode == SweMode::Repara || s.mode == SweMode::SymmetricStemSwe) return UnitShape{1, depth};
  return s.unit;
}

}  // namespace

StackedRun train_stacked_from(const SyntheticTask& task, LayerWeights initial,
                              const SweSchedule& schedule, const StackedOptions& options) {
  StackedNet net{std::move(initial), task.teacher.readout};
  net.validate();
  if (net.depth() != task.teacher.depth()) {
    throw DimensionError("train_stacked: student depth " + std::to_string(net.depth()) +
                         " differs from teacher depth " + std::to_string(task.teacher.depth()));
  }
  schedule.validate(net.depth());
  if (options.batch == 0 || task.train_x.rows() == 0) {
    throw std::invalid_argument("train_stacked: batch size and training set must be nonempty");
  }

  // Batch sampling stream is separate from the init stream.
  Rng rng(options.seed ^ 0xB5AD4ECEDA1CE2A9ULL);
  const std::size_t n = task.train_x.rows();
  const std::size_t d = net.dim();
  const std::size_t stride = std::max<std::size_t>(options.record_every, 1);
  const UnitShape ties = tie_unit(schedule, net.depth());

  StackedRun run;
  run.trace = Trace(stacked_trace_columns());
  auto record = [&](std::size_t t) {
    run.trace.add_row({static_cast<double>(t), dataset_mse(net, task.train_x, task.train_y),
                       dataset_mse(net, task.test_x, task.test_y)});
  };
  auto wanted = [&](std::size_t t) {
    return t % stride == 0 || t == schedule.total_steps ||
           std::find(options.record_steps.begin(), options.record_steps.end(), t) !=
               options.record_steps.end();
  };

  record(0);
  const double inv_batch = 1.0 / static_cast<double>(options.batch);
  for (std::size_t t = 1; t <= schedule.total_steps; ++t) {
    GradientSet grads(net.depth(), Matrix(d, d));
    for (std::size_t b = 0; b < options.batch; ++b) {
      const std::size_t i = rng.below(n);
      auto fwd = forward(net, task.train_x.data().subspan(i * d, d));
      const double dy = 2.0 * (fwd.y - task.train_y[i]) * inv_batch;
      const GradientSet g = backward(net, fwd.cache, dy);
      for (std::size_t l = 0; l < grads.size(); ++l) grads[l] += g[l];
    }
    const bool shared = schedule.sharing_active(t);
    sgd_step(net.blocks, apply_schedule(grads, schedule, t), schedule.eta.at(t), t);
    if (options.check_ties && shared) {
      run.tie_checks += 1;
      if (!run.tie_violation && !ties_exact(net.blocks, ties)) run.tie_violation = t;
    }
    if (wanted(t)) {
      record(t);
      const double last = *run.trace.back()[1];
      if (!std::isfinite(last) || last > 1e12) {
        throw NumericalError("train_stacked: diverged at step " + std::to_string(t));
      }
    }
  }
  run.final_blocks = net.blocks;
  run.final_train_mse = *run.trace.back()[1];
  run.final_test_mse = *run.trace.back()[2];
  run.trace.metadata["schedule"] = std::string(to_string(schedule.mode)) +
                                   " T=" + std::to_string(schedule.total_steps) +
                                   " tau=" + std::to_string(schedule.untie_step);
  run.trace.metadata["seed"] = std::to_string(options.seed);
  return run;
}

StackedRun train_stacked(const SyntheticTask& task, const SweSchedule& schedule,
                         const StackedOptions& options) {
  const std::size_t depth = task.teacher.depth();
  const std::size_t d = task.teacher.dim();
  schedule.validate(depth);
  Rng rng(options.seed);
  const double std = options.init_scale / std::sqrt(static_cast<double>(d));
  // A schedule that never shares starts from independent blocks.
  const UnitShape init_unit = schedule.shares_at_all() ? tie_unit(schedule, depth) : UnitShape{depth, 1};
  LayerWeights init = equal_group_init(
      depth, init_unit,
      [&](Rng& r) { return gaussian_matrix(d, d, 0.0, std, r); }, rng);
  return train_stacked_from(task, std::move(init), schedule, options);
}

// --- sweeps --------------------------------------------------------------------

namespace {

void add_summary(SweepTable& table) {
  std::vector<std::string> order;
  for (const auto& r : table.rows)
    if (std::find(order.begin(), order.end(), r.config) == order.end()) order.push_back(r.config);
  for (const auto& c : order) {
    std::vector<double> v;
    for (const auto& r : table.rows)
      if (r.config == c) v.push_back(r.final_test_mse);
    table.summary.push_back({c, median(v)});
  }
}

}  // namespace

SweepTable untie_sweep(const SyntheticTask& task, std::size_t total_steps, double eta,
                       const std::vector<double>& fractions, const std::vector<std::uint64_t>& seeds,
                       const StackedOptions& base) {
  SweepTable table;
  const std::size_t depth = task.teacher.depth();
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("untie_sweep: fraction outside [0, 1]");
    const auto tau = static_cast<std::size_t>(std::llround(f * static_cast<double>(total_steps)));
    std::ostringstream name;
    name << "untie=" << format_double(f);
    for (std::uint64_t seed : seeds) {
      StackedOptions opt = base;
      opt.seed = seed;
      const auto run =
          train_stacked(task, SweSchedule::make(SweMode::Swe, depth, total_steps, tau, eta), opt);
      table.rows.push_back({name.str(), seed, run.final_test_mse});
    }
  }
  add_summary(table);
  return table;
}

SweepTable grouping_sweep(const SyntheticTask& task, std::size_t total_steps,
                          std::size_t untie_step, double eta,
                          const std::vector<UnitShape>& shapes,
                          const std::vector<std::uint64_t>& seeds, const StackedOptions& base) {
  SweepTable table;
  const std::size_t depth = task.teacher.depth();
  for (const UnitShape& shape : shapes) {
    if (shape.size == 0 || shape.depth() != depth) {
      throw DimensionError("grouping_sweep: unit shape " + std::to_string(shape.size) + "x" +
                           std::to_string(shape.repeats) + " does not cover depth " +
                           std::to_string(depth));
    }
    const std::string name = "unit=" + std::to_string(shape.size) + "x" + std::to_string(shape.repeats);
    for (std::uint64_t seed : seeds) {
      StackedOptions opt = base;
      opt.seed = seed;
      SweSchedule s = SweSchedule::make(SweMode::Swe, depth, total_steps, untie_step, eta);
      s.unit = shape;
      const auto run = train_stacked(task, s, opt);
      table.rows.push_back({name, seed, run.final_test_mse});
    }
  }
  add_summary(table);
  return table;
}

}  // namespace swe::stacked
