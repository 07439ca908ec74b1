#include "swe/regression.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "swe/stats.hpp"

namespace swe::regress {

namespace {

RegressionProblem finish_problem(Matrix x, std::vector<double> w_star, Matrix x_test) {
  RegressionProblem p;
  p.y = matvec(x, w_star);
  if (x_test.cols() == x.cols() && x_test.rows() > 0) p.y_test = matvec(x_test, w_star);
  p.stem = stem_projection(w_star);
  p.branch.resize(w_star.size());
  for (std::size_t i = 0; i < w_star.size(); ++i) p.branch[i] = w_star[i] - p.stem[i];
  p.x = std::move(x);
  p.w_star = std::move(w_star);
  p.x_test = std::move(x_test);
  return p;
}

std::vector<double> residual(const Matrix& x, const std::vector<double>& y,
                             const std::vector<double>& w) {
  std::vector<double> r = matvec(x, w);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= y[i];
  return r;
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

RegressionProblem make_problem(std::size_t dim, std::size_t samples, std::size_t test_samples,
                               std::uint64_t seed) {
  if (dim == 0 || samples == 0) {
    throw std::invalid_argument("make_problem: dimension and sample count must be positive");
  }
  Rng rng(seed);
  std::vector<double> w_star = gaussian_vector(dim, 1.0, 1.0, rng);
  Matrix x = gaussian_matrix(samples, dim, 0.0, 1.0, rng);
  Matrix x_test = gaussian_matrix(test_samples, dim, 0.0, 1.0, rng);
  return finish_problem(std::move(x), std::move(w_star), std::move(x_test));
}

RegressionProblem make_problem_from(Matrix x, std::vector<double> w_star, Matrix x_test) {
  if (x.cols() != w_star.size()) {
    throw DimensionError("make_problem_from: X is " + x.shape_string() + " but w* has " +
                         std::to_string(w_star.size()) + " entries");
  }
  return finish_problem(std::move(x), std::move(w_star), std::move(x_test));
}

std::vector<double> stem_projection(const std::vector<double>& w) {
  if (w.empty()) return {};
  double s = 0.0;
  for (double v : w) s += v;
  return std::vector<double>(w.size(), s / static_cast<double>(w.size()));
}

double mse(const Matrix& x, const std::vector<double>& y, const std::vector<double>& w) {
  if (x.rows() == 0) return 0.0;
  const auto r = residual(x, y, w);
  return dot(r, r) / static_cast<double>(x.rows());
}

namespace {

// Largest eigenvalue of a PSD matrix by power iteration; the Gram matrices
// here can exceed the Jacobi solver's size limit.
double psd_lambda_max(const Matrix& a) {
  const std::size_t n = a.rows();
  std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double lambda = 0.0;
  for (int it = 0; it < 100000; ++it) {
    std::vector<double> w = matvec(a, v);
    const double norm = norm2(w);
    if (norm == 0.0) return 0.0;
    for (double& x : w) x /= norm;
    const bool settled = std::abs(norm - lambda) <= 1e-14 * norm;
    lambda = norm;
    v = std::move(w);
    if (settled) break;
  }
  return lambda;
}

}  // namespace

double default_eta(const RegressionProblem& p) {
  // Nonzero spectrum of XᵀX/n equals that of XXᵀ/n; use the smaller Gram.
  const bool wide = p.samples() <= p.dim();
  Matrix gram = wide ? matmul_nt(p.x, p.x) : matmul_tn(p.x, p.x);
  gram *= 1.0 / static_cast<double>(p.samples());
  return 1.0 / (2.0 * psd_lambda_max(gram));
}

std::pair<double, double> block_means(const std::vector<double>& w, std::size_t block) {
  if (block == 0 || 2 * block > w.size()) {
    throw std::invalid_argument("block_means: block " + std::to_string(block) +
                                " too large for length " + std::to_string(w.size()));
  }
  double head = 0.0;
  double tail = 0.0;
  for (std::size_t i = 0; i < block; ++i) head += w[i];
  for (std::size_t i = w.size() - block; i < w.size(); ++i) tail += w[i];
  return {head / static_cast<double>(block), tail / static_cast<double>(block)};
}

const std::vector<std::string>& regression_trace_columns() {
  static const std::vector<std::string> cols = {"step",      "train_mse",     "test_mse",
                                                "head_mean", "tail_mean",     "err_to_w_star",
                                                "err_to_stem"};
  return cols;
}

RegressionRun train_regression(const RegressionProblem& p, const SweSchedule& schedule,
                               const RegressionOptions& options) {
  const std::size_t L = p.dim();
  const std::size_t n = p.samples();
  schedule.validate(L);
  const std::size_t block = options.block == 0 ? L / 2 : options.block;
  const std::size_t stride = std::max<std::size_t>(options.record_every, 1);

  RegressionRun run;
  run.trace = Trace(regression_trace_columns());
  std::vector<double> w(L, 0.0);

  auto record = [&](std::size_t t) {
    Trace::Row row(regression_trace_columns().size());
    row[0] = static_cast<double>(t);
    row[1] = mse(p.x, p.y, w);
    if (p.x_test.rows() > 0) row[2] = mse(p.x_test, p.y_test, w);
    if (block > 0 && 2 * block <= L) {
      const auto [head, tail] = block_means(w, block);
      row[3] = head;
      row[4] = tail;
    }
    row[5] = distance(w, p.w_star);
    row[6] = distance(w, p.stem);
    run.trace.add_row(std::move(row));
  };

  run.initial_train_mse = mse(p.x, p.y, w);
  record(0);
  // Every coordinate is a 1×1 layer for the schedule transforms.
  LayerWeights layers(L, Matrix(1, 1));
  GradientSet grads(L, Matrix(1, 1));
  const double scale = 2.0 / static_cast<double>(n);
  for (std::size_t t = 1; t <= schedule.total_steps; ++t) {
    if (t == schedule.untie_step) run.w_at_untie = w;
    const auto r = residual(p.x, p.y, w);
    for (std::size_t j = 0; j < L; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += p.x(i, j) * r[i];
      grads[j](0, 0) = scale * s;
      layers[j](0, 0) = w[j];
    }
    const GradientSet g = apply_schedule(grads, schedule, t);
    sgd_step(layers, g, schedule.eta.at(t), t);
    for (std::size_t j = 0; j < L; ++j) w[j] = layers[j](0, 0);
    const double train = mse(p.x, p.y, w);
    if (!std::isfinite(train) || train > 1e12 * std::max(run.initial_train_mse, 1.0)) {
      throw NumericalError("train_regression: diverged at step " + std::to_string(t) +
                           " with eta " + format_double(schedule.eta.at(t)));
    }
    if (t % stride == 0 || t == schedule.total_steps) record(t);
  }
  run.w = w;
  run.final_train_mse = mse(p.x, p.y, w);
  run.final_test_mse = p.x_test.rows() > 0 ? mse(p.x_test, p.y_test, w) : 0.0;
  return run;
}

double shared_phase_closed_form(const RegressionProblem& p) {
  const std::size_t L = p.dim();
  const double mean_w = p.stem.empty() ? 0.0 : p.stem.front();
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < p.samples(); ++i) {
    double row_sum = 0.0;
    double branch_proj = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      row_sum += p.x(i, j);
      branch_proj += p.x(i, j) * p.branch[j];
    }
    num += row_sum * branch_proj;
    den += row_sum * row_sum;
  }
  if (!(den > 0.0)) {
    throw NumericalError("shared_phase_closed_form: every training row sums to zero");
  }
  return mean_w + num / den;
}

std::vector<double> min_norm_solution(const RegressionProblem& p) {
  const Matrix gram = matmul_nt(p.x, p.x);
  Matrix alpha;
  try {
    alpha = solve_spd(gram, Matrix::column(p.y));
  } catch (const NumericalError&) {
    throw NumericalError("min_norm_solution: Gram matrix XXᵀ is singular");
  }
  Matrix w = matmul_tn(p.x, alpha);
  return std::vector<double>(w.data().begin(), w.data().end());
}

ScanResult prop1_error_scan(const std::vector<std::size_t>& dims,
                            const std::vector<std::size_t>& sample_counts,
                            const std::vector<std::uint64_t>& seeds) {
  if (dims.empty() || sample_counts.empty() || seeds.empty()) {
    throw std::invalid_argument("prop1_error_scan: grids must be nonempty");
  }
  ScanResult out;
  std::vector<double> log_ratio;
  std::vector<double> log_err;
  for (std::size_t L : dims) {
    for (std::size_t n : sample_counts) {
      std::vector<double> errs;
      for (std::uint64_t seed : seeds) {
        const RegressionProblem p = make_problem(L, n, 0, seed);
        const double w0 = shared_phase_closed_form(p);
        ScanRow row;
        row.dim = L;
        row.samples = n;
        row.seed = seed;
        row.err_stem = std::abs(w0 - p.stem.front()) * std::sqrt(static_cast<double>(L));
        row.stem_norm = norm2(p.stem);
        row.ratio_sqrt = std::sqrt(static_cast<double>(L) / static_cast<double>(n));
        errs.push_back(row.err_stem);
        out.rows.push_back(row);
      }
      log_ratio.push_back(std::log(static_cast<double>(L) / static_cast<double>(n)));
      log_err.push_back(std::log(median(errs)));
    }
  }
  out.slope = log_ratio.size() > 1 ? least_squares_slope(log_ratio, log_err) : 0.0;
  return out;
}

namespace {

std::vector<double> cell_values(const ScanResult& scan, std::size_t dim, std::size_t samples,
                                bool stem_norm) {
  std::vector<double> v;
  for (const auto& r : scan.rows)
    if (r.dim == dim && r.samples == samples) v.push_back(stem_norm ? r.stem_norm : r.err_stem);
  if (v.empty()) throw std::invalid_argument("scan has no cell L=" + std::to_string(dim) +
                                             " n=" + std::to_string(samples));
  return v;
}

}  // namespace

double cell_median_error(const ScanResult& scan, std::size_t dim, std::size_t samples) {
  return median(cell_values(scan, dim, samples, false));
}

double cell_median_stem_norm(const ScanResult& scan, std::size_t dim, std::size_t samples) {
  return median(cell_values(scan, dim, samples, true));
}

const std::vector<std::string>& scan_columns() {
  static const std::vector<std::string> cols = {"L", "n", "seed", "err_stem", "stem_norm",
                                                "ratio_sqrt_L_over_n"};
  return cols;
}

}  // namespace swe::regress
