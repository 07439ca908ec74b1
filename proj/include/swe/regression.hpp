#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "swe/core_math.hpp"
#include "swe/swe_optim.hpp"
#include "swe/trace.hpp"

namespace swe::regress {

/// Noise-free under-determined regression y = X·w*, with w* split into its
/// stem (mean·𝟙) and branch (w* − stem) components.
struct RegressionProblem {
  Matrix x;                   // n×L
  std::vector<double> y;      // n
  std::vector<double> w_star; // L
  std::vector<double> stem;   // L, every entry mean(w*)
  std::vector<double> branch; // L, sums to zero
  Matrix x_test;              // m×L
  std::vector<double> y_test; // m

  std::size_t dim() const { return x.cols(); }
  std::size_t samples() const { return x.rows(); }
};

inline constexpr std::size_t kDefaultDim = 200;
inline constexpr std::size_t kDefaultSamples = 120;
inline constexpr std::size_t kDefaultTestSamples = 1000;

/// w* ∼ N(1, 1), x ∼ N(0, 1) for train and test rows, drawn in that order.
RegressionProblem make_problem(std::size_t dim, std::size_t samples, std::size_t test_samples,
                               std::uint64_t seed);

/// Builds a problem from explicit data (test set may be empty).
RegressionProblem make_problem_from(Matrix x, std::vector<double> w_star, Matrix x_test = {});

/// mean(w)·𝟙
std::vector<double> stem_projection(const std::vector<double>& w);

/// (1/n)·‖X·w − y‖²
double mse(const Matrix& x, const std::vector<double>& y, const std::vector<double>& w);

/// Step size 1/λ_max of the MSE Hessian (2/n)·XᵀX.
double default_eta(const RegressionProblem& p);

/// Head and tail means over `block` coordinates each.
std::pair<double, double> block_means(const std::vector<double>& w, std::size_t block);

const std::vector<std::string>& regression_trace_columns();

struct RegressionRun {
  Trace trace;
  std::vector<double> w;
  /// ŵ at the start of step τ (after τ−1 updates); empty unless 1 ≤ τ ≤ T.
  std::vector<double> w_at_untie;
  double initial_train_mse = 0.0;
  double final_train_mse = 0.0;
  double final_test_mse = 0.0;
};

struct RegressionOptions {
  std::size_t block = 0;         // 0 → L/2
  std::size_t record_every = 1;
};

/// Gradient descent on the training MSE from ŵ = 0. Each coordinate is one
/// "layer" of the schedule; the schedule's unit shape must cover all L.
RegressionRun train_regression(const RegressionProblem& p, const SweSchedule& schedule,
                               const RegressionOptions& options = {});

/// Least-squares optimum of the fully shared model ŵ = w₀·𝟙:
/// w₀ = mean(w*) + Σ(x_iᵀ𝟙)(x_iᵀw̃*) / Σ(x_iᵀ𝟙)².
double shared_phase_closed_form(const RegressionProblem& p);

/// Xᵀ(XXᵀ)⁻¹y.
std::vector<double> min_norm_solution(const RegressionProblem& p);

struct ScanRow {
  std::size_t dim = 0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  double err_stem = 0.0;    // ‖w₀·𝟙 − w̄*‖₂
  double stem_norm = 0.0;   // ‖w̄*‖₂
  double ratio_sqrt = 0.0;  // √(L/n)
};

struct ScanResult {
  std::vector<ScanRow> rows;
  /// Least-squares slope of log(median err) against log(L/n) across cells.
  double slope = 0.0;
};

/// Closed-form shared error over every (L, n, seed) cell. Problems use
/// `test_samples` = 0.
ScanResult prop1_error_scan(const std::vector<std::size_t>& dims,
                            const std::vector<std::size_t>& sample_counts,
                            const std::vector<std::uint64_t>& seeds);

/// Median of err_stem over the rows of one (L, n) cell.
double cell_median_error(const ScanResult& scan, std::size_t dim, std::size_t samples);
double cell_median_stem_norm(const ScanResult& scan, std::size_t dim, std::size_t samples);

const std::vector<std::string>& scan_columns();

}  // namespace swe::regress
