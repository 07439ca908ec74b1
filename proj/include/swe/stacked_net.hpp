#pragma once

// L identical residual blocks h_l = h_{l−1} + tanh(W_l·h_{l−1}) with a fixed
// linear readout y = cᵀh_L, trained on a teacher–student regression task.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swe/core_math.hpp"
#include "swe/swe_optim.hpp"
#include "swe/trace.hpp"

namespace swe::stacked {

struct StackedNet {
  LayerWeights blocks;         // L square d×d matrices
  std::vector<double> readout; // c, fixed

  std::size_t depth() const { return blocks.size(); }
  std::size_t dim() const { return readout.size(); }
  void validate() const;
};

/// Hidden states h_0..h_L and block activations tanh(W_l h_{l−1}).
struct ForwardCache {
  std::vector<std::vector<double>> hidden;
  std::vector<std::vector<double>> activation;
};

struct ForwardResult {
  double y = 0.0;
  ForwardCache cache;
};

ForwardResult forward(const StackedNet& net, std::span<const double> x);

/// Gradients of dy·y with respect to every block, from a matching forward
/// cache. Pass dy = ∂loss/∂y to backpropagate a loss.
GradientSet backward(const StackedNet& net, const ForwardCache& cache, double dy);

struct TaskConfig {
  std::size_t depth = 8;
  std::size_t dim = 16;
  std::size_t train_samples = 512;
  std::size_t test_samples = 512;
  /// Teacher blocks ∼ N(0, (teacher_scale/√d)²), drawn independently per block.
  double teacher_scale = 1.0;
  std::uint64_t seed = 1;
};

struct SyntheticTask {
  StackedNet teacher;
  Matrix train_x;  // n×d
  std::vector<double> train_y;
  Matrix test_x;
  std::vector<double> test_y;
};

/// Teacher, readout (unit-norm Gaussian) and Gaussian inputs from one seed.
/// Labels are the noise-free teacher outputs.
SyntheticTask make_task(const TaskConfig& config);

/// Mean squared error of `net` over the rows of x.
double dataset_mse(const StackedNet& net, const Matrix& x, const std::vector<double>& y);

struct StackedOptions {
  std::size_t batch = 32;
  /// Student blocks ∼ N(0, (init_scale/√d)²), equal within tie classes.
  double init_scale = 0.5;
  std::uint64_t seed = 0;
  std::size_t record_every = 50;
  /// Extra steps to record (beyond 0, multiples of record_every and T).
  std::vector<std::size_t> record_steps;
  /// Verify bit-exact equality inside tie classes at every shared step.
  bool check_ties = false;
};

struct StackedRun {
  Trace trace;
  LayerWeights final_blocks;
  double final_train_mse = 0.0;
  double final_test_mse = 0.0;
  /// Number of shared steps whose tie classes were verified, and the first
  /// step where they were not bit-identical.
  std::size_t tie_checks = 0;
  std::optional<std::size_t> tie_violation;
};

const std::vector<std::string>& stacked_trace_columns();

/// Mini-batch SGD with the schedule's gradient transform. Initialization is
/// equal_group_init over the schedule's unit shape.
StackedRun train_stacked(const SyntheticTask& task, const SweSchedule& schedule,
                         const StackedOptions& options);

/// Same loop from explicit initial blocks.
StackedRun train_stacked_from(const SyntheticTask& task, LayerWeights initial,
                              const SweSchedule& schedule, const StackedOptions& options);

// --- sweeps --------------------------------------------------------------------

struct SweepRow {
  std::string config;
  std::uint64_t seed = 0;
  double final_test_mse = 0.0;
};

struct SweepSummaryRow {
  std::string config;
  double median_final_test_mse = 0.0;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  std::vector<SweepSummaryRow> summary;
};

/// Runs SWE with τ = round(α·T) for every fraction α and every seed.
SweepTable untie_sweep(const SyntheticTask& task, std::size_t total_steps, double eta,
                       const std::vector<double>& fractions, const std::vector<std::uint64_t>& seeds,
                       const StackedOptions& base);

/// Runs SWE with each A×B unit shape and the given untie step.
SweepTable grouping_sweep(const SyntheticTask& task, std::size_t total_steps,
                          std::size_t untie_step, double eta,
                          const std::vector<UnitShape>& shapes,
                          const std::vector<std::uint64_t>& seeds, const StackedOptions& base);

}  // namespace swe::stacked
