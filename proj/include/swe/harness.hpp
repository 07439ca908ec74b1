#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "swe/trace.hpp"

namespace swe::lab {

/// Raised for malformed or inconsistent configuration. `what()` lists every
/// violation, one per line, each prefixed with its field path.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

enum class ExperimentKind { Dln, Regress, Stacked, Sweep, Scan };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_kind(std::string_view text);

struct ScheduleConfig {
  std::string mode;
  std::size_t steps = 0;
  /// Unset means τ = T (shared for the whole run).
  std::optional<std::size_t> untie;
  /// [A, B]; unset means one fully shared unit [1, L].
  std::optional<std::pair<std::size_t, std::size_t>> unit;

  bool operator==(const ScheduleConfig&) const = default;
};

struct TargetConfig {
  std::string kind = "spd_spectrum";  // alpha_identity | spd_spectrum | near_spd
  double alpha = 2.0;
  /// Empty: d values evenly spaced over [0.5, 2].
  std::vector<double> eigenvalues;
  std::uint64_t rotation_seed = 0;
  double rho = 0.3;
  std::uint64_t perturbation_seed = 0;

  bool operator==(const TargetConfig&) const = default;
};

struct DlnConfig {
  std::size_t L = 4;
  std::size_t d = 4;
  std::string init = "identity";   // identity | zas
  std::string pipeline = "single"; // single | two_phase
  TargetConfig target;
  double loss_threshold = 1e-10;
  std::size_t record_every = 1;
  bool check_contraction = true;
  bool check_envelope = true;
  bool check_bound = true;

  bool operator==(const DlnConfig&) const = default;
};

struct RegressConfig {
  std::size_t L = 200;
  std::size_t n = 120;
  std::size_t m_test = 1000;
  std::size_t block = 0;  // 0: L/2
  bool compare_baseline = true;
  std::size_t record_every = 1;

  bool operator==(const RegressConfig&) const = default;
};

struct StackedConfig {
  std::size_t L = 8;
  std::size_t d = 16;
  std::size_t batch = 32;
  std::size_t n_train = 512;
  std::size_t n_test = 512;
  std::uint64_t task_seed = 1;
  double teacher_scale = 1.0;
  double init_scale = 0.5;
  std::size_t record_every = 50;
  std::string compare_mode;  // empty: no comparison run
  bool check_ties = true;

  bool operator==(const StackedConfig&) const = default;
};

struct SweepConfig {
  std::string kind = "untie";  // untie | grouping
  std::vector<double> fractions = {0.0, 0.05, 0.1, 0.2, 0.5, 1.0};
  std::vector<std::pair<std::size_t, std::size_t>> shapes;  // empty: all divisors of L

  bool operator==(const SweepConfig&) const = default;
};

struct ScanConfig {
  std::vector<std::size_t> L_grid = {50, 100, 200, 400};
  std::vector<std::size_t> n_grid = {25, 50, 100, 200};

  bool operator==(const ScanConfig&) const = default;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Dln;
  std::string out;
  std::vector<std::uint64_t> seeds = {0};
  ScheduleConfig schedule;
  std::optional<double> eta;  // nullopt: automatic
  DlnConfig dln;
  RegressConfig regress;
  StackedConfig stacked;
  SweepConfig sweep;
  ScanConfig scan;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Documented defaults for an experiment kind. The output directory defaults
/// to $SWE_LAB_OUT, else "swe_lab_out".
ExperimentConfig default_config(ExperimentKind kind);

/// Parses strict JSON (unknown keys rejected) and fills defaults. When
/// `expected` is given, the file's "experiment" must match it.
ExperimentConfig parse_config(std::string_view json_text,
                              std::optional<ExperimentKind> expected = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<ExperimentKind> expected = std::nullopt);

/// Serializes every field, defaults included.
std::string config_to_json(const ExperimentConfig& config);

/// Throws ConfigError listing every constraint violation.
void validate(const ExperimentConfig& config);

/// Command-line flag overrides; unset fields leave the config untouched.
struct Overrides {
  std::optional<std::size_t> L;
  std::optional<std::size_t> d;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> untie;
  std::optional<std::string> eta;  // "auto" or a number
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

/// Applies overrides and re-validates. Throws ConfigError.
void apply_overrides(ExperimentConfig& config, const Overrides& overrides);

/// Human-readable description of defaults, shown by `--help`.
std::string defaults_help();

// --- summaries -----------------------------------------------------------------

struct Aggregate {
  std::vector<std::string> columns;  // trace columns except "step"
  std::vector<double> median;
  std::vector<double> q25;
  std::vector<double> q75;
};

/// Per-column statistics of the final row of each trace. Traces must share
/// one schema; empty final cells are skipped (NaN when a column has none).
Aggregate summarize(const std::vector<Trace>& traces);

/// Per-seed ratio a/b of a column's final value, for paired runs.
std::vector<double> paired_ratios(const std::vector<Trace>& a, const std::vector<Trace>& b,
                                  std::string_view column);

// --- running -------------------------------------------------------------------

struct SeedSummary {
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> metrics;
};

struct CheckOutcome {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct RunReport {
  std::string config_json;
  std::vector<SeedSummary> seeds;
  std::vector<std::pair<std::string, double>> aggregates;
  std::vector<CheckOutcome> checks;
  std::chrono::duration<double> wall_clock{0};
  std::filesystem::path directory;

  bool checks_passed() const;
  /// Report text; omits wall-clock time so files stay byte-identical.
  std::string to_text() const;
};

/// Runs the experiment and writes <out>/<experiment>/{<seed>.csv, summary.csv,
/// report.txt}. Throws ConfigError on invalid configs; numeric failures
/// propagate as swe::NumericalError.
RunReport run(const ExperimentConfig& config);

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitConfigError = 2,
  kExitNumericalError = 3,
};

}  // namespace swe::lab
