// swe_lab: run shared-then-untied training experiments from JSON configs.

#include <CLI11.hpp>

#include <iostream>

#include "swe/core_math.hpp"
#include "swe/harness.hpp"

namespace {

struct Flags {
  std::string config;
  swe::lab::Overrides overrides;
};

void add_flags(CLI::App& cmd, Flags& f) {
  cmd.add_option("--config", f.config, "JSON config file (defaults apply when omitted)");
  cmd.add_option("--L", f.overrides.L, "depth (scan: single-entry L grid)");
  cmd.add_option("--d", f.overrides.d, "width for dln and stacked");
  cmd.add_option("--steps", f.overrides.steps, "total steps T");
  cmd.add_option("--untie", f.overrides.untie, "untie step tau (<= steps)");
  cmd.add_option("--eta", f.overrides.eta, "step size: auto or a number");
  cmd.add_option("--seed", f.overrides.seed, "run a single seed");
  cmd.add_option("--out", f.overrides.out, "output directory (default $SWE_LAB_OUT or swe_lab_out)");
}

int execute(swe::lab::ExperimentKind kind, const Flags& f) {
  using namespace swe::lab;
  try {
    ExperimentConfig config = f.config.empty() ? default_config(kind) : load_config(f.config, kind);
    apply_overrides(config, f.overrides);
    const RunReport report = run(config);
    std::cout << report.to_text();
    std::cout << "wall_clock_seconds: " << report.wall_clock.count() << "\n";
    std::cout << "outputs: " << report.directory.string() << "\n";
    return report.checks_passed() ? kExitOk : kExitCheckFailed;
  } catch (const ConfigError& e) {
    std::cerr << "config error:\n" << e.what() << "\n";
    return kExitConfigError;
  } catch (const swe::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumericalError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return kExitNumericalError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  using swe::lab::ExperimentKind;
  CLI::App app{"Shared-then-untied training lab"};
  app.footer(swe::lab::defaults_help());
  app.require_subcommand(1);

  const std::pair<ExperimentKind, const char*> kinds[] = {
      {ExperimentKind::Dln, "deep linear network convergence and bound checks"},
      {ExperimentKind::Regress, "over-parameterized regression, shared-then-untied vs plain descent"},
      {ExperimentKind::Stacked, "stacked residual network on a teacher task"},
      {ExperimentKind::Sweep, "untie-point or unit-grouping sweep on the stacked network"},
      {ExperimentKind::Scan, "closed-form shared-solution error scan over (L, n)"},
  };
  Flags flags;
  std::optional<ExperimentKind> chosen;
  for (const auto& [kind, help] : kinds) {
    CLI::App* cmd = app.add_subcommand(std::string(swe::lab::to_string(kind)), help);
    add_flags(*cmd, flags);
    cmd->callback([&chosen, kind = kind] { chosen = kind; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : swe::lab::kExitConfigError;
  }
  return execute(*chosen, flags);
}
