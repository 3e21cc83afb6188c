// trapsim command-line front end.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "trapsim/app/experiments.hpp"

namespace {

constexpr const char* kManual = R"(NAME
    trapsim - parametric-drive single-electron trap simulations

SYNOPSIS
    trapsim list-presets
    trapsim validate [--config PATH] [--preset NAME] [--override KEY=VALUE]...
    trapsim run [--config PATH] [--preset NAME] [--seed N] [--workers N]
                [--out DIR] [--override KEY=VALUE]...

DESCRIPTION
    Configurations are layered: built-in defaults, then the preset, then the
    file given with --config, then each --override in order. A manifest.json
    written by a previous run is accepted by --config and repeats that run.

    validate  Checks schema and physics constraints without running anything.
              Prints every error and warning. Exit 0 when valid.
    run       Executes the configured experiment. Artifacts, summary.json and
              manifest.json go to the output directory.
    list-presets
              Prints the built-in presets.

OPTIONS
    --config PATH        YAML or JSON configuration (or a run manifest).
    --preset NAME        Start from a named preset.
    --seed N             Same as --override experiment.seed=N.
    --workers N          Same as --override experiment.workers=N (0 = all cores).
                         Results do not depend on the worker count.
    --out DIR            Output directory. Default: $TRAPSIM_OUT/<name>, where
                         <name> is the preset or the experiment kind.
    --override KEY=VAL   Dotted key into the configuration, e.g.
                         resonator.Q=2000 or run.phi_x_values=[0,1.57].

CONFIGURATION SECTIONS
    experiment  kind, seed, workers
    trap        secular_MHz [x,y,z], rf_MHz, phi_rf, d_eff_mm, dc_split,
                calibration (floquet|pseudopotential), anharmonic
    resonator   Q, Z0_ohm, f_res_MHz, temperature_K
    drive       f_d_MHz, phi_d, epsilon_max, ramp_duration_us, start_time_us
    init        temperature_K, phases [x,y,z], phi_rf
    integrator  mode (ODE|SDE), abstol, reltol, max_step_ns, sample_rate_GHz,
                noise_substeps
    noise       surface, johnson, rf_walk and their parameters
    run         per-experiment parameters (duration_us, trajectories, ...)
    Print the full default document with: trapsim validate --print

EXPERIMENT KINDS
    SlowflowPortrait, SlowflowEnsemble, Sim1D, Sim3D, DetuningScan,
    NoisyEnsemble, SnrCurve, BurstStats

ENVIRONMENT
    TRAPSIM_OUT          Root for default output directories (default: runs).

EXIT STATUS
    0  success
    1  failure (invalid configuration, I/O error, all trajectories failed)
    2  partial (some trajectories failed or escaped; see summary.json)
)";

struct Common {
  std::string config;
  std::string preset;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "YAML/JSON configuration or run manifest");
  app->add_option("--preset", c.preset, "named preset (see list-presets)");
  app->add_option("--override", c.overrides, "KEY=VALUE, repeatable")->take_all();
}

std::optional<std::string> opt(const std::string& s) {
  return s.empty() ? std::nullopt : std::optional<std::string>(s);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace trapsim::app;
  CLI::App app{"trapsim - parametric-drive single-electron trap simulations"};
  app.footer(kManual);
  app.require_subcommand(1);

  auto* list = app.add_subcommand("list-presets", "list built-in presets");

  Common vc;
  bool print = false;
  auto* validate = app.add_subcommand("validate", "check a configuration without running");
  add_common(validate, vc);
  validate->add_flag("--print", print, "print the resolved configuration");

  Common rc;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::string out;
  auto* run = app.add_subcommand("run", "run an experiment");
  add_common(run, rc);
  run->add_option("--seed", seed, "base seed");
  run->add_option("--workers", workers, "worker threads (0 = all cores)");
  run->add_option("--out", out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*list) {
      for (const auto& p : presets()) std::cout << p.name << "\n    " << p.description << '\n';
      return 0;
    }
    if (*validate) {
      const auto cfg = load_config(opt(vc.config), opt(vc.preset), vc.overrides);
      for (const auto& w : cfg.warnings) std::cout << "warning: " << w << '\n';
      if (print) std::cout << YAML::Dump(cfg.resolved) << '\n';
      std::cout << "valid (" << to_string(cfg.kind) << ", " << cfg.warnings.size() << " warnings)\n";
      return 0;
    }
    auto overrides = rc.overrides;
    if (seed) overrides.push_back("experiment.seed=" + std::to_string(*seed));
    if (workers) overrides.push_back("experiment.workers=" + std::to_string(*workers));
    const auto cfg = load_config(opt(rc.config), opt(rc.preset), overrides);
    for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << '\n';
    fs::path dir = out;
    if (dir.empty()) {
      const char* root = std::getenv("TRAPSIM_OUT");
      dir = fs::path(root && *root ? root : "runs") / (rc.preset.empty() ? to_string(cfg.kind) : rc.preset);
    }
    const auto res = run_experiment(cfg, dir);
    std::cout << res.summary.dump(2) << '\n';
    for (const auto& a : res.artifacts) std::cout << (dir / a).string() << '\n';
    return static_cast<int>(res.status);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
