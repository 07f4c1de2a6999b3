#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"

#include "passync/experiments.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config_path;
  std::string scenario = "transceivers";
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::string out;
  std::string format;
};

void add_common(CLI::App* cmd, Common& c, bool with_trials) {
  cmd->add_option("--config", c.config_path, "JSON config file (defaults of --scenario otherwise)");
  cmd->add_option("--scenario", c.scenario, "defaults to start from when no config is given")
      ->check(CLI::IsMember({"transceivers", "prior"}));
  cmd->add_option("--seed", c.seed, "root seed (overrides the config)");
  cmd->add_option("--out", c.out, "output path (overrides the config; '-' = stdout)");
  cmd->add_option("--format", c.format, "csv or json (overrides the config)")->check(CLI::IsMember({"csv", "json"}));
  if (with_trials) cmd->add_option("--trials", c.trials, "number of trials (overrides the config)");
}

passync::ExperimentConfig resolve(const Common& c) {
  using namespace passync;
  ExperimentConfig cfg;
  if (c.config_path.empty()) {
    cfg = default_config(c.scenario == "prior" ? Scenario::Prior : Scenario::Transceivers);
  } else {
    cfg = load_config(c.config_path);
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.trials) cfg.trials = *c.trials;
  if (!c.out.empty()) cfg.output_path = c.out;
  if (!c.format.empty()) cfg.output_format = parse_format(c.format);
  cfg.validate();
  return cfg;
}

// Runs body against the configured output (stdout when the path is empty or "-").
template <class Body>
void with_output(const passync::ExperimentConfig& cfg, Body&& body) {
  if (cfg.output_path.empty() || cfg.output_path == "-") {
    body(std::cout);
    return;
  }
  std::ofstream out(cfg.output_path);
  if (!out) throw passync::Error(passync::ErrorCode::Io, "cannot open '" + cfg.output_path + "' for writing");
  body(out);
  if (!out) throw passync::Error(passync::ErrorCode::Io, "write to '" + cfg.output_path + "' failed");
}

passync::EpochMode mode_of(const passync::ExperimentConfig& cfg) {
  return cfg.scene.has_transceivers() ? passync::EpochMode::WithTransceivers : passync::EpochMode::MasterOnly;
}

void cmd_simulate(const passync::ExperimentConfig& cfg) {
  using namespace passync;
  std::vector<std::vector<EpochMeasurement>> streams;
  const EpochMode mode = mode_of(cfg);
  for (int t = 0; t < cfg.trials; ++t) {
    const SeedStream seed = trial_stream(cfg, 0, t);
    const GroundTruth truth = draw_truth(cfg, seed);
    streams.push_back(simulate_campaign(truth, cfg.scene, cfg.noise, std::span(&mode, 1), cfg.epochs, seed));
  }
  with_output(cfg, [&](std::ostream& out) { emit_measurements(streams, cfg.output_format, out); });
}

void cmd_bounds(const passync::ExperimentConfig& cfg) {
  const auto checkpoints = cfg.effective_checkpoints();
  const auto bounds = passync::experiment_bounds(cfg);
  with_output(cfg, [&](std::ostream& out) { passync::emit_bounds(checkpoints, bounds, cfg.output_format, out); });
}

void cmd_map(const passync::ExperimentConfig& cfg) {
  using namespace passync;
  MapSettings settings;
  settings.kind = cfg.map_kind;
  settings.scene = cfg.scene;
  settings.alpha = cfg.noise.alpha;
  settings.sigma = cfg.noise.sigma_base;
  settings.epochs = cfg.epochs;
  settings.prior_precision = cfg.prior.precision;
  settings.n_samples = cfg.hcrb_samples;
  settings.seed = cfg.seed;
  const auto grid = bound_map(cfg.map_grid, settings);
  with_output(cfg, [&](std::ostream& out) { emit_map(grid, cfg.output_format, out); });
}

void cmd_run(const passync::ExperimentConfig& cfg) {
  using namespace passync;
  const SeedStream seed = trial_stream(cfg, 0, 0);
  const GroundTruth truth = draw_truth(cfg, seed);
  const EpochMode mode = mode_of(cfg);
  const auto stream = simulate_campaign(truth, cfg.scene, cfg.noise, std::span(&mode, 1), cfg.epochs, seed);
  const std::vector<std::vector<OnlineStep>> runs{run_online(stream, cfg.scene, cfg.prior, cfg.solver, cfg.noise.alpha)};
  with_output(cfg, [&](std::ostream& out) { emit_trajectory(runs, cfg.scene.dim, cfg.output_format, out); });
}

void cmd_mc(const passync::ExperimentConfig& cfg) {
  const auto table = passync::run_monte_carlo(cfg);
  if (table.failed_trials > 0) std::cerr << "warning: " << table.failed_trials << " trial(s) failed and were excluded\n";
  with_output(cfg, [&](std::ostream& out) { passync::emit_results(table, cfg.output_format, out); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Passive wireless clock synchronization: simulation, bounds and online estimation"};
  app.require_subcommand(1);

  Common common;
  std::string dump_path;
  struct Entry {
    const char* name;
    const char* help;
    bool trials;
    void (*run)(const passync::ExperimentConfig&);
  };
  const Entry entries[] = {
      {"simulate", "write simulated measurement streams", true, cmd_simulate},
      {"bounds", "write the root CRB (or HCRB for a random position) at the checkpoints", false, cmd_bounds},
      {"map", "write a spatial map of the root bound on the clock offset", false, cmd_map},
      {"run", "write the trajectory of a single online run", false, cmd_run},
      {"mc", "run the Monte Carlo experiment and write the RMSE/bound table", true, cmd_mc},
  };
  std::vector<std::pair<CLI::App*, const Entry*>> commands;
  for (const auto& e : entries) {
    CLI::App* cmd = app.add_subcommand(e.name, e.help);
    add_common(cmd, common, e.trials);
    cmd->add_option("--dump-config", dump_path, "also write the fully resolved config to this path");
    commands.emplace_back(cmd, &e);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    for (const auto& [cmd, entry] : commands) {
      if (!cmd->parsed()) continue;
      const auto cfg = resolve(common);
      if (!dump_path.empty()) {
        std::ofstream dump(dump_path);
        dump << passync::serialize_config(cfg) << '\n';
        if (!dump) throw passync::Error(passync::ErrorCode::Io, "cannot write '" + dump_path + "'");
      }
      entry->run(cfg);
    }
  } catch (const passync::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == passync::ErrorCode::Config ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
