#pragma once

// Experiment configuration, the Monte Carlo harness, and flat-file result
// emitters used by the command-line tool.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "passync/bounds.hpp"
#include "passync/estimator.hpp"
#include "passync/sim.hpp"

namespace passync {

enum class Scenario {
  Prior,         // master only; node position drawn from a Gaussian prior per trial
  Transceivers,  // three relaying transceivers; node position fixed, no prior
};

struct TruthSpec {
  double T_u = 50.0;      // ns
  double T_m = 50.0;      // ns
  double delta_1 = 5.0;   // ns
  bool randomize_position = false;
  Position position;      // used when not randomized
};

enum class SweepParam { Sigma, SigmaX, Epochs };

struct Sweep {
  SweepParam param = SweepParam::Sigma;
  std::vector<double> values;
};

enum class OutputFormat { Csv, Json };

struct ExperimentConfig {
  Scenario scenario = Scenario::Transceivers;
  SceneConfig scene;
  TruthSpec truth;
  PositionPrior prior;
  NoiseConfig noise;
  SolverOptions solver;
  int epochs = 500;
  int trials = 300;
  std::uint64_t seed = 1;
  std::vector<int> checkpoints;
  std::optional<Sweep> sweep;
  int hcrb_samples = kDefaultHcrbSamples;
  BoundKind map_kind = BoundKind::Crb;
  GridSpec map_grid;
  std::string output_path;
  OutputFormat output_format = OutputFormat::Csv;

  /// Throws Error(Config) naming the offending key.
  void validate() const;

  /// Checkpoints clipped to the epoch count, always ending at it.
  std::vector<int> effective_checkpoints() const;
};

inline const std::vector<int>& default_checkpoints() {
  static const std::vector<int> k{1, 2, 5, 10, 20, 50, 100, 250, 500};
  return k;
}

/// Defaults for a scenario before any user keys are applied.
ExperimentConfig default_config(Scenario scenario);

/// Parses a JSON document with sections scene, truth, prior, noise, solver,
/// experiment. Unknown keys are rejected; missing keys take the defaults of
/// the selected scenario.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// Fully resolved document; parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const ExperimentConfig& config);

SweepParam parse_sweep_param(const std::string& name);
const char* to_string(SweepParam param);
const char* to_string(Scenario scenario);
OutputFormat parse_format(const std::string& name);

struct ResultRow {
  double sweep_value = 0.0;
  int k = 0;
  double rmse_phi = 0.0;  // ns
  double rmse_Tu = 0.0;   // ns
  double rmse_Tm = 0.0;   // ns
  double rmse_x = 0.0;    // m
  std::optional<double> bound_phi;  // root CRB / HCRB, ns
  std::optional<double> bound_Tu;
  std::optional<double> bound_Tm;
  int trials = 0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  SweepParam sweep_param = SweepParam::Sigma;
  std::uint64_t seed = 0;
  int failed_trials = 0;
};

/// Everything a trial estimator sees.
struct TrialContext {
  const ExperimentConfig& config;
  const GroundTruth& truth;
  std::span<const EpochMeasurement> stream;
  std::span<const int> checkpoints;
};

/// Returns theta_hat at each checkpoint. Throwing passync::Error marks the trial failed.
using TrialEstimator = std::function<std::vector<ThetaVector>(const TrialContext&)>;

/// Default trial estimator: OnlineEstimator over the stream.
std::vector<ThetaVector> online_trial_estimator(const TrialContext& ctx);

/// Effective config for one sweep value.
ExperimentConfig apply_sweep(const ExperimentConfig& config, double value);

/// Ground truth of one trial (position drawn from the prior when randomized).
GroundTruth draw_truth(const ExperimentConfig& config, SeedStream trial_seed);

/// Seed stream of trial t under sweep index s.
SeedStream trial_stream(const ExperimentConfig& config, std::size_t sweep_index, int trial);

/// Root bounds at the checkpoints for a (swept) config, from the bounds module.
std::vector<std::optional<BoundResult>> experiment_bounds(const ExperimentConfig& config);

/// Trials run in parallel with OpenMP; rows are reduced in trial order, so the
/// result is identical to run_monte_carlo_serial.
ResultTable run_monte_carlo(const ExperimentConfig& config, const TrialEstimator& estimator = {});
ResultTable run_monte_carlo_serial(const ExperimentConfig& config, const TrialEstimator& estimator = {});

// --- emitters ---------------------------------------------------------------

void emit_results(const ResultTable& table, OutputFormat format, std::ostream& out);
void emit_results(const ResultTable& table, OutputFormat format, const std::string& path);

void emit_map(std::span<const MapPoint> grid, OutputFormat format, std::ostream& out);
void emit_map(std::span<const MapPoint> grid, OutputFormat format, const std::string& path);

/// Measurement stream rows: trial, k, mode, y_phi, y_u, y_m, y_1, y_2, y_3
/// (transceiver cells empty for master-only epochs). Trial index = position in `trials`.
void emit_measurements(std::span<const std::vector<EpochMeasurement>> trials, OutputFormat format,
                       std::ostream& out);

/// Online trajectory rows: trial, k, phi_hat, Tu_hat, Tm_hat, x_hat_1.., sigma_hat, provisional.
void emit_trajectory(std::span<const std::vector<OnlineStep>> trials, int dim, OutputFormat format,
                     std::ostream& out);

/// Bound trajectory rows: k, bound_phi_ns, bound_Tu_ns, bound_Tm_ns.
void emit_bounds(std::span<const int> checkpoints, std::span<const std::optional<BoundResult>> bounds,
                 OutputFormat format, std::ostream& out);

}  // namespace passync
