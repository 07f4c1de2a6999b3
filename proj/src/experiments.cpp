#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <ostream>

#include <Eigen/Cholesky>

#include "json.hpp"

#include "passync/experiments.hpp"

namespace passync {

using json = nlohmann::json;

namespace {

EpochMode scene_mode(const SceneConfig& scene) {
  return scene.has_transceivers() ? EpochMode::WithTransceivers : EpochMode::MasterOnly;
}

struct TrialOutcome {
  std::vector<ThetaVector> estimates;
  ThetaVector truth;
  bool failed = false;
};

TrialOutcome run_trial(const ExperimentConfig& config, const std::vector<int>& checkpoints, std::size_t sweep_index,
                       int trial, const TrialEstimator& estimator) {
  TrialOutcome out;
  try {
    const SeedStream seed = trial_stream(config, sweep_index, trial);
    const GroundTruth truth = draw_truth(config, seed);
    const EpochMode mode = scene_mode(config.scene);
    const auto stream = simulate_campaign(truth, config.scene, config.noise, std::span(&mode, 1), config.epochs, seed);
    const TrialContext ctx{config, truth, stream, checkpoints};
    out.estimates = estimator ? estimator(ctx) : online_trial_estimator(ctx);
    if (out.estimates.size() != checkpoints.size()) {
      throw Error(ErrorCode::Runtime, "trial estimator returned the wrong number of checkpoints");
    }
    out.truth.resize(kClockParams + truth.position.size());
    out.truth << truth.clock.as_vector(), truth.position;
    for (const auto& e : out.estimates) {
      if (e.size() != out.truth.size() || !e.allFinite()) throw Error(ErrorCode::Runtime, "non-finite estimate");
    }
  } catch (const Error&) {
    out.failed = true;
  }
  return out;
}

double sweep_value_of(const ExperimentConfig& config) {
  if (!config.sweep) return config.noise.sigma_base;
  switch (config.sweep->param) {
    case SweepParam::Sigma: return config.noise.sigma_base;
    case SweepParam::SigmaX: return 1.0 / std::sqrt(config.prior.precision(0, 0));
    case SweepParam::Epochs: return config.epochs;
  }
  return 0.0;
}

void reduce(const ExperimentConfig& config, const std::vector<int>& checkpoints,
            const std::vector<TrialOutcome>& outcomes, ResultTable& table) {
  const auto bounds = experiment_bounds(config);
  int ok = 0;
  std::vector<Eigen::VectorXd> sq(checkpoints.size(), Eigen::VectorXd::Zero(4));
  for (const auto& o : outcomes) {
    if (o.failed) {
      ++table.failed_trials;
      continue;
    }
    ++ok;
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
      const ThetaVector err = o.estimates[c] - o.truth;
      sq[c].head<3>() += err.head<3>().array().square().matrix();
      sq[c](3) += err.tail(err.size() - kClockParams).squaredNorm();
    }
  }
  const double limit = 0.01 * static_cast<double>(outcomes.size());
  if (static_cast<double>(outcomes.size() - static_cast<std::size_t>(ok)) > limit) {
    throw Error(ErrorCode::Runtime, std::to_string(outcomes.size() - static_cast<std::size_t>(ok)) + " of " +
                                        std::to_string(outcomes.size()) + " trials failed");
  }
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    ResultRow row;
    row.sweep_value = sweep_value_of(config);
    row.k = checkpoints[c];
    row.trials = ok;
    const Eigen::VectorXd rmse = (sq[c] / std::max(ok, 1)).array().sqrt();
    row.rmse_phi = rmse(0);
    row.rmse_Tu = rmse(1);
    row.rmse_Tm = rmse(2);
    row.rmse_x = rmse(3);
    if (bounds[c]) {
      row.bound_phi = bounds[c]->sqrt_diag(0);
      row.bound_Tu = bounds[c]->sqrt_diag(1);
      row.bound_Tm = bounds[c]->sqrt_diag(2);
    }
    table.rows.push_back(row);
  }
}

template <class RunTrials>
ResultTable monte_carlo(const ExperimentConfig& config, RunTrials&& run_trials) {
  config.validate();
  ResultTable table;
  table.seed = config.seed;
  table.sweep_param = config.sweep ? config.sweep->param : SweepParam::Sigma;
  const std::vector<double> values = config.sweep ? config.sweep->values : std::vector<double>{};
  const std::size_t n_sweep = config.sweep ? values.size() : 1;
  for (std::size_t s = 0; s < n_sweep; ++s) {
    const ExperimentConfig cfg = config.sweep ? apply_sweep(config, values[s]) : config;
    const auto checkpoints = cfg.effective_checkpoints();
    std::vector<TrialOutcome> outcomes(static_cast<std::size_t>(cfg.trials));
    run_trials(cfg, checkpoints, s, outcomes);
    reduce(cfg, checkpoints, outcomes, table);
  }
  return table;
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string opt_cell(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void write_file(const std::string& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  body(out);
  if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

}  // namespace

std::vector<ThetaVector> online_trial_estimator(const TrialContext& ctx) {
  const auto& cfg = ctx.config;
  OnlineEstimator est(cfg.scene, cfg.prior, cfg.solver, cfg.noise.alpha);
  std::vector<ThetaVector> out;
  out.reserve(ctx.checkpoints.size());
  std::size_t next = 0;
  for (const auto& m : ctx.stream) {
    if (next == ctx.checkpoints.size()) break;
    const OnlineStep step = est.step(m);
    if (step.k == ctx.checkpoints[next]) {
      out.push_back(step.theta_hat);
      ++next;
    }
  }
  return out;
}

ExperimentConfig apply_sweep(const ExperimentConfig& config, double value) {
  ExperimentConfig c = config;
  c.sweep.reset();
  switch (config.sweep ? config.sweep->param : SweepParam::Sigma) {
    case SweepParam::Sigma:
      c.noise.sigma_base = value;
      break;
    case SweepParam::SigmaX:
      c.prior = PositionPrior::isotropic(config.prior.mean, value);
      break;
    case SweepParam::Epochs:
      c.epochs = static_cast<int>(value);
      c.checkpoints = {c.epochs};
      break;
  }
  c.sweep = config.sweep;
  return c;
}

GroundTruth draw_truth(const ExperimentConfig& config, SeedStream trial_seed) {
  Position x = config.truth.position;
  if (config.truth.randomize_position) {
    auto rng = trial_seed.child(stream_tag::kTruth).engine();
    std::normal_distribution<double> normal;
    const auto d = config.prior.mean.size();
    Position z(d);
    for (Eigen::Index i = 0; i < d; ++i) z(i) = normal(rng);
    // precision = L L^T  =>  x = mean + L^-T z has covariance precision^-1
    const Eigen::LLT<SpatialMatrix> llt(config.prior.precision);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::InvalidArgument, "prior precision is not positive definite");
    x = config.prior.mean + Position(llt.matrixU().solve(z));
  }
  return GroundTruth::from_interval(config.truth.delta_1, config.truth.T_u, config.truth.T_m, x, config.scene);
}

SeedStream trial_stream(const ExperimentConfig& config, std::size_t sweep_index, int trial) {
  return SeedStream(config.seed)
      .child(stream_tag::kSweep)
      .child(sweep_index)
      .child(stream_tag::kCampaign)
      .child(static_cast<std::uint64_t>(trial));
}

std::vector<std::optional<BoundResult>> experiment_bounds(const ExperimentConfig& config) {
  const auto checkpoints = config.effective_checkpoints();
  const EpochMode mode = scene_mode(config.scene);
  const double sigma = config.noise.sigma_base;
  if (config.truth.randomize_position) {
    return hcrb_trajectory(config.prior, config.scene, std::span(&mode, 1), std::span(&sigma, 1), config.noise.alpha,
                           checkpoints, config.hcrb_samples, SeedStream(config.seed).child(stream_tag::kHcrb));
  }
  const SpatialMatrix* prior = config.prior.informative() ? &config.prior.precision : nullptr;
  return crb_trajectory(config.truth.position, config.scene, std::span(&mode, 1), std::span(&sigma, 1),
                        config.noise.alpha, checkpoints, prior);
}

ResultTable run_monte_carlo(const ExperimentConfig& config, const TrialEstimator& estimator) {
  return monte_carlo(config, [&](const ExperimentConfig& cfg, const std::vector<int>& checkpoints, std::size_t s,
                                 std::vector<TrialOutcome>& outcomes) {
    std::exception_ptr error;
    const int n = static_cast<int>(outcomes.size());
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < n; ++t) {
      try {
        outcomes[static_cast<std::size_t>(t)] = run_trial(cfg, checkpoints, s, t, estimator);
      } catch (...) {
#pragma omp critical(passync_mc_error)
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  });
}

ResultTable run_monte_carlo_serial(const ExperimentConfig& config, const TrialEstimator& estimator) {
  return monte_carlo(config, [&](const ExperimentConfig& cfg, const std::vector<int>& checkpoints, std::size_t s,
                                 std::vector<TrialOutcome>& outcomes) {
    for (std::size_t t = 0; t < outcomes.size(); ++t) {
      outcomes[t] = run_trial(cfg, checkpoints, s, static_cast<int>(t), estimator);
    }
  });
}

// --- emitters ---------------------------------------------------------------

void emit_results(const ResultTable& table, OutputFormat format, std::ostream& out) {
  const char* param = to_string(table.sweep_param);
  if (format == OutputFormat::Csv) {
    out << "sweep_value,k,rmse_phi_ns,rmse_Tu_ns,rmse_Tm_ns,rmse_x_m,bound_phi_ns,bound_Tu_ns,bound_Tm_ns,trials\n";
    for (const auto& r : table.rows) {
      out << fmt(r.sweep_value) << ',' << r.k << ',' << fmt(r.rmse_phi) << ',' << fmt(r.rmse_Tu) << ','
          << fmt(r.rmse_Tm) << ',' << fmt(r.rmse_x) << ',' << opt_cell(r.bound_phi) << ',' << opt_cell(r.bound_Tu)
          << ',' << opt_cell(r.bound_Tm) << ',' << r.trials << '\n';
    }
    return;
  }
  json doc;
  doc["sweep_param"] = param;
  doc["seed"] = table.seed;
  doc["failed_trials"] = table.failed_trials;
  doc["rows"] = json::array();
  for (const auto& r : table.rows) {
    doc["rows"].push_back({{"sweep_value", r.sweep_value},
                           {"k", r.k},
                           {"rmse_phi_ns", r.rmse_phi},
                           {"rmse_Tu_ns", r.rmse_Tu},
                           {"rmse_Tm_ns", r.rmse_Tm},
                           {"rmse_x_m", r.rmse_x},
                           {"bound_phi_ns", opt_json(r.bound_phi)},
                           {"bound_Tu_ns", opt_json(r.bound_Tu)},
                           {"bound_Tm_ns", opt_json(r.bound_Tm)},
                           {"trials", r.trials}});
  }
  out << doc.dump(2) << '\n';
}

void emit_results(const ResultTable& table, OutputFormat format, const std::string& path) {
  write_file(path, [&](std::ostream& out) { emit_results(table, format, out); });
}

void emit_map(std::span<const MapPoint> grid, OutputFormat format, std::ostream& out) {
  if (format == OutputFormat::Csv) {
    out << "x1_m,x2_m,sqrt_bound_phi_ns\n";
    for (const auto& p : grid) out << fmt(p.x1) << ',' << fmt(p.x2) << ',' << opt_cell(p.sqrt_bound_phi) << '\n';
    return;
  }
  json doc = json::array();
  for (const auto& p : grid) {
    doc.push_back({{"x1_m", p.x1}, {"x2_m", p.x2}, {"sqrt_bound_phi_ns", opt_json(p.sqrt_bound_phi)}});
  }
  out << doc.dump(2) << '\n';
}

void emit_map(std::span<const MapPoint> grid, OutputFormat format, const std::string& path) {
  write_file(path, [&](std::ostream& out) { emit_map(grid, format, out); });
}

void emit_measurements(std::span<const std::vector<EpochMeasurement>> trials, OutputFormat format,
                       std::ostream& out) {
  static const char* names[] = {"y_phi", "y_u", "y_m", "y_1", "y_2", "y_3"};
  if (format == OutputFormat::Csv) {
    out << "trial,k,mode";
    for (const char* n : names) out << ',' << n;
    out << '\n';
    for (std::size_t t = 0; t < trials.size(); ++t) {
      for (const auto& m : trials[t]) {
        out << t << ',' << m.k << ',' << to_string(m.mode);
        for (int i = 0; i < kMaxRows; ++i) {
          out << ',';
          if (i < m.y.size()) out << fmt(m.y(i), "%.17g");
        }
        out << '\n';
      }
    }
    return;
  }
  json doc = json::array();
  for (std::size_t t = 0; t < trials.size(); ++t) {
    for (const auto& m : trials[t]) {
      json row{{"trial", t}, {"k", m.k}, {"mode", to_string(m.mode)}};
      for (int i = 0; i < kMaxRows; ++i) row[names[i]] = i < m.y.size() ? json(m.y(i)) : json(nullptr);
      doc.push_back(row);
    }
  }
  out << doc.dump(2) << '\n';
}

void emit_trajectory(std::span<const std::vector<OnlineStep>> trials, int dim, OutputFormat format,
                     std::ostream& out) {
  if (format == OutputFormat::Csv) {
    out << "trial,k,phi_hat_ns,Tu_hat_ns,Tm_hat_ns";
    for (int i = 0; i < dim; ++i) out << ",x" << i + 1 << "_hat_m";
    out << ",sigma_hat_ns,provisional\n";
    for (std::size_t t = 0; t < trials.size(); ++t) {
      for (const auto& s : trials[t]) {
        out << t << ',' << s.k;
        for (Eigen::Index i = 0; i < s.theta_hat.size(); ++i) out << ',' << fmt(s.theta_hat(i), "%.17g");
        out << ',' << fmt(s.sigma_hat, "%.17g") << ',' << (s.provisional ? 1 : 0) << '\n';
      }
    }
    return;
  }
  json doc = json::array();
  for (std::size_t t = 0; t < trials.size(); ++t) {
    for (const auto& s : trials[t]) {
      json x = json::array();
      for (int i = 0; i < dim; ++i) x.push_back(s.theta_hat(kClockParams + i));
      doc.push_back({{"trial", t},
                     {"k", s.k},
                     {"phi_hat_ns", s.theta_hat(0)},
                     {"Tu_hat_ns", s.theta_hat(1)},
                     {"Tm_hat_ns", s.theta_hat(2)},
                     {"x_hat_m", x},
                     {"sigma_hat_ns", s.sigma_hat},
                     {"provisional", s.provisional}});
    }
  }
  out << doc.dump(2) << '\n';
}

void emit_bounds(std::span<const int> checkpoints, std::span<const std::optional<BoundResult>> bounds,
                 OutputFormat format, std::ostream& out) {
  if (checkpoints.size() != bounds.size()) throw Error(ErrorCode::DimensionMismatch, "checkpoints and bounds differ");
  auto cell = [&](std::size_t i, int j) -> std::optional<double> {
    if (!bounds[i]) return std::nullopt;
    return bounds[i]->sqrt_diag(j);
  };
  if (format == OutputFormat::Csv) {
    out << "k,bound_phi_ns,bound_Tu_ns,bound_Tm_ns\n";
    for (std::size_t i = 0; i < bounds.size(); ++i) {
      out << checkpoints[i] << ',' << opt_cell(cell(i, 0)) << ',' << opt_cell(cell(i, 1)) << ','
          << opt_cell(cell(i, 2)) << '\n';
    }
    return;
  }
  json doc = json::array();
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    doc.push_back({{"k", checkpoints[i]},
                   {"bound_phi_ns", opt_json(cell(i, 0))},
                   {"bound_Tu_ns", opt_json(cell(i, 1))},
                   {"bound_Tm_ns", opt_json(cell(i, 2))}});
  }
  out << doc.dump(2) << '\n';
}

}  // namespace passync
