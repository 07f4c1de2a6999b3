#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "passync/experiments.hpp"

namespace passync {

using json = nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& key, const std::string& what) {
  throw Error(ErrorCode::Config, "'" + key + "': " + what);
}

void reject_unknown(const json& section, const std::string& name, std::initializer_list<const char*> allowed) {
  if (!section.is_object()) config_error(name, "expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : section.items()) {
    if (!ok.count(key)) config_error(name + "." + key, "unknown key");
  }
}

template <class T>
void read(const json& section, const std::string& name, const char* key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(name + "." + key, "wrong type");
  }
}

Position read_position(const json& value, const std::string& key) {
  if (!value.is_array() || value.size() < 1 || value.size() > static_cast<std::size_t>(kMaxDim)) {
    config_error(key, "expected an array of 2 or 3 numbers");
  }
  Position p(static_cast<Eigen::Index>(value.size()));
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (!value[i].is_number()) config_error(key, "expected numbers");
    p(static_cast<Eigen::Index>(i)) = value[i].get<double>();
  }
  return p;
}

json write_position(const Position& p) {
  json out = json::array();
  for (Eigen::Index i = 0; i < p.size(); ++i) out.push_back(p(i));
  return out;
}

SpatialMatrix read_matrix(const json& value, const std::string& key) {
  if (!value.is_array() || value.empty() || value.size() > static_cast<std::size_t>(kMaxDim)) {
    config_error(key, "expected a square matrix");
  }
  const auto d = static_cast<Eigen::Index>(value.size());
  SpatialMatrix m(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Position row = read_position(value[static_cast<std::size_t>(i)], key);
    if (row.size() != d) config_error(key, "expected a square matrix");
    m.row(i) = row.transpose();
  }
  return m;
}

json write_matrix(const SpatialMatrix& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(write_position(m.row(i).transpose()));
  return out;
}

Position vec2(double a, double b) {
  Position p(2);
  p << a, b;
  return p;
}

Scenario parse_scenario(const std::string& name) {
  if (name == "transceivers") return Scenario::Transceivers;
  if (name == "prior") return Scenario::Prior;
  config_error("experiment.scenario", "expected 'transceivers' or 'prior'");
}

BoundKind parse_kind(const std::string& name) {
  if (name == "crb") return BoundKind::Crb;
  if (name == "hcrb") return BoundKind::Hcrb;
  config_error("experiment.map.kind", "expected 'crb' or 'hcrb'");
}

void apply_scene(const json& j, ExperimentConfig& c) {
  reject_unknown(j, "scene", {"dim", "master", "transceivers", "M", "N", "delta_0_ns", "prop_speed_m_per_ns"});
  auto& s = c.scene;
  read(j, "scene", "dim", s.dim);
  if (j.contains("master")) s.master = read_position(j["master"], "scene.master");
  if (j.contains("transceivers")) {
    const json& t = j["transceivers"];
    if (t.is_null()) {
      s.transceivers.reset();
    } else {
      if (!t.is_array() || t.size() != 3) config_error("scene.transceivers", "expected three positions or null");
      s.transceivers = std::array<Position, 3>{read_position(t[0], "scene.transceivers"),
                                               read_position(t[1], "scene.transceivers"),
                                               read_position(t[2], "scene.transceivers")};
    }
  }
  read(j, "scene", "M", s.M);
  read(j, "scene", "N", s.N);
  read(j, "scene", "delta_0_ns", s.delta_0);
  read(j, "scene", "prop_speed_m_per_ns", s.prop_speed);
}

void apply_truth(const json& j, ExperimentConfig& c) {
  reject_unknown(j, "truth", {"T_u_ns", "T_m_ns", "delta_1_ns", "position"});
  read(j, "truth", "T_u_ns", c.truth.T_u);
  read(j, "truth", "T_m_ns", c.truth.T_m);
  read(j, "truth", "delta_1_ns", c.truth.delta_1);
  if (j.contains("position")) {
    if (j["position"].is_string()) {
      if (j["position"].get<std::string>() != "random") config_error("truth.position", "expected 'random' or a position");
      c.truth.randomize_position = true;
    } else {
      c.truth.randomize_position = false;
      c.truth.position = read_position(j["position"], "truth.position");
    }
  }
}

void apply_prior(const json& j, ExperimentConfig& c) {
  reject_unknown(j, "prior", {"mean", "std_m", "precision"});
  if (j.contains("std_m") && j.contains("precision")) config_error("prior", "give either std_m or precision");
  if (j.contains("mean")) c.prior.mean = read_position(j["mean"], "prior.mean");
  const auto d = c.prior.mean.size();
  if (j.contains("std_m")) {
    const json& s = j["std_m"];
    Position std_m;
    if (s.is_number()) {
      std_m = Position::Constant(d, s.get<double>());
    } else {
      std_m = read_position(s, "prior.std_m");
    }
    if (std_m.size() != d || !(std_m.minCoeff() > 0.0)) config_error("prior.std_m", "expected positive value(s) matching the mean");
    c.prior = PositionPrior::diagonal(c.prior.mean, std_m);
  } else if (j.contains("precision")) {
    c.prior.precision = read_matrix(j["precision"], "prior.precision");
  } else if (c.prior.precision.rows() != d) {
    c.prior.precision = SpatialMatrix::Zero(d, d);
  }
}

void apply_noise(const json& j, ExperimentConfig& c) {
  reject_unknown(j, "noise", {"alpha", "sigma_ns", "outlier_probability", "outlier_factor"});
  read(j, "noise", "alpha", c.noise.alpha);
  read(j, "noise", "sigma_ns", c.noise.sigma_base);
  read(j, "noise", "outlier_probability", c.noise.outlier_probability);
  read(j, "noise", "outlier_factor", c.noise.outlier_multiplier);
}

void apply_solver(const json& j, ExperimentConfig& c) {
  reject_unknown(j, "solver",
                 {"sigma_nominal_ns", "eta", "epsilon_m", "max_iters", "initial_step_cap_m", "line_search_evals"});
  read(j, "solver", "sigma_nominal_ns", c.solver.sigma_nominal);
  read(j, "solver", "eta", c.solver.eta);
  read(j, "solver", "epsilon_m", c.solver.epsilon);
  read(j, "solver", "max_iters", c.solver.max_iters);
  read(j, "solver", "initial_step_cap_m", c.solver.initial_step_cap);
  read(j, "solver", "line_search_evals", c.solver.line_search_evals);
}

void apply_experiment(const json& j, ExperimentConfig& c) {
  reject_unknown(j, "experiment",
                 {"scenario", "epochs", "trials", "seed", "checkpoints", "hcrb_samples", "sweep", "map", "output"});
  read(j, "experiment", "epochs", c.epochs);
  read(j, "experiment", "trials", c.trials);
  read(j, "experiment", "seed", c.seed);
  read(j, "experiment", "checkpoints", c.checkpoints);
  read(j, "experiment", "hcrb_samples", c.hcrb_samples);
  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    if (s.is_null()) {
      c.sweep.reset();
    } else {
      reject_unknown(s, "experiment.sweep", {"param", "values"});
      Sweep sweep;
      std::string param = "sigma";
      read(s, "experiment.sweep", "param", param);
      sweep.param = parse_sweep_param(param);
      read(s, "experiment.sweep", "values", sweep.values);
      c.sweep = sweep;
    }
  }
  if (j.contains("map")) {
    const json& m = j["map"];
    reject_unknown(m, "experiment.map",
                   {"kind", "x_min", "x_max", "y_min", "y_max", "nx", "ny", "exclusion_radius_m"});
    if (m.contains("kind")) {
      std::string kind;
      read(m, "experiment.map", "kind", kind);
      c.map_kind = parse_kind(kind);
    }
    auto& g = c.map_grid;
    read(m, "experiment.map", "x_min", g.x_min);
    read(m, "experiment.map", "x_max", g.x_max);
    read(m, "experiment.map", "y_min", g.y_min);
    read(m, "experiment.map", "y_max", g.y_max);
    read(m, "experiment.map", "nx", g.nx);
    read(m, "experiment.map", "ny", g.ny);
    read(m, "experiment.map", "exclusion_radius_m", g.exclusion_radius);
  }
  if (j.contains("output")) {
    const json& o = j["output"];
    reject_unknown(o, "experiment.output", {"path", "format"});
    read(o, "experiment.output", "path", c.output_path);
    if (o.contains("format")) {
      std::string f;
      read(o, "experiment.output", "format", f);
      try {
        c.output_format = parse_format(f);
      } catch (const Error&) {
        config_error("experiment.output.format", "expected 'csv' or 'json'");
      }
    }
  }
}

}  // namespace

SweepParam parse_sweep_param(const std::string& name) {
  if (name == "sigma") return SweepParam::Sigma;
  if (name == "sigma_x") return SweepParam::SigmaX;
  if (name == "epochs") return SweepParam::Epochs;
  config_error("experiment.sweep.param", "expected 'sigma', 'sigma_x' or 'epochs'");
}

const char* to_string(SweepParam param) {
  switch (param) {
    case SweepParam::Sigma: return "sigma";
    case SweepParam::SigmaX: return "sigma_x";
    case SweepParam::Epochs: return "epochs";
  }
  return "sigma";
}

const char* to_string(Scenario scenario) { return scenario == Scenario::Prior ? "prior" : "transceivers"; }

OutputFormat parse_format(const std::string& name) {
  if (name == "csv") return OutputFormat::Csv;
  if (name == "json") return OutputFormat::Json;
  throw Error(ErrorCode::Config, "unknown output format '" + name + "'");
}

ExperimentConfig default_config(Scenario scenario) {
  ExperimentConfig c;
  c.scenario = scenario;
  c.scene.dim = 2;
  c.scene.master = vec2(1.0, 1.0);
  c.checkpoints = default_checkpoints();
  c.map_grid.exclusion_radius = 0.5;
  if (scenario == Scenario::Transceivers) {
    c.scene.transceivers = std::array<Position, 3>{vec2(11.0, 11.0), vec2(1.0, 11.0), vec2(11.0, 1.0)};
    c.truth.position = vec2(9.0, 8.0);
    c.prior = PositionPrior::none(2);
  } else {
    c.truth.randomize_position = true;
    c.truth.position = vec2(9.0, 8.0);
    c.prior = PositionPrior::isotropic(vec2(9.0, 8.0), 0.2);
  }
  return c;
}

void ExperimentConfig::validate() const {
  try {
    scene.validate();
  } catch (const Error& e) {
    config_error("scene", e.what());
  }
  if (scenario == Scenario::Transceivers && !scene.has_transceivers()) {
    config_error("scene.transceivers", "the transceivers scenario needs three transceiver positions");
  }
  if (scenario == Scenario::Prior && !prior.informative()) {
    config_error("prior", "the prior scenario needs an informative position prior");
  }
  if (!(truth.T_u > 0.0)) config_error("truth.T_u_ns", "must be positive");
  if (!(truth.T_m > 0.0)) config_error("truth.T_m_ns", "must be positive");
  if (scene.N * truth.T_u < scene.M * truth.T_m) config_error("truth.T_u_ns", "N * T_u must be >= M * T_m");
  if (!(truth.delta_1 >= 0.0 && truth.delta_1 < truth.T_u)) config_error("truth.delta_1_ns", "must lie in [0, T_u)");
  if (!truth.randomize_position && truth.position.size() != scene.dim) {
    config_error("truth.position", "dimension does not match scene.dim");
  }
  if (truth.randomize_position && !prior.informative()) {
    config_error("truth.position", "a random position needs an informative prior");
  }
  try {
    prior.validate(scene.dim);
  } catch (const Error& e) {
    config_error("prior", e.what());
  }
  if (!(noise.alpha > 0.0 && noise.alpha < 1.0)) config_error("noise.alpha", "must lie in (0, 1)");
  if (!(noise.sigma_base > 0.0)) config_error("noise.sigma_ns", "must be positive");
  if (!(noise.outlier_probability >= 0.0 && noise.outlier_probability <= 1.0)) {
    config_error("noise.outlier_probability", "must lie in [0, 1]");
  }
  if (!(noise.outlier_multiplier > 0.0)) config_error("noise.outlier_factor", "must be positive");
  if (!(solver.eta > 0.0)) config_error("solver.eta", "must be positive");
  if (!(solver.epsilon > 0.0)) config_error("solver.epsilon_m", "must be positive");
  if (solver.max_iters < 1) config_error("solver.max_iters", "must be >= 1");
  if (!(solver.sigma_nominal > 0.0)) config_error("solver.sigma_nominal_ns", "must be positive");
  if (solver.line_search_evals < 3) config_error("solver.line_search_evals", "must be >= 3");
  if (solver.initial_step_cap < 0.0) config_error("solver.initial_step_cap_m", "must be >= 0 (0 = automatic)");
  if (epochs < 1) config_error("experiment.epochs", "must be >= 1");
  if (trials < 1) config_error("experiment.trials", "must be >= 1");
  if (hcrb_samples < 1) config_error("experiment.hcrb_samples", "must be >= 1");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    if (checkpoints[i] < 1 || (i > 0 && checkpoints[i] <= checkpoints[i - 1])) {
      config_error("experiment.checkpoints", "must be positive and strictly increasing");
    }
  }
  if (sweep) {
    if (sweep->values.empty()) config_error("experiment.sweep.values", "must not be empty");
    for (double v : sweep->values) {
      if (!(v > 0.0)) config_error("experiment.sweep.values", "must be positive");
      if (sweep->param == SweepParam::Epochs && v != std::floor(v)) {
        config_error("experiment.sweep.values", "epoch counts must be integers");
      }
    }
  }
  if (map_grid.nx < 1 || map_grid.ny < 1) config_error("experiment.map.nx", "grid needs at least one point per axis");
  if (map_grid.exclusion_radius < 0.0) config_error("experiment.map.exclusion_radius_m", "must be >= 0");
}

std::vector<int> ExperimentConfig::effective_checkpoints() const {
  std::vector<int> out;
  for (int k : checkpoints) {
    if (k < epochs) out.push_back(k);
  }
  out.push_back(epochs);
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Config, std::string("parse error: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::Config, "top level must be an object");
  for (const auto& [key, value] : doc.items()) {
    static const std::set<std::string> sections{"scene", "truth", "prior", "noise", "solver", "experiment"};
    if (!sections.count(key)) config_error(key, "unknown section");
  }

  Scenario scenario = Scenario::Transceivers;
  if (doc.contains("experiment") && doc["experiment"].is_object() && doc["experiment"].contains("scenario")) {
    const json& s = doc["experiment"]["scenario"];
    if (!s.is_string()) config_error("experiment.scenario", "wrong type");
    scenario = parse_scenario(s.get<std::string>());
  }
  ExperimentConfig c = default_config(scenario);
  if (doc.contains("scene")) apply_scene(doc["scene"], c);
  if (doc.contains("truth")) apply_truth(doc["truth"], c);
  if (doc.contains("prior")) apply_prior(doc["prior"], c);
  if (doc.contains("noise")) apply_noise(doc["noise"], c);
  if (doc.contains("solver")) apply_solver(doc["solver"], c);
  if (doc.contains("experiment")) apply_experiment(doc["experiment"], c);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Config, "cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  json doc;
  json& scene = doc["scene"];
  scene["dim"] = c.scene.dim;
  scene["master"] = write_position(c.scene.master);
  if (c.scene.transceivers) {
    scene["transceivers"] = json::array();
    for (const auto& t : *c.scene.transceivers) scene["transceivers"].push_back(write_position(t));
  } else {
    scene["transceivers"] = nullptr;
  }
  scene["M"] = c.scene.M;
  scene["N"] = c.scene.N;
  scene["delta_0_ns"] = c.scene.delta_0;
  scene["prop_speed_m_per_ns"] = c.scene.prop_speed;

  json& truth = doc["truth"];
  truth["T_u_ns"] = c.truth.T_u;
  truth["T_m_ns"] = c.truth.T_m;
  truth["delta_1_ns"] = c.truth.delta_1;
  truth["position"] = c.truth.randomize_position ? json("random") : write_position(c.truth.position);

  doc["prior"]["mean"] = write_position(c.prior.mean);
  doc["prior"]["precision"] = write_matrix(c.prior.precision);

  json& noise = doc["noise"];
  noise["alpha"] = c.noise.alpha;
  noise["sigma_ns"] = c.noise.sigma_base;
  noise["outlier_probability"] = c.noise.outlier_probability;
  noise["outlier_factor"] = c.noise.outlier_multiplier;

  json& solver = doc["solver"];
  solver["sigma_nominal_ns"] = c.solver.sigma_nominal;
  solver["eta"] = c.solver.eta;
  solver["epsilon_m"] = c.solver.epsilon;
  solver["max_iters"] = c.solver.max_iters;
  solver["initial_step_cap_m"] = c.solver.initial_step_cap;
  solver["line_search_evals"] = c.solver.line_search_evals;

  json& exp = doc["experiment"];
  exp["scenario"] = to_string(c.scenario);
  exp["epochs"] = c.epochs;
  exp["trials"] = c.trials;
  exp["seed"] = c.seed;
  exp["checkpoints"] = c.checkpoints;
  exp["hcrb_samples"] = c.hcrb_samples;
  if (c.sweep) {
    exp["sweep"] = {{"param", to_string(c.sweep->param)}, {"values", c.sweep->values}};
  } else {
    exp["sweep"] = nullptr;
  }
  exp["map"] = {{"kind", c.map_kind == BoundKind::Crb ? "crb" : "hcrb"},
                {"x_min", c.map_grid.x_min},
                {"x_max", c.map_grid.x_max},
                {"y_min", c.map_grid.y_min},
                {"y_max", c.map_grid.y_max},
                {"nx", c.map_grid.nx},
                {"ny", c.map_grid.ny},
                {"exclusion_radius_m", c.map_grid.exclusion_radius}};
  exp["output"] = {{"path", c.output_path}, {"format", c.output_format == OutputFormat::Csv ? "csv" : "json"}};
  return doc.dump(2);
}

}  // namespace passync
