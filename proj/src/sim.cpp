#include "passync/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace passync {

GroundTruth GroundTruth::from_interval(double delta_1, double T_u, double T_m, const Position& x,
                                       const SceneConfig& scene) {
  GroundTruth t;
  t.position = x;
  t.delta_1 = delta_1;
  t.clock = {delta_1 + (x - scene.master).norm() / scene.prop_speed, T_u, T_m};
  return t;
}

void GroundTruth::validate(const SceneConfig& scene) const {
  scene.check_clock(clock);
  if (position.size() != scene.dim) throw Error(ErrorCode::DimensionMismatch, "truth position dimension");
  if (!(delta_1 >= 0.0 && delta_1 < clock.T_u)) {
    throw Error(ErrorCode::InvalidTruth, "delta_1 must lie in [0, T_u)");
  }
  const double implied = clock.phi_u - (position - scene.master).norm() / scene.prop_speed;
  if (std::abs(implied - delta_1) > 1e-9 * std::max(1.0, clock.phi_u)) {
    throw Error(ErrorCode::InvalidTruth, "delta_1 inconsistent with phi_u and master range");
  }
}

MeasMatrix symmetric_sqrt(const MeasMatrix& q) {
  Eigen::SelfAdjointEigenSolver<MeasMatrix> eig(q);
  if (eig.info() != Eigen::Success || !(eig.eigenvalues().minCoeff() > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "noise shape is not positive definite");
  }
  return eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

MeasurementGenerator::MeasurementGenerator(GroundTruth truth, SceneConfig scene, double alpha)
    : truth_(std::move(truth)), scene_(std::move(scene)), alpha_(alpha) {
  scene_.validate();
  truth_.validate(scene_);
  if (!(alpha_ > 0.0 && alpha_ < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  sqrt_master_only_ = symmetric_sqrt(build_system_matrices(1, EpochMode::MasterOnly, scene_, alpha_).Q);
  if (scene_.has_transceivers()) {
    sqrt_with_transceivers_ =
        symmetric_sqrt(build_system_matrices(1, EpochMode::WithTransceivers, scene_, alpha_).Q);
  }
}

EpochMeasurement MeasurementGenerator::noise_free(EpochMode mode, int k) const {
  const SystemMatrices mats = build_system_matrices(k, mode, scene_, alpha_);
  return {k, mode, model_mean(mats, truth_.clock, truth_.position, scene_), 0.0};
}

EpochMeasurement MeasurementGenerator::draw(EpochMode mode, int k, double sigma_k, std::mt19937_64& rng) const {
  if (!(sigma_k > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma_k must be positive");
  EpochMeasurement out = noise_free(mode, k);
  const MeasMatrix& factor = mode == EpochMode::MasterOnly ? sqrt_master_only_ : sqrt_with_transceivers_;
  std::normal_distribution<double> normal;
  MeasVector z(out.y.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  out.y += sigma_k * (factor * z);
  out.sigma_true = sigma_k;
  return out;
}

EpochMeasurement simulate_epoch(const GroundTruth& truth, const SceneConfig& scene, EpochMode mode, int k,
                                double sigma_k, double alpha, std::mt19937_64& rng) {
  return MeasurementGenerator(truth, scene, alpha).draw(mode, k, sigma_k, rng);
}

std::vector<double> make_noise_schedule(const NoiseConfig& noise, int K, SeedStream seed) {
  noise.validate();
  if (K < 1) throw Error(ErrorCode::InvalidArgument, "epoch count must be >= 1");
  std::vector<double> sigmas(static_cast<std::size_t>(K), noise.sigma_base);
  if (noise.outlier_probability <= 0.0) return sigmas;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 1; k <= K; ++k) {
    auto rng = seed.child(static_cast<std::uint64_t>(k)).engine();
    if (unit(rng) < noise.outlier_probability) sigmas[static_cast<std::size_t>(k - 1)] *= noise.outlier_multiplier;
  }
  return sigmas;
}

std::vector<EpochMeasurement> simulate_campaign(const GroundTruth& truth, const SceneConfig& scene,
                                                const NoiseConfig& noise, std::span<const EpochMode> modes, int K,
                                                SeedStream seed) {
  if (K < 1) throw Error(ErrorCode::InvalidArgument, "epoch count must be >= 1");
  if (modes.size() != 1 && modes.size() != static_cast<std::size_t>(K)) {
    throw Error(ErrorCode::DimensionMismatch, "mode sequence must have 1 or K entries");
  }
  const MeasurementGenerator gen(truth, scene, noise.alpha);
  const std::vector<double> sigmas = make_noise_schedule(noise, K, seed.child(stream_tag::kSchedule));
  const SeedStream noise_seed = seed.child(stream_tag::kNoise);

  std::vector<EpochMeasurement> out;
  out.reserve(static_cast<std::size_t>(K));
  for (int k = 1; k <= K; ++k) {
    const EpochMode mode = modes.size() == 1 ? modes[0] : modes[static_cast<std::size_t>(k - 1)];
    auto rng = noise_seed.child(static_cast<std::uint64_t>(k)).engine();
    out.push_back(gen.draw(mode, k, sigmas[static_cast<std::size_t>(k - 1)], rng));
  }
  return out;
}

TickTrace noise_free_trace(const GroundTruth& truth, const SceneConfig& scene, int K) {
  scene.validate();
  truth.validate(scene);
  if (K < 1) throw Error(ErrorCode::InvalidArgument, "epoch count must be >= 1");

  const double c = scene.prop_speed;
  const int anchors = scene.anchor_count();
  if (scene.has_transceivers()) {
    double max_flight = 0.0;
    for (int i = 0; i < anchors; ++i) {
      max_flight = std::max(max_flight, (scene.anchor(i) - truth.position).norm() / c);
      for (int j = 0; j < anchors; ++j) {
        max_flight = std::max(max_flight, (scene.anchor(i) - scene.anchor(j)).norm() / c);
      }
    }
    if (!(scene.delta_0 > max_flight)) {
      throw Error(ErrorCode::ScheduleViolation,
                  "relay delay must exceed the longest time of flight (" + std::to_string(max_flight) + " ns)");
    }
  }

  TickTrace trace;
  trace.M = scene.M;
  trace.N = scene.N;
  const std::size_t master_count = static_cast<std::size_t>(K) * scene.M + 1;
  trace.master_ticks.resize(master_count);
  for (std::size_t n = 0; n < master_count; ++n) trace.master_ticks[n] = truth.clock.T_m * static_cast<double>(n);

  const std::size_t node_count = static_cast<std::size_t>(K) * scene.N + 2;
  trace.node_ticks.resize(node_count);
  for (std::size_t n = 0; n < node_count; ++n) {
    trace.node_ticks[n] = truth.clock.T_u * static_cast<double>(n) + truth.clock.phi_u;
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  trace.reception_times.reserve(static_cast<std::size_t>(K) + 1);
  for (int k = 1; k <= K + 1; ++k) {
    std::array<double, 4> rx{nan, nan, nan, nan};
    // Each transmitter fires; the next in the order {m, 1, 2, 3} relays Delta_0
    // after it hears its predecessor.
    double tx = trace.master_ticks[static_cast<std::size_t>(k - 1) * scene.M];
    for (int i = 0; i < anchors; ++i) {
      if (i > 0) tx += (scene.anchor(i) - scene.anchor(i - 1)).norm() / c + scene.delta_0;
      rx[static_cast<std::size_t>(i)] = tx + (scene.anchor(i) - truth.position).norm() / c;
    }
    trace.reception_times.push_back(rx);
  }

  for (int k = 1; k <= K; ++k) {
    const auto& cur = trace.reception_times[static_cast<std::size_t>(k - 1)];
    const double next = trace.reception_times[static_cast<std::size_t>(k)][0];
    for (int i = 1; i < anchors; ++i) {
      if (!(cur[static_cast<std::size_t>(i)] > cur[static_cast<std::size_t>(i - 1)])) {
        throw Error(ErrorCode::ScheduleViolation, "relay signals arrive out of order");
      }
    }
    if (!(cur[static_cast<std::size_t>(anchors - 1)] < next)) {
      throw Error(ErrorCode::ScheduleViolation, "relays do not fit inside one epoch");
    }
  }
  return trace;
}

MeasVector trace_intervals(const TickTrace& trace, int k, EpochMode mode) {
  if (k < 1 || static_cast<std::size_t>(k) >= trace.reception_times.size()) {
    throw Error(ErrorCode::InvalidArgument, "epoch outside the trace");
  }
  const auto& rx = trace.reception_times[static_cast<std::size_t>(k - 1)];
  const auto& rx_next = trace.reception_times[static_cast<std::size_t>(k)];

  // First node tick at or after the first master reception.
  const double first_rx = trace.reception_times.front()[0];
  const auto first_tick = std::lower_bound(trace.node_ticks.begin(), trace.node_ticks.end(), first_rx);
  const std::size_t i0 = static_cast<std::size_t>(first_tick - trace.node_ticks.begin());
  const std::size_t tick_k = i0 + static_cast<std::size_t>(k - 1) * trace.N;
  const std::size_t tick_next = tick_k + static_cast<std::size_t>(trace.N);
  if (tick_next >= trace.node_ticks.size()) throw Error(ErrorCode::InvalidArgument, "trace too short");

  MeasVector y(measurement_count(mode));
  y(0) = trace.node_ticks[tick_k] - rx[0];
  y(1) = trace.node_ticks[tick_next] - trace.node_ticks[tick_k];
  y(2) = rx_next[0] - rx[0];
  if (mode == EpochMode::WithTransceivers) {
    if (std::isnan(rx[1])) throw Error(ErrorCode::MissingTransceivers, "trace has no relay receptions");
    for (int i = 1; i <= 3; ++i) y(2 + i) = rx[static_cast<std::size_t>(i)] - rx[static_cast<std::size_t>(i - 1)];
  }
  return y;
}

}  // namespace passync
