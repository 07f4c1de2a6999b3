#pragma once

#include <array>
#include <random>
#include <span>
#include <vector>

#include "passync/model.hpp"
#include "passync/rng.hpp"

namespace passync {

/// Ground-truth clock and position. delta_1 is the interval from the first
/// master reception to the node's next tick; it must lie in [0, T_u).
struct GroundTruth {
  ClockParams clock;
  Position position;
  double delta_1 = 0.0;

  /// Builds a consistent truth with phi_u = delta_1 + |x - x_m| / prop_speed.
  static GroundTruth from_interval(double delta_1, double T_u, double T_m, const Position& x,
                                   const SceneConfig& scene);

  void validate(const SceneConfig& scene) const;
};

struct EpochMeasurement {
  int k = 1;
  EpochMode mode = EpochMode::WithTransceivers;
  MeasVector y;
  double sigma_true = 0.0;
};

/// Explicit event times of a noise-free run. reception_times[k-1] holds the
/// arrival at the node of the master signal of epoch k followed by the three
/// relays (NaN when the scene has no transceivers); K + 1 epochs are stored so
/// that the duration of epoch K can be read off.
struct TickTrace {
  std::vector<double> master_ticks;
  std::vector<double> node_ticks;
  std::vector<std::array<double, 4>> reception_times;
  int M = 0;
  int N = 0;
};

/// Draws correlated measurement noise through a symmetric square root of Q,
/// factored once per epoch mode.
class MeasurementGenerator {
 public:
  MeasurementGenerator(GroundTruth truth, SceneConfig scene, double alpha);

  EpochMeasurement noise_free(EpochMode mode, int k) const;
  EpochMeasurement draw(EpochMode mode, int k, double sigma_k, std::mt19937_64& rng) const;

  const GroundTruth& truth() const { return truth_; }

 private:
  GroundTruth truth_;
  SceneConfig scene_;
  double alpha_;
  MeasMatrix sqrt_master_only_;
  MeasMatrix sqrt_with_transceivers_;
};

/// Symmetric square root of a symmetric positive-definite matrix.
MeasMatrix symmetric_sqrt(const MeasMatrix& q);

EpochMeasurement simulate_epoch(const GroundTruth& truth, const SceneConfig& scene, EpochMode mode, int k,
                                double sigma_k, double alpha, std::mt19937_64& rng);

/// Per-epoch sigma sequence; epoch k's outlier draw comes from seed.child(k).
std::vector<double> make_noise_schedule(const NoiseConfig& noise, int K, SeedStream seed);

/// modes holds either one entry per epoch or a single entry used for all epochs.
std::vector<EpochMeasurement> simulate_campaign(const GroundTruth& truth, const SceneConfig& scene,
                                                const NoiseConfig& noise, std::span<const EpochMode> modes, int K,
                                                SeedStream seed);

TickTrace noise_free_trace(const GroundTruth& truth, const SceneConfig& scene, int K);

/// Intervals observed by the node in epoch k, read off the trace by locating
/// ticks and receptions (no use of the closed-form model).
MeasVector trace_intervals(const TickTrace& trace, int k, EpochMode mode);

}  // namespace passync
