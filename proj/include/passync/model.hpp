#pragma once

// Per-epoch linear-Gaussian measurement model for a passive node listening to
// a master clock and (optionally) three relaying transceivers.
//
// Units: nanoseconds for time, meters for space, meters per nanosecond for the
// propagation speed. Measurement slots are ordered (phi, u, m, 1, 2, 3) and
// range slots (m, 1, 2, 3).

#include <array>
#include <optional>

#include <Eigen/Dense>

#include "passync/error.hpp"

namespace passync {

inline constexpr int kMaxDim = 3;
inline constexpr int kClockParams = 3;
inline constexpr int kRanges = 4;
inline constexpr int kMaxRows = 6;
inline constexpr int kMaxTheta = kClockParams + kMaxDim;

inline constexpr double kSpeedOfLight = 0.299792458;  // m/ns

// Fixed-capacity dynamic Eigen types: sized at runtime, never heap allocated.
using Position = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using SpatialMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;
using MeasVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxRows, 1>;
using MeasMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxRows, kMaxRows>;
using Regressor = Eigen::Matrix<double, Eigen::Dynamic, kClockParams, 0, kMaxRows, kClockParams>;
using RangeMixing = Eigen::Matrix<double, Eigen::Dynamic, kRanges, 0, kMaxRows, kRanges>;
using RangeVector = Eigen::Matrix<double, kRanges, 1>;
using RangeJacobian = Eigen::Matrix<double, kRanges, Eigen::Dynamic, 0, kRanges, kMaxDim>;
using ThetaVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxTheta, 1>;
using ThetaMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxTheta, kMaxTheta>;

/// Clock parameters c = [phi_u, T_u, T_m], all in nanoseconds.
struct ClockParams {
  double phi_u = 0.0;
  double T_u = 50.0;
  double T_m = 50.0;

  Eigen::Vector3d as_vector() const { return {phi_u, T_u, T_m}; }
  static ClockParams from_vector(const Eigen::Vector3d& c) { return {c(0), c(1), c(2)}; }

  void validate() const;
};

/// Anchor geometry and epoch structure. Anchor 0 is the master; anchors 1..3
/// are the transceivers, which relay in that order.
struct SceneConfig {
  int dim = 2;
  Position master = Position::Ones(2);
  std::optional<std::array<Position, 3>> transceivers;
  int M = 100;
  int N = 101;
  double delta_0 = 100.0;  // ns
  double prop_speed = kSpeedOfLight;

  bool has_transceivers() const { return transceivers.has_value(); }

  /// Anchor by range-slot index (0 = master, 1..3 = transceivers).
  const Position& anchor(int i) const;
  int anchor_count() const { return has_transceivers() ? 4 : 1; }

  Position anchor_centroid() const;

  /// Throws Error on malformed geometry. Does not check clock parameters.
  void validate() const;
  /// Checks N * T_u >= M * T_m for the given clock.
  void check_clock(const ClockParams& clock) const;
};

/// Gaussian position prior x ~ N(mean, precision^-1). Zero precision means no prior.
struct PositionPrior {
  Position mean;
  SpatialMatrix precision;

  static PositionPrior none(int dim);
  static PositionPrior isotropic(const Position& mean, double std_m);
  static PositionPrior diagonal(const Position& mean, const Position& std_m);

  bool informative() const { return precision.size() > 0 && precision.cwiseAbs().maxCoeff() > 0.0; }
  int dim() const { return static_cast<int>(mean.size()); }
  void validate(int dim) const;
};

enum class EpochMode { MasterOnly, WithTransceivers };

constexpr int measurement_count(EpochMode mode) {
  return mode == EpochMode::MasterOnly ? 3 : 6;
}
const char* to_string(EpochMode mode);

struct SystemMatrices {
  MeasMatrix S;    // n x 6
  Regressor H;     // n x 3
  RangeMixing G;   // n x 4
  MeasVector mu;   // n, ns
  MeasMatrix Q;    // n x n, unit-variance noise shape
  int k = 1;
  EpochMode mode = EpochMode::WithTransceivers;

  int rows() const { return static_cast<int>(mu.size()); }
};

struct RangeModel {
  RangeVector rho = RangeVector::Zero();
  RangeJacobian jacobian;  // 4 x d, unit rows
};

/// Noise level schedule. Outlier epochs are chosen independently with the
/// given probability and have their sigma multiplied by outlier_multiplier.
struct NoiseConfig {
  double alpha = 0.1;
  double sigma_base = 2.0;  // ns
  double outlier_probability = 0.0;
  double outlier_multiplier = 1.0;

  void validate() const;
};

/// 6x6 noise-shape template (slots phi, u, m, 1, 2, 3) for timing-device fraction alpha.
Eigen::Matrix<double, 6, 6> noise_shape_template(double alpha);

SystemMatrices build_system_matrices(int k, EpochMode mode, const SceneConfig& scene, double alpha);

/// Ranges and unit-direction Jacobian. Transceiver slots are zero when the
/// scene has no transceivers (their G columns are never selected then).
RangeModel range_model(const Position& x, const SceneConfig& scene);

/// Noise-free measurement mean mu + H c + G rho(x) / prop_speed.
MeasVector model_mean(const SystemMatrices& mats, const ClockParams& clock, const Position& x,
                      const SceneConfig& scene);

}  // namespace passync
