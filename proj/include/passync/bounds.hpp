#pragma once

// Fisher information, accumulated Cramer-Rao bounds on the clock parameters,
// hybrid bounds under a Gaussian position prior, and spatial bound maps.
//
// Parameter ordering is theta = [phi_u, T_u, T_m, x_1 .. x_d].

#include <optional>
#include <span>
#include <vector>

#include "passync/model.hpp"
#include "passync/rng.hpp"

namespace passync {

struct InfoMatrix {
  ThetaMatrix lambda;
  int k = 0;

  static InfoMatrix zero(int dim) { return {ThetaMatrix::Zero(kClockParams + dim, kClockParams + dim), 0}; }
  int dim() const { return static_cast<int>(lambda.rows()) - kClockParams; }
};

struct BoundResult {
  Eigen::Matrix3d crb_clock = Eigen::Matrix3d::Zero();
  Eigen::Vector3d sqrt_diag = Eigen::Vector3d::Zero();  // (phi_u, T_u, T_m), ns
  int k = 0;
};

/// Single-epoch information J_k(x, sigma^2). Independent of the clock values.
InfoMatrix fisher_info(const Position& x, double sigma_sq, int k, EpochMode mode, const SceneConfig& scene,
                       double alpha);

InfoMatrix accumulate_info(const InfoMatrix& prev, const InfoMatrix& j);

/// Adds prior precision to the position block (k unchanged).
InfoMatrix with_prior(const InfoMatrix& info, const SpatialMatrix& precision);

/// (Lambda_c - Lambda_xc^T Lambda_x^-1 Lambda_xc)^-1. Throws NotIdentifiable
/// when the position block or the Schur complement fails the rcond gate.
BoundResult crb_clock(const InfoMatrix& lambda);
std::optional<BoundResult> try_crb_clock(const InfoMatrix& lambda);

/// Sum of J_k over k = 1..K. modes and sigmas hold one entry per epoch or a
/// single broadcast entry; sigmas are standard deviations in ns.
InfoMatrix accumulated_info(const Position& x, const SceneConfig& scene, std::span<const EpochMode> modes,
                            std::span<const double> sigmas, int K, double alpha);

/// CRB of the clock parameters at each checkpoint k (ascending, <= K). The
/// prior precision, if informative, is added to the position block.
/// Entries are nullopt while the parameters are not yet identifiable.
std::vector<std::optional<BoundResult>> crb_trajectory(const Position& x, const SceneConfig& scene,
                                                       std::span<const EpochMode> modes,
                                                       std::span<const double> sigmas, double alpha,
                                                       std::span<const int> checkpoints,
                                                       const SpatialMatrix* prior_precision = nullptr);

/// Hybrid bound: E_x[Lambda_k(x)] by Monte Carlo over the prior, plus the
/// prior precision, reduced by Schur complement.
std::vector<std::optional<BoundResult>> hcrb_trajectory(const PositionPrior& prior, const SceneConfig& scene,
                                                        std::span<const EpochMode> modes,
                                                        std::span<const double> sigmas, double alpha,
                                                        std::span<const int> checkpoints, int n_samples,
                                                        SeedStream seed);

inline constexpr int kDefaultHcrbSamples = 500;

BoundResult hcrb_clock(const PositionPrior& prior, const SceneConfig& scene, std::span<const EpochMode> modes,
                       std::span<const double> sigmas, int K, double alpha, int n_samples, SeedStream seed);

// --- spatial maps ---------------------------------------------------------

struct GridSpec {
  double x_min = 0.0;
  double x_max = 12.0;
  double y_min = 0.0;
  double y_max = 12.0;
  int nx = 25;
  int ny = 25;
  double exclusion_radius = 0.0;  // grid points this close to an anchor are skipped

  std::vector<Position> points() const;
};

enum class BoundKind { Crb, Hcrb };

struct MapSettings {
  BoundKind kind = BoundKind::Crb;
  SceneConfig scene;
  double alpha = 0.1;
  double sigma = 5.0;  // ns, constant over epochs
  int epochs = 250;
  SpatialMatrix prior_precision;  // used by Hcrb (prior mean = grid point)
  int n_samples = kDefaultHcrbSamples;
  std::uint64_t seed = 1;
};

struct MapPoint {
  double x1 = 0.0;
  double x2 = 0.0;
  std::optional<double> sqrt_bound_phi;  // ns; nullopt if excluded or not identifiable
};

/// OpenMP-parallel over grid points; results are in grid order and identical
/// to bound_map_serial.
std::vector<MapPoint> bound_map(const GridSpec& grid, const MapSettings& settings);
std::vector<MapPoint> bound_map_serial(const GridSpec& grid, const MapSettings& settings);

}  // namespace passync
