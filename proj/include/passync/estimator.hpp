#pragma once

// Online estimator: per-epoch maximum likelihood with the clock parameters and
// noise level profiled out, normalized gradient descent over position, and an
// information-weighted recursive combiner.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "passync/bounds.hpp"
#include "passync/model.hpp"
#include "passync/sim.hpp"

namespace passync {

/// Floor applied to V0 inside the logarithm by the solver, ns^2.
inline constexpr double kLogFloor = 1e-12;

struct SolverOptions {
  double eta = 1.2;
  double epsilon = 1e-7;          // m
  int max_iters = 200;
  double initial_step_cap = 0.0;  // m; <= 0 selects half the scene diagonal
  double sigma_nominal = 10.0;    // ns
  int line_search_evals = 32;

  void validate() const;
};

struct ClockProfile {
  Eigen::Vector3d c_hat = Eigen::Vector3d::Zero();
  double sigma_sq = 0.0;  // ns^2
};

struct CostGradient {
  double value = 0.0;  // ln max(V0, floor) + V1
  Position gradient;
  double v0 = 0.0;  // n * sigma_check^2, unfloored
  Position grad_v0;
  double v1 = 0.0;
  Position grad_v1;
  bool floored = false;  // V0 at or below the floor; the log term is flat there
};

/// One epoch's data with everything that does not depend on x precomputed.
///
/// With Q = L L^T and L^-1 H = [U1 U2] [R; 0], the residual after profiling
/// out c is e(x) = U2^T L^-1 (y - mu - G rho(x) / c), so V0 = |e|^2 and
/// Q^-1 Pi_perp = L^-T U2 U2^T L^-1. When n = rank(H) the residual space is
/// empty and V0 is identically zero.
class ProfiledEpoch {
 public:
  ProfiledEpoch(const EpochMeasurement& y, const SystemMatrices& mats, const SceneConfig& scene);

  ClockProfile profile(const Position& x) const;
  double v0(const Position& x) const;
  /// ln max(V0, floor) + V1 without any gradient work; +inf at an anchor.
  double cost(const Position& x, const PositionPrior& prior, double floor) const;
  CostGradient cost_and_gradient(const Position& x, const PositionPrior& prior, double floor) const;

  /// I - H (H^T Q^-1 H)^-1 H^T Q^-1 in measurement coordinates.
  MeasMatrix projector() const;
  /// W = G^T Q^-1 Pi G / c^2 and w = G^T Q^-1 Pi (y - mu) / c.
  const Eigen::Matrix4d& range_weight() const { return W_; }
  const Eigen::Vector4d& range_offset() const { return w_; }

  int rows() const { return n_; }
  int residual_dof() const { return static_cast<int>(b0_.size()); }

 private:
  RangeVector ranges(const Position& x) const;

  std::array<Position, kRanges> anchors_;
  int anchor_count_ = 1;
  double prop_speed_ = kSpeedOfLight;
  int n_ = 0;
  MeasMatrix chol_;  // L
  MeasMatrix basis_;  // [U1 U2]
  Eigen::Matrix3d r_;
  Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxRows - kClockParams, 1> b0_;
  Eigen::Matrix<double, Eigen::Dynamic, kRanges, 0, kMaxRows - kClockParams, kRanges> bg_;
  Eigen::Vector3d c0_;
  Eigen::Matrix<double, kClockParams, kRanges> cg_;
  Eigen::Matrix4d W_;
  Eigen::Vector4d w_;
};

ClockProfile profile_clock_and_noise(const EpochMeasurement& y, const Position& x, const SystemMatrices& mats,
                                     const SceneConfig& scene);

/// V = ln V0 + V1 and its gradient. floor = 0 makes V0 == 0 a LogSingularity error.
CostGradient cost_and_gradient(const Position& x, const EpochMeasurement& y, const SystemMatrices& mats,
                               const PositionPrior& prior, const SceneConfig& scene, double floor = 0.0);

/// Golden-section minimization of cost over [0, interval_cap] using at most
/// `evals` evaluations (including the one at 0). Non-finite values count as
/// +inf. Returns 0 unless some point improves on cost(0).
template <class Cost>
double line_search(Cost&& cost, double interval_cap, int evals) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  auto eval = [&](double a) {
    const double v = cost(a);
    return std::isfinite(v) ? v : inf;
  };
  const double f0 = eval(0.0);
  if (!(interval_cap > 0.0) || evals < 3) return 0.0;

  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 0.0;
  double hi = interval_cap;
  double c = hi - ratio * (hi - lo);
  double d = lo + ratio * (hi - lo);
  double fc = eval(c);
  double fd = eval(d);
  double best_a = 0.0;
  double best_f = f0;
  auto track = [&](double a, double f) {
    if (f < best_f) {
      best_f = f;
      best_a = a;
    }
  };
  track(c, fc);
  track(d, fd);
  for (int used = 3; used < evals; ++used) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - ratio * (hi - lo);
      fc = eval(c);
      track(c, fc);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + ratio * (hi - lo);
      fd = eval(d);
      track(d, fd);
    }
  }
  return best_a;
}

struct EpochEstimate {
  ThetaVector theta;      // [c; x]
  double sigma_sq = 0.0;  // profiled sigma^2, ns^2
  int iterations = 0;
  bool converged = false;
};

/// Half the diagonal of the bounding box of the anchors and (if informative) the prior mean.
double default_step_cap(const SceneConfig& scene, const PositionPrior& prior);

EpochEstimate epoch_ml(const EpochMeasurement& y, const SystemMatrices& mats, const PositionPrior& prior,
                       const Position& x0, const SolverOptions& opts, const SceneConfig& scene);

inline double robust_sigma(double sigma_sq_profiled, double sigma_sq_nominal) {
  return std::max(sigma_sq_profiled, sigma_sq_nominal);
}

struct CombinerState {
  ThetaMatrix lambda_hat;
  ThetaVector s;
  int k = 0;

  /// Lambda_0 = blkdiag(0, Lambda_x), s_0 = Lambda_0 [0; x_bar].
  static CombinerState from_prior(const PositionPrior& prior);
};

struct CombinedEstimate {
  ThetaVector theta;
  bool provisional = false;  // information still rank deficient
};

struct CombinerUpdate {
  CombinerState state;
  CombinedEstimate estimate;
};

CombinedEstimate combine(const CombinerState& state);
CombinerUpdate update_combiner(const CombinerState& state, const EpochEstimate& theta_check, const InfoMatrix& j_hat);

struct OnlineStep {
  int k = 0;
  ThetaVector theta_hat;
  Eigen::Vector3d clock_sqrt_diag;  // root diagonal of the clock block of Lambda_hat^-1; NaN while unidentified
  double sigma_hat = 0.0;           // sqrt of the robust sigma^2 used for weighting, ns
  bool provisional = false;
  EpochEstimate epoch;
};

/// Constant-memory online estimator; one call to step() per epoch.
class OnlineEstimator {
 public:
  OnlineEstimator(SceneConfig scene, PositionPrior prior, SolverOptions opts, double alpha);

  OnlineStep step(const EpochMeasurement& m);
  const CombinerState& state() const { return state_; }

 private:
  SceneConfig scene_;
  PositionPrior prior_;
  SolverOptions opts_;
  double alpha_;
  CombinerState state_;
  std::optional<Position> last_position_;
};

std::vector<OnlineStep> run_online(std::span<const EpochMeasurement> stream, const SceneConfig& scene,
                                   const PositionPrior& prior, const SolverOptions& opts, double alpha);

}  // namespace passync
