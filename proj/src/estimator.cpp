#include "passync/estimator.hpp"

#include <string>

#include "passync/linalg.hpp"

namespace passync {

void SolverOptions::validate() const {
  if (!(eta > 0.0)) throw Error(ErrorCode::InvalidArgument, "eta must be positive");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
  if (max_iters < 1) throw Error(ErrorCode::InvalidArgument, "max_iters must be >= 1");
  if (!(sigma_nominal > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma_nominal must be positive");
  if (line_search_evals < 3) throw Error(ErrorCode::InvalidArgument, "line search needs >= 3 evaluations");
}

ProfiledEpoch::ProfiledEpoch(const EpochMeasurement& y, const SystemMatrices& mats, const SceneConfig& scene)
    : anchor_count_(scene.anchor_count()), prop_speed_(scene.prop_speed), n_(mats.rows()) {
  if (y.y.size() != n_ || y.mode != mats.mode || y.k != mats.k) {
    throw Error(ErrorCode::DimensionMismatch, "measurement does not match the system matrices");
  }
  for (int i = 0; i < anchor_count_; ++i) anchors_[static_cast<std::size_t>(i)] = scene.anchor(i);

  const Eigen::LLT<MeasMatrix> llt(mats.Q);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::InvalidArgument, "noise shape is not positive definite");
  chol_ = llt.matrixL();
  const auto lower = chol_.triangularView<Eigen::Lower>();

  // Columns of H differ in scale by ~kN; equalize them before factoring.
  const Regressor hw_raw = lower.solve(mats.H);
  const Eigen::Vector3d col_scale = hw_raw.colwise().norm().transpose().cwiseInverse();
  const Regressor hw = hw_raw * col_scale.asDiagonal();
  const Eigen::HouseholderQR<Regressor> qr(hw);
  basis_ = qr.householderQ() * MeasMatrix::Identity(n_, n_);
  r_ = qr.matrixQR().topRows(kClockParams).triangularView<Eigen::Upper>();

  const MeasVector ry = lower.solve(y.y - mats.mu);
  const RangeMixing rg = lower.solve(mats.G) / prop_speed_;

  const int dof = n_ - kClockParams;
  const auto u1 = basis_.leftCols(kClockParams);
  const auto u2 = basis_.rightCols(dof);
  b0_ = u2.transpose() * ry;
  bg_ = u2.transpose() * rg;

  const auto upper = r_.triangularView<Eigen::Upper>();
  // Least-squares solve plus one step of iterative refinement.
  auto clock_solve = [&](const auto& rhs) {
    Eigen::Matrix<double, kClockParams, Eigen::Dynamic> z = upper.solve(u1.transpose() * rhs);
    z += upper.solve(u1.transpose() * (rhs - hw * z));
    return Eigen::Matrix<double, kClockParams, Eigen::Dynamic>(col_scale.asDiagonal() * z);
  };
  c0_ = clock_solve(ry);
  cg_ = clock_solve(rg);

  W_ = bg_.transpose() * bg_;
  w_ = bg_.transpose() * b0_;
}

RangeVector ProfiledEpoch::ranges(const Position& x) const {
  RangeVector rho = RangeVector::Zero();
  for (int i = 0; i < anchor_count_; ++i) rho(i) = (x - anchors_[static_cast<std::size_t>(i)]).norm();
  return rho;
}

ClockProfile ProfiledEpoch::profile(const Position& x) const {
  const RangeVector rho = ranges(x);
  return {c0_ - cg_ * rho, v0(x) / n_};
}

double ProfiledEpoch::v0(const Position& x) const {
  if (b0_.size() == 0) return 0.0;
  return (b0_ - bg_ * ranges(x)).squaredNorm();
}

namespace {

double prior_term(const Position& x, const PositionPrior& prior, int n) {
  if (!prior.informative()) return 0.0;
  const Position d = x - prior.mean;
  return d.dot(prior.precision * d) / n;
}

}  // namespace

double ProfiledEpoch::cost(const Position& x, const PositionPrior& prior, double floor) const {
  const RangeVector rho = ranges(x);
  for (int i = 0; i < anchor_count_; ++i) {
    if (!(rho(i) > 0.0)) return std::numeric_limits<double>::infinity();
  }
  const double v0 = b0_.size() == 0 ? 0.0 : (b0_ - bg_ * rho).squaredNorm();
  const double v0f = std::max(v0, floor);
  if (!(v0f > 0.0)) return -std::numeric_limits<double>::infinity();
  return std::log(v0f) + prior_term(x, prior, n_);
}

CostGradient ProfiledEpoch::cost_and_gradient(const Position& x, const PositionPrior& prior, double floor) const {
  const int d = static_cast<int>(x.size());
  RangeVector rho = RangeVector::Zero();
  RangeJacobian gamma = RangeJacobian::Zero(kRanges, d);
  for (int i = 0; i < anchor_count_; ++i) {
    const Position diff = x - anchors_[static_cast<std::size_t>(i)];
    const double r = diff.norm();
    if (!(r > 0.0)) throw Error(ErrorCode::SingularGeometry, "position coincides with anchor " + std::to_string(i));
    rho(i) = r;
    gamma.row(i) = diff.transpose() / r;
  }

  CostGradient out;
  out.v0 = b0_.size() == 0 ? 0.0 : (b0_ - bg_ * rho).squaredNorm();
  // dV0 = sum_ij W_ij (gamma_i rho_j + rho_i gamma_j) - 2 sum_i w_i gamma_i
  out.grad_v0 = 2.0 * gamma.transpose() * (W_ * rho - w_);

  out.grad_v1 = Position::Zero(d);
  if (prior.informative()) {
    const Position diff = x - prior.mean;
    out.v1 = diff.dot(prior.precision * diff) / n_;
    out.grad_v1 = 2.0 / n_ * (prior.precision * diff);
  }

  if (out.v0 == 0.0 && floor <= 0.0) {
    throw Error(ErrorCode::LogSingularity,
                "residual energy V0 is zero (noise-free or fully determined epoch); use a positive floor");
  }
  out.floored = out.v0 <= floor;
  out.value = std::log(std::max(out.v0, floor)) + out.v1;
  out.gradient = out.floored ? out.grad_v1 : Position(out.grad_v0 / out.v0 + out.grad_v1);
  return out;
}

MeasMatrix ProfiledEpoch::projector() const {
  const int dof = n_ - kClockParams;
  if (dof == 0) return MeasMatrix::Zero(n_, n_);
  const auto u2 = basis_.rightCols(dof);
  const MeasMatrix l_inv = chol_.triangularView<Eigen::Lower>().solve(MeasMatrix::Identity(n_, n_));
  return chol_ * u2 * (u2.transpose() * l_inv);
}

ClockProfile profile_clock_and_noise(const EpochMeasurement& y, const Position& x, const SystemMatrices& mats,
                                     const SceneConfig& scene) {
  if (x.size() != scene.dim) throw Error(ErrorCode::DimensionMismatch, "position has wrong dimension");
  return ProfiledEpoch(y, mats, scene).profile(x);
}

CostGradient cost_and_gradient(const Position& x, const EpochMeasurement& y, const SystemMatrices& mats,
                               const PositionPrior& prior, const SceneConfig& scene, double floor) {
  if (x.size() != scene.dim) throw Error(ErrorCode::DimensionMismatch, "position has wrong dimension");
  return ProfiledEpoch(y, mats, scene).cost_and_gradient(x, prior, floor);
}

double default_step_cap(const SceneConfig& scene, const PositionPrior& prior) {
  Position lo = scene.master;
  Position hi = scene.master;
  for (int i = 1; i < scene.anchor_count(); ++i) {
    lo = lo.cwiseMin(scene.anchor(i));
    hi = hi.cwiseMax(scene.anchor(i));
  }
  if (prior.informative()) {
    lo = lo.cwiseMin(prior.mean);
    hi = hi.cwiseMax(prior.mean);
  }
  const double half_diag = 0.5 * (hi - lo).norm();
  return half_diag > 0.0 ? half_diag : 1.0;
}

EpochEstimate epoch_ml(const EpochMeasurement& y, const SystemMatrices& mats, const PositionPrior& prior,
                       const Position& x0, const SolverOptions& opts, const SceneConfig& scene) {
  opts.validate();
  if (x0.size() != scene.dim) throw Error(ErrorCode::DimensionMismatch, "initial position has wrong dimension");
  if (!prior.informative() && mats.mode == EpochMode::MasterOnly) {
    throw Error(ErrorCode::NotIdentifiable, "master-only epochs need a position prior");
  }
  const ProfiledEpoch epoch(y, mats, scene);

  EpochEstimate out;
  Position x = x0;
  double cap = opts.initial_step_cap > 0.0 ? opts.initial_step_cap : default_step_cap(scene, prior);
  for (int i = 0; i < opts.max_iters; ++i) {
    const CostGradient cg = epoch.cost_and_gradient(x, prior, kLogFloor);
    // V0 * dV is well scaled even when V0 is tiny.
    const Position dir = cg.floored ? cg.grad_v1 : Position(cg.grad_v0 + cg.v0 * cg.grad_v1);
    const double norm = dir.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      out.converged = true;
      break;
    }
    const Position p = -dir / norm;
    const double step = line_search([&](double a) { return epoch.cost(x + a * p, prior, kLogFloor); }, cap,
                                    opts.line_search_evals);
    x += step * p;
    ++out.iterations;
    if (step < opts.epsilon) {
      out.converged = true;
      break;
    }
    cap = opts.eta * step;
  }

  const ClockProfile prof = epoch.profile(x);
  out.theta.resize(kClockParams + scene.dim);
  out.theta << prof.c_hat, x;
  out.sigma_sq = prof.sigma_sq;
  return out;
}

CombinerState CombinerState::from_prior(const PositionPrior& prior) {
  const int d = prior.dim();
  CombinerState st;
  st.lambda_hat = ThetaMatrix::Zero(kClockParams + d, kClockParams + d);
  st.lambda_hat.bottomRightCorner(d, d) = prior.precision;
  ThetaVector theta0 = ThetaVector::Zero(kClockParams + d);
  theta0.tail(d) = prior.mean;
  st.s = st.lambda_hat * theta0;
  st.k = 0;
  return st;
}

CombinedEstimate combine(const CombinerState& state) {
  if (const auto inv = gated_inverse(state.lambda_hat)) return {(*inv) * state.s, false};
  return {gated_pseudo_inverse(state.lambda_hat) * state.s, true};
}

CombinerUpdate update_combiner(const CombinerState& state, const EpochEstimate& theta_check, const InfoMatrix& j_hat) {
  if (j_hat.lambda.rows() != state.lambda_hat.rows() || theta_check.theta.size() != state.s.size()) {
    throw Error(ErrorCode::DimensionMismatch, "combiner input sizes differ");
  }
  CombinerUpdate out;
  out.state.lambda_hat = symmetrized(state.lambda_hat + j_hat.lambda);
  out.state.s = state.s + j_hat.lambda * theta_check.theta;
  out.state.k = state.k + 1;
  out.estimate = combine(out.state);
  return out;
}

OnlineEstimator::OnlineEstimator(SceneConfig scene, PositionPrior prior, SolverOptions opts, double alpha)
    : scene_(std::move(scene)), prior_(std::move(prior)), opts_(opts), alpha_(alpha) {
  scene_.validate();
  prior_.validate(scene_.dim);
  opts_.validate();
  if (opts_.initial_step_cap <= 0.0) opts_.initial_step_cap = default_step_cap(scene_, prior_);
  state_ = CombinerState::from_prior(prior_);
}

OnlineStep OnlineEstimator::step(const EpochMeasurement& m) {
  const SystemMatrices mats = build_system_matrices(m.k, m.mode, scene_, alpha_);
  Position x0 = scene_.anchor_centroid();
  if (last_position_) {
    x0 = *last_position_;
  } else if (prior_.informative()) {
    x0 = prior_.mean;
  }

  OnlineStep out;
  out.k = m.k;
  out.epoch = epoch_ml(m, mats, prior_, x0, opts_, scene_);
  const double sigma_sq_hat = robust_sigma(out.epoch.sigma_sq, opts_.sigma_nominal * opts_.sigma_nominal);
  const Position x_check = out.epoch.theta.tail(scene_.dim);
  const InfoMatrix j_hat = fisher_info(x_check, sigma_sq_hat, m.k, m.mode, scene_, alpha_);

  CombinerUpdate upd = update_combiner(state_, out.epoch, j_hat);
  state_ = std::move(upd.state);
  out.theta_hat = upd.estimate.theta;
  out.provisional = upd.estimate.provisional;
  out.sigma_hat = std::sqrt(sigma_sq_hat);
  if (!out.provisional) last_position_ = Position(out.theta_hat.tail(scene_.dim));

  out.clock_sqrt_diag.setConstant(std::numeric_limits<double>::quiet_NaN());
  if (const auto bound = try_crb_clock(InfoMatrix{state_.lambda_hat, state_.k})) {
    out.clock_sqrt_diag = bound->sqrt_diag;
  }
  return out;
}

std::vector<OnlineStep> run_online(std::span<const EpochMeasurement> stream, const SceneConfig& scene,
                                   const PositionPrior& prior, const SolverOptions& opts, double alpha) {
  OnlineEstimator est(scene, prior, opts, alpha);
  std::vector<OnlineStep> out;
  out.reserve(stream.size());
  for (const auto& m : stream) out.push_back(est.step(m));
  return out;
}

}  // namespace passync
