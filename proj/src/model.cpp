#include "passync/model.hpp"

#include <cmath>
#include <string>

namespace passync {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::DimensionMismatch: return "dimension mismatch";
    case ErrorCode::MissingTransceivers: return "missing transceivers";
    case ErrorCode::SingularGeometry: return "singular geometry";
    case ErrorCode::ModelViolation: return "model violation";
    case ErrorCode::InvalidTruth: return "invalid truth";
    case ErrorCode::ScheduleViolation: return "schedule violation";
    case ErrorCode::NotIdentifiable: return "not identifiable";
    case ErrorCode::LogSingularity: return "log singularity";
    case ErrorCode::Config: return "config error";
    case ErrorCode::Io: return "i/o error";
    case ErrorCode::Runtime: return "runtime failure";
  }
  return "error";
}

const char* to_string(EpochMode mode) {
  return mode == EpochMode::MasterOnly ? "master_only" : "with_transceivers";
}

void ClockParams::validate() const {
  if (!(T_u > 0.0) || !(T_m > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "clock periods must be positive");
  }
  if (!(phi_u >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "clock offset phi_u must be non-negative");
  }
}

const Position& SceneConfig::anchor(int i) const {
  if (i == 0) return master;
  if (!transceivers || i < 0 || i > 3) {
    throw Error(ErrorCode::MissingTransceivers, "anchor " + std::to_string(i) + " is not present");
  }
  return (*transceivers)[static_cast<std::size_t>(i - 1)];
}

Position SceneConfig::anchor_centroid() const {
  Position sum = master;
  for (int i = 1; i < anchor_count(); ++i) sum += anchor(i);
  return sum / static_cast<double>(anchor_count());
}

void SceneConfig::validate() const {
  if (dim != 2 && dim != 3) {
    throw Error(ErrorCode::InvalidArgument, "spatial dimension must be 2 or 3");
  }
  if (M < 1 || N < 1) {
    throw Error(ErrorCode::InvalidArgument, "cycle counts M and N must be positive");
  }
  if (!(prop_speed > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "propagation speed must be positive");
  }
  if (!(delta_0 >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "relay delay must be non-negative");
  }
  for (int i = 0; i < anchor_count(); ++i) {
    if (anchor(i).size() != dim) {
      throw Error(ErrorCode::DimensionMismatch, "anchor " + std::to_string(i) + " has wrong dimension");
    }
    for (int j = 0; j < i; ++j) {
      if ((anchor(i) - anchor(j)).norm() == 0.0) {
        throw Error(ErrorCode::SingularGeometry, "anchor positions must be pairwise distinct");
      }
    }
  }
}

void SceneConfig::check_clock(const ClockParams& clock) const {
  clock.validate();
  if (N * clock.T_u < M * clock.T_m) {
    throw Error(ErrorCode::ModelViolation, "node epoch N*T_u is shorter than master epoch M*T_m");
  }
}

PositionPrior PositionPrior::none(int dim) {
  return {Position::Zero(dim), SpatialMatrix::Zero(dim, dim)};
}

PositionPrior PositionPrior::isotropic(const Position& mean, double std_m) {
  if (!(std_m > 0.0)) throw Error(ErrorCode::InvalidArgument, "prior std must be positive");
  const auto d = mean.size();
  return {mean, SpatialMatrix::Identity(d, d) / (std_m * std_m)};
}

PositionPrior PositionPrior::diagonal(const Position& mean, const Position& std_m) {
  if (std_m.size() != mean.size()) throw Error(ErrorCode::DimensionMismatch, "prior std size");
  if (!(std_m.minCoeff() > 0.0)) throw Error(ErrorCode::InvalidArgument, "prior std must be positive");
  SpatialMatrix precision = std_m.array().square().inverse().matrix().asDiagonal();
  return {mean, precision};
}

void PositionPrior::validate(int d) const {
  if (mean.size() != d || precision.rows() != d || precision.cols() != d) {
    throw Error(ErrorCode::DimensionMismatch, "prior dimension does not match scene");
  }
  if ((precision - precision.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + precision.cwiseAbs().maxCoeff())) {
    throw Error(ErrorCode::InvalidArgument, "prior precision must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<SpatialMatrix> eig(precision, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-12 * (1.0 + eig.eigenvalues().cwiseAbs().maxCoeff())) {
    throw Error(ErrorCode::InvalidArgument, "prior precision must be positive semidefinite");
  }
}

void NoiseConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  if (!(sigma_base > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  if (!(outlier_probability >= 0.0 && outlier_probability <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "outlier probability must lie in [0, 1]");
  }
  if (!(outlier_multiplier > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "outlier multiplier must be positive");
  }
}

Eigen::Matrix<double, 6, 6> noise_shape_template(double alpha) {
  const double a2 = alpha * alpha;
  Eigen::Matrix<double, 6, 6> q;
  // clang-format off
  q << 1.0 + a2, 0.0,      1.0, 0.0, 0.0, 0.0,
       0.0,      2.0 * a2, 0.0, 0.0, 0.0, 0.0,
       1.0,      0.0,      2.0, 1.0, 0.0, 0.0,
       0.0,      0.0,      1.0, 2.0, 1.0, 0.0,
       0.0,      0.0,      0.0, 1.0, 2.0, 1.0,
       0.0,      0.0,      0.0, 0.0, 1.0, 2.0;
  // clang-format on
  return q;
}

SystemMatrices build_system_matrices(int k, EpochMode mode, const SceneConfig& scene, double alpha) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "epoch index must be >= 1");
  if (mode == EpochMode::WithTransceivers && !scene.has_transceivers()) {
    throw Error(ErrorCode::MissingTransceivers, "epoch mode requires three transceiver positions");
  }
  const double km1 = static_cast<double>(k - 1);

  Eigen::Matrix<double, 6, 3> h = Eigen::Matrix<double, 6, 3>::Zero();
  h(0, 0) = 1.0;
  h(0, 1) = km1 * scene.N;
  h(0, 2) = -km1 * scene.M;
  h(1, 1) = scene.N;
  h(2, 2) = scene.M;

  Eigen::Matrix<double, 6, 4> g = Eigen::Matrix<double, 6, 4>::Zero();
  g(0, 0) = -1.0;
  g(3, 0) = -1.0;
  g(3, 1) = 1.0;
  g(4, 1) = -1.0;
  g(4, 2) = 1.0;
  g(5, 2) = -1.0;
  g(5, 3) = 1.0;

  Eigen::Matrix<double, 6, 1> mu = Eigen::Matrix<double, 6, 1>::Zero();
  if (scene.has_transceivers()) {
    for (int i = 0; i < 3; ++i) {
      mu(3 + i) = (scene.anchor(i) - scene.anchor(i + 1)).norm() / scene.prop_speed + scene.delta_0;
    }
  }

  const int n = measurement_count(mode);
  SystemMatrices out;
  out.k = k;
  out.mode = mode;
  out.S = MeasMatrix::Identity(n, 6);
  out.H = out.S * h;
  out.G = out.S * g;
  out.mu = out.S * mu;
  out.Q = out.S * noise_shape_template(alpha) * out.S.transpose();
  return out;
}

RangeModel range_model(const Position& x, const SceneConfig& scene) {
  if (x.size() != scene.dim) throw Error(ErrorCode::DimensionMismatch, "position has wrong dimension");
  RangeModel out;
  out.jacobian = RangeJacobian::Zero(kRanges, scene.dim);
  for (int i = 0; i < scene.anchor_count(); ++i) {
    const Position diff = x - scene.anchor(i);
    const double r = diff.norm();
    if (!(r > 0.0)) {
      throw Error(ErrorCode::SingularGeometry, "position coincides with anchor " + std::to_string(i));
    }
    out.rho(i) = r;
    out.jacobian.row(i) = diff.transpose() / r;
  }
  return out;
}

MeasVector model_mean(const SystemMatrices& mats, const ClockParams& clock, const Position& x,
                      const SceneConfig& scene) {
  const RangeModel rm = range_model(x, scene);
  // (k-1) N T_u and (k-1) M T_m nearly cancel; sum in extended precision.
  using Wide = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  const Wide hc = mats.H.cast<long double>() * clock.as_vector().cast<long double>();
  const Wide range_term = mats.G.cast<long double>() * rm.rho.cast<long double>() / static_cast<long double>(scene.prop_speed);
  return (mats.mu.cast<long double>() + hc + range_term).cast<double>();
}

}  // namespace passync
