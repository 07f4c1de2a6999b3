#include "passync/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "passync/linalg.hpp"

namespace passync {
namespace {

template <class T>
const T& pick(std::span<const T> values, int k) {
  return values.size() == 1 ? values[0] : values[static_cast<std::size_t>(k - 1)];
}

void check_schedule(std::size_t modes, std::size_t sigmas, int K) {
  const auto k = static_cast<std::size_t>(K);
  if (K < 1) throw Error(ErrorCode::InvalidArgument, "epoch count must be >= 1");
  if ((modes != 1 && modes != k) || (sigmas != 1 && sigmas != k)) {
    throw Error(ErrorCode::DimensionMismatch, "mode and sigma sequences must have 1 or K entries");
  }
}

void check_checkpoints(std::span<const int> checkpoints) {
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    if (checkpoints[i] < 1 || (i > 0 && checkpoints[i] <= checkpoints[i - 1])) {
      throw Error(ErrorCode::InvalidArgument, "checkpoints must be positive and strictly increasing");
    }
  }
}

// Evaluates the running information sum and hands it to `visit` at each checkpoint.
template <class Visit>
void walk_info(const Position& x, const SceneConfig& scene, std::span<const EpochMode> modes,
               std::span<const double> sigmas, double alpha, std::span<const int> checkpoints, Visit&& visit) {
  InfoMatrix total = InfoMatrix::zero(scene.dim);
  std::size_t next = 0;
  const int last = checkpoints.empty() ? 0 : checkpoints.back();
  for (int k = 1; k <= last; ++k) {
    const double sigma = pick(sigmas, k);
    total = accumulate_info(total, fisher_info(x, sigma * sigma, k, pick(modes, k), scene, alpha));
    if (k == checkpoints[next]) {
      visit(next, total);
      ++next;
    }
  }
}

}  // namespace

InfoMatrix fisher_info(const Position& x, double sigma_sq, int k, EpochMode mode, const SceneConfig& scene,
                       double alpha) {
  if (!(sigma_sq > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma^2 must be positive");
  const SystemMatrices mats = build_system_matrices(k, mode, scene, alpha);
  const RangeModel rm = range_model(x, scene);
  const int n = mats.rows();
  const int d = scene.dim;

  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxRows, kMaxTheta> a(n, kClockParams + d);
  a.leftCols(kClockParams) = mats.H;
  a.rightCols(d) = mats.G * rm.jacobian / scene.prop_speed;

  const Eigen::LLT<MeasMatrix> llt(mats.Q);
  const ThetaMatrix whitened = llt.matrixL().solve(a);
  InfoMatrix out;
  out.lambda = symmetrized(whitened.transpose() * whitened / sigma_sq);
  out.k = 1;
  return out;
}

InfoMatrix accumulate_info(const InfoMatrix& prev, const InfoMatrix& j) {
  if (prev.lambda.rows() != j.lambda.rows() || prev.lambda.cols() != j.lambda.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "information matrices differ in size");
  }
  return {symmetrized(prev.lambda + j.lambda), prev.k + j.k};
}

InfoMatrix with_prior(const InfoMatrix& info, const SpatialMatrix& precision) {
  const int d = info.dim();
  if (precision.rows() != d || precision.cols() != d) {
    throw Error(ErrorCode::DimensionMismatch, "prior precision does not match position block");
  }
  InfoMatrix out = info;
  out.lambda.bottomRightCorner(d, d) += precision;
  out.lambda = symmetrized(out.lambda);
  return out;
}

std::optional<BoundResult> try_crb_clock(const InfoMatrix& lambda) {
  const int d = lambda.dim();
  if (d < 0) throw Error(ErrorCode::DimensionMismatch, "information matrix smaller than the clock block");
  const ThetaMatrix lc = lambda.lambda.topLeftCorner(kClockParams, kClockParams);
  ThetaMatrix schur = lc;
  if (d > 0) {
    const ThetaMatrix lxc = lambda.lambda.bottomLeftCorner(d, kClockParams);
    const auto lx_inv = gated_inverse(lambda.lambda.bottomRightCorner(d, d));
    if (!lx_inv) return std::nullopt;
    schur = lc - lxc.transpose() * (*lx_inv) * lxc;
  }
  const auto crb = gated_inverse(schur);
  if (!crb) return std::nullopt;

  BoundResult out;
  out.crb_clock = *crb;
  out.sqrt_diag = out.crb_clock.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.k = lambda.k;
  return out;
}

BoundResult crb_clock(const InfoMatrix& lambda) {
  auto out = try_crb_clock(lambda);
  if (!out) {
    throw Error(ErrorCode::NotIdentifiable,
                "clock parameters not identifiable after " + std::to_string(lambda.k) + " epochs");
  }
  return *out;
}

InfoMatrix accumulated_info(const Position& x, const SceneConfig& scene, std::span<const EpochMode> modes,
                            std::span<const double> sigmas, int K, double alpha) {
  check_schedule(modes.size(), sigmas.size(), K);
  InfoMatrix out = InfoMatrix::zero(scene.dim);
  const int checkpoint[] = {K};
  walk_info(x, scene, modes, sigmas, alpha, checkpoint, [&](std::size_t, const InfoMatrix& info) { out = info; });
  return out;
}

std::vector<std::optional<BoundResult>> crb_trajectory(const Position& x, const SceneConfig& scene,
                                                       std::span<const EpochMode> modes,
                                                       std::span<const double> sigmas, double alpha,
                                                       std::span<const int> checkpoints,
                                                       const SpatialMatrix* prior_precision) {
  check_checkpoints(checkpoints);
  if (checkpoints.empty()) return {};
  check_schedule(modes.size(), sigmas.size(), checkpoints.back());
  std::vector<std::optional<BoundResult>> out(checkpoints.size());
  walk_info(x, scene, modes, sigmas, alpha, checkpoints, [&](std::size_t i, const InfoMatrix& info) {
    out[i] = try_crb_clock(prior_precision ? with_prior(info, *prior_precision) : info);
  });
  return out;
}

std::vector<std::optional<BoundResult>> hcrb_trajectory(const PositionPrior& prior, const SceneConfig& scene,
                                                        std::span<const EpochMode> modes,
                                                        std::span<const double> sigmas, double alpha,
                                                        std::span<const int> checkpoints, int n_samples,
                                                        SeedStream seed) {
  check_checkpoints(checkpoints);
  prior.validate(scene.dim);
  if (n_samples < 1) throw Error(ErrorCode::InvalidArgument, "HCRB needs at least one sample");
  if (checkpoints.empty()) return {};
  check_schedule(modes.size(), sigmas.size(), checkpoints.back());

  const int d = scene.dim;
  Eigen::LLT<SpatialMatrix> llt(prior.precision);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::InvalidArgument, "HCRB requires a positive-definite prior precision");
  }
  // x = mean + L^-T z has covariance (L L^T)^-1 = precision^-1.
  const SpatialMatrix upper = llt.matrixU();

  std::vector<InfoMatrix> mean_info(checkpoints.size(), InfoMatrix::zero(d));
  for (int s = 0; s < n_samples; ++s) {
    auto rng = seed.child(static_cast<std::uint64_t>(s)).engine();
    std::normal_distribution<double> normal;
    Position z(d);
    for (int i = 0; i < d; ++i) z(i) = normal(rng);
    const Position x = prior.mean + upper.triangularView<Eigen::Upper>().solve(z);
    walk_info(x, scene, modes, sigmas, alpha, checkpoints, [&](std::size_t i, const InfoMatrix& info) {
      mean_info[i].lambda += info.lambda / static_cast<double>(n_samples);
      mean_info[i].k = info.k;
    });
  }

  std::vector<std::optional<BoundResult>> out(checkpoints.size());
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    out[i] = try_crb_clock(with_prior(mean_info[i], prior.precision));
  }
  return out;
}

BoundResult hcrb_clock(const PositionPrior& prior, const SceneConfig& scene, std::span<const EpochMode> modes,
                       std::span<const double> sigmas, int K, double alpha, int n_samples, SeedStream seed) {
  const int checkpoint[] = {K};
  auto out = hcrb_trajectory(prior, scene, modes, sigmas, alpha, checkpoint, n_samples, seed);
  if (!out.front()) throw Error(ErrorCode::NotIdentifiable, "hybrid information not invertible");
  return *out.front();
}

std::vector<Position> GridSpec::points() const {
  if (nx < 1 || ny < 1) throw Error(ErrorCode::InvalidArgument, "grid needs at least one point per axis");
  std::vector<Position> out;
  out.reserve(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny));
  for (int j = 0; j < ny; ++j) {
    const double y = ny == 1 ? y_min : y_min + (y_max - y_min) * j / (ny - 1);
    for (int i = 0; i < nx; ++i) {
      const double x = nx == 1 ? x_min : x_min + (x_max - x_min) * i / (nx - 1);
      Position p(2);
      p << x, y;
      out.push_back(p);
    }
  }
  return out;
}

namespace {

MapPoint evaluate_map_point(const Position& p, const GridSpec& grid, const MapSettings& settings) {
  MapPoint out{p(0), p(1), std::nullopt};
  const SceneConfig& scene = settings.scene;
  for (int i = 0; i < scene.anchor_count(); ++i) {
    const double dist = (p - scene.anchor(i)).norm();
    if (dist <= grid.exclusion_radius || dist == 0.0) return out;
  }
  const EpochMode mode = scene.has_transceivers() ? EpochMode::WithTransceivers : EpochMode::MasterOnly;
  const EpochMode modes[] = {mode};
  const double sigmas[] = {settings.sigma};
  const int checkpoint[] = {settings.epochs};
  try {
    std::vector<std::optional<BoundResult>> bound;
    if (settings.kind == BoundKind::Crb) {
      bound = crb_trajectory(p, scene, modes, sigmas, settings.alpha, checkpoint);
    } else {
      const PositionPrior prior{p, settings.prior_precision};
      bound = hcrb_trajectory(prior, scene, modes, sigmas, settings.alpha, checkpoint, settings.n_samples,
                              SeedStream(settings.seed).child(stream_tag::kHcrb));
    }
    if (bound.front()) out.sqrt_bound_phi = bound.front()->sqrt_diag(0);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SingularGeometry && e.code() != ErrorCode::NotIdentifiable) throw;
  }
  return out;
}

void check_map(const MapSettings& settings) {
  settings.scene.validate();
  if (settings.scene.dim != 2) throw Error(ErrorCode::InvalidArgument, "bound maps are defined for d = 2");
  if (!(settings.sigma > 0.0) || settings.epochs < 1) {
    throw Error(ErrorCode::InvalidArgument, "map needs positive sigma and epochs");
  }
}

}  // namespace

std::vector<MapPoint> bound_map_serial(const GridSpec& grid, const MapSettings& settings) {
  check_map(settings);
  const std::vector<Position> pts = grid.points();
  std::vector<MapPoint> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) out[i] = evaluate_map_point(pts[i], grid, settings);
  return out;
}

std::vector<MapPoint> bound_map(const GridSpec& grid, const MapSettings& settings) {
  check_map(settings);
  const std::vector<Position> pts = grid.points();
  std::vector<MapPoint> out(pts.size());
  const auto count = static_cast<std::ptrdiff_t>(pts.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = evaluate_map_point(pts[static_cast<std::size_t>(i)], grid, settings);
    } catch (...) {
#pragma omp critical(passync_map_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace passync
