#include "doctest.h"
#include "support.hpp"

using namespace passync;
using namespace testing_support;

namespace {

constexpr EpochMode kFull = EpochMode::WithTransceivers;
constexpr EpochMode kMaster = EpochMode::MasterOnly;

// Generalized least squares from the explicit formulas, in long double with
// the regressor columns scaled to unit norm.
struct Reference {
  Eigen::Vector3d c_hat;
  double sigma_sq;
  Eigen::MatrixXd projector;
};

Reference reference_profile(const EpochMeasurement& y, const Position& x, const SystemMatrices& m,
                            const SceneConfig& scene) {
  using LM = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using LV = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  const int n = m.rows();
  const LM D = m.H.cast<long double>().colwise().norm().cwiseInverse().asDiagonal();
  const LM H = m.H.cast<long double>() * D;
  const LM Qi = m.Q.cast<long double>().inverse();
  const LM F = (H.transpose() * Qi * H).inverse();
  const LV r = (y.y - m.mu - m.G * range_model(x, scene).rho / scene.prop_speed).cast<long double>();
  const LM P = LM::Identity(n, n) - H * F * H.transpose() * Qi;
  const LV e = P * r;
  const LV c = D * F * H.transpose() * Qi * r;
  return {c.cast<double>(), static_cast<double>(e.dot(Qi * e) / n), P.cast<double>()};
}

EpochMeasurement draw(const GroundTruth& truth, const SceneConfig& scene, EpochMode mode, int k, double sigma,
                      std::uint64_t seed) {
  auto rng = SeedStream(seed).engine();
  return simulate_epoch(truth, scene, mode, k, sigma, 0.1, rng);
}

}  // namespace

TEST_CASE("profile matches the explicit formulas") {
  const SceneConfig scene = square_scene();
  std::mt19937_64 rng(12);
  for (int t = 0; t < 40; ++t) {
    const GroundTruth truth = truth_at(random_point(rng, scene), scene, 1.0 + t);
    const int k = 1 + t * 7;
    const EpochMode mode = t % 3 ? kFull : kMaster;
    const auto y = draw(truth, scene, mode, k, 2.0, 100 + t);
    const auto m = build_system_matrices(k, mode, scene, 0.1);
    const Position x = random_point(rng, scene);
    const auto got = profile_clock_and_noise(y, x, m, scene);
    const auto ref = reference_profile(y, x, m, scene);
    CHECK((got.c_hat - ref.c_hat).norm() <= 1e-9 * ref.c_hat.norm());
    CHECK(std::abs(got.sigma_sq - ref.sigma_sq) <= 1e-8 * std::max(ref.sigma_sq, 1.0));
    const ProfiledEpoch pe(y, m, scene);
    CHECK((Eigen::MatrixXd(pe.projector()) - ref.projector).norm() < 1e-8);
    CHECK(std::abs(pe.v0(x) - m.rows() * ref.sigma_sq) <= 1e-8 * std::max(m.rows() * ref.sigma_sq, 1.0));
  }
}

TEST_CASE("noise-free data at the true position") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  const MeasurementGenerator gen(truth, scene, 0.1);
  for (int k : {1, 50, 500}) {
    const auto y = gen.noise_free(kFull, k);
    const auto p = profile_clock_and_noise(y, truth.position, build_system_matrices(k, kFull, scene, 0.1), scene);
    CHECK((p.c_hat - truth.clock.as_vector()).norm() <= 1e-9 * truth.clock.as_vector().norm());
    CHECK(p.sigma_sq <= 1e-12);
  }
}

TEST_CASE("projector identities") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(3, 9), scene);
  for (EpochMode mode : {kFull, kMaster}) {
    for (int k : {1, 2, 10, 100, 1000}) {
      const auto m = build_system_matrices(k, mode, scene, 0.1);
      const ProfiledEpoch pe(draw(truth, scene, mode, k, 2.0, 5), m, scene);
      const Eigen::MatrixXd P = pe.projector();
      CHECK((P * P - P).norm() < 1e-10);
      CHECK((P * Eigen::MatrixXd(m.H)).norm() < 1e-10 * std::max(1.0, m.H.norm()) + 1e-10);
    }
  }
}

TEST_CASE("master only has no residual degrees of freedom") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const auto y = draw(truth, scene, kMaster, 1, 3.0, t);
    const auto m = build_system_matrices(1, kMaster, scene, 0.1);
    CHECK(profile_clock_and_noise(y, random_point(rng, scene), m, scene).sigma_sq == 0.0);
    CHECK(ProfiledEpoch(y, m, scene).residual_dof() == 0);
  }
}

TEST_CASE("cost gradient matches central differences") {
  const SceneConfig scene = square_scene();
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  int checked = 0;
  for (int t = 0; t < 100; ++t) {
    const GroundTruth truth = truth_at(random_point(rng, scene), scene);
    const int k = 1 + (t * 37) % 500;
    const auto y = draw(truth, scene, kFull, k, 0.5 + 3.0 * u(rng), 1000 + t);
    const auto m = build_system_matrices(k, kFull, scene, 0.1);
    PositionPrior prior = PositionPrior::none(2);
    if (t % 2) prior = PositionPrior::diagonal(random_point(rng, scene), vec(u(rng), u(rng)));
    const Position x = random_point(rng, scene, 0.0, 12.0, 1.0);
    const auto cg = cost_and_gradient(x, y, m, prior, scene);
    const double h = 1e-4;
    Position fd(2);
    for (int i = 0; i < 2; ++i) {
      Position xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      fd(i) = (cost_and_gradient(xp, y, m, prior, scene).value - cost_and_gradient(xm, y, m, prior, scene).value) / (2 * h);
    }
    CHECK((cg.gradient - fd).norm() <= 1e-5 * std::max(fd.norm(), 1e-3));
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("cost pieces") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  const auto y = draw(truth, scene, kFull, 3, 2.0, 1);
  const auto m = build_system_matrices(3, kFull, scene, 0.1);
  const PositionPrior prior = PositionPrior::isotropic(vec(7, 7), 0.3);
  const auto at_mean = cost_and_gradient(prior.mean, y, m, prior, scene);
  CHECK(at_mean.grad_v1.norm() == 0.0);
  CHECK(at_mean.v1 == 0.0);

  const Position x = vec(5, 4);
  const auto flat = cost_and_gradient(x, y, m, PositionPrior::none(2), scene);
  CHECK(flat.value == doctest::Approx(std::log(flat.v0)));
  CHECK((flat.gradient - flat.grad_v0 / flat.v0).norm() < 1e-12 * flat.gradient.norm());

  const auto with = cost_and_gradient(x, y, m, prior, scene);
  const Position diff = x - prior.mean;
  CHECK(with.v1 == doctest::Approx(diff.dot(prior.precision * diff) / 6.0));
  CHECK((with.grad_v1 - (2.0 / 6.0) * prior.precision * diff).norm() < 1e-12);
}

TEST_CASE("zero residual is a log singularity unless floored") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  const auto y = MeasurementGenerator(truth, scene, 0.1).noise_free(kMaster, 1);
  const auto m = build_system_matrices(1, kMaster, scene, 0.1);
  try {
    cost_and_gradient(truth.position, y, m, PositionPrior::none(2), scene);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LogSingularity);
  }
  const auto floored = cost_and_gradient(truth.position, y, m, PositionPrior::none(2), scene, kLogFloor);
  CHECK(floored.floored);
  CHECK(floored.value == doctest::Approx(std::log(kLogFloor)));
}

TEST_CASE("line search") {
  CHECK(line_search([](double a) { return (a - 0.3) * (a - 0.3); }, 1.0, 32) == doctest::Approx(0.3).epsilon(1e-3));
  CHECK(line_search([](double a) { return a; }, 1.0, 32) == 0.0);
  const double cap = 2.0;
  CHECK(line_search([](double a) { return (a - 5.0) * (a - 5.0); }, cap, 32) == doctest::Approx(cap).epsilon(1e-5));
  // non-finite values are treated as +inf
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double r = line_search([&](double a) { return a > 0.5 ? nan : (a - 0.4) * (a - 0.4); }, 1.0, 32);
  CHECK(r == doctest::Approx(0.4).epsilon(1e-3));
  CHECK(line_search([](double a) { return -a; }, 0.0, 32) == 0.0);
}

TEST_CASE("robust sigma") {
  CHECK(robust_sigma(4, 100) == 100);
  CHECK(robust_sigma(400, 100) == 400);
  CHECK(robust_sigma(0, 100) == 100);
}

TEST_CASE("noise-free recovery from the anchor centroid") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  const auto y = MeasurementGenerator(truth, scene, 0.1).noise_free(kFull, 1);
  const auto m = build_system_matrices(1, kFull, scene, 0.1);
  const auto est = epoch_ml(y, m, PositionPrior::none(2), scene.anchor_centroid(), SolverOptions{}, scene);
  CHECK((est.theta.tail(2) - truth.position).norm() < 1e-4);
  CHECK((est.theta.head(3) - truth.clock.as_vector()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("tight prior dominates a master-only epoch") {
  const SceneConfig scene = master_only_scene();
  const Position mean = vec(9, 8);
  const GroundTruth truth = truth_at(mean, scene);
  const auto y = MeasurementGenerator(truth, scene, 0.1).noise_free(kMaster, 4);
  const auto m = build_system_matrices(4, kMaster, scene, 0.1);
  const auto prior = PositionPrior::isotropic(mean, 1e-4);
  const auto est = epoch_ml(y, m, prior, vec(8, 7), SolverOptions{}, scene);
  CHECK((est.theta.tail(2) - mean).norm() < 1e-6);
  const auto given = profile_clock_and_noise(y, est.theta.tail(2), m, scene);
  CHECK((est.theta.head(3) - given.c_hat).norm() == 0.0);
  CHECK((est.theta.head(3) - truth.clock.as_vector()).norm() < 1e-6);
  try {
    epoch_ml(y, m, PositionPrior::none(2), vec(8, 7), SolverOptions{}, scene);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotIdentifiable);
  }
}

TEST_CASE("epoch estimate is reproducible and never worse than the start") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  const auto m = build_system_matrices(1, kFull, scene, 0.1);
  for (int t = 0; t < 20; ++t) {
    const auto y = draw(truth, scene, kFull, 1, 2.0, 500 + t);
    const Position x0 = scene.anchor_centroid();
    const auto a = epoch_ml(y, m, PositionPrior::none(2), x0, SolverOptions{}, scene);
    const auto b = epoch_ml(y, m, PositionPrior::none(2), x0, SolverOptions{}, scene);
    CHECK(a.theta == b.theta);
    CHECK(a.sigma_sq == b.sigma_sq);
    CHECK(a.sigma_sq >= 0.0);
    const ProfiledEpoch pe(y, m, scene);
    CHECK(pe.cost(a.theta.tail(2), PositionPrior::none(2), kLogFloor) <=
          pe.cost(x0, PositionPrior::none(2), kLogFloor));
  }
}

TEST_CASE("combiner algebra") {
  const PositionPrior prior = PositionPrior::isotropic(vec(9, 8), 0.2);
  const CombinerState s0 = CombinerState::from_prior(prior);
  CHECK(s0.lambda_hat.topLeftCorner(3, 3).isZero());
  CHECK(s0.lambda_hat.bottomRightCorner(2, 2) == prior.precision);
  CHECK(combine(s0).provisional);

  const SceneConfig scene = square_scene();
  const InfoMatrix j = fisher_info(vec(9, 8), 4.0, 1, kFull, scene, 0.1);
  EpochEstimate e;
  e.theta.resize(5);
  e.theta << 5.1, 50.001, 49.999, 9.05, 7.98;
  const auto u1 = update_combiner(s0, e, j);
  CHECK(u1.state.lambda_hat.isApprox(s0.lambda_hat + j.lambda));
  CHECK(u1.state.k == 1);
  CHECK(u1.estimate.theta.allFinite());
  CHECK_FALSE(u1.estimate.provisional);

  CombinerState s = CombinerState::from_prior(PositionPrior::none(2));
  for (int i = 0; i < 5; ++i) s = update_combiner(s, e, j).state;
  const auto c = combine(s);
  CHECK((c.theta - e.theta).cwiseAbs().maxCoeff() < 1e-9 * e.theta.cwiseAbs().maxCoeff());
}

TEST_CASE("combiner output does not depend on the nominal sigma under constant weighting") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  NoiseConfig noise;
  noise.sigma_base = 0.01;  // profiled sigma stays far below both nominal values
  const auto stream = simulate_campaign(truth, scene, noise, std::span(&kFull, 1), 40, SeedStream(3));
  SolverOptions a, b;
  a.sigma_nominal = 1.0;
  b.sigma_nominal = 10.0;
  const auto ra = run_online(stream, scene, PositionPrior::none(2), a, 0.1);
  const auto rb = run_online(stream, scene, PositionPrior::none(2), b, 0.1);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    REQUIRE(ra[i].sigma_hat == doctest::Approx(1.0));
    REQUIRE(rb[i].sigma_hat == doctest::Approx(10.0));
    CHECK((ra[i].theta_hat - rb[i].theta_hat).cwiseAbs().maxCoeff() <= 1e-9 * ra[i].theta_hat.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("noise-free online run recovers the truth") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  NoiseConfig noise;
  noise.sigma_base = 1e-300;
  const MeasurementGenerator gen(truth, scene, 0.1);
  std::vector<EpochMeasurement> stream;
  for (int k = 1; k <= 20; ++k) stream.push_back(gen.noise_free(kFull, k));
  const auto run = run_online(stream, scene, PositionPrior::none(2), SolverOptions{}, 0.1);
  ThetaVector theta(5);
  theta << truth.clock.as_vector(), truth.position;
  for (const auto& s : run) {
    CHECK_FALSE(s.provisional);
    CHECK((s.theta_hat.head(3) - theta.head(3)).cwiseQuotient(theta.head(3)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((s.theta_hat.tail(2) - theta.tail(2)).norm() < 1e-4);
    CHECK(s.clock_sqrt_diag.allFinite());
  }
}

TEST_CASE("master-only run without prior stays provisional") {
  const SceneConfig scene = master_only_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  const auto stream = simulate_campaign(truth, scene, NoiseConfig{}, std::span(&kMaster, 1), 3, SeedStream(1));
  // without a prior the per-epoch problem is not identifiable
  CHECK_THROWS_AS(run_online(stream, scene, PositionPrior::none(2), SolverOptions{}, 0.1), Error);
  const auto run = run_online(stream, scene, PositionPrior::isotropic(vec(9, 8), 0.2), SolverOptions{}, 0.1);
  CHECK(run.size() == 3);
  CHECK(run.back().theta_hat.allFinite());
}

TEST_CASE("solver option validation") {
  SolverOptions o;
  o.eta = 0.0;
  CHECK_THROWS_AS(o.validate(), Error);
  SolverOptions p;
  p.max_iters = 0;
  CHECK_THROWS_AS(p.validate(), Error);
}
