#include <sstream>

#include "doctest.h"
#include "support.hpp"

using namespace passync;
using namespace testing_support;

namespace {

EpochMeasurement noise_free(const GroundTruth& truth, const SceneConfig& scene, EpochMode mode, int k) {
  return MeasurementGenerator(truth, scene, 0.1).noise_free(mode, k);
}

}  // namespace

TEST_CASE("noise-free intervals at the nominal clock") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  const auto y1 = noise_free(truth, scene, EpochMode::WithTransceivers, 1);
  CHECK(y1.y(0) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(y1.y(1) == doctest::Approx(5050.0));
  CHECK(y1.y(2) == doctest::Approx(5000.0));
  const auto y2 = noise_free(truth, scene, EpochMode::WithTransceivers, 2);
  CHECK(y2.y(0) == doctest::Approx(55.0).epsilon(1e-12));
  CHECK(y2.y(1) == doctest::Approx(5050.0));
}

TEST_CASE("first difference of the offset interval") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = GroundTruth::from_interval(3.25, 49.7, 50.0, vec(4, 6), scene);
  const double step = scene.N * truth.clock.T_u - scene.M * truth.clock.T_m;
  for (int k = 1; k < 100; ++k) {
    const double d = noise_free(truth, scene, EpochMode::MasterOnly, k + 1).y(0) -
                     noise_free(truth, scene, EpochMode::MasterOnly, k).y(0);
    CHECK(d == doctest::Approx(step).epsilon(1e-9));
  }
}

TEST_CASE("truth validation and model violations") {
  const SceneConfig scene = square_scene();
  std::mt19937_64 rng(1);
  GroundTruth bad = truth_at(vec(9, 8), scene);
  bad.delta_1 = 60.0;
  bad.clock.phi_u += 55.0;
  try {
    simulate_epoch(bad, scene, EpochMode::MasterOnly, 1, 2.0, 0.1, rng);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidTruth);
  }
  GroundTruth slow = GroundTruth::from_interval(5.0, 40.0, 50.0, vec(9, 8), scene);
  try {
    simulate_epoch(slow, scene, EpochMode::MasterOnly, 1, 2.0, 0.1, rng);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ModelViolation);
  }
}

TEST_CASE("collinear toy trace") {
  SceneConfig scene;
  scene.dim = 2;
  scene.master = vec(0, 0);
  scene.prop_speed = 1.0;  // 1 m per ns, so the node sits one light-ns away
  const GroundTruth truth = GroundTruth::from_interval(7.0, 50.0, 50.0, vec(1, 0), scene);
  CHECK(truth.clock.phi_u == doctest::Approx(8.0));
  const TickTrace trace = noise_free_trace(truth, scene, 3);
  const MeasVector y = trace_intervals(trace, 1, EpochMode::MasterOnly);
  CHECK(y(0) == doctest::Approx(truth.clock.phi_u - 1.0));
}

TEST_CASE("trace matches the closed-form model in the square scene") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  const TickTrace trace = noise_free_trace(truth, scene, 5);
  for (int k = 1; k <= 5; ++k) {
    const MeasVector a = trace_intervals(trace, k, EpochMode::WithTransceivers);
    const MeasVector b = noise_free(truth, scene, EpochMode::WithTransceivers, k).y;
    for (int i = 0; i < 6; ++i) CHECK(std::abs(a(i) - b(i)) <= 1e-9 * std::max(1.0, std::abs(b(i))));
  }
}

TEST_CASE("short relay delay is a schedule violation") {
  SceneConfig scene = square_scene();
  scene.delta_0 = 20.0;  // farthest anchor-to-anchor flight is ~47 ns
  try {
    noise_free_trace(truth_at(vec(9, 8), scene), scene, 2);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ScheduleViolation);
  }
}

TEST_CASE("oracle equivalence over random scenes") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    SceneConfig scene;
    scene.dim = 2;
    scene.M = 50 + static_cast<int>(100 * u01(rng));
    scene.N = scene.M + static_cast<int>(5 * u01(rng));
    scene.delta_0 = 120.0 + 50.0 * u01(rng);
    SceneConfig bare = scene;
    bare.master = vec(-100, -100);
    scene.master = random_point(rng, bare, 0.0, 15.0, 0.0);
    std::array<Position, 3> relays;
    for (int i = 0; i < 3; ++i) {
      bool far;
      do {
        relays[i] = random_point(rng, scene, 0.0, 15.0, 1.0);
        far = true;
        for (int j = 0; j < i; ++j) far = far && (relays[i] - relays[j]).norm() > 1.0;
      } while (!far);
    }
    if (t % 5) scene.transceivers = relays;
    const Position x = random_point(rng, scene, 0.0, 15.0, 0.5);
    const double T_m = 40.0 + 20.0 * u01(rng);
    const double T_u = T_m * (1.0 + 0.02 * u01(rng));
    const double delta_1 = T_u * u01(rng);
    const GroundTruth truth = GroundTruth::from_interval(delta_1, T_u, T_m, x, scene);
    const EpochMode mode = scene.has_transceivers() ? EpochMode::WithTransceivers : EpochMode::MasterOnly;
    const TickTrace trace = noise_free_trace(truth, scene, 100);
    const MeasurementGenerator gen(truth, scene, 0.1);
    double worst = 0.0;
    for (int k = 1; k <= 100; ++k) {
      worst = std::max(worst, (trace_intervals(trace, k, mode) - gen.noise_free(mode, k).y).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("noise covariance matches sigma^2 Q") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  const EpochMode mode = EpochMode::WithTransceivers;
  NoiseConfig noise;
  noise.sigma_base = 2.0;
  const int K = 10000;
  const auto stream = simulate_campaign(truth, scene, noise, std::span(&mode, 1), K, SeedStream(77));
  const MeasurementGenerator gen(truth, scene, noise.alpha);
  Eigen::MatrixXd samples(K, 6);
  for (int k = 0; k < K; ++k) samples.row(k) = (stream[k].y - gen.noise_free(mode, k + 1).y).transpose();
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Eigen::MatrixXd centered = samples.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / (K - 1);
  const Eigen::MatrixXd expected = 4.0 * noise_shape_template(noise.alpha);
  // [y_m, y_1] block (slots 3 and 4)
  for (int i = 2; i < 4; ++i) {
    for (int j = 2; j < 4; ++j) CHECK(cov(i, j) == doctest::Approx(expected(i, j)).epsilon(0.05));
  }
  // every non-negligible entry
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      if (std::abs(expected(i, j)) > 0.5) CHECK(cov(i, j) == doctest::Approx(expected(i, j)).epsilon(0.05));
      else CHECK(std::abs(cov(i, j) - expected(i, j)) < 0.2);
    }
  }
}

TEST_CASE("campaigns are deterministic in the seed") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  const EpochMode mode = EpochMode::WithTransceivers;
  NoiseConfig noise;
  noise.outlier_probability = 0.3;
  noise.outlier_multiplier = 4.0;
  const auto a = simulate_campaign(truth, scene, noise, std::span(&mode, 1), 3, SeedStream(9));
  const auto b = simulate_campaign(truth, scene, noise, std::span(&mode, 1), 3, SeedStream(9));
  const auto c = simulate_campaign(truth, scene, noise, std::span(&mode, 1), 3, SeedStream(10));
  std::ostringstream sa, sb, sc;
  emit_measurements(std::vector<std::vector<EpochMeasurement>>{a}, OutputFormat::Csv, sa);
  emit_measurements(std::vector<std::vector<EpochMeasurement>>{b}, OutputFormat::Csv, sb);
  emit_measurements(std::vector<std::vector<EpochMeasurement>>{c}, OutputFormat::Csv, sc);
  CHECK(sa.str() == sb.str());
  CHECK(sa.str() != sc.str());
  // epoch data does not depend on the campaign length
  const auto longer = simulate_campaign(truth, scene, noise, std::span(&mode, 1), 10, SeedStream(9));
  for (int k = 0; k < 3; ++k) CHECK(longer[k].y == a[k].y);
}

TEST_CASE("noise schedules") {
  NoiseConfig constant;
  const auto s = make_noise_schedule(constant, 4, SeedStream(1));
  CHECK(s == std::vector<double>{2, 2, 2, 2});

  NoiseConfig zero_p;
  zero_p.outlier_multiplier = 7.0;
  CHECK(make_noise_schedule(zero_p, 50, SeedStream(3)) == std::vector<double>(50, 2.0));

  NoiseConfig all;
  all.outlier_probability = 1.0;
  all.outlier_multiplier = 5.0;
  CHECK(make_noise_schedule(all, 20, SeedStream(3)) == std::vector<double>(20, 10.0));

  NoiseConfig some;
  some.outlier_probability = 0.1;
  some.outlier_multiplier = 5.0;
  const auto sched = make_noise_schedule(some, 10000, SeedStream(42));
  const double frac = static_cast<double>(std::count(sched.begin(), sched.end(), 10.0)) / 10000.0;
  CHECK(frac == doctest::Approx(0.1).epsilon(0.2));
}

TEST_CASE("mixed-mode campaign") {
  const SceneConfig scene = square_scene();
  const GroundTruth truth = truth_at(vec(9, 8), scene);
  const std::vector<EpochMode> modes{EpochMode::MasterOnly, EpochMode::WithTransceivers, EpochMode::MasterOnly};
  const auto s = simulate_campaign(truth, scene, NoiseConfig{}, modes, 3, SeedStream(5));
  CHECK(s[0].y.size() == 3);
  CHECK(s[1].y.size() == 6);
  CHECK(s[2].y.size() == 3);
  CHECK(s[2].k == 3);
  CHECK_THROWS_AS(simulate_campaign(truth, scene, NoiseConfig{}, modes, 4, SeedStream(5)), Error);
}
