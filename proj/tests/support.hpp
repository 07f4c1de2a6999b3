#pragma once

#include <random>

#include "passync/experiments.hpp"

namespace testing_support {

using namespace passync;

inline Position vec(double a, double b) {
  Position p(2);
  p << a, b;
  return p;
}

inline Position vec(double a, double b, double c) {
  Position p(3);
  p << a, b, c;
  return p;
}

// Master at [1,1], relays at the other corners of [1,11]^2.
inline SceneConfig square_scene() { return default_config(Scenario::Transceivers).scene; }

inline SceneConfig master_only_scene() {
  SceneConfig s = square_scene();
  s.transceivers.reset();
  return s;
}

inline GroundTruth truth_at(const Position& x, const SceneConfig& scene, double delta_1 = 5.0) {
  return GroundTruth::from_interval(delta_1, 50.0, 50.0, x, scene);
}

// Random point inside [lo, hi]^d kept at least `margin` away from every anchor.
inline Position random_point(std::mt19937_64& rng, const SceneConfig& scene, double lo = 0.0, double hi = 12.0,
                             double margin = 0.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (;;) {
    Position p(scene.dim);
    for (int i = 0; i < scene.dim; ++i) p(i) = u(rng);
    bool ok = true;
    for (int a = 0; a < scene.anchor_count(); ++a) ok = ok && (p - scene.anchor(a)).norm() > margin;
    if (ok) return p;
  }
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace testing_support
