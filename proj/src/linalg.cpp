#include "passync/linalg.hpp"

#include <cmath>

namespace passync {
namespace {

struct Equilibrated {
  ThetaVector scale;  // diag(a)^-1/2, zero where the diagonal vanishes
  ThetaMatrix matrix;
};

Equilibrated equilibrate(const ThetaMatrix& a) {
  Equilibrated e;
  e.scale.resize(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    e.scale(i) = a(i, i) > 0.0 ? 1.0 / std::sqrt(a(i, i)) : 0.0;
  }
  e.matrix = e.scale.asDiagonal() * symmetrized(a) * e.scale.asDiagonal();
  return e;
}

}  // namespace

double equilibrated_rcond(const ThetaMatrix& a) {
  if (a.size() == 0) return 0.0;
  const Equilibrated e = equilibrate(a);
  if (e.scale.minCoeff() == 0.0) return 0.0;
  Eigen::SelfAdjointEigenSolver<ThetaMatrix> eig(e.matrix, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  return (hi > 0.0 && lo > 0.0) ? lo / hi : 0.0;
}

std::optional<ThetaMatrix> gated_inverse(const ThetaMatrix& a) {
  const Equilibrated e = equilibrate(a);
  if (a.size() == 0 || e.scale.minCoeff() == 0.0) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<ThetaMatrix> eig(e.matrix);
  const auto& vals = eig.eigenvalues();
  if (!(vals.minCoeff() > kIdentifiabilityRcond * vals.maxCoeff())) return std::nullopt;
  const ThetaMatrix inner =
      eig.eigenvectors() * vals.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  return symmetrized(e.scale.asDiagonal() * inner * e.scale.asDiagonal());
}

ThetaMatrix gated_pseudo_inverse(const ThetaMatrix& a) {
  const Equilibrated e = equilibrate(a);
  Eigen::SelfAdjointEigenSolver<ThetaMatrix> eig(e.matrix);
  const auto& vals = eig.eigenvalues();
  const double cutoff = kIdentifiabilityRcond * std::max(vals.maxCoeff(), 0.0);
  ThetaVector inv(vals.size());
  for (Eigen::Index i = 0; i < vals.size(); ++i) inv(i) = vals(i) > cutoff ? 1.0 / vals(i) : 0.0;
  const ThetaMatrix inner = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  return symmetrized(e.scale.asDiagonal() * inner * e.scale.asDiagonal());
}

}  // namespace passync
