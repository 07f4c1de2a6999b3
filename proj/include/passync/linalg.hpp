#pragma once

#include <optional>

#include "passync/model.hpp"

namespace passync {

/// Reciprocal-condition threshold below which an information block is
/// treated as singular.
inline constexpr double kIdentifiabilityRcond = 1e-12;

/// Inverse of a symmetric PSD matrix after Jacobi equilibration; nullopt when
/// the reciprocal condition number of the equilibrated matrix is at or below
/// the identifiability threshold.
std::optional<ThetaMatrix> gated_inverse(const ThetaMatrix& a);

/// Reciprocal condition number of diag(a)^-1/2 a diag(a)^-1/2 (0 for a zero or
/// indefinite diagonal).
double equilibrated_rcond(const ThetaMatrix& a);

/// Generalized inverse of a symmetric PSD matrix, equilibrated, with
/// eigenvalues below the identifiability threshold (relative) discarded.
ThetaMatrix gated_pseudo_inverse(const ThetaMatrix& a);

inline ThetaMatrix symmetrized(const ThetaMatrix& a) { return 0.5 * (a + a.transpose()); }

}  // namespace passync
