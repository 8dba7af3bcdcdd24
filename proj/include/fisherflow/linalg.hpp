#pragma once

#include <Eigen/Dense>

#include "fisherflow/errors.hpp"

namespace fisherflow {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Projects onto the symmetric part, (M + M^T)/2. All symmetric-matrix writes
/// in the library go through this; Runge-Kutta updates of precision matrices
/// accumulate asymmetry otherwise.
inline MatrixXd symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

inline bool is_symmetric(const MatrixXd& m, double tol = 1e-12) {
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, m.cwiseAbs().maxCoeff());
}

/// Lower-triangular Cholesky factor with strictly positive diagonal.
/// Throws NotPositiveDefinite if any pivot is non-positive.
MatrixXd cholesky_factor(const MatrixXd& cov);

/// Solves S x = b for symmetric positive definite S via Cholesky.
VectorXd spd_solve(const MatrixXd& s, const VectorXd& b);
MatrixXd spd_solve(const MatrixXd& s, const MatrixXd& b);

/// Inverse of a symmetric positive definite matrix via Cholesky.
MatrixXd spd_inverse(const MatrixXd& s);

/// log det of a symmetric positive definite matrix via Cholesky.
double spd_logdet(const MatrixXd& s);

inline bool all_finite(const VectorXd& v) { return v.allFinite(); }
inline bool all_finite(const MatrixXd& m) { return m.allFinite(); }

}  // namespace fisherflow
