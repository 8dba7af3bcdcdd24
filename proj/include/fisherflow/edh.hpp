#pragma once

#include "fisherflow/targets.hpp"

namespace fisherflow {

/// Parameters of the transient density bridging prior (lambda = 0) and
/// posterior (lambda = 1) under linear Gaussian assumptions.
struct TransientParams {
    double lambda = 0.0;
    VectorXd mean;
    MatrixXd cov;
};

/// Affine particle dynamics phi(x, lambda) = A x + b of the exact flow.
struct EdhCoeffs {
    MatrixXd A;
    VectorXd b;
};

/// Pseudo-time schedule lambda(t) = 1 - exp(-t).
double lambda_schedule(double t);

/// Transient density parameters:
///   Sigma_lambda = P - lambda P H^T (R + lambda H P H^T)^{-1} H P
///   mu_lambda    = Sigma_lambda (P^{-1} x_hat + lambda H^T R^{-1} z)
TransientParams transient_params(const LinearGaussianModel& m, double lambda);

/// EDH coefficients:
///   A = -1/2 P H^T (R + lambda H P H^T)^{-1} H
///   b = (I + 2 lambda A)(A x_hat + (I + lambda A) P H^T R^{-1} z)
EdhCoeffs edh_coeffs(const LinearGaussianModel& m, double lambda);

}  // namespace fisherflow
