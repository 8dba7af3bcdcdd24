#pragma once

#include <vector>

#include "fisherflow/linalg.hpp"

namespace fisherflow {

/// Gaussian in mean-covariance form. The covariance is symmetrized on
/// construction and must admit a Cholesky factorization.
struct GaussianParams {
    VectorXd mean;
    MatrixXd cov;

    GaussianParams() = default;
    GaussianParams(VectorXd mu, MatrixXd sigma);

    Eigen::Index dim() const { return mean.size(); }
};

/// Gaussian in mean-precision form.
struct PrecisionParams {
    VectorXd mean;
    MatrixXd prec;

    PrecisionParams() = default;
    PrecisionParams(VectorXd mu, MatrixXd prec_in);

    Eigen::Index dim() const { return mean.size(); }
};

/// Gaussian in mean-square-root form, cov = L L^T with L lower triangular and
/// positive diagonal.
struct SqrtParams {
    VectorXd mean;
    MatrixXd L;

    SqrtParams() = default;
    SqrtParams(VectorXd mu, MatrixXd l);

    Eigen::Index dim() const { return mean.size(); }
};

/// Natural parameters gamma = Sigma^{-1} mu, Gamma = -1/2 Sigma^{-1}.
struct NaturalGaussianParams {
    VectorXd gamma;
    MatrixXd Gamma;

    NaturalGaussianParams() = default;
    NaturalGaussianParams(VectorXd g, MatrixXd G);

    Eigen::Index dim() const { return gamma.size(); }
};

GaussianParams to_moment(const PrecisionParams& p);
GaussianParams to_moment(const SqrtParams& s);
GaussianParams to_moment(const NaturalGaussianParams& n);
PrecisionParams to_precision(const GaussianParams& g);
SqrtParams to_sqrt(const GaussianParams& g);
NaturalGaussianParams to_natural(const GaussianParams& g);

/// Gaussian mixture with component weights stored as log-odds. The vector has
/// length K and its last entry is pinned to zero, so recovered weights always
/// lie on the simplex without renormalization.
struct MixtureParams {
    std::vector<GaussianParams> components;
    VectorXd log_odds;

    MixtureParams() = default;
    MixtureParams(std::vector<GaussianParams> comps, VectorXd eta);
    /// Equal-weight mixture.
    explicit MixtureParams(std::vector<GaussianParams> comps);

    int num_components() const { return static_cast<int>(components.size()); }
    Eigen::Index dim() const { return components.empty() ? 0 : components.front().dim(); }
    VectorXd weights() const;
};

double gaussian_logpdf(const VectorXd& x, const GaussianParams& g);
double gaussian_logpdf(const VectorXd& x, const VectorXd& mean, const MatrixXd& prec,
                       double logdet_cov);

/// KL(q || p) between Gaussians, in closed form. Zero exactly when q == p.
double gaussian_kl(const GaussianParams& q, const GaussianParams& p);

/// (x - mean)^T prec (x - mean).
double mahalanobis(const VectorXd& x, const VectorXd& mean, const MatrixXd& prec);

/// Softmax of the log-odds vector (last entry pinned to zero). Guarded by
/// max-subtraction, so entries are strictly positive and sum to one.
VectorXd weights_from_log_odds(const VectorXd& log_odds);

double mixture_logpdf(const VectorXd& x, const MixtureParams& m);

/// Gradient and Hessian of log of the mixture density at x. Used by the
/// analytic-mode flows, where the variational score is needed per particle.
VectorXd mixture_grad_logpdf(const VectorXd& x, const MixtureParams& m);
MatrixXd mixture_hess_logpdf(const VectorXd& x, const MixtureParams& m);

}  // namespace fisherflow
