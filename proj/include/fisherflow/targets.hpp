#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>

#include "fisherflow/gaussian.hpp"

namespace fisherflow {

/// Evaluable joint density log p(x, z) with optional derivatives. For models
/// without an observation (unnormalized targets) log_joint returns the log of
/// the unnormalized density. Implementations are immutable after construction
/// and safe to share across threads.
class TargetModel {
public:
    virtual ~TargetModel() = default;

    virtual Eigen::Index dim() const = 0;
    virtual bool has_grad() const { return true; }
    virtual bool has_hess() const { return true; }

    virtual double log_joint(const VectorXd& x) const = 0;
    virtual VectorXd grad_log_joint(const VectorXd& x) const = 0;
    virtual MatrixXd hess_log_joint(const VectorXd& x) const = 0;

    /// Batched evaluation over particle columns; the default loops, models
    /// with vectorizable likelihoods override.
    virtual VectorXd log_joint_batch(const MatrixXd& xs) const;
};

/// Gaussian prior N(prior_mean, prior_cov) with linear Gaussian likelihood
/// N(z; H x, R).
class LinearGaussianModel : public TargetModel {
public:
    LinearGaussianModel(VectorXd prior_mean, MatrixXd prior_cov, MatrixXd obs_matrix,
                        MatrixXd obs_cov, VectorXd z);

    Eigen::Index dim() const override { return prior_mean_.size(); }
    double log_joint(const VectorXd& x) const override;
    VectorXd grad_log_joint(const VectorXd& x) const override;
    MatrixXd hess_log_joint(const VectorXd& x) const override;

    const VectorXd& prior_mean() const { return prior_mean_; }
    const MatrixXd& prior_cov() const { return prior_cov_; }
    const MatrixXd& H() const { return obs_matrix_; }
    const MatrixXd& R() const { return obs_cov_; }
    const VectorXd& z() const { return z_; }

private:
    VectorXd prior_mean_;
    MatrixXd prior_cov_;
    MatrixXd obs_matrix_;
    MatrixXd obs_cov_;
    VectorXd z_;
    MatrixXd prior_prec_;
    MatrixXd obs_prec_;
    double prior_logdet_ = 0.0;
    double obs_logdet_ = 0.0;
    MatrixXd hess_;  // constant: -P^{-1} - H^T R^{-1} H
};

/// Gaussian-mixture prior with linear Gaussian likelihood.
class MixturePriorLinearModel : public TargetModel {
public:
    MixturePriorLinearModel(MixtureParams prior, MatrixXd obs_matrix, MatrixXd obs_cov,
                            VectorXd z);

    Eigen::Index dim() const override { return prior_.dim(); }
    double log_joint(const VectorXd& x) const override;
    VectorXd grad_log_joint(const VectorXd& x) const override;
    MatrixXd hess_log_joint(const VectorXd& x) const override;

    const MixtureParams& prior() const { return prior_; }
    const MatrixXd& H() const { return obs_matrix_; }
    const MatrixXd& R() const { return obs_cov_; }
    const VectorXd& z() const { return z_; }

private:
    MixtureParams prior_;
    MatrixXd obs_matrix_;
    MatrixXd obs_cov_;
    VectorXd z_;
    MatrixXd obs_prec_;
    double obs_logdet_ = 0.0;
};

/// Gaussian prior with range observation z = ||x|| + noise, scalar variance R.
/// The Hessian of ||x|| is singular at the origin; gradient/Hessian evaluation
/// within 1e-8 of it raises SingularPoint rather than regularizing.
class RangeModel : public TargetModel {
public:
    RangeModel(VectorXd prior_mean, MatrixXd prior_cov, double obs_var, double z);

    Eigen::Index dim() const override { return prior_mean_.size(); }
    double log_joint(const VectorXd& x) const override;
    VectorXd grad_log_joint(const VectorXd& x) const override;
    MatrixXd hess_log_joint(const VectorXd& x) const override;

    const VectorXd& prior_mean() const { return prior_mean_; }
    const MatrixXd& prior_cov() const { return prior_cov_; }
    double obs_var() const { return obs_var_; }
    double z() const { return z_; }

private:
    VectorXd prior_mean_;
    MatrixXd prior_cov_;
    double obs_var_;
    double z_;
    MatrixXd prior_prec_;
    double prior_logdet_ = 0.0;
};

/// Unnormalized Bayesian logistic-regression posterior (flat prior,
/// normalizing constant fixed to one): log p(x, Z) = sum_i log Bernoulli(z_i;
/// sigmoid(y_i^T x)).
class LogisticRegressionModel : public TargetModel {
public:
    LogisticRegressionModel(MatrixXd features, VectorXd labels);

    Eigen::Index dim() const override { return features_.cols(); }
    double log_joint(const VectorXd& x) const override;
    VectorXd grad_log_joint(const VectorXd& x) const override;
    MatrixXd hess_log_joint(const VectorXd& x) const override;
    VectorXd log_joint_batch(const MatrixXd& xs) const override;

    const MatrixXd& features() const { return features_; }
    const VectorXd& labels() const { return labels_; }
    Eigen::Index num_data() const { return features_.rows(); }

private:
    MatrixXd features_;  // N x n
    VectorXd labels_;    // N, entries in {0, 1}
};

/// Unnormalized funnel density: N(x_1; 0, 9) * prod_i N(x_i; 0, exp(x_1)).
class FunnelModel : public TargetModel {
public:
    explicit FunnelModel(int dim = 30);

    Eigen::Index dim() const override { return dim_; }
    double log_joint(const VectorXd& x) const override;
    VectorXd grad_log_joint(const VectorXd& x) const override;
    MatrixXd hess_log_joint(const VectorXd& x) const override;

private:
    int dim_;
};

/// Exact Gaussian posterior of a linear Gaussian model. Both the covariance
/// (Kalman gain form) and the information form are computed and checked for
/// consistency.
GaussianParams kalman_posterior(const LinearGaussianModel& m);

/// Conjugate posterior mixture for a Gaussian-mixture prior with linear
/// Gaussian likelihood: per-component Kalman updates with weights
/// proportional to the component evidence.
MixtureParams gmm_posterior_analytic(const MixturePriorLinearModel& m);

/// Seeded synthetic two-class dataset: x* ~ N(0, I), features y_i ~ N(0, I),
/// labels z_i ~ Bernoulli(sigmoid(y_i^T x*)). The generating parameter is
/// written to *truth when requested.
LogisticRegressionModel generate_logreg_dataset(int n, int N, std::uint64_t seed,
                                                VectorXd* truth = nullptr);

/// CSV round-trip for logistic-regression datasets. Header y_1,...,y_n,z,
/// one row per datum, 17-significant-digit rendering.
void write_logreg_csv(std::ostream& out, const LogisticRegressionModel& m);
LogisticRegressionModel read_logreg_csv(std::istream& in);

}  // namespace fisherflow
