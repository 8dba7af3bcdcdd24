#pragma once

#include "fisherflow/ode.hpp"
#include "fisherflow/quadrature.hpp"
#include "fisherflow/targets.hpp"

namespace fisherflow {

/// How Gaussian expectations of V-derivatives are estimated. Analytic mode
/// integrates the model's gradient and Hessian directly; Stein mode uses the
/// derivative-free centered estimators, needing only V values and never
/// inverting the precision matrix.
enum class ExpectationMode { Analytic, Stein };

/// Affine particle dynamics coefficients, phi(x) = A x + b.
struct FlowCoeffs {
    MatrixXd A;
    VectorXd b;
};

/// State of one Gaussian flow: precision-form parameters (primary), a
/// co-propagated covariance square root (d L/dt = A L keeps L L^T = Sigma but
/// does not preserve triangularity), and the particle ensemble whose weighted
/// moments feed the expectation estimators.
struct GaussianFlowState {
    double t = 0.0;
    VectorXd mean;
    MatrixXd prec;
    MatrixXd sqrt;
    ParticleSet particles;
    ExpectationMode mode = ExpectationMode::Stein;
    QuadratureRule rule;

    Eigen::Index dim() const { return mean.size(); }
};

/// Builds an initial state from mean/covariance: L = chol(Sigma), particles
/// transported from the rule's nodes.
GaussianFlowState make_gaussian_flow_state(const GaussianParams& init, const QuadratureRule& rule,
                                           ExpectationMode mode);

/// V(x) = log q(x) - log p(x, z).
double v_value(const VectorXd& x, const std::function<double(const VectorXd&)>& q_logpdf,
               const TargetModel& model);

/// The three Gaussian expectations driving the flow.
struct VMoments {
    double v = 0.0;   // E[V], plain weighted mean in both modes
    VectorXd grad;    // E[grad V]
    MatrixXd hess;    // E[hess V]
};

VMoments expect_v_moments(const GaussianFlowState& state, const TargetModel& model);

/// Parameter flow right-hand side: d mu/dt = -Sigma E[grad V],
/// d Sigma^{-1}/dt = E[hess V].
struct ParamRhs {
    VectorXd dmean;
    MatrixXd dprec;
};

ParamRhs param_rhs(const GaussianFlowState& state, const TargetModel& model);

/// Particle dynamics coefficients A = -1/2 Sigma E[hess V],
/// b = -Sigma E[grad V] - A mu (derivative-free equivalents in Stein mode).
FlowCoeffs dynamics_coeffs(const GaussianFlowState& state, const TargetModel& model);

/// Square-root flow d L/dt = A L.
MatrixXd sqrt_rhs(const FlowCoeffs& coeffs, const MatrixXd& sqrt);

struct GaussianFlowResult {
    GaussianFlowState final;
    std::vector<GaussianFlowState> checkpoints;
};

/// Co-integrates parameters, square root, and particles to t + T. Throws
/// DivergedFlow (with the failing time) on non-finite values, loss of positive
/// definiteness, or per-particle Mahalanobis drift beyond 1e-3.
GaussianFlowResult integrate_gaussian_flow(const GaussianFlowState& init, const TargetModel& model,
                                           double T, const OdeConfig& ode);

/// Recovers particles from the final parameters as L_T xi + mu_T; equal to the
/// propagated particles up to integration tolerance.
ParticleSet recover_particles(const GaussianFlowState& final, const QuadratureRule& base_nodes);

namespace detail {

/// Shared moment kernel: the single-Gaussian flow and each mixture component
/// use the same centered estimators, differing only in where V and the
/// variational score come from.
struct ComponentMoments {
    double ev = 0.0;
    VectorXd grad;      // E[grad V]
    MatrixXd hess;      // E[hess V]
    VectorXd sigma_grad;  // Sigma E[grad V]
    FlowCoeffs coeffs;  // A = -1/2 Sigma E[hess V], b = -Sigma E[grad V] - A mu
};

ComponentMoments component_v_moments(
    const VectorXd& mean, const MatrixXd& prec, const ParticleSet& particles,
    const VectorXd& v_values, ExpectationMode mode, const TargetModel& model,
    const std::function<VectorXd(const VectorXd&)>& q_grad,
    const std::function<MatrixXd(const VectorXd&)>& q_hess);

/// log N(x_i; mean, prec) for every particle column.
VectorXd gaussian_logpdf_batch(const MatrixXd& positions, const VectorXd& mean,
                               const MatrixXd& prec);

}  // namespace detail

}  // namespace fisherflow
