#pragma once

#include "fisherflow/mixture_flow.hpp"
#include "fisherflow/transforms.hpp"

namespace fisherflow {

/// Joint state of a base flow in u-space and a transformation chain. The base
/// is a mixture flow (a single component gives the Gaussian case); its
/// expectations run against the transformed joint density. gamma scales the
/// gradient flow on the chain parameters.
struct JointFlowState {
    double t = 0.0;
    MixtureFlowState base;
    TransformChain chain;
    double gamma = 1.0;
};

/// log p(F(u), z) + log |det grad F(u)|, the joint density pulled back to
/// u-space.
double transformed_log_joint(const VectorXd& u, const TransformChain& chain,
                             const TargetModel& model);

/// TargetModel view of the pulled-back joint; the base flow consumes this.
/// Gradients chain through the transformation; Hessians are only available
/// for an empty chain.
class TransformedTarget : public TargetModel {
public:
    TransformedTarget(const TargetModel& base, const TransformChain& chain)
        : base_(base), chain_(chain) {}

    Eigen::Index dim() const override { return base_.dim(); }
    bool has_grad() const override { return base_.has_grad(); }
    bool has_hess() const override { return chain_.empty() && base_.has_hess(); }
    double log_joint(const VectorXd& u) const override;
    VectorXd grad_log_joint(const VectorXd& u) const override;
    MatrixXd hess_log_joint(const VectorXd& u) const override;
    VectorXd log_joint_batch(const MatrixXd& us) const override;

private:
    const TargetModel& base_;
    const TransformChain& chain_;
};

struct JointParamRhs {
    MixtureParamRhs base;
    VectorXd dchain;  // gamma-scaled gradient ascent on the chain parameters
};

JointParamRhs joint_param_rhs(const JointFlowState& state, const TargetModel& model);

/// Particle estimate of KL(b || transformed posterior) up to the constant
/// log p(z): sum of pi_k w_i [log b(u_i) - transformed_log_joint(u_i)].
double particle_kl_estimate(const JointFlowState& state, const TargetModel& model);

/// Output-space particle velocity phi_F(F(u)) = dF/dt + (grad F) phi_u(u),
/// with dtheta_F/dt and phi_u taken from the current right-hand side.
VectorXd transformed_velocity(const JointFlowState& state, const TargetModel& model, int component,
                              const VectorXd& u);

struct NfResult {
    ParticleSet transformed;  // pooled output particles, weights pi_k w_i
    JointFlowState final;
    std::vector<JointFlowState> checkpoints;
};

/// Integrates the joint flow to t + T and maps the final base particles
/// through the final transformation.
NfResult integrate_nf(const JointFlowState& init, const TargetModel& model, double T,
                      const OdeConfig& ode);

/// Pools every component's particles into one set weighted by pi_k w_i.
ParticleSet pooled_particles(const MixtureFlowState& base);

}  // namespace fisherflow
