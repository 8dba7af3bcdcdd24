#pragma once

#include "fisherflow/gaussian_flow.hpp"

namespace fisherflow {

/// State of the approximated Gaussian-mixture flow: per-component
/// mean/precision/square-root triples with their own particle ensembles, plus
/// the weight log-odds (last entry pinned to zero). V is always built from the
/// full mixture log-density.
struct MixtureFlowState {
    double t = 0.0;
    std::vector<GaussianFlowState> components;
    VectorXd log_odds;

    int num_components() const { return static_cast<int>(components.size()); }
    Eigen::Index dim() const { return components.empty() ? 0 : components.front().dim(); }
    VectorXd weights() const { return weights_from_log_odds(log_odds); }
    MixtureParams mixture() const;
};

MixtureFlowState make_mixture_flow_state(const MixtureParams& init, const QuadratureRule& rule,
                                         ExpectationMode mode);

/// Per-component parameter derivatives plus the weight log-odds derivative
/// d eta_k/dt = E_K[V] - E_k[V]. The pinned entry's derivative is zero.
struct MixtureParamRhs {
    std::vector<ParamRhs> components;
    VectorXd dlog_odds;
};

MixtureParamRhs mixture_param_rhs(const MixtureFlowState& state, const TargetModel& model);

/// Particle dynamics coefficients of component k. `natural_form` selects the
/// natural-parameter route (gamma, Gamma); both routes produce identical
/// coefficients and the conventional one is the default.
FlowCoeffs component_dynamics(const MixtureFlowState& state, const TargetModel& model, int k,
                              bool natural_form = false);

struct MixtureFlowResult {
    MixtureFlowState final;
    std::vector<MixtureFlowState> checkpoints;
};

/// Co-integrates all components, their particles, and the weight log-odds.
/// After every accepted step log-odds are clamped so that every recovered
/// weight stays at or above exp(-27.6) ~ 1e-12, re-pinning the last entry.
MixtureFlowResult integrate_mixture_flow(const MixtureFlowState& init, const TargetModel& model,
                                         double T, const OdeConfig& ode);

/// Log-odds clamp used between integration steps: caps the spread below the
/// maximum at 27.6 - log K and restores the gauge eta_K = 0.
VectorXd clamp_log_odds(const VectorXd& log_odds);

/// Mixture log-density at every particle column, from the precision-form
/// components of a flow state.
VectorXd mixture_logq_batch(const MixtureFlowState& s, const MatrixXd& positions);

namespace detail {

/// Per-component moments plus the weight derivative, one flow evaluation.
struct MixtureMoments {
    std::vector<ComponentMoments> comp;
    VectorXd dlog_odds;
};

MixtureMoments mixture_moments(const MixtureFlowState& s, const TargetModel& model);

/// Flat-vector layout of a mixture state; the joint flow appends its own
/// segments after `total`.
struct MixtureLayout {
    Eigen::Index n = 0;
    int k = 0;
    std::vector<Eigen::Index> m;
    std::vector<Eigen::Index> offset;
    Eigen::Index eta_offset = 0;
    Eigen::Index total = 0;
};

MixtureLayout mixture_layout(const MixtureFlowState& s);
void pack_mixture(const MixtureFlowState& s, const MixtureLayout& lay, VectorXd& y);
void unpack_mixture(const VectorXd& y, const MixtureLayout& lay, MixtureFlowState& s);

/// Writes the mixture segments of dy from the evaluated moments.
void assemble_mixture_derivative(const MixtureFlowState& work, const MixtureMoments& mom,
                                 const MixtureLayout& lay, VectorXd& dy);

/// Shared invariant hook body: finiteness, positive definiteness, Mahalanobis
/// drift, precision re-symmetrization, and the log-odds clamp.
void mixture_invariant_hook(double t, VectorXd& y, const MixtureLayout& lay,
                            MixtureFlowState& work, const std::vector<VectorXd>& maha0);

std::vector<VectorXd> reference_mahalanobis(const MixtureFlowState& s);

}  // namespace detail

}  // namespace fisherflow
