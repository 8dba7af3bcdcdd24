#include "fisherflow/joint_flow.hpp"

#include <cmath>

namespace fisherflow {

double transformed_log_joint(const VectorXd& u, const TransformChain& chain,
                             const TargetModel& model) {
    auto [x, logdet] = chain.forward(u);
    const double lp = model.log_joint(x) + logdet;
    if (!std::isfinite(lp)) throw NonFiniteValue("transformed_log_joint");
    return lp;
}

double TransformedTarget::log_joint(const VectorXd& u) const {
    return transformed_log_joint(u, chain_, base_);
}

VectorXd TransformedTarget::grad_log_joint(const VectorXd& u) const {
    auto trace = chain_.forward_trace(u);
    VectorXd adj = base_.grad_log_joint(trace.back());
    for (int j = chain_.size() - 1; j >= 0; --j) {
        const auto& e = chain_.element(j);
        adj = e.jacobian(trace[j]).transpose() * adj + e.grad_u_log_det(trace[j]);
    }
    return adj;
}

MatrixXd TransformedTarget::hess_log_joint(const VectorXd& u) const {
    if (!chain_.empty())
        throw Error("TransformedTarget: Hessian only available for an empty chain");
    return base_.hess_log_joint(u);
}

VectorXd TransformedTarget::log_joint_batch(const MatrixXd& us) const {
    MatrixXd xs(us.rows(), us.cols());
    VectorXd logdets(us.cols());
    for (Eigen::Index i = 0; i < us.cols(); ++i) {
        auto [x, ld] = chain_.forward(us.col(i));
        xs.col(i) = x;
        logdets(i) = ld;
    }
    return base_.log_joint_batch(xs) + logdets;
}

ParticleSet pooled_particles(const MixtureFlowState& base) {
    const int k = base.num_components();
    VectorXd pw = base.weights();
    Eigen::Index total = 0;
    for (const auto& c : base.components) total += c.particles.size();
    ParticleSet out;
    out.positions.resize(base.dim(), total);
    out.weights.resize(total);
    Eigen::Index off = 0;
    for (int c = 0; c < k; ++c) {
        const auto& ps = base.components[c].particles;
        out.positions.middleCols(off, ps.size()) = ps.positions;
        out.weights.segment(off, ps.size()) = pw(c) * ps.weights;
        off += ps.size();
    }
    return out;
}

namespace {

/// gamma * weighted average over base particles of the chain-parameter
/// gradient of the transformed log joint.
VectorXd chain_rhs(const JointFlowState& state, const TargetModel& model) {
    if (state.chain.empty()) return VectorXd();
    VectorXd acc = VectorXd::Zero(state.chain.num_params());
    VectorXd pw = state.base.weights();
    for (int c = 0; c < state.base.num_components(); ++c) {
        const auto& ps = state.base.components[c].particles;
        for (Eigen::Index i = 0; i < ps.size(); ++i) {
            const VectorXd u = ps.positions.col(i);
            auto trace = state.chain.forward_trace(u);
            VectorXd lambda = model.grad_log_joint(trace.back());
            acc += (pw(c) * ps.weights(i)) * state.chain.backward(u, lambda);
        }
    }
    return state.gamma * acc;
}

}  // namespace

JointParamRhs joint_param_rhs(const JointFlowState& state, const TargetModel& model) {
    TransformedTarget target(model, state.chain);
    JointParamRhs rhs;
    rhs.base = mixture_param_rhs(state.base, target);
    rhs.dchain = chain_rhs(state, model);
    return rhs;
}

double particle_kl_estimate(const JointFlowState& state, const TargetModel& model) {
    TransformedTarget target(model, state.chain);
    VectorXd pw = state.base.weights();
    double acc = 0.0;
    for (int c = 0; c < state.base.num_components(); ++c) {
        const auto& ps = state.base.components[c].particles;
        VectorXd logq = mixture_logq_batch(state.base, ps.positions);
        VectorXd logp = target.log_joint_batch(ps.positions);
        acc += pw(c) * ps.weights.dot(logq - logp);
    }
    return acc;
}

VectorXd transformed_velocity(const JointFlowState& state, const TargetModel& model, int component,
                              const VectorXd& u) {
    TransformedTarget target(model, state.chain);
    auto mom = detail::mixture_moments(state.base, target);
    VectorXd dchain = chain_rhs(state, model);
    const auto& coeffs = mom.comp[component].coeffs;
    VectorXd phi_u = coeffs.A * u + coeffs.b;
    if (state.chain.empty()) return phi_u;
    return state.chain.velocity(u, dchain, phi_u);
}

NfResult integrate_nf(const JointFlowState& init, const TargetModel& model, double T,
                      const OdeConfig& ode) {
    if (T < 0.0) throw Error("integrate_nf: T must be nonnegative");
    NfResult result;
    result.final = init;
    if (T == 0.0) {
        auto pooled = pooled_particles(init.base);
        for (Eigen::Index i = 0; i < pooled.size(); ++i)
            pooled.positions.col(i) = init.chain.forward(pooled.positions.col(i)).first;
        result.transformed = std::move(pooled);
        return result;
    }

    const auto lay = detail::mixture_layout(init.base);
    const Eigen::Index chain_params = init.chain.num_params();
    const Eigen::Index total = lay.total + chain_params;
    JointFlowState work = init;
    const auto maha0 = detail::reference_mahalanobis(init.base);

    auto rhs = [&](double t, const VectorXd& y) -> VectorXd {
        detail::unpack_mixture(y.head(lay.total), lay, work.base);
        if (chain_params > 0) work.chain.set_params(y.tail(chain_params));
        VectorXd dy(total);
        try {
            TransformedTarget target(model, work.chain);
            auto mom = detail::mixture_moments(work.base, target);
            VectorXd dy_base(lay.total);
            detail::assemble_mixture_derivative(work.base, mom, lay, dy_base);
            dy.head(lay.total) = dy_base;
            if (chain_params > 0) dy.tail(chain_params) = chain_rhs(work, model);
        } catch (const DivergedFlow&) {
            throw;
        } catch (const Error& e) {
            throw DivergedFlow(t, e.what());
        }
        return dy;
    };

    auto hook = [&](double t, VectorXd& y) {
        VectorXd base_part = y.head(lay.total);
        detail::mixture_invariant_hook(t, base_part, lay, work.base, maha0);
        y.head(lay.total) = base_part;
        if (chain_params > 0 && !y.tail(chain_params).allFinite())
            throw DivergedFlow(t, "non-finite transformation parameters");
    };

    VectorXd y0(total);
    VectorXd base0(lay.total);
    detail::pack_mixture(init.base, lay, base0);
    y0.head(lay.total) = base0;
    if (chain_params > 0) y0.tail(chain_params) = init.chain.params();

    IntegrationResult ir = integrate(rhs, y0, init.t, init.t + T, ode, hook);

    auto to_state = [&](double t, const VectorXd& y) {
        JointFlowState s = init;
        s.t = t;
        detail::unpack_mixture(y.head(lay.total), lay, s.base);
        if (chain_params > 0) s.chain.set_params(y.tail(chain_params));
        return s;
    };
    result.final = to_state(ir.t, ir.state);
    result.checkpoints.reserve(ir.checkpoints.size());
    for (const auto& cp : ir.checkpoints) result.checkpoints.push_back(to_state(cp.t, cp.state));

    auto pooled = pooled_particles(result.final.base);
    for (Eigen::Index i = 0; i < pooled.size(); ++i)
        pooled.positions.col(i) = result.final.chain.forward(pooled.positions.col(i)).first;
    result.transformed = std::move(pooled);
    return result;
}

}  // namespace fisherflow
