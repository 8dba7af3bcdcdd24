#include "fisherflow/gaussian_flow.hpp"

#include <cmath>

namespace fisherflow {

namespace detail {

VectorXd gaussian_logpdf_batch(const MatrixXd& positions, const VectorXd& mean,
                               const MatrixXd& prec) {
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    const Eigen::Index n = mean.size();
    MatrixXd l = cholesky_factor(prec);
    MatrixXd d = positions.colwise() - mean;
    MatrixXd w = l.transpose() * d;  // quad form = ||L^T d||^2 since prec = L L^T
    const double logdet_prec = 2.0 * l.diagonal().array().log().sum();
    VectorXd out(positions.cols());
    for (Eigen::Index i = 0; i < positions.cols(); ++i)
        out(i) = -0.5 * static_cast<double>(n) * kLog2Pi + 0.5 * logdet_prec -
                 0.5 * w.col(i).squaredNorm();
    return out;
}

ComponentMoments component_v_moments(
    const VectorXd& mean, const MatrixXd& prec, const ParticleSet& particles,
    const VectorXd& v_values, ExpectationMode mode, const TargetModel& model,
    const std::function<VectorXd(const VectorXd&)>& q_grad,
    const std::function<MatrixXd(const VectorXd&)>& q_hess) {
    const Eigen::Index n = mean.size();
    const Eigen::Index m = particles.size();
    const VectorXd& w = particles.weights;
    if (!v_values.allFinite()) throw NonFiniteValue("component_v_moments: non-finite V");

    ComponentMoments out;
    out.ev = w.dot(v_values);

    if (mode == ExpectationMode::Stein) {
        // Centered difference-form estimators: the gradient term centers the
        // particles at their weighted empirical mean, the Hessian term
        // subtracts the empirical second moment about the parameter mean.
        // Both are invariant to adding any constant to V.
        VectorXd emp_mean = particles.positions * w;
        MatrixXd d_mu = particles.positions.colwise() - mean;
        VectorXd wv = w.cwiseProduct(v_values);
        out.sigma_grad = (particles.positions.colwise() - emp_mean) * wv;
        MatrixXd emp_cov = d_mu * w.asDiagonal() * d_mu.transpose();
        MatrixXd inner = d_mu * wv.asDiagonal() * d_mu.transpose() - out.ev * emp_cov;
        out.grad = prec.selfadjointView<Eigen::Lower>() * out.sigma_grad;
        out.hess = symmetrize(prec.selfadjointView<Eigen::Lower>() *
                              (inner * prec.selfadjointView<Eigen::Lower>()));
        out.coeffs.A = -0.5 * inner * prec.selfadjointView<Eigen::Lower>();
    } else {
        if (!model.has_grad() || !model.has_hess())
            throw Error("component_v_moments: analytic mode needs model derivatives");
        VectorXd grad = VectorXd::Zero(n);
        MatrixXd hess = MatrixXd::Zero(n, n);
        for (Eigen::Index i = 0; i < m; ++i) {
            const VectorXd x = particles.positions.col(i);
            grad += w(i) * (q_grad(x) - model.grad_log_joint(x));
            hess += w(i) * (q_hess(x) - model.hess_log_joint(x));
        }
        out.grad = grad;
        out.hess = symmetrize(hess);
        out.sigma_grad = spd_solve(prec, out.grad);
        out.coeffs.A = -0.5 * spd_solve(prec, out.hess);
    }
    out.coeffs.b = -out.sigma_grad - out.coeffs.A * mean;
    return out;
}

}  // namespace detail

namespace {

/// Single-Gaussian V values at all particles: log q(x_i) - log p(x_i, z).
VectorXd single_gaussian_v(const GaussianFlowState& s, const TargetModel& model) {
    VectorXd logq = detail::gaussian_logpdf_batch(s.particles.positions, s.mean, s.prec);
    VectorXd logp = model.log_joint_batch(s.particles.positions);
    return logq - logp;
}

detail::ComponentMoments state_moments(const GaussianFlowState& s, const TargetModel& model) {
    auto q_grad = [&](const VectorXd& x) -> VectorXd {
        return s.prec.selfadjointView<Eigen::Lower>() * (s.mean - x);
    };
    auto q_hess = [&](const VectorXd&) -> MatrixXd { return -s.prec; };
    return detail::component_v_moments(s.mean, s.prec, s.particles, single_gaussian_v(s, model),
                                       s.mode, model, q_grad, q_hess);
}

struct Layout {
    Eigen::Index n = 0, m = 0;
    Eigen::Index total() const { return n + 2 * n * n + n * m; }
};

VectorXd pack(const GaussianFlowState& s) {
    Layout lay{s.dim(), s.particles.size()};
    VectorXd y(lay.total());
    Eigen::Index off = 0;
    y.segment(off, lay.n) = s.mean;
    off += lay.n;
    y.segment(off, lay.n * lay.n) = Eigen::Map<const VectorXd>(s.prec.data(), lay.n * lay.n);
    off += lay.n * lay.n;
    y.segment(off, lay.n * lay.n) = Eigen::Map<const VectorXd>(s.sqrt.data(), lay.n * lay.n);
    off += lay.n * lay.n;
    y.segment(off, lay.n * lay.m) =
        Eigen::Map<const VectorXd>(s.particles.positions.data(), lay.n * lay.m);
    return y;
}

void unpack(const VectorXd& y, const Layout& lay, GaussianFlowState& s) {
    Eigen::Index off = 0;
    s.mean = y.segment(off, lay.n);
    off += lay.n;
    s.prec = symmetrize(Eigen::Map<const MatrixXd>(y.data() + off, lay.n, lay.n));
    off += lay.n * lay.n;
    s.sqrt = Eigen::Map<const MatrixXd>(y.data() + off, lay.n, lay.n);
    off += lay.n * lay.n;
    s.particles.positions = Eigen::Map<const MatrixXd>(y.data() + off, lay.n, lay.m);
}

}  // namespace

GaussianFlowState make_gaussian_flow_state(const GaussianParams& init, const QuadratureRule& rule,
                                           ExpectationMode mode) {
    GaussianFlowState s;
    s.t = 0.0;
    s.mean = init.mean;
    s.prec = to_precision(init).prec;
    s.sqrt = cholesky_factor(init.cov);
    s.rule = rule;
    s.particles = transport(rule, init.mean, s.sqrt);
    s.mode = mode;
    return s;
}

double v_value(const VectorXd& x, const std::function<double(const VectorXd&)>& q_logpdf,
               const TargetModel& model) {
    const double v = q_logpdf(x) - model.log_joint(x);
    if (!std::isfinite(v)) throw NonFiniteValue("v_value");
    return v;
}

VMoments expect_v_moments(const GaussianFlowState& state, const TargetModel& model) {
    auto mom = state_moments(state, model);
    return {mom.ev, mom.grad, mom.hess};
}

ParamRhs param_rhs(const GaussianFlowState& state, const TargetModel& model) {
    auto mom = state_moments(state, model);
    return {-mom.sigma_grad, mom.hess};
}

FlowCoeffs dynamics_coeffs(const GaussianFlowState& state, const TargetModel& model) {
    return state_moments(state, model).coeffs;
}

MatrixXd sqrt_rhs(const FlowCoeffs& coeffs, const MatrixXd& sqrt) { return coeffs.A * sqrt; }

GaussianFlowResult integrate_gaussian_flow(const GaussianFlowState& init, const TargetModel& model,
                                           double T, const OdeConfig& ode) {
    if (T < 0.0) throw Error("integrate_gaussian_flow: T must be nonnegative");
    GaussianFlowResult result;
    result.final = init;
    if (T == 0.0) return result;

    const Layout lay{init.dim(), init.particles.size()};
    GaussianFlowState work = init;

    // Reference Mahalanobis distances; invariant along exact dynamics.
    VectorXd maha0(lay.m);
    for (Eigen::Index i = 0; i < lay.m; ++i)
        maha0(i) = mahalanobis(init.particles.positions.col(i), init.mean, init.prec);

    auto rhs = [&](double t, const VectorXd& y) -> VectorXd {
        unpack(y, lay, work);
        detail::ComponentMoments mom;
        try {
            mom = state_moments(work, model);
        } catch (const DivergedFlow&) {
            throw;
        } catch (const Error& e) {
            throw DivergedFlow(t, e.what());
        }
        VectorXd dy(lay.total());
        Eigen::Index off = 0;
        dy.segment(off, lay.n) = -mom.sigma_grad;
        off += lay.n;
        MatrixXd dprec = symmetrize(mom.hess);
        dy.segment(off, lay.n * lay.n) = Eigen::Map<const VectorXd>(dprec.data(), lay.n * lay.n);
        off += lay.n * lay.n;
        MatrixXd dsqrt = mom.coeffs.A * work.sqrt;
        dy.segment(off, lay.n * lay.n) = Eigen::Map<const VectorXd>(dsqrt.data(), lay.n * lay.n);
        off += lay.n * lay.n;
        MatrixXd dpos = (mom.coeffs.A * work.particles.positions).colwise() + mom.coeffs.b;
        dy.segment(off, lay.n * lay.m) = Eigen::Map<const VectorXd>(dpos.data(), lay.n * lay.m);
        return dy;
    };

    // Divergence policy: abort rather than project. Non-finite state, loss of
    // positive definiteness, or Mahalanobis drift all indicate the step size
    // cannot resolve the flow.
    auto hook = [&](double t, VectorXd& y) {
        if (!y.allFinite()) throw DivergedFlow(t, "non-finite state");
        unpack(y, lay, work);
        MatrixXd l;
        try {
            l = cholesky_factor(work.prec);
        } catch (const NotPositiveDefinite&) {
            throw DivergedFlow(t, "precision lost positive definiteness");
        }
        for (Eigen::Index i = 0; i < lay.m; ++i) {
            const double d =
                mahalanobis(work.particles.positions.col(i), work.mean, work.prec);
            if (std::abs(d - maha0(i)) > 1e-3) throw DivergedFlow(t, "Mahalanobis drift");
        }
        // Keep the precision segment exactly symmetric between steps.
        Eigen::Map<MatrixXd>(y.data() + lay.n, lay.n, lay.n) = work.prec;
    };

    IntegrationResult ir = integrate(rhs, pack(init), init.t, init.t + T, ode, hook);

    auto to_state = [&](double t, const VectorXd& y) {
        GaussianFlowState s = init;
        s.t = t;
        unpack(y, lay, s);
        s.particles.weights = init.particles.weights;
        return s;
    };
    result.final = to_state(ir.t, ir.state);
    result.checkpoints.reserve(ir.checkpoints.size());
    for (const auto& cp : ir.checkpoints) result.checkpoints.push_back(to_state(cp.t, cp.state));
    return result;
}

ParticleSet recover_particles(const GaussianFlowState& final, const QuadratureRule& base_nodes) {
    return transport(base_nodes, final.mean, final.sqrt);
}

}  // namespace fisherflow
