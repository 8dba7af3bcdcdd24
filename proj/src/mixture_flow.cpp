#include "fisherflow/mixture_flow.hpp"

#include <cmath>

namespace fisherflow {

namespace {

/// log-sum-exp over rows of a K x M matrix of per-component log terms.
VectorXd logsumexp_cols(const MatrixXd& terms) {
    VectorXd out(terms.cols());
    for (Eigen::Index j = 0; j < terms.cols(); ++j) {
        const double mx = terms.col(j).maxCoeff();
        out(j) = mx + std::log((terms.col(j).array() - mx).exp().sum());
    }
    return out;
}

/// Responsibilities and per-component scores at x, shared by the mixture
/// score and Hessian.
struct MixtureLocal {
    VectorXd resp;
    std::vector<VectorXd> score;  // -prec_c (x - mu_c)
};

MixtureLocal mixture_local(const MixtureFlowState& s, const VectorXd& x) {
    const int k = s.num_components();
    VectorXd w = s.weights();
    VectorXd log_terms(k);
    MixtureLocal out;
    out.score.resize(k);
    for (int c = 0; c < k; ++c) {
        const auto& comp = s.components[c];
        VectorXd d = x - comp.mean;
        VectorXd pd = comp.prec.selfadjointView<Eigen::Lower>() * d;
        log_terms(c) = std::log(w(c)) -
                       0.5 * static_cast<double>(x.size()) * std::log(2.0 * M_PI) +
                       0.5 * spd_logdet(comp.prec) - 0.5 * d.dot(pd);
        out.score[c] = -pd;
    }
    const double mx = log_terms.maxCoeff();
    out.resp = (log_terms.array() - mx).exp();
    out.resp /= out.resp.sum();
    return out;
}

VectorXd mixture_grad_logq(const MixtureFlowState& s, const VectorXd& x) {
    auto loc = mixture_local(s, x);
    VectorXd g = VectorXd::Zero(x.size());
    for (int c = 0; c < s.num_components(); ++c) g += loc.resp(c) * loc.score[c];
    return g;
}

MatrixXd mixture_hess_logq(const MixtureFlowState& s, const VectorXd& x) {
    auto loc = mixture_local(s, x);
    const Eigen::Index n = x.size();
    VectorXd g = VectorXd::Zero(n);
    MatrixXd h = MatrixXd::Zero(n, n);
    for (int c = 0; c < s.num_components(); ++c) {
        g += loc.resp(c) * loc.score[c];
        h += loc.resp(c) * (loc.score[c] * loc.score[c].transpose() - s.components[c].prec);
    }
    h -= g * g.transpose();
    return symmetrize(h);
}

}  // namespace

VectorXd mixture_logq_batch(const MixtureFlowState& s, const MatrixXd& positions) {
    const int k = s.num_components();
    VectorXd w = s.weights();
    MatrixXd terms(k, positions.cols());
    for (int c = 0; c < k; ++c)
        terms.row(c) =
            (detail::gaussian_logpdf_batch(positions, s.components[c].mean, s.components[c].prec)
                 .array() +
             std::log(w(c)))
                .transpose();
    return logsumexp_cols(terms);
}

namespace detail {

MixtureMoments mixture_moments(const MixtureFlowState& s, const TargetModel& model) {
    const int k = s.num_components();
    MixtureMoments out;
    out.comp.resize(k);
    VectorXd ev(k);
    auto q_grad = [&](const VectorXd& x) { return mixture_grad_logq(s, x); };
    auto q_hess = [&](const VectorXd& x) { return mixture_hess_logq(s, x); };
    for (int c = 0; c < k; ++c) {
        const auto& comp = s.components[c];
        VectorXd v = mixture_logq_batch(s, comp.particles.positions) -
                     model.log_joint_batch(comp.particles.positions);
        out.comp[c] = component_v_moments(comp.mean, comp.prec, comp.particles, v, comp.mode,
                                          model, q_grad, q_hess);
        ev(c) = out.comp[c].ev;
    }
    // d eta_k/dt = E_K[V] - E_k[V]; the shared E_K term is the last
    // component's expectation, and the pinned entry's derivative vanishes.
    out.dlog_odds = VectorXd::Constant(k, ev(k - 1)) - ev;
    out.dlog_odds(k - 1) = 0.0;
    return out;
}

MixtureLayout mixture_layout(const MixtureFlowState& s) {
    MixtureLayout lay;
    lay.n = s.dim();
    lay.k = s.num_components();
    Eigen::Index off = 0;
    for (const auto& c : s.components) {
        lay.m.push_back(c.particles.size());
        lay.offset.push_back(off);
        off += lay.n + 2 * lay.n * lay.n + lay.n * c.particles.size();
    }
    lay.eta_offset = off;
    lay.total = off + lay.k;
    return lay;
}

void pack_mixture(const MixtureFlowState& s, const MixtureLayout& lay, VectorXd& y) {
    for (int c = 0; c < lay.k; ++c) {
        const auto& comp = s.components[c];
        Eigen::Index off = lay.offset[c];
        y.segment(off, lay.n) = comp.mean;
        off += lay.n;
        y.segment(off, lay.n * lay.n) = Eigen::Map<const VectorXd>(comp.prec.data(), lay.n * lay.n);
        off += lay.n * lay.n;
        y.segment(off, lay.n * lay.n) = Eigen::Map<const VectorXd>(comp.sqrt.data(), lay.n * lay.n);
        off += lay.n * lay.n;
        y.segment(off, lay.n * lay.m[c]) =
            Eigen::Map<const VectorXd>(comp.particles.positions.data(), lay.n * lay.m[c]);
    }
    y.segment(lay.eta_offset, lay.k) = s.log_odds;
}

void unpack_mixture(const VectorXd& y, const MixtureLayout& lay, MixtureFlowState& s) {
    for (int c = 0; c < lay.k; ++c) {
        auto& comp = s.components[c];
        Eigen::Index off = lay.offset[c];
        comp.mean = y.segment(off, lay.n);
        off += lay.n;
        comp.prec = symmetrize(Eigen::Map<const MatrixXd>(y.data() + off, lay.n, lay.n));
        off += lay.n * lay.n;
        comp.sqrt = Eigen::Map<const MatrixXd>(y.data() + off, lay.n, lay.n);
        off += lay.n * lay.n;
        comp.particles.positions = Eigen::Map<const MatrixXd>(y.data() + off, lay.n, lay.m[c]);
    }
    s.log_odds = y.segment(lay.eta_offset, lay.k);
}

void assemble_mixture_derivative(const MixtureFlowState& work, const MixtureMoments& mom,
                                 const MixtureLayout& lay, VectorXd& dy) {
    for (int c = 0; c < lay.k; ++c) {
        const auto& comp = work.components[c];
        const auto& cm = mom.comp[c];
        Eigen::Index off = lay.offset[c];
        dy.segment(off, lay.n) = -cm.sigma_grad;
        off += lay.n;
        MatrixXd dprec = symmetrize(cm.hess);
        dy.segment(off, lay.n * lay.n) = Eigen::Map<const VectorXd>(dprec.data(), lay.n * lay.n);
        off += lay.n * lay.n;
        MatrixXd dsqrt = cm.coeffs.A * comp.sqrt;
        dy.segment(off, lay.n * lay.n) = Eigen::Map<const VectorXd>(dsqrt.data(), lay.n * lay.n);
        off += lay.n * lay.n;
        MatrixXd dpos = (cm.coeffs.A * comp.particles.positions).colwise() + cm.coeffs.b;
        dy.segment(off, lay.n * lay.m[c]) =
            Eigen::Map<const VectorXd>(dpos.data(), lay.n * lay.m[c]);
    }
    dy.segment(lay.eta_offset, lay.k) = mom.dlog_odds;
}

std::vector<VectorXd> reference_mahalanobis(const MixtureFlowState& s) {
    std::vector<VectorXd> out;
    out.reserve(s.components.size());
    for (const auto& comp : s.components) {
        VectorXd d(comp.particles.size());
        for (Eigen::Index i = 0; i < comp.particles.size(); ++i)
            d(i) = mahalanobis(comp.particles.positions.col(i), comp.mean, comp.prec);
        out.push_back(std::move(d));
    }
    return out;
}

void mixture_invariant_hook(double t, VectorXd& y, const MixtureLayout& lay,
                            MixtureFlowState& work, const std::vector<VectorXd>& maha0) {
    if (!y.allFinite()) throw DivergedFlow(t, "non-finite state");
    unpack_mixture(y, lay, work);
    for (int c = 0; c < lay.k; ++c) {
        const auto& comp = work.components[c];
        try {
            cholesky_factor(comp.prec);
        } catch (const NotPositiveDefinite&) {
            throw DivergedFlow(
                t, "component " + std::to_string(c) + " precision lost positive definiteness");
        }
        for (Eigen::Index i = 0; i < comp.particles.size(); ++i) {
            const double d = mahalanobis(comp.particles.positions.col(i), comp.mean, comp.prec);
            if (std::abs(d - maha0[c](i)) > 1e-3)
                throw DivergedFlow(t, "component " + std::to_string(c) + " Mahalanobis drift");
        }
        Eigen::Map<MatrixXd>(y.data() + lay.offset[c] + lay.n, lay.n, lay.n) = comp.prec;
    }
    y.segment(lay.eta_offset, lay.k) = clamp_log_odds(y.segment(lay.eta_offset, lay.k));
}

}  // namespace detail

MixtureParams MixtureFlowState::mixture() const {
    std::vector<GaussianParams> comps;
    comps.reserve(components.size());
    for (const auto& c : components) comps.push_back(to_moment(PrecisionParams(c.mean, c.prec)));
    return {std::move(comps), log_odds};
}

MixtureFlowState make_mixture_flow_state(const MixtureParams& init, const QuadratureRule& rule,
                                         ExpectationMode mode) {
    MixtureFlowState s;
    s.t = 0.0;
    s.log_odds = init.log_odds;
    s.components.reserve(init.components.size());
    for (const auto& c : init.components)
        s.components.push_back(make_gaussian_flow_state(c, rule, mode));
    return s;
}

MixtureParamRhs mixture_param_rhs(const MixtureFlowState& state, const TargetModel& model) {
    auto mom = detail::mixture_moments(state, model);
    MixtureParamRhs rhs;
    rhs.components.reserve(mom.comp.size());
    for (const auto& cm : mom.comp) rhs.components.push_back({-cm.sigma_grad, cm.hess});
    rhs.dlog_odds = mom.dlog_odds;
    return rhs;
}

FlowCoeffs component_dynamics(const MixtureFlowState& state, const TargetModel& model, int k,
                              bool natural_form) {
    if (k < 0 || k >= state.num_components()) throw Error("component_dynamics: bad index");
    auto mom = detail::mixture_moments(state, model);
    if (!natural_form) return mom.comp[k].coeffs;
    // Natural-parameter route: Gamma = -1/2 Sigma^{-1}, gamma = Sigma^{-1} mu,
    // A = 1/4 Gamma^{-1} E[hess V], b = 1/2 Gamma^{-1} E[grad V] + 1/2 A Gamma^{-1} gamma.
    const auto& comp = state.components[k];
    MatrixXd gamma_inv = -2.0 * spd_inverse(comp.prec);
    VectorXd gamma_vec = comp.prec.selfadjointView<Eigen::Lower>() * comp.mean;
    FlowCoeffs out;
    out.A = 0.25 * gamma_inv * mom.comp[k].hess;
    out.b = 0.5 * gamma_inv * mom.comp[k].grad + 0.5 * out.A * gamma_inv * gamma_vec;
    return out;
}

VectorXd clamp_log_odds(const VectorXd& log_odds) {
    const int k = static_cast<int>(log_odds.size());
    const double spread = 27.6 - std::log(static_cast<double>(k));
    VectorXd eta = log_odds.cwiseMin(27.6);
    const double floor = eta.maxCoeff() - spread;
    eta = eta.cwiseMax(floor);
    // Restore the gauge: weights are invariant to a common shift, and the
    // last entry must stay pinned at zero.
    eta.array() -= eta(k - 1);
    return eta;
}

MixtureFlowResult integrate_mixture_flow(const MixtureFlowState& init, const TargetModel& model,
                                         double T, const OdeConfig& ode) {
    if (T < 0.0) throw Error("integrate_mixture_flow: T must be nonnegative");
    MixtureFlowResult result;
    result.final = init;
    if (T == 0.0) return result;

    const auto lay = detail::mixture_layout(init);
    MixtureFlowState work = init;
    const auto maha0 = detail::reference_mahalanobis(init);

    auto rhs = [&](double t, const VectorXd& y) -> VectorXd {
        detail::unpack_mixture(y, lay, work);
        detail::MixtureMoments mom;
        try {
            mom = detail::mixture_moments(work, model);
        } catch (const DivergedFlow&) {
            throw;
        } catch (const Error& e) {
            throw DivergedFlow(t, e.what());
        }
        VectorXd dy(lay.total);
        detail::assemble_mixture_derivative(work, mom, lay, dy);
        return dy;
    };

    auto hook = [&](double t, VectorXd& y) {
        detail::mixture_invariant_hook(t, y, lay, work, maha0);
    };

    VectorXd y0(lay.total);
    detail::pack_mixture(init, lay, y0);
    IntegrationResult ir = integrate(rhs, y0, init.t, init.t + T, ode, hook);

    auto to_state = [&](double t, const VectorXd& y) {
        MixtureFlowState s = init;
        s.t = t;
        detail::unpack_mixture(y, lay, s);
        return s;
    };
    result.final = to_state(ir.t, ir.state);
    result.checkpoints.reserve(ir.checkpoints.size());
    for (const auto& cp : ir.checkpoints) result.checkpoints.push_back(to_state(cp.t, cp.state));
    return result;
}

}  // namespace fisherflow
