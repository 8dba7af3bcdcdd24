#include <doctest.h>

#include <cmath>

#include "fisherflow/edh.hpp"
#include "fisherflow/gaussian_flow.hpp"
#include "test_util.hpp"

using namespace fisherflow;

namespace {

LinearGaussianModel paper_linear_model() {
    VectorXd xh = VectorXd::Zero(2);
    MatrixXd p(2, 2), h(2, 2), r(2, 2);
    p << 1.5, 0.5, 0.5, 5.5;
    h << 1.0, 1.5, 0.2, 2.0;
    r << 0.2, 0.1, 0.1, 0.2;
    VectorXd xstar(2);
    xstar << -1.18, 4.12;
    return {xh, p, h, r, h * xstar};
}

/// Marginal likelihood of the linear Gaussian model, N(z; H x_hat, R + HPH^T).
double log_evidence(const LinearGaussianModel& m) {
    GaussianParams pred(m.H() * m.prior_mean(),
                        m.R() + m.H() * m.prior_cov() * m.H().transpose());
    return gaussian_logpdf(m.z(), pred);
}

/// State pinned at the closed-form transient solution for time t.
GaussianFlowState closed_form_state(const LinearGaussianModel& m, double t, ExpectationMode mode,
                                    const QuadratureRule& rule) {
    auto tp = transient_params(m, lambda_schedule(t));
    GaussianFlowState s = make_gaussian_flow_state(GaussianParams(tp.mean, tp.cov), rule, mode);
    s.t = t;
    return s;
}

/// Target with a constant added to log p, shifting V by the opposite amount.
class ShiftedModel : public TargetModel {
public:
    ShiftedModel(const TargetModel& base, double shift) : base_(base), shift_(shift) {}
    Eigen::Index dim() const override { return base_.dim(); }
    double log_joint(const VectorXd& x) const override { return base_.log_joint(x) - shift_; }
    VectorXd grad_log_joint(const VectorXd& x) const override { return base_.grad_log_joint(x); }
    MatrixXd hess_log_joint(const VectorXd& x) const override { return base_.hess_log_joint(x); }

private:
    const TargetModel& base_;
    double shift_;
};

}  // namespace

TEST_CASE("v_value") {
    auto m = paper_linear_model();
    auto post = kalman_posterior(m);
    auto q_post = [&](const VectorXd& x) { return gaussian_logpdf(x, post); };

    // q = exact posterior: V is constant, equal to -log p(z).
    std::mt19937_64 gen(4);
    const double expected = -log_evidence(m);
    double lo = 1e300, hi = -1e300;
    for (int i = 0; i < 10; ++i) {
        VectorXd x = ff_test::random_vector(gen, 2, 3.0);
        const double v = v_value(x, q_post, m);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        CHECK(v == doctest::Approx(expected).epsilon(1e-9));
    }
    CHECK(hi - lo < 1e-9);

    // q = prior: V(x) = -log p(z | x).
    GaussianParams prior(m.prior_mean(), m.prior_cov());
    auto q_prior = [&](const VectorXd& x) { return gaussian_logpdf(x, prior); };
    for (int i = 0; i < 5; ++i) {
        VectorXd x = ff_test::random_vector(gen, 2, 2.0);
        const double loglik = m.log_joint(x) - gaussian_logpdf(x, prior);
        CHECK(v_value(x, q_prior, m) == doctest::Approx(-loglik).epsilon(1e-12));
    }
}

TEST_CASE("expect_v_moments: linear Gaussian Hessian identity (analytic mode)") {
    auto m = paper_linear_model();
    auto post = kalman_posterior(m);
    auto rule = gh_rule_nd(4, 2);

    auto state = closed_form_state(m, 0.7, ExpectationMode::Analytic, rule);
    auto mom = expect_v_moments(state, m);
    MatrixXd sigma_p_inv = post.cov.inverse();
    MatrixXd expected = -state.prec + sigma_p_inv;
    CHECK((mom.hess - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("expect_v_moments: zero at the posterior fixed point") {
    auto m = paper_linear_model();
    auto post = kalman_posterior(m);
    auto rule = gh_rule_nd(4, 2);
    for (auto mode : {ExpectationMode::Analytic, ExpectationMode::Stein}) {
        GaussianFlowState s = make_gaussian_flow_state(post, rule, mode);
        auto mom = expect_v_moments(s, m);
        CHECK(mom.grad.cwiseAbs().maxCoeff() < 1e-9);
        CHECK(mom.hess.cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("expect_v_moments: Stein and analytic agree on quadratic V with GH p=4") {
    auto m = paper_linear_model();
    auto rule = gh_rule_nd(4, 2);
    auto sa = closed_form_state(m, 0.4, ExpectationMode::Analytic, rule);
    auto ss = closed_form_state(m, 0.4, ExpectationMode::Stein, rule);
    auto ma = expect_v_moments(sa, m);
    auto ms = expect_v_moments(ss, m);
    CHECK(std::abs(ma.v - ms.v) < 1e-8);
    CHECK((ma.grad - ms.grad).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((ma.hess - ms.hess).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("Stein estimators are invariant to constant shifts of V") {
    auto m = paper_linear_model();
    ShiftedModel shifted(m, 17.3);
    auto rule = gh_rule_nd(4, 2);
    auto s = closed_form_state(m, 0.3, ExpectationMode::Stein, rule);
    auto base = expect_v_moments(s, m);
    auto moved = expect_v_moments(s, shifted);
    // E[V] shifts by exactly the constant; the centered gradient and Hessian
    // estimators do not move at all.
    CHECK(moved.v - base.v == doctest::Approx(17.3).epsilon(1e-12));
    CHECK((moved.grad - base.grad).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((moved.hess - base.hess).cwiseAbs().maxCoeff() < 1e-10);
    auto ca = dynamics_coeffs(s, m);
    auto cs = dynamics_coeffs(s, shifted);
    CHECK((ca.A - cs.A).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((ca.b - cs.b).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("param_rhs: posterior is a fixed point") {
    auto m = paper_linear_model();
    auto post = kalman_posterior(m);
    auto rule = gh_rule_nd(4, 2);
    for (auto mode : {ExpectationMode::Analytic, ExpectationMode::Stein}) {
        GaussianFlowState s = make_gaussian_flow_state(post, rule, mode);
        auto rhs = param_rhs(s, m);
        CHECK(rhs.dmean.cwiseAbs().maxCoeff() < 1e-9);
        CHECK(rhs.dprec.cwiseAbs().maxCoeff() < 1e-9);
        auto coeffs = dynamics_coeffs(s, m);
        CHECK(coeffs.A.cwiseAbs().maxCoeff() < 1e-9);
        CHECK(coeffs.b.cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("param_rhs matches the time derivative of the closed-form trajectory") {
    auto m = paper_linear_model();
    auto rule = gh_rule_nd(4, 2);
    const double dt = 1e-5;
    for (double t : {0.5, 1.0, 2.0}) {
        auto s = closed_form_state(m, t, ExpectationMode::Analytic, rule);
        auto rhs = param_rhs(s, m);

        auto plus = transient_params(m, lambda_schedule(t + dt));
        auto minus = transient_params(m, lambda_schedule(t - dt));
        VectorXd dmean_fd = (plus.mean - minus.mean) / (2.0 * dt);
        MatrixXd dprec_fd = (plus.cov.inverse() - minus.cov.inverse()) / (2.0 * dt);
        CHECK((rhs.dmean - dmean_fd).cwiseAbs().maxCoeff() < 1e-7);
        CHECK((rhs.dprec - dprec_fd).cwiseAbs().maxCoeff() < 1e-7);
    }
}

TEST_CASE("one RK4 step from the prior decreases the KL divergence") {
    auto m = paper_linear_model();
    auto post = kalman_posterior(m);
    GaussianParams prior(m.prior_mean(), m.prior_cov());
    auto s0 = make_gaussian_flow_state(prior, gh_rule_nd(4, 2), ExpectationMode::Analytic);
    const double kl0 = gaussian_kl(prior, post);

    OdeConfig cfg;
    cfg.step = 1e-3;
    auto res = integrate_gaussian_flow(s0, m, 1e-3, cfg);
    GaussianParams q1 = to_moment(PrecisionParams(res.final.mean, res.final.prec));
    CHECK(gaussian_kl(q1, post) < kl0);
}

TEST_CASE("dynamics_coeffs: time-scaled EDH coefficients at the closed form") {
    auto m = paper_linear_model();
    auto rule = gh_rule_nd(4, 2);
    for (double t : {0.0, 0.5, 1.0, 2.0, 5.0}) {
        const double lambda = lambda_schedule(t);
        auto s = closed_form_state(m, t, ExpectationMode::Analytic, rule);
        auto c = dynamics_coeffs(s, m);

        MatrixXd sigma_t = s.prec.inverse();
        MatrixXd expected_a =
            -0.5 * (1.0 - lambda) * sigma_t * m.H().transpose() * m.R().inverse() * m.H();
        CHECK((c.A - expected_a).cwiseAbs().maxCoeff() < 1e-8);

        auto edh = edh_coeffs(m, lambda);
        CHECK(((1.0 - lambda) * edh.A - c.A).cwiseAbs().maxCoeff() < 1e-8);
        CHECK(((1.0 - lambda) * edh.b - c.b).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("dynamics_coeffs: Stein equals analytic on the linear model") {
    auto m = paper_linear_model();
    auto rule = gh_rule_nd(4, 2);
    auto sa = closed_form_state(m, 0.8, ExpectationMode::Analytic, rule);
    auto ss = closed_form_state(m, 0.8, ExpectationMode::Stein, rule);
    auto ca = dynamics_coeffs(sa, m);
    auto cs = dynamics_coeffs(ss, m);
    CHECK((ca.A - cs.A).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((ca.b - cs.b).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("sqrt_rhs") {
    FlowCoeffs zero{MatrixXd::Zero(2, 2), VectorXd::Zero(2)};
    MatrixXd l = MatrixXd::Identity(2, 2);
    CHECK(sqrt_rhs(zero, l).norm() == 0.0);

    // 1-d: constant A = a gives L_t = L_0 exp(a t).
    const double a = -0.5;
    auto rhs = [&](double, const VectorXd& y) -> VectorXd { return a * y; };
    OdeConfig cfg;
    cfg.step = 1e-3;
    auto res = integrate(rhs, VectorXd::Ones(1), 0.0, 1.0, cfg);
    CHECK(std::abs(res.state(0) - std::exp(a)) < 1e-8);
}

TEST_CASE("integrate_gaussian_flow: converges to the Kalman posterior") {
    auto m = paper_linear_model();
    auto post = kalman_posterior(m);
    GaussianParams prior(m.prior_mean(), m.prior_cov());

    for (auto mode : {ExpectationMode::Analytic, ExpectationMode::Stein}) {
        auto s0 = make_gaussian_flow_state(prior, gh_rule_nd(4, 2), mode);
        OdeConfig cfg;
        cfg.step = 1e-3;  // the tight observation makes this flow fast near t = 0
        auto res = integrate_gaussian_flow(s0, m, 10.0, cfg);
        GaussianParams qf = to_moment(PrecisionParams(res.final.mean, res.final.prec));
        const double mean_scale = std::max(1.0, post.mean.cwiseAbs().maxCoeff());
        const double cov_scale = post.cov.cwiseAbs().maxCoeff();
        CHECK((qf.mean - post.mean).cwiseAbs().maxCoeff() < 1e-3 * mean_scale);
        CHECK((qf.cov - post.cov).cwiseAbs().maxCoeff() < 1e-3 * cov_scale);

        // The co-propagated square root tracks the precision flow.
        MatrixXd sigma_from_sqrt = res.final.sqrt * res.final.sqrt.transpose();
        CHECK((sigma_from_sqrt - qf.cov).norm() < 1e-6);
    }
}

TEST_CASE("integrate_gaussian_flow: T = 0 returns the state unchanged") {
    auto m = paper_linear_model();
    GaussianParams prior(m.prior_mean(), m.prior_cov());
    auto s0 = make_gaussian_flow_state(prior, gh_rule_nd(3, 2), ExpectationMode::Stein);
    OdeConfig cfg;
    auto res = integrate_gaussian_flow(s0, m, 0.0, cfg);
    CHECK((res.final.mean - s0.mean).norm() == 0.0);
    CHECK((res.final.prec - s0.prec).norm() == 0.0);
    CHECK((res.final.particles.positions - s0.particles.positions).norm() == 0.0);
}

TEST_CASE("integrate_gaussian_flow: particles match a time-scaled EDH integration") {
    auto m = paper_linear_model();
    GaussianParams prior(m.prior_mean(), m.prior_cov());
    auto rule = gh_rule_nd(4, 2);
    auto s0 = make_gaussian_flow_state(prior, rule, ExpectationMode::Analytic);

    OdeConfig cfg;
    cfg.step = 1e-3;
    auto res = integrate_gaussian_flow(s0, m, 10.0, cfg);

    // Shared particles under dx/dt = (1 - lambda(t)) (A_lambda x + b_lambda).
    const Eigen::Index n = 2, mm = s0.particles.size();
    VectorXd flat = Eigen::Map<const VectorXd>(s0.particles.positions.data(), n * mm);
    auto edh_rhs = [&](double t, const VectorXd& y) -> VectorXd {
        const double lambda = lambda_schedule(t);
        auto c = edh_coeffs(m, lambda);
        Eigen::Map<const MatrixXd> xs(y.data(), n, mm);
        MatrixXd d = (1.0 - lambda) * ((c.A * xs).colwise() + c.b);
        return Eigen::Map<const VectorXd>(d.data(), n * mm);
    };
    auto edh_final = integrate(edh_rhs, flat, 0.0, 10.0, cfg);
    Eigen::Map<const MatrixXd> edh_particles(edh_final.state.data(), n, mm);
    const double dev = (res.final.particles.positions - edh_particles).cwiseAbs().maxCoeff();
    CHECK(dev < 1e-5);
}

TEST_CASE("KL to the posterior is non-increasing along the flow") {
    auto m = paper_linear_model();
    auto post = kalman_posterior(m);
    GaussianParams prior(m.prior_mean(), m.prior_cov());
    auto s0 = make_gaussian_flow_state(prior, gh_rule_nd(4, 2), ExpectationMode::Stein);
    OdeConfig cfg;
    cfg.step = 1e-3;
    cfg.checkpoint_every = 0.5;  // 20 checkpoints over T = 10
    auto res = integrate_gaussian_flow(s0, m, 10.0, cfg);
    REQUIRE(res.checkpoints.size() == 20);
    double prev = gaussian_kl(prior, post);
    for (const auto& cp : res.checkpoints) {
        const double kl = gaussian_kl(to_moment(PrecisionParams(cp.mean, cp.prec)), post);
        CHECK(kl <= prev + 1e-9);
        prev = kl;
    }
}

TEST_CASE("Mahalanobis invariance along the flow") {
    auto m = paper_linear_model();
    GaussianParams prior(m.prior_mean(), m.prior_cov());
    auto s0 = make_gaussian_flow_state(prior, gh_rule_nd(4, 2), ExpectationMode::Analytic);
    VectorXd d0(s0.particles.size());
    for (Eigen::Index i = 0; i < s0.particles.size(); ++i)
        d0(i) = mahalanobis(s0.particles.positions.col(i), s0.mean, s0.prec);

    OdeConfig cfg;
    cfg.step = 5e-4;
    auto res = integrate_gaussian_flow(s0, m, 10.0, cfg);
    for (Eigen::Index i = 0; i < s0.particles.size(); ++i) {
        const double dt_val =
            mahalanobis(res.final.particles.positions.col(i), res.final.mean, res.final.prec);
        CHECK(std::abs(dt_val - d0(i)) < 1e-6);
    }

    // Precision stays symmetric and positive definite at the end.
    CHECK((res.final.prec - res.final.prec.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK_NOTHROW(cholesky_factor(res.final.prec));
}

TEST_CASE("recover_particles") {
    auto m = paper_linear_model();
    GaussianParams prior(m.prior_mean(), m.prior_cov());
    auto rule = gh_rule_nd(4, 2);
    auto s0 = make_gaussian_flow_state(prior, rule, ExpectationMode::Analytic);

    // T = 0: recovery is plain transport.
    auto direct = recover_particles(s0, rule);
    CHECK((direct.positions - s0.particles.positions).cwiseAbs().maxCoeff() < 1e-14);

    OdeConfig cfg;
    cfg.method = OdeConfig::Method::RK45;
    cfg.rel_tol = 1e-12;
    cfg.abs_tol = 1e-14;
    auto res = integrate_gaussian_flow(s0, m, 10.0, cfg);
    auto recovered = recover_particles(res.final, rule);
    const double max_dist =
        (recovered.positions - res.final.particles.positions).colwise().norm().maxCoeff();
    CHECK(max_dist < 1e-6);

    // Each recovered particle keeps its initial Mahalanobis distance.
    for (Eigen::Index i = 0; i < rule.size(); ++i) {
        const double before = rule.nodes.col(i).squaredNorm();
        const double after =
            mahalanobis(recovered.positions.col(i), res.final.mean, res.final.prec);
        CHECK(std::abs(after - before) < 1e-8);
    }
}

TEST_CASE("analytic-mode E[grad V] matches finite differences of the KL objective") {
    RangeModel m((VectorXd(2) << 1.0, 1.0).finished(),
                 (MatrixXd(2, 2) << 5.5, -1.5, -1.5, 5.5).finished(), 2.0,
                 std::sqrt(4.7 * 4.7 + 3.1 * 3.1));
    GaussianParams q((VectorXd(2) << 2.0, -1.0).finished(),
                     (MatrixXd(2, 2) << 1.2, 0.3, 0.3, 0.9).finished());
    auto rule = gh_rule_nd(10, 2);
    auto s = make_gaussian_flow_state(q, rule, ExpectationMode::Analytic);
    auto mom = expect_v_moments(s, m);

    // Expected V as a function of the mean, with the same rule and fixed L.
    MatrixXd l = cholesky_factor(q.cov);
    MatrixXd prec = q.cov.inverse();
    auto expected_v = [&](const VectorXd& mu) {
        auto ps = transport(rule, mu, l);
        double acc = 0.0;
        for (Eigen::Index i = 0; i < ps.size(); ++i) {
            const VectorXd x = ps.positions.col(i);
            acc += ps.weights(i) *
                   (gaussian_logpdf(x, mu, prec, spd_logdet(q.cov)) - m.log_joint(x));
        }
        return acc;
    };
    const double h = 1e-5;
    for (int d = 0; d < 2; ++d) {
        VectorXd mp = q.mean, mmn = q.mean;
        mp(d) += h;
        mmn(d) -= h;
        const double fd = (expected_v(mp) - expected_v(mmn)) / (2.0 * h);
        CHECK(mom.grad(d) == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("diverged flow reports the failing time") {
    // A target whose Hessian explodes: drive the precision negative by using
    // a model with strongly convex negative log density and a huge step.
    auto m = paper_linear_model();
    GaussianParams prior(m.prior_mean(), m.prior_cov());
    auto s0 = make_gaussian_flow_state(prior, gh_rule_nd(3, 2), ExpectationMode::Analytic);
    OdeConfig cfg;
    cfg.step = 50.0;  // absurd step: RK4 overshoots and breaks the invariants
    try {
        integrate_gaussian_flow(s0, m, 100.0, cfg);
        // If it survives (it should not), the invariants must still hold.
        WARN(false);
    } catch (const DivergedFlow& e) {
        CHECK(e.t_fail > 0.0);
    }
}
