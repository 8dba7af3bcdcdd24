#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fisherflow/gaussian.hpp"
#include "test_util.hpp"

using namespace fisherflow;
using ff_test::random_spd;
using ff_test::random_vector;

namespace {
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
}

TEST_CASE("cholesky_factor basic cases") {
    MatrixXd eye = MatrixXd::Identity(2, 2);
    CHECK((cholesky_factor(eye) - eye).norm() == doctest::Approx(0.0));

    MatrixXd d(2, 2);
    d << 4.0, 0.0, 0.0, 9.0;
    MatrixXd l = cholesky_factor(d);
    CHECK(l(0, 0) == doctest::Approx(2.0));
    CHECK(l(1, 1) == doctest::Approx(3.0));
    CHECK(l(0, 1) == 0.0);

    // Re-multiplication oracle on a dense covariance.
    MatrixXd p(2, 2);
    p << 1.5, 0.5, 0.5, 5.5;
    MatrixXd lp = cholesky_factor(p);
    CHECK((lp * lp.transpose() - p).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(lp(0, 1) == 0.0);
    CHECK(lp(0, 0) > 0.0);
    CHECK(lp(1, 1) > 0.0);
}

TEST_CASE("cholesky_factor rejects indefinite and asymmetric input") {
    MatrixXd neg(2, 2);
    neg << 1.0, 0.0, 0.0, -1.0;
    CHECK_THROWS_AS(cholesky_factor(neg), NotPositiveDefinite);

    MatrixXd asym(2, 2);
    asym << 1.0, 0.5, -0.5, 1.0;
    CHECK_THROWS_AS(cholesky_factor(asym), NotPositiveDefinite);
}

TEST_CASE("gaussian_logpdf closed-form cases") {
    GaussianParams g(VectorXd::Zero(2), MatrixXd::Identity(2, 2));
    CHECK(gaussian_logpdf(VectorXd::Zero(2), g) == doctest::Approx(-kLog2Pi).epsilon(1e-14));

    VectorXd x(2);
    x << 1.0, 0.0;
    CHECK(gaussian_logpdf(x, g) == doctest::Approx(-kLog2Pi - 0.5).epsilon(1e-14));
}

TEST_CASE("gaussian_logpdf generic 3-d matches explicit determinant/solve oracle") {
    std::mt19937_64 gen(42);
    for (int trial = 0; trial < 20; ++trial) {
        MatrixXd cov = random_spd(gen, 3);
        VectorXd mu = random_vector(gen, 3);
        VectorXd x = random_vector(gen, 3, 2.0);
        GaussianParams g(mu, cov);
        const double expected = -1.5 * kLog2Pi - 0.5 * std::log(cov.determinant()) -
                                0.5 * (x - mu).dot(cov.fullPivLu().solve(x - mu));
        CHECK(gaussian_logpdf(x, g) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("gaussian_kl closed-form values") {
    GaussianParams q(VectorXd::Zero(1), MatrixXd::Identity(1, 1));
    CHECK(gaussian_kl(q, q) == 0.0);

    GaussianParams p(VectorXd::Ones(1), MatrixXd::Identity(1, 1));
    CHECK(gaussian_kl(q, p) == doctest::Approx(0.5).epsilon(1e-14));

    GaussianParams q2(VectorXd::Zero(1), 2.0 * MatrixXd::Identity(1, 1));
    CHECK(gaussian_kl(q2, q) == doctest::Approx(0.5 * (2.0 - 1.0 - std::log(2.0))).epsilon(1e-14));
}

TEST_CASE("gaussian_kl nonnegative, zero only at equality") {
    std::mt19937_64 gen(7);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + static_cast<int>(gen() % 5);
        GaussianParams q(random_vector(gen, n), random_spd(gen, n));
        GaussianParams p(random_vector(gen, n), random_spd(gen, n));
        const double kl = gaussian_kl(q, p);
        CHECK(kl >= -1e-12);
        const double gap = (q.mean - p.mean).norm() + (q.cov - p.cov).norm();
        if (gap > 1e-3) CHECK(kl > 0.0);
    }
}

TEST_CASE("mahalanobis") {
    VectorXd mu = VectorXd::Zero(2);
    MatrixXd prec = MatrixXd::Identity(2, 2);
    CHECK(mahalanobis(mu, mu, prec) == 0.0);
    VectorXd x(2);
    x << 1.0, 0.0;
    CHECK(mahalanobis(x, mu, prec) == doctest::Approx(1.0));

    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 20; ++trial) {
        MatrixXd m = random_spd(gen, 4);
        VectorXd a = random_vector(gen, 4);
        VectorXd b = random_vector(gen, 4);
        const double expected = ((a - b).transpose() * m * (a - b))(0);
        CHECK(mahalanobis(a, b, m) == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK_THROWS_AS(mahalanobis(VectorXd::Zero(3), mu, prec), DimensionMismatch);
}

TEST_CASE("weights_from_log_odds") {
    VectorXd eta = VectorXd::Zero(2);
    VectorXd w = weights_from_log_odds(eta);
    CHECK(w(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(w(1) == doctest::Approx(0.5).epsilon(1e-15));

    eta << std::log(2.0), 0.0;
    w = weights_from_log_odds(eta);
    CHECK(w(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(w(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

    eta << 20.0, 0.0;
    w = weights_from_log_odds(eta);
    CHECK(std::abs(w(0) - 1.0) < 1e-8);

    // Large entries must not overflow; within the working clamp range the
    // smallest weight stays strictly positive.
    VectorXd big(3);
    big << 900.0, 850.0, 0.0;
    w = weights_from_log_odds(big);
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.allFinite());
    VectorXd clamped(3);
    clamped << 27.6, -27.6, 0.0;
    w = weights_from_log_odds(clamped);
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.minCoeff() > 0.0);
}

TEST_CASE("weights_from_log_odds is permutation-equivariant in the free entries") {
    VectorXd eta(4);
    eta << 0.3, -1.2, 0.9, 0.0;
    VectorXd w = weights_from_log_odds(eta);
    VectorXd eta_perm(4);
    eta_perm << 0.9, 0.3, -1.2, 0.0;
    VectorXd w_perm = weights_from_log_odds(eta_perm);
    CHECK(w_perm(0) == doctest::Approx(w(2)).epsilon(1e-15));
    CHECK(w_perm(1) == doctest::Approx(w(0)).epsilon(1e-15));
    CHECK(w_perm(2) == doctest::Approx(w(1)).epsilon(1e-15));
    CHECK(w_perm(3) == doctest::Approx(w(3)).epsilon(1e-15));
}

TEST_CASE("mixture_logpdf") {
    GaussianParams g(VectorXd::Zero(2), MatrixXd::Identity(2, 2));
    MixtureParams single({g});
    std::mt19937_64 gen(11);
    VectorXd x = random_vector(gen, 2);
    CHECK(mixture_logpdf(x, single) == doctest::Approx(gaussian_logpdf(x, g)).epsilon(1e-15));

    // Two identical components collapse to the component density.
    MixtureParams twin({g, g}, (VectorXd(2) << 0.7, 0.0).finished());
    CHECK(mixture_logpdf(x, twin) == doctest::Approx(gaussian_logpdf(x, g)).epsilon(1e-13));

    // Far-apart components: at one mode the other is negligible.
    GaussianParams a((VectorXd(1) << -10.0).finished(), MatrixXd::Identity(1, 1));
    GaussianParams b((VectorXd(1) << 10.0).finished(), MatrixXd::Identity(1, 1));
    MixtureParams far({a, b});
    VectorXd at_b(1);
    at_b << 10.0;
    const double expected = std::log(0.5) + gaussian_logpdf(at_b, b);
    CHECK(mixture_logpdf(at_b, far) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("mixture grad/hess match finite differences") {
    std::mt19937_64 gen(5);
    std::vector<GaussianParams> comps;
    for (int k = 0; k < 3; ++k) comps.emplace_back(random_vector(gen, 2, 2.0), random_spd(gen, 2));
    MixtureParams m(std::move(comps), (VectorXd(3) << 0.4, -0.3, 0.0).finished());
    const double h = 1e-5;
    for (int trial = 0; trial < 10; ++trial) {
        VectorXd x = random_vector(gen, 2, 2.0);
        VectorXd g = mixture_grad_logpdf(x, m);
        MatrixXd hess = mixture_hess_logpdf(x, m);
        for (int d = 0; d < 2; ++d) {
            VectorXd xp = x, xm = x;
            xp(d) += h;
            xm(d) -= h;
            const double fd = (mixture_logpdf(xp, m) - mixture_logpdf(xm, m)) / (2.0 * h);
            CHECK(g(d) == doctest::Approx(fd).epsilon(1e-6));
            VectorXd gp = mixture_grad_logpdf(xp, m);
            VectorXd gm = mixture_grad_logpdf(xm, m);
            VectorXd fd_row = (gp - gm) / (2.0 * h);
            for (int e = 0; e < 2; ++e)
                CHECK(hess(d, e) == doctest::Approx(fd_row(e)).epsilon(1e-5));
        }
    }
}

TEST_CASE("parameterization round-trips preserve mean and covariance") {
    std::mt19937_64 gen(123);
    for (int n : {1, 2, 5, 20, 100}) {
        GaussianParams g(random_vector(gen, n), random_spd(gen, n));
        GaussianParams via_prec = to_moment(to_precision(g));
        GaussianParams via_sqrt = to_moment(to_sqrt(g));
        GaussianParams via_nat = to_moment(to_natural(g));
        const double scale = std::max(1.0, g.cov.cwiseAbs().maxCoeff());
        for (const auto* r : {&via_prec, &via_sqrt, &via_nat}) {
            CHECK((r->mean - g.mean).cwiseAbs().maxCoeff() < 1e-10 * scale);
            CHECK((r->cov - g.cov).cwiseAbs().maxCoeff() < 1e-10 * scale);
        }
    }
}

TEST_CASE("MixtureParams validates the pinned entry") {
    GaussianParams g(VectorXd::Zero(1), MatrixXd::Identity(1, 1));
    CHECK_THROWS(MixtureParams({g, g}, (VectorXd(2) << 0.0, 1.0).finished()));
    MixtureParams ok({g, g}, (VectorXd(2) << 1.0, 0.0).finished());
    VectorXd w = ok.weights();
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(w.minCoeff() > 0.0);
}
