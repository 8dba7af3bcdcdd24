#include "fisherflow/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>

namespace fisherflow {

namespace {

/// He_k(x) for the probabilists' Hermite polynomials via the three-term
/// recurrence He_{k+1} = x He_k - k He_{k-1}.
double hermite_prob(int k, double x) {
    double hm = 0.0, h = 1.0;  // He_{-1}, He_0
    for (int i = 0; i < k; ++i) {
        double hp = x * h - static_cast<double>(i) * hm;
        hm = h;
        h = hp;
    }
    return h;
}

double factorial(int p) {
    double f = 1.0;
    for (int i = 2; i <= p; ++i) f *= static_cast<double>(i);
    return f;
}

}  // namespace

QuadratureRule gh_rule_1d(int p) {
    if (p < 1 || p > 64) throw DegreeOutOfRange("gh_rule_1d: degree must be in [1, 64]");

    VectorXd roots(p);
    if (p == 1) {
        roots(0) = 0.0;
    } else {
        // Jacobi matrix of the probabilists' recurrence: zero diagonal,
        // off-diagonal sqrt(k).
        MatrixXd jacobi = MatrixXd::Zero(p, p);
        for (int k = 1; k < p; ++k) {
            const double b = std::sqrt(static_cast<double>(k));
            jacobi(k, k - 1) = b;
            jacobi(k - 1, k) = b;
        }
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(jacobi, Eigen::EigenvaluesOnly);
        roots = es.eigenvalues();
        // One Newton step per root: He_p'(x) = p He_{p-1}(x).
        for (int i = 0; i < p; ++i) {
            const double x = roots(i);
            const double num = hermite_prob(p, x);
            const double den = static_cast<double>(p) * hermite_prob(p - 1, x);
            roots(i) = x - num / den;
        }
        std::sort(roots.data(), roots.data() + p);
        // Enforce exact symmetry about zero; eigenvalues of the symmetric
        // Jacobi matrix are symmetric in exact arithmetic.
        for (int i = 0; i < p / 2; ++i) {
            const double s = 0.5 * (roots(p - 1 - i) - roots(i));
            roots(i) = -s;
            roots(p - 1 - i) = s;
        }
        if (p % 2 == 1) roots(p / 2) = 0.0;
    }

    VectorXd weights(p);
    const double pfac = factorial(p);
    for (int i = 0; i < p; ++i) {
        const double h = static_cast<double>(p) * hermite_prob(p - 1, roots(i));
        weights(i) = pfac / (h * h);
    }

    QuadratureRule rule;
    rule.nodes = roots.transpose();
    rule.weights = weights;
    rule.provenance = {Provenance::Kind::GaussHermite, p, 0, 0};
    return rule;
}

QuadratureRule gh_rule_nd(int p, int n, std::int64_t node_budget) {
    if (n < 1) throw DimensionMismatch("gh_rule_nd: dimension must be positive");
    std::int64_t m = 1;
    for (int i = 0; i < n; ++i) {
        if (m > node_budget / p) throw NodeBudgetExceeded("gh_rule_nd: p^n exceeds node budget");
        m *= p;
    }

    QuadratureRule base = gh_rule_1d(p);
    QuadratureRule rule;
    rule.nodes.resize(n, m);
    rule.weights.resize(m);
    // Odometer enumeration of index tuples, last coordinate fastest.
    std::vector<int> idx(n, 0);
    for (std::int64_t j = 0; j < m; ++j) {
        double w = 1.0;
        for (int d = 0; d < n; ++d) {
            rule.nodes(d, j) = base.nodes(0, idx[d]);
            w *= base.weights(idx[d]);
        }
        rule.weights(j) = w;
        for (int d = n - 1; d >= 0; --d) {
            if (++idx[d] < p) break;
            idx[d] = 0;
        }
    }
    rule.provenance = {Provenance::Kind::GaussHermite, p, 0, 0};
    return rule;
}

QuadratureRule mc_rule(int n, int count, std::uint64_t seed) {
    if (count < 2) throw Error("mc_rule: count must be at least 2");
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    QuadratureRule rule;
    rule.nodes.resize(n, count);
    for (int j = 0; j < count; ++j)
        for (int d = 0; d < n; ++d) rule.nodes(d, j) = normal(gen);
    rule.weights = VectorXd::Constant(count, 1.0 / static_cast<double>(count));
    rule.provenance = {Provenance::Kind::MonteCarlo, 0, seed, count};
    return rule;
}

ParticleSet transport(const QuadratureRule& rule, const VectorXd& mean, const MatrixXd& L) {
    if (mean.size() != rule.dim() || L.rows() != rule.dim() || L.cols() != rule.dim())
        throw DimensionMismatch("transport: rule/mean/L dimensions disagree");
    ParticleSet ps;
    ps.positions = (L * rule.nodes).colwise() + mean;
    ps.weights = rule.weights;
    return ps;
}

double expect(const ParticleSet& ps, const std::function<double(const VectorXd&)>& f) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < ps.size(); ++i) {
        const double v = f(ps.positions.col(i));
        if (!std::isfinite(v)) throw NonFiniteValue("expect: non-finite evaluation");
        acc += ps.weights(i) * v;
    }
    return acc;
}

VectorXd expect_vec(const ParticleSet& ps, const std::function<VectorXd(const VectorXd&)>& f) {
    VectorXd acc;
    for (Eigen::Index i = 0; i < ps.size(); ++i) {
        VectorXd v = f(ps.positions.col(i));
        if (!v.allFinite()) throw NonFiniteValue("expect_vec: non-finite evaluation");
        if (i == 0)
            acc = ps.weights(i) * v;
        else
            acc += ps.weights(i) * v;
    }
    return acc;
}

MatrixXd expect_mat(const ParticleSet& ps, const std::function<MatrixXd(const VectorXd&)>& f) {
    MatrixXd acc;
    for (Eigen::Index i = 0; i < ps.size(); ++i) {
        MatrixXd v = f(ps.positions.col(i));
        if (!v.allFinite()) throw NonFiniteValue("expect_mat: non-finite evaluation");
        if (i == 0)
            acc = ps.weights(i) * v;
        else
            acc += ps.weights(i) * v;
    }
    return acc;
}

}  // namespace fisherflow
