#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fisherflow/linalg.hpp"

namespace fisherflow {

/// How a rule's nodes were produced. Gauss-Hermite rules are exact for
/// polynomials up to degree 2p-1 under the standard normal; Monte-Carlo rules
/// are seeded draws with uniform weights.
struct Provenance {
    enum class Kind { GaussHermite, MonteCarlo };
    Kind kind = Kind::GaussHermite;
    int gh_degree = 0;
    std::uint64_t seed = 0;
    int mc_count = 0;
};

/// Quadrature rule against the standard normal in n dimensions. Nodes are the
/// columns of `nodes` (n x M); weights are positive and sum to one.
struct QuadratureRule {
    MatrixXd nodes;
    VectorXd weights;
    Provenance provenance;

    Eigen::Index dim() const { return nodes.rows(); }
    Eigen::Index size() const { return nodes.cols(); }
};

/// Weighted particle ensemble; positions are columns (n x M).
struct ParticleSet {
    MatrixXd positions;
    VectorXd weights;

    Eigen::Index dim() const { return positions.rows(); }
    Eigen::Index size() const { return positions.cols(); }
};

/// One-dimensional Gauss-Hermite rule in the probabilists' convention:
/// nodes are the p roots of He_p, weights w_i = p! / (p He_{p-1}(xi_i))^2.
/// Roots come from the symmetric tridiagonal Jacobi eigenproblem with one
/// Newton polish step per root.
QuadratureRule gh_rule_1d(int p);

/// Tensor-product Gauss-Hermite rule with p^n nodes. Throws NodeBudgetExceeded
/// if p^n would exceed `node_budget`; callers should switch to mc_rule.
QuadratureRule gh_rule_nd(int p, int n, std::int64_t node_budget = 1'000'000);

/// Seeded standard-normal Monte-Carlo rule with uniform weights 1/count.
/// Identical (n, count, seed) produce bitwise-identical rules.
QuadratureRule mc_rule(int n, int count, std::uint64_t seed);

/// Affine transport x_i = L xi_i + mean; weights unchanged.
ParticleSet transport(const QuadratureRule& rule, const VectorXd& mean, const MatrixXd& L);

/// Weighted sum over particle evaluations, reduced in index order.
/// Throws NonFiniteValue if any evaluation is not finite.
double expect(const ParticleSet& ps, const std::function<double(const VectorXd&)>& f);
VectorXd expect_vec(const ParticleSet& ps, const std::function<VectorXd(const VectorXd&)>& f);
MatrixXd expect_mat(const ParticleSet& ps, const std::function<MatrixXd(const VectorXd&)>& f);

}  // namespace fisherflow
