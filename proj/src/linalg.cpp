#include "fisherflow/linalg.hpp"

namespace fisherflow {

MatrixXd cholesky_factor(const MatrixXd& cov) {
    if (cov.rows() != cov.cols()) throw DimensionMismatch("cholesky_factor: matrix not square");
    if (!is_symmetric(cov, 1e-12))
        throw NotPositiveDefinite("cholesky_factor: matrix not symmetric within tolerance");
    Eigen::LLT<MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw NotPositiveDefinite("cholesky_factor: factorization failed");
    MatrixXd l = llt.matrixL();
    // LLT can report success on the edge of singularity; insist on positive pivots.
    for (Eigen::Index i = 0; i < l.rows(); ++i)
        if (!(l(i, i) > 0.0)) throw NotPositiveDefinite("cholesky_factor: non-positive pivot");
    return l;
}

VectorXd spd_solve(const MatrixXd& s, const VectorXd& b) {
    Eigen::LLT<MatrixXd> llt(symmetrize(s));
    if (llt.info() != Eigen::Success) throw NotPositiveDefinite("spd_solve: factorization failed");
    return llt.solve(b);
}

MatrixXd spd_solve(const MatrixXd& s, const MatrixXd& b) {
    Eigen::LLT<MatrixXd> llt(symmetrize(s));
    if (llt.info() != Eigen::Success) throw NotPositiveDefinite("spd_solve: factorization failed");
    return llt.solve(b);
}

MatrixXd spd_inverse(const MatrixXd& s) {
    MatrixXd eye = MatrixXd::Identity(s.rows(), s.cols());
    return spd_solve(s, eye);
}

double spd_logdet(const MatrixXd& s) {
    MatrixXd l = cholesky_factor(symmetrize(s));
    return 2.0 * l.diagonal().array().log().sum();
}

}  // namespace fisherflow
