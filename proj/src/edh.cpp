#include "fisherflow/edh.hpp"

#include <cmath>

namespace fisherflow {

double lambda_schedule(double t) {
    if (t < 0.0) throw Error("lambda_schedule: time must be nonnegative");
    return 1.0 - std::exp(-t);
}

TransientParams transient_params(const LinearGaussianModel& m, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw Error("transient_params: lambda outside [0, 1]");
    const MatrixXd& p = m.prior_cov();
    const MatrixXd& h = m.H();
    const MatrixXd& r = m.R();
    MatrixXd hp = h * p;
    MatrixXd s = symmetrize(r + lambda * hp * h.transpose());
    MatrixXd cov = symmetrize(p - lambda * hp.transpose() * spd_solve(s, hp));
    VectorXd info = spd_solve(p, m.prior_mean()) +
                    lambda * h.transpose() * spd_solve(r, m.z());
    TransientParams out;
    out.lambda = lambda;
    out.cov = cov;
    out.mean = cov.selfadjointView<Eigen::Lower>() * info;
    return out;
}

EdhCoeffs edh_coeffs(const LinearGaussianModel& m, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw Error("edh_coeffs: lambda outside [0, 1]");
    const MatrixXd& p = m.prior_cov();
    const MatrixXd& h = m.H();
    const MatrixXd& r = m.R();
    const Eigen::Index n = p.rows();
    MatrixXd hp = h * p;
    // (R + lambda H P H^T) is factored once and reused for A and b.
    Eigen::LLT<MatrixXd> s_llt(symmetrize(r + lambda * hp * h.transpose()));
    if (s_llt.info() != Eigen::Success)
        throw NotPositiveDefinite("edh_coeffs: innovation covariance not positive definite");
    EdhCoeffs out;
    out.A = -0.5 * hp.transpose() * s_llt.solve(h);
    MatrixXd phtr = hp.transpose() * spd_inverse(r);
    out.b = (MatrixXd::Identity(n, n) + 2.0 * lambda * out.A) *
            (out.A * m.prior_mean() + (MatrixXd::Identity(n, n) + lambda * out.A) * (phtr * m.z()));
    return out;
}

}  // namespace fisherflow
