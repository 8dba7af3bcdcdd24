#include "fisherflow/gaussian.hpp"

#include <cmath>
#include <numbers>

namespace fisherflow {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)

void check_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
    if (a != b) throw DimensionMismatch(std::string(what) + ": dimensions disagree");
}

}  // namespace

GaussianParams::GaussianParams(VectorXd mu, MatrixXd sigma) : mean(std::move(mu)) {
    if (!is_symmetric(sigma)) throw NotPositiveDefinite("GaussianParams: covariance not symmetric");
    cov = symmetrize(sigma);
    check_same_dim(mean.size(), cov.rows(), "GaussianParams");
    cholesky_factor(cov);  // positive definiteness gate
}

PrecisionParams::PrecisionParams(VectorXd mu, MatrixXd prec_in) : mean(std::move(mu)) {
    prec = symmetrize(prec_in);
    check_same_dim(mean.size(), prec.rows(), "PrecisionParams");
    cholesky_factor(prec);
}

SqrtParams::SqrtParams(VectorXd mu, MatrixXd l) : mean(std::move(mu)), L(std::move(l)) {
    check_same_dim(mean.size(), L.rows(), "SqrtParams");
    if (!L.isLowerTriangular()) throw Error("SqrtParams: L must be lower triangular");
    for (Eigen::Index i = 0; i < L.rows(); ++i)
        if (!(L(i, i) > 0.0)) throw NotPositiveDefinite("SqrtParams: non-positive diagonal");
}

NaturalGaussianParams::NaturalGaussianParams(VectorXd g, MatrixXd G) : gamma(std::move(g)) {
    Gamma = symmetrize(G);
    check_same_dim(gamma.size(), Gamma.rows(), "NaturalGaussianParams");
    cholesky_factor(-2.0 * Gamma);  // Gamma must be negative definite
}

GaussianParams to_moment(const PrecisionParams& p) {
    MatrixXd cov = spd_inverse(p.prec);
    return {p.mean, symmetrize(cov)};
}

GaussianParams to_moment(const SqrtParams& s) { return {s.mean, symmetrize(s.L * s.L.transpose())}; }

GaussianParams to_moment(const NaturalGaussianParams& n) {
    MatrixXd prec = -2.0 * n.Gamma;
    MatrixXd cov = spd_inverse(prec);
    return {cov * n.gamma, symmetrize(cov)};
}

PrecisionParams to_precision(const GaussianParams& g) {
    MatrixXd prec = spd_inverse(g.cov);
    return {g.mean, symmetrize(prec)};
}

SqrtParams to_sqrt(const GaussianParams& g) { return {g.mean, cholesky_factor(g.cov)}; }

NaturalGaussianParams to_natural(const GaussianParams& g) {
    PrecisionParams p = to_precision(g);
    return {p.prec * p.mean, -0.5 * p.prec};
}

MixtureParams::MixtureParams(std::vector<GaussianParams> comps, VectorXd eta)
    : components(std::move(comps)), log_odds(std::move(eta)) {
    if (components.empty()) throw Error("MixtureParams: no components");
    if (log_odds.size() != static_cast<Eigen::Index>(components.size()))
        throw DimensionMismatch("MixtureParams: log_odds length != K");
    if (log_odds(log_odds.size() - 1) != 0.0)
        throw Error("MixtureParams: last log-odds entry must be pinned to zero");
    const Eigen::Index n = components.front().dim();
    for (const auto& c : components) check_same_dim(c.dim(), n, "MixtureParams");
}

MixtureParams::MixtureParams(std::vector<GaussianParams> comps) {
    const auto k = static_cast<Eigen::Index>(comps.size());
    *this = MixtureParams(std::move(comps), VectorXd::Zero(k));
}

VectorXd MixtureParams::weights() const { return weights_from_log_odds(log_odds); }

double gaussian_logpdf(const VectorXd& x, const VectorXd& mean, const MatrixXd& prec,
                       double logdet_cov) {
    const double n = static_cast<double>(x.size());
    return -0.5 * n * kLog2Pi - 0.5 * logdet_cov - 0.5 * mahalanobis(x, mean, prec);
}

double gaussian_logpdf(const VectorXd& x, const GaussianParams& g) {
    check_same_dim(x.size(), g.dim(), "gaussian_logpdf");
    MatrixXd l = cholesky_factor(g.cov);
    VectorXd d = x - g.mean;
    VectorXd w = l.triangularView<Eigen::Lower>().solve(d);
    const double logdet = 2.0 * l.diagonal().array().log().sum();
    return -0.5 * static_cast<double>(x.size()) * kLog2Pi - 0.5 * logdet - 0.5 * w.squaredNorm();
}

double gaussian_kl(const GaussianParams& q, const GaussianParams& p) {
    check_same_dim(q.dim(), p.dim(), "gaussian_kl");
    const double n = static_cast<double>(q.dim());
    MatrixXd lp = cholesky_factor(p.cov);
    MatrixXd lq = cholesky_factor(q.cov);
    // tr(Sigma_p^{-1} Sigma_q) via triangular solves against the factor of p.
    MatrixXd w = lp.triangularView<Eigen::Lower>().solve(MatrixXd(lq));
    const double trace_term = w.squaredNorm();
    VectorXd d = lp.triangularView<Eigen::Lower>().solve(VectorXd(p.mean - q.mean));
    const double maha = d.squaredNorm();
    const double logdet_ratio =
        2.0 * (lp.diagonal().array().log().sum() - lq.diagonal().array().log().sum());
    return 0.5 * (trace_term + maha - n + logdet_ratio);
}

double mahalanobis(const VectorXd& x, const VectorXd& mean, const MatrixXd& prec) {
    check_same_dim(x.size(), mean.size(), "mahalanobis");
    check_same_dim(x.size(), prec.rows(), "mahalanobis");
    VectorXd d = x - mean;
    return d.dot(prec.selfadjointView<Eigen::Lower>() * d);
}

VectorXd weights_from_log_odds(const VectorXd& log_odds) {
    if (log_odds.size() == 0) throw Error("weights_from_log_odds: empty vector");
    const double m = log_odds.maxCoeff();
    VectorXd w = (log_odds.array() - m).exp();
    return w / w.sum();
}

double mixture_logpdf(const VectorXd& x, const MixtureParams& m) {
    const int k = m.num_components();
    VectorXd w = m.weights();
    VectorXd terms(k);
    for (int i = 0; i < k; ++i) terms(i) = std::log(w(i)) + gaussian_logpdf(x, m.components[i]);
    const double mx = terms.maxCoeff();
    return mx + std::log((terms.array() - mx).exp().sum());
}

VectorXd mixture_grad_logpdf(const VectorXd& x, const MixtureParams& m) {
    const int k = m.num_components();
    VectorXd w = m.weights();
    VectorXd log_terms(k);
    std::vector<VectorXd> scores(k);
    for (int i = 0; i < k; ++i) {
        const auto& c = m.components[i];
        MatrixXd l = cholesky_factor(c.cov);
        VectorXd d = x - c.mean;
        VectorXd v = l.triangularView<Eigen::Lower>().solve(d);
        log_terms(i) = std::log(w(i)) - 0.5 * static_cast<double>(c.dim()) * kLog2Pi -
                       l.diagonal().array().log().sum() - 0.5 * v.squaredNorm();
        scores[i] = -l.transpose().triangularView<Eigen::Upper>().solve(v);  // -P_i (x - mu_i)
    }
    const double mx = log_terms.maxCoeff();
    VectorXd resp = (log_terms.array() - mx).exp();
    resp /= resp.sum();
    VectorXd g = VectorXd::Zero(x.size());
    for (int i = 0; i < k; ++i) g += resp(i) * scores[i];
    return g;
}

MatrixXd mixture_hess_logpdf(const VectorXd& x, const MixtureParams& m) {
    const int k = m.num_components();
    const Eigen::Index n = x.size();
    VectorXd w = m.weights();
    VectorXd log_terms(k);
    std::vector<VectorXd> scores(k);
    std::vector<MatrixXd> precs(k);
    for (int i = 0; i < k; ++i) {
        const auto& c = m.components[i];
        MatrixXd l = cholesky_factor(c.cov);
        VectorXd d = x - c.mean;
        VectorXd v = l.triangularView<Eigen::Lower>().solve(d);
        log_terms(i) = std::log(w(i)) - 0.5 * static_cast<double>(n) * kLog2Pi -
                       l.diagonal().array().log().sum() - 0.5 * v.squaredNorm();
        scores[i] = -l.transpose().triangularView<Eigen::Upper>().solve(v);
        MatrixXd linv = l.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(n, n));
        precs[i] = linv.transpose() * linv;
    }
    const double mx = log_terms.maxCoeff();
    VectorXd resp = (log_terms.array() - mx).exp();
    resp /= resp.sum();
    VectorXd g = VectorXd::Zero(n);
    for (int i = 0; i < k; ++i) g += resp(i) * scores[i];
    MatrixXd h = MatrixXd::Zero(n, n);
    for (int i = 0; i < k; ++i)
        h += resp(i) * (scores[i] * scores[i].transpose() - precs[i]);
    h -= g * g.transpose();
    return symmetrize(h);
}

}  // namespace fisherflow
