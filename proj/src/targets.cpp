#include "fisherflow/targets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace fisherflow {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double quad_form(const VectorXd& d, const MatrixXd& prec) {
    return d.dot(prec.selfadjointView<Eigen::Lower>() * d);
}

/// Numerically stable log(sigmoid(a)) = -log(1 + exp(-a)).
double log_sigmoid(double a) {
    if (a >= 0.0) return -std::log1p(std::exp(-a));
    return a - std::log1p(std::exp(a));
}

}  // namespace

VectorXd TargetModel::log_joint_batch(const MatrixXd& xs) const {
    VectorXd out(xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i) out(i) = log_joint(xs.col(i));
    return out;
}

// ---------------------------------------------------------------------------
// LinearGaussianModel

LinearGaussianModel::LinearGaussianModel(VectorXd prior_mean, MatrixXd prior_cov,
                                         MatrixXd obs_matrix, MatrixXd obs_cov, VectorXd z)
    : prior_mean_(std::move(prior_mean)),
      prior_cov_(symmetrize(prior_cov)),
      obs_matrix_(std::move(obs_matrix)),
      obs_cov_(symmetrize(obs_cov)),
      z_(std::move(z)) {
    const Eigen::Index n = prior_mean_.size();
    const Eigen::Index m = z_.size();
    if (prior_cov_.rows() != n || obs_matrix_.rows() != m || obs_matrix_.cols() != n ||
        obs_cov_.rows() != m)
        throw DimensionMismatch("LinearGaussianModel: shapes disagree");
    prior_prec_ = spd_inverse(prior_cov_);
    obs_prec_ = spd_inverse(obs_cov_);
    prior_logdet_ = spd_logdet(prior_cov_);
    obs_logdet_ = spd_logdet(obs_cov_);
    hess_ = symmetrize(-prior_prec_ - obs_matrix_.transpose() * obs_prec_ * obs_matrix_);
}

double LinearGaussianModel::log_joint(const VectorXd& x) const {
    const double lp = -0.5 * static_cast<double>(dim()) * kLog2Pi - 0.5 * prior_logdet_ -
                      0.5 * quad_form(x - prior_mean_, prior_prec_);
    VectorXd r = z_ - obs_matrix_ * x;
    const double ll =
        -0.5 * static_cast<double>(z_.size()) * kLog2Pi - 0.5 * obs_logdet_ - 0.5 * quad_form(r, obs_prec_);
    return lp + ll;
}

VectorXd LinearGaussianModel::grad_log_joint(const VectorXd& x) const {
    return -prior_prec_ * (x - prior_mean_) +
           obs_matrix_.transpose() * (obs_prec_ * (z_ - obs_matrix_ * x));
}

MatrixXd LinearGaussianModel::hess_log_joint(const VectorXd&) const { return hess_; }

// ---------------------------------------------------------------------------
// MixturePriorLinearModel

MixturePriorLinearModel::MixturePriorLinearModel(MixtureParams prior, MatrixXd obs_matrix,
                                                 MatrixXd obs_cov, VectorXd z)
    : prior_(std::move(prior)),
      obs_matrix_(std::move(obs_matrix)),
      obs_cov_(symmetrize(obs_cov)),
      z_(std::move(z)) {
    const Eigen::Index m = z_.size();
    if (obs_matrix_.rows() != m || obs_matrix_.cols() != prior_.dim() || obs_cov_.rows() != m)
        throw DimensionMismatch("MixturePriorLinearModel: shapes disagree");
    obs_prec_ = spd_inverse(obs_cov_);
    obs_logdet_ = spd_logdet(obs_cov_);
}

double MixturePriorLinearModel::log_joint(const VectorXd& x) const {
    VectorXd r = z_ - obs_matrix_ * x;
    const double ll = -0.5 * static_cast<double>(z_.size()) * kLog2Pi - 0.5 * obs_logdet_ -
                      0.5 * quad_form(r, obs_prec_);
    return mixture_logpdf(x, prior_) + ll;
}

VectorXd MixturePriorLinearModel::grad_log_joint(const VectorXd& x) const {
    return mixture_grad_logpdf(x, prior_) +
           obs_matrix_.transpose() * (obs_prec_ * (z_ - obs_matrix_ * x));
}

MatrixXd MixturePriorLinearModel::hess_log_joint(const VectorXd& x) const {
    return symmetrize(mixture_hess_logpdf(x, prior_) -
                      obs_matrix_.transpose() * obs_prec_ * obs_matrix_);
}

// ---------------------------------------------------------------------------
// RangeModel

RangeModel::RangeModel(VectorXd prior_mean, MatrixXd prior_cov, double obs_var, double z)
    : prior_mean_(std::move(prior_mean)),
      prior_cov_(symmetrize(prior_cov)),
      obs_var_(obs_var),
      z_(z) {
    if (obs_var_ <= 0.0) throw Error("RangeModel: observation variance must be positive");
    prior_prec_ = spd_inverse(prior_cov_);
    prior_logdet_ = spd_logdet(prior_cov_);
}

double RangeModel::log_joint(const VectorXd& x) const {
    const double lp = -0.5 * static_cast<double>(dim()) * kLog2Pi - 0.5 * prior_logdet_ -
                      0.5 * quad_form(x - prior_mean_, prior_prec_);
    const double r = z_ - x.norm();
    const double ll = -0.5 * kLog2Pi - 0.5 * std::log(obs_var_) - 0.5 * r * r / obs_var_;
    return lp + ll;
}

VectorXd RangeModel::grad_log_joint(const VectorXd& x) const {
    const double nrm = x.norm();
    if (nrm < 1e-8) throw SingularPoint("RangeModel: gradient undefined at the origin");
    VectorXd u = x / nrm;
    return -prior_prec_ * (x - prior_mean_) + ((z_ - nrm) / obs_var_) * u;
}

MatrixXd RangeModel::hess_log_joint(const VectorXd& x) const {
    const double nrm = x.norm();
    if (nrm < 1e-8) throw SingularPoint("RangeModel: Hessian undefined at the origin");
    const Eigen::Index n = dim();
    VectorXd u = x / nrm;
    MatrixXd uu = u * u.transpose();
    MatrixXd h_lik =
        -(1.0 / obs_var_) * uu + ((z_ - nrm) / obs_var_) * ((MatrixXd::Identity(n, n) - uu) / nrm);
    return symmetrize(-prior_prec_ + h_lik);
}

// ---------------------------------------------------------------------------
// LogisticRegressionModel

LogisticRegressionModel::LogisticRegressionModel(MatrixXd features, VectorXd labels)
    : features_(std::move(features)), labels_(std::move(labels)) {
    if (features_.rows() != labels_.size())
        throw DimensionMismatch("LogisticRegressionModel: feature/label counts disagree");
    for (Eigen::Index i = 0; i < labels_.size(); ++i)
        if (labels_(i) != 0.0 && labels_(i) != 1.0)
            throw Error("LogisticRegressionModel: labels must be 0 or 1");
}

double LogisticRegressionModel::log_joint(const VectorXd& x) const {
    VectorXd a = features_ * x;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        // z log(s) + (1-z) log(1-s) = z*a + log(sigmoid(-a))
        acc += labels_(i) * a(i) + log_sigmoid(-a(i));
    }
    return acc;
}

VectorXd LogisticRegressionModel::log_joint_batch(const MatrixXd& xs) const {
    MatrixXd a = features_ * xs;  // N x M
    VectorXd out = VectorXd::Zero(xs.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            acc += labels_(i) * a(i, j) + log_sigmoid(-a(i, j));
        out(j) = acc;
    }
    return out;
}

VectorXd LogisticRegressionModel::grad_log_joint(const VectorXd& x) const {
    VectorXd a = features_ * x;
    VectorXd s = a.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    return features_.transpose() * (labels_ - s);
}

MatrixXd LogisticRegressionModel::hess_log_joint(const VectorXd& x) const {
    VectorXd a = features_ * x;
    VectorXd s = a.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    VectorXd w = s.array() * (1.0 - s.array());
    return symmetrize(-features_.transpose() * w.asDiagonal() * features_);
}

// ---------------------------------------------------------------------------
// FunnelModel

FunnelModel::FunnelModel(int dim) : dim_(dim) {
    if (dim_ < 2) throw Error("FunnelModel: dimension must be at least 2");
}

double FunnelModel::log_joint(const VectorXd& x) const {
    const double x1 = x(0);
    const double k = static_cast<double>(dim_ - 1);
    const double tail_sq = x.tail(dim_ - 1).squaredNorm();
    // Variance floor exp(x1) is handled in log space; exp(-x1) * tail_sq can
    // overflow only when the result is -inf anyway, which we reject as
    // non-finite downstream.
    const double head = -0.5 * kLog2Pi - 0.5 * std::log(9.0) - x1 * x1 / 18.0;
    const double tail = -0.5 * k * kLog2Pi - 0.5 * k * x1 - 0.5 * std::exp(-x1) * tail_sq;
    return head + tail;
}

VectorXd FunnelModel::grad_log_joint(const VectorXd& x) const {
    const double x1 = x(0);
    const double k = static_cast<double>(dim_ - 1);
    const double e = std::exp(-x1);
    VectorXd g(dim_);
    g(0) = -x1 / 9.0 - 0.5 * k + 0.5 * e * x.tail(dim_ - 1).squaredNorm();
    g.tail(dim_ - 1) = -e * x.tail(dim_ - 1);
    return g;
}

MatrixXd FunnelModel::hess_log_joint(const VectorXd& x) const {
    const double x1 = x(0);
    const double e = std::exp(-x1);
    MatrixXd h = MatrixXd::Zero(dim_, dim_);
    h(0, 0) = -1.0 / 9.0 - 0.5 * e * x.tail(dim_ - 1).squaredNorm();
    for (int i = 1; i < dim_; ++i) {
        h(0, i) = e * x(i);
        h(i, 0) = e * x(i);
        h(i, i) = -e;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Analytic posteriors

GaussianParams kalman_posterior(const LinearGaussianModel& m) {
    const MatrixXd& p = m.prior_cov();
    const MatrixXd& h = m.H();
    const MatrixXd& r = m.R();
    MatrixXd s = symmetrize(r + h * p * h.transpose());
    MatrixXd gain = (spd_solve(s, MatrixXd(h * p))).transpose();  // P H^T S^{-1}
    VectorXd mu = m.prior_mean() + gain * (m.z() - h * m.prior_mean());
    MatrixXd cov = symmetrize(p - gain * h * p);

    // Information form must agree with the gain form.
    MatrixXd prec = spd_inverse(p) +
                    h.transpose() * spd_solve(r, MatrixXd(h));
    MatrixXd cov_info = spd_inverse(prec);
    if ((cov - cov_info).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
        throw Error("kalman_posterior: covariance forms disagree");
    return {mu, cov};
}

MixtureParams gmm_posterior_analytic(const MixturePriorLinearModel& m) {
    const int k = m.prior().num_components();
    VectorXd prior_w = m.prior().weights();
    std::vector<GaussianParams> comps;
    comps.reserve(k);
    VectorXd log_ev(k);
    for (int i = 0; i < k; ++i) {
        const auto& c = m.prior().components[i];
        LinearGaussianModel comp_model(c.mean, c.cov, m.H(), m.R(), m.z());
        comps.push_back(kalman_posterior(comp_model));
        // Component evidence N(z; H x_hat, R + H P H^T).
        GaussianParams pred(m.H() * c.mean, symmetrize(m.R() + m.H() * c.cov * m.H().transpose()));
        log_ev(i) = std::log(prior_w(i)) + gaussian_logpdf(m.z(), pred);
    }
    VectorXd eta = log_ev.array() - log_ev(k - 1);
    eta(k - 1) = 0.0;  // exact pin
    return {std::move(comps), eta};
}

LogisticRegressionModel generate_logreg_dataset(int n, int N, std::uint64_t seed,
                                                VectorXd* truth_out) {
    if (N < 1) throw Error("generate_logreg_dataset: need at least one datum");
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    VectorXd truth(n);
    for (int d = 0; d < n; ++d) truth(d) = normal(gen);
    MatrixXd features(N, n);
    VectorXd labels(N);
    for (int i = 0; i < N; ++i) {
        for (int d = 0; d < n; ++d) features(i, d) = normal(gen);
        const double p = 1.0 / (1.0 + std::exp(-features.row(i).dot(truth)));
        labels(i) = unif(gen) < p ? 1.0 : 0.0;
    }
    if (truth_out) *truth_out = truth;
    return {std::move(features), std::move(labels)};
}

void write_logreg_csv(std::ostream& out, const LogisticRegressionModel& m) {
    const Eigen::Index n = m.dim();
    for (Eigen::Index d = 0; d < n; ++d) out << "y_" << (d + 1) << ",";
    out << "z\n";
    char buf[64];
    for (Eigen::Index i = 0; i < m.num_data(); ++i) {
        for (Eigen::Index d = 0; d < n; ++d) {
            std::snprintf(buf, sizeof(buf), "%.17g", m.features()(i, d));
            out << buf << ",";
        }
        out << static_cast<int>(m.labels()(i)) << "\n";
    }
}

LogisticRegressionModel read_logreg_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("read_logreg_csv: empty input");
    Eigen::Index n = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',')) ;
    std::vector<VectorXd> rows;
    std::vector<double> labels;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        VectorXd row(n);
        std::string cell;
        for (Eigen::Index d = 0; d < n; ++d) {
            if (!std::getline(ss, cell, ',')) throw Error("read_logreg_csv: short row");
            row(d) = std::stod(cell);
        }
        if (!std::getline(ss, cell)) throw Error("read_logreg_csv: missing label");
        labels.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    MatrixXd features(static_cast<Eigen::Index>(rows.size()), n);
    VectorXd lab(static_cast<Eigen::Index>(labels.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        features.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
        lab(static_cast<Eigen::Index>(i)) = labels[i];
    }
    return {std::move(features), std::move(lab)};
}

}  // namespace fisherflow
