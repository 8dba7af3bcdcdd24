#include "fisherflow/transforms.hpp"

#include <cmath>
#include <numbers>

#include <json.hpp>

namespace fisherflow {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double inv_softplus(double x) {
    if (x <= 0.0) throw Error("inv_softplus: argument must be positive");
    return x + std::log1p(-std::exp(-x));
}

// Shift chosen so the constraint map is zero-preserving: softplus(0 + shift) = 1,
// hence m(0) = 0 and raw zero parameters give the identity transform.
const double kSoftplusShift = std::log(std::numbers::e - 1.0);

/// Maps an unconstrained scalar onto (-1, inf) with m(0) = 0.
double constraint_m(double s) { return -1.0 + softplus(s + kSoftplusShift); }
double constraint_m_prime(double s) { return sigmoid(s + kSoftplusShift); }

constexpr double kTinyNorm = 1e-12;

/// Strictly-lower-triangular packing: entry (i, j), j < i, at i(i-1)/2 + j.
int strict_lower_count(int n) { return n * (n - 1) / 2; }

VectorXd pack_strict_lower(const MatrixXd& m) {
    const int n = static_cast<int>(m.rows());
    VectorXd out(strict_lower_count(n));
    int k = 0;
    for (int i = 1; i < n; ++i)
        for (int j = 0; j < i; ++j) out(k++) = m(i, j);
    return out;
}

MatrixXd unpack_strict_lower(const VectorXd& v, int n) {
    MatrixXd out = MatrixXd::Zero(n, n);
    int k = 0;
    for (int i = 1; i < n; ++i)
        for (int j = 0; j < i; ++j) out(i, j) = v(k++);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// PlanarTransform

PlanarTransform::PlanarTransform(VectorXd y, VectorXd w, double b)
    : y_(std::move(y)), w_(std::move(w)), b_(b) {
    if (y_.size() != w_.size()) throw DimensionMismatch("PlanarTransform: y/w sizes disagree");
}

VectorXd PlanarTransform::params() const {
    VectorXd p(num_params());
    p << y_, w_, b_;
    return p;
}

void PlanarTransform::set_params(const VectorXd& p) {
    if (p.size() != num_params()) throw DimensionMismatch("PlanarTransform::set_params");
    const int n = dim();
    y_ = p.segment(0, n);
    w_ = p.segment(n, n);
    b_ = p(2 * n);
}

VectorXd PlanarTransform::effective_y() const {
    const double q = w_.squaredNorm();
    if (q < kTinyNorm) return y_;
    const double s = w_.dot(y_);
    return y_ + ((constraint_m(s) - s) / q) * w_;
}

VectorXd PlanarTransform::forward(const VectorXd& u) const {
    const double a = w_.dot(u) + b_;
    return u + effective_y() * std::tanh(a);
}

MatrixXd PlanarTransform::jacobian(const VectorXd& u) const {
    const double a = w_.dot(u) + b_;
    const double hp = 1.0 - std::tanh(a) * std::tanh(a);
    return MatrixXd::Identity(dim(), dim()) + hp * effective_y() * w_.transpose();
}

double PlanarTransform::log_det_jacobian(const VectorXd& u) const {
    const double a = w_.dot(u) + b_;
    const double hp = 1.0 - std::tanh(a) * std::tanh(a);
    const double d = 1.0 + hp * w_.dot(effective_y());
    if (!(d > 0.0)) throw NonFiniteValue("planar: non-positive Jacobian determinant");
    return std::log(d);
}

VectorXd PlanarTransform::grad_u_log_det(const VectorXd& u) const {
    const double a = w_.dot(u) + b_;
    const double h = std::tanh(a);
    const double hp = 1.0 - h * h;
    const double hpp = -2.0 * h * hp;
    const double wy = w_.dot(effective_y());
    const double d = 1.0 + hp * wy;
    return (hpp * wy / d) * w_;
}

VectorXd PlanarTransform::param_backward(const VectorXd& u, const VectorXd& lambda,
                                         double coef) const {
    const double a = w_.dot(u) + b_;
    const double h = std::tanh(a);
    const double hp = 1.0 - h * h;
    const double hpp = -2.0 * h * hp;
    const VectorXd yh = effective_y();
    const double wy = w_.dot(yh);
    const double d = 1.0 + hp * wy;

    // Gradients with respect to the effective parameters.
    VectorXd g_yh = h * lambda + (coef * hp / d) * w_;
    VectorXd g_w = hp * lambda.dot(yh) * u + (coef / d) * (hpp * wy * u + hp * yh);
    const double g_b = hp * lambda.dot(yh) + coef * hpp * wy / d;

    // Chain through the invertibility reparameterization.
    VectorXd g_y = g_yh;
    const double q = w_.squaredNorm();
    if (q >= kTinyNorm) {
        const double s = w_.dot(y_);
        const double c = constraint_m(s) - s;
        const double cp = constraint_m_prime(s) - 1.0;
        const double wg = w_.dot(g_yh);
        g_y = g_yh + (cp / q) * wg * w_;
        g_w += (cp / q) * wg * y_ + (c / q) * g_yh - (2.0 * c / (q * q)) * wg * w_;
    }

    VectorXd out(num_params());
    out << g_y, g_w, g_b;
    return out;
}

VectorXd PlanarTransform::param_velocity(const VectorXd& u, const VectorXd& dtheta) const {
    const int n = dim();
    VectorXd dy = dtheta.segment(0, n);
    VectorXd dw = dtheta.segment(n, n);
    const double db = dtheta(2 * n);

    const double a = w_.dot(u) + b_;
    const double h = std::tanh(a);
    const double hp = 1.0 - h * h;
    VectorXd yh = effective_y();

    VectorXd dyh = dy;
    const double q = w_.squaredNorm();
    if (q >= kTinyNorm) {
        const double s = w_.dot(y_);
        const double c = constraint_m(s) - s;
        const double cp = constraint_m_prime(s) - 1.0;
        const double ds = dw.dot(y_) + w_.dot(dy);
        const double dq = 2.0 * w_.dot(dw);
        const double dcoef = cp * ds / q - c * dq / (q * q);
        dyh = dy + dcoef * w_ + (c / q) * dw;
    }
    const double da = dw.dot(u) + db;
    return dyh * h + yh * (hp * da);
}

// ---------------------------------------------------------------------------
// RadialTransform

RadialTransform::RadialTransform(VectorXd u0, double alpha, double beta) : u0_(std::move(u0)) {
    if (!(alpha > 0.0)) throw Error("RadialTransform: alpha must be positive");
    if (!(beta > -alpha)) throw Error("RadialTransform: beta must exceed -alpha");
    alpha_raw_ = inv_softplus(alpha);
    beta_raw_ = inv_softplus(alpha + beta);
}

double RadialTransform::effective_alpha() const { return softplus(alpha_raw_); }
double RadialTransform::effective_beta() const {
    return -effective_alpha() + softplus(beta_raw_);
}

VectorXd RadialTransform::params() const {
    VectorXd p(num_params());
    p << u0_, alpha_raw_, beta_raw_;
    return p;
}

void RadialTransform::set_params(const VectorXd& p) {
    if (p.size() != num_params()) throw DimensionMismatch("RadialTransform::set_params");
    const int n = dim();
    u0_ = p.segment(0, n);
    alpha_raw_ = p(n);
    beta_raw_ = p(n + 1);
}

VectorXd RadialTransform::forward(const VectorXd& u) const {
    VectorXd v = u - u0_;
    const double r = v.norm();
    const double s = effective_beta() / (effective_alpha() + r);
    return u + s * v;
}

MatrixXd RadialTransform::jacobian(const VectorXd& u) const {
    const int n = dim();
    VectorXd v = u - u0_;
    const double r = v.norm();
    const double alpha = effective_alpha();
    const double beta = effective_beta();
    const double big_a = alpha + r;
    const double s = beta / big_a;
    MatrixXd j = (1.0 + s) * MatrixXd::Identity(n, n);
    if (r >= kTinyNorm) j += (-beta / (big_a * big_a)) / r * v * v.transpose();
    return j;
}

double RadialTransform::log_det_jacobian(const VectorXd& u) const {
    const int n = dim();
    const double r = (u - u0_).norm();
    const double alpha = effective_alpha();
    const double beta = effective_beta();
    const double big_a = alpha + r;
    const double s = beta / big_a;
    return (n - 1) * std::log1p(s) + std::log(big_a * big_a + alpha * beta) -
           2.0 * std::log(big_a);
}

VectorXd RadialTransform::grad_u_log_det(const VectorXd& u) const {
    const int n = dim();
    VectorXd v = u - u0_;
    const double r = v.norm();
    if (r < kTinyNorm) return VectorXd::Zero(n);
    const double alpha = effective_alpha();
    const double beta = effective_beta();
    const double big_a = alpha + r;
    const double s = beta / big_a;
    const double sp = -beta / (big_a * big_a);
    const double dlogdet_dr = (n - 1) * sp / (1.0 + s) +
                              2.0 * big_a / (big_a * big_a + alpha * beta) - 2.0 / big_a;
    return dlogdet_dr * v / r;
}

VectorXd RadialTransform::param_backward(const VectorXd& u, const VectorXd& lambda,
                                         double coef) const {
    const int n = dim();
    VectorXd v = u - u0_;
    const double r = v.norm();
    const double alpha = effective_alpha();
    const double beta = effective_beta();
    const double big_a = alpha + r;
    const double s = beta / big_a;
    const double sp = -beta / (big_a * big_a);
    const double det_tail = big_a * big_a + alpha * beta;

    // Effective-parameter gradients.
    const double lv = lambda.dot(v);
    double g_beta = lv / big_a;
    double g_alpha = -beta * lv / (big_a * big_a);
    VectorXd g_u0 = -s * lambda;
    if (r >= kTinyNorm) g_u0 -= (sp / r) * v.dot(lambda) * v;

    g_beta += coef * ((n - 1) / (big_a * (1.0 + s)) + alpha / det_tail);
    g_alpha += coef * ((n - 1) * sp / (1.0 + s) + (2.0 * big_a + beta) / det_tail - 2.0 / big_a);
    if (r >= kTinyNorm) {
        const double dlogdet_dr =
            (n - 1) * sp / (1.0 + s) + 2.0 * big_a / det_tail - 2.0 / big_a;
        g_u0 += coef * dlogdet_dr * (-v / r);
    }

    // Chain through alpha = softplus(alpha_raw), beta = -alpha + softplus(beta_raw).
    const double g_alpha_raw = sigmoid(alpha_raw_) * (g_alpha - g_beta);
    const double g_beta_raw = sigmoid(beta_raw_) * g_beta;

    VectorXd out(num_params());
    out << g_u0, g_alpha_raw, g_beta_raw;
    return out;
}

VectorXd RadialTransform::param_velocity(const VectorXd& u, const VectorXd& dtheta) const {
    const int n = dim();
    VectorXd du0 = dtheta.segment(0, n);
    const double dalpha_raw = dtheta(n);
    const double dbeta_raw = dtheta(n + 1);
    const double dalpha = sigmoid(alpha_raw_) * dalpha_raw;
    const double dbeta = -dalpha + sigmoid(beta_raw_) * dbeta_raw;

    VectorXd v = u - u0_;
    const double r = v.norm();
    const double alpha = effective_alpha();
    const double beta = effective_beta();
    const double big_a = alpha + r;
    const double s = beta / big_a;
    const double sp = -beta / (big_a * big_a);

    VectorXd dF = (v / big_a) * dbeta + (-beta / (big_a * big_a)) * v * dalpha - s * du0;
    if (r >= kTinyNorm) dF -= (sp / r) * v.dot(du0) * v;
    return dF;
}

// ---------------------------------------------------------------------------
// TriangularTransform

TriangularTransform::TriangularTransform(MatrixXd B, VectorXd b, MatrixXd L, VectorXd l)
    : B_(std::move(B)), L_(std::move(L)), b_(std::move(b)), l_(std::move(l)) {
    const int n = static_cast<int>(b_.size());
    if (B_.rows() != n || B_.cols() != n || L_.rows() != n || L_.cols() != n || l_.size() != n)
        throw DimensionMismatch("TriangularTransform: shapes disagree");
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j)
            if (B_(i, j) != 0.0 || L_(i, j) != 0.0)
                throw Error("TriangularTransform: B and L must be strictly lower triangular");
}

TriangularTransform::TriangularTransform(int n)
    : TriangularTransform(MatrixXd::Zero(n, n), VectorXd::Zero(n), MatrixXd::Zero(n, n),
                          VectorXd::Zero(n)) {}

int TriangularTransform::num_params() const {
    const int n = dim();
    return 2 * strict_lower_count(n) + 2 * n;
}

VectorXd TriangularTransform::params() const {
    VectorXd p(num_params());
    const int n = dim();
    const int sl = strict_lower_count(n);
    p.segment(0, sl) = pack_strict_lower(B_);
    p.segment(sl, n) = b_;
    p.segment(sl + n, sl) = pack_strict_lower(L_);
    p.segment(2 * sl + n, n) = l_;
    return p;
}

void TriangularTransform::set_params(const VectorXd& p) {
    if (p.size() != num_params()) throw DimensionMismatch("TriangularTransform::set_params");
    const int n = dim();
    const int sl = strict_lower_count(n);
    B_ = unpack_strict_lower(p.segment(0, sl), n);
    b_ = p.segment(sl, n);
    L_ = unpack_strict_lower(p.segment(sl + n, sl), n);
    l_ = p.segment(2 * sl + n, n);
}

VectorXd TriangularTransform::forward(const VectorXd& u) const {
    VectorXd e = (L_ * u + l_).array().exp();
    return B_ * u + b_ + e.cwiseProduct(u);
}

MatrixXd TriangularTransform::jacobian(const VectorXd& u) const {
    VectorXd e = (L_ * u + l_).array().exp();
    MatrixXd j = B_;
    j += MatrixXd(e.asDiagonal());
    j += e.cwiseProduct(u).asDiagonal() * L_;
    return j;
}

double TriangularTransform::log_det_jacobian(const VectorXd& u) const {
    // The Jacobian is lower triangular with diagonal exp((L u)_i + l_i).
    return (L_ * u + l_).sum();
}

VectorXd TriangularTransform::grad_u_log_det(const VectorXd&) const {
    return L_.transpose() * VectorXd::Ones(dim());
}

VectorXd TriangularTransform::param_backward(const VectorXd& u, const VectorXd& lambda,
                                             double coef) const {
    const int n = dim();
    const int sl = strict_lower_count(n);
    VectorXd e = (L_ * u + l_).array().exp();
    VectorXd out(num_params());
    int k = 0;
    for (int i = 1; i < n; ++i)
        for (int j = 0; j < i; ++j) out(k++) = lambda(i) * u(j);  // dB
    out.segment(sl, n) = lambda;                                   // db
    k = sl + n;
    for (int i = 1; i < n; ++i)
        for (int j = 0; j < i; ++j) out(k++) = lambda(i) * e(i) * u(i) * u(j) + coef * u(j);
    out.segment(2 * sl + n, n) = lambda.cwiseProduct(e).cwiseProduct(u).array() + coef;
    return out;
}

VectorXd TriangularTransform::param_velocity(const VectorXd& u, const VectorXd& dtheta) const {
    const int n = dim();
    const int sl = strict_lower_count(n);
    MatrixXd dB = unpack_strict_lower(dtheta.segment(0, sl), n);
    VectorXd db = dtheta.segment(sl, n);
    MatrixXd dL = unpack_strict_lower(dtheta.segment(sl + n, sl), n);
    VectorXd dl = dtheta.segment(2 * sl + n, n);
    VectorXd e = (L_ * u + l_).array().exp();
    return dB * u + db + e.cwiseProduct(dL * u + dl).cwiseProduct(u);
}

VectorXd TriangularTransform::inverse(const VectorXd& x) const {
    const int n = dim();
    VectorXd u(n);
    for (int i = 0; i < n; ++i) {
        double lin = b_(i), expo = l_(i);
        for (int j = 0; j < i; ++j) {
            lin += B_(i, j) * u(j);
            expo += L_(i, j) * u(j);
        }
        u(i) = (x(i) - lin) / std::exp(expo);
    }
    return u;
}

// ---------------------------------------------------------------------------
// TransformChain

TransformChain::TransformChain(const TransformChain& other) {
    elements_.reserve(other.elements_.size());
    for (const auto& e : other.elements_) elements_.push_back(e->clone());
}

TransformChain& TransformChain::operator=(const TransformChain& other) {
    if (this == &other) return *this;
    elements_.clear();
    elements_.reserve(other.elements_.size());
    for (const auto& e : other.elements_) elements_.push_back(e->clone());
    return *this;
}

void TransformChain::push_back(std::unique_ptr<Transform> t) {
    elements_.push_back(std::move(t));
}

int TransformChain::num_params() const {
    int total = 0;
    for (const auto& e : elements_) total += e->num_params();
    return total;
}

VectorXd TransformChain::params() const {
    VectorXd p(num_params());
    Eigen::Index off = 0;
    for (const auto& e : elements_) {
        p.segment(off, e->num_params()) = e->params();
        off += e->num_params();
    }
    return p;
}

void TransformChain::set_params(const VectorXd& p) {
    if (p.size() != num_params()) throw DimensionMismatch("TransformChain::set_params");
    Eigen::Index off = 0;
    for (auto& e : elements_) {
        e->set_params(p.segment(off, e->num_params()));
        off += e->num_params();
    }
}

std::pair<VectorXd, double> TransformChain::forward(const VectorXd& u) const {
    VectorXd x = u;
    double logdet = 0.0;
    for (const auto& e : elements_) {
        logdet += e->log_det_jacobian(x);
        x = e->forward(x);
    }
    if (!x.allFinite() || !std::isfinite(logdet))
        throw NonFiniteValue("TransformChain::forward");
    return {std::move(x), logdet};
}

std::vector<VectorXd> TransformChain::forward_trace(const VectorXd& u) const {
    std::vector<VectorXd> trace;
    trace.reserve(elements_.size() + 1);
    trace.push_back(u);
    for (const auto& e : elements_) trace.push_back(e->forward(trace.back()));
    return trace;
}

VectorXd TransformChain::backward(const VectorXd& u, const VectorXd& lambda_out) const {
    auto trace = forward_trace(u);
    VectorXd grad(num_params());
    VectorXd adj = lambda_out;
    Eigen::Index off = grad.size();
    for (int j = size() - 1; j >= 0; --j) {
        const auto& e = *elements_[j];
        off -= e.num_params();
        grad.segment(off, e.num_params()) = e.param_backward(trace[j], adj, 1.0);
        adj = e.jacobian(trace[j]).transpose() * adj + e.grad_u_log_det(trace[j]);
    }
    return grad;
}

VectorXd TransformChain::velocity(const VectorXd& u, const VectorXd& dtheta,
                                  const VectorXd& phi_u) const {
    VectorXd x = u;
    VectorXd v = phi_u;
    Eigen::Index off = 0;
    for (const auto& e : elements_) {
        v = e->jacobian(x) * v + e->param_velocity(x, dtheta.segment(off, e->num_params()));
        x = e->forward(x);
        off += e->num_params();
    }
    return v;
}

// ---------------------------------------------------------------------------
// Serialization

std::string chain_to_json(const TransformChain& chain) {
    nlohmann::json arr = nlohmann::json::array();
    for (int j = 0; j < chain.size(); ++j) {
        const auto& e = chain.element(j);
        nlohmann::json item;
        item["type"] = e.type_name();
        VectorXd p = e.params();
        item["params"] = std::vector<double>(p.data(), p.data() + p.size());
        arr.push_back(std::move(item));
    }
    return arr.dump();
}

TransformChain chain_from_json(const std::string& text) {
    nlohmann::json arr = nlohmann::json::parse(text);
    TransformChain chain;
    for (const auto& item : arr) {
        const std::string type = item.at("type").get<std::string>();
        std::vector<double> pv = item.at("params").get<std::vector<double>>();
        VectorXd p = Eigen::Map<const VectorXd>(pv.data(), static_cast<Eigen::Index>(pv.size()));
        std::unique_ptr<Transform> t;
        if (type == "planar") {
            const int n = (static_cast<int>(p.size()) - 1) / 2;
            t = std::make_unique<PlanarTransform>(VectorXd::Zero(n), VectorXd::Zero(n), 0.0);
        } else if (type == "radial") {
            const int n = static_cast<int>(p.size()) - 2;
            t = std::make_unique<RadialTransform>(VectorXd::Zero(n), 1.0, 0.0);
        } else if (type == "triangular") {
            // count = n^2 + n
            const int n = static_cast<int>((std::sqrt(4.0 * p.size() + 1.0) - 1.0) / 2.0 + 0.5);
            t = std::make_unique<TriangularTransform>(n);
        } else {
            throw ConfigError("chain_from_json: unknown transform type '" + type + "'");
        }
        t->set_params(p);
        chain.push_back(std::move(t));
    }
    return chain;
}

}  // namespace fisherflow
