#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fisherflow/linalg.hpp"

namespace fisherflow {

/// Invertible, almost-everywhere differentiable map R^n -> R^n with a
/// parameter vector that a gradient flow can evolve. Raw parameters are the
/// flowed quantities; families with invertibility constraints apply an
/// internal reparameterization so that every raw value yields a valid map.
class Transform {
public:
    virtual ~Transform() = default;

    virtual int dim() const = 0;
    virtual int num_params() const = 0;
    virtual VectorXd params() const = 0;
    virtual void set_params(const VectorXd& p) = 0;

    virtual VectorXd forward(const VectorXd& u) const = 0;
    virtual MatrixXd jacobian(const VectorXd& u) const = 0;
    virtual double log_det_jacobian(const VectorXd& u) const = 0;
    /// d log|det J| / du.
    virtual VectorXd grad_u_log_det(const VectorXd& u) const = 0;
    /// d/dtheta [ lambda . F(u) + coef * log|det J(u)| ], raw parameters.
    virtual VectorXd param_backward(const VectorXd& u, const VectorXd& lambda,
                                    double coef) const = 0;
    /// (dF/dtheta) dtheta — forward-mode directional derivative.
    virtual VectorXd param_velocity(const VectorXd& u, const VectorXd& dtheta) const = 0;

    virtual std::string type_name() const = 0;
    virtual std::unique_ptr<Transform> clone() const = 0;
};

/// Planar map F(u) = u + y_eff tanh(w^T u + b). The effective direction y_eff
/// replaces w^T y by a zero-preserving softplus surjection onto (-1, inf), so
/// 1 + h'(a) w^T y_eff stays positive for every raw parameter value and raw
/// y = 0 still gives the identity map.
class PlanarTransform : public Transform {
public:
    PlanarTransform(VectorXd y, VectorXd w, double b);

    int dim() const override { return static_cast<int>(y_.size()); }
    int num_params() const override { return 2 * dim() + 1; }
    VectorXd params() const override;
    void set_params(const VectorXd& p) override;

    VectorXd forward(const VectorXd& u) const override;
    MatrixXd jacobian(const VectorXd& u) const override;
    double log_det_jacobian(const VectorXd& u) const override;
    VectorXd grad_u_log_det(const VectorXd& u) const override;
    VectorXd param_backward(const VectorXd& u, const VectorXd& lambda, double coef) const override;
    VectorXd param_velocity(const VectorXd& u, const VectorXd& dtheta) const override;

    std::string type_name() const override { return "planar"; }
    std::unique_ptr<Transform> clone() const override {
        return std::make_unique<PlanarTransform>(*this);
    }

    VectorXd effective_y() const;

private:
    VectorXd y_, w_;
    double b_;
};

/// Radial map F(u) = u + beta / (alpha + r) (u - u0), r = ||u - u0||. The
/// flowed parameters are unconstrained: alpha = softplus(alpha_raw) and
/// beta = -alpha + softplus(beta_raw), so alpha > 0 and beta >= -alpha hold
/// for every raw value. The constructor takes the effective (alpha, beta).
class RadialTransform : public Transform {
public:
    RadialTransform(VectorXd u0, double alpha, double beta);

    int dim() const override { return static_cast<int>(u0_.size()); }
    int num_params() const override { return dim() + 2; }
    VectorXd params() const override;
    void set_params(const VectorXd& p) override;

    VectorXd forward(const VectorXd& u) const override;
    MatrixXd jacobian(const VectorXd& u) const override;
    double log_det_jacobian(const VectorXd& u) const override;
    VectorXd grad_u_log_det(const VectorXd& u) const override;
    VectorXd param_backward(const VectorXd& u, const VectorXd& lambda, double coef) const override;
    VectorXd param_velocity(const VectorXd& u, const VectorXd& dtheta) const override;

    std::string type_name() const override { return "radial"; }
    std::unique_ptr<Transform> clone() const override {
        return std::make_unique<RadialTransform>(*this);
    }

    double effective_alpha() const;
    double effective_beta() const;

private:
    VectorXd u0_;
    double alpha_raw_, beta_raw_;
};

/// Triangular map F(u) = B u + b + exp(L u + l) .* u with strictly lower
/// triangular B and L. The Jacobian is lower triangular with diagonal
/// exp((L u)_i + l_i), so the map is invertible by forward substitution.
class TriangularTransform : public Transform {
public:
    TriangularTransform(MatrixXd B, VectorXd b, MatrixXd L, VectorXd l);
    /// Identity-initialized map of the given dimension.
    explicit TriangularTransform(int n);

    int dim() const override { return static_cast<int>(b_.size()); }
    int num_params() const override;
    VectorXd params() const override;
    void set_params(const VectorXd& p) override;

    VectorXd forward(const VectorXd& u) const override;
    MatrixXd jacobian(const VectorXd& u) const override;
    double log_det_jacobian(const VectorXd& u) const override;
    VectorXd grad_u_log_det(const VectorXd& u) const override;
    VectorXd param_backward(const VectorXd& u, const VectorXd& lambda, double coef) const override;
    VectorXd param_velocity(const VectorXd& u, const VectorXd& dtheta) const override;

    std::string type_name() const override { return "triangular"; }
    std::unique_ptr<Transform> clone() const override {
        return std::make_unique<TriangularTransform>(*this);
    }

    /// Inverse by forward substitution.
    VectorXd inverse(const VectorXd& x) const;

    const MatrixXd& B() const { return B_; }
    const MatrixXd& L() const { return L_; }

private:
    MatrixXd B_, L_;  // strictly lower triangular
    VectorXd b_, l_;
};

/// Composition F = F_J o ... o F_1, applied in storage order. Copyable via
/// element-wise clone; the concatenated raw parameter vector is the flowed
/// state.
class TransformChain {
public:
    TransformChain() = default;
    TransformChain(const TransformChain& other);
    TransformChain& operator=(const TransformChain& other);
    TransformChain(TransformChain&&) = default;
    TransformChain& operator=(TransformChain&&) = default;

    void push_back(std::unique_ptr<Transform> t);
    int size() const { return static_cast<int>(elements_.size()); }
    bool empty() const { return elements_.empty(); }
    const Transform& element(int j) const { return *elements_[j]; }
    Transform& element(int j) { return *elements_[j]; }

    int num_params() const;
    VectorXd params() const;
    void set_params(const VectorXd& p);

    /// x = F(u) with the accumulated log-Jacobian determinant.
    std::pair<VectorXd, double> forward(const VectorXd& u) const;

    /// Intermediate points u^0 = u, u^j = F_j(u^{j-1}); size J+1.
    std::vector<VectorXd> forward_trace(const VectorXd& u) const;

    /// d/dtheta [ lambda_out . F(u) + sum_j log|det J_j| ] for the whole chain
    /// via reverse accumulation; lambda_out is the adjoint at the output.
    VectorXd backward(const VectorXd& u, const VectorXd& lambda_out) const;

    /// Output-space velocity dF/dt + (grad_u F) phi_u given parameter
    /// velocities dtheta (concatenated) and base velocity phi_u at u.
    VectorXd velocity(const VectorXd& u, const VectorXd& dtheta, const VectorXd& phi_u) const;

private:
    std::vector<std::unique_ptr<Transform>> elements_;
};

/// JSON round-trip: [{"type": ..., "params": [...]}] in application order.
std::string chain_to_json(const TransformChain& chain);
TransformChain chain_from_json(const std::string& text);

}  // namespace fisherflow
