#pragma once

#include <functional>
#include <vector>

#include "fisherflow/linalg.hpp"

namespace fisherflow {

struct OdeConfig {
    enum class Method { RK4, RK45 };
    Method method = Method::RK4;
    double step = 1e-2;       // RK4 step size
    double rel_tol = 1e-6;    // RK45 tolerances
    double abs_tol = 1e-9;
    long max_steps = 2'000'000;
    double checkpoint_every = 0.0;  // <= 0 disables checkpoints
};

using OdeRhs = std::function<VectorXd(double t, const VectorXd& y)>;

/// Called after every accepted step. May project the state in place (e.g.
/// clamp a segment) or throw DivergedFlow to veto the integration.
using StepHook = std::function<void(double t, VectorXd& y)>;

struct Checkpoint {
    double t;
    VectorXd state;
};

struct IntegrationResult {
    double t = 0.0;
    VectorXd state;
    std::vector<Checkpoint> checkpoints;
    long steps = 0;
};

/// Single classical fourth-order Runge-Kutta step.
VectorXd rk4_step(const OdeRhs& rhs, const VectorXd& y, double t, double h);

/// Integrates from t0 to T. Checkpoints are value snapshots taken whenever the
/// integration crosses a multiple of checkpoint_every past t0 (none at t0; the
/// final state is reported separately). T == t0 returns the initial state with
/// zero steps and zero checkpoints.
IntegrationResult integrate(const OdeRhs& rhs, const VectorXd& init, double t0, double T,
                            const OdeConfig& config, const StepHook& hook = nullptr);

}  // namespace fisherflow
