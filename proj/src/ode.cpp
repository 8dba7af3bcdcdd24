#include "fisherflow/ode.hpp"

#include <algorithm>
#include <cmath>

namespace fisherflow {

namespace {

void check_finite(const VectorXd& v, double t) {
    if (!v.allFinite()) throw NonFiniteValue("ode: non-finite state at t=" + std::to_string(t));
}

/// One Runge-Kutta-Fehlberg 4(5) attempt; returns the 5th-order solution and
/// an error estimate.
std::pair<VectorXd, double> rkf45_attempt(const OdeRhs& rhs, const VectorXd& y, double t,
                                          double h) {
    const VectorXd k1 = rhs(t, y);
    const VectorXd k2 = rhs(t + h / 4.0, y + h * (k1 / 4.0));
    const VectorXd k3 = rhs(t + 3.0 * h / 8.0, y + h * (3.0 / 32.0 * k1 + 9.0 / 32.0 * k2));
    const VectorXd k4 = rhs(t + 12.0 * h / 13.0,
                            y + h * (1932.0 / 2197.0 * k1 - 7200.0 / 2197.0 * k2 +
                                     7296.0 / 2197.0 * k3));
    const VectorXd k5 =
        rhs(t + h, y + h * (439.0 / 216.0 * k1 - 8.0 * k2 + 3680.0 / 513.0 * k3 -
                            845.0 / 4104.0 * k4));
    const VectorXd k6 =
        rhs(t + h / 2.0, y + h * (-8.0 / 27.0 * k1 + 2.0 * k2 - 3544.0 / 2565.0 * k3 +
                                  1859.0 / 4104.0 * k4 - 11.0 / 40.0 * k5));
    VectorXd y4 = y + h * (25.0 / 216.0 * k1 + 1408.0 / 2565.0 * k3 + 2197.0 / 4104.0 * k4 -
                           1.0 / 5.0 * k5);
    VectorXd y5 = y + h * (16.0 / 135.0 * k1 + 6656.0 / 12825.0 * k3 +
                           28561.0 / 56430.0 * k4 - 9.0 / 50.0 * k5 + 2.0 / 55.0 * k6);
    const double err = (y5 - y4).cwiseAbs().maxCoeff();
    return {std::move(y5), err};
}

}  // namespace

VectorXd rk4_step(const OdeRhs& rhs, const VectorXd& y, double t, double h) {
    const VectorXd k1 = rhs(t, y);
    const VectorXd k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
    const VectorXd k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
    const VectorXd k4 = rhs(t + h, y + h * k3);
    VectorXd out = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    check_finite(out, t + h);
    return out;
}

IntegrationResult integrate(const OdeRhs& rhs, const VectorXd& init, double t0, double T,
                            const OdeConfig& config, const StepHook& hook) {
    if (T < t0) throw Error("integrate: T must not precede t0");
    IntegrationResult res;
    res.t = t0;
    res.state = init;
    if (T == t0) return res;

    const double cadence = config.checkpoint_every;
    long next_checkpoint = 1;
    auto maybe_checkpoint = [&](double t, const VectorXd& y) {
        if (cadence <= 0.0) return;
        while (t0 + static_cast<double>(next_checkpoint) * cadence <= t + 1e-12) {
            res.checkpoints.push_back({t, y});
            ++next_checkpoint;
        }
    };

    if (config.method == OdeConfig::Method::RK4) {
        if (config.step <= 0.0) throw Error("integrate: RK4 step must be positive");
        double t = t0;
        while (t < T - 1e-12) {
            if (res.steps >= config.max_steps) throw MaxStepsExceeded("integrate: RK4");
            const double h = std::min(config.step, T - t);
            res.state = rk4_step(rhs, res.state, t, h);
            t += h;
            ++res.steps;
            if (hook) hook(t, res.state);
            maybe_checkpoint(t, res.state);
        }
        res.t = T;
        return res;
    }

    // Adaptive RK45 with standard step-size controller.
    if (config.rel_tol <= 0.0 || config.abs_tol <= 0.0)
        throw Error("integrate: RK45 tolerances must be positive");
    double t = t0;
    double h = std::min(config.step > 0.0 ? config.step : 1e-2, T - t0);
    while (t < T - 1e-12) {
        if (res.steps >= config.max_steps) throw MaxStepsExceeded("integrate: RK45");
        h = std::min(h, T - t);
        auto [y5, err] = rkf45_attempt(rhs, res.state, t, h);
        const double scale =
            config.abs_tol + config.rel_tol * std::max(res.state.cwiseAbs().maxCoeff(),
                                                       y5.cwiseAbs().maxCoeff());
        ++res.steps;
        if (err <= scale || h <= 1e-12) {
            check_finite(y5, t + h);
            res.state = std::move(y5);
            t += h;
            if (hook) hook(t, res.state);
            maybe_checkpoint(t, res.state);
        }
        const double ratio = err > 0.0 ? std::pow(scale / err, 0.2) : 4.0;
        h *= std::clamp(0.9 * ratio, 0.2, 4.0);
    }
    res.t = T;
    return res;
}

}  // namespace fisherflow
