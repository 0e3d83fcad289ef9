#pragma once

#include "cvpo/common.hpp"
#include "cvpo/critics.hpp"
#include "cvpo/policy.hpp"

namespace cvpo {

/// PID controller state for the cost-constraint multiplier.
struct PidState {
    double kp = 1.0;
    double ki = 0.1;
    double kd = 0.0;
    double i_max = 100.0;
    double integral = 0.0;
    double prev_error = 0.0;
    double lambda = 0.0;
};

/**
 * One controller tick on the constraint error e = J_c_estimate - eps1.
 * The integral accumulates only violation (clamped to [0, i_max], an
 * anti-windup guard), and the output multiplier is clamped at zero.
 */
inline PidState pid_update(const PidState& s, double jc_estimate, double eps1) {
    require(std::isfinite(jc_estimate) && std::isfinite(eps1), "pid_update: non-finite input");
    PidState n = s;
    const double e = jc_estimate - eps1;
    n.integral = std::clamp(s.integral + e, 0.0, s.i_max);
    n.lambda = std::max(0.0, s.kp * e + s.ki * n.integral + s.kd * (e - s.prev_error));
    n.prev_error = e;
    return n;
}

/**
 * One pathwise actor step maximizing E[Q_r - lambda Q_c] over
 * reparameterized samples a = mu(s) + sigma(s) * xi. Gradients reach
 * the policy through the critics' input derivatives; both online heads
 * update, the raw (unclamped) cost head supplies the penalty gradient.
 */
inline void pd_actor_step(GaussianPolicy& pol, CriticPair& critics, const Mat& states,
                          double lambda, double alpha, RngStream& rng) {
    require(lambda >= 0.0, "pd_actor_step: negative multiplier");
    const Eigen::Index B = states.rows(), n = pol.action_dim();
    require(B >= 1, "pd_actor_step: empty state batch");

    Mlp::Cache cache_mu, cache_z;
    const Mat mu = pol.mean_net.forward_cached(states, cache_mu);
    const Mat z = pol.cov_net.forward_cached(states, cache_z);
    const Mat sigma = GaussianPolicy::sigma_from_pre(z);
    Mat xi(B, n);
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index j = 0; j < n; ++j) xi(b, j) = rng.normal();
    const Mat actions = mu + sigma.cwiseProduct(xi);

    const Mat X = CriticPair::join(states, actions);
    const double scale = 1.0 / static_cast<double>(B);
    Mat dLda;
    {
        Mlp::Cache cr;
        critics.qr.forward_cached(X, cr);
        const Mlp::Grads gr = critics.qr.backward(cr, Mat::Constant(B, 1, -scale));
        Mlp::Cache cc;
        critics.qc.forward_cached(X, cc);
        const Mlp::Grads gc = critics.qc.backward(cc, Mat::Constant(B, 1, lambda * scale));
        dLda = gr.input.rightCols(n) + gc.input.rightCols(n);
    }
    if (!dLda.allFinite()) throw NumericalError("pd_actor_step: non-finite actor gradient");

    Mat dz(B, n);
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index j = 0; j < n; ++j)
            dz(b, j) = dLda(b, j) * xi(b, j) * sigmoid(z(b, j));
    pol.mean_net.adam_step(pol.mean_net.backward(cache_mu, dLda), alpha);
    pol.cov_net.adam_step(pol.cov_net.backward(cache_z, dz), alpha);
}

}  // namespace cvpo
