#pragma once

#include "cvpo/common.hpp"
#include "cvpo/estep.hpp"

#include <utility>

namespace cvpo {

/**
 * Evidence lower bound on the particle representation:
 *   mean_b [ E_W[Qr] - alpha * KL(W_b || particle mass of pi_theta) ].
 * pi_theta's particle mass re-weights the base by the density ratio
 * new/old, so when the two policies coincide it reduces to the base.
 */
inline double elbo_estimate(const ParticleSet& ps, const Mat& W, const Mat& log_pi_theta,
                            const Mat& log_pi_old, double alpha) {
    ps.validate();
    require(alpha >= 0.0, "elbo_estimate: negative temperature");
    require(W.rows() == ps.B() && W.cols() == ps.K(), "elbo_estimate: weight shape");
    require(log_pi_theta.rows() == ps.B() && log_pi_theta.cols() == ps.K(),
            "elbo_estimate: log density shape");
    require(log_pi_old.rows() == ps.B() && log_pi_old.cols() == ps.K(),
            "elbo_estimate: log density shape");
    double acc = 0.0;
    for (Eigen::Index b = 0; b < ps.B(); ++b) {
        const Vec logits = ps.log_base.row(b).transpose() + log_pi_theta.row(b).transpose() -
                           log_pi_old.row(b).transpose();
        const Vec repr = softmax(logits);
        const double kl = discrete_kl(W.row(b).transpose(), repr);
        acc += ps.row_weight[b] * (W.row(b).dot(ps.Qr.row(b)) - alpha * kl);
    }
    return acc;
}

/// Worst-case post-update cost level: eps1 + ((1-gamma) + sqrt(2 eps) gamma) delta_c / (1-gamma)^2.
inline double cost_bound(double eps1, double gamma, double eps, double delta_c) {
    require(gamma >= 0.0 && gamma < 1.0, "cost_bound: gamma outside [0,1)");
    require(eps >= 0.0 && delta_c >= 0.0, "cost_bound: negative inputs");
    const double om = 1.0 - gamma;
    return eps1 + (om + std::sqrt(2.0 * eps) * gamma) * delta_c / (om * om);
}

/// Largest expected cost-advantage shift between two policy tables.
inline double delta_c_tabular(const Mat& qc_old, const Mat& pi_new, const Mat& pi_old) {
    require(qc_old.rows() == pi_new.rows() && qc_old.cols() == pi_new.cols() &&
                pi_old.rows() == pi_new.rows() && pi_old.cols() == pi_new.cols(),
            "delta_c_tabular: shape mismatch");
    double worst = 0.0;
    for (Eigen::Index s = 0; s < qc_old.rows(); ++s) {
        const double gap = (pi_new.row(s) - pi_old.row(s)).dot(qc_old.row(s));
        worst = std::max(worst, std::abs(gap));
    }
    return worst;
}

/**
 * Trust-region margin under which a projection step keeps feasibility:
 * one-step requires eps_mstep < eps2, two-step eps_mstep < eps2 / 8.
 */
inline std::pair<bool, double> robustness_margin(double eps_mstep, double eps2, int n) {
    require(eps_mstep >= 0.0 && eps2 > 0.0, "robustness_margin: thresholds must be positive");
    require(n == 1 || n == 2, "robustness_margin: n must be 1 or 2");
    const double margin = (n == 1 ? eps2 : eps2 / 8.0) - eps_mstep;
    return {margin > 0.0, margin};
}

/**
 * Lambert W on the real branches 0 and -1 by Halley iteration, seeded
 * with the branch-point series near -1/e and logarithmic asymptotes
 * elsewhere. Residual |w e^w - x| is driven to ~1e-13 relative.
 */
inline double lambert_w(int branch, double x) {
    require(branch == 0 || branch == -1, "lambert_w: branch must be 0 or -1");
    const double em1 = std::exp(-1.0);
    require(x >= -em1, "lambert_w: argument below -1/e");
    if (branch == -1) require(x < 0.0, "lambert_w: branch -1 needs x < 0");
    if (x == 0.0) return 0.0;

    const double p2 = 2.0 * (M_E * x + 1.0);
    if (p2 <= 1e-12) return -1.0;  // branch point to double precision

    double w;
    if (p2 < 0.05) {  // series about the branch point, sign picks the branch
        const double p = (branch == 0 ? 1.0 : -1.0) * std::sqrt(p2);
        w = -1.0 + p - p * p / 3.0 + 11.0 * p * p * p / 72.0;
    } else if (branch == 0) {
        w = (x < 6.0) ? std::log1p(x) : std::log(x) - std::log(std::log(x));
    } else {
        const double l = std::log(-x);
        w = (x > -0.1) ? l - std::log(-l) : -2.0;
    }

    for (int it = 0; it < 100; ++it) {
        const double ew = std::exp(w);
        const double f = w * ew - x;
        if (std::abs(f) <= 1e-13 * std::max(1.0, std::abs(x))) break;
        const double fp = ew * (w + 1.0);
        const double fpp = ew * (w + 2.0);
        const double denom = fp - 0.5 * f * fpp / fp;
        w -= f / denom;
    }
    return w;
}

/**
 * Upper bound on the KL between policies two projection steps apart
 * when each step's KL is at most eps:
 *   2 eps + 1/2 [ (Wm+1)^2 - Wm (sqrt(2 eps / -W0) + sqrt(2 eps))^2 ],
 * with Wm, W0 the Lambert branches at -e^{-1-2 eps}. Asymptotically 8 eps.
 */
inline double two_step_kl_bound(double eps) {
    require(eps >= 0.0, "two_step_kl_bound: negative eps");
    if (eps == 0.0) return 0.0;
    const double arg = -std::exp(-1.0 - 2.0 * eps);
    const double wm = lambert_w(-1, arg);
    const double w0 = lambert_w(0, arg);
    const double root = std::sqrt(2.0 * eps / -w0) + std::sqrt(2.0 * eps);
    return 2.0 * eps + 0.5 * ((wm + 1.0) * (wm + 1.0) - wm * root * root);
}

}  // namespace cvpo
