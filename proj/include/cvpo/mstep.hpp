#pragma once

#include "cvpo/common.hpp"
#include "cvpo/estep.hpp"
#include "cvpo/policy.hpp"

#include <utility>

namespace cvpo {

/// Dual state and step sizes of the decoupled-KL supervised projection.
struct MStepState {
    double beta_mu = 0.0;
    double beta_sigma = 0.0;
    double alpha_mu = 1.0;
    double alpha_sigma = 100.0;
    double alpha_theta = 2e-3;
    double eps_mu = 1e-3;
    double eps_sigma = 1e-4;
    int M = 6;
};

/// beta <- max(0, beta - alpha * (eps - C)); ascent on the KL duals.
inline MStepState kl_dual_step(const MStepState& s, double c_mu, double c_sigma) {
    require(c_mu >= 0.0 && c_sigma >= 0.0, "kl_dual_step: negative KL component");
    MStepState n = s;
    n.beta_mu = std::max(0.0, s.beta_mu - s.alpha_mu * (s.eps_mu - c_mu));
    n.beta_sigma = std::max(0.0, s.beta_sigma - s.alpha_sigma * (s.eps_sigma - c_sigma));
    return n;
}

/// Negative weighted log likelihood of the particles under the online policy.
inline double weighted_mle_loss(const GaussianPolicy& pol, const ParticleSet& ps, const Mat& W) {
    ps.validate();
    require(W.rows() == ps.B() && W.cols() == ps.K(), "weighted_mle_loss: weight shape");
    const GaussianBatch g = pol.online(ps.states);
    const Mat logp = GaussianPolicy::log_density_matrix(g, ps.actions, static_cast<int>(ps.K()));
    double loss = 0.0;
    for (Eigen::Index b = 0; b < ps.B(); ++b)
        loss -= ps.row_weight[b] * W.row(b).dot(logp.row(b));
    return loss;
}

struct MStepReport {
    double c_mu = 0.0;
    double c_sigma = 0.0;
    double mle_loss = 0.0;
};

struct MStepGrads {
    double mle_loss = 0.0;
    double c_mu = 0.0;
    double c_sigma = 0.0;
    Mlp::Grads mean;
    Mlp::Grads cov;
};

/// Loss value and parameter gradients of
///   weighted NLL + beta_mu * C_mu + beta_sigma * C_sigma
/// at the current online heads, with the KL components measured against
/// the fixed anchor batch old_b.
inline MStepGrads mstep_lagrangian_grads(const GaussianPolicy& pol, const GaussianBatch& old_b,
                                         const ParticleSet& ps, const Mat& W, double beta_mu,
                                         double beta_sigma) {
    ps.validate();
    require(W.rows() == ps.B() && W.cols() == ps.K(), "mstep_lagrangian_grads: weight shape");
    const Eigen::Index B = ps.B(), K = ps.K(), n = pol.action_dim();
    require(old_b.mu.rows() == B && old_b.mu.cols() == n, "mstep_lagrangian_grads: anchor shape");
    const double Bd = static_cast<double>(B);

    Mlp::Cache cache_mu, cache_z;
    const Mat mu = pol.mean_net.forward_cached(ps.states, cache_mu);
    const Mat z = pol.cov_net.forward_cached(ps.states, cache_z);
    const Mat sigma = GaussianPolicy::sigma_from_pre(z);

    MStepGrads out;
    const auto comps = kl_decomposed(old_b, {mu, sigma});
    out.c_mu = comps.first;
    out.c_sigma = comps.second;

    Mat dmu = Mat::Zero(B, n), dsigma = Mat::Zero(B, n);
    double mle = 0.0;
    for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index k = 0; k < K; ++k) {
            const double wk = ps.row_weight[b] * W(b, k);
            for (Eigen::Index j = 0; j < n; ++j) {
                const double s = sigma(b, j);
                const double d = ps.actions(b * K + k, j) - mu(b, j);
                mle -= wk * (-0.5 * std::log(2.0 * M_PI) - std::log(s) - 0.5 * d * d / (s * s));
                dmu(b, j) -= wk * d / (s * s);
                dsigma(b, j) -= wk * (-1.0 / s + d * d / (s * s * s));
            }
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            const double s = sigma(b, j);
            const double so = old_b.sigma(b, j);
            const double diff = mu(b, j) - old_b.mu(b, j);
            dmu(b, j) += beta_mu * diff / (s * s) / Bd;
            dsigma(b, j) += beta_mu * (-diff * diff / (s * s * s)) / Bd;
            dsigma(b, j) += beta_sigma * (1.0 / s - so * so / (s * s * s)) / Bd;
        }
    }
    out.mle_loss = mle;
    if (!dmu.allFinite() || !dsigma.allFinite())
        throw NumericalError("mstep_lagrangian_grads: non-finite policy gradient");

    Mat dz(B, n);
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index j = 0; j < n; ++j) dz(b, j) = dsigma(b, j) * sigmoid(z(b, j));
    out.mean = pol.mean_net.backward(cache_mu, dmu);
    out.cov = pol.cov_net.backward(cache_z, dz);
    return out;
}

/**
 * M inner iterations of dual ascent on (beta_mu, beta_sigma) alternated
 * with one Adam step on the Lagrangian. The KL anchor is the behavior
 * head of the frozen snapshot that generated the particles. Both online
 * heads train; the target heads move only through polyak updates
 * elsewhere.
 */
inline MStepReport policy_update(GaussianPolicy& pol, const GaussianPolicy& pol_old,
                                 const ParticleSet& ps, const Mat& W, MStepState& state) {
    ps.validate();
    require(W.rows() == ps.B() && W.cols() == ps.K(), "policy_update: weight shape");
    require(state.M >= 1, "policy_update: M must be >= 1");
    const GaussianBatch old_b = pol_old.behavior(ps.states);

    MStepReport rep;
    for (int m = 0; m < state.M; ++m) {
        const auto comps = kl_decomposed(old_b, pol.online(ps.states));
        state = kl_dual_step(state, comps.first, comps.second);
        rep.c_mu = comps.first;
        rep.c_sigma = comps.second;

        MStepGrads g =
            mstep_lagrangian_grads(pol, old_b, ps, W, state.beta_mu, state.beta_sigma);
        rep.mle_loss = g.mle_loss;
        pol.mean_net.adam_step(g.mean, state.alpha_theta);
        pol.cov_net.adam_step(g.cov, state.alpha_theta);
    }
    return rep;
}

/**
 * Exact KL-ball projection for finite action sets: the minimizer of the
 * weighted cross entropy to q under mean KL(pi_old || pi) <= eps is the
 * arithmetic blend (q + beta*pi_old)/(1+beta) with one shared beta,
 * found by bisection until the ball constraint is tight (or beta = 0
 * when q already lies inside).
 */
inline Mat exact_tabular_mstep(const Mat& q, const Mat& pi_old, double eps, Vec weights = Vec()) {
    const Eigen::Index S = q.rows(), A = q.cols();
    require(pi_old.rows() == S && pi_old.cols() == A, "exact_tabular_mstep: shape mismatch");
    require(pi_old.minCoeff() > 0.0, "exact_tabular_mstep: pi_old must be strictly positive");
    require(eps >= 0.0, "exact_tabular_mstep: negative KL budget");
    if (weights.size() == 0) weights = Vec::Constant(S, 1.0 / static_cast<double>(S));
    require(weights.size() == S, "exact_tabular_mstep: weights length");

    if (eps == 0.0) return pi_old;
    auto mix = [&](double beta) { return Mat(((q + beta * pi_old) / (1.0 + beta))); };
    auto kl_of = [&](const Mat& pi) {
        double kl = 0.0;
        for (Eigen::Index s = 0; s < S; ++s)
            kl += weights[s] * discrete_kl(pi_old.row(s).transpose(), pi.row(s).transpose());
        return kl;
    };
    if (kl_of(q) <= eps) return q;

    double lo = 0.0, hi = 1.0;
    while (kl_of(mix(hi)) > eps) {
        hi *= 2.0;
        if (hi > 1e12) return mix(hi);  // budget ~ 0, effectively pi_old
    }
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (kl_of(mix(mid)) > eps ? lo : hi) = mid;
    }
    return mix(hi);  // hi side satisfies KL <= eps
}

}  // namespace cvpo
