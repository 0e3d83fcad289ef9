#pragma once

#include "cvpo/cmdp.hpp"
#include "cvpo/common.hpp"
#include "cvpo/mlp.hpp"
#include "cvpo/policy.hpp"

#include <functional>
#include <utility>

namespace cvpo {

/**
 * Reward and cost action-value networks with target copies. Cost reads
 * go through a zero clamp (the true cost return is nonnegative); the
 * raw head output is kept for gradient flow during regression.
 */
class CriticPair {
public:
    CriticPair() = default;

    CriticPair(int state_dim, int action_dim, const std::vector<int>& hidden, RngStream& rng)
        : qr(state_dim + action_dim, hidden, 1, rng),
          qc(state_dim + action_dim, hidden, 1, rng),
          qr_target(qr),
          qc_target(qc),
          ds_(state_dim),
          da_(action_dim) {}

    int state_dim() const { return ds_; }
    int action_dim() const { return da_; }

    static Mat join(const Mat& states, const Mat& actions) {
        require(states.rows() == actions.rows(), "CriticPair: batch size mismatch");
        Mat X(states.rows(), states.cols() + actions.cols());
        X << states, actions;
        return X;
    }

    Vec q_reward(const Mat& states, const Mat& actions) const {
        return qr.forward(join(states, actions)).col(0);
    }

    /// Evaluation read of the cost critic, clamped at zero.
    Vec q_cost(const Mat& states, const Mat& actions) const {
        return qc.forward(join(states, actions)).col(0).cwiseMax(0.0);
    }

    Vec q_reward_target(const Mat& states, const Mat& actions) const {
        return qr_target.forward(join(states, actions)).col(0);
    }

    Vec q_cost_target(const Mat& states, const Mat& actions) const {
        return qc_target.forward(join(states, actions)).col(0).cwiseMax(0.0);
    }

    Mlp qr, qc, qr_target, qc_target;

private:
    int ds_ = 0;
    int da_ = 0;
};

/// Draws n actions per row of next_states, stacked (B*n) x da.
using NextActionSampler = std::function<Mat(const Mat& next_states, int n, RngStream& rng)>;

inline NextActionSampler sampler_from_policy(const GaussianPolicy& pol) {
    return [&pol](const Mat& next_states, int n, RngStream& rng) {
        return pol.sample_actions_batch(next_states, n, rng);
    };
}

/**
 * One squared-Bellman-error gradient step on both critics.
 * Targets: r + gamma * mean_j Q'(s', a'_j) over n_next sampled next
 * actions; terminal rows bootstrap nothing and regress on the immediate
 * signal alone. Returns the pre-step batch losses (reward, cost).
 */
inline std::pair<double, double> td_update(CriticPair& critics, const Batch& batch,
                                           const NextActionSampler& next_actions, double gamma,
                                           double alpha_c, int n_next, RngStream& rng) {
    const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
    require(B >= 1, "td_update: empty batch");
    require(n_next >= 1, "td_update: n_next must be >= 1");
    require(gamma >= 0.0 && gamma < 1.0, "td_update: gamma outside [0,1)");

    const Mat a_next = next_actions(batch.next_states, n_next, rng);
    require(a_next.rows() == B * n_next, "td_update: sampler returned wrong row count");
    Mat s_next_rep(B * n_next, batch.next_states.cols());
    for (Eigen::Index b = 0; b < B; ++b)
        for (int j = 0; j < n_next; ++j) s_next_rep.row(b * n_next + j) = batch.next_states.row(b);

    const Vec qr_next = critics.q_reward_target(s_next_rep, a_next);
    const Vec qc_next = critics.q_cost_target(s_next_rep, a_next);
    Vec y_r(B), y_c(B);
    for (Eigen::Index b = 0; b < B; ++b) {
        double mr = 0.0, mc = 0.0;
        for (int j = 0; j < n_next; ++j) {
            mr += qr_next[b * n_next + j];
            mc += qc_next[b * n_next + j];
        }
        mr /= n_next;
        mc /= n_next;
        const double cont = 1.0 - batch.terminals[b];
        y_r[b] = batch.rewards[b] + gamma * cont * mr;
        y_c[b] = batch.costs[b] + gamma * cont * mc;
    }

    const Mat X = CriticPair::join(batch.states, batch.actions);
    double loss_r, loss_c;
    {
        Mlp::Cache cache;
        const Vec pred = critics.qr.forward_cached(X, cache).col(0);
        const Vec err = pred - y_r;
        loss_r = err.squaredNorm() / static_cast<double>(B);
        Mat dLdY = (2.0 / static_cast<double>(B)) * err;
        const Mlp::Grads g = critics.qr.backward(cache, dLdY);
        critics.qr.adam_step(g, alpha_c);
    }
    {
        Mlp::Cache cache;
        const Vec pred = critics.qc.forward_cached(X, cache).col(0);
        const Vec err = pred - y_c;
        loss_c = err.squaredNorm() / static_cast<double>(B);
        Mat dLdY = (2.0 / static_cast<double>(B)) * err;
        const Mlp::Grads g = critics.qc.backward(cache, dLdY);
        critics.qc.adam_step(g, alpha_c);
    }
    return {loss_r, loss_c};
}

/// Convex-combination update of every target set; rho = 1 freezes them.
inline void polyak_update(CriticPair& critics, GaussianPolicy* policy, double rho) {
    require(rho >= 0.0 && rho <= 1.0, "polyak_update: rho outside [0,1]");
    critics.qr_target.polyak_from(critics.qr, rho);
    critics.qc_target.polyak_from(critics.qc, rho);
    if (policy != nullptr) policy->polyak_targets(rho);
}

}  // namespace cvpo
