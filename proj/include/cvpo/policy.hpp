#pragma once

#include "cvpo/common.hpp"
#include "cvpo/mlp.hpp"

#include <utility>
#include <vector>

namespace cvpo {

inline double softplus(double z) {
    if (z > 30.0) return z;
    if (z < -30.0) return std::exp(z);
    return std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Per-state diagonal-Gaussian parameters evaluated on a state batch.
struct GaussianBatch {
    Mat mu;     // B x n
    Mat sigma;  // B x n, strictly positive
};

/**
 * Decomposed KL between two diagonal-Gaussian batches, averaged over
 * rows. The mean term is measured in the NEW covariance metric,
 *   C_mu    = mean_b 1/2 (mu - mu_old)' Sigma^-1 (mu - mu_old),
 *   C_sigma = mean_b 1/2 (tr(Sigma^-1 Sigma_old) - n + ln det Sigma/det Sigma_old),
 * so C_mu + C_sigma is exactly the batch-mean KL(old || new).
 */
inline std::pair<double, double> kl_decomposed(const GaussianBatch& old_b, const GaussianBatch& new_b) {
    require(old_b.mu.rows() == new_b.mu.rows() && old_b.mu.cols() == new_b.mu.cols(),
            "kl_decomposed: dimension mismatch");
    require(old_b.sigma.minCoeff() > 0.0 && new_b.sigma.minCoeff() > 0.0,
            "kl_decomposed: nonpositive sigma");
    const Eigen::Index B = old_b.mu.rows();
    double c_mu = 0.0, c_sigma = 0.0;
    for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index j = 0; j < old_b.mu.cols(); ++j) {
            const double vi = old_b.sigma(b, j) * old_b.sigma(b, j);
            const double v = new_b.sigma(b, j) * new_b.sigma(b, j);
            const double d = new_b.mu(b, j) - old_b.mu(b, j);
            c_mu += 0.5 * d * d / v;
            c_sigma += 0.5 * (vi / v - 1.0 + std::log(v / vi));
        }
    }
    // each summand is nonnegative; rounding near sigma equality can
    // leave a tiny negative residue
    return {std::max(0.0, c_mu / static_cast<double>(B)),
            std::max(0.0, c_sigma / static_cast<double>(B))};
}

/// Exact KL(old||new) for diagonal Gaussians, row-averaged.
inline double gaussian_kl(const GaussianBatch& old_b, const GaussianBatch& new_b) {
    const auto [cm, cs] = kl_decomposed(old_b, new_b);
    return cm + cs;
}

/**
 * Diagonal-Gaussian policy with separate mean and covariance heads plus
 * target copies. The behavior distribution draws its standard deviation
 * from the TARGET covariance head, which decouples exploration noise
 * from the currently trained covariance; the online density is what the
 * M-step likelihood and KL terms differentiate.
 */
class GaussianPolicy {
public:
    static constexpr double kSigmaFloor = 1e-6;  // keeps per-dim scale strictly positive

    GaussianPolicy() = default;

    GaussianPolicy(int state_dim, int action_dim, const std::vector<int>& hidden, RngStream& rng,
                   Vec act_low = Vec(), Vec act_high = Vec())
        : mean_net(state_dim, hidden, action_dim, rng, 0.1),
          cov_net(state_dim, hidden, action_dim, rng, 0.1),
          mean_target(mean_net),
          cov_target(cov_net),
          low_(std::move(act_low)),
          high_(std::move(act_high)),
          n_(action_dim) {
        if (low_.size() == 0) low_ = Vec::Constant(n_, -1.0);
        if (high_.size() == 0) high_ = Vec::Constant(n_, 1.0);
        require(low_.size() == n_ && high_.size() == n_, "GaussianPolicy: bound dims");
        for (Eigen::Index j = 0; j < n_; ++j)
            require(low_[j] < high_[j] && std::isfinite(low_[j]) && std::isfinite(high_[j]),
                    "GaussianPolicy: invalid action bounds");
    }

    int action_dim() const { return n_; }
    const Vec& act_low() const { return low_; }
    const Vec& act_high() const { return high_; }

    static Mat sigma_from_pre(const Mat& z) {
        Mat s(z.rows(), z.cols());
        for (Eigen::Index i = 0; i < z.rows(); ++i)
            for (Eigen::Index j = 0; j < z.cols(); ++j) s(i, j) = softplus(z(i, j)) + kSigmaFloor;
        return s;
    }

    GaussianBatch online(const Mat& states) const {
        return {mean_net.forward(states), sigma_from_pre(cov_net.forward(states))};
    }

    GaussianBatch behavior(const Mat& states) const {
        return {mean_net.forward(states), sigma_from_pre(cov_target.forward(states))};
    }

    GaussianBatch target(const Mat& states) const {
        return {mean_target.forward(states), sigma_from_pre(cov_target.forward(states))};
    }

    /// K clipped draws from the behavior distribution at one state, K x n.
    Mat sample_actions(const Vec& state, int K, RngStream& rng) const {
        require(K >= 1, "sample_actions: K must be >= 1");
        const GaussianBatch g = behavior(state.transpose());
        Mat out(K, n_);
        for (int k = 0; k < K; ++k)
            for (Eigen::Index j = 0; j < n_; ++j)
                out(k, j) = std::clamp(g.mu(0, j) + g.sigma(0, j) * rng.normal(), low_[j], high_[j]);
        return out;
    }

    /// Stacked draws for a batch: rows b*K..b*K+K-1 belong to state b.
    Mat sample_actions_batch(const Mat& states, int K, RngStream& rng) const {
        const GaussianBatch g = behavior(states);
        Mat out(states.rows() * K, n_);
        for (Eigen::Index b = 0; b < states.rows(); ++b)
            for (int k = 0; k < K; ++k)
                for (Eigen::Index j = 0; j < n_; ++j)
                    out(b * K + k, j) =
                        std::clamp(g.mu(b, j) + g.sigma(b, j) * rng.normal(), low_[j], high_[j]);
        return out;
    }

    /// Unclipped diagonal-Gaussian log density of the online distribution.
    double log_prob(const Vec& state, const Vec& action) const {
        require(action.size() == n_, "log_prob: action dimension mismatch");
        const GaussianBatch g = online(state.transpose());
        return log_density_row(g.mu.row(0), g.sigma.row(0), action.transpose());
    }

    static double log_density_row(const Eigen::RowVectorXd& mu, const Eigen::RowVectorXd& sigma,
                                  const Eigen::RowVectorXd& a) {
        require(sigma.minCoeff() > 0.0, "log density: nonpositive sigma");
        double lp = 0.0;
        for (Eigen::Index j = 0; j < mu.size(); ++j) {
            const double z = (a[j] - mu[j]) / sigma[j];
            lp += -0.5 * std::log(2.0 * M_PI) - std::log(sigma[j]) - 0.5 * z * z;
        }
        return lp;
    }

    /// B x K log densities of flat-stacked actions under per-state params.
    static Mat log_density_matrix(const GaussianBatch& g, const Mat& actions_flat, int K) {
        const Eigen::Index B = g.mu.rows();
        require(actions_flat.rows() == B * K, "log_density_matrix: row count mismatch");
        Mat out(B, K);
        for (Eigen::Index b = 0; b < B; ++b)
            for (int k = 0; k < K; ++k)
                out(b, k) = log_density_row(g.mu.row(b), g.sigma.row(b), actions_flat.row(b * K + k));
        return out;
    }

    void polyak_targets(double rho) {
        mean_target.polyak_from(mean_net, rho);
        cov_target.polyak_from(cov_net, rho);
    }

    Mlp mean_net;
    Mlp cov_net;
    Mlp mean_target;
    Mlp cov_target;

private:
    Vec low_, high_;
    Eigen::Index n_ = 0;
};

/// Softmax policy table for finite CMDPs.
class TabularPolicy {
public:
    TabularPolicy() = default;
    TabularPolicy(int S, int A) : logits(Mat::Zero(S, A)) {}

    static TabularPolicy uniform(int S, int A) { return TabularPolicy(S, A); }

    Mat probs() const {
        Mat p(logits.rows(), logits.cols());
        for (Eigen::Index s = 0; s < logits.rows(); ++s)
            p.row(s) = softmax(logits.row(s).transpose()).transpose();
        return p;
    }

    void set_probs(const Mat& p) {
        require(p.minCoeff() > 0.0, "TabularPolicy: probabilities must be strictly positive");
        logits = p.array().log().matrix();
    }

    int sample(int s, RngStream& rng) const {
        const Vec p = softmax(logits.row(s).transpose());
        const double u = rng.uniform();
        double acc = 0.0;
        for (Eigen::Index a = 0; a < p.size(); ++a) {
            acc += p[a];
            if (u < acc) return static_cast<int>(a);
        }
        return static_cast<int>(p.size()) - 1;
    }

    Mat logits;
};

}  // namespace cvpo
