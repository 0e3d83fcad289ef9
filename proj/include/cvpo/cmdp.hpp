#pragma once

#include "cvpo/common.hpp"

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

namespace cvpo {

/// One environment interaction.
struct Transition {
    Vec state;
    Vec action;
    Vec next_state;
    double reward = 0.0;
    double cost = 0.0;
    bool terminal = false;
};

struct Trajectory {
    std::vector<Transition> steps;

    double total_reward() const {
        double s = 0.0;
        for (const auto& t : steps) s += t.reward;
        return s;
    }
    double total_cost() const {
        double s = 0.0;
        for (const auto& t : steps) s += t.cost;
        return s;
    }
    std::size_t length() const { return steps.size(); }
};

/// sum_t gamma^t x_t
inline double discounted_sum(const std::vector<double>& xs, double gamma) {
    double acc = 0.0;
    double g = 1.0;
    for (double x : xs) {
        acc += g * x;
        g *= gamma;
    }
    return acc;
}

/**
 * Converts an episodic cost budget into a discounted-return threshold.
 *
 * A per-episode budget eps_T over horizon T corresponds to a constant
 * per-step cost eps_T / T; its discounted value over the episode is
 * eps_T * (1 - gamma^T) / (T * (1 - gamma)).
 */
inline double convert_threshold(double eps_T, int T, double gamma) {
    require(T >= 1, "convert_threshold: T must be >= 1");
    require(gamma >= 0.0 && gamma < 1.0, "convert_threshold: gamma must be in [0,1)");
    require(eps_T >= 0.0, "convert_threshold: eps_T must be >= 0");
    if (T == 1) return eps_T;  // ratio is identically 1
    const double ratio = (1.0 - std::pow(gamma, T)) / (static_cast<double>(T) * (1.0 - gamma));
    return eps_T * ratio;
}

/// Static description of a task: dimensions, action bounds, horizon, budget.
/// For discrete tasks the action is a single index in [0, action_count).
struct CmdpSpec {
    int state_dim = 0;
    int action_dim = 0;
    bool discrete_actions = false;
    int action_count = 0;        // discrete tasks only
    Vec action_low, action_high; // continuous tasks only
    double gamma = 0.99;
    int T = 1;
    double eps_T = 0.0;

    double eps1() const { return convert_threshold(eps_T, T, gamma); }

    void validate() const {
        require(state_dim >= 1, "CmdpSpec: state_dim must be >= 1");
        require(gamma >= 0.0 && gamma < 1.0, "CmdpSpec: gamma must be in [0,1)");
        require(T >= 1, "CmdpSpec: T must be >= 1");
        require(eps_T >= 0.0, "CmdpSpec: eps_T must be >= 0");
        if (discrete_actions) {
            require(action_count >= 2, "CmdpSpec: need at least two actions");
        } else {
            require(action_dim >= 1, "CmdpSpec: action_dim must be >= 1");
            require(action_low.size() == action_dim && action_high.size() == action_dim,
                    "CmdpSpec: bound vectors must match action_dim");
            require((action_low.array() < action_high.array()).all(),
                    "CmdpSpec: action_low must be elementwise below action_high");
        }
    }
};

/// Column-major batch view assembled from sampled transitions.
struct Batch {
    Mat states;      // B x ds
    Mat actions;     // B x da
    Mat next_states; // B x ds
    Vec rewards;     // B
    Vec costs;       // B
    Vec terminals;   // B, 1.0 where episode ended at this step
    std::size_t size() const { return static_cast<std::size_t>(states.rows()); }
};

/**
 * Fixed-capacity FIFO transition store.
 *
 * Once full, each push evicts the oldest transition. Batches are drawn
 * uniformly without replacement, so a batch never contains the same
 * stored transition twice.
 */
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity), head_(0) {
        require(capacity > 0, "ReplayBuffer: capacity must be positive");
        data_.reserve(capacity);
    }

    void push(Transition t) {
        if (state_dim_ < 0) {
            state_dim_ = static_cast<int>(t.state.size());
            action_dim_ = static_cast<int>(t.action.size());
        }
        require(static_cast<int>(t.state.size()) == state_dim_ &&
                    static_cast<int>(t.next_state.size()) == state_dim_ &&
                    static_cast<int>(t.action.size()) == action_dim_,
                "ReplayBuffer: transition dimensions do not match stored data");
        if (data_.size() < capacity_) {
            data_.push_back(std::move(t));
        } else {
            data_[head_] = std::move(t);
            head_ = (head_ + 1) % capacity_;
        }
    }

    void push_trajectory(const Trajectory& traj) {
        for (const auto& t : traj.steps) push(t);
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Transition& at(std::size_t i) const { return data_[i]; }

    /// n distinct indices, uniform over the current contents.
    std::vector<std::size_t> sample_indices(std::size_t n, RngStream& rng) const {
        require(n <= data_.size(), "ReplayBuffer: batch larger than stored data");
        std::vector<std::size_t> idx(data_.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = i + rng.uniform_index(idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(n);
        return idx;
    }

    Batch sample_batch(std::size_t n, RngStream& rng) const {
        const auto idx = sample_indices(n, rng);
        Batch b;
        const auto ds = data_[idx[0]].state.size();
        const auto da = data_[idx[0]].action.size();
        b.states.resize(static_cast<Eigen::Index>(n), ds);
        b.actions.resize(static_cast<Eigen::Index>(n), da);
        b.next_states.resize(static_cast<Eigen::Index>(n), ds);
        b.rewards.resize(static_cast<Eigen::Index>(n));
        b.costs.resize(static_cast<Eigen::Index>(n));
        b.terminals.resize(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const Transition& t = data_[idx[i]];
            b.states.row(static_cast<Eigen::Index>(i)) = t.state.transpose();
            b.actions.row(static_cast<Eigen::Index>(i)) = t.action.transpose();
            b.next_states.row(static_cast<Eigen::Index>(i)) = t.next_state.transpose();
            b.rewards[static_cast<Eigen::Index>(i)] = t.reward;
            b.costs[static_cast<Eigen::Index>(i)] = t.cost;
            b.terminals[static_cast<Eigen::Index>(i)] = t.terminal ? 1.0 : 0.0;
        }
        return b;
    }

private:
    std::size_t capacity_;
    std::size_t head_;  // next eviction slot once full
    int state_dim_ = -1;   // fixed by the first push
    int action_dim_ = -1;
    std::vector<Transition> data_;
};

}  // namespace cvpo
