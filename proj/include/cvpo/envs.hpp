#pragma once

#include "cvpo/cmdp.hpp"
#include "cvpo/common.hpp"
#include "cvpo/tabular_model.hpp"

#include <array>
#include <set>
#include <utility>

namespace cvpo {

struct StepResult {
    Vec next_state;
    double reward = 0.0;
    double cost = 0.0;
    bool terminal = false;
};

/**
 * Hazard gridworld.
 *
 * Cells are indexed s = y * width + x. Actions 0..3 move right, up,
 * left, down. With probability p_slip the move deflects to one of the
 * two perpendicular directions (p_slip/2 each). Off-grid moves stay in
 * place. Entering a hazard cell costs 1; entering the goal rewards 1
 * and ends the episode. The goal is absorbing in the tabular model so
 * discounted values match episodic rollouts.
 */
class HazardGrid {
public:
    struct Params {
        int width = 5;
        int height = 5;
        int start = 0;
        int goal = 24;
        std::set<int> hazards;
        double p_slip = 0.1;
        double gamma = 0.95;
        int T = 50;
        double eps_T = 1.0;  // per-episode cost budget
    };

    explicit HazardGrid(Params p) : p_(std::move(p)) {
        require(p_.width >= 2 && p_.width <= 8 && p_.height >= 2 && p_.height <= 8,
                "HazardGrid: side lengths must be in [2,8]");
        require(p_.p_slip >= 0.0 && p_.p_slip < 1.0, "HazardGrid: p_slip outside [0,1)");
        require(valid_cell(p_.start) && valid_cell(p_.goal), "HazardGrid: start/goal off grid");
        require(p_.start != p_.goal, "HazardGrid: start equals goal");
        require(!p_.hazards.count(p_.start) && !p_.hazards.count(p_.goal),
                "HazardGrid: start/goal cell marked hazardous");
        for (int h : p_.hazards) require(valid_cell(h), "HazardGrid: hazard off grid");
        require(p_.T >= 1 && p_.gamma > 0.0 && p_.gamma < 1.0 && p_.eps_T >= 0.0,
                "HazardGrid: invalid horizon/discount/budget");
    }

    const Params& params() const { return p_; }
    int state_count() const { return p_.width * p_.height; }
    static constexpr int action_count() { return 4; }

    CmdpSpec spec() const {
        CmdpSpec c;
        c.state_dim = 1;
        c.discrete_actions = true;
        c.action_count = 4;
        c.gamma = p_.gamma;
        c.T = p_.T;
        c.eps_T = p_.eps_T;
        return c;
    }

    Vec reset(std::uint64_t seed) {
        rng_ = RngStream(seed, 901);
        t_ = 0;
        done_ = false;
        s_ = p_.start;
        return encode(s_);
    }

    StepResult step(int action) {
        require(!done_, "HazardGrid: step after terminal");
        require(action >= 0 && action < 4, "HazardGrid: action out of range");
        const int next = sample_next(s_, action, rng_);
        StepResult r;
        r.reward = (next == p_.goal) ? 1.0 : 0.0;
        r.cost = p_.hazards.count(next) ? 1.0 : 0.0;
        s_ = next;
        ++t_;
        done_ = (next == p_.goal) || (t_ >= p_.T);
        r.terminal = done_;
        r.next_state = encode(next);
        return r;
    }

    int state_index() const { return s_; }

    /// Exact infinite-horizon model with the goal made absorbing.
    TabularModel to_model() const {
        TabularModel m;
        m.S = state_count();
        m.A = 4;
        m.gamma = p_.gamma;
        m.P.assign(4, Mat::Zero(m.S, m.S));
        m.reward = Mat::Zero(m.S, 4);
        m.cost = Mat::Zero(m.S, 4);
        m.rho0 = Vec::Zero(m.S);
        m.rho0[p_.start] = 1.0;
        for (int s = 0; s < m.S; ++s) {
            for (int a = 0; a < 4; ++a) {
                if (s == p_.goal) {
                    m.P[a](s, s) = 1.0;
                    continue;
                }
                for (const auto& [sn, pr] : outcome_distribution(s, a)) {
                    m.P[a](s, sn) += pr;
                    if (sn == p_.goal) m.reward(s, a) += pr;
                    if (p_.hazards.count(sn)) m.cost(s, a) += pr;
                }
            }
        }
        m.validate();
        return m;
    }

    /// Per-(s,a) next-state support with probabilities, before any sampling.
    std::vector<std::pair<int, double>> outcome_distribution(int s, int action) const {
        // perpendicular pairs: moves 0/2 are horizontal, 1/3 vertical
        const int perp1 = (action % 2 == 0) ? 1 : 0;
        const int perp2 = (action % 2 == 0) ? 3 : 2;
        std::vector<std::pair<int, double>> out;
        out.emplace_back(move(s, action), 1.0 - p_.p_slip);
        out.emplace_back(move(s, perp1), p_.p_slip / 2.0);
        out.emplace_back(move(s, perp2), p_.p_slip / 2.0);
        return out;
    }

    static Vec encode(int s) {
        Vec v(1);
        v[0] = static_cast<double>(s);
        return v;
    }

private:
    bool valid_cell(int s) const { return s >= 0 && s < state_count(); }

    int move(int s, int action) const {
        int x = s % p_.width;
        int y = s / p_.width;
        switch (action) {
            case 0: x += 1; break;
            case 1: y += 1; break;
            case 2: x -= 1; break;
            default: y -= 1; break;
        }
        if (x < 0 || x >= p_.width || y < 0 || y >= p_.height) return s;
        return y * p_.width + x;
    }

    int sample_next(int s, int action, RngStream& rng) const {
        const double u = rng.uniform();
        double acc = 0.0;
        const auto dist = outcome_distribution(s, action);
        for (const auto& [sn, pr] : dist) {
            acc += pr;
            if (u < acc) return sn;
        }
        return dist.back().first;
    }

    Params p_;
    RngStream rng_;
    int s_ = 0;
    int t_ = 0;
    bool done_ = false;
};

/**
 * Planar point mass rewarded for circulating along a ring of radius R.
 *
 * State (x, y, vx, vy); action is a 2-D acceleration clipped to
 * [-1,1]^2. Explicit Euler, position first: p += v*dt, then v += a*dt.
 * Reward is evaluated at the pre-step state,
 *     r = (-y*vx + x*vy) / (1 + | ||(x,y)|| - R |),
 * so circulating counterclockwise on the ring yields r ~ speed. Cost is
 * 1 whenever the post-step |x| exceeds x_lim. Episodes run exactly T
 * steps.
 */
class PointCircle {
public:
    struct Params {
        double R = 1.0;
        double x_lim = 0.7;
        double dt = 0.1;
        double gamma = 0.99;
        int T = 300;
        double eps_T = 25.0;
        double init_sigma = 0.05;  // truncated at +-0.1
    };

    explicit PointCircle(Params p) : p_(p) {
        require(p_.R > 0.0 && p_.x_lim > 0.0 && p_.dt > 0.0, "PointCircle: nonpositive constant");
        require(p_.T >= 1 && p_.gamma > 0.0 && p_.gamma < 1.0 && p_.eps_T >= 0.0,
                "PointCircle: invalid horizon/discount/budget");
    }

    const Params& params() const { return p_; }
    static constexpr int state_dim() { return 4; }
    static constexpr int action_dim() { return 2; }

    CmdpSpec spec() const {
        CmdpSpec c;
        c.state_dim = 4;
        c.action_dim = 2;
        c.action_low = Vec::Constant(2, -1.0);
        c.action_high = Vec::Constant(2, 1.0);
        c.gamma = p_.gamma;
        c.T = p_.T;
        c.eps_T = p_.eps_T;
        return c;
    }

    Vec reset(std::uint64_t seed) {
        rng_ = RngStream(seed, 902);
        t_ = 0;
        done_ = false;
        s_.resize(4);
        s_[0] = std::clamp(rng_.normal(0.0, p_.init_sigma), -0.1, 0.1);
        s_[1] = std::clamp(rng_.normal(0.0, p_.init_sigma), -0.1, 0.1);
        s_[2] = 0.0;
        s_[3] = 0.0;
        return s_;
    }

    /// Pure transition, usable without touching the episode state.
    StepResult simulate(const Vec& state, const Vec& action) const {
        require(state.size() == 4 && action.size() == 2, "PointCircle: dimension mismatch");
        const double ax = std::clamp(action[0], -1.0, 1.0);
        const double ay = std::clamp(action[1], -1.0, 1.0);
        StepResult r;
        r.reward = reward_at(state);
        Vec n(4);
        n[0] = state[0] + state[2] * p_.dt;
        n[1] = state[1] + state[3] * p_.dt;
        n[2] = state[2] + ax * p_.dt;
        n[3] = state[3] + ay * p_.dt;
        r.cost = (std::abs(n[0]) > p_.x_lim) ? 1.0 : 0.0;
        r.next_state = std::move(n);
        return r;
    }

    StepResult step(const Vec& action) {
        require(!done_, "PointCircle: step after terminal");
        StepResult r = simulate(s_, action);
        s_ = r.next_state;
        ++t_;
        done_ = (t_ >= p_.T);
        r.terminal = done_;
        return r;
    }

    double reward_at(const Vec& state) const {
        const double x = state[0], y = state[1], vx = state[2], vy = state[3];
        const double ring_gap = std::abs(std::hypot(x, y) - p_.R);
        return (-y * vx + x * vy) / (1.0 + ring_gap);
    }

    const Vec& state() const { return s_; }

private:
    Params p_;
    RngStream rng_;
    Vec s_;
    int t_ = 0;
    bool done_ = false;
};

}  // namespace cvpo
