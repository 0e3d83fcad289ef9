#pragma once

#include "cvpo/baseline_pd.hpp"
#include "cvpo/checkpoint.hpp"
#include "cvpo/config.hpp"
#include "cvpo/critics.hpp"
#include "cvpo/diagnostics.hpp"
#include "cvpo/envs.hpp"
#include "cvpo/estep.hpp"
#include "cvpo/metrics.hpp"
#include "cvpo/mstep.hpp"
#include "cvpo/policy.hpp"
#include "cvpo/tabular_oracle.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace cvpo {

/// Canonical gridworld used by the grid trainers: 5x5, start at the
/// bottom-left corner, goal at the top-right, a three-cell hazard wall
/// in the middle column with gaps on both outer rows.
inline HazardGrid::Params default_grid_params(const TrainConfig& cfg) {
    HazardGrid::Params p;
    p.width = 5;
    p.height = 5;
    p.start = 0;
    p.goal = 24;
    p.hazards = {7, 12, 17};
    p.p_slip = 0.1;
    p.T = 50;
    p.gamma = cfg.gamma;
    p.eps_T = cfg.eps_T;
    return p;
}

inline PointCircle::Params default_circle_params(const TrainConfig& cfg) {
    PointCircle::Params p;
    p.gamma = cfg.gamma;
    p.eps_T = cfg.eps_T;
    return p;
}

// ---------------------------------------------------------------------------
// Policy evaluation

struct EvalStats {
    int episodes = 0;
    double reward_mean = 0.0;
    double reward_std = 0.0;
    double cost_mean = 0.0;
    double cost_std = 0.0;
    double cost_q1 = 0.0;
    double cost_median = 0.0;
    double cost_q3 = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double m = 0.0;
    for (double x : xs) m += x;
    m /= n;
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    return {m, std::sqrt(v / n)};
}

}  // namespace detail

/**
 * Runs `episodes` full episodes and summarizes undiscounted episodic
 * returns. `act(env, rng)` picks the next action from the environment's
 * current state. Fully determined by (policy, seed): episode e resets
 * the environment with mix_seed(seed, e + 1) and all action noise
 * comes from one dedicated stream.
 */
template <class Env, class Act>
EvalStats evaluate_policy(Env& env, Act&& act, int episodes, std::uint64_t seed) {
    require(episodes >= 1, "evaluate_policy: need at least one episode");
    RngStream act_rng(seed, 777);
    std::vector<double> rs, cs;
    rs.reserve(episodes);
    cs.reserve(episodes);
    for (int e = 0; e < episodes; ++e) {
        env.reset(mix_seed(seed, static_cast<std::uint64_t>(e) + 1));
        double R = 0.0, C = 0.0;
        for (;;) {
            const StepResult r = env.step(act(env, act_rng));
            R += r.reward;
            C += r.cost;
            if (r.terminal) break;
        }
        rs.push_back(R);
        cs.push_back(C);
    }
    EvalStats st;
    st.episodes = episodes;
    std::tie(st.reward_mean, st.reward_std) = detail::mean_std(rs);
    std::tie(st.cost_mean, st.cost_std) = detail::mean_std(cs);
    st.cost_q1 = quantile(cs, 0.25);
    st.cost_median = quantile(cs, 0.5);
    st.cost_q3 = quantile(cs, 0.75);
    return st;
}

/// Samples an index from one probability row.
inline int sample_row(const Eigen::RowVectorXd& p, RngStream& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (Eigen::Index a = 0; a + 1 < p.size(); ++a) {
        acc += p[a];
        if (u < acc) return static_cast<int>(a);
    }
    return static_cast<int>(p.size() - 1);
}

/**
 * Bounded view of a raw state for the function approximators: identity
 * near the origin, saturating at +-kObsScale per coordinate. The point
 * mass can drift arbitrarily far out under an untrained policy, and raw
 * coordinates that large make every net step uncontrollable.
 */
inline constexpr double kObsScale = 3.0;

inline Vec squash_obs(const Vec& s) {
    return kObsScale * (s / kObsScale).array().tanh().matrix();
}

/// Canonical stochastic actor for the point-mass task; the policy sees
/// the squashed observation, never the raw state.
inline auto circle_actor(const GaussianPolicy& pol) {
    return [&pol](const PointCircle& e, RngStream& rng) {
        return Vec(pol.sample_actions(squash_obs(e.state()), 1, rng).row(0).transpose());
    };
}

// ---------------------------------------------------------------------------
// Tabular trainers (hazard grid)

/**
 * Variational trainer on the gridworld with every learned quantity
 * replaced by its exact counterpart: critics by a Bellman linear
 * solve, the projection step by the closed-form blend, visitation by
 * the discounted occupancy. One epoch is one full E/M iteration plus
 * a handful of on-policy episodes that feed the metrics row.
 *
 * The per-iteration trace keeps exact returns of the old and new
 * policy, the variational lower bound, and the worst-case cost bound
 * ingredients, so improvement and violation properties can be checked
 * after the fact without re-running anything.
 */
class TabularCvpoTrainer {
public:
    struct IterationTrace {
        double jr_old = 0.0, jc_old = 0.0;  // exact returns before the update
        double jr_new = 0.0, jc_new = 0.0;  // exact returns after the update
        double elbo = 0.0;
        double gain = 0.0;   // occupancy-weighted E_q[Q_r]
        double kl_q = 0.0;   // occupancy-weighted KL(q || pi_new)
        double eta = 0.0, lambda = 0.0;
        double kl_step = 0.0;        // occupancy-weighted KL(pi_old || pi_new)
        double dc = 0.0;             // worst-row cost advantage gap
        double bound = 0.0;          // cost_bound at this iteration
        bool slater_ok = false;      // strictly feasible q exists in the KL ball
        bool used_fallback = false;  // dual flagged infeasible, cost-only weights
    };

    TabularCvpoTrainer(const HazardGrid::Params& gp, const TrainConfig& cfg)
        : cfg_(cfg), env_(gp), model_(env_.to_model()), act_rng_(cfg.seed, 903) {
        pi_ = Mat::Constant(model_.S, model_.A, 1.0 / static_cast<double>(model_.A));
        eps1_ = convert_threshold(cfg.eps_T, gp.T, model_.gamma);
        eps_proj_ = cfg.eps_mu + cfg.eps_sigma;
    }

    double eps1() const { return eps1_; }
    const Mat& policy() const { return pi_; }
    const TabularModel& model() const { return model_; }
    const std::vector<IterationTrace>& trace() const { return trace_; }

    EpochMetrics epoch() {
        ++epoch_;
        double ep_r = 0.0, ep_c = 0.0;
        for (int i = 0; i < cfg_.rollouts_per_epoch; ++i) {
            env_.reset(mix_seed(cfg_.seed, ++episode_));
            double R = 0.0, C = 0.0;
            for (;;) {
                const int a = sample_row(pi_.row(env_.state_index()), act_rng_);
                const StepResult r = env_.step(a);
                R += r.reward;
                C += r.cost;
                ++total_steps_;
                if (r.terminal) break;
            }
            ep_r += R;
            ep_c += C;
        }
        ep_r /= cfg_.rollouts_per_epoch;
        ep_c /= cfg_.rollouts_per_epoch;
        cum_cost_ += ep_c * cfg_.rollouts_per_epoch;

        IterationTrace tr;
        const ExactQ q = exact_policy_eval(model_, pi_);
        tr.jr_old = model_.rho0.dot(q.Vr);
        tr.jc_old = model_.rho0.dot(q.Vc);

        // E-step over all states with particles enumerating the action
        // set. Rows are weighted by the start distribution, which makes
        // the dual's budget row exactly E_{rho0} E_q[Q_c], the
        // discounted cost return the converted threshold speaks about;
        // visitation weighting would leave the budget slack by the
        // cost-to-go profile along the episode.
        ParticleSet ps = ParticleSet::from_values(q.Qr, q.Qc);
        ps.log_base = pi_.array().log().matrix();
        ps.row_weight = model_.rho0;
        ps.validate();

        // certificate before the solve: if even the cheapest weighting
        // inside the KL ball misses the budget the dual has no finite
        // minimizer and the multiplier would walk to its cap
        tr.slater_ok = min_feasible_cost(ps, cfg_.eps2) < eps1_;
        DualSolution sol;
        Mat W;
        bool fallback = !tr.slater_ok;
        if (tr.slater_ok) {
            sol = solve_dual(ps, eps1_, cfg_.eps2);
            if (sol.status == DualStatus::infeasible_detected)
                fallback = true;
            else if (sol.status == DualStatus::max_iter)
                throw NumericalError("tabular trainer: dual solve stalled on a certified instance");
        }
        if (fallback) {
            W = fallback_weights(ps, cfg_.eps2);
            tr.used_fallback = true;
            ++infeasible_streak_;
        } else {
            W = variational_weights(ps, sol);
            infeasible_streak_ = 0;
        }
        tr.eta = sol.eta;
        tr.lambda = sol.lam;
        if (infeasible_streak_ > 20)
            throw NumericalError("tabular trainer: infeasible E-step for more than 20 epochs");

        // M-step: exact projection, cross-entropy weighted by the
        // variational policy's own occupancy
        Vec wq = state_occupancy(model_, W);
        wq /= wq.sum();
        const Mat pi_new = exact_tabular_mstep(W, pi_, eps_proj_, wq);

        double gain = 0.0, kl_q = 0.0, kl_step = 0.0;
        for (int s = 0; s < model_.S; ++s) {
            gain += ps.row_weight[s] * W.row(s).dot(q.Qr.row(s));
            kl_q += ps.row_weight[s] * discrete_kl(W.row(s).transpose(), pi_new.row(s).transpose());
            kl_step += wq[s] * discrete_kl(pi_.row(s).transpose(), pi_new.row(s).transpose());
        }
        tr.elbo = gain - sol.eta * kl_q;
        tr.gain = gain;
        tr.kl_q = kl_q;
        tr.kl_step = kl_step;
        tr.dc = delta_c_tabular(q.Qc, pi_new, pi_);
        tr.bound = cost_bound(eps1_, model_.gamma, eps_proj_, tr.dc);

        // tiny floor keeps log densities finite after extreme tilts
        pi_ = pi_new.cwiseMax(1e-300);
        for (int s = 0; s < model_.S; ++s) pi_.row(s) /= pi_.row(s).sum();
        std::tie(tr.jr_new, tr.jc_new) = exact_returns(model_, pi_);
        trace_.push_back(tr);

        EpochMetrics m;
        m.epoch = epoch_;
        m.env_steps = total_steps_;
        m.ep_reward_mean = ep_r;
        m.ep_cost_mean = ep_c;
        m.cumulative_cost = cum_cost_;
        m.eta = tr.eta;
        m.lambda = tr.lambda;
        m.elbo = tr.elbo;
        m.c_mu = tr.kl_step;
        m.slater_ok = tr.slater_ok ? 1 : 0;
        return m;
    }

    void save(const std::string& dir) const {
        CheckpointWriter wr;
        wr.meta["algo"] = "cvpo";
        wr.meta["env"] = "grid";
        wr.meta["seed"] = cfg_.seed;
        wr.meta["epoch"] = epoch_;
        wr.meta["config"] = config_to_text(cfg_);
        wr.add("policy_table", pi_);
        wr.write(dir);
    }

private:
    TrainConfig cfg_;
    HazardGrid env_;
    TabularModel model_;
    RngStream act_rng_;
    Mat pi_;
    double eps1_ = 0.0, eps_proj_ = 0.0;
    int epoch_ = 0;
    std::uint64_t episode_ = 0;
    long long total_steps_ = 0;
    double cum_cost_ = 0.0;
    int infeasible_streak_ = 0;
    std::vector<IterationTrace> trace_;
};

/**
 * Primal-dual baseline on the gridworld: softmax-parameterized policy,
 * exact policy gradient of r - lambda c, PID-controlled multiplier fed
 * by the exact discounted cost return against the converted budget.
 */
class TabularPdTrainer {
public:
    TabularPdTrainer(const HazardGrid::Params& gp, const TrainConfig& cfg)
        : cfg_(cfg), env_(gp), model_(env_.to_model()), act_rng_(cfg.seed, 903) {
        theta_ = Mat::Zero(model_.S, model_.A);
        eps1_ = convert_threshold(cfg.eps_T, gp.T, model_.gamma);
        pid_.kp = cfg.pid_kp;
        pid_.ki = cfg.pid_ki;
        pid_.kd = cfg.pid_kd;
    }

    double eps1() const { return eps1_; }
    Mat policy() const {
        Mat pi(model_.S, model_.A);
        for (int s = 0; s < model_.S; ++s) pi.row(s) = softmax(theta_.row(s).transpose()).transpose();
        return pi;
    }

    EpochMetrics epoch() {
        ++epoch_;
        const Mat pi = policy();
        double ep_r = 0.0, ep_c = 0.0;
        for (int i = 0; i < cfg_.rollouts_per_epoch; ++i) {
            env_.reset(mix_seed(cfg_.seed, ++episode_));
            double R = 0.0, C = 0.0;
            for (;;) {
                const int a = sample_row(pi.row(env_.state_index()), act_rng_);
                const StepResult r = env_.step(a);
                R += r.reward;
                C += r.cost;
                ++total_steps_;
                if (r.terminal) break;
            }
            ep_r += R;
            ep_c += C;
        }
        ep_r /= cfg_.rollouts_per_epoch;
        ep_c /= cfg_.rollouts_per_epoch;
        cum_cost_ += ep_c * cfg_.rollouts_per_epoch;

        const auto [jr, jc] = exact_returns(model_, pi);
        pid_ = pid_update(pid_, jc, eps1_);
        const Mat payoff = model_.reward - pid_.lambda * model_.cost;
        theta_ += cfg_.alpha_theta * exact_policy_gradient(model_, pi, payoff);

        EpochMetrics m;
        m.epoch = epoch_;
        m.env_steps = total_steps_;
        m.ep_reward_mean = ep_r;
        m.ep_cost_mean = ep_c;
        m.cumulative_cost = cum_cost_;
        m.lambda = pid_.lambda;
        return m;
    }

    void save(const std::string& dir) const {
        CheckpointWriter wr;
        wr.meta["algo"] = "pd";
        wr.meta["env"] = "grid";
        wr.meta["seed"] = cfg_.seed;
        wr.meta["epoch"] = epoch_;
        wr.meta["config"] = config_to_text(cfg_);
        wr.add("policy_table", policy());
        wr.add("logits", theta_);
        Vec pid(3);
        pid << pid_.integral, pid_.prev_error, pid_.lambda;
        wr.add("pid", pid);
        wr.write(dir);
    }

private:
    TrainConfig cfg_;
    HazardGrid env_;
    TabularModel model_;
    RngStream act_rng_;
    Mat theta_;
    PidState pid_;
    double eps1_ = 0.0;
    int epoch_ = 0;
    std::uint64_t episode_ = 0;
    long long total_steps_ = 0;
    double cum_cost_ = 0.0;
};

// ---------------------------------------------------------------------------
// Neural trainers (circle task)

namespace detail {

inline Mat repeat_rows(const Mat& m, int k) {
    Mat out(m.rows() * k, m.cols());
    for (Eigen::Index b = 0; b < m.rows(); ++b)
        for (int j = 0; j < k; ++j) out.row(b * k + j) = m.row(b);
    return out;
}

inline Mat to_bk(const Vec& flat, Eigen::Index B, int K) {
    Mat out(B, K);
    for (Eigen::Index b = 0; b < B; ++b)
        for (int k = 0; k < K; ++k) out(b, k) = flat[b * K + k];
    return out;
}

}  // namespace detail

/**
 * Off-policy variational trainer on the circle task. Per epoch:
 * behavior-policy rollouts into the replay buffer, a block of critic
 * TD steps with Polyak target tracking, then one E/M iteration on a
 * fresh batch. The E-step samples particles from the frozen behavior
 * head and scores them with the target critics; the M-step runs the
 * decoupled-threshold dual-ascent update against the snapshot.
 *
 * Aborts (NumericalError) after more than 20 consecutive epochs with
 * an infeasible E-step, or on any non-finite metric.
 */
class NeuralCvpoTrainer {
public:
    NeuralCvpoTrainer(const PointCircle::Params& ep, const TrainConfig& cfg)
        : cfg_(cfg),
          env_(ep),
          net_rng_(cfg.seed, 910),
          pol_(4, 2, cfg.hidden, net_rng_),
          critics_(4, 2, cfg.hidden, net_rng_),
          buf_(cfg.buffer_capacity),
          upd_rng_(cfg.seed, 911),
          roll_rng_(cfg.seed, 912) {
        mstate_.alpha_mu = cfg.alpha_mu;
        mstate_.alpha_sigma = cfg.alpha_sigma;
        mstate_.alpha_theta = cfg.alpha_theta;
        mstate_.eps_mu = cfg.eps_mu;
        mstate_.eps_sigma = cfg.eps_sigma;
        mstate_.M = cfg.mstep_iters;
        eps1_ = convert_threshold(cfg.eps_T, ep.T, cfg.gamma);
    }

    double eps1() const { return eps1_; }
    const GaussianPolicy& policy() const { return pol_; }

    EpochMetrics epoch() {
        ++epoch_;
        double ep_r = 0.0, ep_c = 0.0;
        for (int i = 0; i < cfg_.rollouts_per_epoch; ++i) {
            Vec s = env_.reset(mix_seed(cfg_.seed, ++episode_));
            double R = 0.0, C = 0.0;
            for (;;) {
                const Vec a = pol_.sample_actions(squash_obs(s), 1, roll_rng_).row(0).transpose();
                const StepResult r = env_.step(a);
                // no absorbing states: episodes end on the clock, so
                // bootstrap through the boundary; the buffer holds
                // squashed observations, which is all the nets ever see
                buf_.push({squash_obs(s), a, squash_obs(r.next_state), r.reward, r.cost, false});
                R += r.reward;
                C += r.cost;
                ++total_steps_;
                s = r.next_state;
                if (r.terminal) break;
            }
            ep_r += R;
            ep_c += C;
        }
        ep_r /= cfg_.rollouts_per_epoch;
        ep_c /= cfg_.rollouts_per_epoch;
        cum_cost_ += ep_c * cfg_.rollouts_per_epoch;

        // one critic step, one E-step, one M-step per gradient step,
        // all on the same sampled batch
        const int K = cfg_.particles;
        double loss_r = 0.0, loss_c = 0.0;
        double elbo = 0.0;
        DualSolution sol;
        MStepReport rep;
        bool slater = false;
        int feasible_updates = 0;
        for (int u = 0; u < cfg_.updates_per_epoch; ++u) {
            const Batch b = buf_.sample_batch(cfg_.batch, upd_rng_);
            const auto sampler = sampler_from_policy(pol_);
            const auto [lr, lc] = td_update(critics_, b, sampler, cfg_.gamma, cfg_.alpha_critic,
                                            cfg_.n_next, upd_rng_);
            loss_r += lr;
            loss_c += lc;

            const GaussianPolicy pol_old = pol_;
            const Mat acts = pol_old.sample_actions_batch(b.states, K, upd_rng_);
            const Mat s_rep = detail::repeat_rows(b.states, K);
            // particles drawn from the snapshot represent it with
            // uniform mass 1/K, so the KL ball in the sampled space is
            // measured against the uniform base (self-normalized
            // importance); a density base would double-count the
            // sampling and skew the temperature search
            ParticleSet ps = ParticleSet::from_values(
                detail::to_bk(critics_.q_reward_target(s_rep, acts), b.states.rows(), K),
                detail::to_bk(critics_.q_cost_target(s_rep, acts), b.states.rows(), K));
            ps.states = b.states;
            ps.actions = acts;
            ps.validate();

            slater = min_feasible_cost(ps, cfg_.eps2) < eps1_;
            bool fallback = !slater;
            if (slater) {
                sol = solve_dual(ps, eps1_, cfg_.eps2);
                if (sol.status == DualStatus::infeasible_detected)
                    fallback = true;
                else if (sol.status == DualStatus::max_iter)
                    throw NumericalError("circle trainer: dual solve stalled on a certified instance");
            }
            Mat W;
            if (fallback) {
                W = fallback_weights(ps, cfg_.eps2);
            } else {
                W = variational_weights(ps, sol);
                ++feasible_updates;
            }

            rep = policy_update(pol_, pol_old, ps, W, mstate_);
            if (u + 1 == cfg_.updates_per_epoch) {
                const Mat log_old = GaussianPolicy::log_density_matrix(pol_old.behavior(b.states), acts, K);
                const Mat log_new = GaussianPolicy::log_density_matrix(pol_.online(b.states), acts, K);
                elbo = elbo_estimate(ps, W, log_new, log_old, sol.eta);
            }
            polyak_update(critics_, &pol_, cfg_.rho);
        }
        loss_r /= cfg_.updates_per_epoch;
        loss_c /= cfg_.updates_per_epoch;

        // an epoch counts toward the cascade only if no gradient step
        // inside it had a feasible E-step
        if (feasible_updates == 0)
            ++infeasible_streak_;
        else
            infeasible_streak_ = 0;
        if (infeasible_streak_ > 20)
            throw NumericalError("circle trainer: infeasible E-step for more than 20 epochs");

        EpochMetrics m;
        m.epoch = epoch_;
        m.env_steps = total_steps_;
        m.ep_reward_mean = ep_r;
        m.ep_cost_mean = ep_c;
        m.cumulative_cost = cum_cost_;
        m.eta = sol.eta;
        m.lambda = sol.lam;
        m.beta_mu = mstate_.beta_mu;
        m.beta_sigma = mstate_.beta_sigma;
        m.elbo = elbo;
        m.c_mu = rep.c_mu;
        m.c_sigma = rep.c_sigma;
        m.slater_ok = slater ? 1 : 0;
        m.loss_r = loss_r;
        m.loss_c = loss_c;
        if (!std::isfinite(m.ep_reward_mean + m.elbo + m.loss_r + m.loss_c + m.eta + m.lambda))
            throw NumericalError("circle trainer: non-finite metric");
        return m;
    }

    void save(const std::string& dir) const {
        CheckpointWriter wr;
        wr.meta["algo"] = "cvpo";
        wr.meta["env"] = "circle";
        wr.meta["seed"] = cfg_.seed;
        wr.meta["epoch"] = epoch_;
        wr.meta["config"] = config_to_text(cfg_);
        wr.add("policy_mean", pol_.mean_net.flatten());
        wr.add("policy_cov", pol_.cov_net.flatten());
        wr.add("policy_mean_target", pol_.mean_target.flatten());
        wr.add("policy_cov_target", pol_.cov_target.flatten());
        wr.add("qr", critics_.qr.flatten());
        wr.add("qc", critics_.qc.flatten());
        wr.add("qr_target", critics_.qr_target.flatten());
        wr.add("qc_target", critics_.qc_target.flatten());
        Vec beta(2);
        beta << mstate_.beta_mu, mstate_.beta_sigma;
        wr.add("mstep_beta", beta);
        wr.write(dir);
    }

private:
    TrainConfig cfg_;
    PointCircle env_;
    RngStream net_rng_;
    GaussianPolicy pol_;
    CriticPair critics_;
    ReplayBuffer buf_;
    RngStream upd_rng_, roll_rng_;
    MStepState mstate_;
    double eps1_ = 0.0;
    int epoch_ = 0;
    std::uint64_t episode_ = 0;
    long long total_steps_ = 0;
    double cum_cost_ = 0.0;
    int infeasible_streak_ = 0;
};

/**
 * Primal-dual baseline on the circle task. Shares the rollout and
 * critic machinery with the variational trainer; the actor ascends
 * Q_r - lambda Q_c through reparameterized draws and the multiplier
 * is a PID controller on mean episodic cost against the episodic
 * budget.
 */
class NeuralPdTrainer {
public:
    NeuralPdTrainer(const PointCircle::Params& ep, const TrainConfig& cfg)
        : cfg_(cfg),
          env_(ep),
          net_rng_(cfg.seed, 910),
          pol_(4, 2, cfg.hidden, net_rng_),
          critics_(4, 2, cfg.hidden, net_rng_),
          buf_(cfg.buffer_capacity),
          upd_rng_(cfg.seed, 911),
          roll_rng_(cfg.seed, 912) {
        pid_.kp = cfg.pid_kp;
        pid_.ki = cfg.pid_ki;
        pid_.kd = cfg.pid_kd;
    }

    const GaussianPolicy& policy() const { return pol_; }

    EpochMetrics epoch() {
        ++epoch_;
        double ep_r = 0.0, ep_c = 0.0;
        for (int i = 0; i < cfg_.rollouts_per_epoch; ++i) {
            Vec s = env_.reset(mix_seed(cfg_.seed, ++episode_));
            double R = 0.0, C = 0.0;
            for (;;) {
                const Vec a = pol_.sample_actions(squash_obs(s), 1, roll_rng_).row(0).transpose();
                const StepResult r = env_.step(a);
                buf_.push({squash_obs(s), a, squash_obs(r.next_state), r.reward, r.cost, false});
                R += r.reward;
                C += r.cost;
                ++total_steps_;
                s = r.next_state;
                if (r.terminal) break;
            }
            ep_r += R;
            ep_c += C;
        }
        ep_r /= cfg_.rollouts_per_epoch;
        ep_c /= cfg_.rollouts_per_epoch;
        cum_cost_ += ep_c * cfg_.rollouts_per_epoch;

        pid_ = pid_update(pid_, ep_c, cfg_.eps_T);

        const auto sampler = sampler_from_policy(pol_);
        double loss_r = 0.0, loss_c = 0.0;
        for (int u = 0; u < cfg_.updates_per_epoch; ++u) {
            const Batch b = buf_.sample_batch(cfg_.batch, upd_rng_);
            const auto [lr, lc] = td_update(critics_, b, sampler, cfg_.gamma, cfg_.alpha_critic,
                                            cfg_.n_next, upd_rng_);
            pd_actor_step(pol_, critics_, b.states, pid_.lambda, cfg_.alpha_theta, upd_rng_);
            polyak_update(critics_, &pol_, cfg_.rho);
            loss_r += lr;
            loss_c += lc;
        }
        loss_r /= cfg_.updates_per_epoch;
        loss_c /= cfg_.updates_per_epoch;

        EpochMetrics m;
        m.epoch = epoch_;
        m.env_steps = total_steps_;
        m.ep_reward_mean = ep_r;
        m.ep_cost_mean = ep_c;
        m.cumulative_cost = cum_cost_;
        m.lambda = pid_.lambda;
        m.loss_r = loss_r;
        m.loss_c = loss_c;
        if (!std::isfinite(m.ep_reward_mean + m.loss_r + m.loss_c + m.lambda))
            throw NumericalError("circle pd trainer: non-finite metric");
        return m;
    }

    void save(const std::string& dir) const {
        CheckpointWriter wr;
        wr.meta["algo"] = "pd";
        wr.meta["env"] = "circle";
        wr.meta["seed"] = cfg_.seed;
        wr.meta["epoch"] = epoch_;
        wr.meta["config"] = config_to_text(cfg_);
        wr.add("policy_mean", pol_.mean_net.flatten());
        wr.add("policy_cov", pol_.cov_net.flatten());
        wr.add("policy_mean_target", pol_.mean_target.flatten());
        wr.add("policy_cov_target", pol_.cov_target.flatten());
        wr.add("qr", critics_.qr.flatten());
        wr.add("qc", critics_.qc.flatten());
        wr.add("qr_target", critics_.qr_target.flatten());
        wr.add("qc_target", critics_.qc_target.flatten());
        Vec pid(3);
        pid << pid_.integral, pid_.prev_error, pid_.lambda;
        wr.add("pid", pid);
        wr.write(dir);
    }

private:
    TrainConfig cfg_;
    PointCircle env_;
    RngStream net_rng_;
    GaussianPolicy pol_;
    CriticPair critics_;
    ReplayBuffer buf_;
    RngStream upd_rng_, roll_rng_;
    PidState pid_;
    int epoch_ = 0;
    std::uint64_t episode_ = 0;
    long long total_steps_ = 0;
    double cum_cost_ = 0.0;
};

// ---------------------------------------------------------------------------
// Run orchestration

/**
 * Full training run: writes `metrics.csv` (one row per epoch),
 * `config.txt` (the resolved configuration), periodic checkpoints when
 * `checkpoint_every` is set, and always `ckpt_final/`. Identical
 * (config, seed) pairs produce byte-identical metrics files.
 */
inline void run_training(const TrainConfig& cfg, const std::string& outdir) {
    cfg.validate();
    std::filesystem::create_directories(outdir);
    {
        std::ofstream out(outdir + "/config.txt");
        out << config_to_text(cfg);
    }
    MetricsWriter mw(outdir + "/metrics.csv", cfg.algo, cfg.seed, cfg.env);

    auto drive = [&](auto& trainer) {
        for (int e = 0; e < cfg.epochs; ++e) {
            mw.append(trainer.epoch());
            if (cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0)
                trainer.save(outdir + "/ckpt_epoch" + std::to_string(e + 1));
        }
        trainer.save(outdir + "/ckpt_final");
    };

    if (cfg.env == "grid" && cfg.algo == "cvpo") {
        TabularCvpoTrainer t(default_grid_params(cfg), cfg);
        drive(t);
    } else if (cfg.env == "grid" && cfg.algo == "pd") {
        TabularPdTrainer t(default_grid_params(cfg), cfg);
        drive(t);
    } else if (cfg.env == "circle" && cfg.algo == "cvpo") {
        NeuralCvpoTrainer t(default_circle_params(cfg), cfg);
        drive(t);
    } else {
        NeuralPdTrainer t(default_circle_params(cfg), cfg);
        drive(t);
    }
}

/// Rebuilds the policy stored in a checkpoint and evaluates it in its
/// own environment. Works for all four (env, algo) combinations.
inline EvalStats evaluate_checkpoint(const std::string& dir, int episodes, std::uint64_t seed) {
    const LoadedCheckpoint ck = load_checkpoint(dir);
    require(ck.meta.contains("env") && ck.meta.contains("config"),
            "checkpoint: missing env or config metadata");
    const std::string env_name = ck.meta.at("env").get<std::string>();
    TrainConfig cfg;
    {
        std::istringstream in(ck.meta.at("config").get<std::string>());
        std::string line;
        while (std::getline(in, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            apply_config_key(cfg, detail::trim(line.substr(0, eq)),
                             detail::trim(line.substr(eq + 1)));
        }
    }

    if (env_name == "grid") {
        const Mat pi = ck.get("policy_table");
        HazardGrid env(default_grid_params(cfg));
        return evaluate_policy(
            env, [&pi](const HazardGrid& e, RngStream& rng) { return sample_row(pi.row(e.state_index()), rng); },
            episodes, seed);
    }
    require(env_name == "circle", "checkpoint: unknown env '" + env_name + "'");
    RngStream dummy(0, 0);
    GaussianPolicy pol(4, 2, cfg.hidden, dummy);
    pol.mean_net.set_from_flat(ck.get_flat("policy_mean"));
    pol.cov_net.set_from_flat(ck.get_flat("policy_cov"));
    pol.mean_target.set_from_flat(ck.get_flat("policy_mean_target"));
    pol.cov_target.set_from_flat(ck.get_flat("policy_cov_target"));
    PointCircle env(default_circle_params(cfg));
    return evaluate_policy(env, circle_actor(pol), episodes, seed);
}

// ---------------------------------------------------------------------------
// Plot data

/**
 * Condenses per-run metrics files into four plot-ready CSVs inside
 * `outdir`:
 *   long.csv            all rows, keyed by (algo, seed, epoch)
 *   agg.csv             per-(algo, epoch) mean and stddev over seeds
 *   reward_vs_cost.csv  reward against cumulative cost per run
 *   window_summary.csv  last-20%-of-epochs summary per run
 * Input files must share the metrics schema; rows are emitted in
 * sorted key order so output bytes do not depend on input order.
 */
inline std::vector<std::string> emit_plotdata(const std::vector<MetricsFile>& files,
                                              const std::string& outdir) {
    require(!files.empty(), "emit_plotdata: no input files");
    std::filesystem::create_directories(outdir);

    std::map<std::pair<std::string, int>, const MetricsFile*> runs;
    for (const auto& f : files) {
        require(!f.rows.empty(), "emit_plotdata: empty metrics file");
        const auto key = std::make_pair(f.algo, f.seed);
        require(!runs.count(key), "emit_plotdata: duplicate (algo, seed) run");
        runs[key] = &f;
    }

    std::vector<std::string> written;
    char buf[512];

    {
        std::ofstream out(outdir + "/long.csv");
        out << "algo,seed,env," << kMetricsHeader << "\n";
        for (const auto& [key, f] : runs)
            for (const auto& r : f->rows)
                out << key.first << "," << key.second << "," << f->env << ","
                    << format_metrics_row(r) << "\n";
        written.push_back(outdir + "/long.csv");
    }

    {
        // per-(algo, epoch) aggregation over seeds
        std::map<std::pair<std::string, int>, std::vector<std::pair<double, double>>> groups;
        for (const auto& [key, f] : runs)
            for (const auto& r : f->rows)
                groups[{key.first, r.epoch}].push_back({r.ep_reward_mean, r.ep_cost_mean});
        std::ofstream out(outdir + "/agg.csv");
        out << "algo,epoch,n_seeds,reward_mean,reward_std,cost_mean,cost_std\n";
        for (const auto& [key, vals] : groups) {
            std::vector<double> rs, cs;
            for (const auto& [r, c] : vals) {
                rs.push_back(r);
                cs.push_back(c);
            }
            const auto [rm, rsd] = detail::mean_std(rs);
            const auto [cm, csd] = detail::mean_std(cs);
            std::snprintf(buf, sizeof buf, "%s,%d,%zu,%.10g,%.10g,%.10g,%.10g", key.first.c_str(),
                          key.second, vals.size(), rm, rsd, cm, csd);
            out << buf << "\n";
        }
        written.push_back(outdir + "/agg.csv");
    }

    {
        std::ofstream out(outdir + "/reward_vs_cost.csv");
        out << "algo,seed,epoch,cumulative_cost,ep_reward_mean\n";
        for (const auto& [key, f] : runs)
            for (const auto& r : f->rows) {
                std::snprintf(buf, sizeof buf, "%s,%d,%d,%.10g,%.10g", key.first.c_str(),
                              key.second, r.epoch, r.cumulative_cost, r.ep_reward_mean);
                out << buf << "\n";
            }
        written.push_back(outdir + "/reward_vs_cost.csv");
    }

    {
        std::ofstream out(outdir + "/window_summary.csv");
        out << "algo,seed,env,window_start,window_end,reward_mean,cost_mean,cost_median,cost_q3\n";
        for (const auto& [key, f] : runs) {
            const int E = static_cast<int>(f->rows.size());
            // last 20% of epochs; for a 100-epoch run this is 81..100
            const int first_idx = (E * 4) / 5;
            std::vector<double> rs, cs;
            for (int i = first_idx; i < E; ++i) {
                rs.push_back(f->rows[i].ep_reward_mean);
                cs.push_back(f->rows[i].ep_cost_mean);
            }
            const auto [rm, unused_r] = detail::mean_std(rs);
            const auto [cm, unused_c] = detail::mean_std(cs);
            std::snprintf(buf, sizeof buf, "%s,%d,%s,%d,%d,%.10g,%.10g,%.10g,%.10g",
                          key.first.c_str(), key.second, f->env.c_str(),
                          f->rows[first_idx].epoch, f->rows[E - 1].epoch, rm, cm,
                          quantile(cs, 0.5), quantile(cs, 0.75));
            out << buf << "\n";
        }
        written.push_back(outdir + "/window_summary.csv");
    }
    return written;
}

}  // namespace cvpo
