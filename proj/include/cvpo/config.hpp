#pragma once

#include "cvpo/common.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace cvpo {

/**
 * Flat key=value run configuration.
 *
 * Defaults follow the reference hyperparameter table; the config file
 * and --set overrides may change any key below. Unknown keys are a hard
 * error so typos cannot silently fall back to defaults.
 *
 *   env                  grid | circle
 *   algo                 cvpo | pd
 *   seed                 uint
 *   epochs               >= 1 training epochs
 *   rollouts_per_epoch   trajectories collected per epoch
 *   updates_per_epoch    critic (and pd actor) update steps per epoch
 *   checkpoint_every     epochs between checkpoints, 0 = final only
 *   buffer_capacity      replay buffer size
 *   batch                B, sampled transitions per update
 *   particles            K, actions per state in the E-step
 *   mstep_iters          M, inner supervised iterations
 *   n_next               next-state action samples in the TD target
 *   gamma                discount
 *   rho                  polyak retention factor
 *   alpha_critic         critic Adam step
 *   alpha_theta          policy Adam step
 *   alpha_mu alpha_sigma KL dual ascent steps
 *   eps2                 E-step KL budget
 *   eps_mu eps_sigma     M-step decoupled KL thresholds
 *   eps_T                per-episode cost budget (converted internally)
 *   hidden               comma list of hidden widths, e.g. 64,64
 *   pid_kp pid_ki pid_kd PID gains (pd baseline)
 */
struct TrainConfig {
    std::string env = "grid";
    std::string algo = "cvpo";
    std::uint64_t seed = 0;
    int epochs = 100;
    int rollouts_per_epoch = 4;
    int updates_per_epoch = 50;
    int checkpoint_every = 0;
    int buffer_capacity = 100000;
    int batch = 300;
    int particles = 32;
    int mstep_iters = 6;
    int n_next = 8;
    double gamma = 0.99;
    double rho = 0.995;
    double alpha_critic = 1e-3;
    double alpha_theta = 2e-3;
    double alpha_mu = 1.0;
    double alpha_sigma = 100.0;
    double eps2 = 0.1;
    double eps_mu = 1e-3;
    double eps_sigma = 1e-4;
    double eps_T = 25.0;
    std::vector<int> hidden = {64, 64};
    double pid_kp = 1.0;
    double pid_ki = 0.1;
    double pid_kd = 0.0;

    void validate() const {
        require(env == "grid" || env == "circle", "config: env must be grid or circle");
        require(algo == "cvpo" || algo == "pd", "config: algo must be cvpo or pd");
        require(epochs >= 1, "config: epochs must be >= 1");
        require(rollouts_per_epoch >= 1, "config: rollouts_per_epoch must be >= 1");
        require(updates_per_epoch >= 1, "config: updates_per_epoch must be >= 1");
        require(checkpoint_every >= 0, "config: checkpoint_every must be >= 0");
        require(buffer_capacity >= 1, "config: buffer_capacity must be >= 1");
        require(batch >= 1, "config: batch must be >= 1");
        require(particles >= 2, "config: particles must be >= 2");
        require(mstep_iters >= 1, "config: mstep_iters must be >= 1");
        require(n_next >= 1, "config: n_next must be >= 1");
        require(gamma >= 0.0 && gamma < 1.0, "config: gamma outside [0,1)");
        require(rho >= 0.0 && rho <= 1.0, "config: rho outside [0,1]");
        require(alpha_critic > 0.0 && alpha_theta > 0.0 && alpha_mu > 0.0 && alpha_sigma > 0.0,
                "config: step sizes must be positive");
        require(eps2 > 0.0 && eps_mu > 0.0 && eps_sigma > 0.0, "config: KL budgets must be positive");
        require(eps_T >= 0.0, "config: eps_T must be nonnegative");
        require(!hidden.empty(), "config: hidden layer list is empty");
        for (int h : hidden) require(h >= 1, "config: hidden widths must be >= 1");
        require(pid_kp >= 0.0 && pid_ki >= 0.0 && pid_kd >= 0.0,
                "config: PID gains must be nonnegative");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline long long to_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &pos);
    } catch (...) {
        throw ContractError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
    if (pos != v.size())
        throw ContractError("config: key '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

inline double to_real(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (...) {
        throw ContractError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
    if (pos != v.size())
        throw ContractError("config: key '" + key + "' expects a number, got '" + v + "'");
    return out;
}

inline std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_int(key, trim(item))));
    if (out.empty()) throw ContractError("config: key '" + key + "' expects a comma list");
    return out;
}

}  // namespace detail

/// Applies one key=value assignment; unknown keys are an error.
inline void apply_config_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
    using detail::to_int;
    using detail::to_int_list;
    using detail::to_real;
    if (key == "env") cfg.env = value;
    else if (key == "algo") cfg.algo = value;
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "epochs") cfg.epochs = static_cast<int>(to_int(key, value));
    else if (key == "rollouts_per_epoch") cfg.rollouts_per_epoch = static_cast<int>(to_int(key, value));
    else if (key == "updates_per_epoch") cfg.updates_per_epoch = static_cast<int>(to_int(key, value));
    else if (key == "checkpoint_every") cfg.checkpoint_every = static_cast<int>(to_int(key, value));
    else if (key == "buffer_capacity") cfg.buffer_capacity = static_cast<int>(to_int(key, value));
    else if (key == "batch") cfg.batch = static_cast<int>(to_int(key, value));
    else if (key == "particles") cfg.particles = static_cast<int>(to_int(key, value));
    else if (key == "mstep_iters") cfg.mstep_iters = static_cast<int>(to_int(key, value));
    else if (key == "n_next") cfg.n_next = static_cast<int>(to_int(key, value));
    else if (key == "gamma") cfg.gamma = to_real(key, value);
    else if (key == "rho") cfg.rho = to_real(key, value);
    else if (key == "alpha_critic") cfg.alpha_critic = to_real(key, value);
    else if (key == "alpha_theta") cfg.alpha_theta = to_real(key, value);
    else if (key == "alpha_mu") cfg.alpha_mu = to_real(key, value);
    else if (key == "alpha_sigma") cfg.alpha_sigma = to_real(key, value);
    else if (key == "eps2") cfg.eps2 = to_real(key, value);
    else if (key == "eps_mu") cfg.eps_mu = to_real(key, value);
    else if (key == "eps_sigma") cfg.eps_sigma = to_real(key, value);
    else if (key == "eps_T") cfg.eps_T = to_real(key, value);
    else if (key == "hidden") cfg.hidden = to_int_list(key, value);
    else if (key == "pid_kp") cfg.pid_kp = to_real(key, value);
    else if (key == "pid_ki") cfg.pid_ki = to_real(key, value);
    else if (key == "pid_kd") cfg.pid_kd = to_real(key, value);
    else throw ContractError("config: unknown key '" + key + "'");
}

/// key=value with optional surrounding whitespace.
inline std::pair<std::string, std::string> parse_assignment(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos)
        throw ContractError("config: expected key=value, got '" + text + "'");
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    if (key.empty()) throw ContractError("config: empty key in '" + text + "'");
    return {key, value};
}

/// Reads a flat key=value file; '#' starts a comment, blank lines skip.
inline void load_config_file(TrainConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("config: cannot open '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        try {
            const auto [k, v] = parse_assignment(line);
            apply_config_key(cfg, k, v);
        } catch (const ContractError& e) {
            throw ContractError(std::string(e.what()) + " (line " + std::to_string(lineno) + " of " +
                                path + ")");
        }
    }
}

/// Canonical serialization, one sorted key per line (diff-able records).
inline std::string config_to_text(const TrainConfig& c) {
    std::map<std::string, std::string> kv;
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        return std::string(buf);
    };
    kv["env"] = c.env;
    kv["algo"] = c.algo;
    kv["seed"] = std::to_string(c.seed);
    kv["epochs"] = std::to_string(c.epochs);
    kv["rollouts_per_epoch"] = std::to_string(c.rollouts_per_epoch);
    kv["updates_per_epoch"] = std::to_string(c.updates_per_epoch);
    kv["checkpoint_every"] = std::to_string(c.checkpoint_every);
    kv["buffer_capacity"] = std::to_string(c.buffer_capacity);
    kv["batch"] = std::to_string(c.batch);
    kv["particles"] = std::to_string(c.particles);
    kv["mstep_iters"] = std::to_string(c.mstep_iters);
    kv["n_next"] = std::to_string(c.n_next);
    kv["gamma"] = num(c.gamma);
    kv["rho"] = num(c.rho);
    kv["alpha_critic"] = num(c.alpha_critic);
    kv["alpha_theta"] = num(c.alpha_theta);
    kv["alpha_mu"] = num(c.alpha_mu);
    kv["alpha_sigma"] = num(c.alpha_sigma);
    kv["eps2"] = num(c.eps2);
    kv["eps_mu"] = num(c.eps_mu);
    kv["eps_sigma"] = num(c.eps_sigma);
    kv["eps_T"] = num(c.eps_T);
    std::string hidden;
    for (std::size_t i = 0; i < c.hidden.size(); ++i)
        hidden += (i ? "," : "") + std::to_string(c.hidden[i]);
    kv["hidden"] = hidden;
    kv["pid_kp"] = num(c.pid_kp);
    kv["pid_ki"] = num(c.pid_ki);
    kv["pid_kd"] = num(c.pid_kd);
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

}  // namespace cvpo
