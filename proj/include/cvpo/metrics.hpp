#pragma once

#include "cvpo/common.hpp"

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace cvpo {

/// One training-epoch record; written as one CSV row.
struct EpochMetrics {
    int epoch = 0;
    long long env_steps = 0;
    double ep_reward_mean = 0.0;
    double ep_cost_mean = 0.0;
    double cumulative_cost = 0.0;
    double eta = 0.0;
    double lambda = 0.0;
    double beta_mu = 0.0;
    double beta_sigma = 0.0;
    double elbo = 0.0;
    double c_mu = 0.0;
    double c_sigma = 0.0;
    int slater_ok = 1;
    double loss_r = 0.0;
    double loss_c = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,env_steps,ep_reward_mean,ep_cost_mean,cumulative_cost,eta,lambda,"
    "beta_mu,beta_sigma,elbo,c_mu,c_sigma,slater_ok,loss_r,loss_c";

/// Fixed %.10g formatting keeps repeated runs byte-identical.
inline std::string format_metrics_row(const EpochMetrics& m) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%d,%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%d,%.10g,%.10g",
                  m.epoch, m.env_steps, m.ep_reward_mean, m.ep_cost_mean, m.cumulative_cost, m.eta,
                  m.lambda, m.beta_mu, m.beta_sigma, m.elbo, m.c_mu, m.c_sigma, m.slater_ok,
                  m.loss_r, m.loss_c);
    return buf;
}

/**
 * Appending CSV writer with a comment preamble identifying the run.
 * The header line and column order are fixed; consumers reject files
 * whose header differs.
 */
class MetricsWriter {
public:
    MetricsWriter(const std::string& path, const std::string& algo, std::uint64_t seed,
                  const std::string& env)
        : out_(path, std::ios::trunc) {
        require(static_cast<bool>(out_), "metrics: cannot open '" + path + "'");
        out_ << "# algo=" << algo << " seed=" << seed << " env=" << env << "\n";
        out_ << kMetricsHeader << "\n";
    }

    void append(const EpochMetrics& m) {
        const std::string row = format_metrics_row(m);
        if (row.find("nan") != std::string::npos || row.find("inf") != std::string::npos)
            throw NumericalError("metrics: non-finite value in row");
        out_ << row << "\n";
        out_.flush();
    }

private:
    std::ofstream out_;
};

struct MetricsFile {
    std::string algo;
    std::string env;
    std::uint64_t seed = 0;
    std::vector<EpochMetrics> rows;
};

/// Parses a metrics CSV produced by MetricsWriter; the header must match.
inline MetricsFile read_metrics_file(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "metrics: cannot open '" + path + "'");
    MetricsFile f;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::size_t p;
            if ((p = line.find("algo=")) != std::string::npos)
                f.algo = line.substr(p + 5, line.find(' ', p) - (p + 5));
            if ((p = line.find("seed=")) != std::string::npos)
                f.seed = std::strtoull(line.c_str() + p + 5, nullptr, 10);
            if ((p = line.find("env=")) != std::string::npos)
                f.env = line.substr(p + 4, line.find(' ', p) - (p + 4));
            continue;
        }
        if (!header_seen) {
            require(line == kMetricsHeader, "metrics: schema mismatch in '" + path + "'");
            header_seen = true;
            continue;
        }
        EpochMetrics m;
        long long slater = 0;
        const int n = std::sscanf(
            line.c_str(), "%d,%lld,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lld,%lf,%lf", &m.epoch,
            &m.env_steps, &m.ep_reward_mean, &m.ep_cost_mean, &m.cumulative_cost, &m.eta, &m.lambda,
            &m.beta_mu, &m.beta_sigma, &m.elbo, &m.c_mu, &m.c_sigma, &slater, &m.loss_r, &m.loss_c);
        require(n == 15, "metrics: malformed row in '" + path + "'");
        m.slater_ok = static_cast<int>(slater);
        f.rows.push_back(m);
    }
    require(header_seen, "metrics: no header in '" + path + "'");
    return f;
}

}  // namespace cvpo
