#include "cvpo/training.hpp"

#include <CLI11.hpp>
#include <glob.h>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace {

std::vector<std::string> expand_glob(const std::string& pattern) {
    glob_t g;
    const int rc = glob(pattern.c_str(), 0, nullptr, &g);
    std::vector<std::string> out;
    if (rc == 0)
        for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    globfree(&g);
    if (rc != 0 && rc != GLOB_NOMATCH)
        throw cvpo::ContractError("plotdata: glob failed on pattern '" + pattern + "'");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"constrained policy optimization lab"};
    app.require_subcommand(1);

    std::string env, algo, config_path, out_dir = "run";
    long long seed = 0;
    std::vector<std::string> overrides;
    CLI::App* train = app.add_subcommand("train", "run one training job");
    train->add_option("--env", env, "grid or circle")->check(CLI::IsMember({"grid", "circle"}));
    train->add_option("--algo", algo, "cvpo or pd")->check(CLI::IsMember({"cvpo", "pd"}));
    train->add_option("--config", config_path, "key=value config file");
    train->add_option("--seed", seed, "run seed");
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--set", overrides, "extra key=value overrides, highest precedence");

    std::string ckpt;
    int episodes = 100;
    long long eval_seed = 0;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a stored checkpoint");
    eval->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    eval->add_option("--episodes", episodes, "episode count")->check(CLI::PositiveNumber);
    eval->add_option("--seed", eval_seed, "evaluation seed");

    std::string in_glob, plot_out;
    CLI::App* plot = app.add_subcommand("plotdata", "condense metrics files for plotting");
    plot->add_option("--in", in_glob, "glob over metrics csv files")->required();
    plot->add_option("--out", plot_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train) {
            cvpo::TrainConfig cfg;
            if (!config_path.empty()) cvpo::load_config_file(cfg, config_path);
            if (train->count("--env")) cfg.env = env;
            if (train->count("--algo")) cfg.algo = algo;
            if (train->count("--seed")) cfg.seed = seed;
            for (const auto& kv : overrides) {
                const auto [k, v] = cvpo::parse_assignment(kv);
                cvpo::apply_config_key(cfg, k, v);
            }
            cfg.validate();
            cvpo::run_training(cfg, out_dir);
            std::printf("metrics %s/metrics.csv\n", out_dir.c_str());
            std::printf("checkpoint %s/ckpt_final\n", out_dir.c_str());
        } else if (*eval) {
            const cvpo::EvalStats st =
                cvpo::evaluate_checkpoint(ckpt, episodes, static_cast<std::uint64_t>(eval_seed));
            std::printf("episodes %d\n", st.episodes);
            std::printf("reward_mean %.10g\n", st.reward_mean);
            std::printf("reward_std %.10g\n", st.reward_std);
            std::printf("cost_mean %.10g\n", st.cost_mean);
            std::printf("cost_std %.10g\n", st.cost_std);
            std::printf("cost_q1 %.10g\n", st.cost_q1);
            std::printf("cost_median %.10g\n", st.cost_median);
            std::printf("cost_q3 %.10g\n", st.cost_q3);
        } else if (*plot) {
            const auto paths = expand_glob(in_glob);
            if (paths.empty())
                throw cvpo::ContractError("plotdata: no files match '" + in_glob + "'");
            std::vector<cvpo::MetricsFile> files;
            files.reserve(paths.size());
            for (const auto& p : paths) files.push_back(cvpo::read_metrics_file(p));
            for (const auto& w : cvpo::emit_plotdata(files, plot_out))
                std::printf("wrote %s\n", w.c_str());
        }
    } catch (const cvpo::NumericalError& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return 3;
    } catch (const cvpo::ContractError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
