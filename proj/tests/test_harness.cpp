#include "cvpo/checkpoint.hpp"
#include "cvpo/config.hpp"
#include "cvpo/metrics.hpp"
#include "cvpo/training.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cvpo;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    EXPECT_TRUE(in.good()) << path;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string temp_dir(const std::string& tag) {
    const auto d = std::filesystem::temp_directory_path() / ("cvpo_harness_" + tag);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d.string();
}

TrainConfig tiny_circle_cfg() {
    TrainConfig cfg;
    cfg.env = "circle";
    cfg.algo = "cvpo";
    cfg.epochs = 2;
    cfg.rollouts_per_epoch = 1;
    cfg.updates_per_epoch = 2;
    cfg.batch = 32;
    cfg.particles = 8;
    cfg.mstep_iters = 2;
    cfg.n_next = 2;
    cfg.hidden = {16};
    cfg.buffer_capacity = 10000;
    return cfg;
}

}  // namespace

// --- configuration ---------------------------------------------------------

TEST(Config, DocumentedDefaults) {
    const TrainConfig cfg;
    EXPECT_EQ(cfg.env, "grid");
    EXPECT_EQ(cfg.algo, "cvpo");
    EXPECT_EQ(cfg.epochs, 100);
    EXPECT_EQ(cfg.batch, 300);
    EXPECT_EQ(cfg.particles, 32);
    EXPECT_EQ(cfg.mstep_iters, 6);
    EXPECT_EQ(cfg.n_next, 8);
    EXPECT_DOUBLE_EQ(cfg.gamma, 0.99);
    EXPECT_DOUBLE_EQ(cfg.rho, 0.995);
    EXPECT_DOUBLE_EQ(cfg.alpha_critic, 1e-3);
    EXPECT_DOUBLE_EQ(cfg.alpha_theta, 2e-3);
    EXPECT_DOUBLE_EQ(cfg.alpha_mu, 1.0);
    EXPECT_DOUBLE_EQ(cfg.alpha_sigma, 100.0);
    EXPECT_DOUBLE_EQ(cfg.eps2, 0.1);
    EXPECT_DOUBLE_EQ(cfg.eps_mu, 1e-3);
    EXPECT_DOUBLE_EQ(cfg.eps_sigma, 1e-4);
    EXPECT_EQ(cfg.hidden, (std::vector<int>{64, 64}));
    EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, TextRoundTrip) {
    TrainConfig cfg;
    cfg.env = "circle";
    cfg.algo = "pd";
    cfg.seed = 42;
    cfg.gamma = 0.97;
    cfg.hidden = {32, 16, 8};
    const std::string text = config_to_text(cfg);

    TrainConfig back;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto [k, v] = parse_assignment(line);
        apply_config_key(back, k, v);
    }
    EXPECT_EQ(config_to_text(back), text);
    EXPECT_EQ(back.hidden, cfg.hidden);
    EXPECT_DOUBLE_EQ(back.gamma, 0.97);
}

TEST(Config, UnknownKeyAndBadValuesThrow) {
    TrainConfig cfg;
    EXPECT_THROW(apply_config_key(cfg, "not_a_key", "1"), ContractError);
    EXPECT_THROW(apply_config_key(cfg, "gamma", "zebra"), ContractError);
    EXPECT_THROW(apply_config_key(cfg, "epochs", "2.5"), ContractError);
    EXPECT_THROW(apply_config_key(cfg, "hidden", "64,,64"), ContractError);
    EXPECT_NO_THROW(apply_config_key(cfg, "hidden", "64,64"));
    EXPECT_EQ(cfg.hidden, (std::vector<int>{64, 64}));
}

TEST(Config, FileParsingSkipsCommentsAndReportsLines) {
    const std::string dir = temp_dir("cfgfile");
    {
        std::ofstream out(dir + "/a.cfg");
        out << "# comment line\n"
            << "\n"
            << "gamma = 0.9\n"
            << "  seed=3  \n";
    }
    TrainConfig cfg;
    load_config_file(cfg, dir + "/a.cfg");
    EXPECT_DOUBLE_EQ(cfg.gamma, 0.9);
    EXPECT_EQ(cfg.seed, 3);

    {
        std::ofstream out(dir + "/b.cfg");
        out << "gamma = 0.9\n"
            << "broken line without equals\n";
    }
    try {
        load_config_file(cfg, dir + "/b.cfg");
        FAIL() << "expected parse error";
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
}

TEST(Config, ValidateRejectsBadRanges) {
    TrainConfig cfg;
    cfg.gamma = 1.0;
    EXPECT_THROW(cfg.validate(), ContractError);
    cfg = TrainConfig{};
    cfg.env = "moon";
    EXPECT_THROW(cfg.validate(), ContractError);
    cfg = TrainConfig{};
    cfg.batch = 0;
    EXPECT_THROW(cfg.validate(), ContractError);
    cfg = TrainConfig{};
    cfg.particles = 1;
    EXPECT_THROW(cfg.validate(), ContractError);
}

// --- metrics ---------------------------------------------------------------

TEST(Metrics, WriteReadRoundTrip) {
    const std::string dir = temp_dir("metrics");
    const std::string path = dir + "/m.csv";
    {
        MetricsWriter mw(path, "cvpo", 5, "grid");
        EpochMetrics m;
        m.epoch = 1;
        m.env_steps = 120;
        m.ep_reward_mean = 0.5;
        m.ep_cost_mean = 1.25;
        m.cumulative_cost = 5.0;
        m.eta = 2.0;
        m.lambda = 0.25;
        m.elbo = -3.5;
        m.slater_ok = 0;
        mw.append(m);
        m.epoch = 2;
        m.env_steps = 240;
        m.cumulative_cost = 7.5;
        m.slater_ok = 1;
        mw.append(m);
    }
    const MetricsFile f = read_metrics_file(path);
    EXPECT_EQ(f.algo, "cvpo");
    EXPECT_EQ(f.seed, 5);
    EXPECT_EQ(f.env, "grid");
    ASSERT_EQ(f.rows.size(), 2u);
    EXPECT_EQ(f.rows[0].epoch, 1);
    EXPECT_EQ(f.rows[0].env_steps, 120);
    EXPECT_DOUBLE_EQ(f.rows[0].ep_cost_mean, 1.25);
    EXPECT_DOUBLE_EQ(f.rows[0].lambda, 0.25);
    EXPECT_EQ(f.rows[0].slater_ok, 0);
    EXPECT_EQ(f.rows[1].slater_ok, 1);
    EXPECT_DOUBLE_EQ(f.rows[1].cumulative_cost, 7.5);
}

TEST(Metrics, NonFiniteRowRejected) {
    const std::string dir = temp_dir("metrics_nan");
    MetricsWriter mw(dir + "/m.csv", "pd", 0, "circle");
    EpochMetrics m;
    m.epoch = 1;
    m.elbo = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(mw.append(m), NumericalError);
}

TEST(Metrics, IdenticalRowsGiveIdenticalBytes) {
    const std::string dir = temp_dir("metrics_det");
    auto write_one = [&](const std::string& path) {
        MetricsWriter mw(path, "cvpo", 11, "grid");
        for (int e = 1; e <= 3; ++e) {
            EpochMetrics m;
            m.epoch = e;
            m.env_steps = 100LL * e;
            m.ep_reward_mean = 1.0 / 3.0 + e;
            m.eta = 0.123456789123;
            mw.append(m);
        }
    };
    write_one(dir + "/a.csv");
    write_one(dir + "/b.csv");
    EXPECT_EQ(slurp(dir + "/a.csv"), slurp(dir + "/b.csv"));
}

TEST(Metrics, SchemaMismatchIsAnError) {
    const std::string dir = temp_dir("metrics_schema");
    const std::string path = dir + "/m.csv";
    {
        MetricsWriter mw(path, "cvpo", 0, "grid");
        EpochMetrics m;
        m.epoch = 1;
        mw.append(m);
    }
    std::string text = slurp(path);
    const auto pos = text.find("ep_reward_mean");
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 14, "mean_reward_ep");
    {
        std::ofstream out(path, std::ios::binary);
        out << text;
    }
    EXPECT_THROW(read_metrics_file(path), ContractError);
}

// --- checkpoints -----------------------------------------------------------

TEST(Checkpoint, ArrayRoundTripIsExact) {
    const std::string dir = temp_dir("ckpt");
    RngStream rng(3, 0);
    Mat m(3, 4);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    Vec v(7);
    for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-5.0, 5.0);

    CheckpointWriter wr;
    wr.meta["algo"] = "cvpo";
    wr.meta["note"] = 17;
    wr.add("weights", m);
    wr.add("flat", v);
    wr.write(dir + "/c");

    const LoadedCheckpoint ck = load_checkpoint(dir + "/c");
    EXPECT_EQ(ck.meta.at("algo").get<std::string>(), "cvpo");
    EXPECT_EQ(ck.meta.at("note").get<int>(), 17);
    ASSERT_EQ(ck.get("weights").rows(), 3);
    ASSERT_EQ(ck.get("weights").cols(), 4);
    EXPECT_EQ((ck.get("weights") - m).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((ck.get_flat("flat") - v).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_THROW(ck.get("absent"), ContractError);
}

TEST(Checkpoint, BufferJsonRoundTripAndFieldOrder) {
    const std::string dir = temp_dir("buf");
    ReplayBuffer buf(8);
    RngStream rng(9, 0);
    for (int i = 0; i < 3; ++i) {
        Transition t;
        t.state = Vec::Constant(2, i);
        t.action = Vec::Constant(1, 0.5 * i);
        t.next_state = Vec::Constant(2, i + 1);
        t.reward = rng.normal();
        t.cost = std::abs(rng.normal());
        t.terminal = (i == 2);
        buf.push(t);
    }
    save_buffer_json(dir + "/buf.json", buf);

    const std::string text = slurp(dir + "/buf.json");
    const auto p_state = text.find("\"state\"");
    const auto p_action = text.find("\"action\"");
    const auto p_next = text.find("\"next_state\"");
    const auto p_reward = text.find("\"reward\"");
    const auto p_cost = text.find("\"cost\"");
    const auto p_term = text.find("\"terminal\"");
    ASSERT_NE(p_state, std::string::npos);
    EXPECT_LT(p_state, p_action);
    EXPECT_LT(p_action, p_next);
    EXPECT_LT(p_next, p_reward);
    EXPECT_LT(p_reward, p_cost);
    EXPECT_LT(p_cost, p_term);

    const ReplayBuffer back = load_buffer_json(dir + "/buf.json");
    ASSERT_EQ(back.size(), 3u);
    const Batch all = back.sample_batch(3, rng);
    EXPECT_TRUE(all.states.allFinite());
    bool found_terminal = false;
    for (std::size_t i = 0; i < 3; ++i) found_terminal = found_terminal || all.terminals[i] == 1.0;
    EXPECT_TRUE(found_terminal);
}

// --- policy evaluation -----------------------------------------------------

TEST(Eval, DeterministicGridPathHasZeroSpread) {
    HazardGrid::Params gp;
    gp.hazards = {7, 12, 17};
    gp.p_slip = 0.0;
    HazardGrid env(gp);
    // right along the bottom row, then up the last column: avoids the wall
    auto act = [&](const HazardGrid& e, RngStream&) {
        const int s = e.state_index();
        return (s % gp.width < gp.width - 1) ? 0 : 1;
    };
    const EvalStats st = evaluate_policy(env, act, 5, 123);
    EXPECT_EQ(st.episodes, 5);
    EXPECT_DOUBLE_EQ(st.reward_mean, 1.0);
    EXPECT_DOUBLE_EQ(st.reward_std, 0.0);
    EXPECT_DOUBLE_EQ(st.cost_mean, 0.0);
    EXPECT_DOUBLE_EQ(st.cost_std, 0.0);
    EXPECT_DOUBLE_EQ(st.cost_q1, 0.0);
    EXPECT_DOUBLE_EQ(st.cost_median, 0.0);
    EXPECT_DOUBLE_EQ(st.cost_q3, 0.0);
}

TEST(Eval, SingleEpisodeQuartilesCoincide) {
    HazardGrid::Params gp;
    gp.hazards = {6};
    gp.p_slip = 0.0;
    HazardGrid env(gp);
    // diagonal staircase: passes through the hazard at (1,1)
    auto act = [&](const HazardGrid& e, RngStream&) {
        const int s = e.state_index();
        return (s % gp.width <= s / gp.width) ? 0 : 1;
    };
    const EvalStats st = evaluate_policy(env, act, 1, 7);
    EXPECT_DOUBLE_EQ(st.cost_mean, 1.0);
    EXPECT_DOUBLE_EQ(st.cost_q1, st.cost_median);
    EXPECT_DOUBLE_EQ(st.cost_median, st.cost_q3);
    EXPECT_DOUBLE_EQ(st.cost_q3, 1.0);
}

TEST(Eval, SameSeedReproducesStochasticRollouts) {
    HazardGrid::Params gp;
    gp.hazards = {7, 12, 17};
    HazardGrid env(gp);
    auto uniform_act = [](const HazardGrid&, RngStream& rng) {
        return static_cast<int>(rng.uniform_index(4));
    };
    const EvalStats a = evaluate_policy(env, uniform_act, 50, 31);
    const EvalStats b = evaluate_policy(env, uniform_act, 50, 31);
    EXPECT_EQ(a.reward_mean, b.reward_mean);
    EXPECT_EQ(a.cost_mean, b.cost_mean);
    EXPECT_EQ(a.cost_q3, b.cost_q3);
    const EvalStats c = evaluate_policy(env, uniform_act, 50, 32);
    EXPECT_NE(a.cost_mean, c.cost_mean);
}

TEST(Eval, UniformPolicyCostMatchesFiniteHorizonChain) {
    HazardGrid::Params gp;
    gp.hazards = {7, 12, 17};
    gp.p_slip = 0.1;
    gp.T = 50;
    HazardGrid env(gp);
    const TabularModel m = env.to_model();

    // expected episodic cost of the uniform policy: push the start
    // distribution through the mean chain for T steps (goal absorbing
    // with zero cost, so truncation at T matches episode termination)
    Mat P_pi = Mat::Zero(m.S, m.S);
    Vec c_pi = Vec::Zero(m.S);
    for (int a = 0; a < m.A; ++a) {
        P_pi += m.P[a] / static_cast<double>(m.A);
        c_pi += m.cost.col(a) / static_cast<double>(m.A);
    }
    Vec d = m.rho0;
    double expect_cost = 0.0;
    for (int t = 0; t < gp.T; ++t) {
        expect_cost += d.dot(c_pi);
        d = P_pi.transpose() * d;
    }

    auto uniform_act = [](const HazardGrid&, RngStream& rng) {
        return static_cast<int>(rng.uniform_index(4));
    };
    const int n = 4000;
    const EvalStats st = evaluate_policy(env, uniform_act, n, 99);
    const double tol = 4.0 * st.cost_std / std::sqrt(static_cast<double>(n));
    EXPECT_NEAR(st.cost_mean, expect_cost, tol)
        << "exact " << expect_cost << " mc " << st.cost_mean;
}

TEST(Eval, CircleEpisodesRunTheFullClock) {
    TrainConfig cfg = tiny_circle_cfg();
    PointCircle env(default_circle_params(cfg));
    RngStream rng(1, 0);
    GaussianPolicy pol(4, 2, cfg.hidden, rng);
    auto act = [&](const PointCircle& e, RngStream& r) {
        return Vec(pol.sample_actions(e.state(), 1, r).row(0).transpose());
    };
    const EvalStats a = evaluate_policy(env, act, 3, 5);
    const EvalStats b = evaluate_policy(env, act, 3, 5);
    EXPECT_EQ(a.reward_mean, b.reward_mean);
    EXPECT_TRUE(std::isfinite(a.reward_mean));
    EXPECT_GE(a.cost_mean, 0.0);
    EXPECT_LE(a.cost_mean, 300.0);
}

// --- trainers --------------------------------------------------------------

TEST(Train, TabularVariationalSmoke) {
    TrainConfig cfg;
    cfg.env = "grid";
    cfg.epochs = 5;
    cfg.rollouts_per_epoch = 2;
    cfg.eps_T = 1.0;
    TabularCvpoTrainer tr(default_grid_params(cfg), cfg);
    EXPECT_GT(tr.eps1(), 0.0);
    long long prev_steps = 0;
    double prev_cum = 0.0;
    for (int e = 1; e <= cfg.epochs; ++e) {
        const EpochMetrics m = tr.epoch();
        EXPECT_EQ(m.epoch, e);
        EXPECT_GT(m.env_steps, prev_steps);
        EXPECT_GE(m.cumulative_cost, prev_cum);
        EXPECT_TRUE(std::isfinite(m.elbo));
        EXPECT_TRUE(std::isfinite(m.eta));
        EXPECT_GE(m.lambda, 0.0);
        prev_steps = m.env_steps;
        prev_cum = m.cumulative_cost;
    }
    ASSERT_EQ(tr.trace().size(), 5u);
    for (const auto& t : tr.trace()) {
        EXPECT_TRUE(std::isfinite(t.jr_new));
        EXPECT_GE(t.bound, 0.0);
    }
    // policy stays a proper table
    for (int s = 0; s < tr.model().S; ++s)
        EXPECT_NEAR(tr.policy().row(s).sum(), 1.0, 1e-12);
}

TEST(Train, GridRunsAreByteDeterministic) {
    TrainConfig cfg;
    cfg.env = "grid";
    cfg.algo = "cvpo";
    cfg.seed = 7;
    cfg.epochs = 4;
    cfg.rollouts_per_epoch = 2;
    cfg.eps_T = 1.0;
    const std::string d1 = temp_dir("det1");
    const std::string d2 = temp_dir("det2");
    run_training(cfg, d1);
    run_training(cfg, d2);
    EXPECT_EQ(slurp(d1 + "/metrics.csv"), slurp(d2 + "/metrics.csv"));
    EXPECT_TRUE(std::filesystem::exists(d1 + "/ckpt_final/manifest.json"));
    EXPECT_TRUE(std::filesystem::exists(d1 + "/ckpt_final/params.bin"));
    EXPECT_TRUE(std::filesystem::exists(d1 + "/config.txt"));
}

TEST(Train, BaselineSharesTheMetricsSchema) {
    TrainConfig cfg;
    cfg.env = "grid";
    cfg.algo = "pd";
    cfg.seed = 3;
    cfg.epochs = 4;
    cfg.rollouts_per_epoch = 2;
    cfg.eps_T = 1.0;
    cfg.alpha_theta = 0.05;
    const std::string d = temp_dir("pd_grid");
    run_training(cfg, d);
    const MetricsFile f = read_metrics_file(d + "/metrics.csv");
    EXPECT_EQ(f.algo, "pd");
    ASSERT_EQ(f.rows.size(), 4u);
    for (const auto& r : f.rows) EXPECT_GE(r.lambda, 0.0);
}

TEST(Train, CircleStepAccountingIsExact) {
    TrainConfig cfg = tiny_circle_cfg();
    cfg.epochs = 2;
    NeuralCvpoTrainer tr(default_circle_params(cfg), cfg);
    const EpochMetrics m1 = tr.epoch();
    const EpochMetrics m2 = tr.epoch();
    // the circle episode always runs its full 300-step clock
    EXPECT_EQ(m1.env_steps, 300);
    EXPECT_EQ(m2.env_steps, 600);
    EXPECT_TRUE(std::isfinite(m1.elbo));
    EXPECT_GT(m1.eta, 0.0);
    EXPECT_GE(m1.lambda, 0.0);
    EXPECT_GE(m1.beta_mu, 0.0);
}

TEST(Train, CircleEpochsAreDeterministic) {
    const TrainConfig cfg = tiny_circle_cfg();
    NeuralCvpoTrainer a(default_circle_params(cfg), cfg);
    NeuralCvpoTrainer b(default_circle_params(cfg), cfg);
    const std::string ra = format_metrics_row(a.epoch());
    const std::string rb = format_metrics_row(b.epoch());
    EXPECT_EQ(ra, rb);
}

TEST(Train, CirclePdBaselineSmoke) {
    TrainConfig cfg = tiny_circle_cfg();
    cfg.algo = "pd";
    NeuralPdTrainer tr(default_circle_params(cfg), cfg);
    const EpochMetrics m = tr.epoch();
    EXPECT_EQ(m.epoch, 1);
    EXPECT_EQ(m.env_steps, 300);
    EXPECT_GE(m.lambda, 0.0);
    EXPECT_TRUE(std::isfinite(m.loss_r));
    EXPECT_TRUE(std::isfinite(m.loss_c));
}

TEST(Train, CheckpointEvaluationMatchesLivePolicy) {
    TrainConfig cfg = tiny_circle_cfg();
    NeuralCvpoTrainer tr(default_circle_params(cfg), cfg);
    tr.epoch();
    const std::string d = temp_dir("ckpt_eval");
    tr.save(d + "/ck");

    PointCircle env(default_circle_params(cfg));
    const GaussianPolicy& pol = tr.policy();
    const EvalStats direct = evaluate_policy(env, circle_actor(pol), 3, 17);
    const EvalStats from_ck = evaluate_checkpoint(d + "/ck", 3, 17);
    EXPECT_EQ(direct.reward_mean, from_ck.reward_mean);
    EXPECT_EQ(direct.cost_mean, from_ck.cost_mean);
    EXPECT_EQ(direct.cost_q3, from_ck.cost_q3);
}

TEST(Train, TabularCheckpointEvaluationMatches) {
    TrainConfig cfg;
    cfg.env = "grid";
    cfg.epochs = 2;
    cfg.rollouts_per_epoch = 1;
    cfg.eps_T = 1.0;
    TabularCvpoTrainer tr(default_grid_params(cfg), cfg);
    tr.epoch();
    tr.epoch();
    const std::string d = temp_dir("ckpt_tab");
    tr.save(d + "/ck");

    HazardGrid env(default_grid_params(cfg));
    const Mat pi = tr.policy();
    auto act = [&](const HazardGrid& e, RngStream& rng) {
        return sample_row(pi.row(e.state_index()), rng);
    };
    const EvalStats direct = evaluate_policy(env, act, 20, 4);
    const EvalStats from_ck = evaluate_checkpoint(d + "/ck", 20, 4);
    EXPECT_EQ(direct.reward_mean, from_ck.reward_mean);
    EXPECT_EQ(direct.cost_mean, from_ck.cost_mean);
}

// --- plot data -------------------------------------------------------------

namespace {

MetricsFile synthetic_run(const std::string& algo, int seed, int epochs) {
    MetricsFile f;
    f.algo = algo;
    f.seed = seed;
    f.env = "grid";
    for (int e = 1; e <= epochs; ++e) {
        EpochMetrics m;
        m.epoch = e;
        m.env_steps = 100LL * e;
        m.ep_reward_mean = seed + 0.1 * e;
        m.ep_cost_mean = 10.0 - e + seed;
        m.cumulative_cost = 5.0 * e;
        f.rows.push_back(m);
    }
    return f;
}

}  // namespace

TEST(Plotdata, EmitsAllFourTables) {
    const std::string d = temp_dir("plot");
    const std::vector<MetricsFile> files = {synthetic_run("cvpo", 0, 10),
                                            synthetic_run("cvpo", 1, 10),
                                            synthetic_run("pd", 0, 10)};
    const auto written = emit_plotdata(files, d);
    ASSERT_EQ(written.size(), 4u);
    for (const auto& p : written) EXPECT_TRUE(std::filesystem::exists(p)) << p;

    const std::string longcsv = slurp(d + "/long.csv");
    EXPECT_EQ(std::count(longcsv.begin(), longcsv.end(), '\n'), 1 + 30);
    EXPECT_NE(longcsv.find("algo,seed,env,epoch"), std::string::npos);

    const std::string agg = slurp(d + "/agg.csv");
    // cvpo epoch 1: seeds 0 and 1, rewards 0.1 and 1.1 -> mean 0.6, std 0.5
    EXPECT_NE(agg.find("cvpo,1,2,0.6,0.5,"), std::string::npos) << agg;

    const std::string win = slurp(d + "/window_summary.csv");
    // 10 epochs -> window rows 9..10
    EXPECT_NE(win.find("cvpo,0,grid,9,10,"), std::string::npos) << win;
    EXPECT_EQ(std::count(win.begin(), win.end(), '\n'), 1 + 3);
}

TEST(Plotdata, WindowMatchesLastFifthOfEpochs) {
    const std::string d = temp_dir("plot_window");
    const std::vector<MetricsFile> files = {synthetic_run("cvpo", 2, 10)};
    emit_plotdata(files, d);
    // window rows for seed 2: rewards {2.9, 3.0}, costs {3, 2}
    const std::string win = slurp(d + "/window_summary.csv");
    char want[128];
    std::snprintf(want, sizeof want, "cvpo,2,grid,9,10,%.10g,%.10g,%.10g,%.10g", 2.95, 2.5, 2.5,
                  2.75);
    EXPECT_NE(win.find(want), std::string::npos) << win << "\nwanted " << want;
}

TEST(Plotdata, InputOrderDoesNotChangeOutputBytes) {
    const std::string d1 = temp_dir("plot_o1");
    const std::string d2 = temp_dir("plot_o2");
    std::vector<MetricsFile> files = {synthetic_run("cvpo", 0, 6), synthetic_run("pd", 4, 6),
                                      synthetic_run("cvpo", 3, 6)};
    emit_plotdata(files, d1);
    std::swap(files[0], files[2]);
    std::swap(files[1], files[2]);
    emit_plotdata(files, d2);
    for (const std::string name : {"long.csv", "agg.csv", "reward_vs_cost.csv", "window_summary.csv"})
        EXPECT_EQ(slurp(d1 + "/" + name), slurp(d2 + "/" + name)) << name;
}

TEST(Plotdata, RejectsDuplicateAndEmptyInputs) {
    const std::string d = temp_dir("plot_bad");
    EXPECT_THROW(emit_plotdata({}, d), ContractError);
    const std::vector<MetricsFile> dup = {synthetic_run("cvpo", 0, 3), synthetic_run("cvpo", 0, 3)};
    EXPECT_THROW(emit_plotdata(dup, d), ContractError);
    MetricsFile empty;
    empty.algo = "cvpo";
    empty.seed = 1;
    EXPECT_THROW(emit_plotdata({empty}, d), ContractError);
}
