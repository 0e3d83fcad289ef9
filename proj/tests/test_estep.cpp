#include "cvpo/estep.hpp"

#include "cvpo/tabular_oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace cvpo;

namespace {

ParticleSet random_particles(Eigen::Index B, Eigen::Index K, RngStream& rng, double lo = -1.0,
                             double hi = 1.0, double cost_lo = 0.0, double cost_hi = 1.0) {
    Mat qr(B, K), qc(B, K);
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index k = 0; k < K; ++k) {
            qr(b, k) = rng.uniform(lo, hi);
            qc(b, k) = rng.uniform(cost_lo, cost_hi);
        }
    return ParticleSet::from_values(std::move(qr), std::move(qc));
}

double base_expected_cost(const ParticleSet& ps) {
    double c = 0.0;
    for (Eigen::Index b = 0; b < ps.B(); ++b) {
        const Vec base = softmax(ps.log_base.row(b).transpose());
        c += ps.row_weight[b] * base.dot(ps.Qc.row(b).transpose());
    }
    return c;
}

double weighted_cost(const ParticleSet& ps, const Mat& W) {
    double c = 0.0;
    for (Eigen::Index b = 0; b < ps.B(); ++b)
        c += ps.row_weight[b] * W.row(b).dot(ps.Qc.row(b));
    return c;
}

double mean_kl_to_base(const ParticleSet& ps, const Mat& W) {
    double kl = 0.0;
    for (Eigen::Index b = 0; b < ps.B(); ++b) {
        const Vec base = softmax(ps.log_base.row(b).transpose());
        kl += ps.row_weight[b] * discrete_kl(W.row(b).transpose(), base);
    }
    return kl;
}

double row_entropy(const Mat& W, Eigen::Index b) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < W.cols(); ++k)
        if (W(b, k) > 0.0) h -= W(b, k) * std::log(W(b, k));
    return h;
}

/// Nested grid-search oracle. The dual is jointly convex, so minimizing the
/// temperature out for each multiplier gives a convex 1-D profile that a
/// refined scan pins down to well under the comparison tolerance.
double min_over_eta(const ParticleSet& ps, double lam, double eps1, double eps2) {
    double lo = std::log(kEtaFloor), hi = std::log(kEtaMax);
    double best = std::numeric_limits<double>::infinity(), u_c = lo;
    for (int round = 0; round < 4; ++round) {
        const int N = round == 0 ? 600 : 200;
        for (int j = 0; j <= N; ++j) {
            const double u = lo + (hi - lo) * j / N;
            const double v = dual_value(ps, std::exp(u), lam, eps1, eps2);
            if (v < best) {
                best = v;
                u_c = u;
            }
        }
        const double w = (hi - lo) / N * 2.0;
        lo = std::max(std::log(kEtaFloor), u_c - w);
        hi = std::min(std::log(kEtaMax), u_c + w);
    }
    return best;
}

double grid_search_dual(const ParticleSet& ps, double eps1, double eps2) {
    double lo = 0.0, hi = kLambdaMax;
    double best = std::numeric_limits<double>::infinity(), lam_c = 0.0;
    for (int round = 0; round < 5; ++round) {
        const int N = round == 0 ? 500 : 120;
        for (int i = 0; i <= N; ++i) {
            const double lam = lo + (hi - lo) * i / N;
            const double v = min_over_eta(ps, lam, eps1, eps2);
            if (v < best) {
                best = v;
                lam_c = lam;
            }
        }
        const double w = (hi - lo) / N * 2.0;
        lo = std::max(0.0, lam_c - w);
        hi = std::min(kLambdaMax, lam_c + w);
    }
    return best;
}

}  // namespace

TEST(DualValue, ConstantRewardReducesToEntropyTerm) {
    RngStream rng(101, 0);
    ParticleSet ps = random_particles(3, 5, rng);
    ps.Qr.setConstant(0.37);
    for (double eta : {0.01, 1.0, 50.0})
        EXPECT_NEAR(dual_value(ps, eta, 0.0, 0.9, 0.25), eta * 0.25 + 0.37, 1e-12);
}

TEST(DualValue, FrozenHandExample) {
    Mat qr(1, 2), qc(1, 2);
    qr << 1.0, 0.0;
    qc << 0.0, 0.0;
    const ParticleSet ps = ParticleSet::from_values(qr, qc);
    const double expected = 0.2 + std::log((M_E + 1.0) / 2.0);
    EXPECT_NEAR(expected, 0.8201145069582775, 1e-15);
    EXPECT_NEAR(dual_value(ps, 1.0, 1.0, 0.1, 0.1), expected, 1e-14);
}

TEST(DualValue, ShiftInvarianceInReward) {
    RngStream rng(103, 0);
    const ParticleSet ps = random_particles(4, 6, rng);
    ParticleSet shifted = ps;
    shifted.Qr.array() += 0.917;
    for (double eta : {0.2, 1.0, 7.0})
        for (double lam : {0.0, 0.8}) {
            EXPECT_NEAR(dual_value(shifted, eta, lam, 0.4, 0.1),
                        dual_value(ps, eta, lam, 0.4, 0.1) + 0.917, 1e-10);
        }
}

TEST(DualValue, RejectsInvalidDualPoint) {
    RngStream rng(104, 0);
    const ParticleSet ps = random_particles(2, 3, rng);
    EXPECT_THROW(dual_value(ps, 0.0, 0.0, 0.1, 0.1), ContractError);
    EXPECT_THROW(dual_value(ps, -1.0, 0.0, 0.1, 0.1), ContractError);
    EXPECT_THROW(dual_value(ps, 1.0, -0.5, 0.1, 0.1), ContractError);
}

TEST(DualDerivatives, ConstantCostGivesExactBudgetSlope) {
    RngStream rng(105, 0);
    ParticleSet ps = random_particles(3, 4, rng);
    ps.Qc.setZero();
    const DualDerivatives d = dual_derivatives(ps, 0.7, 0.3, 0.45, 0.1);
    EXPECT_EQ(d.grad[0], 0.45);     // eps1 minus an exactly zero mean
    EXPECT_EQ(d.hess(0, 0), 0.0);   // no cost variance
    EXPECT_EQ(d.hess(0, 1), 0.0);
}

TEST(DualDerivatives, GradientMatchesCentralDifferences) {
    RngStream rng(107, 0);
    for (int trial = 0; trial < 30; ++trial) {
        const ParticleSet ps = random_particles(1 + rng.uniform_index(4), 2 + rng.uniform_index(7), rng,
                                                -2.0, 2.0, 0.0, 1.5);
        const double eta = std::exp(rng.uniform(std::log(0.05), std::log(20.0)));
        const double lam = rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.0, 3.0);
        const double eps1 = rng.uniform(0.1, 1.0), eps2 = rng.uniform(0.05, 0.5);
        const DualDerivatives d = dual_derivatives(ps, eta, lam, eps1, eps2);

        const double hl = 1e-5, he = 1e-5 * std::max(1.0, eta);
        const double fd_lam = (dual_value(ps, eta, lam + hl, eps1, eps2) -
                               dual_value(ps, eta, std::max(0.0, lam - hl), eps1, eps2)) /
                              (lam - hl >= 0.0 ? 2.0 * hl : hl);
        const double fd_eta =
            (dual_value(ps, eta + he, lam, eps1, eps2) - dual_value(ps, eta - he, lam, eps1, eps2)) /
            (2.0 * he);
        EXPECT_NEAR(d.grad[0], fd_lam, 1e-4 * std::max(1.0, std::abs(fd_lam)));
        EXPECT_NEAR(d.grad[1], fd_eta, 1e-4 * std::max(1.0, std::abs(fd_eta)));
    }
}

TEST(DualDerivatives, HessianMatchesDifferencedGradient) {
    RngStream rng(109, 0);
    for (int trial = 0; trial < 20; ++trial) {
        const ParticleSet ps = random_particles(2, 5, rng, -1.5, 1.5, 0.0, 1.0);
        const double eta = std::exp(rng.uniform(std::log(0.1), std::log(5.0)));
        const double lam = rng.uniform(0.1, 2.0);
        const DualDerivatives d = dual_derivatives(ps, eta, lam, 0.5, 0.2);

        const double h = 1e-6 * std::max(1.0, eta);
        const auto gp_l = dual_derivatives(ps, eta, lam + h, 0.5, 0.2).grad;
        const auto gm_l = dual_derivatives(ps, eta, lam - h, 0.5, 0.2).grad;
        const auto gp_e = dual_derivatives(ps, eta + h, lam, 0.5, 0.2).grad;
        const auto gm_e = dual_derivatives(ps, eta - h, lam, 0.5, 0.2).grad;
        const double h_ll = (gp_l[0] - gm_l[0]) / (2.0 * h);
        const double h_le = (gp_e[0] - gm_e[0]) / (2.0 * h);
        const double h_ee = (gp_e[1] - gm_e[1]) / (2.0 * h);
        EXPECT_NEAR(d.hess(0, 0), h_ll, 1e-4 * std::max(1.0, std::abs(h_ll)));
        EXPECT_NEAR(d.hess(0, 1), h_le, 1e-4 * std::max(1.0, std::abs(h_le)));
        EXPECT_NEAR(d.hess(1, 1), h_ee, 1e-4 * std::max(1.0, std::abs(h_ee)));
        EXPECT_EQ(d.hess(0, 1), d.hess(1, 0));
    }
}

TEST(DualDerivatives, HessianPsdOnDualGrid) {
    RngStream rng(111, 0);
    for (int inst = 0; inst < 20; ++inst) {
        const ParticleSet ps = random_particles(3, 6, rng, -1.0, 1.0, 0.0, 1.0);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) {
                const double eta = std::pow(10.0, -2.0 + i);
                const double lam = 2.5 * j;
                const auto H = dual_derivatives(ps, eta, lam, 0.5, 0.1).hess;
                const double tr = H(0, 0) + H(1, 1);
                const double det = H(0, 0) * H(1, 1) - H(0, 1) * H(1, 0);
                const double min_eig = 0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4.0 * det)));
                EXPECT_GE(min_eig, -1e-8);
            }
    }
}

TEST(SolveDual, CostFreeInstanceKeepsLambdaAtZero) {
    RngStream rng(113, 0);
    ParticleSet ps = random_particles(3, 6, rng);
    ps.Qc.setZero();
    const DualSolution sol = solve_dual(ps, 0.5, 0.1);
    EXPECT_EQ(sol.lam, 0.0);
    EXPECT_TRUE(sol.status == DualStatus::optimal || sol.status == DualStatus::boundary_lambda_zero);
    // eta solves the 1-D temperature dual: grid oracle over eta alone
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j <= 400000; ++j) {
        const double u = std::log(kEtaFloor) +
                         (std::log(kEtaMax) - std::log(kEtaFloor)) * j / 400000.0;
        best = std::min(best, dual_value(ps, std::exp(u), 0.0, 0.5, 0.1));
    }
    EXPECT_NEAR(sol.value, best, 1e-6);
}

TEST(SolveDual, MatchesGridSearchOracle) {
    RngStream rng(115, 0);
    int checked = 0;
    for (int trial = 0; trial < 12; ++trial) {
        const ParticleSet ps =
            random_particles(1 + rng.uniform_index(4), 2 + rng.uniform_index(5), rng, -1.0, 1.0);
        const double eps2 = rng.uniform(0.05, 0.4);
        const double mc = min_feasible_cost(ps, eps2);
        const double anchor = base_expected_cost(ps);
        const double eps1 = mc + rng.uniform(0.2, 0.8) * std::max(1e-3, anchor - mc);
        if (!(mc < eps1 - 1e-4)) continue;
        const DualSolution sol = solve_dual(ps, eps1, eps2);
        ASSERT_NE(sol.status, DualStatus::infeasible_detected);
        const double oracle = grid_search_dual(ps, eps1, eps2);
        EXPECT_NEAR(sol.value, oracle, 1e-5);
        ++checked;
    }
    EXPECT_GE(checked, 8);
}

TEST(SolveDual, InfeasibleBudgetFlagged) {
    RngStream rng(117, 0);
    ParticleSet ps = random_particles(3, 5, rng, -1.0, 1.0, 0.5, 0.9);
    const DualSolution sol = solve_dual(ps, 0.2, 1e-3);  // every particle costs over 0.5
    EXPECT_EQ(sol.status, DualStatus::infeasible_detected);
    EXPECT_GE(sol.lam, kLambdaMax - 1e-6);
    EXPECT_THROW(variational_weights(ps, sol), ContractError);
}

TEST(SolveDual, DeterministicAcrossCalls) {
    RngStream rng(119, 0);
    const ParticleSet ps = random_particles(4, 6, rng);
    const DualSolution a = solve_dual(ps, 0.6, 0.15);
    const DualSolution b = solve_dual(ps, 0.6, 0.15);
    EXPECT_EQ(a.eta, b.eta);
    EXPECT_EQ(a.lam, b.lam);
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.status, b.status);
}

TEST(SolveDual, RejectsDegenerateThresholds) {
    RngStream rng(120, 0);
    const ParticleSet ps = random_particles(2, 4, rng);
    EXPECT_THROW(solve_dual(ps, 0.5, 0.0), ContractError);
    EXPECT_THROW(solve_dual(ps, -0.1, 0.1), ContractError);
}

TEST(Weights, ConstantRowsGiveUniform) {
    Mat qr = Mat::Constant(2, 4, 0.3), qc = Mat::Constant(2, 4, 0.2);
    const ParticleSet ps = ParticleSet::from_values(qr, qc);
    DualSolution sol;
    sol.eta = 0.8;
    sol.lam = 0.5;
    sol.status = DualStatus::optimal;
    const Mat W = variational_weights(ps, sol);
    for (int b = 0; b < 2; ++b)
        for (int k = 0; k < 4; ++k) EXPECT_NEAR(W(b, k), 0.25, 1e-15);
}

TEST(Weights, FrozenSoftmaxExample) {
    Mat qr(1, 2), qc(1, 2);
    qr << 1.0, 1.0;
    qc << 0.0, 1.0;
    const ParticleSet ps = ParticleSet::from_values(qr, qc);
    DualSolution sol;
    sol.eta = 1.0;
    sol.lam = 1.0;
    sol.status = DualStatus::optimal;
    const Mat W = variational_weights(ps, sol);
    EXPECT_NEAR(W(0, 0), 0.7310585786300049, 1e-12);
    EXPECT_NEAR(W(0, 1), 0.2689414213699951, 1e-12);
}

TEST(Weights, RowStochasticOnRandomInputs) {
    RngStream rng(121, 0);
    for (int trial = 0; trial < 50; ++trial) {
        const ParticleSet ps = random_particles(1 + rng.uniform_index(5), 2 + rng.uniform_index(7),
                                                rng, -30.0, 30.0, 0.0, 10.0);
        DualSolution sol;
        sol.eta = std::exp(rng.uniform(std::log(1e-3), std::log(100.0)));
        sol.lam = rng.uniform(0.0, 5.0);
        sol.status = DualStatus::optimal;
        const Mat W = variational_weights(ps, sol);
        EXPECT_TRUE(W.allFinite());
        EXPECT_GE(W.minCoeff(), 0.0);
        for (Eigen::Index b = 0; b < ps.B(); ++b) EXPECT_NEAR(W.row(b).sum(), 1.0, 1e-12);
    }
}

TEST(Weights, NonUniformBaseDensityEntersLogits) {
    Mat qr(1, 3), qc(1, 3);
    qr << 0.5, 0.0, -0.5;
    qc << 0.0, 0.0, 0.0;
    ParticleSet ps = ParticleSet::from_values(qr, qc);
    ps.log_base(0, 0) = std::log(0.6);
    ps.log_base(0, 1) = std::log(0.3);
    ps.log_base(0, 2) = std::log(0.1);
    DualSolution sol;
    sol.eta = 2.0;
    sol.lam = 0.0;
    sol.status = DualStatus::optimal;
    const Mat W = variational_weights(ps, sol);
    Vec expect(3);
    for (int k = 0; k < 3; ++k) expect[k] = std::exp(ps.log_base(0, k) + qr(0, k) / 2.0);
    expect /= expect.sum();
    EXPECT_LT((W.row(0).transpose() - expect).lpNorm<Eigen::Infinity>(), 1e-14);
}

TEST(MinFeasibleCost, ZeroCostInstance) {
    RngStream rng(123, 0);
    ParticleSet ps = random_particles(3, 4, rng);
    ps.Qc.setZero();
    EXPECT_NEAR(min_feasible_cost(ps, 0.1), 0.0, 1e-6);
}

TEST(MinFeasibleCost, HugeBudgetReachesParticleMinimum) {
    RngStream rng(125, 0);
    const ParticleSet ps = random_particles(4, 6, rng, -1.0, 1.0, 0.0, 2.0);
    double mean_min = 0.0;
    for (Eigen::Index b = 0; b < 4; ++b)
        mean_min += ps.row_weight[b] * ps.Qc.row(b).minCoeff();
    EXPECT_NEAR(min_feasible_cost(ps, 1e3), mean_min, 1e-2);
}

TEST(MinFeasibleCost, ZeroBudgetIsBaseCost) {
    RngStream rng(126, 0);
    const ParticleSet ps = random_particles(3, 5, rng, -1.0, 1.0, 0.0, 2.0);
    EXPECT_NEAR(min_feasible_cost(ps, 0.0), base_expected_cost(ps), 1e-12);
}

TEST(MinFeasibleCost, AgreesWithBruteForceOracle) {
    RngStream rng(127, 0);
    int compared = 0;
    for (int trial = 0; trial < 30; ++trial) {
        Mat qr(1, 3), qc(1, 3), pi_old(1, 3);
        for (int k = 0; k < 3; ++k) {
            qr(0, k) = rng.uniform(-1.0, 1.0);
            qc(0, k) = rng.uniform(0.0, 1.0);
        }
        pi_old.setConstant(1.0 / 3.0);
        const double eps2 = rng.uniform(0.02, 0.4);
        const double eps1 = rng.uniform(0.1, 0.9);
        const ParticleSet ps = ParticleSet::from_values(qr, qc);
        const double mc = min_feasible_cost(ps, eps2);
        if (std::abs(mc - eps1) < 2e-3) continue;  // skip the knife edge
        if (qc.maxCoeff() - qc.minCoeff() < 1e-3) continue;
        const BruteForceResult bf = brute_force_estep_batch(pi_old, qr, qc, eps1, eps2);
        EXPECT_EQ(mc < eps1, bf.feasible) << "mc=" << mc << " eps1=" << eps1;
        EXPECT_NEAR(mc, bf.min_cost, 2e-3);
        ++compared;
    }
    EXPECT_GE(compared, 15);
}

TEST(Kkt, ActiveBudgetSlackness) {
    RngStream rng(129, 0);
    int active = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const ParticleSet ps =
            random_particles(1 + rng.uniform_index(3), 3 + rng.uniform_index(4), rng, -1.0, 1.0);
        const double eps2 = rng.uniform(0.05, 0.3);
        const double mc = min_feasible_cost(ps, eps2);
        const double anchor = base_expected_cost(ps);
        const double eps1 = mc + 0.25 * std::max(5e-3, anchor - mc);
        if (!(mc < eps1 - 1e-4)) continue;
        const DualSolution sol = solve_dual(ps, eps1, eps2);
        if (sol.status != DualStatus::optimal || sol.lam <= 1e-3) continue;
        const Mat W = variational_weights(ps, sol);
        EXPECT_NEAR(weighted_cost(ps, W), eps1, 1e-3);
        ++active;
    }
    EXPECT_GE(active, 10);
}

TEST(Kkt, KlBudgetHoldsAtSolution) {
    RngStream rng(131, 0);
    for (int trial = 0; trial < 25; ++trial) {
        const ParticleSet ps =
            random_particles(1 + rng.uniform_index(4), 2 + rng.uniform_index(6), rng, -1.0, 1.0);
        const double eps2 = rng.uniform(0.05, 0.5);
        const double mc = min_feasible_cost(ps, eps2);
        const double anchor = base_expected_cost(ps);
        const double eps1 = mc + 0.5 * std::max(5e-3, anchor - mc);
        if (!(mc < eps1 - 1e-4)) continue;
        const DualSolution sol = solve_dual(ps, eps1, eps2);
        if (sol.status == DualStatus::infeasible_detected || sol.status == DualStatus::max_iter)
            continue;
        const Mat W = variational_weights(ps, sol);
        EXPECT_LE(mean_kl_to_base(ps, W), eps2 + 1e-3);
    }
}

TEST(Weights, TemperatureFlattensDistribution) {
    RngStream rng(133, 0);
    for (int trial = 0; trial < 20; ++trial) {
        const ParticleSet ps = random_particles(1, 6, rng, -2.0, 2.0);
        DualSolution cold, warm;
        cold.eta = 0.5;
        warm.eta = 2.0;
        cold.lam = warm.lam = 0.7;
        cold.status = warm.status = DualStatus::optimal;
        const Mat Wc = variational_weights(ps, cold);
        const Mat Ww = variational_weights(ps, warm);
        EXPECT_GT(row_entropy(Ww, 0), row_entropy(Wc, 0) + 1e-12);
    }
}

TEST(Fallback, CostOnlyWeightsReduceExpectedCost) {
    RngStream rng(135, 0);
    for (int trial = 0; trial < 10; ++trial) {
        const ParticleSet ps = random_particles(3, 5, rng, -1.0, 1.0, 0.5, 2.0);
        const Mat W = fallback_weights(ps, 0.1);
        for (Eigen::Index b = 0; b < 3; ++b) EXPECT_NEAR(W.row(b).sum(), 1.0, 1e-12);
        EXPECT_LT(weighted_cost(ps, W), base_expected_cost(ps) - 1e-4);
        EXPECT_LE(mean_kl_to_base(ps, W), 0.1 + 1e-3);
    }
}

TEST(Particles, ValidationCatchesShapeErrors) {
    Mat qr(1, 1), qc(1, 1);
    qr << 1.0;
    qc << 0.0;
    ParticleSet tiny = ParticleSet::from_values(qr, qc);
    EXPECT_THROW(tiny.validate(), ContractError);  // K must be at least 2

    RngStream rng(137, 0);
    ParticleSet ps = random_particles(2, 3, rng);
    ps.Qc(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(ps.validate(), ContractError);

    ParticleSet bad_w = random_particles(2, 3, rng);
    bad_w.row_weight = Vec::Constant(2, 0.7);  // sums to 1.4
    EXPECT_THROW(bad_w.validate(), ContractError);
}
