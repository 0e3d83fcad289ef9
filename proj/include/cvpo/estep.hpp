#pragma once

#include "cvpo/common.hpp"

#include <array>
#include <string>

namespace cvpo {

/**
 * A batch of states with K candidate actions each and the critic values
 * of every (state, particle) pair. log_base holds the log mass the old
 * policy assigns to each particle: uniform -log K when particles are
 * sampled from the policy itself, log pi_old(a_k|s_b) when the actions
 * enumerate a finite set. row_weight allows non-uniform state batches;
 * it defaults to uniform and must sum to 1.
 */
struct ParticleSet {
    Mat states;      // B x ds, optional for synthetic instances
    Mat actions;     // (B*K) x da flat, row b*K+k; optional
    Mat Qr;          // B x K
    Mat Qc;          // B x K
    Mat log_base;    // B x K
    Vec row_weight;  // B

    Eigen::Index B() const { return Qr.rows(); }
    Eigen::Index K() const { return Qr.cols(); }

    static ParticleSet from_values(Mat qr, Mat qc) {
        ParticleSet ps;
        ps.log_base = Mat::Constant(qr.rows(), qr.cols(), -std::log(static_cast<double>(qr.cols())));
        ps.row_weight = Vec::Constant(qr.rows(), 1.0 / static_cast<double>(qr.rows()));
        ps.Qr = std::move(qr);
        ps.Qc = std::move(qc);
        return ps;
    }

    void finalize_defaults() {
        if (log_base.size() == 0)
            log_base = Mat::Constant(B(), K(), -std::log(static_cast<double>(K())));
        if (row_weight.size() == 0)
            row_weight = Vec::Constant(B(), 1.0 / static_cast<double>(B()));
    }

    void validate() const {
        require(Qr.rows() >= 1 && Qr.cols() >= 2, "ParticleSet: need B >= 1 and K >= 2");
        require(Qc.rows() == Qr.rows() && Qc.cols() == Qr.cols(), "ParticleSet: Qc shape");
        require(log_base.rows() == Qr.rows() && log_base.cols() == Qr.cols(),
                "ParticleSet: log_base shape");
        require(row_weight.size() == Qr.rows(), "ParticleSet: row_weight length");
        require(Qr.allFinite() && Qc.allFinite() && log_base.allFinite(),
                "ParticleSet: non-finite values");
        require(std::abs(row_weight.sum() - 1.0) < 1e-9 && row_weight.minCoeff() >= 0.0,
                "ParticleSet: row_weight not a distribution");
    }
};

enum class DualStatus { optimal, boundary_lambda_zero, infeasible_detected, max_iter };

inline const char* to_string(DualStatus s) {
    switch (s) {
        case DualStatus::optimal: return "optimal";
        case DualStatus::boundary_lambda_zero: return "boundary_lambda_zero";
        case DualStatus::infeasible_detected: return "infeasible_detected";
        default: return "max_iter";
    }
}

struct DualSolution {
    double eta = 1.0;
    double lam = 0.0;
    double value = 0.0;
    double grad_norm = 0.0;
    DualStatus status = DualStatus::max_iter;
    int iterations = 0;
};

inline constexpr double kEtaFloor = 1e-4;
inline constexpr double kEtaMax = 1e4;
inline constexpr double kLambdaMax = 1e3;

/**
 * Convex dual of the trust-region safety projection,
 *   g(eta, lambda) = lambda*eps1 + eta*eps2
 *                  + eta * sum_b w_b log sum_k base exp((Qr - lambda Qc)/eta).
 * Minimizing over eta > 0, lambda >= 0 yields the temperature and the
 * safety multiplier of the closed-form variational weights.
 */
inline double dual_value(const ParticleSet& ps, double eta, double lam, double eps1, double eps2) {
    ps.validate();
    require(eta > 0.0, "dual_value: eta must be positive");
    require(lam >= 0.0, "dual_value: lambda must be nonnegative");
    double acc = 0.0;
    for (Eigen::Index b = 0; b < ps.B(); ++b) {
        const Vec logits =
            ps.log_base.row(b).transpose() + (ps.Qr.row(b) - lam * ps.Qc.row(b)).transpose() / eta;
        acc += ps.row_weight[b] * log_sum_exp(logits);
    }
    return lam * eps1 + eta * eps2 + eta * acc;
}

struct DualDerivatives {
    Eigen::Vector2d grad;    // d/d(lambda), d/d(eta)
    Eigen::Matrix2d hess;    // same ordering
};

/**
 * Analytic gradient and Hessian of the dual in (lambda, eta) order.
 * Moments are taken under the per-row softmax weights and centered on
 * the first particle, so a row-constant Qc yields H(0,0) = 0 exactly.
 */
inline DualDerivatives dual_derivatives(const ParticleSet& ps, double eta, double lam,
                                        double eps1, double eps2) {
    ps.validate();
    require(eta >= kEtaFloor, "dual_derivatives: eta below floor");
    require(lam >= 0.0, "dual_derivatives: lambda must be nonnegative");
    double mean_qc = 0.0, mean_adv_term = 0.0;
    double h_ll = 0.0, h_ee = 0.0, h_le = 0.0;
    for (Eigen::Index b = 0; b < ps.B(); ++b) {
        const Eigen::Index K = ps.K();
        Vec abar = (ps.Qr.row(b) - lam * ps.Qc.row(b)).transpose();
        const Vec logits = ps.log_base.row(b).transpose() + abar / eta;
        const double lse = log_sum_exp(logits);
        Vec w(K);
        for (Eigen::Index k = 0; k < K; ++k) w[k] = std::exp(logits[k] - lse);

        const double c0 = ps.Qc(b, 0);
        const double a0 = abar[0];
        double Ec = 0.0, Ea = 0.0, Ecc = 0.0, Eaa = 0.0, Eca = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) {
            const double cc = ps.Qc(b, k) - c0;
            const double aa = abar[k] - a0;
            Ec += w[k] * cc;
            Ea += w[k] * aa;
            Ecc += w[k] * cc * cc;
            Eaa += w[k] * aa * aa;
            Eca += w[k] * cc * aa;
        }
        const double var_c = std::max(0.0, Ecc - Ec * Ec);
        const double var_a = std::max(0.0, Eaa - Ea * Ea);
        const double cov_ca = Eca - Ec * Ea;

        const double wb = ps.row_weight[b];
        mean_qc += wb * (Ec + c0);
        mean_adv_term += wb * (lse - (Ea + a0) / eta);
        h_ll += wb * var_c / eta;
        h_ee += wb * var_a / (eta * eta * eta);
        h_le += wb * cov_ca / (eta * eta);
    }
    DualDerivatives d;
    d.grad[0] = eps1 - mean_qc;
    d.grad[1] = eps2 + mean_adv_term;
    d.hess(0, 0) = h_ll;
    d.hess(1, 1) = h_ee;
    d.hess(0, 1) = h_le;
    d.hess(1, 0) = h_le;
    return d;
}

struct DualSolverOptions {
    double tol = 1e-8;       // scaled by max(1, |Q| range)
    int max_iter = 200;
    double eps_ridge = 1e-12;
};

/**
 * Projected Newton over lambda in [0, kLambdaMax], log eta in
 * [log kEtaFloor, log kEtaMax], with backtracking and a gradient
 * fallback when the Newton system is degenerate. lambda pinned at its
 * cap marks the instance infeasible: no weighting inside the KL ball
 * meets the budget, the multiplier wants to diverge.
 */
inline DualSolution solve_dual(const ParticleSet& ps, double eps1, double eps2,
                               const DualSolverOptions& opt = {}) {
    ps.validate();
    require(eps1 >= 0.0 && eps2 > 0.0, "solve_dual: thresholds must be positive");

    const double qscale =
        std::max({1.0, ps.Qr.cwiseAbs().maxCoeff(), ps.Qc.cwiseAbs().maxCoeff()});
    const double tol = opt.tol * qscale;
    const double u_lo = std::log(kEtaFloor), u_hi = std::log(kEtaMax);

    auto g_of = [&](double lam, double u) { return dual_value(ps, std::exp(u), lam, eps1, eps2); };

    // coarse multi-start; the dual is convex but can be extremely flat in eta
    double lam = 0.0, u = 0.0;
    {
        double best = std::numeric_limits<double>::infinity();
        for (double lam0 : {0.0, 1.0, 10.0, 100.0})
            for (double eta0 : {0.1, 1.0, 10.0}) {
                const double v = g_of(lam0, std::log(eta0));
                if (v < best) {
                    best = v;
                    lam = lam0;
                    u = std::log(eta0);
                }
            }
    }

    DualSolution sol;
    int it = 0;
    for (; it < opt.max_iter; ++it) {
        const double eta = std::exp(u);
        const DualDerivatives d = dual_derivatives(ps, eta, lam, eps1, eps2);
        // chain rule to (lambda, u = log eta)
        Eigen::Vector2d grad(d.grad[0], eta * d.grad[1]);
        Eigen::Matrix2d H;
        H(0, 0) = d.hess(0, 0);
        H(0, 1) = H(1, 0) = eta * d.hess(0, 1);
        H(1, 1) = eta * eta * d.hess(1, 1) + eta * d.grad[1];

        auto blocked = [&](int i, double dir) {
            if (i == 0) return (lam <= 0.0 && dir < 0.0) || (lam >= kLambdaMax && dir > 0.0);
            return (u <= u_lo && dir < 0.0) || (u >= u_hi && dir > 0.0);
        };
        Eigen::Vector2d pg = grad;
        for (int i = 0; i < 2; ++i)
            if (blocked(i, -grad[i])) pg[i] = 0.0;
        sol.grad_norm = pg.cwiseAbs().maxCoeff();
        if (sol.grad_norm <= tol) break;

        // Newton on the free coordinates, ridge until usable
        Eigen::Vector2d step = Eigen::Vector2d::Zero();
        {
            std::array<int, 2> free{};
            int nf = 0;
            for (int i = 0; i < 2; ++i)
                if (pg[i] != 0.0) free[nf++] = i;
            if (nf == 1) {
                const int i = free[0];
                const double h = std::max(H(i, i), opt.eps_ridge);
                step[i] = -grad[i] / h;
            } else if (nf == 2) {
                Eigen::Matrix2d Hr = H;
                double ridge = 0.0;
                for (int tries = 0; tries < 60; ++tries) {
                    const double det = Hr(0, 0) * Hr(1, 1) - Hr(0, 1) * Hr(1, 0);
                    if (Hr(0, 0) > 0.0 && det > 0.0) break;
                    ridge = (ridge == 0.0) ? 1e-10 * std::max(1.0, H.trace()) : ridge * 10.0;
                    Hr = H + ridge * Eigen::Matrix2d::Identity();
                }
                step = -Hr.inverse() * grad;
            }
            if (!step.allFinite() || step.dot(grad) >= 0.0) step = -pg;  // descent fallback
        }

        const double g0 = g_of(lam, u);
        double t = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls) {
            const double lam_n = std::clamp(lam + t * step[0], 0.0, kLambdaMax);
            const double u_n = std::clamp(u + t * step[1], u_lo, u_hi);
            const double pred = grad[0] * (lam_n - lam) + grad[1] * (u_n - u);
            if (std::abs(lam_n - lam) + std::abs(u_n - u) < 1e-18) break;
            if (g_of(lam_n, u_n) <= g0 + 1e-4 * pred) {
                lam = lam_n;
                u = u_n;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if (!moved) break;  // line search stalled at numerical precision
    }

    sol.eta = std::exp(u);
    sol.lam = lam;
    sol.value = g_of(lam, u);
    sol.iterations = it;
    const DualDerivatives df = dual_derivatives(ps, sol.eta, sol.lam, eps1, eps2);
    {
        Eigen::Vector2d grad(df.grad[0], sol.eta * df.grad[1]);
        Eigen::Vector2d pg = grad;
        if ((lam <= 0.0 && -grad[0] < 0.0) || (lam >= kLambdaMax && -grad[0] > 0.0)) pg[0] = 0.0;
        if ((u <= u_lo && -grad[1] < 0.0) || (u >= u_hi && -grad[1] > 0.0)) pg[1] = 0.0;
        sol.grad_norm = pg.cwiseAbs().maxCoeff();
    }
    if (sol.lam >= kLambdaMax - 1e-6) {
        sol.status = DualStatus::infeasible_detected;
    } else if (sol.grad_norm <= tol) {
        sol.status = (sol.lam <= 1e-12 && df.grad[0] > tol) ? DualStatus::boundary_lambda_zero
                                                            : DualStatus::optimal;
    } else {
        sol.status = DualStatus::max_iter;
    }
    return sol;
}

/// Closed-form weights: row-softmax of log base + (Qr - lambda Qc)/eta.
inline Mat variational_weights(const ParticleSet& ps, const DualSolution& sol) {
    ps.validate();
    require(sol.status == DualStatus::optimal || sol.status == DualStatus::boundary_lambda_zero,
            "variational_weights: dual not solved (status forbids weight extraction)");
    Mat W(ps.B(), ps.K());
    for (Eigen::Index b = 0; b < ps.B(); ++b) {
        const Vec logits =
            ps.log_base.row(b).transpose() +
            (ps.Qr.row(b) - sol.lam * ps.Qc.row(b)).transpose() / sol.eta;
        W.row(b) = softmax(logits).transpose();
    }
    return W;
}

struct SlaterInfo {
    double min_cost = 0.0;  // least mean expected cost inside the KL ball
    double eta = 1.0;       // minimizing temperature of the 1-D cost dual
};

/**
 * Feasibility certificate: the exact optimum of minimizing the batch
 * expected cost within the KL trust region, obtained from its 1-D
 * strictly-monotone dual by bisection on log eta. Slater's condition
 * holds for a budget eps1 iff the returned min_cost is below eps1.
 */
inline SlaterInfo min_feasible_cost_detail(const ParticleSet& ps, double eps2) {
    ps.validate();
    require(eps2 >= 0.0, "min_feasible_cost: negative KL budget");
    SlaterInfo info;
    if (eps2 == 0.0) {  // q pinned to the base distribution
        double c = 0.0;
        for (Eigen::Index b = 0; b < ps.B(); ++b) {
            const Vec base = softmax(ps.log_base.row(b).transpose());
            c += ps.row_weight[b] * base.dot(ps.Qc.row(b).transpose());
        }
        info.min_cost = c;
        info.eta = kEtaFloor;
        return info;
    }
    // 1-D dual in eta alone; evaluated below the public eta floor because
    // huge KL budgets push the minimizing temperature toward zero.
    auto dg = [&](double u) {
        const double eta = std::exp(u);
        double acc = 0.0;
        for (Eigen::Index b = 0; b < ps.B(); ++b) {
            const Vec abar = -ps.Qc.row(b).transpose();
            const Vec logits = ps.log_base.row(b).transpose() + abar / eta;
            const double lse = log_sum_exp(logits);
            double ea = 0.0;
            for (Eigen::Index k = 0; k < ps.K(); ++k)
                ea += std::exp(logits[k] - lse) * (abar[k] - abar[0]);
            acc += ps.row_weight[b] * (lse - (ea + abar[0]) / eta);
        }
        return eps2 + acc;
    };
    double lo = std::log(1e-6), hi = std::log(1e6);
    if (dg(lo) >= 0.0) {
        hi = lo;
    } else if (dg(hi) <= 0.0) {
        lo = hi;
    } else {
        for (int i = 0; i < 90; ++i) {
            const double mid = 0.5 * (lo + hi);
            (dg(mid) < 0.0 ? lo : hi) = mid;
        }
    }
    const double u = 0.5 * (lo + hi);
    info.eta = std::exp(u);
    double acc = 0.0;
    for (Eigen::Index b = 0; b < ps.B(); ++b) {
        const Vec logits = ps.log_base.row(b).transpose() - ps.Qc.row(b).transpose() / info.eta;
        acc += ps.row_weight[b] * log_sum_exp(logits);
    }
    info.min_cost = -(info.eta * eps2 + info.eta * acc);
    return info;
}

inline double min_feasible_cost(const ParticleSet& ps, double eps2) {
    return min_feasible_cost_detail(ps, eps2).min_cost;
}

/**
 * Cost-only weights used when the dual reports infeasibility: softmax
 * of log base - Qc/eta at the certificate's temperature. This is the
 * steepest feasible pull toward low-cost particles within the same KL
 * budget, standing in for an unbounded safety multiplier.
 */
inline Mat fallback_weights(const ParticleSet& ps, double eps2) {
    const SlaterInfo info = min_feasible_cost_detail(ps, eps2);
    Mat W(ps.B(), ps.K());
    for (Eigen::Index b = 0; b < ps.B(); ++b) {
        const Vec logits = ps.log_base.row(b).transpose() - ps.Qc.row(b).transpose() / info.eta;
        W.row(b) = softmax(logits).transpose();
    }
    return W;
}

}  // namespace cvpo
