#pragma once

#include "cvpo/common.hpp"
#include "cvpo/simplex.hpp"
#include "cvpo/tabular_model.hpp"

#include <limits>
#include <vector>

namespace cvpo {

struct ExactQ {
    Mat Qr;  // S x A
    Mat Qc;  // S x A
    Vec Vr;  // S
    Vec Vc;  // S
};

/// Bellman linear solve for both value signals of a fixed policy.
inline ExactQ exact_policy_eval(const TabularModel& m, const Mat& pi) {
    validate_policy_table(m, pi);
    Mat Ppi = Mat::Zero(m.S, m.S);
    Vec r_pi = Vec::Zero(m.S), c_pi = Vec::Zero(m.S);
    for (int a = 0; a < m.A; ++a) {
        Ppi += pi.col(a).asDiagonal() * m.P[a];
        r_pi += pi.col(a).cwiseProduct(m.reward.col(a));
        c_pi += pi.col(a).cwiseProduct(m.cost.col(a));
    }
    const Mat sys = Mat::Identity(m.S, m.S) - m.gamma * Ppi;
    const auto lu = sys.partialPivLu();
    ExactQ q;
    q.Vr = lu.solve(r_pi);
    q.Vc = lu.solve(c_pi);
    q.Qr = m.reward;
    q.Qc = m.cost;
    for (int a = 0; a < m.A; ++a) {
        q.Qr.col(a) += m.gamma * (m.P[a] * q.Vr);
        q.Qc.col(a) += m.gamma * (m.P[a] * q.Vc);
    }
    return q;
}

/// Expected discounted return pair (J_r, J_c) from the start distribution.
inline std::pair<double, double> exact_returns(const TabularModel& m, const Mat& pi) {
    const ExactQ q = exact_policy_eval(m, pi);
    return {m.rho0.dot(q.Vr), m.rho0.dot(q.Vc)};
}

/// Discounted state occupancy mu with sum mu = 1/(1-gamma).
inline Vec state_occupancy(const TabularModel& m, const Mat& pi) {
    validate_policy_table(m, pi);
    Mat Ppi = Mat::Zero(m.S, m.S);
    for (int a = 0; a < m.A; ++a) Ppi += pi.col(a).asDiagonal() * m.P[a];
    const Mat sys = Mat::Identity(m.S, m.S) - m.gamma * Ppi.transpose();
    return sys.partialPivLu().solve(m.rho0);
}

struct ValueIterationResult {
    Vec V;
    Mat Q;       // S x A
    Mat greedy;  // deterministic policy table
};

/// Unconstrained optimal control for an arbitrary S x A payoff table.
inline ValueIterationResult value_iteration(const TabularModel& m, const Mat& payoff,
                                            double tol = 1e-13, int max_iter = 200000) {
    Vec V = Vec::Zero(m.S);
    Mat Q(m.S, m.A);
    for (int it = 0; it < max_iter; ++it) {
        for (int a = 0; a < m.A; ++a) Q.col(a) = payoff.col(a) + m.gamma * (m.P[a] * V);
        const Vec Vn = Q.rowwise().maxCoeff();
        const double gap = (Vn - V).cwiseAbs().maxCoeff();
        V = Vn;
        if (gap * m.gamma / (1.0 - m.gamma) < tol) break;
    }
    ValueIterationResult r;
    r.V = V;
    r.Q = Q;
    r.greedy = Mat::Zero(m.S, m.A);
    for (int s = 0; s < m.S; ++s) {
        Eigen::Index best;
        Q.row(s).maxCoeff(&best);
        r.greedy(s, best) = 1.0;
    }
    return r;
}

struct LpPolicyResult {
    bool feasible = false;
    Mat policy;          // S x A
    double J_r = 0.0;
    double J_c = 0.0;
    double lambda = 0.0;    // dual of the cost budget row, >= 0
    double min_cost = 0.0;  // least achievable J_c; reported when infeasible
};

/**
 * Exact constrained optimum via the occupancy-measure LP.
 *
 * Variables d(s,a) >= 0 with flow constraints
 *   sum_a d(s',a) = rho0(s') + gamma * sum_{s,a} P(s'|s,a) d(s,a),
 * objective max r.d, budget c.d <= eps1 (discounted units, the same
 * scale convert_threshold emits). A slack variable turns the budget
 * into an equality row; its dual gives the optimal multiplier.
 */
inline LpPolicyResult solve_constrained_lp(const TabularModel& m, double eps1) {
    m.validate();
    require(eps1 >= 0.0, "solve_constrained_lp: negative budget");
    const int n = m.S * m.A;
    const bool bounded = std::isfinite(eps1);
    const int rows = m.S + (bounded ? 1 : 0);
    const int cols = n + (bounded ? 1 : 0);
    Mat A = Mat::Zero(rows, cols);
    Vec b = Vec::Zero(rows);
    Vec c = Vec::Zero(cols);
    auto col_of = [&](int s, int a) { return a * m.S + s; };
    for (int sp = 0; sp < m.S; ++sp) {
        b[sp] = m.rho0[sp];
        for (int a = 0; a < m.A; ++a) {
            A(sp, col_of(sp, a)) += 1.0;
            for (int s = 0; s < m.S; ++s) A(sp, col_of(s, a)) -= m.gamma * m.P[a](s, sp);
        }
    }
    for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a) {
            c[col_of(s, a)] = -m.reward(s, a);  // simplex minimizes
            if (bounded) A(m.S, col_of(s, a)) = m.cost(s, a);
        }
    if (bounded) {
        A(m.S, n) = 1.0;  // slack
        b[m.S] = eps1;
    }

    LpResult lp = solve_lp(A, b, c);
    LpPolicyResult out;
    if (lp.status != LpStatus::optimal) {
        // flow rows alone are always satisfiable, so failure means the
        // budget row cannot be met; certify with the min-cost LP
        Vec cmin = Vec::Zero(cols);
        for (int s = 0; s < m.S; ++s)
            for (int a = 0; a < m.A; ++a) cmin[col_of(s, a)] = m.cost(s, a);
        Mat Af = A.topRows(m.S);
        LpResult lp2 = solve_lp(Af.leftCols(n), b.head(m.S), cmin.head(n));
        require(lp2.status == LpStatus::optimal, "solve_constrained_lp: min-cost LP failed");
        out.feasible = false;
        out.min_cost = lp2.objective;
        return out;
    }
    out.feasible = true;
    out.policy = Mat::Zero(m.S, m.A);
    double jr = 0.0, jc = 0.0;
    for (int s = 0; s < m.S; ++s) {
        double tot = 0.0;
        for (int a = 0; a < m.A; ++a) tot += lp.x[col_of(s, a)];
        for (int a = 0; a < m.A; ++a)
            out.policy(s, a) = tot > 1e-12 ? lp.x[col_of(s, a)] / tot : 1.0 / m.A;
        const double row_sum = out.policy.row(s).sum();
        out.policy.row(s) /= row_sum;
        for (int a = 0; a < m.A; ++a) {
            jr += lp.x[col_of(s, a)] * m.reward(s, a);
            jc += lp.x[col_of(s, a)] * m.cost(s, a);
        }
    }
    out.J_r = jr;
    out.J_c = jc;
    out.min_cost = jc;
    out.lambda = bounded ? std::max(0.0, -lp.dual[m.S]) : 0.0;
    return out;
}

/// d/dlogits of rho0' V under the softmax policy, for an arbitrary payoff.
inline Mat exact_policy_gradient(const TabularModel& m, const Mat& pi, const Mat& payoff) {
    TabularModel mp = m;
    mp.reward = payoff;
    const ExactQ q = exact_policy_eval(mp, pi);
    const Vec mu = state_occupancy(m, pi);
    Mat grad(m.S, m.A);
    for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a)
            grad(s, a) = mu[s] * pi(s, a) * (q.Qr(s, a) - q.Vr[s]);
    return grad;
}

namespace detail {

/// Weighted mean KL of per-row distributions q against base rows.
inline double rows_kl(const Mat& q, const Mat& base, const Vec& w) {
    double kl = 0.0;
    for (Eigen::Index b = 0; b < q.rows(); ++b)
        kl += w[b] * discrete_kl(q.row(b).transpose(), base.row(b).transpose());
    return kl;
}

struct BarrierProblem {
    Mat pi_old;   // B x A strictly positive rows
    Mat Qc;       // B x A
    Vec target;   // flattened B*A objective coefficients (maximize target.x)
    Vec w;        // row weights, sum 1
    double eps1 = std::numeric_limits<double>::infinity();
    double eps2 = 0.1;
    bool use_cost = true;

    Eigen::Index B() const { return pi_old.rows(); }
    Eigen::Index A() const { return pi_old.cols(); }

    double cost_of(const Mat& q) const {
        double c = 0.0;
        for (Eigen::Index b = 0; b < B(); ++b) c += w[b] * q.row(b).dot(Qc.row(b));
        return c;
    }
};

/**
 * Equality-constrained Newton on the log-barrier of
 *   max target.q  s.t.  cost <= eps1, mean KL(q||pi_old) <= eps2,
 *                       rows on the simplex, q > 0.
 * The problem is convex, so the central path converges to the global
 * optimum; mu is driven to 1e-11 giving ~1e-10 objective slack.
 */
inline Mat barrier_solve(const BarrierProblem& pb, Mat q) {
    const Eigen::Index B = pb.B(), A = pb.A(), n = B * A;
    auto flat = [&](Eigen::Index b, Eigen::Index a) { return b * A + a; };

    auto slacks = [&](const Mat& qq, double& s1, double& s2) {
        s1 = pb.use_cost ? pb.eps1 - pb.cost_of(qq) : 1.0;
        s2 = pb.eps2 - rows_kl(qq, pb.pi_old, pb.w);
    };

    double mu = 1e-2;
    while (mu > 1e-11) {
        for (int inner = 0; inner < 200; ++inner) {
            double s1, s2;
            slacks(q, s1, s2);
            Vec gC = Vec::Zero(n), gD(n), gF(n);
            Vec hdiag(n);
            for (Eigen::Index b = 0; b < B; ++b)
                for (Eigen::Index a = 0; a < A; ++a) {
                    const auto i = flat(b, a);
                    const double x = q(b, a);
                    if (pb.use_cost) gC[i] = pb.w[b] * pb.Qc(b, a);
                    gD[i] = pb.w[b] * (std::log(x / pb.pi_old(b, a)) + 1.0);
                    hdiag[i] = mu * (pb.w[b] / (x * s2) + 1.0 / (x * x));
                    gF[i] = -pb.target[i] + mu * (gC[i] / s1 + gD[i] / s2 - 1.0 / x);
                }
            // KKT system with the rank-2 barrier curvature kept explicit
            Mat H = hdiag.asDiagonal();
            if (pb.use_cost) H += (mu / (s1 * s1)) * (gC * gC.transpose());
            H += (mu / (s2 * s2)) * (gD * gD.transpose());
            Mat K = Mat::Zero(n + B, n + B);
            K.topLeftCorner(n, n) = H;
            for (Eigen::Index b = 0; b < B; ++b)
                for (Eigen::Index a = 0; a < A; ++a) {
                    K(flat(b, a), n + b) = 1.0;
                    K(n + b, flat(b, a)) = 1.0;
                }
            Vec rhs = Vec::Zero(n + B);
            rhs.head(n) = -gF;
            const Vec sol = K.partialPivLu().solve(rhs);
            const Vec dx = sol.head(n);

            const double decrement = -gF.dot(dx);
            if (!std::isfinite(decrement)) throw NumericalError("barrier_solve: non-finite step");
            if (decrement * 0.5 < 1e-13) break;

            double t = 1.0;
            auto value = [&](const Mat& qq) {
                double a1, a2;
                slacks(qq, a1, a2);
                if (a1 <= 0.0 || a2 <= 0.0 || qq.minCoeff() <= 0.0)
                    return std::numeric_limits<double>::infinity();
                double v = 0.0;
                for (Eigen::Index i = 0; i < n; ++i)
                    v += -pb.target[i] * qq(i / A, i % A) - mu * std::log(qq(i / A, i % A));
                v += -mu * std::log(a2);
                if (pb.use_cost) v += -mu * std::log(a1);
                return v;
            };
            const double f0 = value(q);
            // fraction-to-boundary: a step may consume at most 99.5% of
            // any slack, otherwise the iterate leaves the central path
            // and the rank-2 terms blow up the Newton system
            double s1_0, s2_0;
            slacks(q, s1_0, s2_0);
            auto too_deep = [&](const Mat& qn) {
                double a1, a2;
                slacks(qn, a1, a2);
                if (a1 < 0.005 * s1_0 || a2 < 0.005 * s2_0) return true;
                for (Eigen::Index i = 0; i < n; ++i)
                    if (qn(i / A, i % A) < 0.005 * q(i / A, i % A)) return true;
                return false;
            };
            for (int ls = 0; ls < 60; ++ls) {
                Mat qn = q;
                for (Eigen::Index i = 0; i < n; ++i) qn(i / A, i % A) += t * dx[i];
                if (!too_deep(qn) && value(qn) <= f0 - 1e-4 * t * decrement) {
                    q = qn;
                    break;
                }
                t *= 0.5;
                if (ls == 59) t = 0.0;
            }
            if (t == 0.0) break;
        }
        mu *= 0.1;
    }
    return q;
}

}  // namespace detail

struct BruteForceResult {
    bool feasible = false;
    Mat q;              // B x A distributions
    double objective = 0.0;
    double min_cost = 0.0;  // least mean cost reachable inside the KL ball
};

/**
 * Direct solve of the variational step on finite action sets:
 *   max mean_b E_q[Qr]  s.t.  mean_b E_q[Qc] <= eps1,
 *                             mean_b KL(q_b || pi_old_b) <= eps2.
 * Dirichlet seeding picks the best feasible start; barrier Newton
 * refines it to the global optimum of this convex program.
 */
inline BruteForceResult brute_force_estep_batch(const Mat& pi_old, const Mat& Qr, const Mat& Qc,
                                                double eps1, double eps2,
                                                Vec weights = Vec()) {
    const Eigen::Index B = pi_old.rows(), A = pi_old.cols();
    require(A >= 2 && A <= 8, "brute_force_estep: action count outside [2,8]");
    require(Qr.rows() == B && Qr.cols() == A && Qc.rows() == B && Qc.cols() == A,
            "brute_force_estep: shape mismatch");
    require(pi_old.minCoeff() > 0.0, "brute_force_estep: pi_old must be strictly positive");
    require(eps2 >= 0.0 && eps1 >= 0.0, "brute_force_estep: negative threshold");
    if (weights.size() == 0) weights = Vec::Constant(B, 1.0 / static_cast<double>(B));
    require(weights.size() == B && std::abs(weights.sum() - 1.0) < 1e-9,
            "brute_force_estep: weights must sum to 1");

    detail::BarrierProblem pb;
    pb.pi_old = pi_old;
    pb.Qc = Qc;
    pb.w = weights;
    pb.eps1 = eps1;
    pb.eps2 = std::max(eps2, 0.0);
    pb.use_cost = std::isfinite(eps1);
    // Per-row-constant Qc makes the budget independent of q; resolve it
    // up front instead of running a barrier against a zero-width slack.
    bool qc_flat = true;
    for (Eigen::Index b = 0; b < B && qc_flat; ++b)
        qc_flat = (Qc.row(b).maxCoeff() - Qc.row(b).minCoeff()) <
                  1e-12 * std::max(1.0, Qc.cwiseAbs().maxCoeff());
    if (pb.use_cost && qc_flat) {
        const double fixed_cost = pb.cost_of(pi_old);
        if (fixed_cost > eps1) {
            BruteForceResult out_flat;
            out_flat.feasible = false;
            out_flat.q = pi_old;
            out_flat.min_cost = fixed_cost;
            return out_flat;
        }
        pb.use_cost = false;
    }

    BruteForceResult out;
    auto mean_cost = [&](const Mat& q) { return pb.cost_of(q); };
    auto mean_reward = [&](const Mat& q) {
        double v = 0.0;
        for (Eigen::Index b = 0; b < B; ++b) v += weights[b] * q.row(b).dot(Qr.row(b));
        return v;
    };

    if (eps2 == 0.0) {  // degenerate trust region: q is pinned to pi_old
        out.min_cost = mean_cost(pi_old);
        out.feasible = !pb.use_cost || out.min_cost <= eps1 + 1e-12;
        out.q = pi_old;
        out.objective = mean_reward(pi_old);
        return out;
    }

    // Least-cost point inside the KL ball (phase 1 / Slater certificate).
    Mat q_min_cost = pi_old;
    {
        detail::BarrierProblem p1 = pb;
        p1.use_cost = false;
        p1.target = Vec::Zero(B * A);
        for (Eigen::Index b = 0; b < B; ++b)
            for (Eigen::Index a = 0; a < A; ++a) p1.target[b * A + a] = -weights[b] * Qc(b, a);
        q_min_cost = detail::barrier_solve(p1, pi_old);
        out.min_cost = mean_cost(q_min_cost);
    }
    if (pb.use_cost && out.min_cost >= eps1) {
        out.feasible = false;
        out.q = q_min_cost;
        out.objective = mean_reward(q_min_cost);
        return out;
    }
    out.feasible = true;

    // Constant objective: every feasible point ties, keep pi_old by convention.
    const double qr_range = Qr.maxCoeff() - Qr.minCoeff();
    if (qr_range < 1e-12 * std::max(1.0, Qr.cwiseAbs().maxCoeff())) {
        out.q = (!pb.use_cost || mean_cost(pi_old) <= eps1) ? pi_old : q_min_cost;
        out.objective = mean_reward(out.q);
        return out;
    }

    // Strictly interior start: blend pi_old toward the least-cost point.
    Mat start = pi_old;
    if (pb.use_cost && mean_cost(pi_old) >= eps1) {
        const double margin = eps1 - out.min_cost;
        const double c0 = mean_cost(pi_old);
        const double t = std::min(1.0, (c0 - eps1 + 0.2 * margin) / (c0 - out.min_cost));
        start = (1.0 - t) * pi_old + t * q_min_cost;
    }

    // Dirichlet scan for a better feasible seed.
    RngStream rng(1234567, 77);
    double best_seed_val = mean_reward(start);
    for (int trial = 0; trial < 64; ++trial) {
        Mat cand(B, A);
        for (Eigen::Index b = 0; b < B; ++b) {
            Vec g(A);
            for (Eigen::Index a = 0; a < A; ++a) {
                double u = rng.uniform();
                while (u <= 0.0) u = rng.uniform();
                g[a] = -std::log(u);
            }
            cand.row(b) = (g / g.sum()).transpose();
        }
        cand = 0.9 * cand + 0.1 * pi_old;  // keep KL finite and rows interior
        double s2 = pb.eps2 - detail::rows_kl(cand, pi_old, weights);
        if (s2 <= 1e-9) continue;
        if (pb.use_cost && mean_cost(cand) >= eps1 - 1e-12) continue;
        if (mean_reward(cand) > best_seed_val) {
            best_seed_val = mean_reward(cand);
            start = cand;
        }
    }

    detail::BarrierProblem p2 = pb;
    p2.target = Vec::Zero(B * A);
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index a = 0; a < A; ++a) p2.target[b * A + a] = weights[b] * Qr(b, a);
    out.q = detail::barrier_solve(p2, start);
    out.objective = mean_reward(out.q);
    return out;
}

struct SingleStateEstep {
    bool feasible = false;
    Vec q;
    double objective = 0.0;
    double min_cost = 0.0;
};

/// Single-state convenience wrapper around the batch solver.
inline SingleStateEstep brute_force_estep(const Vec& pi_old, const Vec& Qr, const Vec& Qc,
                                          double eps1, double eps2) {
    Mat P(1, pi_old.size()), R(1, Qr.size()), C(1, Qc.size());
    P.row(0) = pi_old.transpose();
    R.row(0) = Qr.transpose();
    C.row(0) = Qc.transpose();
    const BruteForceResult r = brute_force_estep_batch(P, R, C, eps1, eps2);
    SingleStateEstep s;
    s.feasible = r.feasible;
    s.q = r.q.row(0).transpose();
    s.objective = r.objective;
    s.min_cost = r.min_cost;
    return s;
}

}  // namespace cvpo
