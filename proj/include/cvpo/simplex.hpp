#pragma once

#include "cvpo/common.hpp"

#include <vector>

namespace cvpo {

enum class LpStatus { optimal, infeasible, unbounded };

struct LpResult {
    LpStatus status = LpStatus::optimal;
    Vec x;            // primal solution, length n
    Vec dual;         // row duals y with A^T y <= c at optimality
    double objective = 0.0;
};

/**
 * Dense two-phase primal simplex for  min c^T x  s.t.  A x = b, x >= 0.
 *
 * Bland's rule throughout, so the method terminates on degenerate
 * instances. Sized for the tiny occupancy LPs in this repo (tens of
 * rows); the basis inverse is refactored from scratch every pivot.
 */
class SimplexSolver {
public:
    explicit SimplexSolver(Mat A, Vec b, Vec c) : A_(std::move(A)), b_(std::move(b)), c_(std::move(c)) {
        require(A_.rows() == b_.size() && A_.cols() == c_.size(), "SimplexSolver: shape mismatch");
        require(A_.rows() >= 1 && A_.cols() >= 1, "SimplexSolver: empty program");
        for (Eigen::Index i = 0; i < b_.size(); ++i) {
            if (b_[i] < 0.0) {  // keep b nonnegative for phase 1
                b_[i] = -b_[i];
                A_.row(i) = -A_.row(i);
            }
        }
    }

    LpResult solve() {
        const Eigen::Index m = A_.rows();
        const Eigen::Index n = A_.cols();

        // Phase 1: artificials with unit cost.
        Mat A1(m, n + m);
        A1.leftCols(n) = A_;
        A1.rightCols(m) = Mat::Identity(m, m);
        Vec c1 = Vec::Zero(n + m);
        c1.tail(m).setOnes();
        std::vector<Eigen::Index> basis(m);
        for (Eigen::Index i = 0; i < m; ++i) basis[i] = n + i;

        if (!run_simplex(A1, b_, c1, basis)) throw NumericalError("simplex: phase 1 unbounded");
        {
            const Vec xb = basic_solution(A1, b_, basis);
            double art = 0.0;
            for (Eigen::Index i = 0; i < m; ++i)
                if (basis[i] >= n) art += xb[i];
            if (art > 1e-8) {
                LpResult r;
                r.status = LpStatus::infeasible;
                return r;
            }
        }
        drive_out_artificials(A1, basis, n);

        // Phase 2 on surviving rows, artificial columns dropped.
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < m; ++i)
            if (basis[i] < n) rows.push_back(i);
        Mat A2(static_cast<Eigen::Index>(rows.size()), n);
        Vec b2(static_cast<Eigen::Index>(rows.size()));
        std::vector<Eigen::Index> basis2;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            A2.row(static_cast<Eigen::Index>(i)) = A_.row(rows[i]);
            b2[static_cast<Eigen::Index>(i)] = b_[rows[i]];
            basis2.push_back(basis[rows[i]]);
        }
        if (!run_simplex(A2, b2, c_, basis2)) {
            LpResult r;
            r.status = LpStatus::unbounded;
            return r;
        }

        LpResult r;
        r.status = LpStatus::optimal;
        r.x = Vec::Zero(n);
        const Vec xb = basic_solution(A2, b2, basis2);
        for (std::size_t i = 0; i < basis2.size(); ++i) r.x[basis2[i]] = std::max(0.0, xb[static_cast<Eigen::Index>(i)]);
        r.objective = c_.dot(r.x);
        // duals on the original row order; redundant rows get 0
        Mat B(A2.rows(), A2.rows());
        Vec cb(A2.rows());
        for (std::size_t i = 0; i < basis2.size(); ++i) {
            B.col(static_cast<Eigen::Index>(i)) = A2.col(basis2[i]);
            cb[static_cast<Eigen::Index>(i)] = c_[basis2[i]];
        }
        const Vec y2 = B.transpose().partialPivLu().solve(cb);
        r.dual = Vec::Zero(m);
        for (std::size_t i = 0; i < rows.size(); ++i) r.dual[rows[i]] = y2[static_cast<Eigen::Index>(i)];
        return r;
    }

private:
    static Vec basic_solution(const Mat& A, const Vec& b, const std::vector<Eigen::Index>& basis) {
        Mat B(A.rows(), A.rows());
        for (std::size_t i = 0; i < basis.size(); ++i) B.col(static_cast<Eigen::Index>(i)) = A.col(basis[i]);
        return B.partialPivLu().solve(b);
    }

    // Bland simplex on (A, b, c) with the given starting basis.
    // Returns false when unbounded.
    bool run_simplex(const Mat& A, const Vec& b, const Vec& c, std::vector<Eigen::Index>& basis) {
        const Eigen::Index m = A.rows();
        const Eigen::Index n = A.cols();
        for (int iter = 0; iter < 20000; ++iter) {
            Mat B(m, m);
            Vec cb(m);
            for (Eigen::Index i = 0; i < m; ++i) {
                B.col(i) = A.col(basis[i]);
                cb[i] = c[basis[i]];
            }
            const auto lu = B.partialPivLu();
            const Vec xb = lu.solve(b);
            const Vec y = B.transpose().partialPivLu().solve(cb);

            // entering: lowest-index column with negative reduced cost
            Eigen::Index enter = -1;
            for (Eigen::Index j = 0; j < n; ++j) {
                bool in_basis = false;
                for (Eigen::Index i = 0; i < m; ++i)
                    if (basis[i] == j) { in_basis = true; break; }
                if (in_basis) continue;
                if (c[j] - A.col(j).dot(y) < -1e-9) { enter = j; break; }
            }
            if (enter < 0) return true;

            const Vec d = lu.solve(A.col(enter));
            Eigen::Index leave = -1;
            double best_ratio = 0.0;
            for (Eigen::Index i = 0; i < m; ++i) {
                if (d[i] > 1e-11) {
                    const double ratio = std::max(0.0, xb[i]) / d[i];
                    if (leave < 0 || ratio < best_ratio - 1e-12 ||
                        (ratio < best_ratio + 1e-12 && basis[i] < basis[leave])) {
                        leave = i;
                        best_ratio = ratio;
                    }
                }
            }
            if (leave < 0) return false;
            basis[leave] = enter;
        }
        throw NumericalError("simplex: iteration cap reached");
    }

    // Replace basic artificials by original columns where possible; rows
    // that admit no replacement are redundant and dropped by the caller.
    void drive_out_artificials(const Mat& A1, std::vector<Eigen::Index>& basis, Eigen::Index n) {
        const Eigen::Index m = A1.rows();
        for (Eigen::Index i = 0; i < m; ++i) {
            if (basis[i] < n) continue;
            Mat B(m, m);
            for (Eigen::Index k = 0; k < m; ++k) B.col(k) = A1.col(basis[k]);
            const auto lu = B.partialPivLu();
            for (Eigen::Index j = 0; j < n; ++j) {
                bool in_basis = false;
                for (Eigen::Index k = 0; k < m; ++k)
                    if (basis[k] == j) { in_basis = true; break; }
                if (in_basis) continue;
                const Vec d = lu.solve(A1.col(j));
                if (std::abs(d[i]) > 1e-9) {
                    basis[i] = j;
                    break;
                }
            }
        }
    }

    Mat A_;
    Vec b_;
    Vec c_;
};

inline LpResult solve_lp(const Mat& A, const Vec& b, const Vec& c) {
    return SimplexSolver(A, b, c).solve();
}

}  // namespace cvpo
