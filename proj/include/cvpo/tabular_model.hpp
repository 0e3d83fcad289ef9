#pragma once

#include "cvpo/common.hpp"

#include <vector>

namespace cvpo {

/**
 * Finite CMDP in explicit-table form.
 *
 * P[a] is the S x S transition matrix for action a (row s -> distribution
 * over next states). reward and cost are S x A tables of expected
 * immediate values. rho0 is the initial-state distribution.
 */
struct TabularModel {
    int S = 0;
    int A = 0;
    std::vector<Mat> P;  // A matrices, each S x S, rows sum to 1
    Mat reward;          // S x A
    Mat cost;            // S x A, entries >= 0
    Vec rho0;            // length S, sums to 1
    double gamma = 0.99;

    void validate() const {
        require(S > 0 && A > 0, "TabularModel: empty state or action set");
        require(gamma >= 0.0 && gamma < 1.0, "TabularModel: gamma outside [0,1)");
        require(static_cast<int>(P.size()) == A, "TabularModel: P size != A");
        require(reward.rows() == S && reward.cols() == A, "TabularModel: reward shape");
        require(cost.rows() == S && cost.cols() == A, "TabularModel: cost shape");
        require(cost.minCoeff() >= 0.0, "TabularModel: negative cost entry");
        require(rho0.size() == S, "TabularModel: rho0 length");
        require(std::abs(rho0.sum() - 1.0) < 1e-12 && rho0.minCoeff() >= 0.0,
                "TabularModel: rho0 not a distribution");
        for (const Mat& Pa : P) {
            require(Pa.rows() == S && Pa.cols() == S, "TabularModel: P[a] shape");
            require(Pa.minCoeff() >= -1e-15, "TabularModel: negative transition probability");
            for (int s = 0; s < S; ++s)
                require(std::abs(Pa.row(s).sum() - 1.0) < 1e-12, "TabularModel: row sum != 1");
        }
    }
};

/// Stochastic policy table, rows are per-state action distributions.
inline void validate_policy_table(const TabularModel& m, const Mat& pi) {
    require(pi.rows() == m.S && pi.cols() == m.A, "policy table shape mismatch");
    require(pi.minCoeff() >= -1e-15, "policy table has negative entries");
    for (int s = 0; s < m.S; ++s)
        require(std::abs(pi.row(s).sum() - 1.0) < 1e-9, "policy row does not sum to 1");
}

}  // namespace cvpo
