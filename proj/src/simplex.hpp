#pragma once

#include <Eigen/Dense>

namespace tiltcal::detail {

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult {
    LpStatus status = LpStatus::Infeasible;
    double objective = 0.0;
    Eigen::VectorXd x;
    // Optimal: dual solution, y'A >= c and y'b = objective.
    // Infeasible: Farkas certificate from phase one, y'A >= 0 and y'b < 0.
    Eigen::VectorXd y;
};

/// maximize c'x subject to A x = b, x >= 0. Dense two-phase tableau simplex,
/// Dantzig pricing with a switch to Bland's rule after repeated degenerate
/// pivots. Intended for short-wide problems (few rows, many columns).
LpResult solve_lp(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c);

} // namespace tiltcal::detail
