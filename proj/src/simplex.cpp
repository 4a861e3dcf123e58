#include "simplex.hpp"

#include <cmath>
#include <vector>

namespace tiltcal::detail {

namespace {

constexpr double kPivotTol = 1e-9;
constexpr double kCostTol = 1e-10;

struct Tableau {
    Eigen::MatrixXd T;      // m x (n + m): B^{-1} [A | I]
    Eigen::VectorXd beta;   // B^{-1} b
    std::vector<int> basis; // column index basic in each row
    std::vector<bool> active;
    int n = 0;

    void pivot(int row, int col) {
        const double p = T(row, col);
        T.row(row) /= p;
        beta(row) /= p;
        for (int r = 0; r < T.rows(); ++r) {
            if (r == row) continue;
            const double f = T(r, col);
            if (f == 0.0) continue;
            T.row(r) -= f * T.row(row);
            beta(r) -= f * beta(row);
        }
        basis[row] = col;
    }
};

// Returns false if unbounded.
bool run_phase(Tableau& tab, const Eigen::VectorXd& cost, int allowed_cols) {
    const int m = static_cast<int>(tab.T.rows());
    const int max_iter = 50 * (static_cast<int>(tab.T.cols()) + m) + 1000;
    int degenerate_streak = 0;
    bool bland = false;
    std::vector<bool> is_basic(tab.T.cols(), false);

    for (int iter = 0; iter < max_iter; ++iter) {
        std::fill(is_basic.begin(), is_basic.end(), false);
        Eigen::VectorXd cb(m);
        for (int r = 0; r < m; ++r) {
            is_basic[tab.basis[r]] = true;
            cb(r) = tab.active[r] ? cost(tab.basis[r]) : 0.0;
        }
        int enter = -1;
        double best = kCostTol;
        for (int j = 0; j < allowed_cols; ++j) {
            if (is_basic[j]) continue;
            double rc = cost(j);
            for (int r = 0; r < m; ++r)
                if (tab.active[r]) rc -= cb(r) * tab.T(r, j);
            if (rc > best) {
                enter = j;
                if (bland) break;
                best = rc;
            }
        }
        if (enter < 0) return true;

        int leave = -1;
        double ratio = 0.0;
        for (int r = 0; r < m; ++r) {
            if (!tab.active[r] || tab.T(r, enter) <= kPivotTol) continue;
            const double q = tab.beta(r) / tab.T(r, enter);
            if (leave < 0 || q < ratio - 1e-14 || (std::abs(q - ratio) <= 1e-14 && tab.basis[r] < tab.basis[leave])) {
                leave = r;
                ratio = q;
            }
        }
        if (leave < 0) return false;
        degenerate_streak = ratio <= 1e-12 ? degenerate_streak + 1 : 0;
        if (degenerate_streak > 50) bland = true;
        tab.pivot(leave, enter);
        // clean tiny negatives from round-off
        for (int r = 0; r < m; ++r)
            if (tab.beta(r) < 0.0 && tab.beta(r) > -1e-12) tab.beta(r) = 0.0;
    }
    return true;
}

Eigen::VectorXd dual_from_basis(const Eigen::MatrixXd& A_aug, const Tableau& tab, const Eigen::VectorXd& cost) {
    const int m = static_cast<int>(A_aug.rows());
    std::vector<int> rows;
    for (int r = 0; r < m; ++r)
        if (tab.active[r]) rows.push_back(r);
    const int k = static_cast<int>(rows.size());
    Eigen::MatrixXd B(k, k);
    Eigen::VectorXd cb(k);
    for (int a = 0; a < k; ++a) {
        const int col = tab.basis[rows[a]];
        cb(a) = cost(col);
        for (int b = 0; b < k; ++b) B(b, a) = A_aug(rows[b], col);
    }
    const Eigen::VectorXd yk = B.transpose().fullPivLu().solve(cb);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
    for (int a = 0; a < k; ++a) y(rows[a]) = yk(a);
    return y;
}

} // namespace

LpResult solve_lp(const Eigen::MatrixXd& A_in, const Eigen::VectorXd& b_in, const Eigen::VectorXd& c) {
    const int m = static_cast<int>(A_in.rows());
    const int n = static_cast<int>(A_in.cols());
    Eigen::MatrixXd A = A_in;
    Eigen::VectorXd b = b_in;
    Eigen::VectorXd sign = Eigen::VectorXd::Ones(m);
    for (int r = 0; r < m; ++r)
        if (b(r) < 0.0) {
            A.row(r) *= -1.0;
            b(r) *= -1.0;
            sign(r) = -1.0;
        }

    Eigen::MatrixXd A_aug(m, n + m);
    A_aug << A, Eigen::MatrixXd::Identity(m, m);

    Tableau tab;
    tab.T = A_aug;
    tab.beta = b;
    tab.n = n;
    tab.basis.resize(m);
    tab.active.assign(m, true);
    for (int r = 0; r < m; ++r) tab.basis[r] = n + r;

    LpResult result;
    Eigen::VectorXd phase1_cost = Eigen::VectorXd::Zero(n + m);
    phase1_cost.tail(m).setConstant(-1.0);
    run_phase(tab, phase1_cost, n + m);

    double infeasibility = 0.0;
    for (int r = 0; r < m; ++r)
        if (tab.basis[r] >= n) infeasibility += tab.beta(r);
    if (infeasibility > 1e-9 * std::max(1.0, b.lpNorm<Eigen::Infinity>())) {
        result.status = LpStatus::Infeasible;
        result.objective = -infeasibility;
        result.y = dual_from_basis(A_aug, tab, phase1_cost).cwiseProduct(sign);
        return result;
    }

    // drive remaining artificials out of the basis; rows where that is
    // impossible are linearly dependent and dropped
    for (int r = 0; r < m; ++r) {
        if (tab.basis[r] < n) continue;
        int col = -1;
        for (int j = 0; j < n; ++j) {
            bool basic = false;
            for (int q = 0; q < m; ++q) basic = basic || tab.basis[q] == j;
            if (!basic && std::abs(tab.T(r, j)) > kPivotTol) {
                col = j;
                break;
            }
        }
        if (col >= 0)
            tab.pivot(r, col);
        else
            tab.active[r] = false;
    }

    Eigen::VectorXd cost = Eigen::VectorXd::Zero(n + m);
    cost.head(n) = c;
    if (!run_phase(tab, cost, n)) {
        result.status = LpStatus::Unbounded;
        return result;
    }
    result.status = LpStatus::Optimal;
    result.x = Eigen::VectorXd::Zero(n);
    for (int r = 0; r < m; ++r)
        if (tab.active[r] && tab.basis[r] < n) result.x(tab.basis[r]) = tab.beta(r);
    result.objective = c.dot(result.x);
    result.y = dual_from_basis(A_aug, tab, cost).cwiseProduct(sign);
    return result;
}

} // namespace tiltcal::detail
