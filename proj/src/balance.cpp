#include "tiltcal/balance.hpp"
#include "tiltcal/error.hpp"
#include "simplex.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace tiltcal {

double Cohort::total_weight() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

void normalize_weights(Cohort& cohort) {
    const double total = cohort.total_weight();
    if (!(total > 0.0) || !std::isfinite(total)) fail(ErrorKind::DegenerateInput, "cohort weights sum to zero");
    const double f = static_cast<double>(cohort.size()) / total;
    for (double& w : cohort.weights) w *= f;
}

Cohort filter_eligible(const std::vector<BaselineRecord>& samples, const EligibilitySpec& spec) {
    require(!samples.empty(), "filter_eligible: no samples");
    Cohort c;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!check_eligibility(spec, samples[i])) continue;
        c.records.push_back(samples[i]);
        c.ids.push_back(i);
    }
    if (c.records.empty())
        fail(ErrorKind::EmptyCohort, "no candidate out of " + std::to_string(samples.size()) +
                                         " passes eligibility; check the specification against the model");
    c.weights.assign(c.records.size(), 1.0);
    return c;
}

namespace {

struct StatisticMatrix {
    Eigen::MatrixXd d; // N x K, phi - b with missing entries imputed to 0
    std::vector<std::size_t> imputed;
};

StatisticMatrix centered_statistics(const Cohort& cohort, const std::vector<ConstraintSpec>& constraints) {
    const auto n = static_cast<Eigen::Index>(cohort.size());
    const auto k = static_cast<Eigen::Index>(constraints.size());
    StatisticMatrix m{Eigen::MatrixXd::Zero(n, k), std::vector<std::size_t>(constraints.size(), 0)};
    for (Eigen::Index j = 0; j < k; ++j) {
        const auto& spec = constraints[static_cast<std::size_t>(j)];
        if (is_outcome_statistic(spec.statistic))
            fail(ErrorKind::Precondition, "constraint '" + spec.label + "' is an outcome statistic, not a baseline one");
        for (Eigen::Index i = 0; i < n; ++i) {
            try {
                m.d(i, j) = evaluate_statistic(spec.statistic, cohort.records[static_cast<std::size_t>(i)],
                                               std::nullopt) -
                            spec.target;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::MissingValue) throw;
                // missing value: neutral contribution, flagged
                m.d(i, j) = 0.0;
                ++m.imputed[static_cast<std::size_t>(j)];
            }
        }
    }
    return m;
}

struct DualEval {
    double value = 0.0;
    Eigen::VectorXd p;    // tilted probabilities
    Eigen::VectorXd mean; // E_p[phi - b]
};

DualEval evaluate_dual(const Eigen::MatrixXd& d, const Eigen::VectorXd& log_q, const Eigen::VectorXd& nu,
                       const Eigen::VectorXd& inv_rho) {
    const Eigen::VectorXd s = log_q + d * nu;
    const double smax = s.maxCoeff();
    DualEval e;
    e.p = (s.array() - smax).exp();
    const double z = e.p.sum();
    e.p /= z;
    e.value = smax + std::log(z) + 0.5 * (nu.array().square() * inv_rho.array()).sum();
    e.mean = d.transpose() * e.p;
    return e;
}

} // namespace

BalanceResult solve_entropy_balance(const Cohort& cohort, const std::vector<ConstraintSpec>& constraints,
                                    const BalanceOptions& options) {
    if (cohort.size() == 0) fail(ErrorKind::EmptyCohort, "entropy balancing on an empty cohort");
    require(cohort.weights.size() == cohort.size(), "cohort weights and records differ in length");
    for (const auto& c : constraints) {
        require(std::isfinite(c.target), "constraint '" + c.label + "' has a non-finite target");
        require(!c.mode.soft || c.mode.rho > 0.0, "constraint '" + c.label + "' has a non-positive penalty");
    }

    BalanceResult result;
    result.cohort = cohort;
    normalize_weights(result.cohort);
    auto& dual = result.dual;
    for (const auto& c : constraints) {
        dual.labels.push_back(c.label);
        dual.soft.push_back(c.mode.soft);
        dual.rho.push_back(c.mode.soft ? c.mode.rho : 0.0);
        dual.target.push_back(c.target);
    }
    if (constraints.empty()) return result;

    if (options.check_feasibility) {
        std::vector<ConstraintSpec> hard;
        for (const auto& c : constraints)
            if (!c.mode.soft) hard.push_back(c);
        if (!hard.empty()) {
            const auto verdict = feasibility_check(result.cohort, hard);
            if (!verdict.feasible) {
                std::ostringstream os;
                os << "hard constraints infeasible: targets outside the relative interior of the cohort's "
                      "statistic hull; violating constraint '"
                   << verdict.violating << "', witness direction (";
                for (std::size_t k = 0; k < verdict.witness.size(); ++k)
                    os << (k ? ", " : "") << verdict.witness[k];
                os << ")";
                fail(ErrorKind::Infeasible, os.str());
            }
        }
    }

    const auto sm = centered_statistics(result.cohort, constraints);
    const Eigen::MatrixXd& d = sm.d;
    dual.imputed_missing = sm.imputed;
    const auto n = d.rows();
    const auto k = d.cols();

    Eigen::VectorXd log_q(n);
    const double total = result.cohort.total_weight();
    for (Eigen::Index i = 0; i < n; ++i) {
        const double w = result.cohort.weights[static_cast<std::size_t>(i)];
        log_q(i) = w > 0.0 ? std::log(w / total) : -std::numeric_limits<double>::infinity();
    }
    Eigen::VectorXd inv_rho = Eigen::VectorXd::Zero(k);
    for (Eigen::Index j = 0; j < k; ++j)
        if (constraints[static_cast<std::size_t>(j)].mode.soft)
            inv_rho(j) = 1.0 / constraints[static_cast<std::size_t>(j)].mode.rho;

    Eigen::VectorXd nu = Eigen::VectorXd::Zero(k);
    DualEval cur = evaluate_dual(d, log_q, nu, inv_rho);
    Eigen::VectorXd grad = cur.mean + inv_rho.cwiseProduct(nu);
    Eigen::MatrixXd hinv; // quasi-Newton inverse Hessian, empty when unused
    int iter = 0;

    for (; iter < options.max_iterations; ++iter) {
        if (grad.norm() <= options.gradient_tolerance) break;
        if (nu.cwiseAbs().maxCoeff() > options.multiplier_cap) break;

        // Hessian = Cov_p(phi) + diag(1/rho)
        const Eigen::MatrixXd centered = d.rowwise() - cur.mean.transpose();
        Eigen::MatrixXd hess = centered.transpose() * cur.p.asDiagonal() * centered;
        hess.diagonal() += inv_rho;

        const Eigen::VectorXd diag = hess.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
        const Eigen::MatrixXd scaled = diag.asDiagonal() * hess * diag.asDiagonal();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
        const double lmax = eig.eigenvalues().maxCoeff();
        const double lmin = eig.eigenvalues().minCoeff();
        const bool well_conditioned = lmin > 0.0 && lmax / lmin <= options.condition_limit;

        Eigen::VectorXd step;
        if (well_conditioned) {
            hinv.resize(0, 0);
            step = -hess.ldlt().solve(grad);
        } else {
            dual.used_quasi_newton = true;
            if (hinv.size() == 0) {
                // pseudo-inverse of the scaled Hessian; directions with no
                // curvature are left out of the search space
                Eigen::VectorXd inv_ev = eig.eigenvalues();
                for (Eigen::Index j = 0; j < k; ++j)
                    inv_ev(j) = inv_ev(j) > lmax * 1e-12 ? 1.0 / inv_ev(j) : 0.0;
                hinv = diag.asDiagonal() * eig.eigenvectors() * inv_ev.asDiagonal() *
                       eig.eigenvectors().transpose() * diag.asDiagonal();
            }
            step = -hinv * grad;
        }
        double slope = grad.dot(step);
        if (!(slope < 0.0)) {
            step = -grad;
            slope = -grad.squaredNorm();
            hinv.resize(0, 0);
        }

        double t = 1.0;
        DualEval next;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            next = evaluate_dual(d, log_q, nu + t * step, inv_rho);
            if (std::isfinite(next.value) && next.value <= cur.value + 1e-4 * t * slope) {
                accepted = true;
                break;
            }
            // near the optimum the decrease drops below the rounding of the
            // dual value; a full step that halves the gradient is kept
            if (ls == 0 && std::isfinite(next.value) &&
                (next.mean + inv_rho.cwiseProduct(nu + step)).norm() < 0.5 * grad.norm()) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            // line search can make no progress: we are at the floating-point floor
            break;
        }
        const Eigen::VectorXd s = t * step;
        nu += s;
        const Eigen::VectorXd new_grad = next.mean + inv_rho.cwiseProduct(nu);
        if (hinv.size() != 0) {
            const Eigen::VectorXd y = new_grad - grad;
            const double sy = s.dot(y);
            if (sy > 1e-300) {
                const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
                const double r = 1.0 / sy;
                hinv = (I - r * s * y.transpose()) * hinv * (I - r * y * s.transpose()) + r * s * s.transpose();
            }
        }
        cur = std::move(next);
        grad = new_grad;
    }

    dual.iterations = iter;
    dual.gradient_norm = grad.norm();
    dual.nu.assign(nu.data(), nu.data() + k);
    dual.achieved.resize(static_cast<std::size_t>(k));
    dual.residual.resize(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < k; ++j) {
        dual.residual[static_cast<std::size_t>(j)] = cur.mean(j);
        dual.achieved[static_cast<std::size_t>(j)] = cur.mean(j) + constraints[static_cast<std::size_t>(j)].target;
    }

    const bool capped = nu.cwiseAbs().maxCoeff() > options.multiplier_cap;
    // Stalled line searches are tolerated only when the gradient already sits
    // at round-off level relative to the statistic scale.
    const double floor_tol = std::max(options.gradient_tolerance, 1e-12 * (1.0 + d.cwiseAbs().maxCoeff()));
    if (capped || dual.gradient_norm > floor_tol) {
        std::ostringstream os;
        os << "entropy balancing did not converge after " << iter << " iterations";
        if (capped) os << " (multiplier magnitude exceeded " << options.multiplier_cap << ")";
        os << "; gradient norm " << dual.gradient_norm << "; residuals:";
        for (Eigen::Index j = 0; j < k; ++j)
            os << " " << constraints[static_cast<std::size_t>(j)].label << "=" << dual.residual[static_cast<std::size_t>(j)];
        fail(ErrorKind::Divergence, os.str());
    }

    for (Eigen::Index i = 0; i < n; ++i)
        result.cohort.weights[static_cast<std::size_t>(i)] = cur.p(i) * static_cast<double>(n);
    return result;
}

FeasibilityVerdict feasibility_check(const Cohort& cohort, const std::vector<ConstraintSpec>& hard_constraints) {
    FeasibilityVerdict verdict;
    if (hard_constraints.empty()) return verdict;
    const auto sm = centered_statistics(cohort, hard_constraints);
    const auto k = sm.d.cols();

    // only records with positive reference weight span the support
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < sm.d.rows(); ++i)
        if (cohort.weights[static_cast<std::size_t>(i)] > 0.0) rows.push_back(i);
    if (rows.empty()) fail(ErrorKind::EmptyCohort, "feasibility check on a cohort with no positive weight");

    // identical statistic vectors are the same hull point
    std::sort(rows.begin(), rows.end(), [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index j = 0; j < k; ++j)
            if (sm.d(a, j) != sm.d(b, j)) return sm.d(a, j) < sm.d(b, j);
        return a < b;
    });
    rows.erase(std::unique(rows.begin(), rows.end(),
                           [&](Eigen::Index a, Eigen::Index b) { return sm.d.row(a) == sm.d.row(b); }),
               rows.end());
    const auto m = static_cast<Eigen::Index>(rows.size());

    Eigen::MatrixXd pts(m, k);
    for (Eigen::Index r = 0; r < m; ++r) pts.row(r) = sm.d.row(rows[static_cast<std::size_t>(r)]);
    Eigen::VectorXd scale(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double mean = pts.col(j).mean();
        const double sd = std::sqrt((pts.col(j).array() - mean).square().mean());
        scale(j) = sd > 0.0 ? sd : std::max(1.0, pts.col(j).cwiseAbs().maxCoeff());
        pts.col(j) /= scale(j);
    }

    // variables: mu_1..mu_m >= 0, tau, slack; lambda_i = mu_i + tau / m
    const Eigen::Index cols = m + 2;
    const Eigen::Index lp_rows = k + 2;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(lp_rows, cols);
    A.topLeftCorner(k, m) = pts.transpose();
    A.block(0, m, k, 1) = pts.colwise().mean().transpose();
    A.block(k, 0, 1, m).setOnes();
    A(k, m) = 1.0;
    A(k + 1, m) = 1.0;
    A(k + 1, m + 1) = 1.0;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(lp_rows);
    b(k) = 1.0;
    b(k + 1) = 1.0;
    Eigen::VectorXd c = Eigen::VectorXd::Zero(cols);
    c(m) = 1.0;

    const auto lp = detail::solve_lp(A, b, c);
    if (lp.status == detail::LpStatus::Optimal && lp.objective > 1e-9) {
        verdict.feasible = true;
        verdict.interior_margin = lp.objective;
        return verdict;
    }
    verdict.feasible = false;
    // the dual certificate gives u = -y_K with u.(phi_i - b) <= 0 for all i
    // (strictly when the target is outside the hull)
    Eigen::VectorXd u = -lp.y.head(k);
    if (u.norm() == 0.0) u = Eigen::VectorXd::Ones(k);
    Eigen::Index worst = 0;
    u.cwiseAbs().maxCoeff(&worst);
    verdict.violating = hard_constraints[static_cast<std::size_t>(worst)].label;
    Eigen::VectorXd original = u.cwiseQuotient(scale);
    original /= original.norm();
    verdict.witness.assign(original.data(), original.data() + k);
    return verdict;
}

double sample_quantile(std::vector<double> values, double p) {
    require(!values.empty(), "quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BalanceReport weight_diagnostics(const std::vector<double>& weights) {
    require(!weights.empty(), "weight diagnostics of an empty cohort");
    BalanceReport r;
    r.n = weights.size();
    double sum = 0.0, sum_sq = 0.0, wmax = 0.0;
    for (double w : weights) {
        sum += w;
        sum_sq += w * w;
        wmax = std::max(wmax, w);
    }
    require(sum > 0.0, "weight diagnostics: weights sum to zero");
    const double mean = sum / static_cast<double>(r.n);
    r.ess = sum * sum / sum_sq;
    r.ess_over_n = r.ess / static_cast<double>(r.n);
    r.max_over_mean = wmax / mean;

    std::vector<double> rel(weights.size());
    std::transform(weights.begin(), weights.end(), rel.begin(), [&](double w) { return w / mean; });
    std::sort(rel.begin(), rel.end());
    r.q01 = sample_quantile(rel, 0.01);
    r.q05 = sample_quantile(rel, 0.05);
    r.q25 = sample_quantile(rel, 0.25);
    r.q50 = sample_quantile(rel, 0.50);
    r.q75 = sample_quantile(rel, 0.75);
    r.q95 = sample_quantile(rel, 0.95);
    r.q99 = sample_quantile(rel, 0.99);

    // share of total weight held by the heaviest fraction f of records,
    // counting a fractional record at the boundary
    const auto share = [&](double f) {
        const double count = f * static_cast<double>(r.n);
        const auto whole = static_cast<std::size_t>(std::floor(count));
        double s = 0.0;
        for (std::size_t i = 0; i < whole && i < rel.size(); ++i) s += rel[rel.size() - 1 - i];
        if (whole < rel.size()) s += (count - static_cast<double>(whole)) * rel[rel.size() - 1 - whole];
        return s / static_cast<double>(r.n);
    };
    r.top5_share = share(0.05);
    r.top10_share = share(0.10);
    return r;
}

} // namespace tiltcal
