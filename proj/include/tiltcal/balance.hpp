#pragma once

#include "tiltcal/constraints.hpp"
#include "tiltcal/model.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace tiltcal {

/// Weighted baseline records. Weights are normalized so that they sum to
/// the cohort size (mean weight one).
struct Cohort {
    std::vector<BaselineRecord> records;
    std::vector<double> weights;
    std::vector<std::size_t> ids; // position in the candidate pool

    std::size_t size() const noexcept { return records.size(); }
    double total_weight() const;
};

/// Rescales the weights in place so they sum to the cohort size.
void normalize_weights(Cohort& cohort);

/// Keeps eligible samples with unit weight. Throws empty-cohort when no
/// sample survives.
Cohort filter_eligible(const std::vector<BaselineRecord>& samples, const EligibilitySpec& spec);

struct DualState {
    std::vector<std::string> labels;
    std::vector<double> nu;
    std::vector<bool> soft;
    std::vector<double> rho; // 0 for hard constraints
    std::vector<double> target;
    std::vector<double> achieved;
    std::vector<double> residual;              // achieved - target
    std::vector<std::size_t> imputed_missing; // records whose statistic was missing, per constraint
    int iterations = 0;
    double gradient_norm = 0.0;
    bool used_quasi_newton = false;
};

struct BalanceOptions {
    int max_iterations = 500;
    double gradient_tolerance = 1e-10;
    double multiplier_cap = 50.0;
    double condition_limit = 1e12;
    bool check_feasibility = true;
};

struct BalanceResult {
    Cohort cohort;
    DualState dual;
};

/// Entropy balancing relative to the cohort's current weights: minimizes
/// KL(w' || w) subject to the hard moments holding exactly and a quadratic
/// penalty on the soft residuals. Weights come back normalized to sum N.
BalanceResult solve_entropy_balance(const Cohort& cohort, const std::vector<ConstraintSpec>& constraints,
                                    const BalanceOptions& options = {});

struct FeasibilityVerdict {
    bool feasible = true;
    std::vector<double> witness; // unit direction u with u.(phi_i - b) <= 0 for every record
    std::string violating;       // label of the constraint with the largest witness component
    double interior_margin = 0.0;
};

/// Decides whether the hard targets lie in the relative interior of the
/// convex hull of the per-record statistic vectors, by linear programming.
FeasibilityVerdict feasibility_check(const Cohort& cohort, const std::vector<ConstraintSpec>& hard_constraints);

struct BalanceReport {
    std::size_t n = 0;
    double ess = 0.0;
    double ess_over_n = 0.0;
    double max_over_mean = 0.0;
    double top5_share = 0.0;
    double top10_share = 0.0;
    // quantiles of w / mean(w)
    double q01 = 0.0, q05 = 0.0, q25 = 0.0, q50 = 0.0, q75 = 0.0, q95 = 0.0, q99 = 0.0;

    bool operator==(const BalanceReport&) const = default;
};

BalanceReport weight_diagnostics(const std::vector<double>& weights);
inline BalanceReport weight_diagnostics(const Cohort& cohort) { return weight_diagnostics(cohort.weights); }

/// Linear-interpolation sample quantile (the usual "type 7" definition).
double sample_quantile(std::vector<double> values, double p);

} // namespace tiltcal
