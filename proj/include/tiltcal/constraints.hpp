#pragma once

#include "tiltcal/model.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace tiltcal {

enum class Comparison { Eq, Ne, Lt, Le, Gt, Ge, Between, InSet, IsMissing, NotMissing };

/// Comparison or set-membership test on one covariate. Categorical values
/// are compared by level index. Between is inclusive on both ends.
struct CovariateTest {
    std::size_t feature = 0;
    Comparison op = Comparison::Eq;
    double value = 0.0;
    double upper = 0.0;       // Between only
    std::vector<double> set;  // InSet only

    bool operator==(const CovariateTest&) const = default;
};

bool references_missing(const CovariateTest& test, const BaselineRecord& x);
/// Evaluates the test; a missing value satisfies only IsMissing.
bool test_holds(const CovariateTest& test, const BaselineRecord& x);

enum class Transform { Identity, Square, Log };

struct Moment {
    std::size_t feature = 0;
    Transform transform = Transform::Identity;
    bool operator==(const Moment&) const = default;
};

/// 1{test(x)}; raises missing-value if the tested covariate is missing
/// (except for the IsMissing / NotMissing comparisons).
struct Indicator {
    CovariateTest test;
    bool operator==(const Indicator&) const = default;
};

/// 1{any listed feature is missing}; an empty list means every feature.
struct AnyMissing {
    std::vector<std::size_t> features;
    bool operator==(const AnyMissing&) const = default;
};

/// Smooth baseline indicator sigma((threshold - x_feature) / scale).
struct BaselineSigmoid {
    std::size_t feature = 0;
    double threshold = 0.0;
    double scale = 1.0;
    bool operator==(const BaselineSigmoid&) const = default;
};

/// Exact outcome indicator 1{y <= threshold}.
struct OutcomeIndicator {
    double threshold = 0.0;
    bool operator==(const OutcomeIndicator&) const = default;
};

/// Which quantity of a published curve the constraint was read from. A
/// landmark fixes the time and reads the survival; a quantile (median) fixes
/// the probability and reads the time. The bootstrap refits whichever side
/// was read.
enum class QuantileAnchor { Time, Probability };

/// sigma((threshold - y) / scale), the smooth surrogate of 1{y <= threshold}.
struct SigmoidQuantile {
    double threshold = 0.0;
    double scale = 10.0;
    QuantileAnchor anchor = QuantileAnchor::Time;
    bool operator==(const SigmoidQuantile&) const = default;
};

using PlainStatistic =
    std::variant<Moment, Indicator, AnyMissing, BaselineSigmoid, OutcomeIndicator, SigmoidQuantile>;

/// Conjunction of covariate tests selecting a baseline subgroup.
struct Subgroup {
    std::vector<CovariateTest> tests;
    bool operator==(const Subgroup&) const = default;
};

/// A plain statistic, optionally scoped to a subgroup (one level only; the
/// inner statistic must be an outcome statistic). A scoped statistic is
/// 1{x in subgroup} * f(y); its target is the subgroup-normalized mean.
struct StatisticFn {
    PlainStatistic stat;
    std::optional<Subgroup> subgroup;
    bool operator==(const StatisticFn&) const = default;
};

bool is_outcome_statistic(const StatisticFn& fn);
bool is_time_typed(const StatisticFn& fn);

struct ConstraintMode {
    bool soft = false;
    double rho = 0.0; // penalty weight, soft only

    static ConstraintMode hard() { return {}; }
    static ConstraintMode soft_with(double rho) { return {true, rho}; }
    bool operator==(const ConstraintMode&) const = default;
};

struct ConstraintSpec {
    std::string label;
    StatisticFn statistic;
    double target = 0.0;
    ConstraintMode mode;
    bool operator==(const ConstraintSpec&) const = default;
};

struct EligibilitySpec {
    std::vector<CovariateTest> inclusions; // all must hold
    std::vector<CovariateTest> exclusions; // none may hold
    bool operator==(const EligibilitySpec&) const = default;
};

/// sigma((threshold - y) / scale) with the exponent clamped to [-40, 40].
double sigmoid_surrogate(double threshold, double scale, double y);

double evaluate_statistic(const StatisticFn& fn, const BaselineRecord& x, std::optional<Outcome> y);
/// Outcome part only (ignores any subgroup scope).
double evaluate_outcome(const PlainStatistic& stat, double days);
bool in_subgroup(const StatisticFn& fn, const BaselineRecord& x);

bool check_eligibility(const EligibilitySpec& spec, const BaselineRecord& x);

/// S(t) = survival becomes the hard constraint E[sigma((t - Y)/eps)] = 1 - survival.
ConstraintSpec landmark_to_quantile(double time_days, double survival, double eps = 10.0);
/// The p-quantile of Y equals time_days, i.e. E[sigma((t - Y)/eps)] = p.
ConstraintSpec quantile_constraint(double probability, double time_days, double eps = 10.0);

/// Schema errors for dangling feature indices; degenerate-target errors for
/// sigmoid targets outside (0, 1); precondition errors for bad penalties.
void validate_constraint(const CovariateSchema& schema, const ConstraintSpec& spec);
void validate_eligibility(const CovariateSchema& schema, const EligibilitySpec& spec);

std::string describe(const CovariateSchema& schema, const CovariateTest& test);

} // namespace tiltcal
