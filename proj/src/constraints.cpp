#include "tiltcal/constraints.hpp"
#include "tiltcal/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tiltcal {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool compare(Comparison op, double v, const CovariateTest& t) {
    switch (op) {
    case Comparison::Eq: return v == t.value;
    case Comparison::Ne: return v != t.value;
    case Comparison::Lt: return v < t.value;
    case Comparison::Le: return v <= t.value;
    case Comparison::Gt: return v > t.value;
    case Comparison::Ge: return v >= t.value;
    case Comparison::Between: return v >= t.value && v <= t.upper;
    case Comparison::InSet: return std::find(t.set.begin(), t.set.end(), v) != t.set.end();
    case Comparison::IsMissing: return false;
    case Comparison::NotMissing: return true;
    }
    return false;
}

bool is_missingness_test(Comparison op) { return op == Comparison::IsMissing || op == Comparison::NotMissing; }

const FeatureValue& slot(const BaselineRecord& x, std::size_t feature) {
    if (feature >= x.values.size()) fail(ErrorKind::Schema, "feature index out of range for record");
    return x.values[feature];
}

void check_feature(const CovariateSchema& schema, std::size_t feature) {
    if (feature >= schema.size())
        fail(ErrorKind::Schema, "constraint references feature index " + std::to_string(feature) +
                                    " but schema has " + std::to_string(schema.size()));
}

void check_test(const CovariateSchema& schema, const CovariateTest& t) {
    check_feature(schema, t.feature);
    if (t.op == Comparison::Between && t.upper < t.value)
        fail(ErrorKind::Schema, "between-test with upper < lower on '" + schema.feature(t.feature).name + "'");
}

} // namespace

bool references_missing(const CovariateTest& test, const BaselineRecord& x) { return !slot(x, test.feature); }

bool test_holds(const CovariateTest& test, const BaselineRecord& x) {
    const auto& v = slot(x, test.feature);
    if (!v) return test.op == Comparison::IsMissing;
    return compare(test.op, *v, test);
}

bool is_outcome_statistic(const StatisticFn& fn) {
    return std::holds_alternative<OutcomeIndicator>(fn.stat) || std::holds_alternative<SigmoidQuantile>(fn.stat);
}

bool is_time_typed(const StatisticFn& fn) { return is_outcome_statistic(fn) && !fn.subgroup; }

double sigmoid_surrogate(double threshold, double scale, double y) {
    const double z = std::clamp((threshold - y) / scale, -40.0, 40.0);
    return 1.0 / (1.0 + std::exp(-z));
}

double evaluate_outcome(const PlainStatistic& stat, double days) {
    return std::visit(overloaded{
                          [&](const OutcomeIndicator& s) { return days <= s.threshold ? 1.0 : 0.0; },
                          [&](const SigmoidQuantile& s) { return sigmoid_surrogate(s.threshold, s.scale, days); },
                          [](const auto&) -> double {
                              fail(ErrorKind::Precondition, "baseline statistic evaluated on an outcome");
                          },
                      },
                      stat);
}

bool in_subgroup(const StatisticFn& fn, const BaselineRecord& x) {
    if (!fn.subgroup) return true;
    return std::all_of(fn.subgroup->tests.begin(), fn.subgroup->tests.end(),
                       [&](const CovariateTest& t) { return test_holds(t, x); });
}

double evaluate_statistic(const StatisticFn& fn, const BaselineRecord& x, std::optional<Outcome> y) {
    const bool outcome = is_outcome_statistic(fn);
    require(outcome == y.has_value(), outcome ? "outcome statistic needs an outcome"
                                              : "baseline statistic must not be given an outcome");
    if (outcome) {
        if (!in_subgroup(fn, x)) return 0.0;
        return evaluate_outcome(fn.stat, y->days);
    }
    return std::visit(
        overloaded{
            [&](const Moment& m) {
                const auto& v = slot(x, m.feature);
                if (!v) fail(ErrorKind::MissingValue, "moment on missing feature " + std::to_string(m.feature));
                switch (m.transform) {
                case Transform::Identity: return *v;
                case Transform::Square: return *v * *v;
                case Transform::Log:
                    if (!(*v > 0.0)) fail(ErrorKind::Precondition, "log moment of a non-positive value");
                    return std::log(*v);
                }
                return *v;
            },
            [&](const Indicator& s) {
                if (!is_missingness_test(s.test.op) && references_missing(s.test, x))
                    fail(ErrorKind::MissingValue, "indicator on missing feature " + std::to_string(s.test.feature));
                return test_holds(s.test, x) ? 1.0 : 0.0;
            },
            [&](const AnyMissing& s) {
                if (s.features.empty()) return x.has_missing() ? 1.0 : 0.0;
                for (std::size_t f : s.features)
                    if (!slot(x, f)) return 1.0;
                return 0.0;
            },
            [&](const BaselineSigmoid& s) {
                const auto& v = slot(x, s.feature);
                if (!v) fail(ErrorKind::MissingValue, "sigmoid on missing feature " + std::to_string(s.feature));
                return sigmoid_surrogate(s.threshold, s.scale, *v);
            },
            [](const auto&) -> double { return 0.0; },
        },
        fn.stat);
}

bool check_eligibility(const EligibilitySpec& spec, const BaselineRecord& x) {
    const auto missing = [&](const CovariateTest& t) { return !is_missingness_test(t.op) && references_missing(t, x); };
    for (const auto& t : spec.inclusions)
        if (missing(t) || !test_holds(t, x)) return false;
    for (const auto& t : spec.exclusions)
        if (missing(t) || test_holds(t, x)) return false;
    return true;
}

ConstraintSpec landmark_to_quantile(double time_days, double survival, double eps) {
    if (!(survival > 0.0 && survival < 1.0))
        fail(ErrorKind::DegenerateTarget, "landmark survival must lie strictly inside (0, 1)");
    require(eps > 0.0, "sigmoid scale must be > 0");
    std::ostringstream label;
    label << "S(" << time_days << ")";
    return {label.str(), StatisticFn{SigmoidQuantile{time_days, eps, QuantileAnchor::Time}, std::nullopt},
            1.0 - survival, ConstraintMode::hard()};
}

ConstraintSpec quantile_constraint(double probability, double time_days, double eps) {
    if (!(probability > 0.0 && probability < 1.0))
        fail(ErrorKind::DegenerateTarget, "quantile probability must lie strictly inside (0, 1)");
    require(eps > 0.0, "sigmoid scale must be > 0");
    std::ostringstream label;
    label << "q" << probability << "=" << time_days;
    return {label.str(), StatisticFn{SigmoidQuantile{time_days, eps, QuantileAnchor::Probability}, std::nullopt},
            probability, ConstraintMode::hard()};
}

void validate_constraint(const CovariateSchema& schema, const ConstraintSpec& spec) {
    const std::string who = "constraint '" + spec.label + "'";
    if (!std::isfinite(spec.target)) fail(ErrorKind::Schema, who + ": target must be finite");
    if (spec.mode.soft && !(spec.mode.rho > 0.0 && std::isfinite(spec.mode.rho)))
        fail(ErrorKind::Precondition, who + ": soft penalty weight must be > 0");
    if (spec.statistic.subgroup) {
        if (!is_outcome_statistic(spec.statistic))
            fail(ErrorKind::Schema, who + ": subgroup scope requires an outcome statistic");
        for (const auto& t : spec.statistic.subgroup->tests) check_test(schema, t);
    }
    std::visit(overloaded{
                   [&](const Moment& m) {
                       check_feature(schema, m.feature);
                       if (schema.feature(m.feature).kind != FeatureKind::Continuous)
                           fail(ErrorKind::Schema, who + ": moment of a categorical feature");
                   },
                   [&](const Indicator& s) { check_test(schema, s.test); },
                   [&](const AnyMissing& s) {
                       for (auto f : s.features) check_feature(schema, f);
                   },
                   [&](const BaselineSigmoid& s) {
                       check_feature(schema, s.feature);
                       if (!(s.scale > 0.0)) fail(ErrorKind::Schema, who + ": sigmoid scale must be > 0");
                   },
                   [&](const OutcomeIndicator& s) {
                       if (!std::isfinite(s.threshold)) fail(ErrorKind::Schema, who + ": threshold must be finite");
                   },
                   [&](const SigmoidQuantile& s) {
                       if (!(s.scale > 0.0)) fail(ErrorKind::Schema, who + ": sigmoid scale must be > 0");
                       if (!std::isfinite(s.threshold)) fail(ErrorKind::Schema, who + ": threshold must be finite");
                       if (!(spec.target > 0.0 && spec.target < 1.0))
                           fail(ErrorKind::DegenerateTarget, who + ": target must lie strictly inside (0, 1)");
                   },
               },
               spec.statistic.stat);
}

void validate_eligibility(const CovariateSchema& schema, const EligibilitySpec& spec) {
    for (const auto& t : spec.inclusions) check_test(schema, t);
    for (const auto& t : spec.exclusions) check_test(schema, t);
}

std::string describe(const CovariateSchema& schema, const CovariateTest& test) {
    std::ostringstream os;
    const auto& f = schema.feature(test.feature);
    os << f.name;
    const auto val = [&](double v) {
        if (f.kind == FeatureKind::Categorical && v >= 0 && v < static_cast<double>(f.levels.size()))
            return f.levels[static_cast<std::size_t>(v)];
        std::ostringstream s;
        s << v;
        return s.str();
    };
    switch (test.op) {
    case Comparison::Eq: os << " == " << val(test.value); break;
    case Comparison::Ne: os << " != " << val(test.value); break;
    case Comparison::Lt: os << " < " << val(test.value); break;
    case Comparison::Le: os << " <= " << val(test.value); break;
    case Comparison::Gt: os << " > " << val(test.value); break;
    case Comparison::Ge: os << " >= " << val(test.value); break;
    case Comparison::Between: os << " in [" << val(test.value) << ", " << val(test.upper) << "]"; break;
    case Comparison::InSet: {
        os << " in {";
        for (std::size_t i = 0; i < test.set.size(); ++i) os << (i ? ", " : "") << val(test.set[i]);
        os << "}";
        break;
    }
    case Comparison::IsMissing: os << " is missing"; break;
    case Comparison::NotMissing: os << " is not missing"; break;
    }
    return os.str();
}

} // namespace tiltcal
