#include "tiltcal/constraints.hpp"
#include "tiltcal/error.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tiltcal;

namespace {

CovariateSchema schema() {
    return CovariateSchema({{"age", FeatureKind::Continuous, "years", {}, false},
                            {"ecog", FeatureKind::Categorical, "", {"0", "1", "2"}, true},
                            {"albumin", FeatureKind::Continuous, "g/dL", {}, true}});
}

CovariateTest test(std::size_t f, Comparison op, double v, double upper = 0.0) {
    CovariateTest t;
    t.feature = f, t.op = op, t.value = v, t.upper = upper;
    return t;
}

} // namespace

TEST(Tests, ComparisonsAndMissing) {
    BaselineRecord x{{50.0, 1.0, std::nullopt}};
    EXPECT_TRUE(test_holds(test(0, Comparison::Between, 50, 60), x));
    EXPECT_TRUE(test_holds(test(0, Comparison::Between, 40, 50), x));
    EXPECT_FALSE(test_holds(test(0, Comparison::Lt, 50), x));
    EXPECT_TRUE(test_holds(test(0, Comparison::Le, 50), x));
    EXPECT_TRUE(test_holds(test(1, Comparison::Ne, 0), x));
    auto in = test(1, Comparison::InSet, 0);
    in.set = {0, 1};
    EXPECT_TRUE(test_holds(in, x));
    EXPECT_TRUE(test_holds(test(2, Comparison::IsMissing, 0), x));
    EXPECT_FALSE(test_holds(test(2, Comparison::NotMissing, 0), x));
    EXPECT_FALSE(test_holds(test(2, Comparison::Gt, 0), x));
    EXPECT_TRUE(references_missing(test(2, Comparison::Gt, 0), x));
}

TEST(Statistics, BaselineValues) {
    BaselineRecord x{{4.0, 2.0, 3.5}};
    EXPECT_DOUBLE_EQ(evaluate_statistic({Moment{0, Transform::Square}, {}}, x, {}), 16.0);
    EXPECT_DOUBLE_EQ(evaluate_statistic({Moment{0, Transform::Log}, {}}, x, {}), std::log(4.0));
    EXPECT_DOUBLE_EQ(evaluate_statistic({Indicator{test(1, Comparison::Eq, 2)}, {}}, x, {}), 1.0);
    EXPECT_DOUBLE_EQ(evaluate_statistic({AnyMissing{}, {}}, x, {}), 0.0);
    EXPECT_NEAR(evaluate_statistic({BaselineSigmoid{0, 4.0, 1.0}, {}}, x, {}), 0.5, 1e-15);
}

TEST(Statistics, MissingValueRaises) {
    BaselineRecord x{{4.0, std::nullopt, std::nullopt}};
    try {
        evaluate_statistic({Moment{2, Transform::Identity}, {}}, x, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::MissingValue);
    }
    EXPECT_THROW(evaluate_statistic({Indicator{test(1, Comparison::Eq, 0)}, {}}, x, {}), Error);
    EXPECT_DOUBLE_EQ(evaluate_statistic({Indicator{test(1, Comparison::IsMissing, 0)}, {}}, x, {}), 1.0);
    EXPECT_DOUBLE_EQ(evaluate_statistic({AnyMissing{{1}}, {}}, x, {}), 1.0);
    EXPECT_DOUBLE_EQ(evaluate_statistic({AnyMissing{{0}}, {}}, x, {}), 0.0);
}

TEST(Statistics, OutcomeAndSubgroupScope) {
    BaselineRecord young{{40.0, 0.0, 3.0}}, old{{70.0, 0.0, 3.0}};
    StatisticFn ind{OutcomeIndicator{100.0}, {}};
    EXPECT_DOUBLE_EQ(evaluate_statistic(ind, young, Outcome{100.0}), 1.0);
    EXPECT_DOUBLE_EQ(evaluate_statistic(ind, young, Outcome{100.5}), 0.0);
    StatisticFn scoped{SigmoidQuantile{200.0, 10.0}, Subgroup{{test(0, Comparison::Ge, 65)}}};
    EXPECT_DOUBLE_EQ(evaluate_statistic(scoped, young, Outcome{200.0}), 0.0);
    EXPECT_NEAR(evaluate_statistic(scoped, old, Outcome{200.0}), 0.5, 1e-15);
    EXPECT_TRUE(is_outcome_statistic(scoped));
    EXPECT_FALSE(is_time_typed(scoped));
    EXPECT_THROW(evaluate_statistic(ind, young, std::nullopt), Error);
    EXPECT_THROW(evaluate_statistic({Moment{0}, {}}, young, Outcome{1.0}), Error);
}

TEST(Sigmoid, SurrogateApproachesIndicator) {
    for (double y : {50.0, 150.0, 99.0, 101.0}) {
        const double exact = y <= 100.0 ? 1.0 : 0.0;
        EXPECT_NEAR(sigmoid_surrogate(100.0, 0.01, y), exact, 1e-12);
    }
    EXPECT_DOUBLE_EQ(sigmoid_surrogate(0.0, 1.0, 1e6), 1.0 / (1.0 + std::exp(40.0)));
    const double a = sigmoid_surrogate(100.0, 10.0, 90.0), b = sigmoid_surrogate(100.0, 10.0, 110.0);
    EXPECT_NEAR(a + b, 1.0, 1e-15);
}

TEST(Landmarks, LandmarkAndQuantileForms) {
    const auto lm = landmark_to_quantile(365.0, 0.41);
    EXPECT_DOUBLE_EQ(lm.target, 1.0 - 0.41);
    EXPECT_TRUE(is_time_typed(lm.statistic));
    const auto& sq = std::get<SigmoidQuantile>(lm.statistic.stat);
    EXPECT_EQ(sq.anchor, QuantileAnchor::Time);
    EXPECT_DOUBLE_EQ(sq.threshold, 365.0);
    EXPECT_DOUBLE_EQ(sq.scale, 10.0);
    const auto q = quantile_constraint(0.5, 311.0);
    EXPECT_DOUBLE_EQ(q.target, 0.5);
    EXPECT_EQ(std::get<SigmoidQuantile>(q.statistic.stat).anchor, QuantileAnchor::Probability);
    for (double s : {0.0, 1.0, -0.1})
        EXPECT_THROW(landmark_to_quantile(100.0, s), Error);
}

TEST(Eligibility, InclusionsExclusionsAndMissing) {
    EligibilitySpec spec;
    spec.inclusions = {test(0, Comparison::Between, 18, 75), test(1, Comparison::Le, 1)};
    spec.exclusions = {test(2, Comparison::Lt, 2.5)};
    EXPECT_TRUE(check_eligibility(spec, {{60.0, 1.0, 3.0}}));
    EXPECT_FALSE(check_eligibility(spec, {{80.0, 1.0, 3.0}}));
    EXPECT_FALSE(check_eligibility(spec, {{60.0, 2.0, 3.0}}));
    EXPECT_FALSE(check_eligibility(spec, {{60.0, 1.0, 2.0}}));
    // a missing value cannot be certified either way
    EXPECT_FALSE(check_eligibility(spec, {{60.0, std::nullopt, 3.0}}));
    EXPECT_FALSE(check_eligibility(spec, {{60.0, 1.0, std::nullopt}}));
}

TEST(Validation, SchemaAndTargetErrors) {
    const auto s = schema();
    ConstraintSpec dangling{"x", {Moment{7}, {}}, 1.0, {}};
    try {
        validate_constraint(s, dangling);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Schema);
    }
    ConstraintSpec categorical_moment{"x", {Moment{1}, {}}, 1.0, {}};
    EXPECT_THROW(validate_constraint(s, categorical_moment), Error);
    ConstraintSpec bad_target{"x", {SigmoidQuantile{100.0, 10.0}, {}}, 1.0, {}};
    try {
        validate_constraint(s, bad_target);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DegenerateTarget);
    }
    ConstraintSpec bad_rho{"x", {Moment{0}, {}}, 1.0, ConstraintMode::soft_with(0.0)};
    EXPECT_THROW(validate_constraint(s, bad_rho), Error);
    ConstraintSpec baseline_scoped{"x", {Moment{0}, Subgroup{{test(0, Comparison::Gt, 1)}}}, 1.0, {}};
    EXPECT_THROW(validate_constraint(s, baseline_scoped), Error);
    EXPECT_NO_THROW(validate_constraint(s, landmark_to_quantile(100.0, 0.5)));
    EligibilitySpec elig;
    elig.inclusions = {test(0, Comparison::Between, 60, 50)};
    EXPECT_THROW(validate_eligibility(s, elig), Error);
}

TEST(Describe, NamesLevels) {
    const auto s = schema();
    EXPECT_EQ(describe(s, test(1, Comparison::Le, 1)), "ecog <= 1");
    EXPECT_EQ(describe(s, test(0, Comparison::Between, 30, 80)), "age in [30, 80]");
    EXPECT_EQ(describe(s, test(2, Comparison::IsMissing, 0)), "albumin is missing");
}
