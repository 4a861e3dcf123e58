#include "oracles.hpp"

#include "tiltcal/error.hpp"
#include "tiltcal/pipeline.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace tiltcal;

namespace {

SyntheticModelParams params() {
    SyntheticModelParams p;
    SyntheticFeature age;
    age.descriptor = {"age", FeatureKind::Continuous, "years", {}, false};
    age.mean = 62, age.sd = 9, age.lower = 25, age.upper = 90, age.coefficient = -0.01, age.center = 62;
    SyntheticFeature kps;
    kps.descriptor = {"kps", FeatureKind::Continuous, "", {}, false};
    kps.mean = 85, kps.sd = 10, kps.lower = 50, kps.upper = 100, kps.coefficient = 0.01, kps.center = 85;
    SyntheticFeature ecog;
    ecog.descriptor = {"ecog", FeatureKind::Categorical, "", {"0", "1", "2"}, true};
    ecog.level_probabilities = {0.4, 0.4, 0.2};
    ecog.level_coefficients = {0.0, 0.0, 0.0};
    SyntheticFeature arm;
    arm.descriptor = {"regimen", FeatureKind::Categorical, "", {"A", "B"}, false};
    arm.level_probabilities = {0.5, 0.5};
    arm.level_coefficients = {0.0, 0.1};
    p.features = {age, kps, ecog, arm};
    p.shape = 1.4;
    p.log_scale = 6.0;
    return p;
}

RecodeMap kps_to_ecog() {
    return {"kps", "kps", "ecog", {{90, 100, "0"}, {70, 89.999, "1"}, {0, 69.999, "2"}}};
}

CovariateTest test(std::size_t f, Comparison op, double v, double upper = 0.0) {
    CovariateTest t;
    t.feature = f, t.op = op, t.value = v, t.upper = upper;
    return t;
}

TrialSpec trial(double age_target, std::size_t regimen) {
    TrialSpec s;
    s.name = regimen == 0 ? "arm_a" : "arm_b";
    s.eligibility.inclusions = {test(3, Comparison::Eq, double(regimen)), test(0, Comparison::Between, 30, 85)};
    s.baseline = {{"mean age", {Moment{0}, {}}, age_target, {}}};
    s.outcome = {landmark_to_quantile(183, 0.7), landmark_to_quantile(365, 0.42)};
    s.recodes = {kps_to_ecog()};
    s.treatment_features = {"regimen"};
    return s;
}

CalibrationOptions fast_options() {
    CalibrationOptions o;
    o.candidates = 6000;
    o.sampler.alpha = 0.005;
    o.sampler.partitions = 40;
    o.sampler.trace_every = 100;
    o.sampler.thinning = 50;
    o.sampler.chain_depth = 16;
    return o;
}

double weighted_age(const Cohort& c) {
    double s = 0, t = 0;
    for (std::size_t i = 0; i < c.size(); ++i) s += c.weights[i] * *c.records[i].values[0], t += c.weights[i];
    return s / t;
}

} // namespace

TEST(Recode, ValueLookupAndApplication) {
    const auto map = kps_to_ecog();
    EXPECT_EQ(*recode_value(map, 95), "0");
    EXPECT_EQ(*recode_value(map, 70), "1");
    EXPECT_FALSE(recode_value(map, 120).has_value());
    SyntheticSurvivalModel model(params());
    std::vector<BaselineRecord> recs{{{60.0, 95.0, 2.0, 0.0}}, {{60.0, 60.0, 0.0, 0.0}}, {{60.0, 80.0, std::nullopt, 0.0}}};
    apply_recodes(model.schema(), {map}, recs);
    EXPECT_EQ(*recs[0].values[2], 0.0);
    EXPECT_EQ(*recs[1].values[2], 2.0);
    EXPECT_EQ(*recs[2].values[2], 1.0);
}

TEST(Recode, ReportedProportions) {
    const auto out = recode_proportions(kps_to_ecog(), {{100, 100, 0.2}, {90, 90, 0.3}, {80, 80, 0.4}, {70, 70, 0.1}});
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].first, "0");
    EXPECT_NEAR(out[0].second, 0.5, 1e-15);
    EXPECT_NEAR(out[1].second, 0.5, 1e-15);
    EXPECT_THROW(recode_proportions(kps_to_ecog(), {{80, 95, 1.0}}), Error);
}

TEST(Trial, PopulationEligibilityDropsTreatmentTests) {
    SyntheticSurvivalModel model(params());
    const auto s = trial(60, 0);
    const auto pop = population_eligibility(model.schema(), s);
    ASSERT_EQ(pop.inclusions.size(), 1u);
    EXPECT_EQ(pop.inclusions[0].feature, 0u);
}

TEST(Trial, ValidationErrors) {
    SyntheticSurvivalModel model(params());
    auto s = trial(60, 0);
    EXPECT_NO_THROW(validate_trial(model.schema(), s));
    auto bad = s;
    bad.recodes[0].target = "age";
    EXPECT_THROW(validate_trial(model.schema(), bad), Error);
    bad = s;
    bad.treatment_features = {"nope"};
    EXPECT_THROW(validate_trial(model.schema(), bad), Error);
    bad = s;
    bad.outcome.push_back({"m", {Moment{0}, {}}, 1.0, {}});
    EXPECT_THROW(validate_trial(model.schema(), bad), Error);
}

TEST(Calibrate, StageErrorsCarryStageName) {
    SyntheticSurvivalModel model(params());
    auto s = trial(120.0, 0); // mean age outside the eligible range
    try {
        calibrate_arm(model, s, fast_options(), 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Infeasible);
        EXPECT_EQ(e.stage(), "stage1");
    }
    s = trial(60.0, 0);
    s.eligibility.inclusions.push_back(test(0, Comparison::Gt, 200));
    try {
        calibrate_arm(model, s, fast_options(), 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EmptyCohort);
        EXPECT_EQ(e.stage(), "eligibility");
    }
}

class CalibratedPair : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        model_ = new SyntheticSurvivalModel(params());
        a_ = new CalibratedArm(calibrate_arm(*model_, trial(60.0, 0), fast_options(), 11));
        b_ = new CalibratedArm(calibrate_arm(*model_, trial(64.0, 1), fast_options(), 12));
    }
    static void TearDownTestSuite() {
        delete a_;
        delete b_;
        delete model_;
    }
    static SyntheticSurvivalModel* model_;
    static CalibratedArm* a_;
    static CalibratedArm* b_;
};

SyntheticSurvivalModel* CalibratedPair::model_ = nullptr;
CalibratedArm* CalibratedPair::a_ = nullptr;
CalibratedArm* CalibratedPair::b_ = nullptr;

TEST_F(CalibratedPair, ArmsMeetTheirTargets) {
    for (const auto* arm : {a_, b_}) {
        EXPECT_TRUE(arm->chain.diagnostics.converged);
        EXPECT_LE(arm->chain.diagnostics.max_landmark_deviation_days, 10.0);
        EXPECT_LE(std::abs(arm->dual.residual[0]), 1e-8);
        for (const auto& x : arm->cohort.records) EXPECT_EQ(*x.values[3], arm == a_ ? 0.0 : 1.0);
        EXPECT_NEAR(std::accumulate(arm->cohort.weights.begin(), arm->cohort.weights.end(), 0.0),
                    double(arm->cohort.size()), 1e-8);
    }
    EXPECT_NEAR(weighted_age(a_->cohort), 60.0, 1e-8);
}

TEST_F(CalibratedPair, CalibrationIsReproducible) {
    const auto again = calibrate_arm(*model_, trial(60.0, 0), fast_options(), 11);
    EXPECT_EQ(again.cohort.weights, a_->cohort.weights);
    EXPECT_EQ(again.chain.ensemble.outcomes, a_->chain.ensemble.outcomes);
}

TEST_F(CalibratedPair, SecondPassMatchesTargetAndMinimizesKl) {
    const auto target = trial(60.0, 0).baseline;
    const auto pop = population_eligibility(model_->schema(), trial(60.0, 0));
    const auto res = second_pass_eb(*b_, target, {}, &pop);
    ASSERT_EQ(res.cohort.size(), b_->cohort.size());
    EXPECT_NEAR(weighted_age(res.cohort), 60.0, 1e-8);
    // the solution is the one-parameter exponential tilt of the calibrated weights
    std::vector<double> q, x;
    double total = 0.0;
    for (std::size_t i = 0; i < b_->cohort.size(); ++i) {
        q.push_back(b_->cohort.weights[i]);
        x.push_back(*b_->cohort.records[i].values[0]);
        total += b_->cohort.weights[i];
    }
    for (auto& v : q) v /= total;
    const auto w = oracle::mean_match_bisection(q, x, 60.0);
    for (std::size_t i = 0; i < w.size(); i += 97) EXPECT_NEAR(res.cohort.weights[i] / w.size(), w[i], 1e-9);
}

TEST_F(CalibratedPair, SecondPassZeroesParticlesOutsideTargetPopulation) {
    EligibilitySpec narrow;
    narrow.inclusions = {test(0, Comparison::Le, 70)};
    const auto res = second_pass_eb(*b_, {{"mean age", {Moment{0}, {}}, 58.0, {}}}, {}, &narrow);
    for (std::size_t i = 0; i < res.cohort.size(); ++i)
        if (*res.cohort.records[i].values[0] > 70) EXPECT_EQ(res.cohort.weights[i], 0.0);
    EXPECT_NEAR(weighted_age(res.cohort), 58.0, 1e-8);
    EXPECT_THROW(second_pass_eb(*b_, {{"s", {SigmoidQuantile{100, 10}, {}}, 0.5, {}}}), Error);
}

TEST_F(CalibratedPair, PooledOutcomesCarryCohortWeight) {
    const auto pooled = pooled_outcomes(a_->chain, a_->cohort.weights);
    EXPECT_EQ(pooled.size(), a_->cohort.size() * a_->chain.ensemble.chains.depth());
    double total = 0.0;
    for (const auto& p : pooled) total += p.weight;
    EXPECT_NEAR(total, a_->cohort.total_weight(), 1e-8);
}

TEST_F(CalibratedPair, SelfContrastIsNull) {
    const auto p = cross_trial_contrast(*a_, a_->cohort.weights, *a_, a_->cohort.weights);
    ASSERT_TRUE(p.cox.has_value());
    EXPECT_NEAR(p.cox->hr, 1.0, 1e-6);
    for (double d : p.delta_rmst) EXPECT_NEAR(d, 0.0, 1e-9);
    const auto r = point_report(p, {}, "a", "a2");
    EXPECT_EQ(r.rows.back().quantity, "HR");
    EXPECT_NEAR(r.rows.back().estimate, 1.0, 1e-6);
    EXPECT_FALSE(r.rows.back().ci.has_value());
}

TEST_F(CalibratedPair, ContrastReadsPooledKm) {
    const auto p = cross_trial_contrast(*a_, a_->cohort.weights, *b_, b_->cohort.weights);
    std::vector<oracle::Obs> obs;
    for (const auto& o : pooled_outcomes(a_->chain, a_->cohort.weights)) obs.push_back({o.time, o.event, o.weight});
    EXPECT_NEAR(p.index.landmarks[0], oracle::km_at(obs, 365.0), 1e-9);
    EXPECT_NEAR(p.index.landmarks[0], 0.42, 0.03);
    EXPECT_NEAR(p.delta_rmst[0], p.index.rmst[0] - p.comparator.rmst[0], 1e-12);
}

TEST_F(CalibratedPair, BootstrapOneByOne) {
    PublicationSettings ps;
    ps.patients = 200;
    const auto pa = simulate_published_arm(*model_, trial(60.0, 0).eligibility, ps, 5);
    const auto pb = simulate_published_arm(*model_, trial(64.0, 1).eligibility, ps, 6);
    BootstrapArm ia{a_, a_->cohort.weights, pa.ipd, "arm_a"};
    BootstrapArm cb{b_, b_->cohort.weights, pb.ipd, "arm_b"};
    BootstrapSettings s;
    s.source_replicates = 1;
    s.target_replicates = 1;
    const auto r = bootstrap_fanout(ia, cb, *model_, fast_options().sampler, s, {}, 3);
    EXPECT_EQ(r.pairs, r.source_replicates * r.target_replicates - r.excluded_source - r.excluded_target);
    ASSERT_EQ(r.pairs, 1u);
    for (const auto& row : r.rows) {
        ASSERT_TRUE(row.ci.has_value()) << row.quantity;
        EXPECT_DOUBLE_EQ(row.ci->lower, row.ci->upper);
    }
    EXPECT_EQ(r.fraction_positive.size(), 2u);
}

TEST(Simulate, PublishedArmIsConsistent) {
    SyntheticSurvivalModel model(params());
    PublicationSettings ps;
    ps.patients = 250;
    const auto arm = simulate_published_arm(model, trial(60, 0).eligibility, ps, 9);
    EXPECT_EQ(arm.ipd.size(), 250u);
    EXPECT_EQ(arm.events, arm.ipd.events());
    EXPECT_EQ(arm.at_risk.rows.front().count, 250);
    std::vector<oracle::Obs> obs;
    for (const auto& r : arm.ipd.rows) obs.push_back({r.time, r.event});
    for (const auto& pt : arm.curve.points) EXPECT_NEAR(pt.survival, oracle::km_at(obs, pt.time), 1e-12);
    for (std::size_t k = 1; k < arm.at_risk.rows.size(); ++k)
        EXPECT_LE(arm.at_risk.rows[k].count, arm.at_risk.rows[k - 1].count);
}
