#include "oracles.hpp"

#include "tiltcal/balance.hpp"
#include "tiltcal/error.hpp"
#include "tiltcal/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace tiltcal;

namespace {

CovariateSchema two_continuous() {
    return CovariateSchema({{"a", FeatureKind::Continuous, "", {}, true}, {"b", FeatureKind::Continuous, "", {}, false}});
}

Cohort cohort_of(const std::vector<std::vector<FeatureValue>>& rows, std::vector<double> w = {}) {
    Cohort c;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        c.records.push_back({rows[i]});
        c.ids.push_back(i);
    }
    c.weights = w.empty() ? std::vector<double>(rows.size(), 1.0) : std::move(w);
    return c;
}

ConstraintSpec mean_of(std::size_t f, double target, ConstraintMode mode = {}) {
    return {"mean" + std::to_string(f), {Moment{f}, {}}, target, mode};
}

Cohort random_cohort(std::size_t n, std::uint64_t seed) {
    std::vector<std::vector<FeatureValue>> rows;
    StreamRng rng(seed);
    for (std::size_t i = 0; i < n; ++i) rows.push_back({rng.normal(), 1.0 + 0.5 * rng.normal()});
    std::vector<double> w(n);
    for (auto& x : w) x = 0.5 + rng.uniform();
    return cohort_of(rows, w);
}

double weighted_mean(const Cohort& c, std::size_t f) {
    double s = 0, t = 0;
    for (std::size_t i = 0; i < c.size(); ++i) s += c.weights[i] * *c.records[i].values[f], t += c.weights[i];
    return s / t;
}

} // namespace

TEST(Balance, FourPointMeanMatchAgreesWithBisection) {
    const std::vector<double> x{1.0, 2.0, 4.0, 7.0};
    const auto c = cohort_of({{1.0, 0.0}, {2.0, 0.0}, {4.0, 0.0}, {7.0, 0.0}});
    const auto r = solve_entropy_balance(c, {mean_of(0, 3.0)});
    const auto oracle_w = oracle::mean_match_bisection({0.25, 0.25, 0.25, 0.25}, x, 3.0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.cohort.weights[i] / 4.0, oracle_w[i], 1e-9);
    EXPECT_NEAR(std::accumulate(r.cohort.weights.begin(), r.cohort.weights.end(), 0.0), 4.0, 1e-12);
}

TEST(Balance, ReferenceWeightsAreTheBaseMeasure) {
    const std::vector<double> q{0.1, 0.2, 0.3, 0.4};
    const auto c = cohort_of({{1.0, 0.0}, {2.0, 0.0}, {4.0, 0.0}, {7.0, 0.0}}, {1.0, 2.0, 3.0, 4.0});
    const auto r = solve_entropy_balance(c, {mean_of(0, 3.5)});
    const auto oracle_w = oracle::mean_match_bisection(q, {1.0, 2.0, 4.0, 7.0}, 3.5);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.cohort.weights[i] / 4.0, oracle_w[i], 1e-9);
}

TEST(Balance, AllHardAgreesWithGradientDescentDual) {
    const auto c = random_cohort(60, 3);
    const std::vector<ConstraintSpec> cons{mean_of(0, 0.2), mean_of(1, 1.1)};
    const auto r = solve_entropy_balance(c, cons);
    const double total = std::accumulate(c.weights.begin(), c.weights.end(), 0.0);
    std::vector<double> q;
    std::vector<std::vector<double>> phi;
    for (std::size_t i = 0; i < c.size(); ++i) {
        q.push_back(c.weights[i] / total);
        phi.push_back({*c.records[i].values[0], *c.records[i].values[1]});
    }
    const auto w = oracle::gradient_descent_dual(q, phi, {0.2, 1.1});
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(r.cohort.weights[i] / c.size(), w[i], 1e-7);
    for (double res : r.dual.residual) EXPECT_LE(std::abs(res), 1e-8);
}

TEST(Balance, SoftTikhonovRelation) {
    const auto c = random_cohort(200, 9);
    const std::vector<ConstraintSpec> cons{mean_of(0, 0.3), mean_of(1, 1.3, ConstraintMode::soft_with(0.05))};
    const auto r = solve_entropy_balance(c, cons);
    EXPECT_LE(std::abs(r.dual.residual[0]), 1e-8);
    EXPECT_GT(std::abs(r.dual.residual[1]), 1e-4); // a soft target is only approached
    EXPECT_NEAR(r.dual.nu[1], -0.05 * r.dual.residual[1], 1e-6);
    EXPECT_NEAR(weighted_mean(r.cohort, 0), 0.3, 1e-8);
}

TEST(Balance, LargePenaltyApproachesHard) {
    const auto c = random_cohort(200, 10);
    const auto soft = solve_entropy_balance(c, {mean_of(0, 0.25, ConstraintMode::soft_with(1e6))});
    const auto hard = solve_entropy_balance(c, {mean_of(0, 0.25)});
    EXPECT_NEAR(soft.dual.nu[0], hard.dual.nu[0], 1e-4);
}

TEST(Balance, MinimizesKlAmongFeasibleWeights) {
    // any other feasible reweighting has larger KL to the reference
    const auto c = cohort_of({{1.0, 0.0}, {2.0, 0.0}, {4.0, 0.0}, {7.0, 0.0}});
    const auto r = solve_entropy_balance(c, {mean_of(0, 3.0)});
    const auto kl = [](const std::vector<double>& p) {
        double s = 0;
        for (double v : p)
            if (v > 0) s += v * std::log(v / 0.25);
        return s;
    };
    std::vector<double> p(4);
    for (int i = 0; i < 4; ++i) p[i] = r.cohort.weights[i] / 4.0;
    const double best = kl(p);
    // perturbation along the null space of (1, x): (a, b, c, d) with sum 0 and sum x = 0
    const std::vector<double> dir{3.0, -5.0, 2.0, 0.0};
    for (double eps : {-0.01, 0.01, 0.03}) {
        auto q = p;
        for (int i = 0; i < 4; ++i) q[i] += eps * dir[i];
        EXPECT_GT(kl(q), best);
    }
}

TEST(Balance, InfeasibleTargetRaisesWithWitness) {
    const auto c = cohort_of({{1.0, 0.0}, {2.0, 0.0}, {3.0, 0.0}});
    try {
        solve_entropy_balance(c, {mean_of(0, 5.0)});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Infeasible);
        EXPECT_NE(std::string(e.what()).find("mean0"), std::string::npos);
    }
    const auto v = feasibility_check(c, {mean_of(0, 5.0)});
    ASSERT_FALSE(v.feasible);
    ASSERT_EQ(v.witness.size(), 1u);
    for (const auto& rec : c.records) EXPECT_LE(v.witness[0] * (*rec.values[0] - 5.0), 1e-12);
    // a target on the boundary of the hull is not in its relative interior
    EXPECT_FALSE(feasibility_check(c, {mean_of(0, 3.0)}).feasible);
    const auto ok = feasibility_check(c, {mean_of(0, 2.5)});
    EXPECT_TRUE(ok.feasible);
    EXPECT_GT(ok.interior_margin, 0.0);
}

TEST(Balance, TwoDimensionalWitnessSeparates) {
    // targets inside each marginal range but outside the joint hull
    const auto c = cohort_of({{0.0, 0.0}, {1.0, 1.0}, {0.5, 0.5}});
    const std::vector<ConstraintSpec> cons{mean_of(0, 0.5), mean_of(1, 0.2)};
    const auto v = feasibility_check(c, cons);
    ASSERT_FALSE(v.feasible);
    for (const auto& rec : c.records)
        EXPECT_LE(v.witness[0] * (*rec.values[0] - 0.5) + v.witness[1] * (*rec.values[1] - 0.2), 1e-12);
}

TEST(Balance, MissingValuesAreImputedNeutrallyAndCounted) {
    const auto c = cohort_of({{1.0, 0.0}, {std::nullopt, 0.0}, {3.0, 0.0}, {5.0, 0.0}});
    const auto r = solve_entropy_balance(c, {mean_of(0, 2.5)});
    ASSERT_EQ(r.dual.imputed_missing.size(), 1u);
    EXPECT_EQ(r.dual.imputed_missing[0], 1u);
}

TEST(Balance, NoConstraintsKeepsNormalizedWeights) {
    const auto c = cohort_of({{1.0, 0.0}, {2.0, 0.0}}, {1.0, 3.0});
    const auto r = solve_entropy_balance(c, {});
    EXPECT_DOUBLE_EQ(r.cohort.weights[0], 0.5);
    EXPECT_DOUBLE_EQ(r.cohort.weights[1], 1.5);
}

TEST(Balance, ErrorsOnEmptyAndDegenerate) {
    EXPECT_THROW(solve_entropy_balance(Cohort{}, {mean_of(0, 1.0)}), Error);
    auto c = cohort_of({{1.0, 0.0}}, {0.0});
    EXPECT_THROW(normalize_weights(c), Error);
    std::vector<BaselineRecord> recs{{{1.0, 0.0}}};
    EligibilitySpec none;
    none.inclusions = {{0, Comparison::Gt, 10.0}};
    try {
        filter_eligible(recs, none);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EmptyCohort);
    }
}

TEST(Balance, FilterKeepsEligibleWithUnitWeights) {
    std::vector<BaselineRecord> recs{{{1.0, 0.0}}, {{20.0, 0.0}}, {{3.0, 0.0}}};
    EligibilitySpec spec;
    spec.inclusions = {{0, Comparison::Lt, 10.0}};
    const auto c = filter_eligible(recs, spec);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c.ids, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(c.weights, (std::vector<double>{1.0, 1.0}));
}

TEST(Diagnostics, UniformWeights) {
    const auto r = weight_diagnostics(std::vector<double>(100, 2.0));
    EXPECT_DOUBLE_EQ(r.ess_over_n, 1.0);
    EXPECT_DOUBLE_EQ(r.ess, 100.0);
    EXPECT_DOUBLE_EQ(r.max_over_mean, 1.0);
    EXPECT_NEAR(r.top5_share, 0.05, 1e-15);
    EXPECT_NEAR(r.top10_share, 0.10, 1e-15);
    EXPECT_DOUBLE_EQ(r.q01, 1.0);
    EXPECT_DOUBLE_EQ(r.q99, 1.0);
}

TEST(Diagnostics, HandComputedSkewedWeights) {
    // ESS = (sum w)^2 / sum w^2 = 100 / 30
    const auto r = weight_diagnostics({1.0, 2.0, 3.0, 4.0});
    EXPECT_NEAR(r.ess, 100.0 / 30.0, 1e-14);
    EXPECT_NEAR(r.max_over_mean, 1.6, 1e-14);
    EXPECT_NEAR(r.q50, 1.0, 1e-14);
    // top 10% of 4 records is 0.4 of the heaviest (4/10 of the weight)
    EXPECT_NEAR(r.top10_share, 0.4 * 0.4, 1e-14);
}

TEST(Diagnostics, Type7Quantile) {
    EXPECT_DOUBLE_EQ(sample_quantile({3.0, 1.0, 2.0, 4.0}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(sample_quantile({1.0, 2.0, 3.0, 4.0, 5.0}, 0.25), 2.0);
    EXPECT_DOUBLE_EQ(sample_quantile({10.0, 20.0}, 0.1), 11.0);
    EXPECT_DOUBLE_EQ(sample_quantile({7.0}, 0.9), 7.0);
}

TEST(Balance, ReportedResidualMatchesDirectMean) {
    const auto c = random_cohort(300, 21);
    const auto r = solve_entropy_balance(c, {mean_of(1, 0.9, ConstraintMode::soft_with(0.5))});
    EXPECT_NEAR(r.dual.achieved[0], weighted_mean(r.cohort, 1), 1e-12);
    EXPECT_NEAR(r.dual.residual[0], r.dual.achieved[0] - 0.9, 1e-15);
}
