#pragma once

#include <optional>
#include <vector>

namespace tiltcal {

struct WeightedTimeToEvent {
    double time = 0.0;
    bool event = true;
    double weight = 1.0;
};

struct CurvePoint {
    double time = 0.0;
    double survival = 1.0; // value from this time onwards (right-continuous)
    double at_risk = 0.0;  // weighted risk set just before `time`
    double events = 0.0;   // weighted events at `time`
};

/// Step function: `initial` on [0, first time), then each point's value.
struct SurvivalCurve {
    double initial = 1.0;
    std::vector<CurvePoint> points;
};

/// Weighted observations collapsed to distinct times. Weight sums and sums
/// of squared weights are kept apart for events and censorings so that the
/// robust Cox variance needs no per-subject pass.
struct AggregatedSurvival {
    std::vector<double> times;
    std::vector<double> event_weight;
    std::vector<double> event_weight_sq;
    std::vector<double> censor_weight;
    std::vector<double> censor_weight_sq;

    double total_weight() const;
};

AggregatedSurvival aggregate(const std::vector<WeightedTimeToEvent>& data);

/// Product-limit estimator with weighted risk sets. At tied times events
/// are processed before censorings, so censored subjects are still at risk
/// for events at their own time. One point per distinct observed time.
SurvivalCurve weighted_km(const std::vector<WeightedTimeToEvent>& data);
SurvivalCurve weighted_km(const AggregatedSurvival& data);

double curve_landmark(const SurvivalCurve& curve, double t);
/// Smallest time with S(t) <= 1 - p; empty when the curve never gets there.
std::optional<double> curve_quantile(const SurvivalCurve& curve, double p);
/// Area under the step function on [0, tau]; past the last point the final
/// value is carried forward.
double rmst(const SurvivalCurve& curve, double tau);

struct CoxResult {
    double log_hr = 0.0;
    double hr = 1.0;
    double se = 0.0;        // model-based, from the observed information
    double robust_se = 0.0; // Lin-Wei sandwich
    int iterations = 0;
};

/// Hazard ratio of arm A relative to arm B from the weighted partial
/// likelihood with a single arm indicator; Breslow ties; Newton iterations.
CoxResult weighted_cox_hr(const std::vector<WeightedTimeToEvent>& arm_a,
                          const std::vector<WeightedTimeToEvent>& arm_b);
CoxResult weighted_cox_hr(const AggregatedSurvival& arm_a, const AggregatedSurvival& arm_b);

/// Weighted Breslow partial log-likelihood at log hazard ratio beta.
double cox_log_likelihood(const AggregatedSurvival& arm_a, const AggregatedSurvival& arm_b, double beta);

} // namespace tiltcal
