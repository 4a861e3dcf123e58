#pragma once

#include "tiltcal/balance.hpp"
#include "tiltcal/constraints.hpp"
#include "tiltcal/model.hpp"
#include "tiltcal/reconstruct.hpp"
#include "tiltcal/sampler.hpp"
#include "tiltcal/survival.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tiltcal {

/// Source values in [lower, upper] map to `level` of the target feature.
struct RecodeRule {
    double lower = 0.0;
    double upper = 0.0;
    std::string level;
    bool operator==(const RecodeRule&) const = default;
};

/// Cross-scale lookup such as a performance-status conversion.
struct RecodeMap {
    std::string name;
    std::string source; // feature or reported scale name
    std::string target; // categorical feature receiving the mapped level
    std::vector<RecodeRule> rules;
    bool operator==(const RecodeMap&) const = default;
};

/// Level of the target feature for a source value; empty if no rule matches.
std::optional<std::string> recode_value(const RecodeMap& map, double value);
/// Writes the mapped level into the target slot of every record whose
/// source feature exists in the schema. Unmatched or missing sources leave
/// the target missing.
void apply_recodes(const CovariateSchema& schema, const std::vector<RecodeMap>& maps,
                   std::vector<BaselineRecord>& records);

struct ReportedProportion {
    double lower = 0.0; // source-scale range
    double upper = 0.0;
    double proportion = 0.0;
};

/// Reads a distribution reported on the source scale into target levels.
/// Throws schema errors when a reported range has no rule.
std::vector<std::pair<std::string, double>> recode_proportions(const RecodeMap& map,
                                                               const std::vector<ReportedProportion>& reported);

struct TrialSpec {
    std::string name;
    std::string arm;
    EligibilitySpec eligibility;
    std::vector<ConstraintSpec> baseline;
    std::vector<ConstraintSpec> outcome;
    std::vector<RecodeMap> recodes;
    std::vector<std::string> treatment_features; // eligibility on these defines the arm, not the population

    bool operator==(const TrialSpec&) const = default;
};

/// Eligibility of the trial's population: the trial's tests minus those on
/// treatment features.
EligibilitySpec population_eligibility(const CovariateSchema& schema, const TrialSpec& spec);

void validate_trial(const CovariateSchema& schema, const TrialSpec& spec);

struct CalibrationOptions {
    std::size_t candidates = 20000;
    BalanceOptions balance;
    SamplerHyperparameters sampler;
};

struct CalibratedArm {
    std::string name;
    Cohort cohort;      // Stage 1 weights
    DualState dual;
    BalanceReport weight_report;
    ChainRun chain;
    std::vector<ConstraintSpec> outcome_targets;
    std::size_t candidates = 0;
};

/// Candidate draw, recode, eligibility filter, Stage 1 balancing, then the
/// Stage 2 chain on the balanced cohort. Errors carry the stage name.
CalibratedArm calibrate_arm(const GenerativeModel& model, const TrialSpec& spec, const CalibrationOptions& options,
                            std::uint64_t seed);

/// Stage 1 again on an already calibrated cohort, with its weights as the
/// reference measure, against another population's baseline targets. When
/// a target population is given, particles outside it get weight zero
/// before balancing. The returned cohort keeps every particle in order.
BalanceResult second_pass_eb(const CalibratedArm& source, const std::vector<ConstraintSpec>& target_baseline,
                             const BalanceOptions& options = {}, const EligibilitySpec* target_population = nullptr);

/// Retained chain samples as weighted events: particle i contributes
/// weight w_i / K_c per sample. Requires full chain buffers.
std::vector<WeightedTimeToEvent> pooled_outcomes(const ChainRun& chain, const std::vector<double>& weights);

struct ContrastOptions {
    std::vector<double> landmarks{365.0, 731.0};
    std::vector<double> horizons{365.0, 730.0};
    bool hazard_ratio = true;
};

struct ArmSummary {
    std::optional<double> median;
    std::vector<double> landmarks; // S(t) per ContrastOptions::landmarks
    std::vector<double> rmst;      // per ContrastOptions::horizons
};

ArmSummary summarize_arm(const SurvivalCurve& curve, const ContrastOptions& options);

struct ContrastPoint {
    ArmSummary index;      // arm A
    ArmSummary comparator; // arm B (rebalanced)
    std::vector<double> delta_rmst; // A - B
    std::optional<CoxResult> cox;   // A vs B
    SurvivalCurve index_curve;
    SurvivalCurve comparator_curve;
};

/// Weighted KM for each arm (A under wa, B under wb), RMST differences at
/// the horizons and the weighted Cox hazard ratio of A vs B.
ContrastPoint cross_trial_contrast(const CalibratedArm& arm_a, const std::vector<double>& wa,
                                   const CalibratedArm& arm_b, const std::vector<double>& wb,
                                   const ContrastOptions& options = {});

struct Envelope {
    double lower = 0.0;
    double upper = 0.0;
};

struct ReportRow {
    std::string quantity;
    double estimate = 0.0;
    std::optional<Envelope> ci;
    std::size_t samples = 0; // replicates or pairs behind the interval
};

struct ContrastReport {
    std::string index_label;
    std::string comparator_label;
    ContrastPoint point;
    std::vector<ReportRow> rows;
    std::size_t source_replicates = 0;
    std::size_t target_replicates = 0;
    std::size_t pairs = 0;
    std::size_t excluded_source = 0;
    std::size_t excluded_target = 0;
    std::vector<double> fraction_positive; // per horizon, share of pairs with delta RMST > 0
    std::vector<std::string> notes;
};

/// Report rows for a point contrast (no intervals).
ContrastReport point_report(const ContrastPoint& point, const ContrastOptions& options, const std::string& index_label,
                            const std::string& comparator_label);

struct BootstrapSettings {
    std::size_t source_replicates = 20;
    std::size_t target_replicates = 20;
    UndefinedQuantilePolicy policy = UndefinedQuantilePolicy::DropConstraint;
    double lower_quantile = 0.025;
    double upper_quantile = 0.975;
    int workers = 1;
};

struct BootstrapArm {
    const CalibratedArm* arm = nullptr;
    std::vector<double> readout_weights; // w for the index arm, w' for the rebalanced arm
    PseudoIPD ipd;
    std::string label;
};

struct ReplicateSummary {
    std::size_t index = 0;
    bool excluded = false;
    std::string reason;
    std::vector<std::string> dropped;
    ArmSummary summary;
    AggregatedSurvival data;
};

/// Percentile bootstrap across both arms: replicate b of an arm resamples
/// its pseudo-IPD, recomputes the outcome targets and reruns Stage 2 warm
/// started from the reference chains with Stage 1 weights unchanged. Pair
/// statistics span the Cartesian product of surviving replicates.
ContrastReport bootstrap_fanout(const BootstrapArm& index, const BootstrapArm& comparator,
                                const GenerativeModel& model, const SamplerHyperparameters& hyper,
                                const BootstrapSettings& settings, const ContrastOptions& options, std::uint64_t seed,
                                std::vector<ReplicateSummary>* index_replicates = nullptr,
                                std::vector<ReplicateSummary>* comparator_replicates = nullptr);

/// A simulated published arm: patient-level data plus the artefacts a
/// publication would print.
struct PublishedArm {
    PseudoIPD ipd;
    DigitizedCurve curve;
    AtRiskTable at_risk;
    long events = 0;
};

struct PublicationSettings {
    std::size_t patients = 300;
    double censor_max = 2400.0;  // censoring ~ Uniform(0, censor_max)
    double at_risk_step = 90.0;
    bool round_to_days = true;
};

/// Draws eligible patients from the model, censors them, and tabulates the
/// KM curve, the at-risk table and the event count.
PublishedArm simulate_published_arm(const GenerativeModel& model, const EligibilitySpec& eligibility,
                                    const PublicationSettings& settings, std::uint64_t seed);

/// KM curve points of patient-level data as digitized coordinates.
DigitizedCurve digitize(const PseudoIPD& ipd, const std::string& arm);
AtRiskTable tabulate_at_risk(const PseudoIPD& ipd, double step);

} // namespace tiltcal
