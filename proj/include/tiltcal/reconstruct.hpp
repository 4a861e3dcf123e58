#pragma once

#include "tiltcal/constraints.hpp"
#include "tiltcal/survival.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace tiltcal {

struct CurveSample {
    double time = 0.0;
    double survival = 1.0;
};

/// Coordinates read off a published Kaplan-Meier plot.
struct DigitizedCurve {
    std::vector<CurveSample> points;
    std::string arm;
};

struct AtRiskRow {
    double time = 0.0;
    long count = 0;
};

struct AtRiskTable {
    std::vector<AtRiskRow> rows;
};

struct IpdRow {
    double time = 0.0;
    bool event = false;
    bool operator==(const IpdRow&) const = default;
};

struct PseudoIPD {
    std::vector<IpdRow> rows;

    std::size_t size() const noexcept { return rows.size(); }
    long events() const;
    std::vector<WeightedTimeToEvent> as_survival_data() const;
    bool operator==(const PseudoIPD&) const = default;
};

struct ReconstructionReport {
    PseudoIPD ipd;
    std::vector<bool> interval_reconciled; // published n_k matched at each interval end
    long rebalanced_events = 0;            // events moved by the final total-count rebalance
};

/// Duplicate times are merged (mean survival); survival must not rise.
/// Throws inconsistency errors naming the offending point or interval.
DigitizedCurve clean_curve(const DigitizedCurve& curve);

/// Guyot-style reconstruction: per at-risk interval, censorings are spread
/// uniformly and their number iterated until the next published count is
/// reproduced; events follow the curve's drops relative to the
/// reconstructed KM, with fractional counts rounded by largest remainder
/// inside the interval; the final interval and a last rebalance pin the
/// event total. Patients still at risk at the end are censored at the last
/// curve time.
ReconstructionReport guyot_reconstruct_report(const DigitizedCurve& curve, const AtRiskTable& at_risk,
                                              long total_events);
PseudoIPD guyot_reconstruct(const DigitizedCurve& curve, const AtRiskTable& at_risk, long total_events);

/// B nonparametric resamples (rows with replacement), replicate b drawn
/// from the stream keyed by (seed, bootstrap, b).
std::vector<PseudoIPD> bootstrap_ipd(const PseudoIPD& ipd, std::size_t replicates, std::uint64_t seed);
PseudoIPD bootstrap_replicate(const PseudoIPD& ipd, std::size_t index, std::uint64_t seed);

enum class UndefinedQuantilePolicy { DropConstraint, DropReplicate };

struct PerturbedTargets {
    std::size_t replicate = 0;
    std::uint64_t seed = 0;
    std::vector<ConstraintSpec> targets;
    std::vector<std::string> dropped; // labels removed because the replicate curve left them undefined
};

/// Refits KM on the replicate. Landmark-anchored constraints keep their
/// time and take 1 - S_rep(t) as target; quantile-anchored ones keep their
/// probability and move the threshold to the replicate's quantile. Under
/// DropReplicate an undefined value raises undefined-quantile.
PerturbedTargets recompute_targets(const PseudoIPD& replicate, const std::vector<ConstraintSpec>& reference,
                                   UndefinedQuantilePolicy policy = UndefinedQuantilePolicy::DropConstraint);

} // namespace tiltcal
