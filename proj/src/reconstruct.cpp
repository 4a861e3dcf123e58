#include "tiltcal/reconstruct.hpp"
#include "tiltcal/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace tiltcal {

long PseudoIPD::events() const {
    return static_cast<long>(std::count_if(rows.begin(), rows.end(), [](const IpdRow& r) { return r.event; }));
}

std::vector<WeightedTimeToEvent> PseudoIPD::as_survival_data() const {
    std::vector<WeightedTimeToEvent> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back({r.time, r.event, 1.0});
    return out;
}

DigitizedCurve clean_curve(const DigitizedCurve& curve) {
    if (curve.points.empty()) fail(ErrorKind::Inconsistency, "digitized curve has no points");
    std::vector<CurveSample> pts = curve.points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& p = pts[i];
        if (!std::isfinite(p.time) || p.time < 0.0 || !(p.survival >= 0.0 && p.survival <= 1.0))
            fail(ErrorKind::Inconsistency, "digitized point " + std::to_string(i) + " lies outside [0, inf) x [0, 1]");
        if (i > 0 && p.time < pts[i - 1].time)
            fail(ErrorKind::Inconsistency, "digitized times decrease at point " + std::to_string(i));
    }
    // merge duplicate times by averaging their survival values
    DigitizedCurve out;
    out.arm = curve.arm;
    for (std::size_t i = 0; i < pts.size();) {
        std::size_t j = i;
        double s = 0.0;
        while (j < pts.size() && pts[j].time == pts[i].time) s += pts[j++].survival;
        out.points.push_back({pts[i].time, s / static_cast<double>(j - i)});
        i = j;
    }
    if (out.points.front().time > 0.0) out.points.insert(out.points.begin(), {0.0, 1.0});
    if (out.points.front().survival < 1.0 - 1e-9)
        fail(ErrorKind::Inconsistency, "digitized survival at time 0 must be 1");
    out.points.front().survival = 1.0;
    for (std::size_t i = 1; i < out.points.size(); ++i)
        if (out.points[i].survival > out.points[i - 1].survival + 1e-12) {
            std::ostringstream os;
            os << "digitized survival rises at t=" << out.points[i].time << " (point " << i << ")";
            fail(ErrorKind::Inconsistency, os.str());
        }
    return out;
}

namespace {

/// Integer counts summing to `total` that track the fractional values.
std::vector<long> largest_remainder(const std::vector<double>& x, long total) {
    std::vector<long> out(x.size());
    long sum = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = static_cast<long>(std::floor(std::max(0.0, x[i])));
        sum += out[i];
    }
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto rem = [&](std::size_t i) { return std::max(0.0, x[i]) - static_cast<double>(out[i]); };
    if (sum < total) {
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem(a) > rem(b); });
        for (std::size_t k = 0; sum < total && !order.empty(); k = (k + 1) % order.size()) {
            ++out[order[k]];
            ++sum;
        }
    } else if (sum > total) {
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem(a) < rem(b); });
        while (sum > total) {
            bool changed = false;
            for (std::size_t k = 0; k < order.size() && sum > total; ++k)
                if (out[order[k]] > 0) {
                    --out[order[k]];
                    --sum;
                    changed = true;
                }
            if (!changed) break;
        }
    }
    return out;
}

struct IntervalPlan {
    std::vector<double> censor_times;
    std::vector<double> fractional; // per point in the interval
    std::vector<long> events;       // per point in the interval
    long total_events = 0;
    long end_count = 0;
};

struct Interval {
    double start = 0.0, end = 0.0;
    std::vector<std::size_t> points; // indices into the curve
};

class Planner {
public:
    Planner(const DigitizedCurve& c) : curve_(c) {}

    /// `forced_events` < 0 lets the curve decide the event total.
    IntervalPlan plan(const Interval& iv, long start_n, double km_start, long censorings, long forced_events) const {
        IntervalPlan p;
        const double width = iv.end - iv.start;
        for (long j = 1; j <= censorings; ++j)
            p.censor_times.push_back(iv.start + static_cast<double>(j) * width / static_cast<double>(censorings + 1));

        // fractional pass: the reconstructed KM follows the curve exactly
        double km = km_start;
        double removed = 0.0;
        std::size_t c = 0;
        for (std::size_t idx : iv.points) {
            const double t = curve_.points[idx].time;
            const double s = curve_.points[idx].survival;
            while (c < p.censor_times.size() && p.censor_times[c] < t) ++c;
            const double at_risk = static_cast<double>(start_n) - removed - static_cast<double>(c);
            double d = 0.0;
            if (at_risk > 0.0 && s < km && km > 0.0) d = std::min(at_risk, at_risk * (1.0 - s / km));
            if (at_risk > 0.0) km *= 1.0 - d / at_risk;
            removed += d;
            p.fractional.push_back(d);
        }
        const double frac_total = std::accumulate(p.fractional.begin(), p.fractional.end(), 0.0);
        long total = forced_events >= 0 ? forced_events : std::lround(frac_total);
        total = std::clamp(total, 0L, std::max(0L, start_n - censorings));

        std::vector<double> target = p.fractional;
        if (forced_events >= 0 && frac_total > 0.0)
            for (double& v : target) v *= static_cast<double>(total) / frac_total;
        else if (forced_events >= 0 && !target.empty())
            target.back() = static_cast<double>(total); // a flat curve still has to carry the events somewhere
        p.events = largest_remainder(target, total);

        // integer at-risk sets must cover the allocated events
        long removed_int = 0;
        c = 0;
        long carry = 0;
        for (std::size_t k = 0; k < iv.points.size(); ++k) {
            const double t = curve_.points[iv.points[k]].time;
            while (c < p.censor_times.size() && p.censor_times[c] < t) ++c;
            const long at_risk = start_n - removed_int - static_cast<long>(c);
            p.events[k] += carry;
            carry = 0;
            if (p.events[k] > at_risk) {
                carry = p.events[k] - std::max(0L, at_risk);
                p.events[k] = std::max(0L, at_risk);
            }
            removed_int += p.events[k];
        }
        p.total_events = removed_int;
        p.end_count = start_n - removed_int - censorings;
        return p;
    }

    double advance_km(const Interval& iv, const IntervalPlan& p, long start_n, double km) const {
        long removed = 0;
        std::size_t c = 0;
        for (std::size_t k = 0; k < iv.points.size(); ++k) {
            const double t = curve_.points[iv.points[k]].time;
            while (c < p.censor_times.size() && p.censor_times[c] < t) ++c;
            const long at_risk = start_n - removed - static_cast<long>(c);
            if (at_risk > 0) km *= 1.0 - static_cast<double>(p.events[k]) / static_cast<double>(at_risk);
            removed += p.events[k];
        }
        return km;
    }

private:
    const DigitizedCurve& curve_;
};

} // namespace

ReconstructionReport guyot_reconstruct_report(const DigitizedCurve& raw_curve, const AtRiskTable& at_risk,
                                              long total_events) {
    const DigitizedCurve curve = clean_curve(raw_curve);
    const auto& rows = at_risk.rows;
    if (rows.empty()) fail(ErrorKind::Inconsistency, "at-risk table is empty");
    if (rows.front().time != 0.0) fail(ErrorKind::Inconsistency, "at-risk table must start at time 0");
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k].count < 0) fail(ErrorKind::Inconsistency, "negative at-risk count in interval " + std::to_string(k));
        if (k > 0 && !(rows[k].time > rows[k - 1].time))
            fail(ErrorKind::Inconsistency, "at-risk times must increase (interval " + std::to_string(k) + ")");
        if (k > 0 && rows[k].count > rows[k - 1].count)
            fail(ErrorKind::Inconsistency, "at-risk count rises in interval " + std::to_string(k));
    }
    const long n0 = rows.front().count;
    if (n0 < 1) fail(ErrorKind::Inconsistency, "initial at-risk count must be >= 1");
    if (total_events < 0 || total_events > n0)
        fail(ErrorKind::Inconsistency, "total events must lie in [0, n0]");

    const double last_time = std::max(curve.points.back().time, rows.back().time);
    std::vector<Interval> intervals(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        intervals[k].start = rows[k].time;
        intervals[k].end = k + 1 < rows.size() ? rows[k + 1].time : last_time;
    }
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const double t = curve.points[i].time;
        std::size_t k = rows.size() - 1;
        while (k > 0 && t < rows[k].time) --k;
        intervals[k].points.push_back(i);
    }

    const Planner planner(curve);
    ReconstructionReport report;
    report.interval_reconciled.assign(rows.size(), true);
    std::vector<IntervalPlan> plans(rows.size());
    long remaining = n0;
    long events_so_far = 0;
    double km = 1.0;

    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& iv = intervals[k];
        IntervalPlan best;
        if (k + 1 < rows.size()) {
            const long target = rows[k + 1].count;
            long nc = 0;
            best = planner.plan(iv, remaining, km, 0, -1);
            if (best.end_count < target) {
                report.interval_reconciled[k] = false;
            } else {
                std::map<long, long> seen; // censorings -> |mismatch|
                IntervalPlan cur = best;
                while (true) {
                    const long miss = cur.end_count - target;
                    if (std::abs(miss) < std::abs(best.end_count - target) ||
                        (std::abs(miss) == std::abs(best.end_count - target) && cur.censor_times.size() < best.censor_times.size()))
                        best = cur;
                    if (miss == 0 || seen.count(nc)) break;
                    seen[nc] = std::abs(miss);
                    nc = std::clamp(nc + miss, 0L, remaining);
                    if (seen.count(nc)) break;
                    cur = planner.plan(iv, remaining, km, nc, -1);
                }
                if (best.end_count != target) report.interval_reconciled[k] = false;
            }
        } else {
            // final interval: the event total decides how many are censored
            const long wanted = total_events - events_so_far;
            const long feasible = std::clamp(wanted, 0L, remaining);
            long lo = 0, hi = remaining - feasible;
            // smallest censoring count whose curve-implied events do not exceed the wanted number
            while (lo < hi) {
                const long mid = (lo + hi) / 2;
                if (planner.plan(iv, remaining, km, mid, -1).total_events <= feasible)
                    hi = mid;
                else
                    lo = mid + 1;
            }
            best = planner.plan(iv, remaining, km, lo, feasible);
        }
        plans[k] = best;
        km = planner.advance_km(iv, best, remaining, km);
        events_so_far += best.total_events;
        remaining = best.end_count;
    }

    // rows: events at curve times, censorings at their placed times,
    // survivors censored at the last time
    std::vector<IpdRow> out;
    out.reserve(static_cast<std::size_t>(n0));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& iv = intervals[k];
        for (std::size_t q = 0; q < iv.points.size(); ++q)
            for (long e = 0; e < plans[k].events[q]; ++e) out.push_back({curve.points[iv.points[q]].time, true});
        for (double t : plans[k].censor_times) out.push_back({t, false});
    }
    for (long s = 0; s < remaining; ++s) out.push_back({last_time, false});
    std::stable_sort(out.begin(), out.end(), [](const IpdRow& a, const IpdRow& b) {
        if (a.time != b.time) return a.time < b.time;
        return a.event && !b.event;
    });

    // pin the event total: swap the latest censorings/events in place
    long diff = total_events - static_cast<long>(std::count_if(out.begin(), out.end(), [](const IpdRow& r) { return r.event; }));
    report.rebalanced_events = std::abs(diff);
    for (auto it = out.rbegin(); it != out.rend() && diff != 0; ++it) {
        if (diff > 0 && !it->event) {
            it->event = true;
            --diff;
        } else if (diff < 0 && it->event) {
            it->event = false;
            ++diff;
        }
    }
    if (diff != 0) fail(ErrorKind::Inconsistency, "cannot match the reported event total");
    report.ipd.rows = std::move(out);
    return report;
}

PseudoIPD guyot_reconstruct(const DigitizedCurve& curve, const AtRiskTable& at_risk, long total_events) {
    return guyot_reconstruct_report(curve, at_risk, total_events).ipd;
}

PseudoIPD bootstrap_replicate(const PseudoIPD& ipd, std::size_t index, std::uint64_t seed) {
    require(!ipd.rows.empty(), "bootstrap of an empty pseudo-IPD");
    StreamRng rng(stream_key(seed, {rng_tag::bootstrap, index}));
    PseudoIPD rep;
    rep.rows.reserve(ipd.rows.size());
    for (std::size_t i = 0; i < ipd.rows.size(); ++i) rep.rows.push_back(ipd.rows[rng.below(ipd.rows.size())]);
    return rep;
}

std::vector<PseudoIPD> bootstrap_ipd(const PseudoIPD& ipd, std::size_t replicates, std::uint64_t seed) {
    require(replicates >= 1, "bootstrap needs at least one replicate");
    std::vector<PseudoIPD> out;
    out.reserve(replicates);
    for (std::size_t b = 0; b < replicates; ++b) out.push_back(bootstrap_replicate(ipd, b, seed));
    return out;
}

PerturbedTargets recompute_targets(const PseudoIPD& replicate, const std::vector<ConstraintSpec>& reference,
                                   UndefinedQuantilePolicy policy) {
    const SurvivalCurve km = weighted_km(replicate.as_survival_data());
    PerturbedTargets out;
    for (const auto& spec : reference) {
        const auto* sq = std::get_if<SigmoidQuantile>(&spec.statistic.stat);
        const auto* ind = std::get_if<OutcomeIndicator>(&spec.statistic.stat);
        if ((!sq && !ind) || spec.statistic.subgroup)
            fail(ErrorKind::Precondition, "constraint '" + spec.label + "' is not landmark/quantile-typed");
        const bool time_anchored = ind || sq->anchor == QuantileAnchor::Time;
        ConstraintSpec next = spec;
        bool defined = true;
        if (time_anchored) {
            const double threshold = sq ? sq->threshold : ind->threshold;
            const double p = 1.0 - curve_landmark(km, threshold);
            defined = p > 0.0 && p < 1.0;
            next.target = p;
        } else {
            const auto q = curve_quantile(km, spec.target);
            defined = q.has_value();
            if (q) std::get<SigmoidQuantile>(next.statistic.stat).threshold = *q;
        }
        if (!defined) {
            if (policy == UndefinedQuantilePolicy::DropReplicate)
                fail(ErrorKind::UndefinedQuantile, "replicate curve leaves '" + spec.label + "' undefined");
            out.dropped.push_back(spec.label);
            continue;
        }
        out.targets.push_back(std::move(next));
    }
    return out;
}

} // namespace tiltcal
