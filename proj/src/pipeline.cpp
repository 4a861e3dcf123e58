#include "tiltcal/pipeline.hpp"

#include "parallel.hpp"
#include "tiltcal/error.hpp"
#include "tiltcal/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

namespace tiltcal {

namespace {

template <class F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        if (!e.stage().empty()) throw;
        throw e.with_stage(stage);
    }
}

std::uint64_t label_hash(const std::string& label) {
    // FNV-1a, stable across platforms unlike std::hash
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fmt_days(double t) {
    std::ostringstream os;
    os << t << " d";
    return os.str();
}

const double nan = std::numeric_limits<double>::quiet_NaN();

} // namespace

std::optional<std::string> recode_value(const RecodeMap& map, double value) {
    for (const auto& r : map.rules)
        if (value >= r.lower && value <= r.upper) return r.level;
    return std::nullopt;
}

void apply_recodes(const CovariateSchema& schema, const std::vector<RecodeMap>& maps,
                   std::vector<BaselineRecord>& records) {
    for (const auto& map : maps) {
        const auto src = schema.find(map.source);
        if (!src) continue; // reported-scale map only
        const std::size_t dst = schema.index_of(map.target);
        std::vector<double> level_of(map.rules.size());
        for (std::size_t k = 0; k < map.rules.size(); ++k)
            level_of[k] = static_cast<double>(schema.level_index(dst, map.rules[k].level));
        for (auto& x : records) {
            x.values.at(dst).reset();
            const auto& v = x.values.at(*src);
            if (!v) continue;
            for (std::size_t k = 0; k < map.rules.size(); ++k)
                if (*v >= map.rules[k].lower && *v <= map.rules[k].upper) {
                    x.values[dst] = level_of[k];
                    break;
                }
        }
    }
}

std::vector<std::pair<std::string, double>> recode_proportions(const RecodeMap& map,
                                                               const std::vector<ReportedProportion>& reported) {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& r : reported) {
        const auto lo = recode_value(map, r.lower);
        const auto hi = recode_value(map, r.upper);
        if (!lo || !hi || *lo != *hi) {
            std::ostringstream os;
            os << "recode '" << map.name << "': reported range [" << r.lower << ", " << r.upper
               << "] does not fall in a single rule";
            fail(ErrorKind::Schema, os.str());
        }
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == *lo; });
        if (it == out.end())
            out.emplace_back(*lo, r.proportion);
        else
            it->second += r.proportion;
    }
    return out;
}

void validate_trial(const CovariateSchema& schema, const TrialSpec& spec) {
    for (const auto& map : spec.recodes) {
        const auto dst = schema.find(map.target);
        if (!dst) fail(ErrorKind::Schema, "recode '" + map.name + "': unknown target feature '" + map.target + "'");
        if (schema.feature(*dst).kind != FeatureKind::Categorical)
            fail(ErrorKind::Schema, "recode '" + map.name + "': target '" + map.target + "' is not categorical");
        if (map.rules.empty()) fail(ErrorKind::Schema, "recode '" + map.name + "' has no rules");
        for (const auto& r : map.rules) {
            if (!(r.lower <= r.upper)) fail(ErrorKind::Schema, "recode '" + map.name + "': empty range");
            schema.level_index(*dst, r.level);
        }
        if (const auto src = schema.find(map.source); src && schema.feature(*src).kind != FeatureKind::Continuous)
            fail(ErrorKind::Schema, "recode '" + map.name + "': source '" + map.source + "' must be continuous");
    }
    validate_eligibility(schema, spec.eligibility);
    for (const auto& c : spec.baseline) {
        validate_constraint(schema, c);
        if (is_outcome_statistic(c.statistic))
            fail(ErrorKind::Schema, "baseline constraint '" + c.label + "' uses the outcome");
    }
    for (const auto& name : spec.treatment_features)
        if (!schema.find(name)) fail(ErrorKind::Schema, "unknown treatment feature '" + name + "'");
    for (const auto& c : spec.outcome) {
        validate_constraint(schema, c);
        if (!is_outcome_statistic(c.statistic))
            fail(ErrorKind::Schema, "outcome constraint '" + c.label + "' does not use the outcome");
    }
}

CalibratedArm calibrate_arm(const GenerativeModel& model, const TrialSpec& spec, const CalibrationOptions& options,
                            std::uint64_t seed) {
    in_stage("validate", [&] { validate_trial(model.schema(), spec); });
    require(options.candidates > 0, "calibrate_arm: candidate pool size must be positive");

    CalibratedArm arm;
    arm.name = spec.name.empty() ? spec.arm : spec.name;
    arm.candidates = options.candidates;
    arm.outcome_targets = spec.outcome;

    auto pool = in_stage("candidates", [&] {
        return sample_baseline(model, options.candidates, stream_key(seed, {rng_tag::baseline}));
    });
    apply_recodes(model.schema(), spec.recodes, pool);
    Cohort cohort = in_stage("eligibility", [&] { return filter_eligible(pool, spec.eligibility); });

    if (spec.baseline.empty()) {
        arm.cohort = std::move(cohort);
    } else {
        auto res = in_stage("stage1", [&] { return solve_entropy_balance(cohort, spec.baseline, options.balance); });
        arm.cohort = std::move(res.cohort);
        arm.dual = std::move(res.dual);
    }
    arm.weight_report = weight_diagnostics(arm.cohort);
    arm.chain = in_stage("stage2", [&] {
        return run_chain(arm.cohort, model, spec.outcome, options.sampler, stream_key(seed, {rng_tag::conditional}));
    });
    return arm;
}

EligibilitySpec population_eligibility(const CovariateSchema& schema, const TrialSpec& spec) {
    std::vector<std::size_t> treatment;
    for (const auto& name : spec.treatment_features) treatment.push_back(schema.index_of(name));
    const auto keep = [&](const CovariateTest& t) {
        return std::find(treatment.begin(), treatment.end(), t.feature) == treatment.end();
    };
    EligibilitySpec out;
    std::copy_if(spec.eligibility.inclusions.begin(), spec.eligibility.inclusions.end(),
                 std::back_inserter(out.inclusions), keep);
    std::copy_if(spec.eligibility.exclusions.begin(), spec.eligibility.exclusions.end(),
                 std::back_inserter(out.exclusions), keep);
    return out;
}

BalanceResult second_pass_eb(const CalibratedArm& source, const std::vector<ConstraintSpec>& target_baseline,
                             const BalanceOptions& options, const EligibilitySpec* target_population) {
    for (const auto& c : target_baseline)
        if (is_outcome_statistic(c.statistic))
            fail(ErrorKind::Schema, "second-pass constraint '" + c.label + "' uses the outcome");
    return in_stage("second-pass", [&] {
        if (!target_population) return solve_entropy_balance(source.cohort, target_baseline, options);
        Cohort sub;
        std::vector<std::size_t> slot;
        for (std::size_t i = 0; i < source.cohort.size(); ++i)
            if (source.cohort.weights[i] > 0.0 && check_eligibility(*target_population, source.cohort.records[i])) {
                sub.records.push_back(source.cohort.records[i]);
                sub.weights.push_back(source.cohort.weights[i]);
                sub.ids.push_back(source.cohort.ids.empty() ? i : source.cohort.ids[i]);
                slot.push_back(i);
            }
        if (sub.size() == 0) fail(ErrorKind::EmptyCohort, "no source particle lies in the target population");
        normalize_weights(sub);
        auto res = solve_entropy_balance(sub, target_baseline, options);
        BalanceResult out{source.cohort, std::move(res.dual)};
        std::fill(out.cohort.weights.begin(), out.cohort.weights.end(), 0.0);
        for (std::size_t k = 0; k < slot.size(); ++k) out.cohort.weights[slot[k]] = res.cohort.weights[k];
        normalize_weights(out.cohort);
        return out;
    });
}

std::vector<WeightedTimeToEvent> pooled_outcomes(const ChainRun& chain, const std::vector<double>& weights) {
    const auto& buf = chain.ensemble.chains;
    require(weights.size() == chain.ensemble.outcomes.size(), "pooled_outcomes: one weight per particle required");
    require(buf.particles() == weights.size(), "pooled_outcomes: chain and cohort are not aligned");
    require(buf.depth() > 0 && buf.full(), "pooled_outcomes: chain buffers must be full before readout");
    const std::size_t k = buf.depth();
    std::vector<WeightedTimeToEvent> out;
    out.reserve(weights.size() * k);
    for (std::size_t i = 0; i < weights.size(); ++i)
        for (std::size_t c = 0; c < k && weights[i] > 0.0; ++c)
            out.push_back({buf.sample(i, c), true, weights[i] / static_cast<double>(k)});
    return out;
}

ArmSummary summarize_arm(const SurvivalCurve& curve, const ContrastOptions& options) {
    ArmSummary s;
    s.median = curve_quantile(curve, 0.5);
    for (double t : options.landmarks) s.landmarks.push_back(curve_landmark(curve, t));
    for (double h : options.horizons) s.rmst.push_back(rmst(curve, h));
    return s;
}

ContrastPoint cross_trial_contrast(const CalibratedArm& arm_a, const std::vector<double>& wa,
                                   const CalibratedArm& arm_b, const std::vector<double>& wb,
                                   const ContrastOptions& options) {
    return in_stage("contrast", [&] {
        const auto da = aggregate(pooled_outcomes(arm_a.chain, wa));
        const auto db = aggregate(pooled_outcomes(arm_b.chain, wb));
        ContrastPoint p;
        p.index_curve = weighted_km(da);
        p.comparator_curve = weighted_km(db);
        p.index = summarize_arm(p.index_curve, options);
        p.comparator = summarize_arm(p.comparator_curve, options);
        for (std::size_t h = 0; h < options.horizons.size(); ++h)
            p.delta_rmst.push_back(p.index.rmst[h] - p.comparator.rmst[h]);
        if (options.hazard_ratio) p.cox = weighted_cox_hr(da, db);
        return p;
    });
}

namespace {

std::vector<ReportRow> arm_rows(const ArmSummary& s, const ContrastOptions& o, const std::string& label) {
    std::vector<ReportRow> rows;
    rows.push_back({"Median OS (" + label + ")", s.median.value_or(nan), std::nullopt, 0});
    for (std::size_t k = 0; k < o.landmarks.size(); ++k)
        rows.push_back({"S(" + fmt_days(o.landmarks[k]) + ") (" + label + ")", s.landmarks[k], std::nullopt, 0});
    return rows;
}

std::vector<ReportRow> pair_rows(const ContrastPoint& p, const ContrastOptions& o) {
    std::vector<ReportRow> rows;
    for (std::size_t h = 0; h < o.horizons.size(); ++h)
        rows.push_back({"Delta RMST(" + fmt_days(o.horizons[h]) + ")", p.delta_rmst[h], std::nullopt, 0});
    if (p.cox) rows.push_back({"HR", p.cox->hr, std::nullopt, 0});
    return rows;
}

std::optional<Envelope> envelope(const std::vector<double>& values, double lo, double hi) {
    std::vector<double> v;
    for (double x : values)
        if (std::isfinite(x)) v.push_back(x);
    if (v.empty()) return std::nullopt;
    return Envelope{sample_quantile(v, lo), sample_quantile(std::move(v), hi)};
}

} // namespace

ContrastReport point_report(const ContrastPoint& point, const ContrastOptions& options, const std::string& index_label,
                            const std::string& comparator_label) {
    ContrastReport r;
    r.index_label = index_label;
    r.comparator_label = comparator_label;
    r.point = point;
    for (auto& row : arm_rows(point.index, options, index_label)) r.rows.push_back(std::move(row));
    for (auto& row : arm_rows(point.comparator, options, comparator_label)) r.rows.push_back(std::move(row));
    for (auto& row : pair_rows(point, options)) r.rows.push_back(std::move(row));
    // the pooled chain samples are not patients, so model-based intervals
    // would be far too narrow; intervals come from the bootstrap
    r.notes.push_back("point estimates only; intervals come from the pseudo-IPD bootstrap");
    return r;
}

namespace {

std::vector<ReplicateSummary> run_replicates(const BootstrapArm& arm, std::size_t count, const GenerativeModel& model,
                                             const SamplerHyperparameters& hyper, const BootstrapSettings& settings,
                                             const ContrastOptions& options, std::uint64_t seed) {
    const CalibratedArm& ref = *arm.arm;
    const std::uint64_t tag = label_hash(arm.label);
    const std::uint64_t ipd_seed = stream_key(seed, {rng_tag::arm, tag});
    const WarmStart reference = warm_start_from(ref.chain);
    SamplerHyperparameters h = hyper;
    if (settings.workers > 1) h.workers = 1; // parallelism across replicates instead

    std::vector<ReplicateSummary> out(count);
    detail::parallel_for(
        count, settings.workers,
        [&](std::size_t b) {
            ReplicateSummary& r = out[b];
            r.index = b;
            try {
                const PseudoIPD rep = bootstrap_replicate(arm.ipd, b, ipd_seed);
                const PerturbedTargets pt = recompute_targets(rep, ref.outcome_targets, settings.policy);
                r.dropped = pt.dropped;
                WarmStart warm = reference;
                if (!pt.dropped.empty()) {
                    // keep lambda of the surviving constraints; the traces no longer line up
                    LambdaState l;
                    l.t = warm.lambda.t;
                    for (std::size_t j = 0; j < ref.outcome_targets.size(); ++j) {
                        const auto& label = ref.outcome_targets[j].label;
                        if (std::find(pt.dropped.begin(), pt.dropped.end(), label) != pt.dropped.end()) continue;
                        l.lambda.push_back(warm.lambda.lambda[j]);
                        l.soft.push_back(warm.lambda.soft[j]);
                        l.rho.push_back(warm.lambda.rho[j]);
                    }
                    warm.lambda = std::move(l);
                    warm.traces.reset();
                }
                const ChainRun run = run_chain(ref.cohort, model, pt.targets, h,
                                               stream_key(seed, {rng_tag::replicate, tag, b}), &warm);
                if (!run.diagnostics.converged) {
                    r.excluded = true;
                    r.reason = "non-convergence";
                    return;
                }
                r.data = aggregate(pooled_outcomes(run, arm.readout_weights));
                r.summary = summarize_arm(weighted_km(r.data), options);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::UndefinedQuantile && e.kind() != ErrorKind::NonConvergence &&
                    e.kind() != ErrorKind::EmptySubgroup)
                    throw e.with_stage("bootstrap");
                r.excluded = true;
                r.reason = std::string(to_string(e.kind())) + ": " + e.what();
            }
        },
        1);
    return out;
}

} // namespace

ContrastReport bootstrap_fanout(const BootstrapArm& index, const BootstrapArm& comparator,
                                const GenerativeModel& model, const SamplerHyperparameters& hyper,
                                const BootstrapSettings& settings, const ContrastOptions& options, std::uint64_t seed,
                                std::vector<ReplicateSummary>* index_replicates,
                                std::vector<ReplicateSummary>* comparator_replicates) {
    require(index.arm && comparator.arm, "bootstrap_fanout: both reference arms are required");
    require(settings.source_replicates >= 1 && settings.target_replicates >= 1,
            "bootstrap_fanout: at least one replicate per arm");
    require(settings.lower_quantile < settings.upper_quantile, "bootstrap_fanout: envelope quantiles out of order");
    require(index.label != comparator.label, "bootstrap_fanout: arm labels must differ");

    const ContrastPoint point =
        cross_trial_contrast(*index.arm, index.readout_weights, *comparator.arm, comparator.readout_weights, options);
    ContrastReport report = point_report(point, options, index.label, comparator.label);
    report.notes.clear();

    // the index arm belongs to the target population, the comparator is the rebalanced source
    auto reps_a = run_replicates(index, settings.target_replicates, model, hyper, settings, options, seed);
    auto reps_b = run_replicates(comparator, settings.source_replicates, model, hyper, settings, options, seed);

    report.target_replicates = settings.target_replicates;
    report.source_replicates = settings.source_replicates;
    std::vector<const ReplicateSummary*> ok_a, ok_b;
    for (const auto& r : reps_a) {
        if (r.excluded) {
            ++report.excluded_target;
            report.notes.push_back(index.label + " replicate " + std::to_string(r.index) + " excluded: " + r.reason);
        } else {
            ok_a.push_back(&r);
        }
        for (const auto& d : r.dropped)
            report.notes.push_back(index.label + " replicate " + std::to_string(r.index) + " dropped '" + d + "'");
    }
    for (const auto& r : reps_b) {
        if (r.excluded) {
            ++report.excluded_source;
            report.notes.push_back(comparator.label + " replicate " + std::to_string(r.index) +
                                   " excluded: " + r.reason);
        } else {
            ok_b.push_back(&r);
        }
        for (const auto& d : r.dropped)
            report.notes.push_back(comparator.label + " replicate " + std::to_string(r.index) + " dropped '" + d +
                                   "'");
    }
    report.pairs = ok_a.size() * ok_b.size();

    const double lo = settings.lower_quantile, hi = settings.upper_quantile;
    const auto fill_arm = [&](std::size_t first_row, const std::vector<const ReplicateSummary*>& ok) {
        std::vector<double> med;
        for (const auto* r : ok) med.push_back(r->summary.median.value_or(nan));
        report.rows[first_row].ci = envelope(med, lo, hi);
        report.rows[first_row].samples = ok.size();
        for (std::size_t k = 0; k < options.landmarks.size(); ++k) {
            std::vector<double> v;
            for (const auto* r : ok) v.push_back(r->summary.landmarks[k]);
            report.rows[first_row + 1 + k].ci = envelope(v, lo, hi);
            report.rows[first_row + 1 + k].samples = ok.size();
        }
    };
    const std::size_t per_arm = 1 + options.landmarks.size();
    fill_arm(0, ok_a);
    fill_arm(per_arm, ok_b);

    const std::size_t H = options.horizons.size();
    std::vector<std::vector<double>> delta(H);
    std::vector<double> hrs;
    std::size_t hr_failures = 0;
    report.fraction_positive.assign(H, 0.0);
    for (const auto* a : ok_a)
        for (const auto* b : ok_b) {
            for (std::size_t h = 0; h < H; ++h) {
                const double d = a->summary.rmst[h] - b->summary.rmst[h];
                delta[h].push_back(d);
                if (d > 0.0) report.fraction_positive[h] += 1.0;
            }
            if (options.hazard_ratio) {
                try {
                    hrs.push_back(weighted_cox_hr(a->data, b->data).hr);
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::NonIdentifiable) throw e.with_stage("bootstrap");
                    ++hr_failures;
                }
            }
        }
    if (report.pairs > 0)
        for (auto& f : report.fraction_positive) f /= static_cast<double>(report.pairs);
    for (std::size_t h = 0; h < H; ++h) {
        auto& row = report.rows[2 * per_arm + h];
        row.ci = envelope(delta[h], lo, hi);
        row.samples = delta[h].size();
    }
    if (options.hazard_ratio) {
        auto& row = report.rows[2 * per_arm + H];
        row.ci = envelope(hrs, lo, hi);
        row.samples = hrs.size();
        if (hr_failures > 0)
            report.notes.push_back(std::to_string(hr_failures) + " replicate pairs gave no identifiable HR");
    }

    if (index_replicates) *index_replicates = std::move(reps_a);
    if (comparator_replicates) *comparator_replicates = std::move(reps_b);
    return report;
}

DigitizedCurve digitize(const PseudoIPD& ipd, const std::string& arm) {
    require(ipd.size() > 0, "digitize: empty data");
    const SurvivalCurve km = weighted_km(ipd.as_survival_data());
    DigitizedCurve c;
    c.arm = arm;
    c.points.push_back({0.0, 1.0});
    for (const auto& p : km.points)
        if (p.events > 0.0) c.points.push_back({p.time, p.survival});
    const double last = km.points.back().time;
    if (c.points.back().time < last) c.points.push_back({last, c.points.back().survival});
    if (c.points.size() > 1 && c.points[1].time == 0.0) c.points.erase(c.points.begin());
    return c;
}

AtRiskTable tabulate_at_risk(const PseudoIPD& ipd, double step) {
    require(step > 0.0, "tabulate_at_risk: step must be positive");
    require(ipd.size() > 0, "tabulate_at_risk: empty data");
    std::vector<double> times;
    for (const auto& r : ipd.rows) times.push_back(r.time);
    std::sort(times.begin(), times.end());
    AtRiskTable t;
    for (std::size_t k = 0;; ++k) {
        const double at = step * static_cast<double>(k);
        if (at > times.back()) break;
        const auto first = std::lower_bound(times.begin(), times.end(), at);
        t.rows.push_back({at, static_cast<long>(times.end() - first)});
    }
    return t;
}

PublishedArm simulate_published_arm(const GenerativeModel& model, const EligibilitySpec& eligibility,
                                    const PublicationSettings& settings, std::uint64_t seed) {
    require(settings.patients > 0, "simulate_published_arm: at least one patient");
    require(settings.censor_max > 0.0, "simulate_published_arm: censoring bound must be positive");
    validate_eligibility(model.schema(), eligibility);
    PublishedArm out;
    const std::uint64_t cap = static_cast<std::uint64_t>(settings.patients) * 1000;
    for (std::uint64_t i = 0; out.ipd.size() < settings.patients; ++i) {
        if (i >= cap) fail(ErrorKind::EmptyCohort, "simulate_published_arm: eligibility admits too few draws");
        StreamRng rng(stream_key(seed, {rng_tag::baseline, i}));
        const BaselineRecord x = model.draw_baseline(rng);
        if (!check_eligibility(eligibility, x)) continue;
        StreamRng yr(stream_key(seed, {rng_tag::conditional, i}));
        const double y = model.draw_conditional(x, yr).days;
        const double c = settings.censor_max * yr.uniform();
        double t = std::min(y, c);
        if (settings.round_to_days) t = std::max(1.0, std::ceil(t));
        out.ipd.rows.push_back({t, y <= c});
    }
    out.events = out.ipd.events();
    out.curve = digitize(out.ipd, "simulated");
    out.at_risk = tabulate_at_risk(out.ipd, settings.at_risk_step);
    return out;
}

} // namespace tiltcal
