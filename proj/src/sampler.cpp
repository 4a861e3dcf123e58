#include "tiltcal/sampler.hpp"
#include "tiltcal/error.hpp"
#include "tiltcal/survival.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace tiltcal {

double StepSchedule::gamma(std::uint64_t t) const {
    return gamma0 / std::pow(offset + static_cast<double>(t), decay);
}

void validate_hyperparameters(const SamplerHyperparameters& h) {
    require(h.alpha > 0.0 && h.alpha <= 1.0, "alpha must lie in (0, 1]");
    require(h.epsilon > 0.0, "epsilon must be > 0");
    require(h.schedule.gamma0 > 0.0, "gamma0 must be > 0");
    require(h.schedule.decay > 0.5 && h.schedule.decay <= 1.0, "step decay exponent must lie in (1/2, 1]");
    require(h.schedule.offset > 0.0, "step offset t0 must be > 0");
    require(h.schedule.delta_max > 0.0, "delta_max must be > 0");
    require(h.partitions >= 2, "at least two partitions are needed for R-hat");
    require(h.theta > 0.0, "theta must be > 0");
    require(h.max_iterations >= 1, "max_iterations must be >= 1");
    require(h.thinning >= 1, "thinning interval must be >= 1");
    require(h.chain_depth >= 1, "chain depth must be >= 1");
    require(h.rhat_threshold > 1.0, "R-hat threshold must be > 1");
    require(h.soft_tolerance > 0.0, "soft tolerance must be > 0");
    require(h.check_every >= 1 && h.trace_every >= 1, "check and trace intervals must be >= 1");
    require(h.diagnostic_window >= 10, "diagnostic window must hold at least 10 points");
    require(h.acceptance_window >= 1, "acceptance window must be >= 1");
    require(h.recompute_every >= 1, "recompute interval must be >= 1");
    require(h.workers >= 1, "workers must be >= 1");
    if (h.burn_in) require(*h.burn_in < h.max_iterations, "fixed burn-in must be below max_iterations");
}

LambdaState initial_lambda(const std::vector<ConstraintSpec>& targets) {
    LambdaState s;
    for (const auto& c : targets) {
        s.lambda.push_back(0.0);
        s.soft.push_back(c.mode.soft);
        s.rho.push_back(c.mode.soft ? c.mode.rho : 0.0);
    }
    return s;
}

// ---------------------------------------------------------------------------

ConstraintSet::ConstraintSet(const Cohort& cohort, std::vector<ConstraintSpec> targets) : specs_(std::move(targets)) {
    require(cohort.weights.size() == cohort.size(), "cohort weights and records differ in length");
    for (const auto& s : specs_) {
        if (!is_outcome_statistic(s.statistic))
            fail(ErrorKind::Precondition, "constraint '" + s.label + "' is not an outcome statistic");
        require(std::isfinite(s.target), "constraint '" + s.label + "' has a non-finite target");
        require(!s.mode.soft || s.mode.rho > 0.0, "constraint '" + s.label + "' has a non-positive penalty");
        std::vector<char> m(cohort.size(), 1);
        double norm = 0.0;
        for (std::size_t i = 0; i < cohort.size(); ++i) {
            m[i] = in_subgroup(s.statistic, cohort.records[i]) ? 1 : 0;
            if (m[i]) norm += cohort.weights[i];
        }
        if (!(norm > 0.0))
            fail(ErrorKind::EmptySubgroup, "constraint '" + s.label + "': subgroup carries no cohort weight");
        member_.push_back(std::move(m));
        norm_.push_back(norm);
    }
}

double ConstraintSet::value(std::size_t j, std::size_t particle, double y) const {
    if (!member_[j][particle]) return 0.0;
    return evaluate_outcome(specs_[j].statistic.stat, y);
}

std::vector<double> estimate_constraints(const std::vector<double>& outcomes, const Cohort& cohort,
                                         const std::vector<ConstraintSpec>& targets) {
    require(outcomes.size() == cohort.size(), "one outcome per cohort record required");
    const ConstraintSet set(cohort, targets);
    std::vector<double> g(set.size(), 0.0);
    for (std::size_t j = 0; j < set.size(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < cohort.size(); ++i) s += cohort.weights[i] * set.value(j, i, outcomes[i]);
        g[j] = s / set.norm(j);
    }
    return g;
}

// ---------------------------------------------------------------------------

ChainBuffer::ChainBuffer(std::size_t particles, std::size_t depth)
    : particles_(particles), depth_(depth), data_(particles * depth, 0.0) {}

void ChainBuffer::record(const std::vector<double>& outcomes) {
    require(outcomes.size() == particles_, "chain buffer: wrong number of particles");
    if (depth_ == 0) return;
    std::copy(outcomes.begin(), outcomes.end(), data_.begin() + static_cast<std::ptrdiff_t>(head_ * particles_));
    head_ = (head_ + 1) % depth_;
    filled_ = std::min(filled_ + 1, depth_);
}

double ChainBuffer::sample(std::size_t particle, std::size_t k) const {
    require(particle < particles_ && k < filled_, "chain buffer index out of range");
    const std::size_t oldest = filled_ == depth_ ? head_ : 0;
    return data_[((oldest + k) % depth_) * particles_ + particle];
}

// ---------------------------------------------------------------------------

SamplerContext::SamplerContext(const Cohort& c, const GenerativeModel& m, std::vector<ConstraintSpec> targets)
    : cohort(&c), model(&m), constraints(c, std::move(targets)) {
    if (c.size() == 0) fail(ErrorKind::EmptyCohort, "sampler needs a non-empty cohort");
    for (double w : c.weights) {
        require(std::isfinite(w) && w >= 0.0, "cohort weights must be finite and >= 0");
        max_weight = std::max(max_weight, w);
    }
}

namespace {

std::vector<std::size_t> assign_partitions(std::size_t n, std::size_t partitions) {
    // fixed key: the assignment depends only on the cohort size, so a warm
    // start continues the reference run's partition traces
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    StreamRng rng(stream_key(0x7061727469746eULL, {rng_tag::partition, n}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<std::size_t> part(n);
    for (std::size_t k = 0; k < n; ++k) part[order[k]] = k % partitions;
    return part;
}

EnsembleState make_ensemble(const SamplerContext& ctx, std::vector<double> outcomes, std::size_t partitions,
                            std::size_t chain_depth) {
    const std::size_t n = ctx.cohort->size();
    EnsembleState e;
    e.outcomes = std::move(outcomes);
    e.partition_count = std::max<std::size_t>(1, std::min(partitions, n));
    e.partition = assign_partitions(n, e.partition_count);
    e.chains = ChainBuffer(n, chain_depth);
    recompute_sums(e, ctx);
    return e;
}

} // namespace

void recompute_sums(EnsembleState& e, const SamplerContext& ctx) {
    const auto& cohort = *ctx.cohort;
    const std::size_t n = cohort.size();
    const std::size_t J = ctx.constraints.size();
    const std::size_t P = e.partition_count;
    e.stats.assign(n * J, 0.0);
    e.sums.assign(J, 0.0);
    e.g_hat.assign(J, 0.0);
    e.part_sums.assign(P * J, 0.0);
    e.part_norm.assign(P * J, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = cohort.weights[i];
        const std::size_t p = e.partition[i];
        for (std::size_t j = 0; j < J; ++j) {
            const double f = ctx.constraints.value(j, i, e.outcomes[i]);
            e.stats[i * J + j] = f;
            e.sums[j] += w * f;
            e.part_sums[p * J + j] += w * f;
            if (ctx.constraints.member(j, i)) e.part_norm[p * J + j] += w;
        }
    }
    for (std::size_t j = 0; j < J; ++j) e.g_hat[j] = e.sums[j] / ctx.constraints.norm(j);
}

EnsembleState init_ensemble(const SamplerContext& ctx, std::uint64_t seed, std::size_t partitions,
                            std::size_t chain_depth) {
    if (!ctx.model->capabilities().sample_conditional)
        fail(ErrorKind::UnsupportedCapability, "model cannot sample conditional outcomes");
    const std::size_t n = ctx.cohort->size();
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        StreamRng rng(stream_key(seed, {rng_tag::init, i}));
        y[i] = ctx.model->draw_conditional(ctx.cohort->records[i], rng).days;
    }
    return make_ensemble(ctx, std::move(y), partitions, chain_depth);
}

EnsembleState ensemble_from_outcomes(const SamplerContext& ctx, std::vector<double> outcomes, std::uint64_t,
                                     std::size_t partitions, std::size_t chain_depth) {
    require(outcomes.size() == ctx.cohort->size(), "warm start: one outcome per particle required");
    return make_ensemble(ctx, std::move(outcomes), partitions, chain_depth);
}

void set_outcome(EnsembleState& e, const SamplerContext& ctx, std::size_t i, double y) {
    const std::size_t J = ctx.constraints.size();
    const double w = ctx.cohort->weights[i];
    const std::size_t p = e.partition[i];
    for (std::size_t j = 0; j < J; ++j) {
        const double f = ctx.constraints.value(j, i, y);
        const double diff = f - e.stats[i * J + j];
        e.stats[i * J + j] = f;
        e.sums[j] += w * diff;
        e.part_sums[p * J + j] += w * diff;
        e.g_hat[j] = e.sums[j] / ctx.constraints.norm(j);
    }
    e.outcomes[i] = y;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> draw_mask(const SamplerContext& ctx, double alpha, std::uint64_t seed,
                                   std::uint64_t iteration) {
    require(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
    const auto& w = ctx.cohort->weights;
    const std::size_t n = w.size();
    const double p_max = std::min(1.0, alpha * ctx.max_weight);
    std::vector<std::size_t> mask;
    if (p_max <= 0.0) return mask;
    StreamRng rng(stream_key(seed, {iteration, rng_tag::mask}));
    const double log_q = std::log1p(-p_max);
    std::size_t i = 0;
    while (true) {
        if (p_max < 1.0) {
            // number of failures before the next candidate
            const double skip = std::floor(std::log(rng.uniform()) / log_q);
            if (skip >= static_cast<double>(n - i)) break;
            i += static_cast<std::size_t>(skip);
        }
        if (i >= n) break;
        const double p_i = std::min(1.0, alpha * w[i]);
        if (p_i >= p_max || rng.uniform() * p_max < p_i) mask.push_back(i);
        ++i;
        if (i >= n) break;
    }
    return mask;
}

std::vector<Proposal> propose_block(const SamplerContext& ctx, double alpha, std::uint64_t seed,
                                    std::uint64_t iteration, int workers) {
    const auto mask = draw_mask(ctx, alpha, seed, iteration);
    std::vector<Proposal> block(mask.size());
    detail::parallel_for(
        mask.size(), workers,
        [&](std::size_t k) {
            const std::size_t i = mask[k];
            StreamRng rng(stream_key(seed, {iteration, i, rng_tag::proposal}));
            block[k] = {i, ctx.model->draw_conditional(ctx.cohort->records[i], rng).days};
        },
        256);
    return block;
}

double acceptance_uniform(std::uint64_t seed, std::uint64_t iteration) {
    StreamRng rng(stream_key(seed, {iteration, rng_tag::accept}));
    return rng.uniform();
}

double block_log_ratio(const EnsembleState& e, const SamplerContext& ctx, const LambdaState& lambda,
                       const std::vector<Proposal>& block) {
    const std::size_t J = ctx.constraints.size();
    double delta = 0.0;
    for (const auto& pr : block)
        for (std::size_t j = 0; j < J; ++j)
            delta += lambda.lambda[j] * (ctx.constraints.value(j, pr.particle, pr.outcome) - e.stats[pr.particle * J + j]);
    return delta;
}

StepResult mh_step(EnsembleState& e, const SamplerContext& ctx, const LambdaState& lambda, double alpha,
                   std::uint64_t seed, int workers) {
    require(lambda.lambda.size() == ctx.constraints.size(), "lambda does not match the constraint set");
    const std::uint64_t it = ++e.iteration;
    const auto block = propose_block(ctx, alpha, seed, it, workers);
    StepResult r;
    r.proposed = block.size();
    if (block.empty()) return r;
    r.log_ratio = block_log_ratio(e, ctx, lambda, block);
    const double u = acceptance_uniform(seed, it);
    r.accepted = u < std::min(1.0, std::exp(r.log_ratio));
    if (r.accepted)
        for (const auto& pr : block) set_outcome(e, ctx, pr.particle, pr.outcome);
    return r;
}

LambdaState rm_update(const LambdaState& lambda, const std::vector<double>& g_hat,
                      const std::vector<ConstraintSpec>& targets, const StepSchedule& schedule) {
    require(g_hat.size() == targets.size() && lambda.lambda.size() == targets.size(),
            "rm_update: size mismatch between lambda, estimates and targets");
    LambdaState next = lambda;
    const double gamma = schedule.gamma(lambda.t);
    for (std::size_t j = 0; j < targets.size(); ++j) {
        double drift = targets[j].target - g_hat[j];
        if (lambda.soft[j]) drift -= lambda.lambda[j] / lambda.rho[j];
        next.lambda[j] += std::clamp(gamma * drift, -schedule.delta_max, schedule.delta_max);
    }
    ++next.t;
    return next;
}

std::optional<double> gelman_rubin(const std::vector<std::vector<double>>& traces) {
    if (traces.size() < 2) return std::nullopt;
    std::size_t n = std::numeric_limits<std::size_t>::max();
    for (const auto& t : traces) n = std::min(n, t.size());
    if (n < 10) return std::nullopt;
    const double m = static_cast<double>(traces.size());
    const double nn = static_cast<double>(n);
    std::vector<double> means;
    double w = 0.0;
    for (const auto& t : traces) {
        // last n points of each trace
        const auto begin = t.end() - static_cast<std::ptrdiff_t>(n);
        const double mean = std::accumulate(begin, t.end(), 0.0) / nn;
        double ss = 0.0;
        for (auto it = begin; it != t.end(); ++it) ss += (*it - mean) * (*it - mean);
        w += ss / (nn - 1.0);
        means.push_back(mean);
    }
    w /= m;
    const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
    double b = 0.0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    b *= nn / (m - 1.0);
    if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    const double var_plus = (nn - 1.0) / nn * w + b / nn;
    return std::sqrt(var_plus / w);
}

namespace {

struct SortedOutcomes {
    std::vector<double> y;
    std::vector<double> cum; // normalized cumulative weight
};

SortedOutcomes sort_outcomes(const std::vector<double>& outcomes, const std::vector<double>& weights) {
    std::vector<std::size_t> order(outcomes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return outcomes[a] < outcomes[b]; });
    SortedOutcomes s;
    s.y.reserve(order.size());
    s.cum.reserve(order.size());
    double total = 0.0;
    for (double w : weights) total += w;
    double acc = 0.0;
    for (std::size_t i : order) {
        acc += weights[i];
        s.y.push_back(outcomes[i]);
        s.cum.push_back(acc / total);
    }
    return s;
}

double time_typed_threshold(const ConstraintSpec& spec) {
    if (const auto* s = std::get_if<SigmoidQuantile>(&spec.statistic.stat)) return s->threshold;
    if (const auto* s = std::get_if<OutcomeIndicator>(&spec.statistic.stat)) return s->threshold;
    fail(ErrorKind::Precondition, "constraint '" + spec.label + "' is not time-typed");
}

double horizontal_distance(const SortedOutcomes& s, const ConstraintSpec& spec) {
    const double t = time_typed_threshold(spec);
    const double p = spec.target;
    const auto it = std::lower_bound(s.cum.begin(), s.cum.end(), p - 1e-12);
    const double q = it == s.cum.end() ? s.y.back() : s.y[static_cast<std::size_t>(it - s.cum.begin())];
    return std::abs(q - t);
}

} // namespace

double deviation_days(const std::vector<double>& outcomes, const std::vector<double>& weights,
                      const ConstraintSpec& spec) {
    require(!outcomes.empty() && outcomes.size() == weights.size(), "deviation_days: bad input sizes");
    return horizontal_distance(sort_outcomes(outcomes, weights), spec);
}

// ---------------------------------------------------------------------------

void PartitionTraces::push(std::vector<double> point) {
    points.push_back(std::move(point));
    if (points.size() > depth) points.erase(points.begin(), points.begin() + static_cast<std::ptrdiff_t>(points.size() - depth));
}

std::vector<std::vector<double>> PartitionTraces::series(std::size_t j, const std::vector<double>& part_norm) const {
    std::vector<std::vector<double>> out;
    for (std::size_t p = 0; p < partitions; ++p) {
        if (!(part_norm[p * constraints + j] > 0.0)) continue;
        std::vector<double> s;
        s.reserve(points.size());
        for (const auto& pt : points) s.push_back(pt[p * constraints + j]);
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

std::vector<double> partition_estimates(const EnsembleState& e, std::size_t J) {
    std::vector<double> pt(e.partition_count * J, 0.0);
    for (std::size_t k = 0; k < pt.size(); ++k)
        pt[k] = e.part_norm[k] > 0.0 ? e.part_sums[k] / e.part_norm[k] : 0.0;
    return pt;
}

struct PredicateEval {
    bool holds = false;
    std::vector<double> rhat;
    double max_rhat = 0.0;
    double soft_violation = 0.0;
    double aggregate = 0.0;
};

PredicateEval evaluate_predicate(const EnsembleState& e, const SamplerContext& ctx, const LambdaState& lambda,
                                 const PartitionTraces& traces, const SamplerHyperparameters& h) {
    const auto& specs = ctx.constraints.specs();
    const std::size_t J = specs.size();
    PredicateEval r;
    bool rhat_ok = true;
    r.rhat.assign(J, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t j = 0; j < J; ++j) {
        const auto v = gelman_rubin(traces.series(j, e.part_norm));
        if (!v) {
            rhat_ok = false;
            continue;
        }
        r.rhat[j] = *v;
        r.max_rhat = std::max(r.max_rhat, *v);
        if (!(*v < h.rhat_threshold)) rhat_ok = false;
    }
    for (std::size_t j = 0; j < J; ++j)
        if (lambda.soft[j])
            r.soft_violation = std::max(r.soft_violation,
                                        std::abs(e.g_hat[j] - specs[j].target + lambda.lambda[j] / lambda.rho[j]));

    bool any_time = false;
    for (const auto& s : specs) any_time = any_time || (!s.mode.soft && is_time_typed(s.statistic));
    SortedOutcomes sorted;
    if (any_time) sorted = sort_outcomes(e.outcomes, ctx.cohort->weights);
    for (std::size_t j = 0; j < J; ++j) {
        if (specs[j].mode.soft) continue;
        const double term = is_time_typed(specs[j].statistic) ? horizontal_distance(sorted, specs[j])
                                                               : std::abs(e.g_hat[j] - specs[j].target) * 1000.0;
        r.aggregate = h.reducer == ResidualReducer::Sum ? r.aggregate + term : std::max(r.aggregate, term);
    }
    r.holds = rhat_ok && r.soft_violation < h.soft_tolerance && r.aggregate < h.theta;
    return r;
}

} // namespace

ChainRun run_chain(const Cohort& cohort, const GenerativeModel& model, const std::vector<ConstraintSpec>& targets,
                   const SamplerHyperparameters& h, std::uint64_t seed, const WarmStart* warm,
                   const ProgressFn& progress) {
    validate_hyperparameters(h);
    if (!model.capabilities().sample_conditional)
        fail(ErrorKind::UnsupportedCapability, "model cannot sample conditional outcomes");
    const SamplerContext ctx(cohort, model, targets);
    const std::size_t J = targets.size();

    ChainRun run;
    run.ensemble = warm ? ensemble_from_outcomes(ctx, warm->outcomes, seed, h.partitions, h.chain_depth)
                        : init_ensemble(ctx, seed, h.partitions, h.chain_depth);
    auto& e = run.ensemble;
    run.lambda = warm ? warm->lambda : initial_lambda(targets);
    if (warm) {
        require(run.lambda.lambda.size() == J, "warm start lambda does not match the targets");
        for (std::size_t j = 0; j < J; ++j) {
            run.lambda.soft[j] = targets[j].mode.soft;
            run.lambda.rho[j] = targets[j].mode.soft ? targets[j].mode.rho : 0.0;
        }
    }
    run.traces = PartitionTraces{e.partition_count, J, h.diagnostic_window, {}};
    if (warm && warm->traces && warm->traces->partitions == e.partition_count && warm->traces->constraints == J) {
        run.traces.points = warm->traces->points;
        while (run.traces.points.size() > run.traces.depth) run.traces.points.erase(run.traces.points.begin());
    }

    auto& d = run.diagnostics;
    std::deque<char> window;
    std::size_t window_accepts = 0;
    bool window_seen_full = false;

    const std::uint64_t span = static_cast<std::uint64_t>(h.chain_depth) * h.thinning;
    const std::uint64_t forced_start = h.max_iterations > span ? h.max_iterations - span : 0;
    bool recording = false;
    bool burn_from_rule = false;
    std::uint64_t origin = 0;
    bool stopped = false;
    PredicateEval last;

    const auto start_recording = [&](std::uint64_t it) {
        recording = true;
        origin = it;
        e.chains.clear();
    };
    if (h.burn_in && *h.burn_in == 0) {
        start_recording(0);
        d.burn_in = 0;
        burn_from_rule = true;
    }
    if (!h.burn_in && forced_start == 0) start_recording(0);

    for (std::uint64_t it = 1; it <= h.max_iterations; ++it) {
        const auto step = mh_step(e, ctx, run.lambda, h.alpha, seed, h.workers);
        d.proposals += step.proposed;
        if (step.proposed > 0) {
            d.accepted_blocks += step.accepted ? 1 : 0;
            window.push_back(step.accepted ? 1 : 0);
            window_accepts += step.accepted ? 1 : 0;
            if (window.size() > h.acceptance_window) {
                window_accepts -= static_cast<std::size_t>(window.front());
                window.pop_front();
                window_seen_full = true;
            }
            if (window_seen_full || window.size() == h.acceptance_window) {
                const double rate = static_cast<double>(window_accepts) / static_cast<double>(window.size());
                d.acceptance_min = std::min(d.acceptance_min, rate);
                d.acceptance_max = std::max(d.acceptance_max, rate);
            }
        }
        run.lambda = rm_update(run.lambda, e.g_hat, targets, h.schedule);
        if (it % h.recompute_every == 0) recompute_sums(e, ctx);
        if (it % h.trace_every == 0) {
            run.traces.push(partition_estimates(e, J));
            run.trajectory.push_back({it, run.lambda.lambda, e.g_hat});
        }

        if (recording && it > origin && (it - origin) % h.thinning == 0) e.chains.record(e.outcomes);
        if (!recording) {
            if (h.burn_in && it == *h.burn_in) {
                start_recording(it);
                d.burn_in = it;
                burn_from_rule = true;
            } else if (!h.burn_in && it == forced_start) {
                start_recording(it);
            }
        }

        if (it % h.check_every == 0) {
            last = evaluate_predicate(e, ctx, run.lambda, run.traces, h);
            if (recording && burn_from_rule) d.max_soft_violation = std::max(d.max_soft_violation, last.soft_violation);
            if (last.holds && !h.burn_in && !burn_from_rule && it >= h.min_burn_in) {
                if (!recording || origin != it) start_recording(it);
                burn_from_rule = true;
                d.burn_in = it;
                d.max_soft_violation = last.soft_violation;
            }
            d.aggregate_residual = last.aggregate;
            if (progress) {
                d.g_hat = e.g_hat;
                progress(it, d);
            }
            if (last.holds && burn_from_rule && e.chains.full()) {
                d.stop_iteration = it;
                d.converged = true;
                stopped = true;
                break;
            }
        }
    }
    if (!stopped) {
        d.stop_iteration = h.max_iterations;
        d.converged = false;
        last = evaluate_predicate(e, ctx, run.lambda, run.traces, h);
        d.aggregate_residual = last.aggregate;
        if (!burn_from_rule) d.burn_in = forced_start;
    }

    d.acceptance_at_stop = window.empty() ? 1.0 : static_cast<double>(window_accepts) / static_cast<double>(window.size());
    if (d.acceptance_min > d.acceptance_max) d.acceptance_min = d.acceptance_max = d.acceptance_at_stop;
    d.rhat = last.rhat;
    d.max_rhat = last.max_rhat;
    d.g_hat = e.g_hat;
    if (J > 0) {
        d.lambda_min = *std::min_element(run.lambda.lambda.begin(), run.lambda.lambda.end());
        d.lambda_max = *std::max_element(run.lambda.lambda.begin(), run.lambda.lambda.end());
    }

    // achieved-vs-target deviation from the pooled retained samples
    d.deviation_days.assign(J, std::numeric_limits<double>::quiet_NaN());
    if (e.chains.filled() > 0) {
        const std::size_t n = cohort.size();
        const std::size_t k = e.chains.filled();
        std::vector<double> ys, ws;
        ys.reserve(n * k);
        ws.reserve(n * k);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < k; ++c) {
                ys.push_back(e.chains.sample(i, c));
                ws.push_back(cohort.weights[i] / static_cast<double>(k));
            }
        bool any = false;
        for (const auto& s : targets) any = any || is_time_typed(s.statistic);
        if (any) {
            const auto sorted = sort_outcomes(ys, ws);
            for (std::size_t j = 0; j < J; ++j)
                if (is_time_typed(targets[j].statistic)) {
                    d.deviation_days[j] = horizontal_distance(sorted, targets[j]);
                    d.max_landmark_deviation_days = std::max(d.max_landmark_deviation_days, d.deviation_days[j]);
                }
        }
    }
    return run;
}

WarmStart warm_start_from(const ChainRun& run) {
    WarmStart w;
    const auto& e = run.ensemble;
    w.outcomes = e.outcomes;
    if (e.chains.filled() > 0)
        for (std::size_t i = 0; i < e.outcomes.size(); ++i) w.outcomes[i] = e.chains.sample(i, e.chains.filled() - 1);
    w.lambda = run.lambda;
    w.traces = run.traces;
    return w;
}

} // namespace tiltcal
