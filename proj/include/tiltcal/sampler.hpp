#pragma once

#include "tiltcal/balance.hpp"
#include "tiltcal/constraints.hpp"
#include "tiltcal/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tiltcal {

/// gamma_t = gamma0 / (offset + t)^decay, each update clipped to +-delta_max.
struct StepSchedule {
    double gamma0 = 1.0;
    double decay = 0.6;
    double offset = 1.0;
    double delta_max = 0.5;

    double gamma(std::uint64_t t) const;
    bool operator==(const StepSchedule&) const = default;
};

/// How per-constraint residuals are folded into the scalar compared with
/// theta. The default sums |deviation| in days for time-typed constraints
/// and |residual| * 1000 for the rest; Max takes the largest such term.
enum class ResidualReducer { Sum, Max };

struct SamplerHyperparameters {
    double alpha = 1e-3;          // proposal rate
    double epsilon = 10.0;        // sigmoid scale in days
    StepSchedule schedule;
    std::size_t partitions = 400; // P
    double theta = 50.0;          // aggregate residual threshold
    std::uint64_t max_iterations = 1'000'000;
    std::optional<std::uint64_t> burn_in; // empty: first iteration where the stopping predicate holds
    std::uint64_t min_burn_in = 0;        // earliest iteration allowed as adaptive burn-in
    std::uint64_t thinning = 100;         // s
    std::size_t chain_depth = 64;         // K_c
    double rhat_threshold = 1.05;
    double soft_tolerance = 0.01;
    std::uint64_t check_every = 500;
    std::uint64_t trace_every = 250;
    std::size_t diagnostic_window = 200; // trace points used for R-hat
    std::uint64_t acceptance_window = 1000;
    std::uint64_t recompute_every = 1000;
    ResidualReducer reducer = ResidualReducer::Sum;
    int workers = 1;

    bool operator==(const SamplerHyperparameters&) const = default;
};

/// Throws precondition errors on invalid combinations.
void validate_hyperparameters(const SamplerHyperparameters& h);

struct LambdaState {
    std::vector<double> lambda;
    std::vector<bool> soft;
    std::vector<double> rho;
    std::uint64_t t = 0; // number of updates applied so far

    bool operator==(const LambdaState&) const = default;
};

LambdaState initial_lambda(const std::vector<ConstraintSpec>& targets);

/// Outcome constraints bound to a cohort: subgroup membership and the
/// normalizing weight of every constraint are fixed up front.
class ConstraintSet {
public:
    ConstraintSet(const Cohort& cohort, std::vector<ConstraintSpec> targets);

    std::size_t size() const noexcept { return specs_.size(); }
    const ConstraintSpec& spec(std::size_t j) const { return specs_.at(j); }
    const std::vector<ConstraintSpec>& specs() const noexcept { return specs_; }
    bool member(std::size_t j, std::size_t particle) const { return member_[j][particle] != 0; }
    double norm(std::size_t j) const { return norm_[j]; }

    /// f_j(x_i, y) for particle i (zero outside the constraint's subgroup).
    double value(std::size_t j, std::size_t particle, double y) const;

private:
    std::vector<ConstraintSpec> specs_;
    std::vector<std::vector<char>> member_;
    std::vector<double> norm_;
};

/// Exact weighted estimates: global constraints use (1/N) sum w_i f_j(y_i),
/// subgroup-scoped ones normalize by the subgroup's weight. Throws
/// empty-subgroup when a subgroup carries no weight.
std::vector<double> estimate_constraints(const std::vector<double>& outcomes, const Cohort& cohort,
                                         const std::vector<ConstraintSpec>& targets);

/// Per-particle ring buffers of thinned outcome samples.
class ChainBuffer {
public:
    ChainBuffer() = default;
    ChainBuffer(std::size_t particles, std::size_t depth);

    void record(const std::vector<double>& outcomes);
    void clear() { filled_ = 0, head_ = 0; }
    std::size_t depth() const noexcept { return depth_; }
    std::size_t filled() const noexcept { return filled_; }
    bool full() const noexcept { return filled_ == depth_; }
    std::size_t particles() const noexcept { return particles_; }
    /// k-th retained sample of a particle, oldest first.
    double sample(std::size_t particle, std::size_t k) const;

private:
    std::size_t particles_ = 0, depth_ = 0, filled_ = 0, head_ = 0;
    std::vector<double> data_; // depth-major: slot * particles + particle
};

struct EnsembleState {
    std::vector<double> outcomes;     // y_i
    std::vector<double> stats;        // N x J, f_j(x_i, y_i), particle-major
    std::vector<double> sums;         // J, sum_i w_i f_j(x_i, y_i)
    std::vector<double> g_hat;        // J
    std::vector<std::size_t> partition; // particle -> partition index
    std::size_t partition_count = 0;
    std::vector<double> part_sums;    // P x J
    std::vector<double> part_norm;    // P x J
    ChainBuffer chains;
    std::uint64_t iteration = 0;
};

struct SamplerContext {
    const Cohort* cohort = nullptr;
    const GenerativeModel* model = nullptr;
    ConstraintSet constraints;
    double max_weight = 0.0;

    SamplerContext(const Cohort& c, const GenerativeModel& m, std::vector<ConstraintSpec> targets);
};

/// New ensemble: one conditional draw per particle, keyed (seed, init, i).
EnsembleState init_ensemble(const SamplerContext& ctx, std::uint64_t seed, std::size_t partitions = 400,
                            std::size_t chain_depth = 64);
/// Ensemble seeded from given outcomes (warm start).
EnsembleState ensemble_from_outcomes(const SamplerContext& ctx, std::vector<double> outcomes, std::uint64_t seed,
                                     std::size_t partitions = 400, std::size_t chain_depth = 64);

/// Replaces particle i's outcome and updates every running sum.
void set_outcome(EnsembleState& e, const SamplerContext& ctx, std::size_t particle, double y);
/// Recomputes all running sums from scratch.
void recompute_sums(EnsembleState& e, const SamplerContext& ctx);

struct Proposal {
    std::size_t particle;
    double outcome;
};

/// Inclusion mask for an iteration: particle i is included independently
/// with probability min(1, alpha * w_i). Uses geometric skipping at rate
/// min(1, alpha * w_max) followed by thinning, so the cost is O(alpha N).
std::vector<std::size_t> draw_mask(const SamplerContext& ctx, double alpha, std::uint64_t seed, std::uint64_t iteration);
/// Mask plus one reference-kernel draw per masked particle.
std::vector<Proposal> propose_block(const SamplerContext& ctx, double alpha, std::uint64_t seed,
                                    std::uint64_t iteration, int workers = 1);
/// The single uniform deciding a block.
double acceptance_uniform(std::uint64_t seed, std::uint64_t iteration);
/// Sum over the block of lambda . (f(proposed) - f(current)).
double block_log_ratio(const EnsembleState& e, const SamplerContext& ctx, const LambdaState& lambda,
                       const std::vector<Proposal>& block);

struct StepResult {
    bool accepted = true;
    std::size_t proposed = 0;
    double log_ratio = 0.0;
};

/// One block Metropolis-Hastings step with the reference kernel as the
/// proposal, so the acceptance ratio needs no density evaluation.
StepResult mh_step(EnsembleState& e, const SamplerContext& ctx, const LambdaState& lambda, double alpha,
                   std::uint64_t seed, int workers = 1);

/// lambda_j += clip(gamma_t (c_j - g_j - [soft] lambda_j / rho_j), +-delta_max); t += 1.
LambdaState rm_update(const LambdaState& lambda, const std::vector<double>& g_hat,
                      const std::vector<ConstraintSpec>& targets, const StepSchedule& schedule);

/// Gelman-Rubin statistic over per-partition traces (each a series of
/// running estimates). Empty when fewer than two traces or fewer than ten
/// points are available. Zero within and between variance gives 1.
std::optional<double> gelman_rubin(const std::vector<std::vector<double>>& traces);

/// Horizontal distance in days between a time-typed target and the current
/// weighted outcome distribution.
double deviation_days(const std::vector<double>& outcomes, const std::vector<double>& weights,
                      const ConstraintSpec& spec);

struct ChainDiagnostics {
    double acceptance_at_stop = 0.0;
    double acceptance_min = 1.0;
    double acceptance_max = 0.0;
    std::vector<double> rhat;       // per constraint at stop (NaN when not ready)
    double max_rhat = 0.0;
    double lambda_min = 0.0;
    double lambda_max = 0.0;
    double max_soft_violation = 0.0; // over post-burn-in checkpoints
    std::vector<double> deviation_days;  // per time-typed constraint from the pooled chains; NaN otherwise
    double max_landmark_deviation_days = 0.0;
    double aggregate_residual = 0.0; // last checkpoint value compared with theta
    std::vector<double> g_hat;       // final running estimates
    std::uint64_t burn_in = 0;       // T_b
    std::uint64_t stop_iteration = 0;
    std::uint64_t proposals = 0;
    std::uint64_t accepted_blocks = 0;
    bool converged = false;
};

struct TracePoint {
    std::uint64_t iteration = 0;
    std::vector<double> lambda;
    std::vector<double> g_hat;
};

/// Rolling store of partition-local estimates used for R-hat.
struct PartitionTraces {
    std::size_t partitions = 0, constraints = 0, depth = 0;
    std::vector<std::vector<double>> points; // each P x J, oldest first

    void push(std::vector<double> point);
    std::vector<std::vector<double>> series(std::size_t constraint, const std::vector<double>& part_norm) const;
};

struct WarmStart {
    std::vector<double> outcomes;
    LambdaState lambda;
    std::optional<PartitionTraces> traces;
};

struct ChainRun {
    EnsembleState ensemble;
    LambdaState lambda;
    ChainDiagnostics diagnostics;
    std::vector<TracePoint> trajectory;
    PartitionTraces traces;
};

using ProgressFn = std::function<void(std::uint64_t iteration, const ChainDiagnostics&)>;

/// Algorithm driver: MH steps and Robbins-Monro updates until the stopping
/// rule holds with full chain buffers, or until max_iterations. A run that
/// hits the cap still returns full buffers and is flagged not converged.
ChainRun run_chain(const Cohort& cohort, const GenerativeModel& model, const std::vector<ConstraintSpec>& targets,
                   const SamplerHyperparameters& hyper, std::uint64_t seed, const WarmStart* warm = nullptr,
                   const ProgressFn& progress = {});

/// Builds the warm start (latest chain sample per particle, final lambda,
/// recent partition traces) from a finished run.
WarmStart warm_start_from(const ChainRun& run);

} // namespace tiltcal
