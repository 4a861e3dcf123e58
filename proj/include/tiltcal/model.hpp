#pragma once

#include "tiltcal/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tiltcal {

enum class FeatureKind { Continuous, Categorical };

struct FeatureDescriptor {
    std::string name;
    FeatureKind kind = FeatureKind::Continuous;
    std::string units;               // continuous only
    std::vector<std::string> levels; // categorical only
    bool nullable = false;

    bool operator==(const FeatureDescriptor&) const = default;
};

class CovariateSchema {
public:
    CovariateSchema() = default;
    /// Throws Schema on duplicate names or empty level sets.
    explicit CovariateSchema(std::vector<FeatureDescriptor> features);

    std::size_t size() const noexcept { return features_.size(); }
    const FeatureDescriptor& feature(std::size_t i) const { return features_.at(i); }
    const std::vector<FeatureDescriptor>& features() const noexcept { return features_; }

    std::optional<std::size_t> find(std::string_view name) const;
    std::size_t index_of(std::string_view name) const;
    std::size_t level_index(std::size_t feature, std::string_view level) const;

    bool operator==(const CovariateSchema&) const = default;

private:
    std::vector<FeatureDescriptor> features_;
};

/// A covariate slot. Categorical values hold the level index; an empty
/// optional is the explicit missing marker.
using FeatureValue = std::optional<double>;

struct BaselineRecord {
    std::vector<FeatureValue> values;

    bool has_missing() const noexcept;
    bool operator==(const BaselineRecord&) const = default;
};

/// Throws Schema when the record does not conform (arity, level range,
/// non-finite continuous values, missing in a non-nullable slot).
void validate_record(const CovariateSchema& schema, const BaselineRecord& record);

/// Time-to-event outcome in days.
struct Outcome {
    double days = 0.0;
    bool operator==(const Outcome&) const = default;
};

struct Capabilities {
    bool sample_baseline = true;
    bool sample_conditional = true;
    bool eval_conditional_density = false;
};

/// Black-box generative model of (baseline, outcome). Implementations are
/// immutable after construction and may be shared across threads; all
/// randomness comes from the caller-supplied stream.
class GenerativeModel {
public:
    virtual ~GenerativeModel() = default;

    virtual const CovariateSchema& schema() const = 0;
    virtual Capabilities capabilities() const = 0;

    virtual BaselineRecord draw_baseline(StreamRng& rng) const;
    virtual Outcome draw_conditional(const BaselineRecord& x, StreamRng& rng) const;
    virtual double conditional_density(const BaselineRecord& x, Outcome y) const;
};

/// n i.i.d. baseline draws; draw i uses its own stream keyed by (seed, i).
std::vector<BaselineRecord> sample_baseline(const GenerativeModel& model, std::size_t n, std::uint64_t seed);
Outcome sample_conditional(const GenerativeModel& model, const BaselineRecord& x, std::uint64_t seed);
double eval_conditional_density(const GenerativeModel& model, const BaselineRecord& x, Outcome y);

// ---------------------------------------------------------------------------
// Synthetic AFT-Weibull survival model
// ---------------------------------------------------------------------------

struct SyntheticFeature {
    FeatureDescriptor descriptor;
    double missing_probability = 0.0;

    // categorical marginal and per-level log-scale coefficients
    std::vector<double> level_probabilities;
    std::vector<double> level_coefficients;

    // continuous marginal: normal(mean, sd) truncated to [lower, upper]
    double mean = 0.0;
    double sd = 1.0;
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();
    double coefficient = 0.0; // log-scale contribution coefficient * (value - center)
    double center = 0.0;

    bool operator==(const SyntheticFeature&) const = default;
};

struct SyntheticModelParams {
    std::vector<SyntheticFeature> features;
    double shape = 1.0;     // Weibull shape
    double log_scale = 0.0; // intercept of the log-scale linear predictor

    bool operator==(const SyntheticModelParams&) const = default;
};

/// Independent marginals for the baseline; Weibull accelerated failure time
/// for the outcome: log scale(x) = intercept + sum of feature terms. A
/// missing feature contributes zero to the linear predictor.
class SyntheticSurvivalModel final : public GenerativeModel {
public:
    explicit SyntheticSurvivalModel(SyntheticModelParams params);

    const CovariateSchema& schema() const override { return schema_; }
    Capabilities capabilities() const override { return {true, true, true}; }

    BaselineRecord draw_baseline(StreamRng& rng) const override;
    Outcome draw_conditional(const BaselineRecord& x, StreamRng& rng) const override;
    double conditional_density(const BaselineRecord& x, Outcome y) const override;

    double scale(const BaselineRecord& x) const;
    double survival(const BaselineRecord& x, double days) const;
    double shape() const noexcept { return params_.shape; }
    const SyntheticModelParams& params() const noexcept { return params_; }

private:
    SyntheticModelParams params_;
    CovariateSchema schema_;
};

// ---------------------------------------------------------------------------
// Discrete kernel model (finite outcome support per group)
// ---------------------------------------------------------------------------

struct DiscreteLaw {
    std::vector<double> support;
    std::vector<double> probabilities;
};

/// One categorical covariate "group"; the conditional law of the outcome is
/// a finite distribution per group. The density capability returns the
/// probability mass, so it is the reference kernel for the exact oracles.
class DiscreteKernelModel final : public GenerativeModel {
public:
    DiscreteKernelModel(std::vector<double> group_probabilities, std::vector<DiscreteLaw> laws);

    const CovariateSchema& schema() const override { return schema_; }
    Capabilities capabilities() const override { return {true, true, true}; }

    BaselineRecord draw_baseline(StreamRng& rng) const override;
    Outcome draw_conditional(const BaselineRecord& x, StreamRng& rng) const override;
    double conditional_density(const BaselineRecord& x, Outcome y) const override;

    const DiscreteLaw& law(std::size_t group) const { return laws_.at(group); }
    std::size_t groups() const noexcept { return laws_.size(); }

private:
    std::size_t group_of(const BaselineRecord& x) const;

    std::vector<double> group_probabilities_;
    std::vector<DiscreteLaw> laws_;
    CovariateSchema schema_;
};

/// Schema without any sampler; lets trial specifications be validated when
/// the real model is not available.
class SchemaOnlyModel final : public GenerativeModel {
public:
    explicit SchemaOnlyModel(CovariateSchema schema) : schema_(std::move(schema)) {}
    const CovariateSchema& schema() const override { return schema_; }
    Capabilities capabilities() const override { return {false, false, false}; }

private:
    CovariateSchema schema_;
};

/// Forwards to another model with some capabilities switched off.
class MaskedModel final : public GenerativeModel {
public:
    MaskedModel(std::shared_ptr<const GenerativeModel> inner, Capabilities mask);

    const CovariateSchema& schema() const override { return inner_->schema(); }
    Capabilities capabilities() const override;

    BaselineRecord draw_baseline(StreamRng& rng) const override;
    Outcome draw_conditional(const BaselineRecord& x, StreamRng& rng) const override;
    double conditional_density(const BaselineRecord& x, Outcome y) const override;

private:
    std::shared_ptr<const GenerativeModel> inner_;
    Capabilities mask_;
};

/// One term exp(lambda * sigma((threshold - y) / scale)) of a kernel tilt.
struct KernelTiltTerm {
    double threshold = 0.0;
    double scale = 10.0;
    double lambda = 0.0;
    bool operator==(const KernelTiltTerm&) const = default;
};

/// The base model with its conditional kernel exponentially tilted by
/// sigmoid landmark statistics. Sampling is exact (rejection from the base
/// kernel, the statistics being bounded in [0, 1]). Used to build synthetic
/// ground truth with a known injected tilt.
class TiltedKernelModel final : public GenerativeModel {
public:
    TiltedKernelModel(std::shared_ptr<const GenerativeModel> base, std::vector<KernelTiltTerm> tilt);

    const CovariateSchema& schema() const override { return base_->schema(); }
    Capabilities capabilities() const override;

    BaselineRecord draw_baseline(StreamRng& rng) const override;
    Outcome draw_conditional(const BaselineRecord& x, StreamRng& rng) const override;

    double log_tilt(double days) const;
    const std::vector<KernelTiltTerm>& tilt() const noexcept { return tilt_; }
    const GenerativeModel& base() const noexcept { return *base_; }

private:
    std::shared_ptr<const GenerativeModel> base_;
    std::vector<KernelTiltTerm> tilt_;
    double log_bound_ = 0.0;
};

} // namespace tiltcal
