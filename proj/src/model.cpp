#include "tiltcal/model.hpp"
#include "tiltcal/constraints.hpp"
#include "tiltcal/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace tiltcal {

namespace {

std::size_t draw_categorical(const std::vector<double>& probabilities, StreamRng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t k = 0; k < probabilities.size(); ++k) {
        acc += probabilities[k];
        if (u < acc) return k;
    }
    // u landed in the rounding gap above the last cumulative sum
    for (std::size_t k = probabilities.size(); k-- > 0;)
        if (probabilities[k] > 0.0) return k;
    return 0;
}

void check_probabilities(const std::vector<double>& p, const std::string& what) {
    if (p.empty()) fail(ErrorKind::Schema, what + ": empty probability table");
    double total = 0.0;
    for (double v : p) {
        if (!std::isfinite(v) || v < 0.0) fail(ErrorKind::Schema, what + ": probabilities must be finite and >= 0");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::Schema, what + ": probabilities must sum to 1");
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

} // namespace

CovariateSchema::CovariateSchema(std::vector<FeatureDescriptor> features) : features_(std::move(features)) {
    std::set<std::string> seen;
    for (const auto& f : features_) {
        if (f.name.empty()) fail(ErrorKind::Schema, "feature with empty name");
        if (!seen.insert(f.name).second) fail(ErrorKind::Schema, "duplicate feature name '" + f.name + "'");
        if (f.kind == FeatureKind::Categorical) {
            if (f.levels.empty()) fail(ErrorKind::Schema, "categorical feature '" + f.name + "' has no levels");
            std::set<std::string> lv(f.levels.begin(), f.levels.end());
            if (lv.size() != f.levels.size())
                fail(ErrorKind::Schema, "categorical feature '" + f.name + "' repeats a level");
        }
    }
}

std::optional<std::size_t> CovariateSchema::find(std::string_view name) const {
    for (std::size_t i = 0; i < features_.size(); ++i)
        if (features_[i].name == name) return i;
    return std::nullopt;
}

std::size_t CovariateSchema::index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    fail(ErrorKind::Schema, "unknown feature '" + std::string(name) + "'");
}

std::size_t CovariateSchema::level_index(std::size_t feature, std::string_view level) const {
    const auto& f = features_.at(feature);
    if (f.kind != FeatureKind::Categorical) fail(ErrorKind::Schema, "feature '" + f.name + "' is not categorical");
    for (std::size_t k = 0; k < f.levels.size(); ++k)
        if (f.levels[k] == level) return k;
    fail(ErrorKind::Schema, "feature '" + f.name + "' has no level '" + std::string(level) + "'");
}

bool BaselineRecord::has_missing() const noexcept {
    return std::any_of(values.begin(), values.end(), [](const FeatureValue& v) { return !v.has_value(); });
}

void validate_record(const CovariateSchema& schema, const BaselineRecord& record) {
    if (record.values.size() != schema.size())
        fail(ErrorKind::Schema, "record has " + std::to_string(record.values.size()) + " values, schema has " +
                                    std::to_string(schema.size()));
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const auto& f = schema.feature(i);
        const auto& v = record.values[i];
        if (!v) {
            if (!f.nullable) fail(ErrorKind::Schema, "missing value in non-nullable feature '" + f.name + "'");
            continue;
        }
        if (!std::isfinite(*v)) fail(ErrorKind::Schema, "non-finite value in feature '" + f.name + "'");
        if (f.kind == FeatureKind::Categorical) {
            const double k = *v;
            if (k < 0 || k != std::floor(k) || k >= static_cast<double>(f.levels.size()))
                fail(ErrorKind::Schema, "level index out of range in feature '" + f.name + "'");
        }
    }
}

// ---------------------------------------------------------------------------

BaselineRecord GenerativeModel::draw_baseline(StreamRng&) const {
    fail(ErrorKind::UnsupportedCapability, "model cannot sample baselines");
}

Outcome GenerativeModel::draw_conditional(const BaselineRecord&, StreamRng&) const {
    fail(ErrorKind::UnsupportedCapability, "model cannot sample conditional outcomes");
}

double GenerativeModel::conditional_density(const BaselineRecord&, Outcome) const {
    fail(ErrorKind::UnsupportedCapability, "model cannot evaluate the conditional density");
}

std::vector<BaselineRecord> sample_baseline(const GenerativeModel& model, std::size_t n, std::uint64_t seed) {
    require(n >= 1, "sample_baseline: n must be >= 1");
    if (!model.capabilities().sample_baseline)
        fail(ErrorKind::UnsupportedCapability, "model cannot sample baselines");
    std::vector<BaselineRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        StreamRng rng(stream_key(seed, {rng_tag::baseline, i}));
        out.push_back(model.draw_baseline(rng));
    }
    return out;
}

Outcome sample_conditional(const GenerativeModel& model, const BaselineRecord& x, std::uint64_t seed) {
    if (!model.capabilities().sample_conditional)
        fail(ErrorKind::UnsupportedCapability, "model cannot sample conditional outcomes");
    validate_record(model.schema(), x);
    StreamRng rng(stream_key(seed, {rng_tag::conditional}));
    return model.draw_conditional(x, rng);
}

double eval_conditional_density(const GenerativeModel& model, const BaselineRecord& x, Outcome y) {
    if (!model.capabilities().eval_conditional_density)
        fail(ErrorKind::UnsupportedCapability, "model cannot evaluate the conditional density");
    return model.conditional_density(x, y);
}

// ---------------------------------------------------------------------------

SyntheticSurvivalModel::SyntheticSurvivalModel(SyntheticModelParams params) : params_(std::move(params)) {
    if (!(params_.shape > 0.0) || !std::isfinite(params_.shape)) fail(ErrorKind::Schema, "Weibull shape must be > 0");
    if (!std::isfinite(params_.log_scale)) fail(ErrorKind::Schema, "log-scale intercept must be finite");
    std::vector<FeatureDescriptor> descriptors;
    for (auto& f : params_.features) {
        const auto& name = f.descriptor.name;
        if (f.missing_probability < 0.0 || f.missing_probability >= 1.0)
            fail(ErrorKind::Schema, "feature '" + name + "': missing probability must be in [0, 1)");
        if (f.missing_probability > 0.0) f.descriptor.nullable = true;
        if (f.descriptor.kind == FeatureKind::Categorical) {
            if (f.level_probabilities.size() != f.descriptor.levels.size())
                fail(ErrorKind::Schema, "feature '" + name + "': one probability per level required");
            check_probabilities(f.level_probabilities, "feature '" + name + "'");
            if (f.level_coefficients.empty()) f.level_coefficients.assign(f.descriptor.levels.size(), 0.0);
            if (f.level_coefficients.size() != f.descriptor.levels.size())
                fail(ErrorKind::Schema, "feature '" + name + "': one coefficient per level required");
        } else {
            if (!(f.sd > 0.0) || !std::isfinite(f.mean))
                fail(ErrorKind::Schema, "feature '" + name + "': need finite mean and sd > 0");
            if (!(f.lower < f.upper)) fail(ErrorKind::Schema, "feature '" + name + "': lower bound must be < upper");
            const double mass = normal_cdf((f.upper - f.mean) / f.sd) - normal_cdf((f.lower - f.mean) / f.sd);
            if (mass < 1e-4) fail(ErrorKind::Schema, "feature '" + name + "': truncation keeps almost no mass");
        }
        descriptors.push_back(f.descriptor);
    }
    schema_ = CovariateSchema(std::move(descriptors));
}

BaselineRecord SyntheticSurvivalModel::draw_baseline(StreamRng& rng) const {
    BaselineRecord r;
    r.values.reserve(params_.features.size());
    for (const auto& f : params_.features) {
        // always consume the same number of draws for the missingness coin
        const double coin = rng.uniform();
        if (coin < f.missing_probability) {
            r.values.emplace_back(std::nullopt);
            continue;
        }
        if (f.descriptor.kind == FeatureKind::Categorical) {
            r.values.emplace_back(static_cast<double>(draw_categorical(f.level_probabilities, rng)));
        } else {
            double v;
            do {
                v = f.mean + f.sd * rng.normal();
            } while (v < f.lower || v > f.upper);
            r.values.emplace_back(v);
        }
    }
    return r;
}

double SyntheticSurvivalModel::scale(const BaselineRecord& x) const {
    double eta = params_.log_scale;
    for (std::size_t i = 0; i < params_.features.size(); ++i) {
        const auto& f = params_.features[i];
        const auto& v = x.values.at(i);
        if (!v) continue;
        if (f.descriptor.kind == FeatureKind::Categorical)
            eta += f.level_coefficients.at(static_cast<std::size_t>(*v));
        else
            eta += f.coefficient * (*v - f.center);
    }
    return std::exp(eta);
}

Outcome SyntheticSurvivalModel::draw_conditional(const BaselineRecord& x, StreamRng& rng) const {
    const double e = -std::log(rng.uniform());
    return {scale(x) * std::pow(e, 1.0 / params_.shape)};
}

double SyntheticSurvivalModel::conditional_density(const BaselineRecord& x, Outcome y) const {
    if (y.days < 0.0) return 0.0;
    const double k = params_.shape;
    const double s = scale(x);
    const double z = y.days / s;
    if (z == 0.0) {
        if (k == 1.0) return 1.0 / s;
        return k > 1.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return (k / s) * std::pow(z, k - 1.0) * std::exp(-std::pow(z, k));
}

double SyntheticSurvivalModel::survival(const BaselineRecord& x, double days) const {
    if (days <= 0.0) return 1.0;
    return std::exp(-std::pow(days / scale(x), params_.shape));
}

// ---------------------------------------------------------------------------

DiscreteKernelModel::DiscreteKernelModel(std::vector<double> group_probabilities, std::vector<DiscreteLaw> laws)
    : group_probabilities_(std::move(group_probabilities)), laws_(std::move(laws)) {
    if (laws_.empty() || laws_.size() != group_probabilities_.size())
        fail(ErrorKind::Schema, "discrete kernel: one law per group required");
    check_probabilities(group_probabilities_, "discrete kernel groups");
    std::vector<std::string> levels;
    for (std::size_t g = 0; g < laws_.size(); ++g) {
        const auto& law = laws_[g];
        if (law.support.size() != law.probabilities.size() || law.support.empty())
            fail(ErrorKind::Schema, "discrete kernel: support and probabilities differ in size");
        check_probabilities(law.probabilities, "discrete kernel law");
        for (double y : law.support)
            if (!std::isfinite(y) || y < 0.0) fail(ErrorKind::Schema, "discrete kernel: support must be finite, >= 0");
        levels.push_back("g" + std::to_string(g));
    }
    schema_ = CovariateSchema({FeatureDescriptor{"group", FeatureKind::Categorical, "", levels, false}});
}

std::size_t DiscreteKernelModel::group_of(const BaselineRecord& x) const {
    const auto& v = x.values.at(0);
    if (!v) fail(ErrorKind::MissingValue, "discrete kernel: group is missing");
    return static_cast<std::size_t>(*v);
}

BaselineRecord DiscreteKernelModel::draw_baseline(StreamRng& rng) const {
    return BaselineRecord{{static_cast<double>(draw_categorical(group_probabilities_, rng))}};
}

Outcome DiscreteKernelModel::draw_conditional(const BaselineRecord& x, StreamRng& rng) const {
    const auto& law = laws_.at(group_of(x));
    return {law.support[draw_categorical(law.probabilities, rng)]};
}

double DiscreteKernelModel::conditional_density(const BaselineRecord& x, Outcome y) const {
    const auto& law = laws_.at(group_of(x));
    double mass = 0.0;
    for (std::size_t k = 0; k < law.support.size(); ++k)
        if (law.support[k] == y.days) mass += law.probabilities[k];
    return mass;
}

// ---------------------------------------------------------------------------

MaskedModel::MaskedModel(std::shared_ptr<const GenerativeModel> inner, Capabilities mask)
    : inner_(std::move(inner)), mask_(mask) {
    require(inner_ != nullptr, "MaskedModel: null inner model");
}

Capabilities MaskedModel::capabilities() const {
    const auto c = inner_->capabilities();
    return {c.sample_baseline && mask_.sample_baseline, c.sample_conditional && mask_.sample_conditional,
            c.eval_conditional_density && mask_.eval_conditional_density};
}

BaselineRecord MaskedModel::draw_baseline(StreamRng& rng) const {
    if (!capabilities().sample_baseline) return GenerativeModel::draw_baseline(rng);
    return inner_->draw_baseline(rng);
}

Outcome MaskedModel::draw_conditional(const BaselineRecord& x, StreamRng& rng) const {
    if (!capabilities().sample_conditional) return GenerativeModel::draw_conditional(x, rng);
    return inner_->draw_conditional(x, rng);
}

double MaskedModel::conditional_density(const BaselineRecord& x, Outcome y) const {
    if (!capabilities().eval_conditional_density) return GenerativeModel::conditional_density(x, y);
    return inner_->conditional_density(x, y);
}

// ---------------------------------------------------------------------------

TiltedKernelModel::TiltedKernelModel(std::shared_ptr<const GenerativeModel> base, std::vector<KernelTiltTerm> tilt)
    : base_(std::move(base)), tilt_(std::move(tilt)) {
    require(base_ != nullptr, "TiltedKernelModel: null base model");
    for (const auto& t : tilt_) {
        if (!(t.scale > 0.0) || !std::isfinite(t.threshold) || !std::isfinite(t.lambda))
            fail(ErrorKind::Schema, "kernel tilt term needs finite threshold/lambda and scale > 0");
        log_bound_ += std::max(0.0, t.lambda);
    }
}

Capabilities TiltedKernelModel::capabilities() const {
    const auto c = base_->capabilities();
    return {c.sample_baseline, c.sample_conditional, false};
}

BaselineRecord TiltedKernelModel::draw_baseline(StreamRng& rng) const { return base_->draw_baseline(rng); }

double TiltedKernelModel::log_tilt(double days) const {
    double s = 0.0;
    for (const auto& t : tilt_) s += t.lambda * sigmoid_surrogate(t.threshold, t.scale, days);
    return s;
}

Outcome TiltedKernelModel::draw_conditional(const BaselineRecord& x, StreamRng& rng) const {
    // each statistic lies in [0, 1], so exp(log_tilt - log_bound) <= 1
    for (int attempt = 0; attempt < 10'000'000; ++attempt) {
        const Outcome y = base_->draw_conditional(x, rng);
        if (std::log(rng.uniform()) < log_tilt(y.days) - log_bound_) return y;
    }
    fail(ErrorKind::NonConvergence, "tilted kernel: rejection sampler made no acceptance");
}

} // namespace tiltcal
