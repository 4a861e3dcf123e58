#pragma once

#include "tiltcal/balance.hpp"
#include "tiltcal/constraints.hpp"
#include "tiltcal/model.hpp"
#include "tiltcal/pipeline.hpp"
#include "tiltcal/sampler.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace tiltcal {

using Json = nlohmann::ordered_json;

/// Parses JSON text; syntax errors become parse errors naming the source,
/// line and column.
Json parse_json(const std::string& text, const std::string& source);
/// Io errors for unreadable files, parse errors for bad content.
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& doc);

// ---------------------------------------------------------------------------
// Model configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::string type = "synthetic_aft_weibull"; // or "schema_only"
    SyntheticModelParams synthetic;
    std::vector<FeatureDescriptor> features; // schema_only
    std::vector<KernelTiltTerm> tilt;        // optional kernel tilt over the synthetic model

    bool operator==(const ModelConfig&) const = default;
};

ModelConfig model_config_from_json(const Json& doc);
Json to_json(const ModelConfig& config);
std::shared_ptr<const GenerativeModel> build_model(const ModelConfig& config);

Json to_json(const CovariateSchema& schema);
CovariateSchema schema_from_json(const Json& doc);

// ---------------------------------------------------------------------------
// Trial specifications
// ---------------------------------------------------------------------------

/// Feature references are by name and categorical values by level name.
/// `default_epsilon` is the sigmoid scale for landmark and quantile
/// entries that do not set their own.
TrialSpec trial_from_json(const Json& doc, const CovariateSchema& schema, double default_epsilon = 10.0);
Json to_json(const TrialSpec& spec, const CovariateSchema& schema);

CovariateTest test_from_json(const Json& doc, const CovariateSchema& schema, const std::string& path);
Json to_json(const CovariateTest& test, const CovariateSchema& schema);
EligibilitySpec eligibility_from_json(const Json& doc, const CovariateSchema& schema, const std::string& path);
Json to_json(const EligibilitySpec& spec, const CovariateSchema& schema);
/// One entry may expand to several constraints (recoded proportions).
std::vector<ConstraintSpec> constraints_from_json(const Json& doc, const CovariateSchema& schema,
                                                  const std::vector<RecodeMap>& recodes, double default_epsilon,
                                                  const std::string& path);
Json to_json(const ConstraintSpec& spec, const CovariateSchema& schema);

// ---------------------------------------------------------------------------
// Settings
// ---------------------------------------------------------------------------

SamplerHyperparameters hyperparameters_from_json(const Json& doc);
Json to_json(const SamplerHyperparameters& h);
BalanceOptions balance_options_from_json(const Json& doc);
Json to_json(const BalanceOptions& o);
BootstrapSettings bootstrap_settings_from_json(const Json& doc);
Json to_json(const BootstrapSettings& s);
ContrastOptions contrast_options_from_json(const Json& doc);
Json to_json(const ContrastOptions& o);

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// Published-curve inputs for one arm: digitized KM coordinates, the
/// at-risk table and the reported event total; or patient-level rows.
struct DigitizedInputs {
    std::filesystem::path curve;
    std::filesystem::path at_risk;
    long events = 0;
    std::filesystem::path ipd; // used instead of reconstruction when set
};

struct ManifestTrial {
    std::filesystem::path spec_path;
    TrialSpec spec;
    std::optional<DigitizedInputs> digitized;
};

struct RunManifest {
    std::filesystem::path base; // directory of the manifest; relative paths resolve here
    std::filesystem::path model_path;
    ModelConfig model;
    std::vector<ManifestTrial> trials;
    SamplerHyperparameters hyper;
    BalanceOptions balance;
    std::size_t candidates = 20000;
    BootstrapSettings bootstrap;
    ContrastOptions contrast;
    std::string index_trial;      // contrast arm A (target population)
    std::string comparator_trial; // contrast arm B (rebalanced source)
    std::filesystem::path output;
    std::uint64_t seed = 1;
};

/// Reads the manifest and every file it references. Errors name the field.
RunManifest load_manifest(const std::filesystem::path& path);
const ManifestTrial& manifest_trial(const RunManifest& m, const std::string& name);

// ---------------------------------------------------------------------------
// Result documents
// ---------------------------------------------------------------------------

Json to_json(const BalanceReport& r);
BalanceReport balance_report_from_json(const Json& doc);
Json to_json(const DualState& d);
DualState dual_state_from_json(const Json& doc);
Json to_json(const ChainDiagnostics& d);
ChainDiagnostics chain_diagnostics_from_json(const Json& doc);
Json to_json(const LambdaState& l);
LambdaState lambda_state_from_json(const Json& doc);
Json to_json(const ContrastReport& r);
ContrastReport contrast_report_from_json(const Json& doc);

} // namespace tiltcal
