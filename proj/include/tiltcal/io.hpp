#pragma once

#include "tiltcal/config.hpp"
#include "tiltcal/pipeline.hpp"
#include "tiltcal/reconstruct.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace tiltcal {

/// Comma-separated table with a header row. Empty cells are kept as empty
/// strings. Errors name the file and line.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name, const std::string& source) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

/// Columns time,survival.
DigitizedCurve read_curve_csv(const std::filesystem::path& path);
void write_curve_csv(const std::filesystem::path& path, const DigitizedCurve& curve);
/// Columns time,count.
AtRiskTable read_at_risk_csv(const std::filesystem::path& path);
void write_at_risk_csv(const std::filesystem::path& path, const AtRiskTable& table);
/// Columns time,event (event is 0 or 1).
PseudoIPD read_ipd_csv(const std::filesystem::path& path);
void write_ipd_csv(const std::filesystem::path& path, const PseudoIPD& ipd);
/// Columns time,survival,at_risk,events.
void write_survival_csv(const std::filesystem::path& path, const SurvivalCurve& curve);

/// Baseline records as named columns; categorical cells hold level names and
/// missing cells are empty.
std::vector<std::string> record_cells(const CovariateSchema& schema, const BaselineRecord& x);
BaselineRecord record_from_cells(const CovariateSchema& schema, const std::vector<std::string>& cells,
                                 const std::string& where);

/// Everything a later command needs from a calibration run.
struct StoredArm {
    CalibratedArm arm;
    CovariateSchema schema;
    TrialSpec spec;
    SamplerHyperparameters hyper;
    std::uint64_t seed = 0;
};

/// Writes arm.json, weights.csv, chains.csv and curve.csv into `dir`.
void save_arm(const std::filesystem::path& dir, const StoredArm& stored);
/// Reads a run directory back. Missing artefacts are named in the error.
StoredArm load_arm(const std::filesystem::path& dir);

} // namespace tiltcal
