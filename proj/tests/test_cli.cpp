#include "tiltcal/cli.hpp"
#include "tiltcal/io.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace tiltcal;
namespace fs = std::filesystem;

namespace {

const fs::path fixtures = TILTCAL_FIXTURES;

struct Outcome {
    int code = -1;
    std::string out, err;
};

Outcome run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    Outcome r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("tiltcal_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

bool contains(const std::string& s, const std::string& what) { return s.find(what) != std::string::npos; }

/// Small, fast copy of the demo manifest in its own directory.
fs::path quick_manifest(const fs::path& dir) {
    for (const char* f : {"model.json", "trial_a.json", "trial_b.json"}) fs::copy_file(fixtures / "demo" / f, dir / f);
    fs::create_directories(dir / "published");
    for (const char* f : {"trial_a_curve.csv", "trial_a_at_risk.csv", "trial_b_curve.csv", "trial_b_at_risk.csv"})
        fs::copy_file(fixtures / "demo" / "published" / f, dir / "published" / f);
    nlohmann::json m = nlohmann::json::parse(std::ifstream(fixtures / "demo" / "manifest.json"));
    m["candidates"] = 6000;
    m["hyperparameters"] = {{"alpha", 0.005}, {"partitions", 40}, {"trace_every", 100}, {"thinning", 50},
                            {"chain_depth", 16}};
    m["bootstrap"] = {{"source_replicates", 1}, {"target_replicates", 1}};
    std::ofstream(dir / "manifest.json") << m.dump(2);
    return dir / "manifest.json";
}

/// Calibrates both demo trials once for the whole suite.
class CalibratedRun : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = fresh_dir("run");
        manifest_ = quick_manifest(dir_);
        const auto r = run({"calibrate", "--manifest", manifest_.string(), "--output", (dir_ / "run").string()});
        code_ = r.code;
        out_ = r.out;
    }
    static inline fs::path dir_, manifest_;
    static inline int code_ = -1;
    static inline std::string out_;
};

} // namespace

TEST(ExitCodes, MapErrorKinds) {
    EXPECT_EQ(exit_code_for(ErrorKind::Parse), exit_code::usage);
    EXPECT_EQ(exit_code_for(ErrorKind::Infeasible), exit_code::infeasible);
    EXPECT_EQ(exit_code_for(ErrorKind::NonConvergence), exit_code::nonconvergence);
    EXPECT_EQ(exit_code_for(ErrorKind::Io), exit_code::io);
    EXPECT_EQ(exit_code_for(ErrorKind::Schema), exit_code::schema);
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run({}).code, exit_code::usage);
    EXPECT_EQ(run({"frobnicate"}).code, exit_code::usage);
    const auto r = run({"calibrate"});
    EXPECT_EQ(r.code, exit_code::usage);
    EXPECT_TRUE(contains(r.err, "--manifest"));
    EXPECT_EQ(run({"--help"}).code, exit_code::ok);
}

TEST(Cli, MissingModelFileIsNamed) {
    const auto dir = fresh_dir("missing_model");
    std::ofstream(dir / "manifest.json") << R"({"model": "nowhere.json", "trials": []})";
    const auto r = run({"calibrate", "--manifest", (dir / "manifest.json").string(), "--dry-run"});
    EXPECT_NE(r.code, exit_code::ok);
    EXPECT_EQ(r.code, exit_code::io);
    EXPECT_TRUE(contains(r.err, "nowhere.json"));
}

TEST(Cli, ParseErrorsReportLocation) {
    const auto dir = fresh_dir("bad_json");
    std::ofstream(dir / "manifest.json") << "{\n  \"model\": \"model.json\",\n  oops\n}";
    const auto r = run({"calibrate", "--manifest", (dir / "manifest.json").string()});
    EXPECT_EQ(r.code, exit_code::usage);
    EXPECT_TRUE(contains(r.err, "3:"));
}

TEST(Cli, TrialFixturesValidateInDryRun) {
    const auto r = run({"calibrate", "--manifest", (fixtures / "mpanc" / "manifest.json").string(), "--dry-run"});
    ASSERT_EQ(r.code, exit_code::ok) << r.err;
    EXPECT_TRUE(contains(r.out, "schema_only"));
    EXPECT_TRUE(contains(r.out, "trial mpact"));
    EXPECT_TRUE(contains(r.out, "trial prodige4"));
    // recoded performance-status shares expand to one constraint per level
    EXPECT_TRUE(contains(r.out, "11 baseline and 6 outcome constraints"));
}

TEST(Cli, SchemaOnlyModelRefusesToCalibrate) {
    const auto dir = fresh_dir("schema_only");
    const auto r = run({"calibrate", "--manifest", (fixtures / "mpanc" / "manifest.json").string(), "--output",
                        (dir / "run").string()});
    EXPECT_EQ(r.code, exit_code_for(ErrorKind::UnsupportedCapability));
    EXPECT_TRUE(contains(r.err, "--dry-run"));
}

TEST(Cli, SimulateWritesPublishedArtefacts) {
    const auto dir = fresh_dir("simulate");
    const auto m = quick_manifest(dir);
    const auto r = run({"simulate", "--manifest", m.string(), "--trial", "trial_a", "--patients", "200", "--output",
                        (dir / "pub").string()});
    ASSERT_EQ(r.code, exit_code::ok) << r.err;
    for (const char* f : {"trial_a_curve.csv", "trial_a_at_risk.csv", "trial_a_ipd.csv", "trial_a_published.json"})
        EXPECT_TRUE(fs::exists(dir / "pub" / f)) << f;
    EXPECT_EQ(read_ipd_csv(dir / "pub" / "trial_a_ipd.csv").size(), 200u);

    const auto d = run({"simulate", "--manifest", m.string(), "--count", "50", "--output", (dir / "draws").string()});
    ASSERT_EQ(d.code, exit_code::ok) << d.err;
    EXPECT_EQ(read_csv(dir / "draws" / "draws.csv").rows.size(), 50u);
}

TEST(Cli, DiagnoseNamesMissingArtefacts) {
    const auto dir = fresh_dir("empty_run");
    const auto r = run({"diagnose", "--run", dir.string()});
    EXPECT_EQ(r.code, exit_code::io);
    EXPECT_TRUE(contains(r.err, "arm.json"));
}

TEST_F(CalibratedRun, CalibrateWritesArtefacts) {
    ASSERT_EQ(code_, exit_code::ok) << out_;
    for (const char* trial : {"trial_a", "trial_b"})
        for (const char* f : {"arm.json", "chains.csv", "weights.csv", "curve.csv", "trajectory.csv"})
            EXPECT_TRUE(fs::exists(dir_ / "run" / trial / f)) << trial << "/" << f;
    EXPECT_TRUE(contains(out_, "max landmark deviation"));
}

TEST_F(CalibratedRun, DiagnoseReportsWeightsAndChains) {
    ASSERT_EQ(code_, exit_code::ok);
    const auto r = run({"diagnose", "--run", (dir_ / "run" / "trial_a").string()});
    ASSERT_EQ(r.code, exit_code::ok) << r.err;
    for (const char* row : {"ESS", "Acceptance rate at stop", "Max R-hat across constraints", "Stopping rule met"})
        EXPECT_TRUE(contains(r.out, row)) << row;
    const auto j = run({"diagnose", "--json", "--run", (dir_ / "run" / "trial_a").string()});
    ASSERT_EQ(j.code, exit_code::ok);
    const auto doc = nlohmann::json::parse(j.out);
    ASSERT_EQ(doc.size(), 1u);
    EXPECT_EQ(doc[0]["name"], "trial_a");
    EXPECT_TRUE(doc[0]["weights"].contains("ess_over_n"));
    EXPECT_TRUE(doc[0]["diagnostics"].contains("max_rhat"));
}

TEST_F(CalibratedRun, SelfContrastHasUnitHazardRatio) {
    ASSERT_EQ(code_, exit_code::ok);
    const auto arm = (dir_ / "run" / "trial_a").string();
    const auto out = dir_ / "self";
    const auto r = run({"contrast", "--manifest", manifest_.string(), "--source", arm, "--target", arm, "--output",
                        out.string()});
    ASSERT_EQ(r.code, exit_code::ok) << r.err;
    const auto doc = nlohmann::json::parse(std::ifstream(out / "report.json"));
    bool saw_hr = false;
    for (const auto& row : doc["rows"]) {
        if (row["quantity"] == "HR") {
            saw_hr = true;
            EXPECT_NEAR(row["estimate"].get<double>(), 1.0, 1e-6);
        }
        if (std::string(row["quantity"]).rfind("Delta RMST", 0) == 0) EXPECT_NEAR(row["estimate"].get<double>(), 0.0, 1e-3);
    }
    EXPECT_TRUE(saw_hr);
    EXPECT_TRUE(fs::exists(out / "km_overlay.svg"));
}

TEST_F(CalibratedRun, ContrastPlotHasOneCurvePerArm) {
    ASSERT_EQ(code_, exit_code::ok);
    const auto out = dir_ / "contrast";
    const auto r = run({"contrast", "--manifest", manifest_.string(), "--source", (dir_ / "run" / "trial_b").string(),
                        "--target", (dir_ / "run" / "trial_a").string(), "--output", out.string()});
    ASSERT_EQ(r.code, exit_code::ok) << r.err;
    std::ifstream svg(out / "km_overlay.svg");
    const std::string text((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
    std::size_t paths = 0;
    for (auto p = text.find("class=\"curve\""); p != std::string::npos; p = text.find("class=\"curve\"", p + 1)) ++paths;
    EXPECT_EQ(paths, 3u);
    EXPECT_TRUE(contains(r.out, "HR"));
}

TEST_F(CalibratedRun, BootstrapOneByOneEchoesPairs) {
    ASSERT_EQ(code_, exit_code::ok);
    const auto out = dir_ / "boot";
    const auto r = run({"bootstrap", "--manifest", manifest_.string(), "--source", (dir_ / "run" / "trial_b").string(),
                        "--target", (dir_ / "run" / "trial_a").string(), "--output", out.string()});
    ASSERT_EQ(r.code, exit_code::ok) << r.err;
    EXPECT_TRUE(contains(r.out, "replicate pairs: 1 x 1 = 1"));
    EXPECT_TRUE(fs::exists(out / "replicates.csv"));
    EXPECT_TRUE(fs::exists(out / "ipd_trial_a.csv"));
}

TEST_F(CalibratedRun, MismatchedSchemasAreRejected) {
    ASSERT_EQ(code_, exit_code::ok);
    const auto other = dir_ / "other";
    fs::remove_all(other);
    fs::copy(dir_ / "run" / "trial_a", other);
    auto arm = nlohmann::json::parse(std::ifstream(other / "arm.json"));
    arm["schema"][0]["name"] = "age_years";
    std::ofstream(other / "arm.json") << arm.dump();
    const auto r = run({"contrast", "--manifest", manifest_.string(), "--source", other.string(), "--target",
                        (dir_ / "run" / "trial_a").string(), "--output", (dir_ / "mismatch").string()});
    EXPECT_EQ(r.code, exit_code::schema) << r.err;
}
