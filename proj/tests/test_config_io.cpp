#include "tiltcal/config.hpp"
#include "tiltcal/error.hpp"
#include "tiltcal/io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace tiltcal;
namespace fs = std::filesystem;

namespace {

const fs::path demo = fs::path(TILTCAL_FIXTURES) / "demo";

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("tiltcal_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorKind::Precondition;
}

void expect_same_diagnostics(const ChainDiagnostics& a, const ChainDiagnostics& b) {
    EXPECT_EQ(a.acceptance_at_stop, b.acceptance_at_stop);
    EXPECT_EQ(a.max_rhat, b.max_rhat);
    ASSERT_EQ(a.rhat.size(), b.rhat.size());
    for (std::size_t j = 0; j < a.rhat.size(); ++j)
        EXPECT_TRUE(a.rhat[j] == b.rhat[j] || (std::isnan(a.rhat[j]) && std::isnan(b.rhat[j])));
    EXPECT_EQ(a.max_landmark_deviation_days, b.max_landmark_deviation_days);
    EXPECT_EQ(a.burn_in, b.burn_in);
    EXPECT_EQ(a.stop_iteration, b.stop_iteration);
    EXPECT_EQ(a.converged, b.converged);
    EXPECT_EQ(a.g_hat, b.g_hat);
}

} // namespace

TEST(Hyperparameters, DefaultsFromEmptyDocument) {
    const auto h = hyperparameters_from_json(Json::object());
    EXPECT_EQ(h.alpha, 1e-3);
    EXPECT_EQ(h.epsilon, 10.0);
    EXPECT_EQ(h.schedule.gamma0, 1.0);
    EXPECT_EQ(h.schedule.decay, 0.6);
    EXPECT_EQ(h.schedule.offset, 1.0);
    EXPECT_EQ(h.partitions, 400u);
    EXPECT_EQ(h.theta, 50.0);
    EXPECT_EQ(h.max_iterations, 1'000'000u);
    EXPECT_FALSE(h.burn_in.has_value());
    EXPECT_EQ(h.thinning, 100u);
    EXPECT_EQ(h.chain_depth, 64u);
    EXPECT_EQ(h, SamplerHyperparameters{});
}

TEST(Hyperparameters, RoundTripAndErrors) {
    SamplerHyperparameters h;
    h.alpha = 0.002;
    h.burn_in = 5000;
    h.reducer = ResidualReducer::Max;
    h.schedule.delta_max = 0.25;
    EXPECT_EQ(hyperparameters_from_json(parse_json(to_json(h).dump(), "mem")), h);
    EXPECT_EQ(kind_of([] { hyperparameters_from_json(parse_json(R"({"alhpa": 1})", "mem")); }), ErrorKind::Parse);
    EXPECT_EQ(kind_of([] { hyperparameters_from_json(parse_json(R"({"alpha": "x"})", "mem")); }), ErrorKind::Parse);
    EXPECT_EQ(kind_of([] { hyperparameters_from_json(parse_json(R"({"alpha": 2})", "mem")); }), ErrorKind::Parse);
    EXPECT_EQ(kind_of([] { hyperparameters_from_json(parse_json(R"({"partitions": -3})", "mem")); }), ErrorKind::Parse);
}

TEST(Json, SyntaxErrorNamesLineAndColumn) {
    try {
        parse_json("{\n  \"a\": 1,\n  oops\n}", "cfg.json");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Parse);
        EXPECT_NE(std::string(e.what()).find("cfg.json:3:"), std::string::npos) << e.what();
    }
    EXPECT_EQ(kind_of([] { read_json_file("/nonexistent/x.json"); }), ErrorKind::Io);
}

TEST(Settings, OtherDocumentsRoundTrip) {
    BalanceOptions b;
    b.max_iterations = 77;
    b.check_feasibility = false;
    const auto b2 = balance_options_from_json(to_json(b));
    EXPECT_EQ(b2.max_iterations, 77);
    EXPECT_FALSE(b2.check_feasibility);
    BootstrapSettings s;
    s.source_replicates = 7;
    s.policy = UndefinedQuantilePolicy::DropReplicate;
    const auto s2 = bootstrap_settings_from_json(to_json(s));
    EXPECT_EQ(s2.source_replicates, 7u);
    EXPECT_EQ(s2.policy, UndefinedQuantilePolicy::DropReplicate);
    ContrastOptions c;
    c.horizons = {180.0};
    c.hazard_ratio = false;
    const auto c2 = contrast_options_from_json(to_json(c));
    EXPECT_EQ(c2.horizons, c.horizons);
    EXPECT_EQ(c2.landmarks, c.landmarks);
    EXPECT_FALSE(c2.hazard_ratio);
}

TEST(Model, DemoModelRoundTrip) {
    const auto cfg = model_config_from_json(read_json_file(demo / "model.json"));
    EXPECT_EQ(cfg.type, "synthetic_aft_weibull");
    EXPECT_EQ(model_config_from_json(to_json(cfg)), cfg);
    const auto model = build_model(cfg);
    EXPECT_EQ(model->schema().size(), 6u);
    EXPECT_EQ(schema_from_json(to_json(model->schema())), model->schema());
}

TEST(Model, SchemaOnlyAndTiltedModels) {
    ModelConfig so;
    so.type = "schema_only";
    so.features = {{"age", FeatureKind::Continuous, "years", {}, false}};
    const auto m = build_model(model_config_from_json(to_json(so)));
    EXPECT_FALSE(m->capabilities().sample_baseline);
    auto cfg = model_config_from_json(read_json_file(demo / "model.json"));
    cfg.tilt = {{365.0, 10.0, 0.4}};
    const auto again = model_config_from_json(to_json(cfg));
    EXPECT_EQ(again, cfg);
    EXPECT_NE(dynamic_cast<const TiltedKernelModel*>(build_model(again).get()), nullptr);
}

TEST(Trial, DemoTrialsParseAndRoundTrip) {
    const auto model = build_model(model_config_from_json(read_json_file(demo / "model.json")));
    const auto& schema = model->schema();
    for (const char* name : {"trial_a.json", "trial_b.json"}) {
        const auto spec = trial_from_json(read_json_file(demo / name), schema);
        EXPECT_NO_THROW(validate_trial(schema, spec));
        EXPECT_FALSE(spec.outcome.empty());
        EXPECT_EQ(trial_from_json(parse_json(to_json(spec, schema).dump(), "mem"), schema), spec) << name;
    }
}

TEST(Trial, FieldErrorsNameThePath) {
    const auto model = build_model(model_config_from_json(read_json_file(demo / "model.json")));
    auto doc = read_json_file(demo / "trial_a.json");
    doc["baseline"][1]["test"]["feature"] = "height";
    try {
        trial_from_json(doc, model->schema());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Schema);
        EXPECT_NE(std::string(e.what()).find("baseline[1]"), std::string::npos) << e.what();
    }
    doc = read_json_file(demo / "trial_a.json");
    doc["outcome"][0]["kind"] = "landmrak";
    EXPECT_EQ(kind_of([&] { trial_from_json(doc, model->schema()); }), ErrorKind::Parse);
    doc = read_json_file(demo / "trial_a.json");
    doc["eligibility"]["include"][0]["value"] = "C";
    EXPECT_EQ(kind_of([&] { trial_from_json(doc, model->schema()); }), ErrorKind::Schema);
}

TEST(Manifest, DemoLoadsAndResolvesPaths) {
    const auto m = load_manifest(demo / "manifest.json");
    ASSERT_EQ(m.trials.size(), 2u);
    EXPECT_EQ(m.index_trial, "trial_a");
    EXPECT_EQ(m.comparator_trial, "trial_b");
    EXPECT_EQ(m.bootstrap.source_replicates * m.bootstrap.target_replicates, 400u);
    EXPECT_TRUE(fs::exists(m.trials[0].digitized->curve));
    EXPECT_EQ(manifest_trial(m, "trial_b").digitized->events, 272);
    EXPECT_THROW(manifest_trial(m, "trial_c"), Error);
}

TEST(Manifest, MissingModelFileIsReported) {
    const auto dir = scratch("manifest");
    write_text(dir / "manifest.json", R"({"model": "absent.json", "trials": []})");
    try {
        load_manifest(dir / "manifest.json");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("absent.json"), std::string::npos) << e.what();
    }
}

TEST(Csv, CurveAtRiskAndIpdRoundTrip) {
    const auto dir = scratch("csv");
    DigitizedCurve c;
    c.points = {{0, 1.0}, {10.5, 0.9}, {20, 0.75}};
    write_curve_csv(dir / "c.csv", c);
    const auto c2 = read_curve_csv(dir / "c.csv");
    ASSERT_EQ(c2.points.size(), 3u);
    EXPECT_EQ(c2.points[1].time, 10.5);
    EXPECT_EQ(c2.points[2].survival, 0.75);
    AtRiskTable t{{{0, 100}, {90, 80}}};
    write_at_risk_csv(dir / "r.csv", t);
    EXPECT_EQ(read_at_risk_csv(dir / "r.csv").rows[1].count, 80);
    PseudoIPD ipd{{{1.0, true}, {2.5, false}}};
    write_ipd_csv(dir / "i.csv", ipd);
    EXPECT_EQ(read_ipd_csv(dir / "i.csv"), ipd);
}

TEST(Csv, ErrorsNameFileAndLine) {
    const auto dir = scratch("csv_bad");
    write_text(dir / "bad.csv", "time,survival\n0,1\n5,abc\n");
    try {
        read_curve_csv(dir / "bad.csv");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Parse);
        EXPECT_NE(std::string(e.what()).find("bad.csv"), std::string::npos);
    }
    write_text(dir / "ragged.csv", "time,survival\n0,1,3\n");
    EXPECT_EQ(kind_of([&] { read_curve_csv(dir / "ragged.csv"); }), ErrorKind::Parse);
    write_text(dir / "nocol.csv", "t,s\n0,1\n");
    EXPECT_EQ(kind_of([&] { read_curve_csv(dir / "nocol.csv"); }), ErrorKind::Parse);
    write_text(dir / "ev.csv", "time,event\n3,2\n");
    EXPECT_EQ(kind_of([&] { read_ipd_csv(dir / "ev.csv"); }), ErrorKind::Parse);
    EXPECT_EQ(kind_of([&] { read_csv(dir / "missing.csv"); }), ErrorKind::Io);
}

TEST(Csv, QuotedCellsSurvive) {
    const auto dir = scratch("csv_quote");
    CsvTable t{{"a", "b"}, {{"x,y", "say \"hi\""}, {"", "2"}}};
    write_csv(dir / "q.csv", t);
    const auto back = read_csv(dir / "q.csv");
    EXPECT_EQ(back.header, t.header);
    EXPECT_EQ(back.rows, t.rows);
}

TEST(Records, CellsRoundTripWithMissing) {
    const auto model = build_model(model_config_from_json(read_json_file(demo / "model.json")));
    const auto& schema = model->schema();
    const auto xs = sample_baseline(*model, 200, 3);
    for (const auto& x : xs) EXPECT_EQ(record_from_cells(schema, record_cells(schema, x), "mem"), x);
    auto cells = record_cells(schema, xs[0]);
    cells[1] = "unknown";
    EXPECT_EQ(kind_of([&] { record_from_cells(schema, cells, "row 1"); }), ErrorKind::Schema);
}

TEST(ResultDocuments, RoundTrip) {
    const auto report = weight_diagnostics({1.0, 2.0, 3.0, 4.0});
    EXPECT_EQ(balance_report_from_json(to_json(report)), report);
    DualState d;
    d.labels = {"a", "b"};
    d.nu = {0.5, -1e-3};
    d.soft = {false, true};
    d.rho = {0.0, 0.1};
    d.target = {1, 2};
    d.achieved = {1, 2.01};
    d.residual = {0, 0.01};
    d.imputed_missing = {0, 4};
    d.iterations = 9;
    const auto d2 = dual_state_from_json(to_json(d));
    EXPECT_EQ(d2.nu, d.nu);
    EXPECT_EQ(d2.soft, d.soft);
    EXPECT_EQ(d2.imputed_missing, d.imputed_missing);
    LambdaState l{{0.1, 0.2}, {false, true}, {0.0, 5.0}, 1234};
    EXPECT_EQ(lambda_state_from_json(to_json(l)), l);
    ChainDiagnostics cd;
    cd.rhat = {1.01, std::nan("")};
    cd.max_rhat = 1.01;
    cd.g_hat = {0.3, 0.6};
    cd.burn_in = 500;
    cd.stop_iteration = 9000;
    cd.converged = true;
    expect_same_diagnostics(chain_diagnostics_from_json(parse_json(to_json(cd).dump(), "mem")), cd);
}

TEST(StoredArm, SaveAndLoad) {
    const auto cfg = model_config_from_json(read_json_file(demo / "model.json"));
    const auto model = build_model(cfg);
    const auto spec = trial_from_json(read_json_file(demo / "trial_a.json"), model->schema());
    CalibrationOptions o;
    o.candidates = 3000;
    o.sampler.alpha = 0.005;
    o.sampler.partitions = 20;
    o.sampler.max_iterations = 2000;
    o.sampler.thinning = 50;
    o.sampler.chain_depth = 4;
    StoredArm stored{calibrate_arm(*model, spec, o, 5), model->schema(), spec, o.sampler, 5};
    const auto dir = scratch("arm");
    save_arm(dir, stored);
    for (const char* f : {"arm.json", "weights.csv", "chains.csv", "curve.csv"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
    const auto back = load_arm(dir);
    EXPECT_EQ(back.schema, stored.schema);
    EXPECT_EQ(back.spec, stored.spec);
    EXPECT_EQ(back.hyper, stored.hyper);
    EXPECT_EQ(back.seed, 5u);
    EXPECT_EQ(back.arm.cohort.records, stored.arm.cohort.records);
    ASSERT_EQ(back.arm.cohort.weights.size(), stored.arm.cohort.weights.size());
    for (std::size_t i = 0; i < back.arm.cohort.weights.size(); ++i)
        EXPECT_DOUBLE_EQ(back.arm.cohort.weights[i], stored.arm.cohort.weights[i]);
    const auto& a = back.arm.chain.ensemble.chains;
    const auto& b = stored.arm.chain.ensemble.chains;
    ASSERT_EQ(a.filled(), b.filled());
    for (std::size_t i = 0; i < a.particles(); i += 13)
        for (std::size_t k = 0; k < a.filled(); ++k) EXPECT_DOUBLE_EQ(a.sample(i, k), b.sample(i, k));
    EXPECT_EQ(back.arm.chain.lambda, stored.arm.chain.lambda);
    expect_same_diagnostics(back.arm.chain.diagnostics, stored.arm.chain.diagnostics);
    fs::remove(dir / "chains.csv");
    try {
        load_arm(dir);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Io);
        EXPECT_NE(std::string(e.what()).find("chains.csv"), std::string::npos);
    }
}
