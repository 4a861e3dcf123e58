#include "tiltcal/cli.hpp"

#include "tiltcal/config.hpp"
#include "tiltcal/io.hpp"
#include "tiltcal/pipeline.hpp"
#include "tiltcal/reconstruct.hpp"
#include "tiltcal/svg.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace tiltcal {

namespace fs = std::filesystem;

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Parse: return exit_code::usage;
    case ErrorKind::Infeasible: return exit_code::infeasible;
    case ErrorKind::Divergence:
    case ErrorKind::NonConvergence: return exit_code::nonconvergence;
    case ErrorKind::Io: return exit_code::io;
    case ErrorKind::Schema: return exit_code::schema;
    default: return exit_code::failure;
    }
}

namespace {

struct Common {
    std::string manifest;
    std::optional<std::uint64_t> seed;
    int workers = 0;
    std::string output;
    bool dry_run = false;
};

std::string fixed(double x, int digits) {
    if (!std::isfinite(x)) return "NA";
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << x;
    return os.str();
}

std::string pct(double x) { return fixed(100.0 * x, 1) + "%"; }

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create '" + dir.string() + "': " + ec.message());
}

void print_table(std::ostream& out, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& r : rows)
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    const auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c == 0)
                out << std::left << std::setw(static_cast<int>(width[c])) << r[c];
            else
                out << "  " << std::right << std::setw(static_cast<int>(width[c])) << r[c];
        }
        out << "\n";
    };
    line(header);
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    out << std::string(total - 2, '-') << "\n";
    for (const auto& r : rows) line(r);
}

std::vector<std::string> weight_row(const std::string& step, const BalanceReport& r) {
    return {step, std::to_string(r.n), fixed(r.ess, 0), fixed(r.ess_over_n, 2), fixed(r.max_over_mean, 2),
            pct(r.top5_share), pct(r.top10_share)};
}

std::vector<std::string> quantile_row(const std::string& step, const BalanceReport& r) {
    return {step, fixed(r.q01, 3), fixed(r.q05, 3), fixed(r.q25, 3), fixed(r.q50, 3),
            fixed(r.q75, 3), fixed(r.q95, 3), fixed(r.q99, 3)};
}

void print_weight_tables(std::ostream& out, const std::vector<std::pair<std::string, BalanceReport>>& steps) {
    std::vector<std::vector<std::string>> a, b;
    for (const auto& [name, r] : steps) {
        a.push_back(weight_row(name, r));
        b.push_back(quantile_row(name, r));
    }
    print_table(out, {"Step", "N", "ESS", "ESS/N", "w_max/w_mean", "top-5%", "top-10%"}, a);
    out << "\n";
    print_table(out, {"Step", "q01", "q05", "q25", "q50", "q75", "q95", "q99"}, b);
}

void print_mh_table(std::ostream& out, const std::vector<std::pair<std::string, ChainDiagnostics>>& arms) {
    std::vector<std::string> header{"Diagnostic"};
    for (const auto& a : arms) header.push_back(a.first);
    std::vector<std::vector<std::string>> rows(9);
    rows[0] = {"Acceptance rate at stop"};
    rows[1] = {"Acceptance rate min/max over run"};
    rows[2] = {"Max R-hat across constraints"};
    rows[3] = {"Min / max lambda at stop"};
    rows[4] = {"Max post-burn soft-violation"};
    rows[5] = {"Max landmark deviation (days)"};
    rows[6] = {"Burn-in T_b"};
    rows[7] = {"Stopping iteration"};
    rows[8] = {"Stopping rule met"};
    for (const auto& [name, d] : arms) {
        rows[0].push_back(fixed(d.acceptance_at_stop, 2));
        rows[1].push_back(fixed(d.acceptance_min, 2) + "/" + fixed(d.acceptance_max, 2));
        rows[2].push_back(fixed(d.max_rhat, 3));
        rows[3].push_back(fixed(d.lambda_min, 2) + " / " + fixed(d.lambda_max, 2));
        rows[4].push_back(fixed(d.max_soft_violation, 4));
        rows[5].push_back(fixed(d.max_landmark_deviation_days, 2));
        rows[6].push_back(std::to_string(d.burn_in));
        rows[7].push_back(std::to_string(d.stop_iteration));
        rows[8].push_back(d.converged ? "yes" : "no");
    }
    print_table(out, header, rows);
}

void print_report(std::ostream& out, const ContrastReport& r) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& row : r.rows) {
        const bool prob = row.quantity.rfind("S(", 0) == 0;
        const bool hr = row.quantity == "HR";
        const int d = prob ? 3 : hr ? 3 : 1;
        rows.push_back({row.quantity, fixed(row.estimate, d),
                        row.ci ? "(" + fixed(row.ci->lower, d) + ", " + fixed(row.ci->upper, d) + ")" : "-"});
    }
    print_table(out, {"Quantity", "Estimate", "95% CI"}, rows);
    if (r.pairs > 0) {
        out << "\nreplicate pairs: " << r.target_replicates - r.excluded_target << " x "
            << r.source_replicates - r.excluded_source << " = " << r.pairs << "\n";
        out << "excluded replicates: " << r.index_label << " " << r.excluded_target << ", " << r.comparator_label << " "
            << r.excluded_source << "\n";
        for (std::size_t h = 0; h < r.fraction_positive.size(); ++h)
            out << "pairs with positive delta RMST (horizon " << h + 1 << "): " << pct(r.fraction_positive[h]) << "\n";
    }
    for (const auto& n : r.notes) out << "note: " << n << "\n";
}

RunManifest manifest_with_overrides(const Common& c) {
    if (c.manifest.empty()) fail(ErrorKind::Parse, "--manifest is required");
    RunManifest m = load_manifest(c.manifest);
    if (c.seed) m.seed = *c.seed;
    if (c.workers > 0) {
        m.hyper.workers = c.workers;
        m.bootstrap.workers = c.workers;
    }
    if (!c.output.empty()) m.output = c.output;
    return m;
}

// ---------------------------------------------------------------------------

int cmd_calibrate(const Common& c, const std::vector<std::string>& only, std::ostream& out) {
    const RunManifest m = manifest_with_overrides(c);
    const auto model = build_model(m.model);
    std::vector<const ManifestTrial*> trials;
    for (const auto& t : m.trials)
        if (only.empty() || std::find(only.begin(), only.end(), t.spec.name) != only.end()) trials.push_back(&t);
    for (const auto& name : only) manifest_trial(m, name);

    if (c.dry_run) {
        out << "manifest " << c.manifest << ": valid\n";
        out << "model: " << m.model.type << " with " << model->schema().size() << " features\n";
        for (const auto* t : trials)
            out << "trial " << t->spec.name << ": " << t->spec.eligibility.inclusions.size() << " inclusion and "
                << t->spec.eligibility.exclusions.size() << " exclusion tests, " << t->spec.baseline.size()
                << " baseline and " << t->spec.outcome.size() << " outcome constraints\n";
        return exit_code::ok;
    }
    const auto caps = model->capabilities();
    if (!caps.sample_baseline || !caps.sample_conditional)
        fail(ErrorKind::UnsupportedCapability,
             "model type '" + m.model.type + "' cannot sample; use --dry-run to validate the specifications");

    bool all_converged = true;
    for (const auto* t : trials) {
        const auto start = std::chrono::steady_clock::now();
        CalibrationOptions opt{m.candidates, m.balance, m.hyper};
        StoredArm stored;
        stored.arm = calibrate_arm(*model, t->spec, opt, m.seed);
        stored.schema = model->schema();
        stored.spec = t->spec;
        stored.hyper = m.hyper;
        stored.seed = m.seed;
        const fs::path dir = m.output / t->spec.name;
        save_arm(dir, stored);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const auto& d = stored.arm.chain.diagnostics;
        out << "trial " << t->spec.name << ": " << stored.arm.cohort.size() << " eligible of " << m.candidates
            << ", ESS/N " << fixed(stored.arm.weight_report.ess_over_n, 2) << ", stop at " << d.stop_iteration
            << ", max landmark deviation " << fixed(d.max_landmark_deviation_days, 2) << " d, " << fixed(secs, 1)
            << " s -> " << dir.string() << "\n";
        if (!d.converged) {
            all_converged = false;
            out << "trial " << t->spec.name << ": stage2 stopping rule not met within " << m.hyper.max_iterations
                << " iterations (chains recorded over the final window)\n";
        }
    }
    return all_converged ? exit_code::ok : exit_code::nonconvergence;
}

struct ContrastInputs {
    StoredArm index;      // target population arm, own weights
    StoredArm comparator; // source arm, rebalanced
    BalanceResult second;
};

ContrastInputs load_contrast(const std::string& source, const std::string& target, const BalanceOptions& balance) {
    if (source.empty() || target.empty()) fail(ErrorKind::Parse, "--source and --target run directories are required");
    ContrastInputs in;
    in.comparator = load_arm(source);
    in.index = load_arm(target);
    if (!(in.comparator.schema == in.index.schema))
        fail(ErrorKind::Schema, "runs '" + source + "' and '" + target + "' use different covariate schemas");
    const EligibilitySpec population = population_eligibility(in.index.schema, in.index.spec);
    in.second = second_pass_eb(in.comparator.arm, in.index.spec.baseline, balance, &population);
    return in;
}

void write_contrast_outputs(const fs::path& dir, const ContrastReport& report, const ContrastInputs& in,
                            std::ostream& out) {
    make_dir(dir);
    write_json_file(dir / "report.json", to_json(report));
    {
        std::ofstream txt(dir / "report.txt");
        print_report(txt, report);
    }
    Json second;
    second["weights"] = to_json(weight_diagnostics(in.second.cohort));
    second["dual"] = to_json(in.second.dual);
    write_json_file(dir / "second_pass.json", second);
    CsvTable w{{"particle", "id", "weight"}, {}};
    for (std::size_t i = 0; i < in.second.cohort.size(); ++i)
        w.rows.push_back({std::to_string(i), std::to_string(in.second.cohort.ids.empty() ? i : in.second.cohort.ids[i]),
                          [&] {
                              std::ostringstream os;
                              os << std::setprecision(17) << in.second.cohort.weights[i];
                              return os.str();
                          }()});
    write_csv(dir / "second_pass_weights.csv", w);

    PlotSpec plot;
    plot.title = report.index_label + " vs " + report.comparator_label + " (rebalanced)";
    plot.curves.push_back({report.index_label, report.point.index_curve, "", false});
    plot.curves.push_back({report.comparator_label + " rebalanced", report.point.comparator_curve, "", false});
    plot.curves.push_back({report.comparator_label + " own population",
                           weighted_km(pooled_outcomes(in.comparator.arm.chain, in.comparator.arm.cohort.weights)), "",
                           true});
    write_svg(dir / "km_overlay.svg", plot);
    print_report(out, report);
    out << "\n";
    print_weight_tables(out, {{"Second pass " + in.comparator.arm.name + " -> " + in.index.arm.name,
                               weight_diagnostics(in.second.cohort)}});
    out << "outputs in " << dir.string() << "\n";
}

int cmd_contrast(const Common& c, const std::string& source, const std::string& target, std::ostream& out) {
    const RunManifest m = manifest_with_overrides(c);
    const ContrastInputs in = load_contrast(source, target, m.balance);
    const ContrastPoint point =
        cross_trial_contrast(in.index.arm, in.index.arm.cohort.weights, in.comparator.arm, in.second.cohort.weights,
                             m.contrast);
    const ContrastReport report = point_report(point, m.contrast, in.index.arm.name, in.comparator.arm.name);
    write_contrast_outputs(c.output.empty() ? m.output / "contrast" : fs::path(c.output), report, in, out);
    return exit_code::ok;
}

PseudoIPD arm_ipd(const RunManifest& m, const std::string& trial, const fs::path& dir, std::ostream& out) {
    const ManifestTrial& t = manifest_trial(m, trial);
    if (!t.digitized) fail(ErrorKind::Parse, "manifest trial '" + trial + "' has no digitized inputs");
    PseudoIPD ipd;
    if (!t.digitized->ipd.empty()) {
        ipd = read_ipd_csv(t.digitized->ipd);
    } else {
        const auto rep = guyot_reconstruct_report(read_curve_csv(t.digitized->curve),
                                                  read_at_risk_csv(t.digitized->at_risk), t.digitized->events);
        ipd = rep.ipd;
        std::size_t reconciled = 0;
        for (bool b : rep.interval_reconciled) reconciled += b ? 1 : 0;
        out << "trial " << trial << ": reconstructed " << ipd.size() << " rows, " << ipd.events() << " events, "
            << reconciled << "/" << rep.interval_reconciled.size() << " intervals reconciled\n";
    }
    write_ipd_csv(dir / ("ipd_" + trial + ".csv"), ipd);
    return ipd;
}

int cmd_bootstrap(const Common& c, const std::string& source, const std::string& target,
                  std::optional<std::size_t> bs, std::optional<std::size_t> bt, std::ostream& out) {
    RunManifest m = manifest_with_overrides(c);
    if (bs) m.bootstrap.source_replicates = *bs;
    if (bt) m.bootstrap.target_replicates = *bt;
    const ContrastInputs in = load_contrast(source, target, m.balance);
    const auto model = build_model(m.model);
    const fs::path dir = c.output.empty() ? m.output / "bootstrap" : fs::path(c.output);
    make_dir(dir);

    BootstrapArm index{&in.index.arm, in.index.arm.cohort.weights, arm_ipd(m, in.index.spec.name, dir, out),
                       in.index.arm.name};
    BootstrapArm comparator{&in.comparator.arm, in.second.cohort.weights,
                            arm_ipd(m, in.comparator.spec.name, dir, out), in.comparator.arm.name};
    std::vector<ReplicateSummary> ra, rb;
    const ContrastReport report =
        bootstrap_fanout(index, comparator, *model, in.comparator.hyper, m.bootstrap, m.contrast, m.seed, &ra, &rb);

    CsvTable reps{{"arm", "replicate", "excluded", "reason", "dropped", "median"}, {}};
    for (double t : m.contrast.landmarks) reps.header.push_back("S(" + fixed(t, 0) + ")");
    for (double h : m.contrast.horizons) reps.header.push_back("RMST(" + fixed(h, 0) + ")");
    const auto add = [&](const std::string& arm, const std::vector<ReplicateSummary>& rs) {
        for (const auto& r : rs) {
            std::string dropped;
            for (const auto& d : r.dropped) dropped += (dropped.empty() ? "" : ";") + d;
            std::vector<std::string> row{arm, std::to_string(r.index), r.excluded ? "1" : "0", r.reason, dropped,
                                         r.summary.median ? fixed(*r.summary.median, 3) : ""};
            for (std::size_t k = 0; k < m.contrast.landmarks.size(); ++k)
                row.push_back(r.excluded ? "" : fixed(r.summary.landmarks[k], 6));
            for (std::size_t k = 0; k < m.contrast.horizons.size(); ++k)
                row.push_back(r.excluded ? "" : fixed(r.summary.rmst[k], 4));
            reps.rows.push_back(std::move(row));
        }
    };
    add(index.label, ra);
    add(comparator.label, rb);
    write_csv(dir / "replicates.csv", reps);
    write_contrast_outputs(dir, report, in, out);
    return exit_code::ok;
}

int cmd_diagnose(const std::vector<std::string>& runs, const std::string& output, bool json, std::ostream& out) {
    if (runs.empty()) fail(ErrorKind::Parse, "diagnose needs at least one --run directory");
    std::vector<std::pair<std::string, BalanceReport>> weights;
    std::vector<std::pair<std::string, ChainDiagnostics>> chains;
    Json doc = Json::array();
    for (const auto& r : runs) {
        const fs::path dir(r);
        if (!fs::exists(dir / "arm.json")) fail(ErrorKind::Io, "run directory '" + r + "' lacks arm.json");
        const Json arm = read_json_file(dir / "arm.json");
        const std::string name = arm.at("name").get<std::string>();
        const BalanceReport w = balance_report_from_json(arm.at("weights"));
        const ChainDiagnostics d = chain_diagnostics_from_json(arm.at("diagnostics"));
        weights.emplace_back("Stage 1 " + name, w);
        chains.emplace_back(name, d);
        Json entry;
        entry["run"] = r;
        entry["name"] = name;
        entry["weights"] = to_json(w);
        entry["diagnostics"] = to_json(d);
        doc.push_back(entry);
    }
    if (json) {
        out << doc.dump(2) << "\n";
    } else {
        print_weight_tables(out, weights);
        out << "\n";
        print_mh_table(out, chains);
    }
    if (!output.empty()) {
        make_dir(output);
        write_json_file(fs::path(output) / "diagnostics.json", doc);
    }
    return exit_code::ok;
}

int cmd_simulate(const Common& c, std::size_t count, const std::string& trial, const PublicationSettings& pub,
                 std::ostream& out) {
    const RunManifest m = manifest_with_overrides(c);
    const auto model = build_model(m.model);
    const fs::path dir = m.output;
    make_dir(dir);
    const CovariateSchema& schema = model->schema();
    if (!trial.empty()) {
        const ManifestTrial& t = manifest_trial(m, trial);
        const PublishedArm arm = simulate_published_arm(*model, t.spec.eligibility, pub, m.seed);
        write_curve_csv(dir / (trial + "_curve.csv"), arm.curve);
        write_at_risk_csv(dir / (trial + "_at_risk.csv"), arm.at_risk);
        write_ipd_csv(dir / (trial + "_ipd.csv"), arm.ipd);
        const SurvivalCurve km = weighted_km(arm.ipd.as_survival_data());
        Json doc;
        doc["trial"] = trial;
        doc["patients"] = arm.ipd.size();
        doc["events"] = arm.events;
        Json lm = Json::array();
        for (double t2 : {183.0, 365.0, 548.0, 731.0, 913.0}) lm.push_back({{"time", t2}, {"survival", curve_landmark(km, t2)}});
        doc["landmarks"] = lm;
        const auto med = curve_quantile(km, 0.5);
        doc["median"] = med ? Json(*med) : Json(nullptr);
        write_json_file(dir / (trial + "_published.json"), doc);
        out << "trial " << trial << ": " << arm.ipd.size() << " patients, " << arm.events << " events -> "
            << dir.string() << "\n";
        return exit_code::ok;
    }
    if (!model->capabilities().sample_baseline || !model->capabilities().sample_conditional)
        fail(ErrorKind::UnsupportedCapability, "model type '" + m.model.type + "' cannot sample");
    const auto xs = sample_baseline(*model, count, stream_key(m.seed, {rng_tag::baseline}));
    CsvTable t{{}, {}};
    for (const auto& f : schema.features()) t.header.push_back(f.name);
    t.header.push_back("days");
    for (std::size_t i = 0; i < xs.size(); ++i) {
        auto row = record_cells(schema, xs[i]);
        const double y = sample_conditional(*model, xs[i], stream_key(m.seed, {rng_tag::conditional, i})).days;
        std::ostringstream os;
        os << std::setprecision(10) << y;
        row.push_back(os.str());
        t.rows.push_back(std::move(row));
    }
    write_csv(dir / "draws.csv", t);
    out << count << " draws -> " << (dir / "draws.csv").string() << "\n";
    return exit_code::ok;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Two-stage calibration of a generative survival model to published trial summaries", "tiltcal"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    Common common;
    const auto add_common = [&](CLI::App* sub, bool manifest_required) {
        auto* opt = sub->add_option("--manifest", common.manifest, "Run manifest (JSON)");
        if (manifest_required) opt->required();
        sub->add_option("--seed", common.seed, "Override the manifest seed");
        sub->add_option("--workers", common.workers, "Cap on worker threads")->check(CLI::NonNegativeNumber);
        sub->add_option("--output", common.output, "Output directory");
        sub->add_flag("--dry-run", common.dry_run, "Parse and validate only");
    };

    std::vector<std::string> only;
    auto* calibrate = app.add_subcommand("calibrate", "Calibrate every trial of a manifest");
    add_common(calibrate, true);
    calibrate->add_option("--trial", only, "Restrict to the named trial(s)");

    std::string source, target;
    auto* contrast = app.add_subcommand("contrast", "Second-pass balancing and cross-trial contrast");
    add_common(contrast, true);
    contrast->add_option("--source", source, "Run directory of the arm to rebalance")->required();
    contrast->add_option("--target", target, "Run directory of the target-population arm")->required();

    std::optional<std::size_t> bs, bt;
    auto* bootstrap = app.add_subcommand("bootstrap", "Pseudo-IPD bootstrap envelope of the contrast");
    add_common(bootstrap, true);
    bootstrap->add_option("--source", source, "Run directory of the arm to rebalance")->required();
    bootstrap->add_option("--target", target, "Run directory of the target-population arm")->required();
    bootstrap->add_option("--source-replicates", bs, "Replicates of the source arm");
    bootstrap->add_option("--target-replicates", bt, "Replicates of the target arm");

    std::vector<std::string> runs;
    bool as_json = false;
    auto* diagnose = app.add_subcommand("diagnose", "Weight and sampler diagnostics of calibration runs");
    add_common(diagnose, false);
    diagnose->add_option("--run", runs, "Run directory (repeatable)")->required();
    diagnose->add_flag("--json", as_json, "Print the machine-readable document");

    std::size_t count = 1000;
    std::string trial;
    PublicationSettings pub;
    auto* simulate = app.add_subcommand("simulate", "Draws from the model, or a simulated published arm");
    add_common(simulate, true);
    simulate->add_option("--count", count, "Number of draws")->check(CLI::PositiveNumber);
    simulate->add_option("--trial", trial, "Simulate the published artefacts of this trial");
    simulate->add_option("--patients", pub.patients, "Patients in the simulated arm")->check(CLI::PositiveNumber);
    simulate->add_option("--censor-max", pub.censor_max, "Censoring ~ Uniform(0, censor-max)");
    simulate->add_option("--at-risk-step", pub.at_risk_step, "Spacing of the at-risk table");

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return exit_code::ok;
        }
        err << "tiltcal: " << e.what() << "\n";
        return exit_code::usage;
    }

    try {
        if (calibrate->parsed()) return cmd_calibrate(common, only, out);
        if (contrast->parsed()) return cmd_contrast(common, source, target, out);
        if (bootstrap->parsed()) return cmd_bootstrap(common, source, target, bs, bt, out);
        if (diagnose->parsed()) return cmd_diagnose(runs, common.output, as_json, out);
        if (simulate->parsed()) return cmd_simulate(common, count, trial, pub, out);
    } catch (const Error& e) {
        err << "tiltcal: " << (e.stage().empty() ? "" : e.stage() + ": ") << to_string(e.kind()) << ": " << e.what()
            << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "tiltcal: " << e.what() << "\n";
        return exit_code::failure;
    }
    return exit_code::usage;
}

} // namespace tiltcal
