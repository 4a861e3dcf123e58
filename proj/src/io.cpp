#include "tiltcal/io.hpp"

#include "tiltcal/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tiltcal {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_line(const std::string& line, const std::string& where) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cell));
            cell.clear();
        } else if (c != '\r') {
            cell += c;
        }
    }
    if (quoted) fail(ErrorKind::Parse, where + ": unterminated quote");
    out.push_back(std::move(cell));
    return out;
}

std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

double to_double(const std::string& s, const std::string& where) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) fail(ErrorKind::Parse, where + ": '" + s + "' is not a number");
    return v;
}

std::string num(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

std::string row_where(const fs::path& path, std::size_t row) {
    return path.string() + ":" + std::to_string(row + 2);
}

} // namespace

std::size_t CsvTable::column(const std::string& name, const std::string& source) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    fail(ErrorKind::Parse, source + ": missing column '" + name + "'");
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot read '" + path.string() + "'");
    CsvTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r" || line[0] == '#') continue;
        auto cells = split_line(line, path.string() + ":" + std::to_string(lineno));
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size())
            fail(ErrorKind::Parse, path.string() + ":" + std::to_string(lineno) + ": expected " +
                                       std::to_string(t.header.size()) + " cells, found " +
                                       std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
    }
    if (t.header.empty()) fail(ErrorKind::Parse, path.string() + ": empty file");
    return t;
}

void write_csv(const fs::path& path, const CsvTable& table) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    const auto emit = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << quote(cells[i]);
        out << "\n";
    };
    emit(table.header);
    for (const auto& r : table.rows) emit(r);
    if (!out) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

DigitizedCurve read_curve_csv(const fs::path& path) {
    const CsvTable t = read_csv(path);
    const std::size_t ct = t.column("time", path.string()), cs = t.column("survival", path.string());
    DigitizedCurve c;
    c.arm = path.stem().string();
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        c.points.push_back({to_double(t.rows[i][ct], row_where(path, i)), to_double(t.rows[i][cs], row_where(path, i))});
    return c;
}

void write_curve_csv(const fs::path& path, const DigitizedCurve& curve) {
    CsvTable t{{"time", "survival"}, {}};
    for (const auto& p : curve.points) t.rows.push_back({num(p.time), num(p.survival)});
    write_csv(path, t);
}

AtRiskTable read_at_risk_csv(const fs::path& path) {
    const CsvTable t = read_csv(path);
    const std::size_t ct = t.column("time", path.string()), cn = t.column("count", path.string());
    AtRiskTable a;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const double n = to_double(t.rows[i][cn], row_where(path, i));
        if (n < 0 || n != std::floor(n)) fail(ErrorKind::Parse, row_where(path, i) + ": count must be a whole number");
        a.rows.push_back({to_double(t.rows[i][ct], row_where(path, i)), static_cast<long>(n)});
    }
    return a;
}

void write_at_risk_csv(const fs::path& path, const AtRiskTable& table) {
    CsvTable t{{"time", "count"}, {}};
    for (const auto& r : table.rows) t.rows.push_back({num(r.time), std::to_string(r.count)});
    write_csv(path, t);
}

PseudoIPD read_ipd_csv(const fs::path& path) {
    const CsvTable t = read_csv(path);
    const std::size_t ct = t.column("time", path.string()), ce = t.column("event", path.string());
    PseudoIPD ipd;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const double e = to_double(t.rows[i][ce], row_where(path, i));
        if (e != 0.0 && e != 1.0) fail(ErrorKind::Parse, row_where(path, i) + ": event must be 0 or 1");
        ipd.rows.push_back({to_double(t.rows[i][ct], row_where(path, i)), e == 1.0});
    }
    return ipd;
}

void write_ipd_csv(const fs::path& path, const PseudoIPD& ipd) {
    CsvTable t{{"time", "event"}, {}};
    for (const auto& r : ipd.rows) t.rows.push_back({num(r.time), r.event ? "1" : "0"});
    write_csv(path, t);
}

void write_survival_csv(const fs::path& path, const SurvivalCurve& curve) {
    CsvTable t{{"time", "survival", "at_risk", "events"}, {}};
    t.rows.push_back({"0", num(curve.initial), "", ""});
    for (const auto& p : curve.points) t.rows.push_back({num(p.time), num(p.survival), num(p.at_risk), num(p.events)});
    write_csv(path, t);
}

std::vector<std::string> record_cells(const CovariateSchema& schema, const BaselineRecord& x) {
    std::vector<std::string> cells;
    for (std::size_t f = 0; f < schema.size(); ++f) {
        const auto& v = x.values.at(f);
        if (!v)
            cells.emplace_back();
        else if (schema.feature(f).kind == FeatureKind::Categorical)
            cells.push_back(schema.feature(f).levels.at(static_cast<std::size_t>(*v)));
        else
            cells.push_back(num(*v));
    }
    return cells;
}

BaselineRecord record_from_cells(const CovariateSchema& schema, const std::vector<std::string>& cells,
                                 const std::string& where) {
    if (cells.size() != schema.size()) fail(ErrorKind::Schema, where + ": record does not match the schema");
    BaselineRecord x;
    for (std::size_t f = 0; f < schema.size(); ++f) {
        if (cells[f].empty()) {
            x.values.emplace_back();
        } else if (schema.feature(f).kind == FeatureKind::Categorical) {
            x.values.emplace_back(static_cast<double>(schema.level_index(f, cells[f])));
        } else {
            x.values.emplace_back(to_double(cells[f], where));
        }
    }
    validate_record(schema, x);
    return x;
}

// ---------------------------------------------------------------------------

void save_arm(const fs::path& dir, const StoredArm& s) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create '" + dir.string() + "': " + ec.message());
    const CalibratedArm& a = s.arm;
    const auto& e = a.chain.ensemble;

    Json doc;
    doc["name"] = a.name;
    doc["seed"] = s.seed;
    doc["candidates"] = a.candidates;
    doc["particles"] = a.cohort.size();
    doc["chain_depth"] = e.chains.depth();
    doc["schema"] = to_json(s.schema);
    doc["trial"] = to_json(s.spec, s.schema);
    doc["hyperparameters"] = to_json(s.hyper);
    doc["weights"] = to_json(a.weight_report);
    doc["dual"] = to_json(a.dual);
    doc["lambda"] = to_json(a.chain.lambda);
    doc["diagnostics"] = to_json(a.chain.diagnostics);
    write_json_file(dir / "arm.json", doc);

    CsvTable w{{"id", "weight"}, {}};
    for (const auto& f : s.schema.features()) w.header.push_back(f.name);
    for (std::size_t i = 0; i < a.cohort.size(); ++i) {
        std::vector<std::string> row{std::to_string(a.cohort.ids.empty() ? i : a.cohort.ids[i]), num(a.cohort.weights[i])};
        for (auto& c : record_cells(s.schema, a.cohort.records[i])) row.push_back(std::move(c));
        w.rows.push_back(std::move(row));
    }
    write_csv(dir / "weights.csv", w);

    CsvTable c{{"particle", "current"}, {}};
    const std::size_t k = e.chains.filled();
    for (std::size_t j = 0; j < k; ++j) c.header.push_back("s" + std::to_string(j));
    for (std::size_t i = 0; i < e.outcomes.size(); ++i) {
        std::vector<std::string> row{std::to_string(i), num(e.outcomes[i])};
        for (std::size_t j = 0; j < k; ++j) row.push_back(num(e.chains.sample(i, j)));
        c.rows.push_back(std::move(row));
    }
    write_csv(dir / "chains.csv", c);

    CsvTable tr{{"iteration"}, {}};
    for (const auto& spec : a.outcome_targets) tr.header.push_back("lambda[" + spec.label + "]");
    for (const auto& spec : a.outcome_targets) tr.header.push_back("g[" + spec.label + "]");
    for (const auto& p : a.chain.trajectory) {
        std::vector<std::string> row{std::to_string(p.iteration)};
        for (double l : p.lambda) row.push_back(num(l));
        for (double g : p.g_hat) row.push_back(num(g));
        tr.rows.push_back(std::move(row));
    }
    write_csv(dir / "trajectory.csv", tr);

    if (e.chains.full() && e.chains.depth() > 0)
        write_survival_csv(dir / "curve.csv", weighted_km(pooled_outcomes(a.chain, a.cohort.weights)));
}

StoredArm load_arm(const fs::path& dir) {
    for (const char* f : {"arm.json", "weights.csv", "chains.csv"})
        if (!fs::exists(dir / f)) fail(ErrorKind::Io, "run directory '" + dir.string() + "' lacks " + f);
    const Json doc = read_json_file(dir / "arm.json");
    StoredArm s;
    try {
        s.schema = schema_from_json(doc.at("schema"));
        s.spec = trial_from_json(doc.at("trial"), s.schema);
        s.hyper = hyperparameters_from_json(doc.at("hyperparameters"));
        s.seed = doc.at("seed").get<std::uint64_t>();
        s.arm.name = doc.at("name").get<std::string>();
        s.arm.candidates = doc.at("candidates").get<std::size_t>();
        s.arm.weight_report = balance_report_from_json(doc.at("weights"));
        s.arm.dual = dual_state_from_json(doc.at("dual"));
        s.arm.chain.lambda = lambda_state_from_json(doc.at("lambda"));
        s.arm.chain.diagnostics = chain_diagnostics_from_json(doc.at("diagnostics"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, (dir / "arm.json").string() + ": " + e.what());
    }
    s.arm.outcome_targets = s.spec.outcome;

    const fs::path wpath = dir / "weights.csv";
    const CsvTable w = read_csv(wpath);
    const std::size_t cid = w.column("id", wpath.string()), cw = w.column("weight", wpath.string());
    std::vector<std::size_t> cols;
    for (const auto& f : s.schema.features()) cols.push_back(w.column(f.name, wpath.string()));
    for (std::size_t i = 0; i < w.rows.size(); ++i) {
        const std::string where = row_where(wpath, i);
        s.arm.cohort.ids.push_back(static_cast<std::size_t>(to_double(w.rows[i][cid], where)));
        s.arm.cohort.weights.push_back(to_double(w.rows[i][cw], where));
        std::vector<std::string> cells;
        for (auto c : cols) cells.push_back(w.rows[i][c]);
        s.arm.cohort.records.push_back(record_from_cells(s.schema, cells, where));
    }

    const fs::path cpath = dir / "chains.csv";
    const CsvTable c = read_csv(cpath);
    if (c.rows.size() != s.arm.cohort.size())
        fail(ErrorKind::Inconsistency, cpath.string() + ": chain and cohort particle counts differ");
    const std::size_t cc = c.column("current", cpath.string());
    const std::size_t depth = c.header.size() - 2;
    const std::size_t n = c.rows.size();
    std::vector<std::vector<double>> slots(depth, std::vector<double>(n));
    std::vector<std::size_t> slot_col(depth);
    for (std::size_t k = 0; k < depth; ++k) slot_col[k] = c.column("s" + std::to_string(k), cpath.string());
    auto& e = s.arm.chain.ensemble;
    e.outcomes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::string where = row_where(cpath, i);
        e.outcomes[i] = to_double(c.rows[i][cc], where);
        for (std::size_t k = 0; k < depth; ++k) slots[k][i] = to_double(c.rows[i][slot_col[k]], where);
    }
    e.chains = ChainBuffer(n, std::max<std::size_t>(depth, 1));
    for (const auto& slot : slots) e.chains.record(slot);
    e.iteration = s.arm.chain.diagnostics.stop_iteration;
    return s;
}

} // namespace tiltcal
