#include "tiltcal/config.hpp"

#include "tiltcal/error.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace tiltcal {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& what) {
    fail(ErrorKind::Parse, "field '" + path + "': " + what);
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string at(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

void expect_object(const Json& j, const std::string& path) {
    if (!j.is_object()) bad(path, "expected an object");
}

void check_keys(const Json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    expect_object(j, path);
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || item.key() == a;
        if (!ok) bad(join(path, item.key()), "unknown field");
    }
}

const Json& req(const Json& j, const char* key, const std::string& path) {
    expect_object(j, path);
    const auto it = j.find(key);
    if (it == j.end()) bad(join(path, key), "missing");
    return *it;
}

double as_number(const Json& v, const std::string& path) {
    if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!v.is_number()) bad(path, "expected a number");
    return v.get<double>();
}

double num(const Json& j, const char* key, const std::string& path) { return as_number(req(j, key, path), join(path, key)); }

double num_or(const Json& j, const char* key, const std::string& path, double fallback) {
    const auto it = j.find(key);
    return it == j.end() ? fallback : as_number(*it, join(path, key));
}

std::uint64_t as_count(const Json& v, const std::string& path) {
    if (!v.is_number_integer() && !(v.is_number() && v.get<double>() == std::floor(v.get<double>())))
        bad(path, "expected a non-negative integer");
    if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
        bad(path, "expected a non-negative integer");
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (d < 0 || d > 1.8e19) bad(path, "expected a non-negative integer");
        return static_cast<std::uint64_t>(d);
    }
    return v.get<std::uint64_t>();
}

std::uint64_t count_or(const Json& j, const char* key, const std::string& path, std::uint64_t fallback) {
    const auto it = j.find(key);
    return it == j.end() ? fallback : as_count(*it, join(path, key));
}

std::string str(const Json& j, const char* key, const std::string& path) {
    const Json& v = req(j, key, path);
    if (!v.is_string()) bad(join(path, key), "expected a string");
    return v.get<std::string>();
}

std::string str_or(const Json& j, const char* key, const std::string& path, const std::string& fallback) {
    const auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_string()) bad(join(path, key), "expected a string");
    return it->get<std::string>();
}

bool bool_or(const Json& j, const char* key, const std::string& path, bool fallback) {
    const auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_boolean()) bad(join(path, key), "expected true or false");
    return it->get<bool>();
}

const Json& arr(const Json& j, const char* key, const std::string& path) {
    const Json& v = req(j, key, path);
    if (!v.is_array()) bad(join(path, key), "expected an array");
    return v;
}

std::vector<double> numbers(const Json& v, const std::string& path) {
    if (!v.is_array()) bad(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], at(path, i)));
    return out;
}

Json number_json(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

Json numbers_json(const std::vector<double>& v) {
    Json a = Json::array();
    for (double x : v) a.push_back(number_json(x));
    return a;
}

std::size_t feature_ref(const Json& j, const char* key, const CovariateSchema& schema, const std::string& path) {
    const std::string name = str(j, key, path);
    const auto idx = schema.find(name);
    if (!idx) fail(ErrorKind::Schema, "field '" + join(path, key) + "': unknown feature '" + name + "'");
    return *idx;
}

double feature_value(const Json& v, std::size_t feature, const CovariateSchema& schema, const std::string& path) {
    const auto& f = schema.feature(feature);
    if (v.is_string()) {
        if (f.kind != FeatureKind::Categorical) bad(path, "feature '" + f.name + "' is continuous; expected a number");
        const std::string level = v.get<std::string>();
        for (std::size_t k = 0; k < f.levels.size(); ++k)
            if (f.levels[k] == level) return static_cast<double>(k);
        fail(ErrorKind::Schema, "field '" + path + "': '" + level + "' is not a level of '" + f.name + "'");
    }
    return as_number(v, path);
}

Json value_json(double value, std::size_t feature, const CovariateSchema& schema) {
    const auto& f = schema.feature(feature);
    if (f.kind == FeatureKind::Categorical && value >= 0 && value == std::floor(value) &&
        static_cast<std::size_t>(value) < f.levels.size())
        return f.levels[static_cast<std::size_t>(value)];
    return number_json(value);
}

// -- enums -------------------------------------------------------------------

const char* op_name(Comparison op) {
    switch (op) {
    case Comparison::Eq: return "eq";
    case Comparison::Ne: return "ne";
    case Comparison::Lt: return "lt";
    case Comparison::Le: return "le";
    case Comparison::Gt: return "gt";
    case Comparison::Ge: return "ge";
    case Comparison::Between: return "between";
    case Comparison::InSet: return "in";
    case Comparison::IsMissing: return "missing";
    case Comparison::NotMissing: return "not_missing";
    }
    return "eq";
}

Comparison op_from(const std::string& s, const std::string& path) {
    for (auto op : {Comparison::Eq, Comparison::Ne, Comparison::Lt, Comparison::Le, Comparison::Gt, Comparison::Ge,
                    Comparison::Between, Comparison::InSet, Comparison::IsMissing, Comparison::NotMissing})
        if (s == op_name(op)) return op;
    bad(path, "unknown comparison '" + s + "'");
}

const char* transform_name(Transform t) {
    switch (t) {
    case Transform::Identity: return "identity";
    case Transform::Square: return "square";
    case Transform::Log: return "log";
    }
    return "identity";
}

Transform transform_from(const std::string& s, const std::string& path) {
    for (auto t : {Transform::Identity, Transform::Square, Transform::Log})
        if (s == transform_name(t)) return t;
    bad(path, "unknown transform '" + s + "'");
}

// -- features ----------------------------------------------------------------

FeatureDescriptor descriptor_from(const Json& j, const std::string& path) {
    FeatureDescriptor d;
    d.name = str(j, "name", path);
    const std::string kind = str(j, "kind", path);
    if (kind == "continuous")
        d.kind = FeatureKind::Continuous;
    else if (kind == "categorical")
        d.kind = FeatureKind::Categorical;
    else
        bad(join(path, "kind"), "expected 'continuous' or 'categorical'");
    d.units = str_or(j, "units", path, "");
    if (d.kind == FeatureKind::Categorical) {
        const Json& lv = arr(j, "levels", path);
        for (std::size_t k = 0; k < lv.size(); ++k) {
            if (!lv[k].is_string()) bad(at(join(path, "levels"), k), "expected a string");
            d.levels.push_back(lv[k].get<std::string>());
        }
    }
    d.nullable = bool_or(j, "nullable", path, false);
    return d;
}

Json descriptor_json(const FeatureDescriptor& d) {
    Json j;
    j["name"] = d.name;
    j["kind"] = d.kind == FeatureKind::Continuous ? "continuous" : "categorical";
    if (d.kind == FeatureKind::Continuous && !d.units.empty()) j["units"] = d.units;
    if (d.kind == FeatureKind::Categorical) j["levels"] = d.levels;
    j["nullable"] = d.nullable;
    return j;
}

CovariateSchema make_schema(std::vector<FeatureDescriptor> features, const std::string& path) {
    try {
        return CovariateSchema(std::move(features));
    } catch (const Error& e) {
        fail(e.kind(), "field '" + path + "': " + e.what());
    }
}

} // namespace

Json parse_json(const std::string& text, const std::string& source) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::ostringstream os;
        os << source << ":" << line << ":" << col << ": invalid JSON";
        fail(ErrorKind::Parse, os.str());
    }
}

Json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot read '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_json(ss.str(), path.string());
}

void write_json_file(const fs::path& path, const Json& doc) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << doc.dump(2) << "\n";
    if (!out) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

Json to_json(const CovariateSchema& schema) {
    Json a = Json::array();
    for (const auto& f : schema.features()) a.push_back(descriptor_json(f));
    return a;
}

CovariateSchema schema_from_json(const Json& doc) {
    if (!doc.is_array()) bad("schema", "expected an array of features");
    std::vector<FeatureDescriptor> fs;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        check_keys(doc[i], at("schema", i), {"name", "kind", "units", "levels", "nullable"});
        fs.push_back(descriptor_from(doc[i], at("schema", i)));
    }
    return make_schema(std::move(fs), "schema");
}

ModelConfig model_config_from_json(const Json& doc) {
    ModelConfig c;
    expect_object(doc, "model");
    c.type = str(doc, "type", "model");
    if (c.type == "schema_only") {
        check_keys(doc, "model", {"type", "features"});
        const Json& fs = arr(doc, "features", "model");
        for (std::size_t i = 0; i < fs.size(); ++i) {
            check_keys(fs[i], at("model.features", i), {"name", "kind", "units", "levels", "nullable"});
            c.features.push_back(descriptor_from(fs[i], at("model.features", i)));
        }
        make_schema(c.features, "model.features");
        return c;
    }
    if (c.type != "synthetic_aft_weibull") bad("model.type", "expected 'synthetic_aft_weibull' or 'schema_only'");
    check_keys(doc, "model", {"type", "shape", "log_scale", "features", "tilt"});
    c.synthetic.shape = num(doc, "shape", "model");
    c.synthetic.log_scale = num(doc, "log_scale", "model");
    const Json& fs = arr(doc, "features", "model");
    for (std::size_t i = 0; i < fs.size(); ++i) {
        const std::string p = at("model.features", i);
        check_keys(fs[i], p,
                   {"name", "kind", "units", "levels", "nullable", "missing_probability", "probabilities",
                    "coefficients", "mean", "sd", "lower", "upper", "coefficient", "center"});
        SyntheticFeature f;
        f.descriptor = descriptor_from(fs[i], p);
        f.missing_probability = num_or(fs[i], "missing_probability", p, 0.0);
        if (f.descriptor.kind == FeatureKind::Categorical) {
            f.level_probabilities = numbers(req(fs[i], "probabilities", p), join(p, "probabilities"));
            const auto it = fs[i].find("coefficients");
            f.level_coefficients = it == fs[i].end() ? std::vector<double>(f.level_probabilities.size(), 0.0)
                                                     : numbers(*it, join(p, "coefficients"));
        } else {
            f.mean = num(fs[i], "mean", p);
            f.sd = num(fs[i], "sd", p);
            const auto lo = fs[i].find("lower");
            const auto hi = fs[i].find("upper");
            if (lo != fs[i].end() && !lo->is_null()) f.lower = as_number(*lo, join(p, "lower"));
            if (hi != fs[i].end() && !hi->is_null()) f.upper = as_number(*hi, join(p, "upper"));
            f.coefficient = num_or(fs[i], "coefficient", p, 0.0);
            f.center = num_or(fs[i], "center", p, 0.0);
        }
        c.synthetic.features.push_back(std::move(f));
    }
    if (const auto it = doc.find("tilt"); it != doc.end()) {
        if (!it->is_array()) bad("model.tilt", "expected an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string p = at("model.tilt", i);
            check_keys((*it)[i], p, {"threshold", "scale", "lambda"});
            c.tilt.push_back({num((*it)[i], "threshold", p), num((*it)[i], "scale", p), num((*it)[i], "lambda", p)});
        }
    }
    return c;
}

Json to_json(const ModelConfig& c) {
    Json j;
    j["type"] = c.type;
    if (c.type == "schema_only") {
        Json fs = Json::array();
        for (const auto& f : c.features) fs.push_back(descriptor_json(f));
        j["features"] = fs;
        return j;
    }
    j["shape"] = c.synthetic.shape;
    j["log_scale"] = c.synthetic.log_scale;
    Json fs = Json::array();
    for (const auto& f : c.synthetic.features) {
        Json fj = descriptor_json(f.descriptor);
        fj["missing_probability"] = f.missing_probability;
        if (f.descriptor.kind == FeatureKind::Categorical) {
            fj["probabilities"] = f.level_probabilities;
            fj["coefficients"] = f.level_coefficients;
        } else {
            fj["mean"] = f.mean;
            fj["sd"] = f.sd;
            fj["lower"] = number_json(f.lower);
            fj["upper"] = number_json(f.upper);
            fj["coefficient"] = f.coefficient;
            fj["center"] = f.center;
        }
        fs.push_back(fj);
    }
    j["features"] = fs;
    if (!c.tilt.empty()) {
        Json t = Json::array();
        for (const auto& k : c.tilt) t.push_back({{"threshold", k.threshold}, {"scale", k.scale}, {"lambda", k.lambda}});
        j["tilt"] = t;
    }
    return j;
}

std::shared_ptr<const GenerativeModel> build_model(const ModelConfig& c) {
    if (c.type == "schema_only") return std::make_shared<SchemaOnlyModel>(CovariateSchema(c.features));
    if (c.type != "synthetic_aft_weibull") fail(ErrorKind::Parse, "unknown model type '" + c.type + "'");
    auto base = std::make_shared<SyntheticSurvivalModel>(c.synthetic);
    if (c.tilt.empty()) return base;
    return std::make_shared<TiltedKernelModel>(base, c.tilt);
}

// ---------------------------------------------------------------------------

CovariateTest test_from_json(const Json& j, const CovariateSchema& schema, const std::string& path) {
    check_keys(j, path, {"feature", "op", "value", "values"});
    CovariateTest t;
    t.feature = feature_ref(j, "feature", schema, path);
    t.op = op_from(str(j, "op", path), join(path, "op"));
    switch (t.op) {
    case Comparison::IsMissing:
    case Comparison::NotMissing:
        break;
    case Comparison::Between: {
        const Json& v = req(j, "value", path);
        if (!v.is_array() || v.size() != 2) bad(join(path, "value"), "expected [lower, upper]");
        t.value = feature_value(v[0], t.feature, schema, at(join(path, "value"), 0));
        t.upper = feature_value(v[1], t.feature, schema, at(join(path, "value"), 1));
        break;
    }
    case Comparison::InSet: {
        const Json& v = arr(j, "values", path);
        for (std::size_t i = 0; i < v.size(); ++i)
            t.set.push_back(feature_value(v[i], t.feature, schema, at(join(path, "values"), i)));
        break;
    }
    default:
        t.value = feature_value(req(j, "value", path), t.feature, schema, join(path, "value"));
    }
    return t;
}

Json to_json(const CovariateTest& t, const CovariateSchema& schema) {
    Json j;
    j["feature"] = schema.feature(t.feature).name;
    j["op"] = op_name(t.op);
    switch (t.op) {
    case Comparison::IsMissing:
    case Comparison::NotMissing:
        break;
    case Comparison::Between:
        j["value"] = Json::array({value_json(t.value, t.feature, schema), value_json(t.upper, t.feature, schema)});
        break;
    case Comparison::InSet: {
        Json v = Json::array();
        for (double x : t.set) v.push_back(value_json(x, t.feature, schema));
        j["values"] = v;
        break;
    }
    default:
        j["value"] = value_json(t.value, t.feature, schema);
    }
    return j;
}

EligibilitySpec eligibility_from_json(const Json& j, const CovariateSchema& schema, const std::string& path) {
    check_keys(j, path, {"include", "exclude"});
    EligibilitySpec e;
    for (const char* key : {"include", "exclude"}) {
        const auto it = j.find(key);
        if (it == j.end()) continue;
        if (!it->is_array()) bad(join(path, key), "expected an array of tests");
        auto& dst = std::string(key) == "include" ? e.inclusions : e.exclusions;
        for (std::size_t i = 0; i < it->size(); ++i) dst.push_back(test_from_json((*it)[i], schema, at(join(path, key), i)));
    }
    return e;
}

Json to_json(const EligibilitySpec& e, const CovariateSchema& schema) {
    Json j;
    Json inc = Json::array(), exc = Json::array();
    for (const auto& t : e.inclusions) inc.push_back(to_json(t, schema));
    for (const auto& t : e.exclusions) exc.push_back(to_json(t, schema));
    j["include"] = inc;
    j["exclude"] = exc;
    return j;
}

namespace {

ConstraintMode mode_from(const Json& j, const std::string& path) {
    const std::string m = str_or(j, "mode", path, "hard");
    if (m == "hard") {
        if (j.contains("rho")) bad(join(path, "rho"), "only soft constraints take a penalty weight");
        return ConstraintMode::hard();
    }
    if (m == "soft") return ConstraintMode::soft_with(num(j, "rho", path));
    bad(join(path, "mode"), "expected 'hard' or 'soft'");
}

std::optional<Subgroup> subgroup_from(const Json& j, const CovariateSchema& schema, const std::string& path) {
    const auto it = j.find("subgroup");
    if (it == j.end()) return std::nullopt;
    if (!it->is_array()) bad(join(path, "subgroup"), "expected an array of tests");
    Subgroup s;
    for (std::size_t i = 0; i < it->size(); ++i)
        s.tests.push_back(test_from_json((*it)[i], schema, at(join(path, "subgroup"), i)));
    return s;
}

std::string fmt(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
}

} // namespace

std::vector<ConstraintSpec> constraints_from_json(const Json& j, const CovariateSchema& schema,
                                                  const std::vector<RecodeMap>& recodes, double eps,
                                                  const std::string& path) {
    expect_object(j, path);
    const std::string kind = str(j, "kind", path);
    ConstraintSpec c;
    const auto finish = [&](std::string fallback_label) {
        c.label = str_or(j, "label", path, std::move(fallback_label));
        c.mode = mode_from(j, path);
        return std::vector<ConstraintSpec>{c};
    };
    if (kind == "mean") {
        check_keys(j, path, {"kind", "label", "feature", "transform", "target", "mode", "rho"});
        Moment m{feature_ref(j, "feature", schema, path),
                 transform_from(str_or(j, "transform", path, "identity"), join(path, "transform"))};
        c.statistic.stat = m;
        c.target = num(j, "target", path);
        return finish("mean " + schema.feature(m.feature).name);
    }
    if (kind == "proportion") {
        check_keys(j, path, {"kind", "label", "test", "target", "mode", "rho"});
        Indicator ind{test_from_json(req(j, "test", path), schema, join(path, "test"))};
        c.statistic.stat = ind;
        c.target = num(j, "target", path);
        return finish(describe(schema, ind.test));
    }
    if (kind == "cdf") {
        check_keys(j, path, {"kind", "label", "feature", "at", "target", "mode", "rho"});
        CovariateTest t;
        t.feature = feature_ref(j, "feature", schema, path);
        t.op = Comparison::Le;
        t.value = feature_value(req(j, "at", path), t.feature, schema, join(path, "at"));
        c.statistic.stat = Indicator{t};
        c.target = num(j, "target", path);
        return finish("F(" + schema.feature(t.feature).name + " <= " + fmt(t.value) + ")");
    }
    if (kind == "median") {
        // continuous: P(x <= m) = 1/2; categorical: mid-distribution CDF at the level equals 1/2
        check_keys(j, path, {"kind", "label", "feature", "value", "scale", "mode", "rho"});
        const std::size_t f = feature_ref(j, "feature", schema, path);
        const double v = feature_value(req(j, "value", path), f, schema, join(path, "value"));
        if (schema.feature(f).kind == FeatureKind::Continuous) {
            c.statistic.stat = Indicator{CovariateTest{f, Comparison::Le, v, 0.0, {}}};
        } else {
            c.statistic.stat = BaselineSigmoid{f, v, num_or(j, "scale", path, 0.01)};
        }
        c.target = 0.5;
        return finish("median " + schema.feature(f).name);
    }
    if (kind == "any_missing") {
        check_keys(j, path, {"kind", "label", "features", "target", "mode", "rho"});
        AnyMissing am;
        if (const auto it = j.find("features"); it != j.end()) {
            if (!it->is_array()) bad(join(path, "features"), "expected an array of feature names");
            for (std::size_t i = 0; i < it->size(); ++i) {
                const std::string p = at(join(path, "features"), i);
                if (!(*it)[i].is_string()) bad(p, "expected a feature name");
                const auto idx = schema.find((*it)[i].get<std::string>());
                if (!idx) fail(ErrorKind::Schema, "field '" + p + "': unknown feature");
                am.features.push_back(*idx);
            }
        }
        c.statistic.stat = am;
        c.target = num_or(j, "target", path, 0.0);
        return finish("any missing");
    }
    if (kind == "baseline_sigmoid") {
        check_keys(j, path, {"kind", "label", "feature", "threshold", "scale", "target", "mode", "rho"});
        BaselineSigmoid s;
        s.feature = feature_ref(j, "feature", schema, path);
        s.threshold = feature_value(req(j, "threshold", path), s.feature, schema, join(path, "threshold"));
        s.scale = num(j, "scale", path);
        c.statistic.stat = s;
        c.target = num(j, "target", path);
        return finish("sigmoid " + schema.feature(s.feature).name);
    }
    if (kind == "landmark") {
        check_keys(j, path, {"kind", "label", "time", "survival", "epsilon", "subgroup", "mode", "rho"});
        const double t = num(j, "time", path), s = num(j, "survival", path);
        c = landmark_to_quantile(t, s, num_or(j, "epsilon", path, eps));
        c.statistic.subgroup = subgroup_from(j, schema, path);
        return finish(c.label);
    }
    if (kind == "outcome_quantile") {
        check_keys(j, path, {"kind", "label", "probability", "time", "epsilon", "subgroup", "mode", "rho"});
        c = quantile_constraint(num(j, "probability", path), num(j, "time", path), num_or(j, "epsilon", path, eps));
        c.statistic.subgroup = subgroup_from(j, schema, path);
        return finish(c.label);
    }
    if (kind == "outcome_indicator") {
        check_keys(j, path, {"kind", "label", "threshold", "target", "subgroup", "mode", "rho"});
        c.statistic.stat = OutcomeIndicator{num(j, "threshold", path)};
        c.statistic.subgroup = subgroup_from(j, schema, path);
        c.target = num(j, "target", path);
        return finish("P(Y <= " + fmt(num(j, "threshold", path)) + ")");
    }
    if (kind == "sigmoid_quantile") {
        check_keys(j, path, {"kind", "label", "threshold", "scale", "anchor", "target", "subgroup", "mode", "rho"});
        SigmoidQuantile q;
        q.threshold = num(j, "threshold", path);
        q.scale = num_or(j, "scale", path, eps);
        const std::string anchor = str_or(j, "anchor", path, "time");
        if (anchor == "time")
            q.anchor = QuantileAnchor::Time;
        else if (anchor == "probability")
            q.anchor = QuantileAnchor::Probability;
        else
            bad(join(path, "anchor"), "expected 'time' or 'probability'");
        c.statistic.stat = q;
        c.statistic.subgroup = subgroup_from(j, schema, path);
        c.target = num(j, "target", path);
        return finish("sigmoid(Y <= " + fmt(q.threshold) + ")");
    }
    if (kind == "recoded_proportions") {
        check_keys(j, path, {"kind", "recode", "reported", "mode", "rho"});
        const std::string name = str(j, "recode", path);
        const RecodeMap* map = nullptr;
        for (const auto& r : recodes)
            if (r.name == name) map = &r;
        if (!map) fail(ErrorKind::Schema, "field '" + join(path, "recode") + "': unknown recode '" + name + "'");
        const Json& rep = arr(j, "reported", path);
        std::vector<ReportedProportion> reported;
        for (std::size_t i = 0; i < rep.size(); ++i) {
            const std::string p = at(join(path, "reported"), i);
            check_keys(rep[i], p, {"range", "proportion"});
            const auto range = numbers(req(rep[i], "range", p), join(p, "range"));
            if (range.size() != 2) bad(join(p, "range"), "expected [lower, upper]");
            reported.push_back({range[0], range[1], num(rep[i], "proportion", p)});
        }
        const auto dst = schema.find(map->target);
        if (!dst) fail(ErrorKind::Schema, "field '" + path + "': recode target '" + map->target + "' not in schema");
        std::vector<ConstraintSpec> out;
        for (const auto& [level, share] : recode_proportions(*map, reported)) {
            ConstraintSpec k;
            k.statistic.stat =
                Indicator{CovariateTest{*dst, Comparison::Eq, static_cast<double>(schema.level_index(*dst, level)), 0.0, {}}};
            k.target = share;
            k.label = map->target + " = " + level;
            k.mode = mode_from(j, path);
            out.push_back(std::move(k));
        }
        return out;
    }
    bad(join(path, "kind"), "unknown constraint kind '" + kind + "'");
}

Json to_json(const ConstraintSpec& c, const CovariateSchema& schema) {
    Json j;
    j["label"] = c.label;
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Moment>) {
                j["kind"] = "mean";
                j["feature"] = schema.feature(s.feature).name;
                j["transform"] = transform_name(s.transform);
            } else if constexpr (std::is_same_v<T, Indicator>) {
                j["kind"] = "proportion";
                j["test"] = to_json(s.test, schema);
            } else if constexpr (std::is_same_v<T, AnyMissing>) {
                j["kind"] = "any_missing";
                Json fs = Json::array();
                for (auto f : s.features) fs.push_back(schema.feature(f).name);
                j["features"] = fs;
            } else if constexpr (std::is_same_v<T, BaselineSigmoid>) {
                j["kind"] = "baseline_sigmoid";
                j["feature"] = schema.feature(s.feature).name;
                j["threshold"] = s.threshold;
                j["scale"] = s.scale;
            } else if constexpr (std::is_same_v<T, OutcomeIndicator>) {
                j["kind"] = "outcome_indicator";
                j["threshold"] = s.threshold;
            } else {
                j["kind"] = "sigmoid_quantile";
                j["threshold"] = s.threshold;
                j["scale"] = s.scale;
                j["anchor"] = s.anchor == QuantileAnchor::Time ? "time" : "probability";
            }
        },
        c.statistic.stat);
    j["target"] = c.target;
    if (c.statistic.subgroup) {
        Json sg = Json::array();
        for (const auto& t : c.statistic.subgroup->tests) sg.push_back(to_json(t, schema));
        j["subgroup"] = sg;
    }
    j["mode"] = c.mode.soft ? "soft" : "hard";
    if (c.mode.soft) j["rho"] = c.mode.rho;
    return j;
}

TrialSpec trial_from_json(const Json& doc, const CovariateSchema& schema, double eps) {
    check_keys(doc, "trial", {"name", "arm", "treatment_features", "recodes", "eligibility", "baseline", "outcome"});
    TrialSpec t;
    t.name = str(doc, "name", "trial");
    t.arm = str_or(doc, "arm", "trial", "");
    if (const auto it = doc.find("treatment_features"); it != doc.end()) {
        if (!it->is_array()) bad("trial.treatment_features", "expected an array of names");
        for (std::size_t i = 0; i < it->size(); ++i) {
            if (!(*it)[i].is_string()) bad(at("trial.treatment_features", i), "expected a string");
            t.treatment_features.push_back((*it)[i].get<std::string>());
        }
    }
    if (const auto it = doc.find("recodes"); it != doc.end()) {
        if (!it->is_array()) bad("trial.recodes", "expected an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string p = at("trial.recodes", i);
            const Json& r = (*it)[i];
            check_keys(r, p, {"name", "source", "target", "rules"});
            RecodeMap m{str(r, "name", p), str(r, "source", p), str(r, "target", p), {}};
            const Json& rules = arr(r, "rules", p);
            for (std::size_t k = 0; k < rules.size(); ++k) {
                const std::string rp = at(join(p, "rules"), k);
                check_keys(rules[k], rp, {"range", "level"});
                const auto range = numbers(req(rules[k], "range", rp), join(rp, "range"));
                if (range.size() != 2) bad(join(rp, "range"), "expected [lower, upper]");
                m.rules.push_back({range[0], range[1], str(rules[k], "level", rp)});
            }
            t.recodes.push_back(std::move(m));
        }
    }
    if (const auto it = doc.find("eligibility"); it != doc.end())
        t.eligibility = eligibility_from_json(*it, schema, "trial.eligibility");
    for (const char* key : {"baseline", "outcome"}) {
        const auto it = doc.find(key);
        if (it == doc.end()) continue;
        if (!it->is_array()) bad(join("trial", key), "expected an array of constraints");
        auto& dst = std::string(key) == "baseline" ? t.baseline : t.outcome;
        for (std::size_t i = 0; i < it->size(); ++i)
            for (auto& c : constraints_from_json((*it)[i], schema, t.recodes, eps, at(join("trial", key), i)))
                dst.push_back(std::move(c));
    }
    try {
        validate_trial(schema, t);
    } catch (const Error& e) {
        fail(e.kind(), "trial '" + t.name + "': " + e.what());
    }
    return t;
}

Json to_json(const TrialSpec& t, const CovariateSchema& schema) {
    Json j;
    j["name"] = t.name;
    j["arm"] = t.arm;
    j["treatment_features"] = t.treatment_features;
    Json recodes = Json::array();
    for (const auto& m : t.recodes) {
        Json rules = Json::array();
        for (const auto& r : m.rules) rules.push_back({{"range", {r.lower, r.upper}}, {"level", r.level}});
        recodes.push_back({{"name", m.name}, {"source", m.source}, {"target", m.target}, {"rules", rules}});
    }
    j["recodes"] = recodes;
    j["eligibility"] = to_json(t.eligibility, schema);
    Json b = Json::array(), o = Json::array();
    for (const auto& c : t.baseline) b.push_back(to_json(c, schema));
    for (const auto& c : t.outcome) o.push_back(to_json(c, schema));
    j["baseline"] = b;
    j["outcome"] = o;
    return j;
}

// ---------------------------------------------------------------------------

SamplerHyperparameters hyperparameters_from_json(const Json& j) {
    const std::string p = "hyperparameters";
    check_keys(j, p,
               {"alpha", "epsilon", "gamma0", "decay", "offset", "delta_max", "partitions", "theta", "max_iterations",
                "burn_in", "min_burn_in", "thinning", "chain_depth", "rhat_threshold", "soft_tolerance",
                "check_every", "trace_every", "diagnostic_window", "acceptance_window", "recompute_every", "reducer",
                "workers"});
    SamplerHyperparameters h;
    h.alpha = num_or(j, "alpha", p, h.alpha);
    h.epsilon = num_or(j, "epsilon", p, h.epsilon);
    h.schedule.gamma0 = num_or(j, "gamma0", p, h.schedule.gamma0);
    h.schedule.decay = num_or(j, "decay", p, h.schedule.decay);
    h.schedule.offset = num_or(j, "offset", p, h.schedule.offset);
    h.schedule.delta_max = num_or(j, "delta_max", p, h.schedule.delta_max);
    h.partitions = count_or(j, "partitions", p, h.partitions);
    h.theta = num_or(j, "theta", p, h.theta);
    h.max_iterations = count_or(j, "max_iterations", p, h.max_iterations);
    if (const auto it = j.find("burn_in"); it != j.end() && !it->is_null()) h.burn_in = as_count(*it, join(p, "burn_in"));
    h.min_burn_in = count_or(j, "min_burn_in", p, h.min_burn_in);
    h.thinning = count_or(j, "thinning", p, h.thinning);
    h.chain_depth = count_or(j, "chain_depth", p, h.chain_depth);
    h.rhat_threshold = num_or(j, "rhat_threshold", p, h.rhat_threshold);
    h.soft_tolerance = num_or(j, "soft_tolerance", p, h.soft_tolerance);
    h.check_every = count_or(j, "check_every", p, h.check_every);
    h.trace_every = count_or(j, "trace_every", p, h.trace_every);
    h.diagnostic_window = count_or(j, "diagnostic_window", p, h.diagnostic_window);
    h.acceptance_window = count_or(j, "acceptance_window", p, h.acceptance_window);
    h.recompute_every = count_or(j, "recompute_every", p, h.recompute_every);
    const std::string red = str_or(j, "reducer", p, "sum");
    if (red == "sum")
        h.reducer = ResidualReducer::Sum;
    else if (red == "max")
        h.reducer = ResidualReducer::Max;
    else
        bad(join(p, "reducer"), "expected 'sum' or 'max'");
    h.workers = static_cast<int>(count_or(j, "workers", p, static_cast<std::uint64_t>(h.workers)));
    try {
        validate_hyperparameters(h);
    } catch (const Error& e) {
        fail(ErrorKind::Parse, "hyperparameters: " + std::string(e.what()));
    }
    return h;
}

Json to_json(const SamplerHyperparameters& h) {
    Json j;
    j["alpha"] = h.alpha;
    j["epsilon"] = h.epsilon;
    j["gamma0"] = h.schedule.gamma0;
    j["decay"] = h.schedule.decay;
    j["offset"] = h.schedule.offset;
    j["delta_max"] = h.schedule.delta_max;
    j["partitions"] = h.partitions;
    j["theta"] = h.theta;
    j["max_iterations"] = h.max_iterations;
    j["burn_in"] = h.burn_in ? Json(*h.burn_in) : Json(nullptr);
    j["min_burn_in"] = h.min_burn_in;
    j["thinning"] = h.thinning;
    j["chain_depth"] = h.chain_depth;
    j["rhat_threshold"] = h.rhat_threshold;
    j["soft_tolerance"] = h.soft_tolerance;
    j["check_every"] = h.check_every;
    j["trace_every"] = h.trace_every;
    j["diagnostic_window"] = h.diagnostic_window;
    j["acceptance_window"] = h.acceptance_window;
    j["recompute_every"] = h.recompute_every;
    j["reducer"] = h.reducer == ResidualReducer::Sum ? "sum" : "max";
    j["workers"] = h.workers;
    return j;
}

BalanceOptions balance_options_from_json(const Json& j) {
    const std::string p = "balance";
    check_keys(j, p, {"max_iterations", "gradient_tolerance", "multiplier_cap", "condition_limit", "check_feasibility"});
    BalanceOptions o;
    o.max_iterations = static_cast<int>(count_or(j, "max_iterations", p, static_cast<std::uint64_t>(o.max_iterations)));
    o.gradient_tolerance = num_or(j, "gradient_tolerance", p, o.gradient_tolerance);
    o.multiplier_cap = num_or(j, "multiplier_cap", p, o.multiplier_cap);
    o.condition_limit = num_or(j, "condition_limit", p, o.condition_limit);
    o.check_feasibility = bool_or(j, "check_feasibility", p, o.check_feasibility);
    return o;
}

Json to_json(const BalanceOptions& o) {
    return {{"max_iterations", o.max_iterations},
            {"gradient_tolerance", o.gradient_tolerance},
            {"multiplier_cap", o.multiplier_cap},
            {"condition_limit", o.condition_limit},
            {"check_feasibility", o.check_feasibility}};
}

BootstrapSettings bootstrap_settings_from_json(const Json& j) {
    const std::string p = "bootstrap";
    check_keys(j, p, {"source_replicates", "target_replicates", "policy", "lower_quantile", "upper_quantile", "workers"});
    BootstrapSettings s;
    s.source_replicates = count_or(j, "source_replicates", p, s.source_replicates);
    s.target_replicates = count_or(j, "target_replicates", p, s.target_replicates);
    const std::string pol = str_or(j, "policy", p, "drop_constraint");
    if (pol == "drop_constraint")
        s.policy = UndefinedQuantilePolicy::DropConstraint;
    else if (pol == "drop_replicate")
        s.policy = UndefinedQuantilePolicy::DropReplicate;
    else
        bad(join(p, "policy"), "expected 'drop_constraint' or 'drop_replicate'");
    s.lower_quantile = num_or(j, "lower_quantile", p, s.lower_quantile);
    s.upper_quantile = num_or(j, "upper_quantile", p, s.upper_quantile);
    s.workers = static_cast<int>(count_or(j, "workers", p, static_cast<std::uint64_t>(s.workers)));
    if (s.source_replicates < 1 || s.target_replicates < 1) bad(p, "replicate counts must be at least 1");
    if (!(s.lower_quantile >= 0.0 && s.lower_quantile < s.upper_quantile && s.upper_quantile <= 1.0))
        bad(p, "envelope quantiles must satisfy 0 <= lower < upper <= 1");
    return s;
}

Json to_json(const BootstrapSettings& s) {
    return {{"source_replicates", s.source_replicates},
            {"target_replicates", s.target_replicates},
            {"policy", s.policy == UndefinedQuantilePolicy::DropConstraint ? "drop_constraint" : "drop_replicate"},
            {"lower_quantile", s.lower_quantile},
            {"upper_quantile", s.upper_quantile},
            {"workers", s.workers}};
}

ContrastOptions contrast_options_from_json(const Json& j) {
    const std::string p = "contrast";
    check_keys(j, p, {"landmarks", "horizons", "hazard_ratio"});
    ContrastOptions o;
    if (const auto it = j.find("landmarks"); it != j.end()) o.landmarks = numbers(*it, join(p, "landmarks"));
    if (const auto it = j.find("horizons"); it != j.end()) o.horizons = numbers(*it, join(p, "horizons"));
    o.hazard_ratio = bool_or(j, "hazard_ratio", p, o.hazard_ratio);
    for (double h : o.horizons)
        if (!(h > 0.0)) bad(join(p, "horizons"), "horizons must be positive");
    return o;
}

Json to_json(const ContrastOptions& o) {
    return {{"landmarks", o.landmarks}, {"horizons", o.horizons}, {"hazard_ratio", o.hazard_ratio}};
}

// ---------------------------------------------------------------------------

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

fs::path existing(const fs::path& base, const Json& j, const char* key, const std::string& path) {
    const fs::path p = resolve(base, str(j, key, path));
    if (!fs::exists(p)) fail(ErrorKind::Io, "field '" + join(path, key) + "': file '" + p.string() + "' not found");
    return p;
}

} // namespace

RunManifest load_manifest(const fs::path& path) {
    const Json doc = read_json_file(path);
    const std::string p = "manifest";
    check_keys(doc, p,
               {"model", "seed", "candidates", "hyperparameters", "balance", "trials", "contrast", "bootstrap",
                "output"});
    RunManifest m;
    m.base = fs::absolute(path).parent_path();
    m.model_path = existing(m.base, doc, "model", p);
    m.model = model_config_from_json(read_json_file(m.model_path));
    const CovariateSchema schema = build_model(m.model)->schema();
    m.seed = count_or(doc, "seed", p, m.seed);
    m.candidates = count_or(doc, "candidates", p, m.candidates);
    if (m.candidates == 0) bad(join(p, "candidates"), "must be positive");
    if (const auto it = doc.find("hyperparameters"); it != doc.end()) {
        if (it->is_string())
            m.hyper = hyperparameters_from_json(read_json_file(existing(m.base, doc, "hyperparameters", p)));
        else
            m.hyper = hyperparameters_from_json(*it);
    }
    if (const auto it = doc.find("balance"); it != doc.end()) m.balance = balance_options_from_json(*it);
    if (const auto it = doc.find("bootstrap"); it != doc.end()) m.bootstrap = bootstrap_settings_from_json(*it);
    if (const auto it = doc.find("contrast"); it != doc.end()) {
        Json c = *it;
        expect_object(c, join(p, "contrast"));
        if (c.contains("index")) {
            m.index_trial = str(c, "index", join(p, "contrast"));
            c.erase("index");
        }
        if (c.contains("comparator")) {
            m.comparator_trial = str(c, "comparator", join(p, "contrast"));
            c.erase("comparator");
        }
        m.contrast = contrast_options_from_json(c);
    }
    const Json& trials = arr(doc, "trials", p);
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const std::string tp = at(join(p, "trials"), i);
        check_keys(trials[i], tp, {"spec", "digitized"});
        ManifestTrial t;
        t.spec_path = existing(m.base, trials[i], "spec", tp);
        t.spec = trial_from_json(read_json_file(t.spec_path), schema, m.hyper.epsilon);
        if (const auto it = trials[i].find("digitized"); it != trials[i].end()) {
            const std::string dp = join(tp, "digitized");
            check_keys(*it, dp, {"curve", "at_risk", "events", "ipd"});
            DigitizedInputs d;
            if (it->contains("ipd")) {
                d.ipd = existing(m.base, *it, "ipd", dp);
            } else {
                d.curve = existing(m.base, *it, "curve", dp);
                d.at_risk = existing(m.base, *it, "at_risk", dp);
                d.events = static_cast<long>(as_count(req(*it, "events", dp), join(dp, "events")));
            }
            t.digitized = d;
        }
        for (const auto& other : m.trials)
            if (other.spec.name == t.spec.name) bad(tp, "duplicate trial name '" + t.spec.name + "'");
        m.trials.push_back(std::move(t));
    }
    for (const auto* name : {&m.index_trial, &m.comparator_trial})
        if (!name->empty()) manifest_trial(m, *name);
    m.output = resolve(m.base, str_or(doc, "output", p, "run"));
    return m;
}

const ManifestTrial& manifest_trial(const RunManifest& m, const std::string& name) {
    for (const auto& t : m.trials)
        if (t.spec.name == name) return t;
    fail(ErrorKind::Parse, "manifest has no trial named '" + name + "'");
}

// ---------------------------------------------------------------------------

Json to_json(const BalanceReport& r) {
    return {{"n", r.n},           {"ess", r.ess},       {"ess_over_n", r.ess_over_n}, {"max_over_mean", r.max_over_mean},
            {"top5_share", r.top5_share}, {"top10_share", r.top10_share}, {"q01", r.q01}, {"q05", r.q05},
            {"q25", r.q25},       {"q50", r.q50},       {"q75", r.q75},               {"q95", r.q95},
            {"q99", r.q99}};
}

BalanceReport balance_report_from_json(const Json& j) {
    const std::string p = "weights";
    BalanceReport r;
    r.n = as_count(req(j, "n", p), join(p, "n"));
    r.ess = num(j, "ess", p);
    r.ess_over_n = num(j, "ess_over_n", p);
    r.max_over_mean = num(j, "max_over_mean", p);
    r.top5_share = num(j, "top5_share", p);
    r.top10_share = num(j, "top10_share", p);
    r.q01 = num(j, "q01", p);
    r.q05 = num(j, "q05", p);
    r.q25 = num(j, "q25", p);
    r.q50 = num(j, "q50", p);
    r.q75 = num(j, "q75", p);
    r.q95 = num(j, "q95", p);
    r.q99 = num(j, "q99", p);
    return r;
}

Json to_json(const DualState& d) {
    Json j;
    j["labels"] = d.labels;
    j["nu"] = numbers_json(d.nu);
    j["soft"] = d.soft;
    j["rho"] = numbers_json(d.rho);
    j["target"] = numbers_json(d.target);
    j["achieved"] = numbers_json(d.achieved);
    j["residual"] = numbers_json(d.residual);
    j["imputed_missing"] = d.imputed_missing;
    j["iterations"] = d.iterations;
    j["gradient_norm"] = number_json(d.gradient_norm);
    j["used_quasi_newton"] = d.used_quasi_newton;
    return j;
}

DualState dual_state_from_json(const Json& j) {
    const std::string p = "dual";
    DualState d;
    d.labels = req(j, "labels", p).get<std::vector<std::string>>();
    d.nu = numbers(req(j, "nu", p), join(p, "nu"));
    d.soft = req(j, "soft", p).get<std::vector<bool>>();
    d.rho = numbers(req(j, "rho", p), join(p, "rho"));
    d.target = numbers(req(j, "target", p), join(p, "target"));
    d.achieved = numbers(req(j, "achieved", p), join(p, "achieved"));
    d.residual = numbers(req(j, "residual", p), join(p, "residual"));
    d.imputed_missing = req(j, "imputed_missing", p).get<std::vector<std::size_t>>();
    d.iterations = static_cast<int>(as_count(req(j, "iterations", p), join(p, "iterations")));
    d.gradient_norm = num(j, "gradient_norm", p);
    d.used_quasi_newton = bool_or(j, "used_quasi_newton", p, false);
    return d;
}

Json to_json(const ChainDiagnostics& d) {
    Json j;
    j["acceptance_at_stop"] = number_json(d.acceptance_at_stop);
    j["acceptance_min"] = number_json(d.acceptance_min);
    j["acceptance_max"] = number_json(d.acceptance_max);
    j["rhat"] = numbers_json(d.rhat);
    j["max_rhat"] = number_json(d.max_rhat);
    j["lambda_min"] = number_json(d.lambda_min);
    j["lambda_max"] = number_json(d.lambda_max);
    j["max_soft_violation"] = number_json(d.max_soft_violation);
    j["deviation_days"] = numbers_json(d.deviation_days);
    j["max_landmark_deviation_days"] = number_json(d.max_landmark_deviation_days);
    j["aggregate_residual"] = number_json(d.aggregate_residual);
    j["g_hat"] = numbers_json(d.g_hat);
    j["burn_in"] = d.burn_in;
    j["stop_iteration"] = d.stop_iteration;
    j["proposals"] = d.proposals;
    j["accepted_blocks"] = d.accepted_blocks;
    j["converged"] = d.converged;
    return j;
}

ChainDiagnostics chain_diagnostics_from_json(const Json& j) {
    const std::string p = "diagnostics";
    ChainDiagnostics d;
    d.acceptance_at_stop = num(j, "acceptance_at_stop", p);
    d.acceptance_min = num(j, "acceptance_min", p);
    d.acceptance_max = num(j, "acceptance_max", p);
    d.rhat = numbers(req(j, "rhat", p), join(p, "rhat"));
    d.max_rhat = num(j, "max_rhat", p);
    d.lambda_min = num(j, "lambda_min", p);
    d.lambda_max = num(j, "lambda_max", p);
    d.max_soft_violation = num(j, "max_soft_violation", p);
    d.deviation_days = numbers(req(j, "deviation_days", p), join(p, "deviation_days"));
    d.max_landmark_deviation_days = num(j, "max_landmark_deviation_days", p);
    d.aggregate_residual = num(j, "aggregate_residual", p);
    d.g_hat = numbers(req(j, "g_hat", p), join(p, "g_hat"));
    d.burn_in = as_count(req(j, "burn_in", p), join(p, "burn_in"));
    d.stop_iteration = as_count(req(j, "stop_iteration", p), join(p, "stop_iteration"));
    d.proposals = as_count(req(j, "proposals", p), join(p, "proposals"));
    d.accepted_blocks = as_count(req(j, "accepted_blocks", p), join(p, "accepted_blocks"));
    d.converged = bool_or(j, "converged", p, false);
    return d;
}

Json to_json(const LambdaState& l) {
    return {{"lambda", numbers_json(l.lambda)}, {"soft", l.soft}, {"rho", numbers_json(l.rho)}, {"t", l.t}};
}

LambdaState lambda_state_from_json(const Json& j) {
    const std::string p = "lambda";
    LambdaState l;
    l.lambda = numbers(req(j, "lambda", p), join(p, "lambda"));
    l.soft = req(j, "soft", p).get<std::vector<bool>>();
    l.rho = numbers(req(j, "rho", p), join(p, "rho"));
    l.t = as_count(req(j, "t", p), join(p, "t"));
    return l;
}

namespace {

Json summary_json(const ArmSummary& s) {
    return {{"median", s.median ? Json(*s.median) : Json(nullptr)},
            {"landmarks", numbers_json(s.landmarks)},
            {"rmst", numbers_json(s.rmst)}};
}

ArmSummary summary_from(const Json& j, const std::string& p) {
    ArmSummary s;
    const Json& m = req(j, "median", p);
    if (!m.is_null()) s.median = as_number(m, join(p, "median"));
    s.landmarks = numbers(req(j, "landmarks", p), join(p, "landmarks"));
    s.rmst = numbers(req(j, "rmst", p), join(p, "rmst"));
    return s;
}

Json curve_json(const SurvivalCurve& c) {
    Json pts = Json::array();
    for (const auto& p : c.points)
        pts.push_back(Json::array({p.time, number_json(p.survival), number_json(p.at_risk), number_json(p.events)}));
    return {{"initial", c.initial}, {"points", pts}};
}

SurvivalCurve curve_from(const Json& j, const std::string& p) {
    SurvivalCurve c;
    c.initial = num(j, "initial", p);
    const Json& pts = arr(j, "points", p);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto v = numbers(pts[i], at(join(p, "points"), i));
        if (v.size() != 4) bad(at(join(p, "points"), i), "expected [time, survival, at_risk, events]");
        c.points.push_back({v[0], v[1], v[2], v[3]});
    }
    return c;
}

} // namespace

Json to_json(const ContrastReport& r) {
    Json j;
    j["index"] = r.index_label;
    j["comparator"] = r.comparator_label;
    Json rows = Json::array();
    for (const auto& row : r.rows) {
        Json rj;
        rj["quantity"] = row.quantity;
        rj["estimate"] = number_json(row.estimate);
        rj["ci"] = row.ci ? Json::array({number_json(row.ci->lower), number_json(row.ci->upper)}) : Json(nullptr);
        rj["samples"] = row.samples;
        rows.push_back(rj);
    }
    j["rows"] = rows;
    j["source_replicates"] = r.source_replicates;
    j["target_replicates"] = r.target_replicates;
    j["pairs"] = r.pairs;
    j["excluded_source"] = r.excluded_source;
    j["excluded_target"] = r.excluded_target;
    j["fraction_positive"] = numbers_json(r.fraction_positive);
    j["notes"] = r.notes;
    Json pt;
    pt["index"] = summary_json(r.point.index);
    pt["comparator"] = summary_json(r.point.comparator);
    pt["delta_rmst"] = numbers_json(r.point.delta_rmst);
    if (r.point.cox) {
        const auto& c = *r.point.cox;
        pt["cox"] = {{"log_hr", c.log_hr}, {"hr", c.hr}, {"se", c.se}, {"robust_se", c.robust_se},
                     {"iterations", c.iterations}};
    } else {
        pt["cox"] = nullptr;
    }
    pt["index_curve"] = curve_json(r.point.index_curve);
    pt["comparator_curve"] = curve_json(r.point.comparator_curve);
    j["point"] = pt;
    return j;
}

ContrastReport contrast_report_from_json(const Json& j) {
    const std::string p = "report";
    ContrastReport r;
    r.index_label = str(j, "index", p);
    r.comparator_label = str(j, "comparator", p);
    const Json& rows = arr(j, "rows", p);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::string rp = at(join(p, "rows"), i);
        ReportRow row;
        row.quantity = str(rows[i], "quantity", rp);
        row.estimate = num(rows[i], "estimate", rp);
        const Json& ci = req(rows[i], "ci", rp);
        if (!ci.is_null()) {
            const auto v = numbers(ci, join(rp, "ci"));
            if (v.size() != 2) bad(join(rp, "ci"), "expected [lower, upper]");
            row.ci = Envelope{v[0], v[1]};
        }
        row.samples = as_count(req(rows[i], "samples", rp), join(rp, "samples"));
        r.rows.push_back(std::move(row));
    }
    r.source_replicates = as_count(req(j, "source_replicates", p), join(p, "source_replicates"));
    r.target_replicates = as_count(req(j, "target_replicates", p), join(p, "target_replicates"));
    r.pairs = as_count(req(j, "pairs", p), join(p, "pairs"));
    r.excluded_source = as_count(req(j, "excluded_source", p), join(p, "excluded_source"));
    r.excluded_target = as_count(req(j, "excluded_target", p), join(p, "excluded_target"));
    r.fraction_positive = numbers(req(j, "fraction_positive", p), join(p, "fraction_positive"));
    r.notes = req(j, "notes", p).get<std::vector<std::string>>();
    const Json& pt = req(j, "point", p);
    const std::string pp = join(p, "point");
    r.point.index = summary_from(req(pt, "index", pp), join(pp, "index"));
    r.point.comparator = summary_from(req(pt, "comparator", pp), join(pp, "comparator"));
    r.point.delta_rmst = numbers(req(pt, "delta_rmst", pp), join(pp, "delta_rmst"));
    const Json& cox = req(pt, "cox", pp);
    if (!cox.is_null()) {
        const std::string cp = join(pp, "cox");
        r.point.cox = CoxResult{num(cox, "log_hr", cp), num(cox, "hr", cp), num(cox, "se", cp),
                                num(cox, "robust_se", cp),
                                static_cast<int>(as_count(req(cox, "iterations", cp), join(cp, "iterations")))};
    }
    r.point.index_curve = curve_from(req(pt, "index_curve", pp), join(pp, "index_curve"));
    r.point.comparator_curve = curve_from(req(pt, "comparator_curve", pp), join(pp, "comparator_curve"));
    return r;
}

} // namespace tiltcal
