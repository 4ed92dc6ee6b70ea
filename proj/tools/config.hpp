#pragma once
// Run configuration for the command-line tool. The file is YAML; every key
// is optional except the seed, which may also come from --seed.

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "hetfx/hetfx.hpp"

namespace hetfx::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

class ConfigError : public Error {
public:
    using Error::Error;
};

struct RuleConfig {
    std::string name;
    RuleKind kind = RuleKind::random;
    std::optional<Index> quota;              ///< treated count when empty
    std::vector<std::string> predicate;      ///< characteristic columns, primary then fill
    std::uint64_t seed = 0;
};

struct RunConfig {
    // data
    std::string data_path;                   ///< empty: use the simulate outputs in the run directory
    Schema schema;
    std::string outcome;                     ///< CATE outcome; first outcome when empty

    // simulate
    std::string sim_name = "rct-linear";
    std::optional<Index> sim_n;
    std::optional<Index> sim_months;
    std::optional<std::uint64_t> sim_seed;

    // features
    bool expand = false;
    bool screen = true;
    FeatureSpec features;

    // estimation
    bool trim = true;
    double trim_lower = 0.005, trim_upper = 0.995;
    PipelineConfig pipeline;

    // inference
    Index cate_replications = 1000;
    Index average_replications = 4999;
    bool average_reestimate = true;

    // policy
    std::vector<RuleConfig> rules;

    // report
    std::optional<double> density_bandwidth;
    std::optional<double> regression_bandwidth;
    std::vector<std::string> methods = {"mcm-none", "mcm-one-step", "mcm-two-step", "mom", "adaptive-lasso"};

    std::optional<std::uint64_t> seed;
    std::size_t workers = 1;
    fs::path base_dir = ".";

    json data_json() const;
    json estimation_json() const;
    json inference_json() const;
    json policy_json() const;
    json report_json() const;
    json simulate_json() const;
};

namespace detail {

inline void check_keys(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed) {
    if (!node) return;
    if (!node.IsMap()) throw ConfigError("config section '" + where + "' must be a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.count(key)) throw ConfigError("unknown config field '" + (where.empty() ? key : where + "." + key) + "'");
    }
}

template <class T>
T read(const YAML::Node& node, const std::string& key, const std::string& where, T fallback) {
    if (!node || !node[key]) return fallback;
    try {
        return node[key].as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError("config field '" + (where.empty() ? key : where + "." + key) + "' has the wrong type");
    }
}

template <class T>
std::optional<T> read_opt(const YAML::Node& node, const std::string& key, const std::string& where) {
    if (!node || !node[key] || node[key].IsNull()) return std::nullopt;
    try {
        return node[key].as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError("config field '" + (where.empty() ? key : where + "." + key) + "' has the wrong type");
    }
}

inline std::optional<double> read_bandwidth(const YAML::Node& node, const std::string& key, const std::string& where) {
    if (!node || !node[key]) return std::nullopt;
    if (node[key].IsScalar() && node[key].as<std::string>() == "auto") return std::nullopt;
    const auto v = read_opt<double>(node, key, where);
    if (v && !(*v > 0.0)) throw ConfigError("config field '" + where + "." + key + "' must be positive or 'auto'");
    return v;
}

} // namespace detail

inline RunConfig parse_config(const YAML::Node& root, const fs::path& base_dir) {
    using namespace detail;
    RunConfig c;
    c.base_dir = base_dir;
    if (!root || root.IsNull()) return c;
    check_keys(root, "", {"seed", "workers", "data", "simulate", "features", "trim", "estimation", "bootstrap",
                          "policy", "report"});
    c.seed = read_opt<std::uint64_t>(root, "seed", "");
    c.workers = read<std::size_t>(root, "workers", "", 1);

    if (const auto d = root["data"]) {
        check_keys(d, "data", {"path", "outcome", "schema"});
        c.data_path = read<std::string>(d, "path", "data", "");
        c.outcome = read<std::string>(d, "outcome", "data", "");
        if (const auto s = d["schema"]) {
            check_keys(s, "data.schema",
                       {"treatment", "outcomes", "confounders", "heterogeneity", "cluster", "id", "characteristics"});
            using Names = std::vector<std::string>;
            c.schema.treatment = read<std::string>(s, "treatment", "data.schema", "");
            c.schema.outcomes = read<Names>(s, "outcomes", "data.schema", {});
            c.schema.confounders = read<Names>(s, "confounders", "data.schema", {});
            c.schema.heterogeneity = read<Names>(s, "heterogeneity", "data.schema", {});
            c.schema.cluster = read<std::string>(s, "cluster", "data.schema", "");
            c.schema.id = read<std::string>(s, "id", "data.schema", "");
            c.schema.characteristics = read<Names>(s, "characteristics", "data.schema", {});
        } else if (!c.data_path.empty()) {
            throw ConfigError("config field 'data.schema' is required when 'data.path' is given");
        }
    }
    if (const auto s = root["simulate"]) {
        check_keys(s, "simulate", {"config", "n", "months", "seed"});
        c.sim_name = read<std::string>(s, "config", "simulate", c.sim_name);
        c.sim_n = read_opt<Index>(s, "n", "simulate");
        c.sim_months = read_opt<Index>(s, "months", "simulate");
        c.sim_seed = read_opt<std::uint64_t>(s, "seed", "simulate");
    }
    if (const auto f = root["features"]) {
        check_keys(f, "features",
                   {"expand", "screen", "interaction_order", "polynomial_order", "log_transform", "share_min", "corr_max"});
        c.expand = read<bool>(f, "expand", "features", c.expand);
        c.screen = read<bool>(f, "screen", "features", c.screen);
        c.features.interaction_order = read<int>(f, "interaction_order", "features", c.features.interaction_order);
        c.features.polynomial_order = read<int>(f, "polynomial_order", "features", c.features.polynomial_order);
        c.features.log_transform = read<bool>(f, "log_transform", "features", c.features.log_transform);
        c.features.share_min = read<double>(f, "share_min", "features", c.features.share_min);
        c.features.corr_max = read<double>(f, "corr_max", "features", c.features.corr_max);
        try {
            c.features.validate();
        } catch (const DomainError& e) {
            throw ConfigError(std::string("features: ") + e.what());
        }
    }
    if (const auto t = root["trim"]) {
        if (t.IsScalar()) {
            c.trim = read<bool>(root, "trim", "", true);
        } else {
            check_keys(t, "trim", {"enabled", "lower", "upper"});
            c.trim = read<bool>(t, "enabled", "trim", true);
            c.trim_lower = read<double>(t, "lower", "trim", c.trim_lower);
            c.trim_upper = read<double>(t, "upper", "trim", c.trim_upper);
            if (!(0.0 <= c.trim_lower && c.trim_lower < c.trim_upper && c.trim_upper <= 1.0))
                throw ConfigError("config fields 'trim.lower' and 'trim.upper' must satisfy 0 <= lower < upper <= 1");
        }
    }
    auto& p = c.pipeline;
    if (const auto e = root["estimation"]) {
        check_keys(e, "estimation", {"method", "selector", "lambda", "post_lasso", "folds", "grid_size", "min_ratio",
                                     "splits", "renormalize_weights", "reestimate_propensity", "mom_weighted"});
        try {
            p.method = effect_method_from_string(read<std::string>(e, "method", "estimation", to_string(p.method)));
            p.selector.kind = selector_from_string(read<std::string>(e, "selector", "estimation", to_string(p.selector.kind)));
        } catch (const DomainError& err) {
            throw ConfigError(std::string("estimation: ") + err.what());
        }
        p.selector.lambda = read<double>(e, "lambda", "estimation", 0.0);
        p.selector.post_lasso = read<bool>(e, "post_lasso", "estimation", true);
        p.selector.cv.folds = read<Index>(e, "folds", "estimation", p.selector.cv.folds);
        p.selector.cv.grid_size = read<std::size_t>(e, "grid_size", "estimation", p.selector.cv.grid_size);
        p.selector.cv.min_ratio = read<double>(e, "min_ratio", "estimation", p.selector.cv.min_ratio);
        p.splits = read<Index>(e, "splits", "estimation", p.splits);
        p.renormalize_weights = read<bool>(e, "renormalize_weights", "estimation", true);
        p.reestimate_propensity = read<bool>(e, "reestimate_propensity", "estimation", false);
        p.mom_weighted = read<bool>(e, "mom_weighted", "estimation", false);
        if (p.splits < 1) throw ConfigError("config field 'estimation.splits' must be at least 1");
        if (p.selector.cv.folds < 2) throw ConfigError("config field 'estimation.folds' must be at least 2");
        if (p.selector.kind == SelectorKind::fixed_lambda && !(p.selector.lambda >= 0.0))
            throw ConfigError("config field 'estimation.lambda' must be nonnegative");
    }
    if (const auto b = root["bootstrap"]) {
        check_keys(b, "bootstrap", {"replications", "average_replications", "reestimate_propensity"});
        c.cate_replications = read<Index>(b, "replications", "bootstrap", c.cate_replications);
        c.average_replications = read<Index>(b, "average_replications", "bootstrap", c.average_replications);
        c.average_reestimate = read<bool>(b, "reestimate_propensity", "bootstrap", c.average_reestimate);
        if (c.cate_replications < 2 || c.average_replications < 2)
            throw ConfigError("bootstrap replication counts must be at least 2");
    }
    if (const auto pol = root["policy"]) {
        check_keys(pol, "policy", {"rules"});
        if (const auto rules = pol["rules"]) {
            if (!rules.IsSequence()) throw ConfigError("config field 'policy.rules' must be a list");
            for (std::size_t k = 0; k < rules.size(); ++k) {
                const auto r = rules[k];
                const std::string where = "policy.rules[" + std::to_string(k) + "]";
                check_keys(r, where, {"name", "kind", "quota", "predicate", "seed"});
                RuleConfig rc;
                try {
                    rc.kind = rule_kind_from_string(read<std::string>(r, "kind", where, "random"));
                } catch (const DomainError& err) {
                    throw ConfigError(where + ": " + err.what());
                }
                rc.name = read<std::string>(r, "name", where, to_string(rc.kind));
                if (r["quota"] && r["quota"].as<std::string>() != "treated") rc.quota = read<Index>(r, "quota", where, 0);
                rc.predicate = read<std::vector<std::string>>(r, "predicate", where, {});
                rc.seed = read<std::uint64_t>(r, "seed", where, 0);
                c.rules.push_back(rc);
            }
        }
    }
    if (const auto r = root["report"]) {
        check_keys(r, "report", {"density_bandwidth", "regression_bandwidth", "methods"});
        c.density_bandwidth = read_bandwidth(r, "density_bandwidth", "report");
        c.regression_bandwidth = read_bandwidth(r, "regression_bandwidth", "report");
        c.methods = read<std::vector<std::string>>(r, "methods", "report", c.methods);
    }
    return c;
}

inline RunConfig load_config(const fs::path& path) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path.string());
    } catch (const YAML::BadFile&) {
        throw ConfigError("cannot read config '" + path.string() + "'");
    } catch (const YAML::Exception& e) {
        throw ConfigError("config '" + path.string() + "' is not valid YAML: " + e.what());
    }
    return parse_config(root, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

inline json RunConfig::data_json() const {
    return {{"path", data_path},
            {"outcome", outcome},
            {"schema",
             {{"treatment", schema.treatment},
              {"outcomes", schema.outcomes},
              {"confounders", schema.confounders},
              {"heterogeneity", schema.heterogeneity},
              {"cluster", schema.cluster},
              {"id", schema.id},
              {"characteristics", schema.characteristics}}}};
}

inline json RunConfig::simulate_json() const {
    json j = {{"config", sim_name}};
    j["n"] = sim_n ? json(*sim_n) : json(nullptr);
    j["months"] = sim_months ? json(*sim_months) : json(nullptr);
    j["seed"] = sim_seed ? json(*sim_seed) : json(nullptr);
    return j;
}

inline json RunConfig::estimation_json() const {
    const auto& p = pipeline;
    return {{"features",
             {{"expand", expand},
              {"screen", screen},
              {"interaction_order", features.interaction_order},
              {"polynomial_order", features.polynomial_order},
              {"log_transform", features.log_transform},
              {"share_min", features.share_min},
              {"corr_max", features.corr_max}}},
            {"trim", {{"enabled", trim}, {"lower", trim_lower}, {"upper", trim_upper}}},
            {"method", to_string(p.method)},
            {"selector", to_string(p.selector.kind)},
            {"lambda", p.selector.lambda},
            {"post_lasso", p.selector.post_lasso},
            {"folds", p.selector.cv.folds},
            {"grid_size", p.selector.cv.grid_size},
            {"min_ratio", p.selector.cv.min_ratio},
            {"splits", p.splits},
            {"renormalize_weights", p.renormalize_weights},
            {"reestimate_propensity", p.reestimate_propensity},
            {"mom_weighted", p.mom_weighted},
            {"seed", seed.value_or(0)}};
}

inline json RunConfig::inference_json() const {
    return {{"replications", cate_replications},
            {"average_replications", average_replications},
            {"reestimate_propensity", average_reestimate}};
}

inline json RunConfig::policy_json() const {
    json rules = json::array();
    for (const auto& r : this->rules)
        rules.push_back({{"name", r.name},
                         {"kind", to_string(r.kind)},
                         {"quota", r.quota ? json(*r.quota) : json("treated")},
                         {"predicate", r.predicate},
                         {"seed", r.seed}});
    return {{"rules", rules}};
}

inline json RunConfig::report_json() const {
    return {{"density_bandwidth", density_bandwidth ? json(*density_bandwidth) : json("auto")},
            {"regression_bandwidth", regression_bandwidth ? json(*regression_bandwidth) : json("auto")},
            {"methods", methods}};
}

} // namespace hetfx::cli
