// hetfx command-line tool: simulate | fit | infer | report | policy.

#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "artifacts.hpp"
#include "config.hpp"

namespace hetfx::cli {
namespace {

struct Options {
    fs::path config_path;
    fs::path out = "out";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    bool force = false;
};

RunConfig resolve(const Options& o) {
    RunConfig c = o.config_path.empty() ? parse_config(YAML::Node(), ".") : load_config(o.config_path);
    if (o.seed) c.seed = o.seed;
    if (!c.seed) throw ConfigError("a seed is required: set 'seed' in the config or pass --seed");
    if (o.workers) {
        c.workers = *o.workers;
    } else if (const char* env = std::getenv("HETFX_WORKERS")) {
        try {
            c.workers = std::stoul(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("HETFX_WORKERS must be a positive integer, got '") + env + "'");
        }
    }
    if (c.workers < 1) throw ConfigError("worker count must be at least 1");
    c.pipeline.seed = *c.seed;
    c.pipeline.workers = c.workers;
    return c;
}

void refuse_overwrite(const Options& o, const std::string& command) {
    const fs::path m = o.out / (command + ".manifest.json");
    if (fs::exists(m) && !o.force)
        throw ManifestError(m.string() + " already exists; outputs are write-once per run directory (use a fresh --out or --force)");
}

// ---------------------------------------------------------------------------
// Shared preparation

std::string fit_hash(const RunConfig& c) {
    return json_hash({{"data", c.data_json()}, {"estimation", c.estimation_json()}});
}
std::string infer_hash(const RunConfig& c) {
    return json_hash({{"fit", fit_hash(c)}, {"bootstrap", c.inference_json()}});
}

Schema schema_from_json(const json& j) {
    Schema s;
    s.treatment = j.at("treatment");
    s.outcomes = j.at("outcomes").get<std::vector<std::string>>();
    s.confounders = j.at("confounders").get<std::vector<std::string>>();
    s.heterogeneity = j.at("heterogeneity").get<std::vector<std::string>>();
    s.cluster = j.at("cluster");
    s.id = j.at("id");
    s.characteristics = j.at("characteristics").get<std::vector<std::string>>();
    return s;
}

json schema_to_json(const Schema& s) {
    return {{"treatment", s.treatment}, {"outcomes", s.outcomes}, {"confounders", s.confounders},
            {"heterogeneity", s.heterogeneity}, {"cluster", s.cluster}, {"id", s.id},
            {"characteristics", s.characteristics}};
}

struct State {
    fs::path data_path;
    std::string data_sha;
    Dataset raw;
    Dataset data;                 ///< after feature construction, before trimming
    std::vector<DroppedFeature> dropped_features;
    Diagnostics feature_diagnostics;
    PreparedData prep;
    Index outcome = 0;
    EstimationSample sample;
};

State build_state(const RunConfig& c, const fs::path& out) {
    State s;
    Schema schema = c.schema;
    if (c.data_path.empty()) {
        s.data_path = out / "data.csv";
        const fs::path sp = out / "schema.json";
        if (!fs::exists(s.data_path) || !fs::exists(sp))
            throw ManifestError("no 'data.path' in the config and no simulated data in " + out.string() +
                                "; run `hetfx simulate` first or set data.path");
        schema = schema_from_json(read_json(sp));
    } else {
        s.data_path = fs::path(c.data_path).is_absolute() ? fs::path(c.data_path) : c.base_dir / c.data_path;
    }
    s.data_sha = file_sha256(s.data_path);
    s.raw = load_dataset(s.data_path.string(), schema);

    Matrix z = s.raw.heterogeneity();
    std::vector<std::string> names = s.raw.heterogeneity_names();
    FeatureSpec spec = c.features;
    if (c.expand) {
        const Matrix levels = z.rightCols(z.cols() - 1);
        const std::vector<std::string> level_names(names.begin() + 1, names.end());
        FeatureSpec inferred = infer_feature_spec(levels, level_names);
        spec.variables = inferred.variables;
        FeatureMatrix fm = expand_features(levels, spec);
        s.feature_diagnostics.merge(fm.diagnostics);
        z = std::move(fm.values);
        names = std::move(fm.names);
    }
    if (c.screen) {
        ScreenedFeatures sf = screen_features(z, names, spec, s.raw.treatment());
        s.dropped_features = sf.dropped;
        z = std::move(sf.values);
        names = std::move(sf.names);
    }
    s.data = s.raw.with_heterogeneity(std::move(z), std::move(names));

    s.prep = prepare(s.data, c.trim, c.pipeline.logit, TrimOptions{c.trim_lower, c.trim_upper});
    if (!c.outcome.empty()) {
        const auto& on = s.data.outcome_names();
        auto it = std::find(on.begin(), on.end(), c.outcome);
        if (it == on.end()) throw SchemaError("config field 'data.outcome' names unknown outcome '" + c.outcome + "'");
        s.outcome = static_cast<Index>(it - on.begin());
    }
    s.sample = EstimationSample::from(s.prep.data, s.outcome, as_span(s.prep.pscore), s.prep.weights);
    return s;
}

json plan_json(const RefitPlan& plan, const std::vector<std::string>& names) {
    auto named = [&](const IndexList& cols) {
        std::vector<std::string> out;
        for (Index j : cols) out.push_back(names.at(j));
        return out;
    };
    const char* kind = plan.kind == RefitKind::joint ? "joint" : plan.kind == RefitKind::sequential ? "sequential" : "outcome";
    return {{"kind", kind}, {"main", plan.main}, {"inter", plan.inter}, {"main_names", named(plan.main)},
            {"inter_names", named(plan.inter)}};
}

RefitPlan plan_from_json(const json& j, Index p) {
    RefitPlan plan;
    const std::string kind = j.at("kind");
    plan.kind = kind == "joint" ? RefitKind::joint : kind == "sequential" ? RefitKind::sequential : RefitKind::outcome;
    plan.main = j.at("main").get<IndexList>();
    plan.inter = j.at("inter").get<IndexList>();
    for (Index k : plan.main)
        if (k >= p) throw ManifestError("ensemble.json references a column outside the design; rerun `hetfx fit`");
    for (Index k : plan.inter)
        if (k >= p) throw ManifestError("ensemble.json references a column outside the design; rerun `hetfx fit`");
    return plan;
}

/// Re-derives every split from the stored supports and checks the bagged
/// predictions against the fit outputs.
std::vector<SplitResult> rebuild_splits(const RunConfig& c, const State& s, const fs::path& out) {
    const json ens = read_json(out / "ensemble.json");
    std::vector<SplitResult> splits;
    const auto p = static_cast<Index>(s.sample.z.cols());
    for (const auto& sj : ens.at("splits"))
        splits.push_back(rebuild_split(s.sample, c.pipeline, sj.at("split").get<Index>(), plan_from_json(sj.at("plan"), p)));
    if (splits.size() != c.pipeline.splits) throw ManifestError("ensemble.json split count does not match the config; rerun `hetfx fit`");
    const CateEnsemble e = bag_cates(splits);
    const CsvTable pred = read_csv((out / "predictions.csv").string());
    const Index col = pred.column("bagged");
    if (pred.rows.size() != s.sample.size()) throw ManifestError("predictions.csv row count does not match the data; rerun `hetfx fit`");
    for (Index i = 0; i < pred.rows.size(); ++i)
        if (pred.rows[i][col] != csv::format_double(e.bagged(static_cast<Eigen::Index>(i))))
            throw ManifestError("rebuilt predictions differ from predictions.csv at row " + std::to_string(i + 1) +
                                "; rerun `hetfx fit`");
    return splits;
}

Vector read_column(const fs::path& path, const std::string& name) {
    const CsvTable t = read_csv(path.string());
    const Index col = t.column(name);
    Vector v(static_cast<Eigen::Index>(t.rows.size()));
    for (Index i = 0; i < t.rows.size(); ++i)
        if (!csv::parse_double(t.rows[i][col], v(static_cast<Eigen::Index>(i))))
            throw ValidationError("bad number in " + path.string() + ", column " + name);
    return v;
}

json diagnostics_json(const Diagnostics& d) { return d.warnings; }

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const Options& o) {
    const RunConfig c = resolve(o);
    refuse_overwrite(o, "simulate");
    DgpConfig dgp = default_config(c.sim_name);
    if (c.sim_n) {
        dgp.n = *c.sim_n;
        dgp.clusters = std::min(dgp.clusters, dgp.n);
    }
    if (c.sim_months) dgp.months = *c.sim_months;
    if (c.sim_seed) dgp.seed = *c.sim_seed;
    const SynthOutput s = generate(dgp);

    RunDir dir(o.out, "simulate");
    const std::string tmp = (o.out / "data.csv.tmp").string();
    const Schema schema = write_dataset(tmp, s.data);
    const std::string bytes = read_file(tmp);
    fs::remove(tmp);
    dir.write("data.csv", bytes);
    dir.write("schema.json", schema_to_json(schema));

    Table truth({"id", "tau", "propensity"});
    std::string tau_text;
    for (Index i = 0; i < s.data.size(); ++i) {
        truth.row(s.data.obs_ids()[i], s.tau(static_cast<Eigen::Index>(i)), s.propensity(static_cast<Eigen::Index>(i)));
        tau_text += csv::format_double(s.tau(static_cast<Eigen::Index>(i))) + "\n";
    }
    dir.write("truth.csv", truth);
    std::vector<Index> support = dgp.true_support();
    dir.write("truth.json", json{{"config", dgp.name},
                                 {"n", dgp.n},
                                 {"clusters", dgp.clusters},
                                 {"p", dgp.p},
                                 {"p_x", dgp.p_x},
                                 {"months", dgp.months},
                                 {"seed", dgp.seed},
                                 {"delta", to_std(dgp.delta)},
                                 {"beta", to_std(dgp.beta)},
                                 {"propensity_coefficients", to_std(dgp.a)},
                                 {"sigma", dgp.sigma},
                                 {"cluster_sd", dgp.cluster_sd},
                                 {"nonlinear", dgp.nonlinear},
                                 {"true_support", support},
                                 {"tau_sha256", sha256_hex(tau_text)},
                                 {"true_ate", s.true_ate},
                                 {"true_atet", s.true_atet},
                                 {"true_atent", s.true_atent}});
    dir.finish({{"config_hash", json_hash(c.simulate_json())}, {"seed", dgp.seed}});
    std::cout << "simulated " << dgp.name << " (n = " << dgp.n << ") into " << o.out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// fit

int cmd_fit(const Options& o) {
    const RunConfig c = resolve(o);
    refuse_overwrite(o, "fit");
    State s = build_state(c, o.out);
    const PipelineResult res = run_pipeline(s.sample, c.pipeline);
    const auto& names = s.sample.z_names;
    const auto& ids = s.prep.data.obs_ids();

    RunDir dir(o.out, "fit");
    Table features({"feature", "status", "reason"});
    for (const auto& n : names) features.row(n, "kept", "");
    for (const auto& d : s.dropped_features) features.row(d.name, "dropped", d.reason);
    dir.write("features.csv", features);

    // Participation model and balance.
    Table prop({"variable", "coefficient", "se", "marginal_effect"});
    const auto ame = average_marginal_effects(s.prep.model, s.data.confounders());
    for (Index j = 0; j < s.prep.model.names.size(); ++j)
        prop.row(s.prep.model.names[j], s.prep.model.coefficients(static_cast<Eigen::Index>(j)),
                 s.prep.model.std_errors(static_cast<Eigen::Index>(j)), j == 0 ? std::nan("") : ame[j - 1]);
    dir.write("propensity.csv", prop);

    Table balance({"variable", "mean_treated", "mean_control", "std_diff", "std_diff_sum"});
    auto add_balance = [&](const Matrix& m, const std::vector<std::string>& vn) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::vector<double> a, b;
            for (Index i = 0; i < s.data.size(); ++i) (s.data.treatment()[i] ? a : b).push_back(m(static_cast<Eigen::Index>(i), j));
            balance.row(vn[static_cast<Index>(j)], mean(a), mean(b), standardized_difference(a, b, SdDenominator::half_sum),
                        standardized_difference(a, b, SdDenominator::full_sum));
        }
    };
    add_balance(s.data.confounders(), s.data.confounder_names());
    add_balance(s.data.characteristics(), s.data.characteristic_names());
    dir.write("balance.csv", balance);

    json trim = {{"enabled", c.trim}, {"rows_before", s.data.size()}, {"rows_after", s.prep.data.size()}};
    if (s.prep.trim) {
        trim["lower"] = s.prep.trim->lower;
        trim["upper"] = s.prep.trim->upper;
        trim["dropped_treated"] = s.prep.trim->dropped_treated;
        trim["dropped_controls"] = s.prep.trim->dropped_controls;
    }
    dir.write("sample.json",
              json{{"trim", trim},
                   {"treated", s.prep.data.treated_count()},
                   {"controls", s.prep.data.size() - s.prep.data.treated_count()},
                   {"clusters", s.prep.data.cluster_count()},
                   {"outcome", s.data.outcome_names()[s.outcome]},
                   {"propensity_iterations", s.prep.model.iterations},
                   {"balance_note",
                    "std_diff = 100 |mean_t - mean_c| / sqrt((var_t + var_c) / 2); std_diff_sum divides by "
                    "sqrt(var_t + var_c) instead, the denominator behind some published balance tables, and is "
                    "smaller by a factor sqrt(2)"}});

    // Ensemble.
    json splits = json::array();
    for (const auto& r : res.splits)
        splits.push_back({{"split", r.split},
                          {"seed", r.seed},
                          {"lambda", r.selection.lambda},
                          {"training_rows", r.training.size()},
                          {"estimation_rows", r.estimation.size()},
                          {"plan", plan_json(r.plan, names)}});
    dir.write("ensemble.json", json{{"method", to_string(c.pipeline.method)},
                                    {"selector", to_string(c.pipeline.selector.kind)},
                                    {"master_seed", *c.seed},
                                    {"design", names},
                                    {"splits", splits}});

    std::vector<std::string> header{"id"};
    for (Index k = 0; k < res.splits.size(); ++k) header.push_back("split_" + std::to_string(k + 1));
    header.push_back("bagged");
    Table pred(header);
    for (Index i = 0; i < s.sample.size(); ++i) {
        std::vector<std::string> row{ids[i]};
        for (Index k = 0; k < res.splits.size(); ++k)
            row.push_back(Table::cell(res.ensemble.predictions(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i))));
        row.push_back(Table::cell(res.ensemble.bagged(static_cast<Eigen::Index>(i))));
        pred.add(std::move(row));
    }
    dir.write("predictions.csv", pred);

    Table weights({"id", "treated", "pscore", "weight"});
    for (Index i = 0; i < s.sample.size(); ++i)
        weights.row(ids[i], s.sample.d[i] != 0, s.sample.pscore(static_cast<Eigen::Index>(i)), s.sample.weights(static_cast<Eigen::Index>(i)));
    dir.write("weights.csv", weights);

    Table coef({"variable", "selected_share", "mean_delta", "delta_split_1"});
    for (Index j = 0; j < names.size(); ++j) {
        double sel = 0.0, sum = 0.0;
        for (const auto& r : res.splits) {
            sel += std::find(r.plan.inter.begin(), r.plan.inter.end(), j) != r.plan.inter.end();
            sum += r.delta(static_cast<Eigen::Index>(j));
        }
        const double S = static_cast<double>(res.splits.size());
        coef.row(names[j], sel / S, sum / S, res.splits.front().delta(static_cast<Eigen::Index>(j)));
    }
    dir.write("coefficients.csv", coef);

    Diagnostics diag = s.feature_diagnostics;
    diag.merge(s.prep.model.diagnostics);
    diag.merge(res.diagnostics);
    dir.finish({{"fit_hash", fit_hash(c)}, {"seed", *c.seed}, {"data_sha256", s.data_sha}, {"warnings", diagnostics_json(diag)}});
    std::cout << "fit " << res.splits.size() << " splits on " << s.sample.size() << " rows; mean CATE "
              << res.ensemble.bagged.mean() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// infer

int cmd_infer(const Options& o) {
    const RunConfig c = resolve(o);
    require_manifest(o.out, "fit", "fit_hash", fit_hash(c), "fit");
    refuse_overwrite(o, "infer");
    State s = build_state(c, o.out);
    const std::vector<SplitResult> splits = rebuild_splits(c, s, o.out);
    const CateEnsemble ens = bag_cates(splits);
    const auto& names = s.sample.z_names;
    const auto& ids = s.prep.data.obs_ids();

    BootstrapConfig bc;
    bc.replications = c.cate_replications;
    bc.seed = *c.seed;
    bc.workers = c.workers;
    const CateBootstrapResult boot = bootstrap_cates(s.sample, splits, bc, {}, Index{0});

    BootstrapConfig ba = bc;
    ba.replications = c.average_replications;
    ba.reestimate_propensity = c.average_reestimate;
    const AverageBootstrap avg = bootstrap_averages(s.prep.data.outcomes(), s.sample.d, s.sample.x,
                                                    as_span(s.sample.pscore), s.sample.clusters, ba);

    RunDir dir(o.out, "infer");
    Table cates({"id", "cate", "se"});
    for (Index i = 0; i < s.sample.size(); ++i)
        cates.row(ids[i], ens.bagged(static_cast<Eigen::Index>(i)), boot.sigma(static_cast<Eigen::Index>(i)));
    dir.write("cates.csv", cates);

    Table averages({"outcome", "estimand", "value", "se", "stars", "replications"});
    for (Index m = 0; m < avg.point.size(); ++m)
        for (const auto& e : avg.estimates(m))
            averages.row(s.prep.data.outcome_names()[m], to_string(e.estimand), e.value, e.se,
                         significance_stars(e.value, e.se), e.replications);
    dir.write("averages.csv", averages);

    Table curve({"outcome", "ate", "atet", "treated_level", "control_level", "treated_mean", "control_counterfactual"});
    const auto monthly = monthly_effect_curve(s.prep.data.outcomes(), s.sample.d, as_span(s.sample.pscore),
                                              as_span(s.sample.weights));
    for (Index m = 0; m < monthly.size(); ++m) {
        const auto& a = monthly[m];
        curve.row(s.prep.data.outcome_names()[m], a.ate, a.atet, a.treated_level, a.control_level, a.treated_mean,
                  a.control_counterfactual);
    }
    dir.write("monthly.csv", curve);

    const SummaryRow sum = cate_summary(s.data.outcome_names()[s.outcome], ens.bagged, &boot.sigma);
    Table summary({"outcome", "mean", "median", "sd", "min", "max", "mean_se", "n"});
    summary.row(sum.label, sum.mean, sum.median, sum.sd, sum.min, sum.max, sum.mean_se, sum.n);
    dir.write("cate_summary.csv", summary);

    Table groups({"group", "n", "mean", "se", "stars"});
    Flags all(s.sample.size(), 1), treated = s.sample.d, controls(s.sample.size());
    for (Index i = 0; i < controls.size(); ++i) controls[i] = !treated[i];
    for (const auto& [label, g] : std::vector<std::pair<std::string, Flags>>{{"all", all}, {"treated", treated}, {"controls", controls}}) {
        const Vector zbar = group_profile(s.sample.z, g);
        const double v = group_average(ens.bagged, g), se = boot.se_of(zbar);
        groups.row(label, static_cast<Index>(std::count(g.begin(), g.end(), 1)), v, se, significance_stars(v, se));
    }
    dir.write("groups.csv", groups);

    Table coef({"variable", "mean_delta", "se", "stars", "delta_split_1", "se_split_1"});
    for (Index j = 0; j < names.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const Vector col = boot.split_deltas.col(jj);
        const double se = std::sqrt(std::max(0.0, boot.covariance(jj, jj)));
        coef.row(names[j], boot.delta(jj), se, significance_stars(boot.delta(jj), se), splits.front().delta(jj),
                 bootstrap_se(as_span(col)));
    }
    dir.write("coefficient_se.csv", coef);

    // Replicate coefficients, keyed by replication number, for later reports.
    std::vector<std::string> header{"replication"};
    for (const auto& n : names) header.push_back(n);
    Table deltas(header);
    for (Eigen::Index r = 0; r < boot.replicate_deltas.rows(); ++r) {
        std::vector<std::string> cells{std::to_string(boot.replication_ids[static_cast<Index>(r)])};
        for (Eigen::Index j = 0; j < boot.replicate_deltas.cols(); ++j) cells.push_back(Table::cell(boot.replicate_deltas(r, j)));
        deltas.add(std::move(cells));
    }
    dir.write("bootstrap_deltas.csv", deltas);
    dir.write("bootstrap.json", json{{"cate", {{"requested", boot.requested}, {"used", boot.used}, {"excluded", boot.excluded}}},
                                     {"averages",
                                      {{"requested", avg.requested},
                                       {"used", avg.used},
                                       {"excluded", avg.excluded},
                                       {"reestimate_propensity", c.average_reestimate}}}});
    dir.finish({{"infer_hash", infer_hash(c)}, {"fit_hash", fit_hash(c)}, {"seed", *c.seed}, {"data_sha256", s.data_sha}});
    std::cout << "bootstrap: " << boot.used << "/" << boot.requested << " CATE replications, " << avg.used << "/"
              << avg.requested << " average-effect replications\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report

std::optional<Index> find_name(const std::vector<std::string>& names, const std::string& n) {
    auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) return std::nullopt;
    return static_cast<Index>(it - names.begin());
}

int cmd_report(const Options& o) {
    const RunConfig c = resolve(o);
    require_manifest(o.out, "fit", "fit_hash", fit_hash(c), "fit");
    require_manifest(o.out, "infer", "infer_hash", infer_hash(c), "infer");
    refuse_overwrite(o, "report");
    State s = build_state(c, o.out);
    const Vector cate = read_column(o.out / "predictions.csv", "bagged");
    if (static_cast<Index>(cate.size()) != s.sample.size()) throw ManifestError("predictions.csv does not match the data; rerun `hetfx fit`");

    // Bootstrap replicates written by infer.
    const CsvTable dt = read_csv((o.out / "bootstrap_deltas.csv").string());
    const auto p = s.sample.z.cols();
    CateBootstrapResult boot;
    boot.replicate_deltas.resize(static_cast<Eigen::Index>(dt.rows.size()), p);
    for (Index r = 0; r < dt.rows.size(); ++r) {
        boot.replication_ids.push_back(std::stoul(dt.rows[r][0]));
        for (Eigen::Index j = 0; j < p; ++j)
            if (!csv::parse_double(dt.rows[r][static_cast<Index>(j) + 1], boot.replicate_deltas(static_cast<Eigen::Index>(r), j)))
                throw ValidationError("bad number in bootstrap_deltas.csv");
    }
    boot.used = dt.rows.size();
    boot.replicate_mean = boot.replicate_deltas.colwise().mean().transpose();
    const Matrix centered = boot.replicate_deltas.rowwise() - boot.replicate_mean.transpose();
    boot.covariance = centered.transpose() * centered / static_cast<double>(boot.used);
    {
        const std::vector<SplitResult> splits = rebuild_splits(c, s, o.out);
        boot.delta = Vector::Zero(p);
        for (const auto& r : splits) boot.delta += r.delta;
        boot.delta /= static_cast<double>(splits.size());
    }

    RunDir dir(o.out, "report");
    const auto& chars = s.prep.data.characteristics();
    const auto& char_names = s.prep.data.characteristic_names();

    // CATE distribution.
    const DensityCurve dens = kernel_density(as_span(cate), c.density_bandwidth);
    Table density({"cate", "density"});
    for (Index k = 0; k < dens.grid.size(); ++k) density.row(dens.grid[k], dens.density[k]);
    dir.write("density.csv", density);

    // Low/high splits by characteristic.
    const auto rows = binary_split_table(cate, chars, char_names, s.sample.z, &boot);
    Table split({"characteristic", "threshold", "n_low", "n_high", "cate_low", "cate_high", "difference", "se_low",
                 "se_high", "se_difference", "stars", "note"});
    for (const auto& r : rows) {
        if (r.skipped) {
            split.row(r.name, std::nan(""), r.n_low, r.n_high, std::nan(""), std::nan(""), std::nan(""), std::nan(""),
                      std::nan(""), std::nan(""), "", r.note);
            continue;
        }
        split.row(r.name, r.threshold, r.n_low, r.n_high, r.low, r.high, r.difference, r.se_low, r.se_high,
                  r.se_difference, significance_stars(r.difference, r.se_difference.value_or(0.0)), "");
    }
    dir.write("splits.csv", split);

    // Characteristics by CATE sign; sign groups recomputed per replication.
    Matrix sign_reps(static_cast<Eigen::Index>(boot.used), chars.cols());
    for (Index r = 0; r < boot.used; ++r) {
        const auto counts = draw_cluster_counts(s.sample.cluster_count(), *c.seed, StreamTag::bootstrap_cates,
                                                boot.replication_ids[r]);
        const Vector cate_b = s.sample.z * boot.replicate_deltas.row(static_cast<Eigen::Index>(r)).transpose();
        const ReplicationView view{boot.replication_ids[r], cate_b, counts, s.sample.clusters};
        const auto diff = sign_profile_statistic(chars).compute(view);
        for (Index j = 0; j < diff.size(); ++j) sign_reps(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = diff[j];
    }
    const SignProfile sp = sign_group_profile(cate, chars, char_names, &sign_reps);
    Table sign({"characteristic", "mean_nonnegative", "mean_negative", "difference", "se", "stars"});
    for (const auto& r : sp.rows)
        sign.row(r.name, r.mean_nonnegative, r.mean_negative, r.difference, r.se,
                 r.se ? significance_stars(r.difference, *r.se) : std::string());
    dir.write("sign_profile.csv", sign);

    // CATE against the propensity score.
    const double rbw = c.regression_bandwidth ? *c.regression_bandwidth : silverman_bandwidth(as_span(s.sample.pscore));
    const RegressionCurve curve = kernel_regression(as_span(s.sample.pscore), as_span(cate), rbw);
    Table reg({"pscore", "cate", "gap"});
    for (Index k = 0; k < curve.grid.size(); ++k) reg.row(curve.grid[k], curve.value[k], curve.gap[k] != 0);
    dir.write("regression.csv", reg);
    Table hist({"lower", "upper", "count"});
    for (Index k = 0; k < curve.histogram.counts.size(); ++k)
        hist.row(curve.histogram.edges[k], curve.histogram.edges[k + 1], curve.histogram.counts[k]);
    dir.write("histogram.csv", hist);

    // Agreement across estimators.
    std::vector<std::pair<std::string, Vector>> variants;
    for (const auto& tag : c.methods) {
        PipelineConfig pc = c.pipeline;
        if (tag == "adaptive-lasso") {
            pc.selector.kind = SelectorKind::cv_adaptive_lasso;
        } else {
            try {
                pc.method = effect_method_from_string(tag);
            } catch (const DomainError& e) {
                throw ConfigError(std::string("report.methods: ") + e.what() + " or adaptive-lasso");
            }
        }
        const bool same = pc.method == c.pipeline.method && pc.selector.kind == c.pipeline.selector.kind;
        variants.emplace_back(tag, same ? cate : run_pipeline(s.sample, pc).ensemble.bagged);
    }
    if (!variants.empty()) {
        const CorrelationMatrix cm = correlate_methods(variants);
        std::vector<std::string> header{"method"};
        header.insert(header.end(), cm.tags.begin(), cm.tags.end());
        Table corr(header);
        for (Index a = 0; a < cm.tags.size(); ++a) {
            std::vector<std::string> row{cm.tags[a]};
            for (Index b = 0; b < cm.tags.size(); ++b) row.push_back(Table::cell(cm.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))));
            corr.add(std::move(row));
        }
        dir.write("correlations.csv", corr);
    }

    dir.write("report.json",
              json{{"density", {{"bandwidth", dens.bandwidth}, {"points", dens.grid.size()}, {"integral", dens.trapezoid_integral()}}},
                   {"regression", {{"bandwidth", rbw}, {"gaps", std::count(curve.gap.begin(), curve.gap.end(), 1)}}},
                   {"sign_groups",
                    {{"nonnegative", sp.nonnegative},
                     {"negative", sp.negative},
                     {"nonnegative_empty", sp.nonnegative_empty()},
                     {"negative_empty", sp.negative_empty()}}},
                   {"balance_note",
                    "balance.csv reports standardized differences with denominator sqrt((var_t + var_c) / 2) "
                    "(std_diff) and sqrt(var_t + var_c) (std_diff_sum); published descriptive tables that use the "
                    "second form show values smaller by a factor sqrt(2)"}});
    dir.finish({{"report_hash", json_hash({{"infer", infer_hash(c)}, {"report", c.report_json()}})}, {"seed", *c.seed}});
    std::cout << "report written to " << o.out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// policy

int cmd_policy(const Options& o) {
    const RunConfig c = resolve(o);
    require_manifest(o.out, "fit", "fit_hash", fit_hash(c), "fit");
    refuse_overwrite(o, "policy");
    State s = build_state(c, o.out);
    const Vector cate = read_column(o.out / "predictions.csv", "bagged");
    if (static_cast<Index>(cate.size()) != s.sample.size()) throw ManifestError("predictions.csv does not match the data; rerun `hetfx fit`");
    const Dataset& data = s.prep.data;
    const Index treated = data.treated_count();

    std::vector<RuleConfig> rules = c.rules;
    if (rules.empty())
        for (RuleKind k : {RuleKind::observed, RuleKind::random, RuleKind::best_case, RuleKind::worst_case})
            rules.push_back(RuleConfig{to_string(k), k, std::nullopt, {}, 0});

    auto flag_column = [&](const std::string& name) {
        Vector col;
        if (auto j = find_name(data.characteristic_names(), name)) col = data.characteristics().col(static_cast<Eigen::Index>(*j));
        else if (auto j2 = find_name(data.heterogeneity_names(), name)) col = data.heterogeneity().col(static_cast<Eigen::Index>(*j2));
        else if (auto j3 = find_name(data.confounder_names(), name)) col = data.confounders().col(static_cast<Eigen::Index>(*j3));
        else throw SchemaError("policy predicate names unknown column '" + name + "'");
        Flags f(data.size());
        for (Index i = 0; i < f.size(); ++i) f[i] = col(static_cast<Eigen::Index>(i)) != 0.0;
        return f;
    };

    RunDir dir(o.out, "policy");
    Table table({"rule", "kind", "quota", "mean_cate", "size"});
    json report = json::array();
    std::vector<std::string> sel_header{"id"};
    std::vector<IndexList> selections;
    for (const auto& rc : rules) {
        PolicyRule rule;
        rule.name = rc.name;
        rule.kind = rc.kind;
        rule.quota = rc.quota.value_or(treated);
        rule.seed = derive_seed(*c.seed, StreamTag::policy, rc.seed);
        for (const auto& n : rc.predicate) rule.predicate.push_back(flag_column(n));
        const IndexList sel = select_participants(rule, cate, data.treatment(), data.obs_ids());
        const double v = evaluate_rule(sel, cate);
        table.row(rule.name, to_string(rule.kind), rule.quota, v, sel.size());
        report.push_back({{"rule", rule.name}, {"kind", to_string(rule.kind)}, {"quota", rule.quota}, {"mean_cate", v}, {"size", sel.size()}});
        sel_header.push_back(rule.name);
        selections.push_back(sel);
    }
    dir.write("policy.csv", table);
    dir.write("policy.json", json{{"rules", report}, {"rows", data.size()}, {"treated", treated}});
    Table sel_table(sel_header);
    std::vector<Flags> member(selections.size(), Flags(data.size(), 0));
    for (Index r = 0; r < selections.size(); ++r)
        for (Index i : selections[r]) member[r][i] = 1;
    for (Index i = 0; i < data.size(); ++i) {
        std::vector<std::string> row{data.obs_ids()[i]};
        for (Index r = 0; r < selections.size(); ++r) row.push_back(member[r][i] ? "1" : "0");
        sel_table.add(std::move(row));
    }
    dir.write("selections.csv", sel_table);
    dir.finish({{"policy_hash", json_hash({{"fit", fit_hash(c)}, {"policy", c.policy_json()}})}, {"seed", *c.seed}});
    for (const auto& r : report) std::cout << r["rule"].get<std::string>() << ": " << r["mean_cate"].get<double>() << "\n";
    return 0;
}

} // namespace
} // namespace hetfx::cli

int main(int argc, char** argv) {
    using namespace hetfx::cli;
    CLI::App app{"Heterogeneous treatment effects with the modified covariate method"};
    app.set_version_flag("--version", std::string(hetfx::kVersion));
    app.require_subcommand(1);
    Options o;
    std::string config, out = "out";
    std::uint64_t seed = 0;
    std::size_t workers = 0;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "YAML run configuration")->check(CLI::ExistingFile);
        sub->add_option("--out", out, "run directory")->capture_default_str();
        sub->add_option("--seed", seed, "master seed (overrides the config)");
        sub->add_option("--workers", workers, "worker threads (default: HETFX_WORKERS or 1)")->check(CLI::PositiveNumber);
        sub->add_flag("--force", o.force, "overwrite existing outputs of this command");
    };
    std::map<std::string, int (*)(const Options&)> commands = {
        {"simulate", cmd_simulate}, {"fit", cmd_fit}, {"infer", cmd_infer}, {"report", cmd_report}, {"policy", cmd_policy}};
    const std::map<std::string, std::string> help = {
        {"simulate", "generate a synthetic dataset with known effects"},
        {"fit", "propensity, trimming, honest splits and bagged CATEs"},
        {"infer", "bootstrap standard errors and average effects"},
        {"report", "distribution, low/high splits, sign profile, kernel curves, method correlations"},
        {"policy", "evaluate quota-constrained assignment rules"}};
    std::vector<CLI::App*> subs;
    for (const auto& [name, fn] : commands) {
        subs.push_back(app.add_subcommand(name, help.at(name)));
        add_common(subs.back());
    }
    CLI11_PARSE(app, argc, argv);
    try {
        for (auto* sub : subs) {
            if (!sub->parsed()) continue;
            o.config_path = config;
            o.out = out;
            if (sub->count("--seed")) o.seed = seed;
            if (sub->count("--workers")) o.workers = workers;
            return commands.at(sub->get_name())(o);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ManifestError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const hetfx::SchemaError& e) {
        std::cerr << "schema error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
