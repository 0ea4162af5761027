// embcert command-line driver: synth, fit, score, eval, sweep.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "embcert/embcert.hpp"

namespace {

using namespace embcert;
using json = nlohmann::ordered_json;

// JSON run configuration. Top-level keys set global options, objects set the
// options of the subcommand with that name. Underscores in keys map to dashes.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return {}; }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        json doc;
        try {
            doc = json::parse(input);
        } catch (const json::exception& e) {
            throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
        if (!doc.is_object()) {
            throw CLI::ConfigError("config must be a JSON object");
        }
        std::vector<CLI::ConfigItem> items;
        flatten(doc, {}, items);
        return items;
    }

private:
    static std::string option_name(std::string key) {
        std::replace(key.begin(), key.end(), '_', '-');
        return key;
    }

    static std::string scalar(const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    }

    static void flatten(const json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
        for (const auto& [key, value] : obj.items()) {
            if (value.is_object()) {
                auto sub = parents;
                sub.push_back(key);
                flatten(value, sub, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = option_name(key);
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            } else if (!value.is_null()) {
                item.inputs.push_back(scalar(value));
            }
            out.push_back(std::move(item));
        }
    }
};

// Tracks what a run writes so usage errors can leave nothing behind.
class RunContext {
public:
    fs::path out_dir = ".";

    fs::path in_out_dir(const std::string& explicit_path, const std::string& default_name) const {
        return explicit_path.empty() ? out_dir / default_name : fs::path(explicit_path);
    }

    void wrote(const fs::path& p) { written_.push_back(p); }

    void input(const fs::path& p) {
        inputs_[p.string()] = file_hash(p);
        const fs::path payload = batch_payload_path(p);
        if (p.extension() == ".jsonl" && fs::exists(payload)) {
            inputs_[payload.string()] = file_hash(payload);
        }
    }

    void begin_stage(std::string name) {
        stage_ = std::move(name);
        inputs_ = json::object();
        start_ = std::chrono::steady_clock::now();
    }

    void end_stage() {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        json outputs = json::array();
        for (const auto& p : written_) outputs.push_back(p.string());
        json line{{"stage", stage_}, {"wall_seconds", secs}, {"inputs", inputs_}, {"outputs", outputs}};
        const fs::path log = out_dir / "run_log.jsonl";
        std::string existing;
        if (fs::exists(log)) existing = read_file(log);
        atomic_write(log, existing + line.dump() + "\n");
    }

    void discard_outputs() {
        for (const auto& p : written_) {
            std::error_code ec;
            fs::remove(p, ec);
            if (p.extension() == ".jsonl") fs::remove(batch_payload_path(p), ec);
        }
        written_.clear();
    }

private:
    std::string stage_;
    json inputs_ = json::object();
    std::vector<fs::path> written_;
    std::chrono::steady_clock::time_point start_;
};

struct GlobalOpts {
    std::string out_dir = ".";
    int threads = 0;
    std::uint64_t seed = 0;
};

struct FitOpts {
    Index n_comp = 1;
    std::string cov = "full";
    double ridge_eps = 1e-6;
    int max_iters = 200;
    double rel_tol = 1e-6;
    int restarts = 1;
    double knn_frac = 0.01;
    Index knn_abs = 0;
    double tau = 0.5;
    bool renormalize = false;
};

void add_fit_options(CLI::App* app, FitOpts& o) {
    app->add_option("--n-comp", o.n_comp, "Mixture components")->check(CLI::PositiveNumber);
    app->add_option("--cov", o.cov, "Covariance structure")->check(CLI::IsMember({"full", "diagonal"}));
    app->add_option("--ridge-eps", o.ridge_eps, "Ridge added to covariance diagonals")->check(CLI::PositiveNumber);
    app->add_option("--max-iters", o.max_iters, "EM iteration cap")->check(CLI::PositiveNumber);
    app->add_option("--rel-tol", o.rel_tol, "Relative log-likelihood tolerance")->check(CLI::NonNegativeNumber);
    app->add_option("--restarts", o.restarts, "EM restarts")->check(CLI::PositiveNumber);
    app->add_option("--knn-frac", o.knn_frac, "Neighbors as a fraction of N")->check(CLI::Range(0.0, 1.0));
    app->add_option("--knn-abs", o.knn_abs, "Absolute neighbor count (overrides --knn-frac)")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--tau", o.tau, "Consistency threshold")->check(CLI::Range(0.0, 1.0));
    app->add_flag("--renormalize", o.renormalize, "Project non-unit embeddings back onto the sphere");
}

GmmFitConfig to_fit_config(const FitOpts& o, const GlobalOpts& g, int threads) {
    GmmFitConfig cfg;
    cfg.n_comp = o.n_comp;
    cfg.cov_structure = parse_cov_structure(o.cov);
    cfg.ridge_eps = o.ridge_eps;
    cfg.max_iters = o.max_iters;
    cfg.rel_tol = o.rel_tol;
    cfg.n_restarts = o.restarts;
    cfg.seed = g.seed;
    cfg.threads = threads;
    return cfg;
}

ConsistencyConfig to_consistency(const FitOpts& o) {
    ConsistencyConfig c;
    c.k = o.knn_abs > 0 ? KSpec::absolute(o.knn_abs) : KSpec::fraction(o.knn_frac);
    c.tau = o.tau;
    return c;
}

std::pair<std::string, std::string> split_id_path(const std::string& spec, const char* flag) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
        throw UsageError(std::string(flag) + " expects ID=PATH, got '" + spec + "'");
    }
    return {spec.substr(0, eq), spec.substr(eq + 1)};
}

std::vector<Measure> parse_measures(const std::vector<std::string>& names) {
    std::vector<Measure> out;
    for (const auto& n : names) {
        const Measure m = parse_measure(n);
        if (std::find(out.begin(), out.end(), m) != out.end()) {
            throw UsageError("measure '" + n + "' given twice");
        }
        out.push_back(m);
    }
    return out;
}

std::vector<Notion> parse_notions(const std::vector<std::string>& names, bool have_ood) {
    std::vector<Notion> out;
    if (names.empty()) {
        if (!have_ood) return {Notion::aleatoric};
        return {std::begin(kAllNotions), std::end(kAllNotions)};
    }
    for (const auto& n : names) out.push_back(parse_notion(n));
    for (Notion n : out) {
        if (n != Notion::aleatoric && !have_ood) {
            throw UsageError(std::string(to_string(n)) + " evaluation needs at least one --ood dataset");
        }
    }
    return out;
}

json option_value(const CLI::Option* opt) {
    if (opt->get_expected_min() == 0) {
        return opt->count() > 0 ? opt->as<bool>() : false;
    }
    const bool multi = opt->get_multi_option_policy() == CLI::MultiOptionPolicy::TakeAll ||
                       opt->get_expected_max() > 1;
    std::vector<std::string> raw = opt->results();
    if (raw.empty()) {
        const std::string def = opt->get_default_str();
        if (def.empty() || (multi && def == "[]")) return nullptr;
        if (!multi) raw = {def};
        else return nullptr;
    }
    const std::string type = opt->get_type_name();
    auto typed = [&](const std::string& s) -> json {
        if (type.rfind("TEXT", 0) != 0) {
            try {
                json v = json::parse(s);
                if (v.is_number()) return v;
            } catch (const json::exception&) {
            }
        }
        return s;
    };
    if (multi) {
        json arr = json::array();
        for (const auto& s : raw) arr.push_back(typed(s));
        return arr;
    }
    return typed(raw.back());
}

void add_options_json(const CLI::App* app, json& into) {
    for (const CLI::Option* opt : app->get_options()) {
        const auto& names = opt->get_lnames();
        if (names.empty()) continue;
        const std::string& name = names.front();
        if (name == "help" || name == "config" || name == "version") continue;
        json v = option_value(opt);
        if (v.is_null()) continue;
        std::string key = name;
        std::replace(key.begin(), key.end(), '-', '_');
        into[key] = std::move(v);
    }
}

// The fully resolved configuration, in the same shape --config accepts.
json resolved_config(const CLI::App& app, const CLI::App* sub) {
    json doc = json::object();
    add_options_json(&app, doc);
    json section = json::object();
    add_options_json(sub, section);
    doc[sub->get_name()] = section;
    return doc;
}

json world_truth_json(const SynthWorld& w) {
    const auto& c = w.config;
    json centers = json::array();
    for (Index i = 0; i < w.centers.rows(); ++i) {
        centers.push_back(std::vector<double>(w.centers.row(i).data(), w.centers.row(i).data() + w.centers.cols()));
    }
    json corrupted = json::array();
    for (bool b : w.train_corrupted) corrupted.push_back(b);
    return json{{"config",
                 {{"m", c.m},
                  {"n_clusters", c.n_clusters},
                  {"per_cluster_n", c.per_cluster_n},
                  {"kappa", c.kappa},
                  {"label_noise", c.label_noise},
                  {"n_views", c.n_views},
                  {"view_noise_sigma", c.view_noise_sigma},
                  {"ood_mode", c.ood_mode == OodMode::uniform_sphere ? "uniform_sphere" : "shifted_clusters"},
                  {"ood_angle", c.ood_angle},
                  {"test_per_cluster_n", c.test_per_cluster_n},
                  {"n_ood", c.n_ood},
                  {"seed", c.seed}}},
                {"centers", centers},
                {"train_true_labels", w.train_true_labels},
                {"train_corrupted", corrupted},
                {"test_labels", w.test_labels},
                {"test_downstream_accuracy", downstream_accuracy(w.downstream_test)}};
}

DatasetInputs load_dataset(RunContext& ctx, const std::string& id, const std::string& embeddings,
                           const std::string& batches, const std::string& downstream, bool renormalize) {
    DatasetInputs d;
    d.id = id;
    if (!embeddings.empty()) {
        ctx.input(embeddings);
        d.embeddings = read_embeddings(embeddings, renormalize).with_dataset_id(id);
    }
    if (!batches.empty()) {
        ctx.input(batches);
        d.batches = read_augmented_batches(batches, renormalize);
    }
    if (!downstream.empty()) {
        ctx.input(downstream);
        d.downstream = read_downstream(downstream);
    }
    return d;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Embedding reliability scores for contrastive representations", "embcert"};
    app.set_version_flag("--version", std::string(EMBCERT_VERSION));
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON run configuration; command-line flags take precedence");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOpts g;
    app.add_option("--out-dir", g.out_dir, "Directory for outputs, resolved_config.json and run_log.jsonl");
    app.add_option("--threads", g.threads, "Worker threads (0 = EMBCERT_THREADS or all cores)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--seed", g.seed, "Global seed");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic vMF world");
    SynthConfig sc;
    std::string ood_mode = "uniform_sphere";
    synth->add_option("--m", sc.m, "Embedding dimension");
    synth->add_option("--n-clusters", sc.n_clusters, "Number of classes");
    synth->add_option("--per-cluster-n", sc.per_cluster_n, "Training points per class");
    synth->add_option("--kappa", sc.kappa, "vMF concentration");
    synth->add_option("--label-noise", sc.label_noise, "Fraction of corrupted training labels");
    synth->add_option("--n-views", sc.n_views, "Augmented views per test sample");
    synth->add_option("--view-noise-sigma", sc.view_noise_sigma, "Gaussian view noise before renormalization");
    synth->add_option("--ood-mode", ood_mode, "uniform_sphere or shifted_clusters")
        ->check(CLI::IsMember({"uniform_sphere", "shifted_clusters"}));
    synth->add_option("--ood-angle", sc.ood_angle, "Center rotation for shifted_clusters, radians");
    synth->add_option("--test-per-cluster-n", sc.test_per_cluster_n, "Test samples per class (0 = per_cluster_n/5)");
    synth->add_option("--n-ood", sc.n_ood, "OOD samples (0 = size of the test set)");

    // fit
    auto* fit = app.add_subcommand("fit", "Fit a GMM density to training embeddings");
    FitOpts fo;
    std::string fit_train, fit_out, consistency_out;
    bool fit_filter = false;
    fit->add_option("--train", fit_train, "Training embeddings (EMB1 or CSV)")->required();
    add_fit_options(fit, fo);
    auto* filter_flag = fit->add_flag("--filter", fit_filter, "Fit only to k-NN label-consistent points");
    fit->add_option("--consistency-out", consistency_out, "CSV of per-point consistency scores")->needs(filter_flag);
    fit->add_option("--out", fit_out, "Model path (default <out-dir>/model.json or model_ktau.json)");

    // score
    auto* score = app.add_subcommand("score", "Score a dataset under one or more measures");
    std::vector<std::string> score_measures, score_models;
    std::string score_emb, score_batches, score_down, score_out;
    bool score_renorm = false;
    score->add_option("--measure", score_measures, "Measure name (repeatable)")->required();
    score->add_option("--model", score_models, "Fitted model (repeatable; matched by filter metadata)");
    score->add_option("--embeddings", score_emb, "Single-view embeddings");
    score->add_option("--batches", score_batches, "Augmented batch manifest (.jsonl)");
    score->add_option("--downstream", score_down, "Downstream classifier records (.jsonl)");
    score->add_flag("--renormalize", score_renorm, "Project non-unit embeddings back onto the sphere");
    score->add_option("--out", score_out, "Score CSV (default <out-dir>/scores.csv)");

    // eval
    auto* ev = app.add_subcommand("eval", "AUROC of precomputed scores per uncertainty notion");
    std::string ev_in, ev_down, ev_format = "csv", ev_out;
    std::vector<std::string> ev_ood, ev_notions;
    ev->add_option("--in-dist", ev_in, "ID=scores.csv of the in-distribution set")->required();
    ev->add_option("--ood", ev_ood, "ID=scores.csv of an out-of-distribution set (repeatable)");
    ev->add_option("--downstream", ev_down, "Downstream records of the in-distribution set");
    ev->add_option("--notion", ev_notions, "aleatoric, epistemic or overall (repeatable)");
    ev->add_option("--format", ev_format, "Report format")->check(CLI::IsMember({"csv", "json"}));
    ev->add_option("--out", ev_out, "Report path (default <out-dir>/report.<format>)");

    // sweep
    auto* sw = app.add_subcommand("sweep", "Ablation sweep over one axis");
    FitOpts so;
    std::string sw_axis, sw_train, sw_in_id = "in", sw_in_emb, sw_in_batches, sw_in_down, sw_out, sw_plot;
    std::vector<double> sw_values;
    std::vector<std::string> sw_ood, sw_ood_down, sw_measures, sw_notions;
    int sw_repeats = 1;
    sw->add_option("--axis", sw_axis, "n_comp, tau, k_frac or n_transforms")
        ->required()
        ->check(CLI::IsMember({"n_comp", "tau", "k_frac", "n_transforms"}));
    sw->add_option("--values", sw_values, "Axis values, strictly increasing")->required()->delimiter(',');
    sw->add_option("--repeats", sw_repeats, "Refits per value with seeds seed..seed+repeats-1")
        ->check(CLI::PositiveNumber);
    sw->add_option("--train", sw_train, "Training embeddings")->required();
    add_fit_options(sw, so);
    sw->add_option("--in-id", sw_in_id, "Name of the in-distribution set");
    sw->add_option("--in-embeddings", sw_in_emb, "In-distribution single-view embeddings");
    sw->add_option("--in-batches", sw_in_batches, "In-distribution augmented batches");
    sw->add_option("--in-downstream", sw_in_down, "In-distribution downstream records");
    sw->add_option("--ood", sw_ood, "ID=PATH of an OOD set; .jsonl is a batch manifest (repeatable)");
    sw->add_option("--ood-downstream", sw_ood_down, "ID=PATH downstream records of an OOD set (repeatable)");
    sw->add_option("--measure", sw_measures, "Measure name (repeatable)")->required();
    sw->add_option("--notion", sw_notions, "aleatoric, epistemic or overall (repeatable)");
    sw->add_option("--out", sw_out, "Sweep CSV (default <out-dir>/sweep.csv)");
    sw->add_option("--plot-data", sw_plot, "Also write plot-ready JSON series here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    RunContext ctx;
    ctx.out_dir = g.out_dir;
    const int threads = g.threads > 0 ? g.threads : default_threads();

    try {
        const fs::path cfg_path = ctx.out_dir / "resolved_config.json";
        atomic_write(cfg_path, resolved_config(app, sub).dump(2) + "\n");
        ctx.wrote(cfg_path);
        ctx.begin_stage(sub->get_name());

        if (sub == synth) {
            sc.seed = g.seed;
            sc.ood_mode = ood_mode == "uniform_sphere" ? OodMode::uniform_sphere : OodMode::shifted_clusters;
            const SynthWorld w = generate_world(sc);
            auto out = [&](const char* name) {
                const fs::path p = ctx.out_dir / name;
                ctx.wrote(p);
                return p;
            };
            write_embeddings(w.train, out("train.emb"));
            write_augmented_batches(w.test_batches, out("test_batches.jsonl"));
            write_embeddings(w.ood, out("ood.emb"));
            write_augmented_batches(w.ood_batches, out("ood_batches.jsonl"));
            write_downstream(w.downstream_test, out("downstream_test.jsonl"));
            write_downstream(w.downstream_ood, out("downstream_ood.jsonl"));
            atomic_write(out("world_truth.json"), world_truth_json(w).dump(1) + "\n");
        } else if (sub == fit) {
            ctx.input(fit_train);
            const EmbeddingSet train = read_embeddings(fit_train, fo.renormalize);
            const GmmFitConfig cfg = to_fit_config(fo, g, threads);
            const fs::path out = ctx.in_out_dir(fit_out, fit_filter ? "model_ktau.json" : "model.json");
            if (fit_filter) {
                if (!train.has_labels()) {
                    throw Error("'" + fit_train + "': --filter needs labeled training embeddings");
                }
                const FilterResult fr = filter_consistent(train, to_consistency(fo), threads);
                if (!consistency_out.empty()) {
                    write_consistency_csv(fr.scores, train.labels(), consistency_out);
                    ctx.wrote(consistency_out);
                }
                write_model(fit_gmm(fr.kept, cfg), out);
            } else {
                write_model(fit_gmm(train, cfg), out);
            }
            ctx.wrote(out);
        } else if (sub == score) {
            const std::vector<Measure> measures = parse_measures(score_measures);
            if (score_emb.empty() && score_batches.empty() && score_down.empty()) {
                throw UsageError("score needs --embeddings, --batches or --downstream");
            }
            std::vector<std::shared_ptr<const GmmModel>> models;
            for (const auto& p : score_models) {
                ctx.input(p);
                models.push_back(std::make_shared<const GmmModel>(read_model(p)));
            }
            std::vector<ScorerSpec> specs;
            for (Measure m : measures) {
                if (!is_density(m)) {
                    specs.emplace_back(m);
                    continue;
                }
                const bool want_filtered = is_consistency_filtered(m);
                std::shared_ptr<const GmmModel> chosen;
                for (const auto& model : models) {
                    if (model->fit_meta().filter.has_value() != want_filtered) continue;
                    if (chosen) {
                        throw UsageError("several models fit measure " + std::string(to_string(m)));
                    }
                    chosen = model;
                }
                if (!chosen) {
                    throw UsageError("measure " + std::string(to_string(m)) + " needs " +
                                     (want_filtered ? "a consistency-filtered" : "an unfiltered") +
                                     " model via --model");
                }
                specs.emplace_back(m, chosen);
            }
            const DatasetInputs d = load_dataset(ctx, "data", score_emb, score_batches, score_down, score_renorm);
            std::vector<ScoreVector> out;
            for (const auto& spec : specs) out.push_back(score_dataset(spec, d, threads));
            const fs::path path = ctx.in_out_dir(score_out, "scores.csv");
            write_scores(out, path);
            ctx.wrote(path);
        } else if (sub == ev) {
            const auto [in_id, in_path] = split_id_path(ev_in, "--in-dist");
            std::vector<std::pair<std::string, std::string>> oods;
            for (const auto& s : ev_ood) oods.push_back(split_id_path(s, "--ood"));
            const std::vector<Notion> notions = parse_notions(ev_notions, !oods.empty());
            ctx.input(in_path);
            const ScoredDataset in_scores{in_id, read_scores(in_path, in_id)};
            std::vector<ScoredDataset> ood_scores;
            for (const auto& [id, path] : oods) {
                ctx.input(path);
                ood_scores.push_back(ScoredDataset{id, read_scores(path, id)});
            }
            std::optional<std::vector<DownstreamRecord>> down;
            if (!ev_down.empty()) {
                ctx.input(ev_down);
                down = read_downstream(ev_down);
            }
            const ReportFormat fmt = parse_report_format(ev_format);
            const fs::path path = ctx.in_out_dir(ev_out, "report." + ev_format);
            write_report(evaluate_scored(in_scores, ood_scores, down, notions), path, fmt);
            ctx.wrote(path);
        } else if (sub == sw) {
            SweepGrid grid{parse_sweep_axis(sw_axis), sw_values, sw_repeats};
            std::vector<std::pair<std::string, std::string>> oods;
            for (const auto& s : sw_ood) oods.push_back(split_id_path(s, "--ood"));
            std::map<std::string, std::string> ood_down;
            for (const auto& s : sw_ood_down) {
                auto [id, path] = split_id_path(s, "--ood-downstream");
                if (std::none_of(oods.begin(), oods.end(), [&](const auto& o) { return o.first == id; })) {
                    throw UsageError("--ood-downstream names unknown OOD set '" + id + "'");
                }
                ood_down[id] = path;
            }
            const std::vector<Notion> notions = parse_notions(sw_notions, !oods.empty());
            const std::vector<Measure> measures = parse_measures(sw_measures);

            ctx.input(sw_train);
            SweepInputs in{read_embeddings(sw_train, so.renormalize),
                           load_dataset(ctx, sw_in_id, sw_in_emb, sw_in_batches, sw_in_down, so.renormalize),
                           {},
                           to_fit_config(so, g, 1),
                           to_consistency(so),
                           measures,
                           notions,
                           threads};
            for (const auto& [id, path] : oods) {
                const bool manifest = fs::path(path).extension() == ".jsonl";
                const auto dit = ood_down.find(id);
                in.ood.push_back(load_dataset(ctx, id, manifest ? "" : path, manifest ? path : "",
                                              dit == ood_down.end() ? "" : dit->second, so.renormalize));
            }
            const SweepTable table = sweep(grid, in);
            const fs::path path = ctx.in_out_dir(sw_out, "sweep.csv");
            write_sweep_csv(table, path);
            ctx.wrote(path);
            if (!sw_plot.empty()) {
                atomic_write(sw_plot, sweep_plot_data(table).dump(1) + "\n");
                ctx.wrote(sw_plot);
            }
        }
        ctx.end_stage();
    } catch (const UsageError& e) {
        ctx.discard_outputs();
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
