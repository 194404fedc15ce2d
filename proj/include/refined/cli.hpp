#pragma once

// Command-line front end: embed, irefined, stack, evaluate, diagnose.
//
// Every command reads one JSON config (--config) whose fields can be
// overridden by flags, writes its artifacts under output_dir, and finishes
// with manifest.json (config hash, counters, artifact list). Wall-clock
// timings go to run.log only, so JSON/CSV artifacts are reproducible.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

#include "refined/all.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace refined::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct RunConfig {
    std::string command;
    std::string input;
    std::string response_column = "y";
    std::string delimiter = ",";
    double clean_threshold = 0.10;
    std::string normalization = "minmax01";
    std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
    std::optional<std::uint64_t> split_seed;
    std::vector<ProjectionSpec> projections;
    std::string fusion = "arithmetic";
    std::string distance_source = "projection";
    bool rescale = true;
    int grid_size = 0;
    int max_sweeps = 100;
    std::string neighborhood = "auto";
    int smacof_max_iter = 1000;
    double smacof_tol = 1e-10;
    bool bmds_enabled = false;
    BmdsOptions bmds;
    InverseGammaPrior prior;
    std::optional<std::uint64_t> bmds_seed;
    std::string image_format = "png";
    double fill = 0.0;
    bool train_regressor = true;
    double lambda = 1.0;
    int window = 3;
    bool image_stacking = false;
    int bootstrap_B = 1000;
    std::optional<std::uint64_t> bootstrap_seed;
    int gap_kmax = 4;
    int gap_b_ref = 20;
    std::string truth;
    std::vector<std::string> predictions;
    std::string train_responses;
    std::vector<std::string> matrices;
    std::string output_dir;
    int threads = 1;
};

// ---------------------------------------------------------------------------
// Config <-> JSON

inline json spec_to_json(const ProjectionSpec& s) {
    json j{{"method", to_string(s.method)}, {"k", s.k}, {"tag", s.name()}};
    if (s.method == ProjectionMethod::le) {
        if (s.heat.binary) j["heat_sigma"] = "binary";
        else if (s.heat.sigma) j["heat_sigma"] = *s.heat.sigma;
        else j["heat_sigma"] = "median";
    }
    return j;
}

inline ProjectionSpec spec_from_json(const json& j) {
    ProjectionSpec s;
    s.method = parse_projection_method(j.at("method").get<std::string>());
    s.k = j.value("k", Index{6});
    s.tag = j.value("tag", std::string());
    if (j.contains("heat_sigma")) {
        const auto& h = j.at("heat_sigma");
        if (h.is_string()) {
            const auto v = h.get<std::string>();
            if (v == "binary") s.heat = HeatKernel::unit();
            else if (v != "median") throw config_error("BadHeatSigma", "heat_sigma must be a number, \"median\" or \"binary\"");
        } else {
            s.heat = HeatKernel::with_sigma(h.get<double>());
        }
    }
    return s;
}

template <typename T>
json opt_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

/// Full effective configuration; `threads` is a runtime knob and excluded.
inline json config_to_json(const RunConfig& c) {
    json specs = json::array();
    for (const auto& s : c.projections) specs.push_back(spec_to_json(s));
    return json{
        {"command", c.command},
        {"input", c.input},
        {"response_column", c.response_column},
        {"delimiter", c.delimiter},
        {"clean_threshold", c.clean_threshold},
        {"normalization", c.normalization},
        {"split", {{"ratios", c.split_ratios}, {"seed", opt_json(c.split_seed)}}},
        {"projections", specs},
        {"fusion", c.fusion},
        {"distance_source", c.distance_source},
        {"rescale", c.rescale},
        {"grid_size", c.grid_size},
        {"hill_climb", {{"max_sweeps", c.max_sweeps}, {"neighborhood", c.neighborhood}}},
        {"smacof", {{"max_iter", c.smacof_max_iter}, {"tol", c.smacof_tol}}},
        {"bmds",
         {{"enabled", c.bmds_enabled},
          {"iters", c.bmds.iters},
          {"burn_in", c.bmds.burn_in},
          {"step", c.bmds.step},
          {"alpha", c.prior.alpha},
          {"beta", c.prior.beta},
          {"seed", opt_json(c.bmds_seed)}}},
        {"image_format", c.image_format},
        {"fill", c.fill},
        {"regressor", {{"train", c.train_regressor}, {"lambda", c.lambda}, {"window", c.window}}},
        {"image_stacking", c.image_stacking},
        {"bootstrap", {{"B", c.bootstrap_B}, {"seed", opt_json(c.bootstrap_seed)}}},
        {"gap", {{"kmax", c.gap_kmax}, {"b_ref", c.gap_b_ref}}},
        {"truth", c.truth},
        {"predictions", c.predictions},
        {"train_responses", c.train_responses},
        {"matrices", c.matrices},
        {"output_dir", c.output_dir},
    };
}

template <typename T>
void read_opt(const json& j, const char* key, std::optional<T>& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void config_from_json(const json& j, RunConfig& c) {
    try {
        read(j, "input", c.input);
        read(j, "response_column", c.response_column);
        read(j, "delimiter", c.delimiter);
        read(j, "clean_threshold", c.clean_threshold);
        read(j, "normalization", c.normalization);
        if (j.contains("split")) {
            const auto& s = j.at("split");
            if (s.contains("ratios")) {
                auto r = s.at("ratios").get<std::vector<double>>();
                if (r.size() != 3) throw config_error("BadRatios", "split.ratios needs 3 entries");
                c.split_ratios = {r[0], r[1], r[2]};
            }
            read_opt(s, "seed", c.split_seed);
        }
        if (j.contains("projections")) {
            c.projections.clear();
            for (const auto& s : j.at("projections")) c.projections.push_back(spec_from_json(s));
        }
        read(j, "fusion", c.fusion);
        read(j, "distance_source", c.distance_source);
        read(j, "rescale", c.rescale);
        if (j.contains("grid_size")) {
            const auto& g = j.at("grid_size");
            c.grid_size = g.is_string() ? (g.get<std::string>() == "auto" ? 0 : throw config_error("BadGrid", "grid_size must be an integer or \"auto\"")) : g.get<int>();
        }
        if (j.contains("hill_climb")) {
            read(j.at("hill_climb"), "max_sweeps", c.max_sweeps);
            read(j.at("hill_climb"), "neighborhood", c.neighborhood);
        }
        if (j.contains("smacof")) {
            read(j.at("smacof"), "max_iter", c.smacof_max_iter);
            read(j.at("smacof"), "tol", c.smacof_tol);
        }
        if (j.contains("bmds")) {
            const auto& b = j.at("bmds");
            read(b, "enabled", c.bmds_enabled);
            read(b, "iters", c.bmds.iters);
            read(b, "burn_in", c.bmds.burn_in);
            read(b, "step", c.bmds.step);
            read(b, "alpha", c.prior.alpha);
            read(b, "beta", c.prior.beta);
            read_opt(b, "seed", c.bmds_seed);
        }
        read(j, "image_format", c.image_format);
        read(j, "fill", c.fill);
        if (j.contains("regressor")) {
            read(j.at("regressor"), "train", c.train_regressor);
            read(j.at("regressor"), "lambda", c.lambda);
            read(j.at("regressor"), "window", c.window);
        }
        read(j, "image_stacking", c.image_stacking);
        if (j.contains("bootstrap")) {
            read(j.at("bootstrap"), "B", c.bootstrap_B);
            read_opt(j.at("bootstrap"), "seed", c.bootstrap_seed);
        }
        if (j.contains("gap")) {
            read(j.at("gap"), "kmax", c.gap_kmax);
            read(j.at("gap"), "b_ref", c.gap_b_ref);
        }
        read(j, "truth", c.truth);
        read(j, "predictions", c.predictions);
        read(j, "train_responses", c.train_responses);
        read(j, "matrices", c.matrices);
        read(j, "output_dir", c.output_dir);
        read(j, "threads", c.threads);
    } catch (const json::exception& e) {
        throw config_error("BadConfig", e.what());
    }
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a(config_to_json(c).dump())); }

// ---------------------------------------------------------------------------
// Validation

inline void require_file(const std::string& path, const std::string& field) {
    if (path.empty()) throw config_error("MissingField", "config field '" + field + "' is required");
    if (!fs::exists(path)) throw config_error("MissingFile", "config field '" + field + "': no such file '" + path + "'");
}

inline void require_seed(const std::optional<std::uint64_t>& s, const std::string& field) {
    if (!s) throw config_error("MissingSeed", "config field '" + field + "' is required (seeds are never defaulted)");
}

inline char delimiter_char(const RunConfig& c) {
    if (c.delimiter == "," ) return ',';
    if (c.delimiter == "\t" || c.delimiter == "tab") return '\t';
    if (c.delimiter.size() == 1) return c.delimiter[0];
    throw config_error("BadDelimiter", "delimiter must be a single character or \"tab\"");
}

inline LayoutOptions layout_options(const RunConfig& c) {
    LayoutOptions o;
    o.distance_source = parse_distance_source(c.distance_source);
    o.rescale = c.rescale;
    o.grid_size = c.grid_size;
    o.max_sweeps = c.max_sweeps;
    if (c.neighborhood == "all_pairs") o.neighborhood = Neighborhood::all_pairs;
    else if (c.neighborhood == "adjacent_cells") o.neighborhood = Neighborhood::adjacent_cells;
    else if (c.neighborhood != "auto") throw config_error("BadNeighborhood", "hill_climb.neighborhood must be auto, all_pairs or adjacent_cells");
    o.smacof_max_iter = c.smacof_max_iter;
    o.smacof_tol = c.smacof_tol;
    o.use_bmds = c.bmds_enabled;
    o.bmds = c.bmds;
    if (c.bmds_seed) o.bmds.seed = *c.bmds_seed;
    o.prior = c.prior;
    return o;
}

inline void validate_common_table(const RunConfig& c) {
    require_file(c.input, "input");
    if (c.output_dir.empty()) throw config_error("MissingField", "config field 'output_dir' is required");
    require_seed(c.split_seed, "split.seed");
    if (c.bmds_enabled) require_seed(c.bmds_seed, "bmds.seed");
    parse_normalization_mode(c.normalization);
    parse_fusion_mode(c.fusion);
    parse_distance_source(c.distance_source);
    parse_image_format(c.image_format);
    delimiter_char(c);
    layout_options(c);
    if (c.grid_size < 0) throw config_error("BadGrid", "grid_size must be >= 0");
    if (c.window < 1 || c.window % 2 == 0) throw config_error("BadWindow", "regressor.window must be a positive odd integer");
    if (c.lambda < 0) throw config_error("BadLambda", "regressor.lambda must be >= 0");
}

inline void validate(const RunConfig& c) {
    if (c.command == "embed") {
        validate_common_table(c);
        if (c.projections.size() != 1) throw config_error("BadProjections", "embed needs exactly one entry in 'projections'");
    } else if (c.command == "irefined") {
        validate_common_table(c);
        if (c.projections.size() < 2) throw config_error("TooFewMetrics", "irefined requires at least 2 entries in 'projections'");
    } else if (c.command == "stack") {
        validate_common_table(c);
        if (c.projections.empty()) throw config_error("BadProjections", "stack needs at least one entry in 'projections'");
    } else if (c.command == "evaluate") {
        require_file(c.truth, "truth");
        require_file(c.train_responses, "train_responses");
        if (c.predictions.empty()) throw config_error("MissingField", "config field 'predictions' is required");
        for (std::size_t i = 0; i < c.predictions.size(); ++i) require_file(c.predictions[i], "predictions[" + std::to_string(i) + "]");
        if (c.output_dir.empty()) throw config_error("MissingField", "config field 'output_dir' is required");
        require_seed(c.bootstrap_seed, "bootstrap.seed");
        if (c.bootstrap_B < 100) throw config_error("TooFewReplicates", "bootstrap.B must be >= 100");
    } else if (c.command == "diagnose") {
        if (c.output_dir.empty()) throw config_error("MissingField", "config field 'output_dir' is required");
        if (c.matrices.empty()) {
            validate_common_table(c);
            if (c.projections.empty()) throw config_error("BadProjections", "diagnose needs 'matrices' or 'projections'");
        } else {
            for (std::size_t i = 0; i < c.matrices.size(); ++i) require_file(c.matrices[i], "matrices[" + std::to_string(i) + "]");
            if (c.matrices.size() < 2) throw config_error("TooFewMatrices", "diagnose needs at least 2 matrices");
        }
    } else {
        throw config_error("UnknownCommand", "unknown command '" + c.command + "'");
    }
}

// ---------------------------------------------------------------------------
// Run context: artifact bookkeeping, manifest, timing log

class RunContext {
public:
    explicit RunContext(const RunConfig& c) : cfg_(c), root_(c.output_dir) {
        std::error_code ec;
        fs::create_directories(root_, ec);
        if (ec) throw data_error("Unwritable", "cannot create output_dir '" + c.output_dir + "': " + ec.message());
        start_ = std::chrono::steady_clock::now();
        stage_start_ = start_;
    }

    std::string path(const std::string& rel) const {
        const auto full = root_ / rel;
        fs::create_directories(full.parent_path());
        return full.string();
    }

    std::string dir(const std::string& rel) const {
        const auto full = rel.empty() ? root_ : root_ / rel;
        fs::create_directories(full);
        return full.string();
    }

    void add(const std::string& rel) { artifacts_.push_back(rel); }
    void add_all(const std::string& prefix, const std::vector<std::string>& rels) {
        for (const auto& r : rels) artifacts_.push_back(prefix.empty() ? r : prefix + "/" + r);
    }

    void write_json(const std::string& rel, const json& j) {
        std::ofstream out(path(rel));
        if (!out) throw data_error("Unwritable", "cannot write " + rel);
        out << j.dump(2) << '\n';
        add(rel);
    }

    void stage(const std::string& name) {
        const auto now = std::chrono::steady_clock::now();
        timings_.emplace_back(name, std::chrono::duration<double>(now - stage_start_).count());
        stage_start_ = now;
    }

    void log(const std::string& line) { log_lines_.push_back(line); }

    PipelineCounters counters;

    void finish() {
        write_json("config.json", config_to_json(cfg_));
        std::sort(artifacts_.begin(), artifacts_.end());
        artifacts_.erase(std::unique(artifacts_.begin(), artifacts_.end()), artifacts_.end());
        auto arts = artifacts_;
        arts.push_back("manifest.json");
        std::sort(arts.begin(), arts.end());
        json m{{"command", cfg_.command}, {"config_hash", config_hash(cfg_)}, {"counters", counters}, {"artifacts", arts}};
        std::ofstream out(path("manifest.json"));
        out << m.dump(2) << '\n';

        std::ofstream lg(path("run.log"));
        lg << "command " << cfg_.command << "\nthreads " << cfg_.threads << '\n';
        for (const auto& [name, secs] : timings_) lg << "stage " << name << ' ' << secs << " s\n";
        lg << "total " << std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count() << " s\n";
        for (const auto& l : log_lines_) lg << l << '\n';
    }

private:
    RunConfig cfg_;
    fs::path root_;
    std::vector<std::string> artifacts_;
    std::vector<std::pair<std::string, double>> timings_;
    std::vector<std::string> log_lines_;
    std::chrono::steady_clock::time_point start_, stage_start_;
};

inline void save_embedding_csv(const Embedding& e, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("Unwritable", "cannot write " + path);
    out << "feature_label,x,y,method_tag\n";
    for (Index j = 0; j < e.p(); ++j)
        out << e.labels[static_cast<std::size_t>(j)] << ',' << detail::format_real(e.coords(j, 0)) << ','
            << detail::format_real(e.coords(j, 1)) << ',' << e.method_tag << '\n';
}

inline void save_trace_csv(const std::vector<double>& trace, const std::string& header, const std::string& path) {
    std::ofstream out(path);
    out << "step," << header << '\n';
    for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << detail::format_real(trace[i]) << '\n';
}

inline Vector subset(const Vector& v, const std::vector<Index>& idx) {
    Vector out(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Index>(i)) = v(idx[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Shared data preparation

struct PreparedData {
    FeatureTable cleaned;     // after clean_samples
    FeatureTable normalized;  // fitted on train rows, clipped into [0,1]
    FeatureTable train;       // normalized training rows
    SplitIndex split;
    NormalizationParams params;
};

inline PreparedData prepare_data(const RunConfig& c, RunContext& ctx) {
    PreparedData d;
    auto raw = load_feature_table(c.input, c.response_column, delimiter_char(c));
    d.cleaned = clean_samples(raw, c.clean_threshold);
    require_embeddable(d.cleaned);
    d.split = split_samples(static_cast<std::size_t>(d.cleaned.n()), c.split_ratios, *c.split_seed);
    ctx.write_json("split.json", d.split);
    d.params = fit_normalization(d.cleaned, parse_normalization_mode(c.normalization), d.split.train);
    auto norm = apply_normalization(d.cleaned, d.params);
    if (d.params.mode == NormalizationMode::zscore) {
        // Map z-scores into [0,1] for rendering with a train-fitted min-max.
        auto [mm, mm_params] = normalize_features(subset_rows(norm, d.split.train), NormalizationMode::minmax01);
        (void)mm;
        norm = apply_normalization(norm, mm_params);
    }
    d.normalized = clip_to_unit(norm);
    d.train = subset_rows(d.normalized, d.split.train);
    ctx.write_json("normalization.json", d.params);
    ctx.stage("prepare");
    return d;
}

inline void write_images(const RefinedImageSet& set, const RunConfig& c, RunContext& ctx, const std::string& sub) {
    auto written = save_images(set, ctx.dir(sub), parse_image_format(c.image_format));
    ctx.add_all(sub, written);
}

inline void write_truth(const FeatureTable& t, const std::vector<Index>& rows, const std::string& path) {
    PredictionSet ps;
    ps.model_tags = {"y"};
    ps.yhat.resize(static_cast<Index>(rows.size()), 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ps.sample_ids.push_back(t.sample_ids[static_cast<std::size_t>(rows[i])]);
        ps.yhat(static_cast<Index>(i), 0) = t.response(rows[i]);
    }
    save_predictions(ps, path);
}

inline PredictionSet single_column(const std::string& tag, const Vector& v, const FeatureTable& t, const std::vector<Index>& rows) {
    PredictionSet ps;
    ps.model_tags = {tag};
    ps.yhat = v;
    for (auto i : rows) ps.sample_ids.push_back(t.sample_ids[static_cast<std::size_t>(i)]);
    return ps;
}

/// Trains the reference regressor on training images and scores the test rows.
inline void regress_and_score(const RefinedImageSet& images, const PreparedData& d, const RunConfig& c, RunContext& ctx,
                              const std::string& tag) {
    auto pick = [&](const std::vector<Index>& rows) {
        RefinedImageSet s;
        s.assignment = images.assignment;
        s.fill = images.fill;
        for (auto i : rows) {
            s.images.push_back(images.images[static_cast<std::size_t>(i)]);
            s.sample_ids.push_back(images.sample_ids[static_cast<std::size_t>(i)]);
        }
        return s;
    };
    const Vector y_train = subset(d.normalized.response, d.split.train);
    auto model = fit_reference_regressor(pick(d.split.train), y_train, c.lambda, c.window, &ctx.counters);
    ctx.write_json("regressor.json", model);
    const Vector pred = predict_reference(model, pick(d.split.test));
    save_predictions(single_column(tag, pred, d.normalized, d.split.test), ctx.path("predictions_test.csv"));
    ctx.add("predictions_test.csv");
    write_truth(d.normalized, d.split.test, ctx.path("truth_test.csv"));
    ctx.add("truth_test.csv");
    write_truth(d.normalized, d.split.train, ctx.path("train_responses.csv"));
    ctx.add("train_responses.csv");
    const Vector y_test = subset(d.normalized.response, d.split.test);
    if (y_test.size() >= 2) {
        try {
            ctx.write_json("metrics_test.json", score(y_test, pred, y_train.mean()));
        } catch (const Error& e) {
            ctx.log(std::string("metrics skipped: ") + e.what());
        }
    }
    ctx.stage("regressor");
}

// ---------------------------------------------------------------------------
// Commands

inline void cmd_embed(const RunConfig& c) {
    RunContext ctx(c);
    auto d = prepare_data(c, ctx);
    const auto opt = layout_options(c);
    auto r = refined_single(d.train, c.projections.front(), opt, &ctx.counters);
    ctx.stage("layout");

    save_embedding_csv(r.embedding, ctx.path("embedding.csv"));
    ctx.add("embedding.csv");
    auto layout = r.layout.layout;
    layout.method_tag = "refined-" + c.projections.front().name();
    save_embedding_csv(layout, ctx.path("layout.csv"));
    ctx.add("layout.csv");
    save_distance_csv(r.target, ctx.path("target_distances.csv"));
    ctx.add("target_distances.csv");
    save_trace_csv(r.layout.climb.cost_trace, "cost", ctx.path("hill_climb_trace.csv"));
    ctx.add("hill_climb_trace.csv");

    auto images = render_images(r.assignment(), d.normalized, c.fill);
    write_images(images, c, ctx, "");
    ctx.stage("render");
    if (c.train_regressor) regress_and_score(images, d, c, ctx, r.embedding.method_tag);
    ctx.finish();
}

inline void cmd_irefined(const RunConfig& c) {
    RunContext ctx(c);
    auto d = prepare_data(c, ctx);
    const auto opt = layout_options(c);
    const auto mode = parse_fusion_mode(c.fusion);
    auto r = irefined_pipeline(d.train, c.projections, mode, opt, &ctx.counters);
    ctx.stage("layout");

    for (std::size_t a = 0; a < r.embeddings.size(); ++a) {
        const auto name = c.projections[a].name();
        save_embedding_csv(r.embeddings[a], ctx.path("candidates/" + name + "_embedding.csv"));
        ctx.add("candidates/" + name + "_embedding.csv");
        save_distance_csv(r.candidates[a], ctx.path("candidates/" + name + "_distances.csv"));
        ctx.add("candidates/" + name + "_distances.csv");
    }
    save_distance_csv(r.fused().d_bar, ctx.path("fused_distances.csv"));
    ctx.add("fused_distances.csv");
    ctx.write_json("precision.json", {{"mode", to_string(mode)},
                                      {"sigma2", r.report["sigma2"]},
                                      {"objective", r.precision.objective},
                                      {"iterations", r.precision.iterations}});
    auto layout = r.layout.layout;
    layout.method_tag = "irefined-" + to_string(mode);
    save_embedding_csv(layout, ctx.path("layout.csv"));
    ctx.add("layout.csv");
    save_trace_csv(r.layout.climb.cost_trace, "cost", ctx.path("hill_climb_trace.csv"));
    ctx.add("hill_climb_trace.csv");
    if (r.layout.bmds) {
        std::ofstream tr(ctx.path("bmds_trace.jsonl"));
        write_trace_jsonl(r.layout.bmds->trace, tr);
        ctx.add("bmds_trace.jsonl");
    }
    ctx.write_json("report.json", r.report);

    auto images = render_images(r.assignment(), d.normalized, c.fill);
    write_images(images, c, ctx, "");
    ctx.stage("render");
    if (c.train_regressor) regress_and_score(images, d, c, ctx, layout.method_tag);
    ctx.finish();
}

inline void cmd_stack(const RunConfig& c) {
    RunContext ctx(c);
    auto d = prepare_data(c, ctx);
    const auto opt = layout_options(c);
    const auto& tr = d.split.train;
    const auto& va = d.split.validation;
    const auto& te = d.split.test;
    const Vector y_train = subset(d.normalized.response, tr);
    const Vector y_val = subset(d.normalized.response, va);
    const Vector y_test = subset(d.normalized.response, te);

    std::vector<RefinedImageSet> sets;
    std::vector<std::string> tags;
    PredictionSet pv, pt;
    pv.yhat.resize(static_cast<Index>(va.size()), static_cast<Index>(c.projections.size()));
    pt.yhat.resize(static_cast<Index>(te.size()), static_cast<Index>(c.projections.size()));
    for (auto i : va) pv.sample_ids.push_back(d.normalized.sample_ids[static_cast<std::size_t>(i)]);
    for (auto i : te) pt.sample_ids.push_back(d.normalized.sample_ids[static_cast<std::size_t>(i)]);

    auto rows_of = [](const RefinedImageSet& s, const std::vector<Index>& rows) {
        RefinedImageSet out;
        out.assignment = s.assignment;
        out.fill = s.fill;
        for (auto i : rows) {
            out.images.push_back(s.images[static_cast<std::size_t>(i)]);
            out.sample_ids.push_back(s.sample_ids[static_cast<std::size_t>(i)]);
        }
        return out;
    };

    for (std::size_t a = 0; a < c.projections.size(); ++a) {
        const auto& spec = c.projections[a];
        const auto name = spec.name();
        auto r = refined_single(d.train, spec, opt, &ctx.counters);
        auto images = render_images(r.assignment(), d.normalized, c.fill);
        write_images(images, c, ctx, "models/" + name);
        save_trace_csv(r.layout.climb.cost_trace, "cost", ctx.path("models/" + name + "/hill_climb_trace.csv"));
        ctx.add("models/" + name + "/hill_climb_trace.csv");
        auto model = fit_reference_regressor(rows_of(images, tr), y_train, c.lambda, c.window, &ctx.counters);
        ctx.write_json("models/" + name + "/regressor.json", model);
        pv.yhat.col(static_cast<Index>(a)) = predict_reference(model, rows_of(images, va));
        pt.yhat.col(static_cast<Index>(a)) = predict_reference(model, rows_of(images, te));
        tags.push_back(name);
        sets.push_back(std::move(images));
        ctx.stage("model " + name);
    }
    pv.model_tags = tags;
    pt.model_tags = tags;

    auto stack = fit_stacking(pv, y_val);
    ctx.write_json("stacking.json", stack);
    const Vector stacked_val = predict_stacked(stack, pv);
    const Vector stacked_test = predict_stacked(stack, pt);

    auto rmse = [](const Vector& y, const Vector& p) { return std::sqrt((y - p).squaredNorm() / static_cast<double>(y.size())); };
    double best_single = std::numeric_limits<double>::infinity();
    json val_rmse = json::object();
    for (Index a = 0; a < pv.models(); ++a) {
        const double v = rmse(y_val, pv.yhat.col(a));
        val_rmse[tags[static_cast<std::size_t>(a)]] = v;
        best_single = std::min(best_single, v);
    }
    const double stacked_rmse = rmse(y_val, stacked_val);
    val_rmse["stacked"] = stacked_rmse;
    const bool optimal = stacked_rmse <= best_single + 1e-9;
    ctx.log(std::string("stack validation rmse check ") + (optimal ? "passed" : "FAILED"));
    if (!optimal) warn("stacked validation RMSE exceeds the best single model");

    PredictionSet out_val = pv, out_test = pt;
    auto append = [](PredictionSet& ps, const std::string& tag, const Vector& v) {
        ps.model_tags.push_back(tag);
        ps.yhat.conservativeResize(Eigen::NoChange, ps.yhat.cols() + 1);
        ps.yhat.col(ps.yhat.cols() - 1) = v;
    };
    append(out_val, "stacked", stacked_val);
    append(out_test, "stacked", stacked_test);

    if (c.image_stacking) {
        auto tensors = stack_images(sets, tags);
        auto pick = [&](const std::vector<Index>& rows) {
            ImageTensorSet s;
            s.grid_size = tensors.grid_size;
            s.channel_tags = tensors.channel_tags;
            for (auto i : rows) {
                s.tensors.push_back(tensors.tensors[static_cast<std::size_t>(i)]);
                s.sample_ids.push_back(tensors.sample_ids[static_cast<std::size_t>(i)]);
            }
            return s;
        };
        auto model = fit_reference_regressor(pick(tr), y_train, c.lambda, c.window, &ctx.counters);
        ctx.write_json("image_stack_regressor.json", model);
        append(out_val, "image_stack", predict_reference(model, pick(va)));
        append(out_test, "image_stack", predict_reference(model, pick(te)));
        ctx.stage("image stacking");
    }

    save_predictions(out_val, ctx.path("predictions_validation.csv"));
    ctx.add("predictions_validation.csv");
    save_predictions(out_test, ctx.path("predictions_test.csv"));
    ctx.add("predictions_test.csv");
    write_truth(d.normalized, te, ctx.path("truth_test.csv"));
    ctx.add("truth_test.csv");
    write_truth(d.normalized, tr, ctx.path("train_responses.csv"));
    ctx.add("train_responses.csv");
    ctx.write_json("stack_report.json", {{"validation_rmse", val_rmse}, {"stack_not_worse_than_best_single", optimal}});
    ctx.finish();
}

inline void cmd_evaluate(const RunConfig& c) {
    RunContext ctx(c);
    const auto truth = load_predictions(c.truth);
    const auto train = load_predictions(c.train_responses);
    if (truth.models() < 1 || train.models() < 1) throw data_error("MalformedTruth", "truth files need a response column");
    const Vector y = truth.yhat.col(0);
    const Vector y_train = train.yhat.col(0);
    const double ybar = y_train.mean();

    // Align every prediction column with the truth by sample id.
    std::map<std::string, Index> row_of;
    for (std::size_t i = 0; i < truth.sample_ids.size(); ++i) row_of[truth.sample_ids[i]] = static_cast<Index>(i);
    PredictionSet all;
    all.sample_ids = truth.sample_ids;
    all.yhat.resize(truth.n(), 0);
    for (const auto& path : c.predictions) {
        auto ps = load_predictions(path);
        for (Index a = 0; a < ps.models(); ++a) {
            Vector col = Vector::Constant(truth.n(), std::numeric_limits<double>::quiet_NaN());
            for (Index i = 0; i < ps.n(); ++i) {
                auto it = row_of.find(ps.sample_ids[static_cast<std::size_t>(i)]);
                if (it == row_of.end()) throw data_error("UnknownSample", "prediction for unknown sample '" + ps.sample_ids[static_cast<std::size_t>(i)] + "'");
                col(it->second) = ps.yhat(i, a);
            }
            if (!col.allFinite()) throw data_error("MissingPrediction", path + ": column '" + ps.model_tags[static_cast<std::size_t>(a)] + "' misses test samples");
            std::string tag = ps.model_tags[static_cast<std::size_t>(a)];
            while (std::find(all.model_tags.begin(), all.model_tags.end(), tag) != all.model_tags.end()) tag += "_";
            all.model_tags.push_back(tag);
            all.yhat.conservativeResize(Eigen::NoChange, all.yhat.cols() + 1);
            all.yhat.col(all.yhat.cols() - 1) = col;
        }
    }
    const Index n_candidates = all.models();
    all.model_tags.push_back("null");
    all.yhat.conservativeResize(Eigen::NoChange, all.yhat.cols() + 1);
    all.yhat.col(all.yhat.cols() - 1) = null_model_predictions(y_train, truth.n(), derive_seed(*c.bootstrap_seed, 0x6e756c6cULL));
    save_predictions(all, ctx.path("predictions_with_null.csv"));
    ctx.add("predictions_with_null.csv");

    json point = json::object();
    for (Index a = 0; a < all.models(); ++a) point[all.model_tags[static_cast<std::size_t>(a)]] = score(y, Vector(all.yhat.col(a)), ybar);
    ctx.write_json("metrics.json", point);
    ctx.stage("score");

    auto boot = bootstrap_metrics(y, all, ybar, c.bootstrap_B, *c.bootstrap_seed, c.threads);
    ctx.write_json("bootstrap.json", boot);
    {
        std::ofstream out(ctx.path("bootstrap_replicates.csv"));
        out << "model,replicate,nrmse,nmae,pcc,bias\n";
        for (const auto& s : boot)
            for (int r = 0; r < s.B; ++r) {
                out << s.model_tag << ',' << r;
                for (auto m : kAllMetrics) out << ',' << detail::format_real(s.values(m)[static_cast<std::size_t>(r)]);
                out << '\n';
            }
        ctx.add("bootstrap_replicates.csv");
    }
    ctx.stage("bootstrap");

    json robust = json::object();
    for (const auto& a : boot) {
        json row = json::object();
        for (const auto& b : boot) {
            if (a.model_tag == b.model_tag) continue;
            json m = json::object();
            for (auto metric : kAllMetrics) m[to_string(metric)] = robustness_wins(a, b, metric);
            row[b.model_tag] = m;
        }
        robust[a.model_tag] = row;
    }
    ctx.write_json("robustness.json", robust);

    json gaps = json::object();
    GapOptions gopt;
    gopt.kmax = c.gap_kmax;
    gopt.b_ref = c.gap_b_ref;
    gopt.seed = derive_seed(*c.bootstrap_seed, 0x676170ULL);
    gopt.threads = c.threads;
    for (Index a = 0; a < n_candidates; ++a) {
        const auto pts = replicate_points(boot[static_cast<std::size_t>(a)], boot.back());
        gaps[boot[static_cast<std::size_t>(a)].model_tag] = gap_statistic(pts, gopt, boot[static_cast<std::size_t>(a)].B);
    }
    ctx.write_json("gap.json", gaps);
    ctx.stage("gap");
    ctx.finish();
}

inline void cmd_diagnose(const RunConfig& c) {
    RunContext ctx(c);
    std::vector<DistanceMatrix> mats;
    std::vector<std::string> names;
    if (!c.matrices.empty()) {
        for (const auto& p : c.matrices) {
            mats.push_back(load_distance_csv(p));
            names.push_back(fs::path(p).stem().string());
        }
    } else {
        auto d = prepare_data(c, ctx);
        const auto euclid = pairwise_euclidean(d.train);
        mats.push_back(euclid);
        names.push_back("euclidean");
        for (const auto& spec : c.projections) {
            auto e = project(spec, d.train, euclid);
            ++ctx.counters.projections_run;
            mats.push_back(embedding_distances(normalize_to_unit_square(e)));
            names.push_back(spec.name());
            save_distance_csv(mats.back(), ctx.path("distances/" + spec.name() + ".csv"));
            ctx.add("distances/" + spec.name() + ".csv");
        }
    }
    const auto A = mats.size();
    std::vector<std::vector<double>> tau(A, std::vector<double>(A, 1.0));
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t b = a + 1; b < A; ++b) tau[a][b] = tau[b][a] = kendall_tau_distances(mats[a], mats[b]);
    json kl = json::object();
    for (std::size_t a = 1; a < A; ++a) {
        json entry{{"original", kl_divergence_distances(mats[0], mats[a], false)}};
        bool positive = true;
        for (const auto* m : {&mats[0], &mats[a]})
            for (double v : m->upper_triangle()) positive = positive && v > 0.0;
        entry["log"] = positive ? json(kl_divergence_distances(mats[0], mats[a], true)) : json(nullptr);
        kl[names[a]] = entry;
    }
    ctx.write_json("diagnose.json", {{"names", names}, {"reference", names.front()}, {"kendall_tau", tau}, {"kl_divergence", kl}});
    ctx.finish();
}

inline void run_command(const RunConfig& c) {
    validate(c);
    if (c.command == "embed") cmd_embed(c);
    else if (c.command == "irefined") cmd_irefined(c);
    else if (c.command == "stack") cmd_stack(c);
    else if (c.command == "evaluate") cmd_evaluate(c);
    else if (c.command == "diagnose") cmd_diagnose(c);
}

inline int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::config: return 2;
        case ErrorKind::data: return 3;
        case ErrorKind::numerical: return 4;
    }
    return 4;
}

/// Parses argv, loads the config file, applies flag overrides and runs.
inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
    CLI::App app{"REFINED / integrated REFINED feature-to-image toolkit"};
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::string> input, response, output, fusion, source, image_format, delimiter, neighborhood;
    std::optional<std::uint64_t> seed, boot_seed, bmds_seed;
    std::optional<int> grid, sweeps, B, threads, window;
    std::optional<double> lambda;
    bool no_rescale = false, tab = false, no_regressor = false, image_stacking = false, bmds = false;
    std::vector<std::string> predictions, matrices, methods;
    std::optional<std::string> truth, train_responses;

    const char* names[] = {"embed", "irefined", "stack", "evaluate", "diagnose"};
    const char* descriptions[] = {"single-projection REFINED images", "fused multi-projection REFINED images",
                                  "model stacking and image stacking", "metrics, bootstrap, robustness and gap statistic",
                                  "Kendall tau and KL divergence between distance matrices"};
    std::vector<CLI::App*> subs;
    for (int i = 0; i < 5; ++i) {
        auto* s = app.add_subcommand(names[i], descriptions[i]);
        s->add_option("-c,--config", config_path, "JSON config file");
        s->add_option("--input", input, "feature table (delimited text, header row, first column = sample id)");
        s->add_option("--response", response, "response column name");
        s->add_option("-o,--output", output, "output directory");
        s->add_option("--delimiter", delimiter, "field delimiter");
        s->add_flag("--tab", tab, "tab-delimited input");
        s->add_option("--seed", seed, "split seed");
        s->add_option("--threads", threads, "worker threads");
        s->add_option("--projection", methods, "projection method, repeatable: mds | isomap | lle | le");
        s->add_option("--fusion", fusion, "arithmetic | geometric");
        s->add_option("--distance-source", source, "ambient | projection");
        s->add_flag("--no-rescale", no_rescale, "do not rescale candidate distances to unit mean");
        s->add_option("--grid", grid, "grid size (0 = smallest square)");
        s->add_option("--max-sweeps", sweeps, "hill-climbing sweep limit");
        s->add_option("--neighborhood", neighborhood, "auto | all_pairs | adjacent_cells");
        s->add_option("--image-format", image_format, "png | csv");
        s->add_option("--lambda", lambda, "ridge strength of the reference regressor");
        s->add_option("--window", window, "box-filter width of the reference regressor");
        s->add_flag("--no-regressor", no_regressor, "skip training the reference regressor");
        s->add_flag("--image-stacking", image_stacking, "also train a regressor on stacked image tensors");
        s->add_flag("--bmds", bmds, "use the Bayesian MDS sampler for the fused layout");
        s->add_option("--bmds-seed", bmds_seed, "sampler seed");
        s->add_option("--bootstrap-B", B, "bootstrap replicates");
        s->add_option("--bootstrap-seed", boot_seed, "bootstrap seed");
        s->add_option("--truth", truth, "test responses CSV (sample_id,y)");
        s->add_option("--train-responses", train_responses, "training responses CSV (sample_id,y)");
        s->add_option("--predictions", predictions, "prediction CSVs");
        s->add_option("--matrices", matrices, "distance-matrix CSVs");
        subs.push_back(s);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        std::ostringstream out;
        const int code = app.exit(e, out, err);
        std::cout << out.str();
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg;
        for (std::size_t i = 0; i < subs.size(); ++i)
            if (subs[i]->parsed()) cfg.command = names[i];
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw config_error("MissingFile", "cannot open config '" + config_path + "'");
            json j;
            try {
                in >> j;
            } catch (const json::exception& e) {
                throw config_error("BadConfig", e.what());
            }
            config_from_json(j, cfg);
        }
        if (input) cfg.input = *input;
        if (response) cfg.response_column = *response;
        if (output) cfg.output_dir = *output;
        if (delimiter) cfg.delimiter = *delimiter;
        if (tab) cfg.delimiter = "tab";
        if (seed) cfg.split_seed = *seed;
        if (threads) cfg.threads = *threads;
        if (fusion) cfg.fusion = *fusion;
        if (source) cfg.distance_source = *source;
        if (no_rescale) cfg.rescale = false;
        if (grid) cfg.grid_size = *grid;
        if (sweeps) cfg.max_sweeps = *sweeps;
        if (neighborhood) cfg.neighborhood = *neighborhood;
        if (image_format) cfg.image_format = *image_format;
        if (lambda) cfg.lambda = *lambda;
        if (window) cfg.window = *window;
        if (no_regressor) cfg.train_regressor = false;
        if (image_stacking) cfg.image_stacking = true;
        if (bmds) cfg.bmds_enabled = true;
        if (bmds_seed) cfg.bmds_seed = *bmds_seed;
        if (B) cfg.bootstrap_B = *B;
        if (boot_seed) cfg.bootstrap_seed = *boot_seed;
        if (truth) cfg.truth = *truth;
        if (train_responses) cfg.train_responses = *train_responses;
        if (!predictions.empty()) cfg.predictions = predictions;
        if (!matrices.empty()) cfg.matrices = matrices;
        if (!methods.empty()) {
            cfg.projections.clear();
            for (const auto& m : methods) {
                ProjectionSpec spec;
                spec.method = parse_projection_method(m);
                cfg.projections.push_back(spec);
            }
        }
        if (cfg.command == "embed" && cfg.projections.empty()) cfg.projections.push_back(ProjectionSpec{});
        run_command(cfg);
        return 0;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 4;
    }
}

}  // namespace refined::cli
