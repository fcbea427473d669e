#pragma once

// Run configuration and the stages behind the command-line driver:
// simulate, pretrain, extract, train, evaluate. Every artifact records the
// manifest (hash of the normalised run configuration).

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ugrn/checkpoint.hpp"
#include "ugrn/common.hpp"
#include "ugrn/data.hpp"
#include "ugrn/eval.hpp"
#include "ugrn/features.hpp"
#include "ugrn/linear_backend.hpp"
#include "ugrn/transformer.hpp"
#include "ugrn/translator.hpp"

namespace ugrn::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m{"origin-pert", "origin-attn", "pert", "emb", "vvp", "gdt", "ens"};
    return m;
}

inline void check_method(const std::string& m) {
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
        throw UserError("unknown method '" + m + "'");
}

/// Feature methods needed to evaluate `methods`, deduplicated in order.
inline std::vector<std::string> feature_methods(const std::vector<std::string>& methods) {
    std::vector<std::string> out;
    for (const auto& m : methods)
        for (const auto& f : eval::method_inputs(m))
            if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
    return out;
}

// ---------------------------------------------------------------------------
// Configuration

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw UserError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || k == a;
        if (!ok) throw UserError("unknown key '" + k + "' in " + where);
    }
}

inline data::SynthConfig synth_from_json(const json& j, std::uint64_t default_seed) {
    check_keys(j, "simulate", {"genes", "tfs", "density", "weight_scale", "noise", "cells", "seed", "symbol_prefix", "tf_log_mean",
                               "tf_log_sd", "tf_max"});
    data::SynthConfig c;
    c.genes = j.value("genes", c.genes);
    c.tfs = j.value("tfs", c.tfs);
    c.density = j.value("density", c.density);
    c.weight_scale = j.value("weight_scale", c.weight_scale);
    c.noise = j.value("noise", c.noise);
    c.cells = j.value("cells", c.cells);
    c.seed = j.value("seed", default_seed);
    c.symbol_prefix = j.value("symbol_prefix", c.symbol_prefix);
    c.tf_log_mean = j.value("tf_log_mean", c.tf_log_mean);
    c.tf_log_sd = j.value("tf_log_sd", c.tf_log_sd);
    c.tf_max = j.value("tf_max", c.tf_max);
    c.validate();
    return c;
}

inline json synth_to_json(const data::SynthConfig& c) {
    return {{"genes", c.genes},   {"tfs", c.tfs},
            {"density", c.density}, {"weight_scale", c.weight_scale},
            {"noise", c.noise},   {"cells", c.cells},
            {"seed", c.seed},     {"symbol_prefix", c.symbol_prefix},
            {"tf_log_mean", c.tf_log_mean}, {"tf_log_sd", c.tf_log_sd},
            {"tf_max", c.tf_max}};
}

inline std::string safe_name(const std::string& s) {
    std::string out = s;
    for (auto& c : out)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
    return out;
}

}  // namespace detail

struct DatasetSpec {
    enum class Kind { Simulate, Files, Variant };
    std::string name;
    data::DatasetTags tags;
    Kind kind = Kind::Simulate;
    data::SynthConfig synth;
    // Files
    std::string expression, edges, tfs;
    // Variant: same expression as `parent`, edges kept with probability `keep`
    std::string parent;
    double keep = 1.0;
    std::uint64_t variant_seed = 0;
};

struct BackendSpec {
    std::string kind = "linear";
    double ridge_lambda = 1.0;
    model::ScFMConfig scfm;
};

struct PairSpec {
    double ratio = 1.0;
    std::uint64_t seed = 0;
    bool all_pairs = false;
};

struct SweepSpec {
    std::vector<double> ratios = eval::default_ratios();
    std::string method = "gdt";
    std::string train;
    std::string test;
    std::uint64_t seed = 0;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::vector<DatasetSpec> datasets;
    std::size_t hvg = 0;
    BackendSpec backend;
    features::VirtualValueGrid grid;
    features::FeatureOptions features;
    PairSpec pairs;
    translator::TranslatorConfig translator;
    eval::GroupKey group = eval::GroupKey::Dataset;
    std::vector<std::string> held_out;
    std::vector<std::string> methods{"vvp", "gdt", "ens"};
    std::optional<SweepSpec> sweep;
    /// Directory relative paths are resolved against; not part of the manifest.
    fs::path base_dir = ".";

    const DatasetSpec& dataset(const std::string& name) const {
        for (const auto& d : datasets)
            if (d.name == name) return d;
        throw UserError("unknown dataset '" + name + "'");
    }

    fs::path resolve(const std::string& p) const {
        const fs::path q(p);
        return q.is_absolute() ? q : base_dir / q;
    }

    /// Sub-seeds left out of the file are derived from the global seed.
    static RunConfig from_json(const json& j, fs::path base_dir = ".") {
        RunConfig c;
        c.base_dir = std::move(base_dir);
        try {
            detail::check_keys(j, "run config", {"seed", "datasets", "hvg", "backend", "grid", "features", "pairs", "translator",
                                                 "protocol", "methods", "sweep"});
            c.seed = j.value("seed", std::uint64_t{0});
            c.hvg = j.value("hvg", std::size_t{0});

            std::set<std::string> names;
            for (const auto& d : j.at("datasets")) {
                detail::check_keys(d, "dataset", {"name", "source", "species", "network", "simulate", "expression", "edges", "tfs",
                                                  "expression_from", "network_keep", "network_seed"});
                DatasetSpec s;
                s.name = d.at("name").get<std::string>();
                require(!s.name.empty(), "dataset without a name");
                require(names.insert(s.name).second, "dataset '" + s.name + "' listed twice");
                s.tags.species = d.value("species", "");
                s.tags.network = d.value("network", s.name);
                if (d.contains("simulate")) {
                    s.kind = DatasetSpec::Kind::Simulate;
                    s.synth = detail::synth_from_json(d.at("simulate"), derive_seed(c.seed, "simulate/" + s.name));
                    s.tags.source = d.value("source", s.name);
                } else if (d.contains("expression_from")) {
                    s.kind = DatasetSpec::Kind::Variant;
                    s.parent = d.at("expression_from").get<std::string>();
                    s.keep = d.value("network_keep", 1.0);
                    require(s.keep > 0.0 && s.keep <= 1.0, "network_keep must be in (0, 1]");
                    s.variant_seed = d.value("network_seed", derive_seed(c.seed, "variant/" + s.name));
                    const auto& parent = c.dataset(s.parent);
                    require(parent.kind != DatasetSpec::Kind::Variant, "dataset '" + s.name + "' derives from a variant");
                    s.tags.source = d.value("source", parent.tags.source);
                    if (s.tags.species.empty()) s.tags.species = parent.tags.species;
                } else {
                    s.kind = DatasetSpec::Kind::Files;
                    s.expression = d.at("expression").get<std::string>();
                    s.edges = d.at("edges").get<std::string>();
                    s.tfs = d.value("tfs", "");
                    s.tags.source = d.value("source", s.name);
                }
                c.datasets.push_back(std::move(s));
            }
            require(!c.datasets.empty(), "run config lists no datasets");

            const auto b = j.value("backend", json::object());
            detail::check_keys(b, "backend", {"kind", "ridge_lambda", "scfm"});
            c.backend.kind = b.value("kind", c.backend.kind);
            require(c.backend.kind == "linear" || c.backend.kind == "transformer", "backend kind must be linear or transformer");
            c.backend.ridge_lambda = b.value("ridge_lambda", c.backend.ridge_lambda);
            require(std::isfinite(c.backend.ridge_lambda) && c.backend.ridge_lambda >= 0.0, "ridge_lambda must be >= 0");
            auto scfm = b.value("scfm", json::object());
            if (!scfm.contains("seed")) scfm["seed"] = derive_seed(c.seed, "pretrain");
            c.backend.scfm = model::detail::scfm_config_from_json(scfm);
            c.backend.scfm.validate();

            c.grid = features::VirtualValueGrid::from_json(j.value("grid", json::object()));

            const auto f = j.value("features", json::object());
            detail::check_keys(f, "features", {"mask_target", "per_cell", "background_genes", "threads"});
            c.features.mask_target = f.value("mask_target", c.features.mask_target);
            c.features.per_cell = f.value("per_cell", c.features.per_cell);
            c.features.background_genes = f.value("background_genes", c.features.background_genes);
            c.features.threads = f.value("threads", c.features.threads);

            const auto p = j.value("pairs", json::object());
            detail::check_keys(p, "pairs", {"ratio", "seed", "all_pairs"});
            c.pairs.ratio = p.value("ratio", c.pairs.ratio);
            require(std::isfinite(c.pairs.ratio) && c.pairs.ratio > 0.0, "pair ratio must be positive");
            c.pairs.seed = p.value("seed", derive_seed(c.seed, "pairs"));
            c.pairs.all_pairs = p.value("all_pairs", false);

            auto t = j.value("translator", json::object());
            if (!t.contains("seed")) t["seed"] = derive_seed(c.seed, "translator");
            c.translator = translator::TranslatorConfig::from_json(t);

            const auto pr = j.value("protocol", json::object());
            detail::check_keys(pr, "protocol", {"group", "held_out"});
            c.group = eval::parse_group_key(pr.value("group", "dataset"));
            c.held_out = pr.value("held_out", std::vector<std::string>{});

            c.methods = j.value("methods", c.methods);
            require(!c.methods.empty(), "run config lists no methods");
            for (const auto& m : c.methods) check_method(m);

            if (j.contains("sweep")) {
                const auto& s = j.at("sweep");
                detail::check_keys(s, "sweep", {"ratios", "method", "train", "test", "seed"});
                SweepSpec sw;
                sw.ratios = s.value("ratios", sw.ratios);
                sw.method = s.value("method", sw.method);
                check_method(sw.method);
                sw.train = s.at("train").get<std::string>();
                sw.test = s.at("test").get<std::string>();
                sw.seed = s.value("seed", derive_seed(c.seed, "sweep"));
                for (double r : sw.ratios) require(std::isfinite(r) && r > 0.0, "sweep ratios must be positive");
                c.dataset(sw.test);
                c.sweep = std::move(sw);
            }
        } catch (const json::exception& e) {
            throw UserError(std::string("malformed run config: ") + e.what());
        }
        return c;
    }

    static RunConfig load(const fs::path& path) {
        json j;
        try {
            j = json::parse(data::read_text(path));
        } catch (const json::parse_error& e) {
            throw UserError("cannot parse run config '" + path.string() + "': " + e.what());
        }
        return from_json(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
    }

    /// Every field with defaults and derived seeds filled in.
    json to_json() const {
        json ds = json::array();
        for (const auto& d : datasets) {
            json e{{"name", d.name}, {"source", d.tags.source}, {"species", d.tags.species}, {"network", d.tags.network}};
            switch (d.kind) {
                case DatasetSpec::Kind::Simulate: e["simulate"] = detail::synth_to_json(d.synth); break;
                case DatasetSpec::Kind::Files:
                    e["expression"] = d.expression;
                    e["edges"] = d.edges;
                    e["tfs"] = d.tfs;
                    break;
                case DatasetSpec::Kind::Variant:
                    e["expression_from"] = d.parent;
                    e["network_keep"] = d.keep;
                    e["network_seed"] = d.variant_seed;
                    break;
            }
            ds.push_back(std::move(e));
        }
        json j{{"seed", seed},
               {"datasets", ds},
               {"hvg", hvg},
               {"backend", {{"kind", backend.kind}, {"ridge_lambda", backend.ridge_lambda}, {"scfm", model::detail::scfm_config_to_json(backend.scfm)}}},
               {"grid", grid.to_json()},
               {"features",
                {{"mask_target", features.mask_target},
                 {"per_cell", features.per_cell},
                 {"background_genes", features.background_genes},
                 {"threads", features.threads}}},
               {"pairs", {{"ratio", pairs.ratio}, {"seed", pairs.seed}, {"all_pairs", pairs.all_pairs}}},
               {"translator", translator.to_json()},
               {"protocol", {{"group", eval::group_key_name(group)}, {"held_out", held_out}}},
               {"methods", methods}};
        if (sweep)
            j["sweep"] = {{"ratios", sweep->ratios}, {"method", sweep->method}, {"train", sweep->train}, {"test", sweep->test}, {"seed", sweep->seed}};
        return j;
    }

    std::string manifest() const { return hash_text(to_json().dump()); }

    /// Input files named by the config must exist before any stage runs.
    void check_paths() const {
        for (const auto& d : datasets) {
            if (d.kind != DatasetSpec::Kind::Files) continue;
            for (const auto* p : {&d.expression, &d.edges, &d.tfs})
                if (!p->empty() && !fs::exists(resolve(*p)))
                    throw UserError("dataset '" + d.name + "': file '" + resolve(*p).string() + "' does not exist");
        }
    }

    eval::ProtocolSpec protocol() const {
        eval::ProtocolSpec spec;
        for (const auto& d : datasets) spec.datasets.push_back({d.name, d.tags});
        spec.group = group;
        spec.held_out = held_out;
        return spec;
    }
};

// ---------------------------------------------------------------------------
// Workspace layout

struct Workspace {
    fs::path out;
    fs::path cache;

    /// Feature caches go to $UGRN_CACHE_DIR when set, else <out>/features.
    static Workspace at(const fs::path& out) {
        Workspace w{out, out / "features"};
        if (const char* env = std::getenv("UGRN_CACHE_DIR"); env && *env) w.cache = env;
        return w;
    }

    fs::path dataset_dir(const std::string& name) const { return out / "data" / detail::safe_name(name); }
    fs::path model() const { return out / "model.json"; }
    fs::path loss_trace() const { return out / "pretrain_loss.tsv"; }
    fs::path pairs(const std::string& name) const { return out / "pairs" / (detail::safe_name(name) + ".tsv"); }
    fs::path feature_csv(const std::string& name, const std::string& method) const {
        return cache / (detail::safe_name(name) + "." + method + ".csv");
    }
    fs::path translator(const std::string& group, const std::string& method) const {
        return out / "translators" / (detail::safe_name(group) + "." + method + ".json");
    }
    fs::path report_json() const { return out / "report.json"; }
    fs::path report_txt() const { return out / "report.txt"; }
};

/// Value of the "# manifest <hash>" comment in a text artifact, or "".
inline std::string manifest_comment(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("# manifest ", 0) == 0) return trim(line.substr(11));
        if (!line.empty() && line.front() != '#') break;
    }
    return "";
}

// ---------------------------------------------------------------------------
// simulate

inline std::vector<fs::path> run_simulate(const RunConfig& cfg, const Workspace& ws) {
    const auto man = cfg.manifest();
    std::vector<fs::path> written;
    std::map<std::string, data::SyntheticDataset> made;
    for (const auto& d : cfg.datasets) {
        if (d.kind == DatasetSpec::Kind::Files) continue;
        const auto dir = ws.dataset_dir(d.name);
        data::EdgeSet edges;
        if (d.kind == DatasetSpec::Kind::Simulate) {
            auto syn = data::generate_synthetic(d.synth);
            data::save_expression(dir / "expression.csv", syn.expression);
            data::write_text(dir / "planted.tsv", "# manifest " + man + "\n" + data::planted_to_tsv(syn.planted));
            edges = syn.edges;
            made.emplace(d.name, std::move(syn));
        } else {
            auto it = made.find(d.parent);
            if (it == made.end()) throw UserError("variant '" + d.name + "' needs a simulated parent, got '" + d.parent + "'");
            data::save_expression(dir / "expression.csv", it->second.expression);
            edges = data::network_variant(it->second.edges, d.keep, d.variant_seed);
        }
        data::save_edges(dir / "edges.tsv", edges, {"manifest " + man});
        data::save_meta(dir / "meta.json", {d.tags, edges.tfs(), man});
        written.push_back(dir);
    }
    return written;
}

// ---------------------------------------------------------------------------
// Dataset loading shared by the later stages

struct LoadedDataset {
    const DatasetSpec* spec = nullptr;
    data::ExpressionMatrix expression;
    data::EdgeSet edges;
    std::string manifest;  // empty for user-supplied files
    std::vector<std::string> warnings;
};

inline LoadedDataset load_dataset(const RunConfig& cfg, const Workspace& ws, const DatasetSpec& d) {
    LoadedDataset out;
    out.spec = &d;
    data::Warnings w;
    if (d.kind == DatasetSpec::Kind::Files) {
        out.expression = data::load_expression(cfg.resolve(d.expression), d.tags);
        std::optional<std::vector<std::string>> tfs;
        if (!d.tfs.empty()) {
            std::vector<std::string> list;
            for (auto& line : split(data::read_text(cfg.resolve(d.tfs)), '\n'))
                if (auto t = trim(line); !t.empty() && t.front() != '#') list.push_back(t);
            tfs = std::move(list);
        }
        out.edges = data::load_edges(cfg.resolve(d.edges), &out.expression.symbols(), std::move(tfs), &w);
    } else {
        const auto dir = ws.dataset_dir(d.name);
        if (!fs::exists(dir / "meta.json")) throw UserError("dataset '" + d.name + "' has not been simulated; run simulate first");
        const auto meta = data::load_meta(dir / "meta.json");
        out.manifest = meta.manifest;
        out.expression = data::load_expression(dir / "expression.csv", d.tags);
        out.edges = data::load_edges(dir / "edges.tsv", &out.expression.symbols(), meta.tfs, &w);
    }
    if (cfg.hvg > 0 && cfg.hvg < out.expression.genes()) {
        out.expression = data::select_hvg(out.expression, static_cast<long>(cfg.hvg), out.edges.tfs());
        std::vector<data::Edge> kept;
        for (const auto& e : out.edges.edges())
            if (out.expression.index_of(e.source) && out.expression.index_of(e.target)) kept.push_back(e);
        if (kept.size() < out.edges.size())
            w.add(std::to_string(out.edges.size() - kept.size()) + " edges dropped by variable-gene selection");
        out.edges = data::EdgeSet(std::move(kept), out.edges.tfs());
    }
    for (auto& m : w.messages) out.warnings.push_back("dataset " + d.name + ": " + m);
    return out;
}

inline std::vector<LoadedDataset> load_datasets(const RunConfig& cfg, const Workspace& ws) {
    std::vector<LoadedDataset> out;
    for (const auto& d : cfg.datasets) out.push_back(load_dataset(cfg, ws, d));
    return out;
}

/// Expression matrices seen by pretraining: variants share their parent's.
inline std::vector<const data::ExpressionMatrix*> pretrain_inputs(const std::vector<LoadedDataset>& ds) {
    std::vector<const data::ExpressionMatrix*> out;
    for (const auto& d : ds)
        if (d.spec->kind != DatasetSpec::Kind::Variant) out.push_back(&d.expression);
    return out;
}

// ---------------------------------------------------------------------------
// pretrain

/// Linear backend over several datasets: cells are stacked over the union
/// vocabulary with absent genes set to 0.
inline model::LinearModel fit_stacked_linear(const std::vector<const data::ExpressionMatrix*>& inputs, double lambda) {
    const auto vocab = model::union_vocabulary(inputs);
    std::size_t cells = 0;
    for (const auto* m : inputs) cells += m->cells();
    std::vector<double> values(cells * vocab.size(), 0.0);
    std::size_t row = 0;
    for (const auto* m : inputs) {
        std::vector<std::size_t> cols;
        for (const auto& s : m->symbols()) cols.push_back(vocab.id(s));
        for (std::size_t c = 0; c < m->cells(); ++c, ++row)
            for (std::size_t g = 0; g < m->genes(); ++g) values[row * vocab.size() + cols[g]] = m->at(c, g);
    }
    data::ExpressionMatrix stacked(vocab.symbols(), cells, std::move(values));
    model::LinearModel lm(model::fit_linear_backend(stacked, lambda));
    return model::stamp_fingerprint(lm);
}

struct PretrainOutcome {
    std::unique_ptr<model::ExpressionModel> model;
    std::vector<double> loss_trace;
    std::string fingerprint;
};

inline PretrainOutcome run_pretrain(const RunConfig& cfg, const Workspace& ws) {
    const auto datasets = load_datasets(cfg, ws);
    const auto inputs = pretrain_inputs(datasets);
    PretrainOutcome out;
    if (cfg.backend.kind == "linear") {
        auto lm = std::make_unique<model::LinearModel>(fit_stacked_linear(inputs, cfg.backend.ridge_lambda));
        double sse = 0.0;
        std::size_t n = 0;
        for (const auto* m : inputs) {
            const auto panel = model::Panel::resolve(lm->vocabulary(), m->symbols());
            for (std::size_t c = 0; c < m->cells(); ++c) {
                const auto row = m->cell(c);
                const auto rec = lm->reconstruct(panel, row);
                for (std::size_t g = 0; g < row.size(); ++g, ++n) sse += (rec[g] - row[g]) * (rec[g] - row[g]);
            }
        }
        out.loss_trace.push_back(sse / static_cast<double>(n));
        out.model = std::move(lm);
    } else {
        auto res = model::pretrain_masked(cfg.backend.scfm, inputs);
        model::stamp_fingerprint(res.model);
        out.loss_trace = std::move(res.loss_trace);
        out.model = std::make_unique<model::TransformerModel>(std::move(res.model));
    }
    const auto man = cfg.manifest();
    out.fingerprint = model::save_checkpoint(ws.model(), *out.model, man);
    std::string trace = "# manifest " + man + "\nstep\tloss\n";
    for (std::size_t k = 0; k < out.loss_trace.size(); ++k) trace += std::to_string(k) + "\t" + format_double(out.loss_trace[k]) + "\n";
    data::write_text(ws.loss_trace(), trace);
    return out;
}

inline model::LoadedModel load_model(const Workspace& ws, const std::vector<LoadedDataset>& datasets) {
    if (!fs::exists(ws.model())) throw UserError("no model checkpoint at '" + ws.model().string() + "'; run pretrain first");
    const auto vocab = model::union_vocabulary(pretrain_inputs(datasets));
    return model::load_checkpoint(ws.model(), vocab.hash());
}

// ---------------------------------------------------------------------------
// extract

/// Labeled pairs of a dataset over the genes the model knows.
inline data::PairSampleSet dataset_pairs(const RunConfig& cfg, const LoadedDataset& d, const model::ExpressionModel& m) {
    std::vector<std::string> panel;
    for (const auto& s : d.expression.symbols())
        if (m.vocabulary().contains(s)) panel.push_back(s);
    if (cfg.pairs.all_pairs) return data::all_candidate_pairs(d.edges, panel);
    return data::sample_pairs(d.edges, panel, cfg.pairs.ratio, derive_seed(cfg.pairs.seed, d.spec->name));
}

inline features::ProbeContext probe_context(const RunConfig& cfg, const model::ExpressionModel& m, const data::ExpressionMatrix& expr,
                                            features::Method method, data::Warnings* warnings) {
    auto ctx = features::dataset_context(m, expr, cfg.features, warnings);
    if (!features::needs_expression(method)) {
        ctx.mean_cell.clear();
        ctx.cells.clear();
        ctx.n_cells = 0;
        ctx.expression_hash.clear();
    }
    return ctx;
}

/// Extracts (or reuses) the feature cache for one dataset and method. A
/// cache file whose key does not match is an error unless `refresh`.
template <class P>
features::FeatureCache extract_cached(const features::ProbeContext& ctx, features::Method method, const RunConfig& cfg,
                                      const std::vector<P>& pairs, const fs::path& csv, const std::string& manifest, bool refresh) {
    auto expected = features::describe_extraction(ctx, method, cfg.grid, cfg.features, {});
    expected.pairs_hash = features::pairs_hash(pairs);
    if (fs::exists(csv) && !refresh) {
        auto hit = features::cache_lookup(csv, expected);
        if (!hit)
            throw UserError("stale feature cache '" + csv.string() + "': it was built from a different model, panel, pair list or grid; delete it or pass --refresh");
        return *hit;
    }
    auto res = features::extract_batch(ctx, method, cfg.grid, pairs, cfg.features);
    auto meta = features::describe_extraction(ctx, method, cfg.grid, cfg.features, res);
    meta.pairs_hash = expected.pairs_hash;
    meta.manifest = manifest;
    features::save_feature_cache(csv, res.features, meta);
    return {std::move(res.features), std::move(meta)};
}

struct ExtractSummary {
    std::string dataset;
    std::string method;
    std::size_t rows = 0;
    std::size_t dims = 0;
    std::size_t skipped = 0;
};

inline std::vector<ExtractSummary> run_extract(const RunConfig& cfg, const Workspace& ws, const std::vector<std::string>& methods,
                                               bool refresh = false) {
    const auto datasets = load_datasets(cfg, ws);
    const auto loaded = load_model(ws, datasets);
    const auto& m = *loaded.model;
    const auto man = cfg.manifest();
    std::vector<ExtractSummary> out;
    for (const auto& d : datasets) {
        const auto pairs = dataset_pairs(cfg, d, m);
        data::write_text(ws.pairs(d.spec->name), data::pairs_to_tsv(pairs.pairs, {"manifest " + man}));
        for (const auto& fm : feature_methods(methods)) {
            const auto method = features::parse_method(fm);
            data::Warnings w;
            const auto ctx = probe_context(cfg, m, d.expression, method, &w);
            const auto cache = extract_cached(ctx, method, cfg, pairs.pairs, ws.feature_csv(d.spec->name, fm), man, refresh);
            out.push_back({d.spec->name, fm, cache.meta.count, cache.meta.dims, cache.meta.skipped.size()});
        }
    }
    return out;
}

/// Features joined with the labels of the dataset's pair list.
struct DatasetFeatures {
    eval::LabeledFeatures labeled;
    features::FeatureCacheMeta meta;
};

inline DatasetFeatures load_dataset_features(const Workspace& ws, const std::string& dataset, const std::string& method) {
    const auto csv = ws.feature_csv(dataset, method);
    if (!fs::exists(csv)) throw UserError("no " + method + " features for dataset '" + dataset + "'; run extract first");
    const auto pairs_text = data::read_text(ws.pairs(dataset));
    std::map<std::pair<std::string, std::string>, int> label;
    for (const auto& p : data::pairs_from_tsv(pairs_text)) label[{p.source, p.target}] = p.label;
    auto cache = features::load_feature_cache(csv);
    DatasetFeatures out;
    out.meta = cache.meta;
    for (auto& f : cache.features) {
        auto it = label.find({f.source, f.target});
        if (it == label.end()) throw UserError("feature cache '" + csv.string() + "' has a pair that is not in the pair list");
        out.labeled.X.push_back(std::move(f.values));
        out.labeled.y.push_back(it->second);
    }
    return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainSummary {
    std::string group;
    std::string method;
    fs::path path;
    std::size_t rows = 0;
    double final_loss = 0.0;
};

inline std::vector<TrainSummary> run_train(const RunConfig& cfg, const Workspace& ws, const std::vector<std::string>& methods) {
    const auto spec = cfg.protocol();
    const auto splits = eval::plan_splits(spec);
    const auto man = cfg.manifest();
    const auto model_fp = model::load_checkpoint(ws.model()).model->fingerprint();
    std::vector<TrainSummary> out;
    for (const auto& fm : feature_methods(methods)) {
        if (eval::is_origin_method(fm)) continue;
        for (const auto& split : splits) {
            eval::LabeledFeatures all;
            for (auto k : split.train_sets) {
                const auto f = load_dataset_features(ws, spec.datasets[k].name, fm);
                all.X.insert(all.X.end(), f.labeled.X.begin(), f.labeled.X.end());
                all.y.insert(all.y.end(), f.labeled.y.begin(), f.labeled.y.end());
            }
            auto tc = cfg.translator;
            tc.seed = derive_seed(cfg.translator.seed, split.train + "/" + fm);
            auto res = translator::train(tc, all.X, all.y, fm);
            const auto path = ws.translator(split.train, fm);
            translator::save_translator(path, res.model, man, model_fp);
            out.push_back({split.train, fm, path, all.X.size(), res.loss_trace.empty() ? 0.0 : res.loss_trace.back()});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// evaluate

namespace detail {

struct ManifestLedger {
    std::string expected;
    std::map<std::string, std::string> seen;  // artifact -> manifest

    void add(const std::string& artifact, const std::string& m) { seen[artifact] = m; }

    std::vector<std::string> mismatches() const {
        std::vector<std::string> out;
        for (const auto& [a, m] : seen)
            if (m != expected) out.push_back(a + " (manifest " + (m.empty() ? std::string("missing") : m) + ")");
        return out;
    }
};

}  // namespace detail

struct EvaluateOptions {
    bool allow_mixed_manifest = false;
};

/// Scores every protocol cell with the stored translators and runs the
/// optional sweep. Writes report.json and report.txt.
inline eval::EvalReport run_evaluate(const RunConfig& cfg, const Workspace& ws, const std::vector<std::string>& methods,
                                     const EvaluateOptions& opts = {}) {
    const auto spec = cfg.protocol();
    const auto splits = eval::plan_splits(spec);
    const auto man = cfg.manifest();
    detail::ManifestLedger ledger{man, {}};

    const auto datasets = load_datasets(cfg, ws);
    std::vector<std::string> warnings;
    for (const auto& d : datasets) {
        if (d.spec->kind != DatasetSpec::Kind::Files) ledger.add("data/" + d.spec->name, d.manifest);
        warnings.insert(warnings.end(), d.warnings.begin(), d.warnings.end());
    }
    const auto loaded = load_model(ws, datasets);
    ledger.add("model.json", loaded.manifest);

    eval::FeatureTable table;
    for (const auto& d : datasets) {
        ledger.add("pairs/" + d.spec->name, manifest_comment(data::read_text(ws.pairs(d.spec->name))));
        for (const auto& fm : feature_methods(methods)) {
            auto f = load_dataset_features(ws, d.spec->name, fm);
            if (f.meta.model_fingerprint != loaded.model->fingerprint())
                throw UserError(fm + " features of '" + d.spec->name + "' were extracted with a different model");
            ledger.add("features/" + d.spec->name + "." + fm, f.meta.manifest);
            for (const auto& w : f.meta.warnings) warnings.push_back(d.spec->name + " " + fm + ": " + w);
            table[d.spec->name][fm] = std::move(f.labeled);
        }
    }

    std::map<std::string, translator::TranslatorModel> translators;
    auto translator_for = [&](const std::string& group, const std::string& fm) -> const translator::TranslatorModel& {
        const auto key = group + "\n" + fm;
        if (auto it = translators.find(key); it != translators.end()) return it->second;
        const auto path = ws.translator(group, fm);
        if (!fs::exists(path)) throw UserError("missing " + fm + " translator checkpoint for training group '" + group + "'");
        auto t = translator::load_translator(path);
        ledger.add("translators/" + group + "." + fm, t.manifest);
        if (t.model_fingerprint != loaded.model->fingerprint())
            throw UserError("translator '" + path.string() + "' was trained on features of a different model");
        return translators.emplace(key, std::move(t.model)).first->second;
    };
    std::map<std::string, std::size_t> dims;
    for (const auto& [name, bym] : table)
        for (const auto& [fm, f] : bym)
            if (!f.X.empty()) dims.emplace(fm, f.X.front().size());
    auto scorer_for = [&](const std::string& group, const std::string& method) {
        std::vector<translator::TranslatorModel> ms;
        if (!eval::is_origin_method(method)) {
            for (const auto& fm : eval::method_inputs(method)) {
                const auto& t = translator_for(group, fm);
                translator::check_compatible(t, fm, dims.at(fm));
                ms.push_back(t);
            }
        }
        return eval::MethodScorer(method, std::move(ms));
    };
    // Load every checkpoint up front so the manifest check sees them all.
    for (const auto& m : methods)
        for (const auto& s : splits) {
            try {
                scorer_for(s.train, m);
            } catch (const UserError&) {
            }
        }
    if (const auto mixed = ledger.mismatches(); !mixed.empty()) {
        std::string list;
        for (const auto& x : mixed) list += "\n  " + x;
        if (!opts.allow_mixed_manifest)
            throw UserError("inputs were produced under other manifests than " + man + ":" + list + "\npass --allow-mixed-manifest to evaluate anyway");
        for (const auto& x : mixed) warnings.push_back("mixed manifest: " + x);
    }

    auto report = eval::run_protocol(spec, table, methods,
                                     [&](const eval::Split& split, const std::string& method) { return scorer_for(split.train, method); });

    if (cfg.sweep) {
        const auto& sw = *cfg.sweep;
        try {
            const LoadedDataset* test = nullptr;
            for (const auto& d : datasets)
                if (d.spec->name == sw.test) test = &d;
            const double r_max = *std::max_element(sw.ratios.begin(), sw.ratios.end());
            std::vector<std::string> panel;
            for (const auto& s : test->expression.symbols())
                if (loaded.model->vocabulary().contains(s)) panel.push_back(s);
            const auto full = data::sample_pairs(test->edges, panel, r_max, sw.seed);
            const auto P = full.positives();
            std::vector<std::vector<double>> logits;
            for (const auto& fm : eval::method_inputs(sw.method)) {
                const auto method = features::parse_method(fm);
                data::Warnings w;
                const auto ctx = probe_context(cfg, *loaded.model, test->expression, method, &w);
                const auto cache = extract_cached(ctx, method, cfg, full.pairs, ws.feature_csv(sw.test + ".sweep", fm), man, false);
                require(cache.features.size() == full.pairs.size(), "sweep pairs were skipped during extraction");
                std::vector<std::vector<double>> X;
                for (const auto& f : cache.features) X.push_back(f.values);
                if (eval::is_origin_method(fm)) {
                    std::vector<double> s;
                    for (const auto& x : X) s.push_back(x[0]);
                    logits.push_back(std::move(s));
                } else {
                    const auto& t = translator_for(sw.train, fm);
                    translator::check_compatible(t, fm, X.front().size());
                    logits.push_back(t.logits(X));
                }
            }
            const auto scores = logits.size() == 2 ? translator::ensemble_logits(logits[0], logits[1]) : logits[0];
            report.sweep = eval::imbalance_sweep(sw.ratios, sw.method, [&](double r) {
                const auto n = P + static_cast<std::size_t>(std::floor(r * static_cast<double>(P) + 1e-9));
                eval::ScoredSet s;
                for (std::size_t k = 0; k < n; ++k) {
                    s.scores.push_back(scores[k]);
                    s.labels.push_back(full.pairs[k].label);
                }
                return s;
            });
        } catch (const UserError& e) {
            report.errors.push_back("sweep: " + std::string(e.what()));
        }
    }

    report.config = {{"manifest", man}, {"run", cfg.to_json()}};
    report.warnings = std::move(warnings);
    data::write_text(ws.report_json(), report.to_json().dump(2) + "\n");
    data::write_text(ws.report_txt(), "# manifest " + man + "\n" + report.to_table());
    return report;
}

inline eval::EvalReport load_report(const fs::path& path) {
    try {
        return eval::EvalReport::from_json(json::parse(data::read_text(path)));
    } catch (const json::parse_error& e) {
        throw UserError("cannot parse report '" + path.string() + "': " + e.what());
    }
}

/// simulate, pretrain, extract, train and evaluate in one go.
inline eval::EvalReport run_all(const RunConfig& cfg, const Workspace& ws) {
    cfg.check_paths();
    run_simulate(cfg, ws);
    run_pretrain(cfg, ws);
    run_extract(cfg, ws, cfg.methods);
    run_train(cfg, ws, cfg.methods);
    return run_evaluate(cfg, ws, cfg.methods);
}

}  // namespace ugrn::pipeline
