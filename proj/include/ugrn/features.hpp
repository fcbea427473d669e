#pragma once

// Pairwise feature probes over a frozen ExpressionModel. Every extractor
// produces the forward (i -> j) and reverse (j -> i) vectors concatenated.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ugrn/common.hpp"
#include "ugrn/data.hpp"
#include "ugrn/model.hpp"

namespace ugrn::features {

enum class Method { OriginPert, OriginAttn, BaselinePert, Emb, VVP, GDT };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::OriginPert: return "origin-pert";
        case Method::OriginAttn: return "origin-attn";
        case Method::BaselinePert: return "pert";
        case Method::Emb: return "emb";
        case Method::VVP: return "vvp";
        case Method::GDT: return "gdt";
    }
    throw InvariantError("unknown method");
}

inline Method parse_method(const std::string& s) {
    for (auto m : {Method::OriginPert, Method::OriginAttn, Method::BaselinePert, Method::Emb, Method::VVP, Method::GDT})
        if (method_name(m) == s) return m;
    throw UserError("unknown feature method '" + s + "'");
}

/// Methods scored directly from the model without a translator.
inline bool is_origin(Method m) { return m == Method::OriginPert || m == Method::OriginAttn; }

/// Methods that read the observed expression matrix.
inline bool needs_expression(Method m) { return m == Method::OriginPert || m == Method::OriginAttn || m == Method::BaselinePert; }

struct VirtualValueGrid {
    double base = 1.0;
    std::vector<double> targets{0.0, 0.5, 2.0, 4.0, 6.0};
    std::vector<double> gradient_bases = evenly_spaced(0.0, 6.0, 8);

    static std::vector<double> evenly_spaced(double lo, double hi, std::size_t n) {
        std::vector<double> v(n);
        for (std::size_t k = 0; k < n; ++k) v[k] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
        return v;
    }

    void validate() const {
        require(std::isfinite(base) && base >= 0.0, "virtual base value must be finite and >= 0");
        require(!targets.empty(), "VVP needs at least one perturbation target");
        require(!gradient_bases.empty(), "GDT needs at least one gradient base value");
        for (double t : targets) require(std::isfinite(t) && t >= 0.0, "perturbation targets must be finite and >= 0");
        for (std::size_t k = 0; k < gradient_bases.size(); ++k) {
            require(std::isfinite(gradient_bases[k]) && gradient_bases[k] >= 0.0, "gradient base values must be finite and >= 0");
            if (k > 0) require(gradient_bases[k] > gradient_bases[k - 1], "gradient base values must be strictly increasing");
        }
    }

    nlohmann::json to_json() const { return {{"base", base}, {"targets", targets}, {"gradient_bases", gradient_bases}}; }

    static VirtualValueGrid from_json(const nlohmann::json& j) {
        VirtualValueGrid g;
        g.base = j.value("base", g.base);
        g.targets = j.value("targets", g.targets);
        g.gradient_bases = j.value("gradient_bases", g.gradient_bases);
        g.validate();
        return g;
    }
};

struct FeatureOptions {
    /// Hide the target gene's own value when reading its reconstruction.
    bool mask_target = true;
    /// Pert features: average the knockout effect over cells instead of
    /// probing the mean cell.
    bool per_cell = false;
    /// Background panel size for virtual probes without a dataset.
    std::size_t background_genes = 64;
    std::size_t threads = 1;

    nlohmann::json to_json() const {
        return {{"mask_target", mask_target}, {"per_cell", per_cell}, {"background_genes", background_genes}};
    }
};

struct PairFeature {
    std::string source, target;
    std::size_t source_id = 0, target_id = 0;
    Method method = Method::VVP;
    std::vector<double> values;

    std::size_t dims() const { return values.size(); }
};

/// What a probe runs against: the model, the panel of genes presented as
/// input and, for the expression-based methods, the observed cells.
struct ProbeContext {
    const model::ExpressionModel* model = nullptr;
    model::Panel panel;
    /// Panel-aligned mean cell; empty when no expression is attached.
    std::vector<double> mean_cell;
    /// Panel-aligned cells (row-major), only kept for per-cell averaging.
    std::vector<double> cells;
    std::size_t n_cells = 0;
    std::string expression_hash;

    bool has_expression() const { return !mean_cell.empty(); }
};

/// Context over a dataset: the panel is the dataset's genes that the model
/// knows, in column order.
inline ProbeContext dataset_context(const model::ExpressionModel& m, const data::ExpressionMatrix& expr,
                                    const FeatureOptions& opts = {}, data::Warnings* warnings = nullptr) {
    ProbeContext ctx;
    ctx.model = &m;
    std::vector<std::string> syms;
    std::vector<std::size_t> cols;
    for (std::size_t g = 0; g < expr.genes(); ++g) {
        if (m.vocabulary().contains(expr.symbols()[g])) {
            syms.push_back(expr.symbols()[g]);
            cols.push_back(g);
        } else if (warnings) {
            warnings->add("gene '" + expr.symbols()[g] + "' is not in the model vocabulary; dropped from the panel");
        }
    }
    require(!syms.empty(), "no dataset gene is in the model vocabulary");
    ctx.panel = model::Panel::resolve(m.vocabulary(), syms);
    const auto means = expr.column_means();
    Fnv1a h;
    for (std::size_t k = 0; k < cols.size(); ++k) {
        ctx.mean_cell.push_back(means[cols[k]]);
        h.str(syms[k]);
    }
    for (std::size_t c = 0; c < expr.cells(); ++c)
        for (auto g : cols) h.f64(expr.at(c, g));
    ctx.expression_hash = h.hex();
    if (opts.per_cell) {
        ctx.n_cells = expr.cells();
        for (std::size_t c = 0; c < expr.cells(); ++c)
            for (auto g : cols) ctx.cells.push_back(expr.at(c, g));
    }
    return ctx;
}

/// Context from an explicit gene panel (no expression).
inline ProbeContext panel_context(const model::ExpressionModel& m, const std::vector<std::string>& panel) {
    ProbeContext ctx;
    ctx.model = &m;
    ctx.panel = model::Panel::resolve(m.vocabulary(), panel);
    return ctx;
}

/// Panel for de novo virtual queries: the first `background` vocabulary
/// genes followed by every other known gene named in `pairs`.
template <class P>
std::vector<std::string> virtual_panel(const model::GeneVocabulary& vocab, const std::vector<P>& pairs, std::size_t background) {
    std::vector<std::string> panel;
    std::set<std::string> seen;
    for (std::size_t k = 0; k < std::min(background, vocab.size()); ++k) {
        panel.push_back(vocab.symbol(k));
        seen.insert(vocab.symbol(k));
    }
    for (const auto& p : pairs)
        for (const auto* s : {&p.source, &p.target})
            if (vocab.contains(*s) && seen.insert(*s).second) panel.push_back(*s);
    return panel;
}

namespace detail {

inline model::MaskFlags target_mask(std::size_t K, std::size_t j, const FeatureOptions& opts) {
    model::MaskFlags m;
    if (opts.mask_target) {
        m.assign(K, 0);
        m[j] = 1;
    }
    return m;
}

inline void check_pair(std::size_t i, std::size_t j) { require(i != j, "self-pairs are not allowed"); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Single-direction probes (panel positions i -> j)

/// M(x)_j - M(x with gene i zeroed)_j on the mean cell, or averaged over
/// cells when per_cell is set.
inline double origin_pert_score(const ProbeContext& ctx, std::size_t i, std::size_t j, const FeatureOptions& opts = {}) {
    detail::check_pair(i, j);
    require(ctx.has_expression(), "perturbation probes need an expression matrix");
    const std::size_t K = ctx.panel.size();
    require(i < K && j < K, "gene outside the expression panel");
    const auto mask = detail::target_mask(K, j, opts);
    auto effect = [&](std::vector<double> x) {
        const double full = ctx.model->reconstruct(ctx.panel, x, mask)[j];
        x[i] = 0.0;
        return full - ctx.model->reconstruct(ctx.panel, x, mask)[j];
    };
    if (!opts.per_cell || ctx.n_cells == 0) return effect(ctx.mean_cell);
    double s = 0.0;
    for (std::size_t c = 0; c < ctx.n_cells; ++c)
        s += effect(std::vector<double>(ctx.cells.begin() + static_cast<std::ptrdiff_t>(c * K),
                                        ctx.cells.begin() + static_cast<std::ptrdiff_t>((c + 1) * K)));
    return s / static_cast<double>(ctx.n_cells);
}

/// sum over layers of the head-averaged attention matrices of one forward
/// pass of the mean cell; entry (i, j) is row i, column j.
inline std::vector<double> attention_scores(const ProbeContext& ctx) {
    require(ctx.has_expression(), "attention probes need an expression matrix");
    const auto rec = ctx.model->attention(ctx.panel, ctx.mean_cell);
    const std::size_t K = ctx.panel.size();
    std::vector<double> s(K * K, 0.0);
    for (const auto& layer : rec.maps) {
        const double inv_h = 1.0 / static_cast<double>(layer.size());
        for (std::size_t r = 0; r < K * K; ++r) {
            double m = 0.0;
            for (const auto& head : layer) m += head.values[r];
            s[r] += m * inv_h;
        }
    }
    return s;
}

inline double origin_attn_score(const ProbeContext& ctx, std::size_t i, std::size_t j) {
    detail::check_pair(i, j);
    const std::size_t K = ctx.panel.size();
    require(i < K && j < K, "gene outside the expression panel");
    return attention_scores(ctx)[i * K + j];
}

/// Virtual cell with every panel gene at v_b.
inline std::vector<double> virtual_cell(const ProbeContext& ctx, const VirtualValueGrid& grid) {
    return std::vector<double>(ctx.panel.size(), grid.base);
}

inline std::vector<double> vvp_direction(const ProbeContext& ctx, const VirtualValueGrid& grid, std::size_t i, std::size_t j,
                                         const FeatureOptions& opts = {}, std::optional<double> base_response = std::nullopt) {
    detail::check_pair(i, j);
    const std::size_t K = ctx.panel.size();
    require(i < K && j < K, "gene outside the probe panel");
    require(!grid.targets.empty(), "VVP needs at least one perturbation target");
    const auto mask = detail::target_mask(K, j, opts);
    auto v = virtual_cell(ctx, grid);
    const double base = base_response ? *base_response : ctx.model->reconstruct(ctx.panel, v, mask)[j];
    std::vector<double> out;
    for (double t : grid.targets) {
        v[i] = t;
        out.push_back(ctx.model->reconstruct(ctx.panel, v, mask)[j] - base);
    }
    return out;
}

inline std::vector<double> gdt_direction(const ProbeContext& ctx, const VirtualValueGrid& grid, std::size_t i, std::size_t j,
                                         const FeatureOptions& opts = {}) {
    detail::check_pair(i, j);
    const std::size_t K = ctx.panel.size();
    require(i < K && j < K, "gene outside the probe panel");
    require(!grid.gradient_bases.empty(), "GDT needs at least one gradient base value");
    const auto mask = detail::target_mask(K, j, opts);
    auto v = virtual_cell(ctx, grid);
    std::vector<double> out;
    for (double b : grid.gradient_bases) {
        v[i] = b;
        out.push_back(ctx.model->input_gradient(ctx.panel, v, j, mask)[i]);
    }
    return out;
}

inline std::vector<double> emb_direction(const model::ExpressionModel& m, std::size_t id_i, std::size_t id_j) {
    if (!m.has_embeddings()) throw UnsupportedError(m.kind() + " backend has no gene embeddings");
    const auto a = m.embedding(id_i), b = m.embedding(id_j);
    std::vector<double> out(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] + b[k];
    return out;
}

// ---------------------------------------------------------------------------
// Batch extraction

struct ExtractionResult {
    std::vector<PairFeature> features;
    std::vector<data::Edge> skipped;
    data::Warnings warnings;
};

/// Per-direction vector length of a method.
inline std::size_t direction_dims(Method m, const VirtualValueGrid& grid, const model::ExpressionModel& model) {
    switch (m) {
        case Method::OriginPert:
        case Method::OriginAttn:
        case Method::BaselinePert: return 1;
        case Method::Emb: return model.embedding_dim();
        case Method::VVP: return grid.targets.size();
        case Method::GDT: return grid.gradient_bases.size();
    }
    throw InvariantError("unknown method");
}

/// Extracts features for every pair, in input order. Pairs naming a gene
/// outside the model vocabulary are skipped with a warning.
template <class P>
ExtractionResult extract_batch(const ProbeContext& ctx, Method method, const VirtualValueGrid& grid, const std::vector<P>& pairs,
                               const FeatureOptions& opts = {}) {
    require(ctx.model != nullptr, "probe context has no model");
    grid.validate();
    const auto& model = *ctx.model;
    if (method == Method::OriginAttn && !model.has_attention())
        throw UnsupportedError(model.kind() + " backend exposes no attention maps; origin-attn is unavailable");
    if (method == Method::Emb && !model.has_embeddings())
        throw UnsupportedError(model.kind() + " backend has no gene embeddings; emb is unavailable");
    if (needs_expression(method)) require(ctx.has_expression(), method_name(method) + " needs an expression matrix");

    ExtractionResult res;
    if (pairs.empty()) return res;

    struct Job {
        std::size_t i, j, id_i, id_j;
        const P* pair;
    };
    std::vector<Job> jobs;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& p : pairs) {
        require(p.source != p.target, "self-pair " + p.source + " -> " + p.target + " is not allowed");
        require(seen.emplace(p.source, p.target).second, "duplicate pair " + p.source + " -> " + p.target);
        bool known = true;
        for (const auto* s : {&p.source, &p.target})
            if (!model.vocabulary().contains(*s)) {
                res.warnings.add("gene '" + *s + "' is not in the model vocabulary; pair " + p.source + " -> " + p.target + " skipped");
                known = false;
            }
        if (!known) {
            res.skipped.push_back({p.source, p.target});
            continue;
        }
        Job job{0, 0, model.vocabulary().id(p.source), model.vocabulary().id(p.target), &p};
        if (method != Method::Emb) {
            for (const auto* s : {&p.source, &p.target})
                if (!ctx.panel.contains(*s)) throw UserError("gene '" + *s + "' is absent from the probe panel");
            job.i = ctx.panel.position(p.source);
            job.j = ctx.panel.position(p.target);
        }
        jobs.push_back(job);
    }
    if (jobs.empty()) throw UserError("every pair was skipped; the feature set is empty");

    // Shared per-gene quantities, computed once before the pair loop.
    std::vector<double> attn;
    if (method == Method::OriginAttn) attn = attention_scores(ctx);
    std::map<std::size_t, double> base_response;
    if (method == Method::VVP) {
        std::set<std::size_t> targets;
        for (const auto& jb : jobs) targets.insert({jb.i, jb.j});
        std::vector<std::size_t> list(targets.begin(), targets.end());
        std::vector<double> vals(list.size());
        const auto v = virtual_cell(ctx, grid);
        parallel_for(list.size(), opts.threads, [&](std::size_t k) {
            vals[k] = model.reconstruct(ctx.panel, v, detail::target_mask(ctx.panel.size(), list[k], opts))[list[k]];
        });
        for (std::size_t k = 0; k < list.size(); ++k) base_response[list[k]] = vals[k];
    }

    const std::size_t K = ctx.panel.size();
    auto direction = [&](const Job& jb, bool reverse) -> std::vector<double> {
        const std::size_t i = reverse ? jb.j : jb.i, j = reverse ? jb.i : jb.j;
        switch (method) {
            case Method::OriginPert:
            case Method::BaselinePert: return {origin_pert_score(ctx, i, j, opts)};
            case Method::OriginAttn: return {attn[i * K + j]};
            case Method::Emb: return emb_direction(model, reverse ? jb.id_j : jb.id_i, reverse ? jb.id_i : jb.id_j);
            case Method::VVP: return vvp_direction(ctx, grid, i, j, opts, base_response.at(j));
            case Method::GDT: return gdt_direction(ctx, grid, i, j, opts);
        }
        throw InvariantError("unknown method");
    };

    res.features.resize(jobs.size());
    parallel_for(jobs.size(), opts.threads, [&](std::size_t k) {
        const auto& jb = jobs[k];
        PairFeature f;
        f.source = jb.pair->source;
        f.target = jb.pair->target;
        f.source_id = jb.id_i;
        f.target_id = jb.id_j;
        f.method = method;
        f.values = direction(jb, false);
        const auto rev = direction(jb, true);
        f.values.insert(f.values.end(), rev.begin(), rev.end());
        for (double v : f.values) ensure(std::isfinite(v), "non-finite feature for " + f.source + " -> " + f.target);
        res.features[k] = std::move(f);
    });
    return res;
}

// ---------------------------------------------------------------------------
// Feature cache: CSV rows plus a JSON sidecar keyed by hashes

struct FeatureCacheMeta {
    std::string method;
    std::size_t dims = 0;
    std::size_t count = 0;
    std::string model_fingerprint;
    std::string panel_hash;
    /// Empty for the expression-free methods.
    std::string expression_hash;
    /// Hash of the requested pair list; empty when the caller does not track it.
    std::string pairs_hash;
    nlohmann::json grid;
    nlohmann::json options;
    std::vector<std::string> panel;
    std::string manifest;
    std::vector<std::string> warnings;
    std::vector<std::string> skipped;

    /// Identity of the cached content; cache hits need equal keys.
    std::string key() const {
        return Fnv1a{}.str(method).str(model_fingerprint).str(panel_hash).str(expression_hash).str(pairs_hash).str(grid.dump()).str(options.dump()).hex();
    }

    nlohmann::json to_json() const {
        return {{"method", method},
                {"dims", dims},
                {"count", count},
                {"model_fingerprint", model_fingerprint},
                {"panel_hash", panel_hash},
                {"expression_hash", expression_hash},
                {"pairs_hash", pairs_hash},
                {"grid", grid},
                {"options", options},
                {"panel", panel},
                {"manifest", manifest},
                {"warnings", warnings},
                {"skipped", skipped},
                {"key", key()}};
    }

    static FeatureCacheMeta from_json(const nlohmann::json& j) {
        FeatureCacheMeta m;
        try {
            m.method = j.at("method").get<std::string>();
            m.dims = j.at("dims").get<std::size_t>();
            m.count = j.at("count").get<std::size_t>();
            m.model_fingerprint = j.at("model_fingerprint").get<std::string>();
            m.panel_hash = j.at("panel_hash").get<std::string>();
            m.expression_hash = j.value("expression_hash", "");
            m.pairs_hash = j.value("pairs_hash", "");
            m.grid = j.at("grid");
            m.options = j.at("options");
            m.panel = j.value("panel", std::vector<std::string>{});
            m.manifest = j.value("manifest", "");
            m.warnings = j.value("warnings", std::vector<std::string>{});
            m.skipped = j.value("skipped", std::vector<std::string>{});
        } catch (const nlohmann::json::exception& e) {
            throw UserError(std::string("malformed feature cache metadata: ") + e.what());
        }
        return m;
    }
};

template <class P>
std::string pairs_hash(const std::vector<P>& pairs) {
    Fnv1a h;
    h.u64(pairs.size());
    for (const auto& p : pairs) h.str(p.source).str(p.target);
    return h.hex();
}

inline FeatureCacheMeta describe_extraction(const ProbeContext& ctx, Method method, const VirtualValueGrid& grid,
                                            const FeatureOptions& opts, const ExtractionResult& res) {
    FeatureCacheMeta m;
    m.method = method_name(method);
    m.dims = res.features.empty() ? 0 : res.features.front().dims();
    m.count = res.features.size();
    m.model_fingerprint = ctx.model->fingerprint();
    m.panel_hash = ctx.panel.hash();
    m.panel = ctx.panel.symbols();
    if (needs_expression(method)) m.expression_hash = ctx.expression_hash;
    if (method == Method::VVP || method == Method::GDT) m.grid = grid.to_json();
    nlohmann::json o = opts.to_json();
    if (method == Method::Emb || method == Method::OriginAttn) o = nlohmann::json::object();
    if (method != Method::BaselinePert && method != Method::OriginPert) o.erase("per_cell");
    m.options = o;
    m.warnings = res.warnings.messages;
    for (const auto& e : res.skipped) m.skipped.push_back(e.source + "->" + e.target);
    return m;
}

inline std::string features_to_csv(const std::vector<PairFeature>& feats) {
    std::ostringstream out;
    const std::size_t D = feats.empty() ? 0 : feats.front().dims();
    out << "method,source,target";
    for (std::size_t d = 0; d < D; ++d) out << ",dim" << d;
    out << "\n";
    for (const auto& f : feats) {
        ensure(f.dims() == D, "feature rows of unequal width");
        out << method_name(f.method) << ',' << f.source << ',' << f.target;
        for (double v : f.values) out << ',' << format_double(v);
        out << "\n";
    }
    return out.str();
}

inline std::vector<PairFeature> features_from_csv(const std::string& text, const model::GeneVocabulary* vocab = nullptr) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw UserError("feature cache is empty");
    const auto header = split(trim(line), ',');
    if (header.size() < 3 || header[0] != "method" || header[1] != "source" || header[2] != "target")
        throw UserError("feature cache header must start with method,source,target");
    const std::size_t D = header.size() - 3;
    std::vector<PairFeature> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cols = split(trim(line), ',');
        if (cols.size() != D + 3) throw UserError("feature cache line " + std::to_string(lineno) + ": expected " + std::to_string(D + 3) + " columns");
        PairFeature f;
        f.method = parse_method(cols[0]);
        f.source = cols[1];
        f.target = cols[2];
        if (vocab) {
            f.source_id = vocab->id(f.source);
            f.target_id = vocab->id(f.target);
        }
        f.values.resize(D);
        for (std::size_t d = 0; d < D; ++d)
            if (!parse_double(cols[d + 3], f.values[d]) || !std::isfinite(f.values[d]))
                throw UserError("feature cache line " + std::to_string(lineno) + ": bad number '" + cols[d + 3] + "'");
        out.push_back(std::move(f));
    }
    return out;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
    auto p = csv;
    p += ".meta.json";
    return p;
}

inline void save_feature_cache(const std::filesystem::path& csv, const std::vector<PairFeature>& feats, const FeatureCacheMeta& meta) {
    data::write_text(csv, features_to_csv(feats));
    data::write_text(sidecar_path(csv), meta.to_json().dump(2) + "\n");
}

struct FeatureCache {
    std::vector<PairFeature> features;
    FeatureCacheMeta meta;
};

inline FeatureCache load_feature_cache(const std::filesystem::path& csv) {
    FeatureCache c;
    try {
        c.meta = FeatureCacheMeta::from_json(nlohmann::json::parse(data::read_text(sidecar_path(csv))));
    } catch (const nlohmann::json::parse_error& e) {
        throw UserError("feature cache metadata is not valid JSON: " + std::string(e.what()));
    }
    c.features = features_from_csv(data::read_text(csv));
    if (c.features.size() != c.meta.count) throw UserError("feature cache row count does not match its metadata");
    for (const auto& f : c.features)
        if (f.dims() != c.meta.dims || method_name(f.method) != c.meta.method)
            throw UserError("feature cache rows do not match its metadata");
    return c;
}

/// Loads a cache only if its key matches `expected`; nullopt when the file
/// is missing or stale.
inline std::optional<FeatureCache> cache_lookup(const std::filesystem::path& csv, const FeatureCacheMeta& expected) {
    if (!std::filesystem::exists(csv) || !std::filesystem::exists(sidecar_path(csv))) return std::nullopt;
    auto c = load_feature_cache(csv);
    if (c.meta.key() != expected.key()) return std::nullopt;
    return c;
}

}  // namespace ugrn::features
