#pragma once

// Expression matrices, regulatory edge sets, the planted-network simulator,
// BEELINE-style file I/O, variance-based gene selection and labeled pair
// sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "ugrn/common.hpp"

namespace ugrn::data {

struct DatasetTags {
    std::string source;
    std::string species;
    std::string network;

    bool operator==(const DatasetTags&) const = default;
};

/// N cells x K genes, row-major, log1p-normalised non-negative values.
class ExpressionMatrix {
  public:
    ExpressionMatrix() = default;
    ExpressionMatrix(std::vector<std::string> symbols, std::size_t cells, std::vector<double> values,
                     DatasetTags tags = {})
        : symbols_(std::move(symbols)), cells_(cells), values_(std::move(values)), tags_(std::move(tags)) {
        validate();
    }

    std::size_t cells() const { return cells_; }
    std::size_t genes() const { return symbols_.size(); }
    const std::vector<std::string>& symbols() const { return symbols_; }
    const std::vector<double>& values() const { return values_; }
    const DatasetTags& tags() const { return tags_; }
    void set_tags(DatasetTags t) { tags_ = std::move(t); }

    double at(std::size_t cell, std::size_t gene) const { return values_[cell * genes() + gene]; }
    std::span<const double> cell(std::size_t c) const {
        return std::span<const double>(values_).subspan(c * genes(), genes());
    }

    std::optional<std::size_t> index_of(const std::string& symbol) const {
        auto it = index_.find(symbol);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::vector<double> column_means() const {
        std::vector<double> mu(genes(), 0.0);
        for (std::size_t c = 0; c < cells_; ++c)
            for (std::size_t g = 0; g < genes(); ++g) mu[g] += at(c, g);
        for (auto& m : mu) m /= static_cast<double>(cells_);
        return mu;
    }

    /// Population variance per gene.
    std::vector<double> column_variances() const {
        const auto mu = column_means();
        std::vector<double> var(genes(), 0.0);
        for (std::size_t c = 0; c < cells_; ++c)
            for (std::size_t g = 0; g < genes(); ++g) {
                const double d = at(c, g) - mu[g];
                var[g] += d * d;
            }
        for (auto& v : var) v /= static_cast<double>(cells_);
        return var;
    }

    /// Columns in the given order.
    ExpressionMatrix select_columns(const std::vector<std::size_t>& cols) const {
        std::vector<std::string> syms;
        for (auto c : cols) syms.push_back(symbols_.at(c));
        std::vector<double> vals(cells_ * cols.size());
        for (std::size_t r = 0; r < cells_; ++r)
            for (std::size_t k = 0; k < cols.size(); ++k) vals[r * cols.size() + k] = at(r, cols[k]);
        return ExpressionMatrix(std::move(syms), cells_, std::move(vals), tags_);
    }

    bool operator==(const ExpressionMatrix& o) const {
        return symbols_ == o.symbols_ && cells_ == o.cells_ && values_ == o.values_ && tags_ == o.tags_;
    }

  private:
    void validate() {
        require(cells_ >= 1, "expression matrix needs at least one cell");
        require(symbols_.size() >= 2, "expression matrix needs at least two genes");
        require(values_.size() == cells_ * symbols_.size(), "expression matrix value count does not match N x K");
        index_.clear();
        for (std::size_t k = 0; k < symbols_.size(); ++k) {
            require(!symbols_[k].empty(), "empty gene symbol in column " + std::to_string(k));
            if (!index_.emplace(symbols_[k], k).second) throw UserError("duplicate gene column '" + symbols_[k] + "'");
        }
        for (double v : values_) require(std::isfinite(v), "expression matrix contains NaN or Inf");
    }

    std::vector<std::string> symbols_;
    std::size_t cells_ = 0;
    std::vector<double> values_;
    DatasetTags tags_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Edge {
    std::string source;
    std::string target;
    auto operator<=>(const Edge&) const = default;
};

/// Directed TF -> target edges. Every source is a TF; no self-loops or
/// duplicates.
class EdgeSet {
  public:
    EdgeSet() = default;
    EdgeSet(std::vector<Edge> edges, std::vector<std::string> tfs) : edges_(std::move(edges)), tfs_(std::move(tfs)) {
        std::set<std::string> tfset(tfs_.begin(), tfs_.end());
        require(tfset.size() == tfs_.size(), "duplicate TF in TF list");
        std::set<Edge> seen;
        for (const auto& e : edges_) {
            require(tfset.count(e.source) > 0, "edge source '" + e.source + "' is not a TF");
            require(e.source != e.target, "self-loop on '" + e.source + "'");
            require(seen.insert(e).second, "duplicate edge " + e.source + " -> " + e.target);
        }
        lookup_ = std::move(seen);
    }

    const std::vector<Edge>& edges() const { return edges_; }
    const std::vector<std::string>& tfs() const { return tfs_; }
    std::size_t size() const { return edges_.size(); }
    bool empty() const { return edges_.empty(); }
    bool contains(const std::string& s, const std::string& t) const { return lookup_.count(Edge{s, t}) > 0; }
    bool is_tf(const std::string& s) const { return std::find(tfs_.begin(), tfs_.end(), s) != tfs_.end(); }

    /// Edges whose source is in `sources`; the TF list shrinks to match.
    EdgeSet restricted_to_sources(const std::vector<std::string>& sources) const {
        std::set<std::string> keep(sources.begin(), sources.end());
        std::vector<std::string> tfs;
        for (const auto& tf : tfs_)
            if (keep.count(tf)) tfs.push_back(tf);
        std::vector<Edge> edges;
        for (const auto& e : edges_)
            if (keep.count(e.source)) edges.push_back(e);
        return EdgeSet(std::move(edges), std::move(tfs));
    }

  private:
    std::vector<Edge> edges_;
    std::vector<std::string> tfs_;
    std::set<Edge> lookup_;
};

/// Warnings collected while loading or extracting, surfaced in run reports.
struct Warnings {
    std::vector<std::string> messages;
    void add(std::string m) { messages.push_back(std::move(m)); }
    std::size_t count() const { return messages.size(); }
};

// ---------------------------------------------------------------------------
// Planted-network simulator

struct SynthConfig {
    std::size_t genes = 50;
    std::size_t tfs = 10;
    double density = 0.15;
    double weight_scale = 1.0;
    double noise = 0.1;
    std::size_t cells = 2000;
    std::uint64_t seed = 0;
    std::string symbol_prefix = "G";
    /// Log-normal TF expression: exp(mu + sd * z), clipped to [0, tf_max].
    double tf_log_mean = 0.0;
    double tf_log_sd = 0.5;
    double tf_max = 6.0;

    void validate() const {
        require(tfs >= 1, "simulator needs at least one TF");
        require(tfs <= genes, "more TFs than genes");
        require(genes >= 2, "simulator needs at least two genes");
        require(density > 0.0 && density <= 1.0, "edge density must be in (0, 1]");
        require(noise >= 0.0, "noise sigma must be >= 0");
        require(cells >= 1, "simulator needs at least one cell");
        require(weight_scale > 0.0, "weight scale must be > 0");
    }
};

/// Structural equations x_j = ReLU(sum_i w_ij x_i + b_j) + noise for the
/// non-TF genes; TFs are exogenous.
struct PlantedNetwork {
    std::vector<std::string> symbols;
    std::size_t tfs = 0;  // the first `tfs` symbols are TFs
    std::map<std::pair<std::size_t, std::size_t>, double> weights;  // (tf, target) -> w
    std::vector<double> bias;                                        // per gene; TF entries unused

    std::vector<std::string> tf_symbols() const { return {symbols.begin(), symbols.begin() + static_cast<std::ptrdiff_t>(tfs)}; }

    EdgeSet edges() const {
        std::vector<Edge> e;
        for (const auto& [key, w] : weights)
            if (w != 0.0) e.push_back({symbols[key.first], symbols[key.second]});
        return EdgeSet(std::move(e), tf_symbols());
    }
};

struct SyntheticDataset {
    ExpressionMatrix expression;
    EdgeSet edges;
    PlantedNetwork planted;
};

inline std::string gene_symbol(const std::string& prefix, std::size_t k, std::size_t total) {
    std::string num = std::to_string(k);
    const std::size_t width = std::max<std::size_t>(3, std::to_string(total > 0 ? total - 1 : 0).size());
    if (num.size() < width) num.insert(0, width - num.size(), '0');
    return prefix + num;
}

/// Draws the planted weights: each (TF, non-TF) pair carries an edge with
/// probability `density` and weight +-U[0.5, 1.5] * scale. The bias of a
/// target is U[0.5, 1.5] * scale plus the magnitude of its negative inputs
/// at the median TF level, which keeps the typical pre-activation positive.
inline PlantedNetwork plant_network(const SynthConfig& cfg) {
    cfg.validate();
    PlantedNetwork net;
    for (std::size_t k = 0; k < cfg.genes; ++k) net.symbols.push_back(gene_symbol(cfg.symbol_prefix, k, cfg.genes));
    net.tfs = cfg.tfs;
    net.bias.assign(cfg.genes, 0.0);
    Rng rng(derive_seed(cfg.seed, "network"));
    const double median_tf = std::min(std::exp(cfg.tf_log_mean), cfg.tf_max);
    for (std::size_t j = cfg.tfs; j < cfg.genes; ++j) {
        double negative_mass = 0.0;
        for (std::size_t i = 0; i < cfg.tfs; ++i) {
            const double u = rng.uniform();
            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            const double mag = rng.uniform(0.5, 1.5) * cfg.weight_scale;
            if (u < cfg.density) {
                net.weights[{i, j}] = sign * mag;
                if (sign < 0) negative_mass += mag;
            }
        }
        net.bias[j] = rng.uniform(0.5, 1.5) * cfg.weight_scale + negative_mass * median_tf;
    }
    return net;
}

/// Samples cells from the structural equations of `net`.
inline ExpressionMatrix simulate_expression(const PlantedNetwork& net, const SynthConfig& cfg) {
    const std::size_t K = net.symbols.size();
    require(net.tfs >= 1, "planted network has zero TFs");
    require(net.tfs <= K, "planted network has more TFs than genes");
    require(net.bias.size() == K, "planted network bias vector has wrong length");
    std::vector<std::vector<std::pair<std::size_t, double>>> inputs(K);
    for (const auto& [key, w] : net.weights) {
        require(key.first < net.tfs, "planted edge source is not a TF");
        require(key.second < K && key.second != key.first, "planted edge target out of range");
        inputs[key.second].push_back({key.first, w});
    }
    Rng rng(derive_seed(cfg.seed, "cells"));
    std::vector<double> values(cfg.cells * K, 0.0);
    for (std::size_t c = 0; c < cfg.cells; ++c) {
        double* row = values.data() + c * K;
        for (std::size_t i = 0; i < net.tfs; ++i)
            row[i] = std::clamp(std::exp(cfg.tf_log_mean + cfg.tf_log_sd * rng.normal()), 0.0, cfg.tf_max);
        for (std::size_t j = net.tfs; j < K; ++j) {
            double pre = net.bias[j];
            for (const auto& [i, w] : inputs[j]) pre += w * row[i];
            const double noise = cfg.noise > 0.0 ? cfg.noise * rng.normal() : 0.0;
            row[j] = std::max(0.0, std::max(0.0, pre) + noise);
        }
    }
    return ExpressionMatrix(net.symbols, cfg.cells, std::move(values));
}

inline SyntheticDataset generate_synthetic(const SynthConfig& cfg) {
    auto net = plant_network(cfg);
    auto expr = simulate_expression(net, cfg);
    auto edges = net.edges();
    return {std::move(expr), std::move(edges), std::move(net)};
}

/// A network variant over the same expression: each edge survives with
/// probability `keep`.
inline EdgeSet network_variant(const EdgeSet& edges, double keep, std::uint64_t seed) {
    require(keep > 0.0 && keep <= 1.0, "edge keep fraction must be in (0, 1]");
    Rng rng(derive_seed(seed, "variant"));
    std::vector<Edge> kept;
    for (const auto& e : edges.edges())
        if (rng.uniform() < keep) kept.push_back(e);
    return EdgeSet(std::move(kept), edges.tfs());
}

// ---------------------------------------------------------------------------
// File formats

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UserError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw UserError("failed writing '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UserError("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Header row of gene symbols, one row per cell, no index column.
inline std::string expression_to_csv(const ExpressionMatrix& m) {
    std::string out;
    for (std::size_t k = 0; k < m.genes(); ++k) {
        if (k) out += ',';
        out += m.symbols()[k];
    }
    out += '\n';
    for (std::size_t c = 0; c < m.cells(); ++c) {
        for (std::size_t k = 0; k < m.genes(); ++k) {
            if (k) out += ',';
            out += format_double(m.at(c, k));
        }
        out += '\n';
    }
    return out;
}

inline ExpressionMatrix expression_from_csv(const std::string& text, DatasetTags tags = {}) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> symbols;
    while (std::getline(in, line)) {
        ++lineno;
        if (!trim(line).empty()) break;
    }
    for (auto& s : split(line, ',')) {
        auto t = trim(s);
        if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
        symbols.push_back(t);
    }
    require(symbols.size() >= 2, "expression CSV header must list at least two genes");
    std::vector<double> values;
    std::size_t cells = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != symbols.size())
            throw UserError("expression CSV line " + std::to_string(lineno) + ": expected " +
                            std::to_string(symbols.size()) + " fields, got " + std::to_string(fields.size()));
        for (const auto& f : fields) {
            double v;
            if (!parse_double(f, v) || !std::isfinite(v))
                throw UserError("expression CSV line " + std::to_string(lineno) + ": bad number '" + f + "'");
            if (v < 0.0)
                throw UserError("expression CSV line " + std::to_string(lineno) + ": negative expression value");
            values.push_back(v);
        }
        ++cells;
    }
    return ExpressionMatrix(std::move(symbols), cells, std::move(values), std::move(tags));
}

inline void save_expression(const std::filesystem::path& path, const ExpressionMatrix& m) {
    write_text(path, expression_to_csv(m));
}

inline ExpressionMatrix load_expression(const std::filesystem::path& path, DatasetTags tags = {}) {
    return expression_from_csv(read_text(path), std::move(tags));
}

/// Row of an edge TSV. label is absent for plain edge lists.
struct EdgeRow {
    std::string source;
    std::string target;
    std::optional<int> label;
};

inline std::vector<EdgeRow> parse_edge_rows(const std::string& text) {
    std::vector<EdgeRow> rows;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        auto f = split(t, '\t');
        if (f.size() != 2 && f.size() != 3)
            throw UserError("edge TSV line " + std::to_string(lineno) + ": expected 2 or 3 tab-separated columns");
        EdgeRow row{trim(f[0]), trim(f[1]), std::nullopt};
        if (row.source.empty() || row.target.empty())
            throw UserError("edge TSV line " + std::to_string(lineno) + ": empty gene symbol");
        if (f.size() == 3) {
            const auto lab = trim(f[2]);
            if (lab != "0" && lab != "1")
                throw UserError("edge TSV line " + std::to_string(lineno) + ": label must be 0 or 1");
            row.label = lab == "1" ? 1 : 0;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Parses an edge TSV. Rows labeled 0 are not edges and are skipped. When
/// `known` is given, rows naming other symbols are dropped with a warning.
/// The TF list defaults to the distinct edge sources.
inline EdgeSet edges_from_tsv(const std::string& text, const std::vector<std::string>* known,
                              std::optional<std::vector<std::string>> tfs, Warnings* warnings) {
    std::unordered_set<std::string> known_set;
    if (known) known_set.insert(known->begin(), known->end());
    std::vector<std::string> tf_list;
    std::set<std::string> tf_set;
    if (tfs) {
        for (const auto& tf : *tfs)
            if (tf_set.insert(tf).second) tf_list.push_back(tf);
    }
    auto warn = [&](std::string m) {
        if (warnings) warnings->add(std::move(m));
    };
    std::vector<Edge> edges;
    std::set<Edge> seen;
    for (const auto& row : parse_edge_rows(text)) {
        if (row.label && *row.label == 0) continue;
        if (known) {
            const bool ok_s = known_set.count(row.source) > 0, ok_t = known_set.count(row.target) > 0;
            if (!ok_s || !ok_t) {
                warn("edge " + row.source + " -> " + row.target + " dropped: unknown symbol '" +
                     (!ok_s ? row.source : row.target) + "'");
                continue;
            }
        }
        if (row.source == row.target) {
            warn("self-loop on " + row.source + " dropped");
            continue;
        }
        if (tfs && !tf_set.count(row.source)) {
            warn("edge " + row.source + " -> " + row.target + " dropped: source is not a listed TF");
            continue;
        }
        Edge e{row.source, row.target};
        if (!seen.insert(e).second) {
            warn("duplicate edge " + row.source + " -> " + row.target + " dropped");
            continue;
        }
        if (!tfs && tf_set.insert(row.source).second) tf_list.push_back(row.source);
        edges.push_back(std::move(e));
    }
    return EdgeSet(std::move(edges), std::move(tf_list));
}

inline EdgeSet load_edges(const std::filesystem::path& path, const std::vector<std::string>* known = nullptr,
                          std::optional<std::vector<std::string>> tfs = std::nullopt, Warnings* warnings = nullptr) {
    return edges_from_tsv(read_text(path), known, std::move(tfs), warnings);
}

inline std::string edges_to_tsv(const EdgeSet& edges, const std::vector<std::string>& header_comments = {}) {
    std::string out;
    for (const auto& c : header_comments) out += "# " + c + "\n";
    for (const auto& e : edges.edges()) out += e.source + "\t" + e.target + "\n";
    return out;
}

inline void save_edges(const std::filesystem::path& path, const EdgeSet& edges,
                       const std::vector<std::string>& header_comments = {}) {
    write_text(path, edges_to_tsv(edges, header_comments));
}

/// Dataset sidecar: tags plus the TF list.
struct DatasetMeta {
    DatasetTags tags;
    std::vector<std::string> tfs;
    std::string manifest;
};

inline nlohmann::json meta_to_json(const DatasetMeta& m) {
    nlohmann::json j;
    j["source"] = m.tags.source;
    j["species"] = m.tags.species;
    j["network"] = m.tags.network;
    j["tfs"] = m.tfs;
    if (!m.manifest.empty()) j["manifest"] = m.manifest;
    return j;
}

inline DatasetMeta meta_from_json(const nlohmann::json& j) {
    DatasetMeta m;
    try {
        m.tags.source = j.value("source", "");
        m.tags.species = j.value("species", "");
        m.tags.network = j.value("network", "");
        m.tfs = j.value("tfs", std::vector<std::string>{});
        m.manifest = j.value("manifest", "");
    } catch (const nlohmann::json::exception& e) {
        throw UserError(std::string("malformed dataset metadata: ") + e.what());
    }
    return m;
}

inline void save_meta(const std::filesystem::path& path, const DatasetMeta& m) {
    write_text(path, meta_to_json(m).dump(2) + "\n");
}

inline DatasetMeta load_meta(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw UserError("cannot parse metadata '" + path.string() + "': " + e.what());
    }
    return meta_from_json(j);
}

inline std::string planted_to_tsv(const PlantedNetwork& net) {
    std::string out = "# kind\tsource\ttarget\tvalue\n";
    for (const auto& [key, w] : net.weights)
        out += "W\t" + net.symbols[key.first] + "\t" + net.symbols[key.second] + "\t" + format_double(w) + "\n";
    for (std::size_t j = net.tfs; j < net.symbols.size(); ++j)
        out += "B\t-\t" + net.symbols[j] + "\t" + format_double(net.bias[j]) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Gene selection

/// Keeps the k highest-variance genes plus every TF, preserving column
/// order. Ties in variance go to the lexicographically smaller symbol.
inline ExpressionMatrix select_hvg(const ExpressionMatrix& m, long k, const std::vector<std::string>& tfs = {}) {
    require(k > 0, "select_hvg: k must be positive");
    require(static_cast<std::size_t>(k) <= m.genes(), "select_hvg: k exceeds the number of genes");
    const auto var = m.column_variances();
    std::vector<std::size_t> order(m.genes());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (var[a] != var[b]) return var[a] > var[b];
        return m.symbols()[a] < m.symbols()[b];
    });
    std::vector<bool> keep(m.genes(), false);
    for (long r = 0; r < k; ++r) keep[order[static_cast<std::size_t>(r)]] = true;
    for (const auto& tf : tfs)
        if (auto idx = m.index_of(tf)) keep[*idx] = true;
    std::vector<std::size_t> cols;
    for (std::size_t g = 0; g < m.genes(); ++g)
        if (keep[g]) cols.push_back(g);
    return m.select_columns(cols);
}

// ---------------------------------------------------------------------------
// Pair sampling

struct LabeledPair {
    std::string source;
    std::string target;
    int label = 0;
    bool operator==(const LabeledPair&) const = default;
};

struct PairSampleSet {
    std::vector<LabeledPair> pairs;
    double ratio = 1.0;
    std::uint64_t seed = 0;

    std::size_t positives() const {
        return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](auto& p) { return p.label == 1; }));
    }
    std::size_t negatives() const { return pairs.size() - positives(); }
};

/// Positives: every edge with both ends in the panel. Negatives:
/// floor(ratio * P) pairs drawn uniformly without replacement from
/// (TF, gene) pairs in the panel that are not edges. Candidates are
/// enumerated in TF-list x panel order and shuffled with the seed, so the
/// sample at a smaller ratio is a prefix of the sample at a larger one.
inline PairSampleSet sample_pairs(const EdgeSet& edges, const std::vector<std::string>& panel, double ratio,
                                  std::uint64_t seed) {
    require(ratio >= 0.0 && std::isfinite(ratio), "N/P ratio must be a finite non-negative number");
    std::unordered_set<std::string> in_panel(panel.begin(), panel.end());
    PairSampleSet out;
    out.ratio = ratio;
    out.seed = seed;
    for (const auto& e : edges.edges())
        if (in_panel.count(e.source) && in_panel.count(e.target)) out.pairs.push_back({e.source, e.target, 1});
    const std::size_t P = out.pairs.size();
    require(P >= 1, "sample_pairs: no positive edges inside the gene panel");

    std::vector<LabeledPair> candidates;
    for (const auto& tf : edges.tfs()) {
        if (!in_panel.count(tf)) continue;
        for (const auto& g : panel)
            if (g != tf && !edges.contains(tf, g)) candidates.push_back({tf, g, 0});
    }
    const auto wanted = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(P) + 1e-9));
    if (wanted > candidates.size()) {
        std::ostringstream os;
        os << "sample_pairs: need " << wanted << " negatives but only " << candidates.size()
           << " candidates exist (maximum achievable N/P ratio " << static_cast<double>(candidates.size()) / static_cast<double>(P)
           << ")";
        throw UserError(os.str());
    }
    Rng rng(derive_seed(seed, "negatives"));
    rng.shuffle(candidates);
    out.pairs.insert(out.pairs.end(), candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(wanted));
    return out;
}

/// Every positive edge and every candidate negative inside the panel.
inline PairSampleSet all_candidate_pairs(const EdgeSet& edges, const std::vector<std::string>& panel) {
    std::unordered_set<std::string> in_panel(panel.begin(), panel.end());
    PairSampleSet out;
    for (const auto& e : edges.edges())
        if (in_panel.count(e.source) && in_panel.count(e.target)) out.pairs.push_back({e.source, e.target, 1});
    const std::size_t P = out.pairs.size();
    require(P >= 1, "no positive edges inside the gene panel");
    for (const auto& tf : edges.tfs()) {
        if (!in_panel.count(tf)) continue;
        for (const auto& g : panel)
            if (g != tf && !edges.contains(tf, g)) out.pairs.push_back({tf, g, 0});
    }
    out.ratio = static_cast<double>(out.pairs.size() - P) / static_cast<double>(P);
    return out;
}

inline std::string pairs_to_tsv(const std::vector<LabeledPair>& pairs, const std::vector<std::string>& header_comments = {}) {
    std::string out;
    for (const auto& c : header_comments) out += "# " + c + "\n";
    for (const auto& p : pairs) out += p.source + "\t" + p.target + "\t" + std::to_string(p.label) + "\n";
    return out;
}

/// Reads a labeled pair list (three-column edge TSV). Unlabeled rows count
/// as positives.
inline std::vector<LabeledPair> pairs_from_tsv(const std::string& text) {
    std::vector<LabeledPair> out;
    for (const auto& row : parse_edge_rows(text)) out.push_back({row.source, row.target, row.label.value_or(1)});
    return out;
}

}  // namespace ugrn::data
