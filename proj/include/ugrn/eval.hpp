#pragma once

// Ranking metrics with fixed tie conventions, and the cross-dataset
// protocol runner that trains translators on one group of datasets and
// scores every dataset that shares no expression source with it.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ugrn/common.hpp"
#include "ugrn/data.hpp"
#include "ugrn/translator.hpp"

namespace ugrn::eval {

namespace detail {

inline void check_metric_input(const std::vector<double>& scores, const std::vector<int>& labels, std::size_t& pos, std::size_t& neg) {
    require(scores.size() == labels.size(), "scores and labels differ in length");
    pos = neg = 0;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        require(labels[k] == 0 || labels[k] == 1, "labels must be 0 or 1");
        require(!std::isnan(scores[k]), "score is NaN");
        (labels[k] ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) throw UserError("metric needs both positive and negative labels");
}

}  // namespace detail

/// P(score+ > score-) + 0.5 P(tie), via tie-averaged ranks.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::size_t P, N;
    detail::check_metric_input(scores, labels, P, N);
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // wins counted in half units: a positive beats every lower negative
    // and ties the negatives in its own block.
    double half_units = 0.0;
    std::size_t neg_below = 0;
    for (std::size_t s = 0; s < idx.size();) {
        std::size_t e = s, bp = 0, bn = 0;
        while (e < idx.size() && scores[idx[e]] == scores[idx[s]]) {
            (labels[idx[e]] ? bp : bn) += 1;
            ++e;
        }
        half_units += static_cast<double>(bp) * static_cast<double>(2 * neg_below + bn);
        neg_below += bn;
        s = e;
    }
    return half_units / (2.0 * static_cast<double>(P) * static_cast<double>(N));
}

/// Average precision with tied scores collapsed into blocks: every positive
/// in a block gets the precision at the block's lower boundary.
inline double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::size_t P, N;
    detail::check_metric_input(scores, labels, P, N);
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double sum = 0.0;
    std::size_t tp = 0, seen = 0;
    for (std::size_t s = 0; s < idx.size();) {
        std::size_t e = s, bp = 0;
        while (e < idx.size() && scores[idx[e]] == scores[idx[s]]) {
            bp += static_cast<std::size_t>(labels[idx[e]]);
            ++e;
        }
        tp += bp;
        seen += e - s;
        const double precision = static_cast<double>(tp) / static_cast<double>(seen);
        for (std::size_t q = 0; q < bp; ++q) sum += precision;
        s = e;
    }
    return sum / static_cast<double>(P);
}

// ---------------------------------------------------------------------------
// Reports

struct EvalRow {
    std::string train;
    std::vector<std::string> train_sources;
    std::string test;
    std::string test_source;
    std::string method;
    double auprc = 0.0;
    double auroc = 0.0;
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

struct SweepRow {
    double ratio = 0.0;
    std::string method;
    double auprc = 0.0;
    double auroc = 0.0;
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

struct Average {
    double auprc = 0.0;
    double auroc = 0.0;
    std::size_t rows = 0;
};

struct EvalReport {
    std::string protocol;
    std::vector<EvalRow> rows;
    std::vector<SweepRow> sweep;
    nlohmann::json config = nlohmann::json::object();
    std::vector<std::string> warnings;
    std::vector<std::string> errors;

    /// Unweighted means over rows, per method.
    std::map<std::string, Average> method_averages() const {
        std::map<std::string, Average> out;
        for (const auto& r : rows) {
            auto& a = out[r.method];
            a.auprc += r.auprc;
            a.auroc += r.auroc;
            ++a.rows;
        }
        for (auto& [m, a] : out) {
            a.auprc /= static_cast<double>(a.rows);
            a.auroc /= static_cast<double>(a.rows);
        }
        return out;
    }

    /// Unweighted means per (method, training group) over its test datasets.
    std::map<std::pair<std::string, std::string>, Average> train_averages() const {
        std::map<std::pair<std::string, std::string>, Average> out;
        for (const auto& r : rows) {
            auto& a = out[{r.method, r.train}];
            a.auprc += r.auprc;
            a.auroc += r.auroc;
            ++a.rows;
        }
        for (auto& [k, a] : out) {
            a.auprc /= static_cast<double>(a.rows);
            a.auroc /= static_cast<double>(a.rows);
        }
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["protocol"] = protocol;
        j["rows"] = nlohmann::json::array();
        for (const auto& r : rows)
            j["rows"].push_back({{"train", r.train},
                                 {"train_sources", r.train_sources},
                                 {"test", r.test},
                                 {"test_source", r.test_source},
                                 {"method", r.method},
                                 {"auprc", r.auprc},
                                 {"auroc", r.auroc},
                                 {"positives", r.positives},
                                 {"negatives", r.negatives}});
        j["averages"] = nlohmann::json::array();
        for (const auto& [m, a] : method_averages()) j["averages"].push_back({{"method", m}, {"auprc", a.auprc}, {"auroc", a.auroc}, {"rows", a.rows}});
        j["train_averages"] = nlohmann::json::array();
        for (const auto& [k, a] : train_averages())
            j["train_averages"].push_back({{"method", k.first}, {"train", k.second}, {"auprc", a.auprc}, {"auroc", a.auroc}, {"rows", a.rows}});
        j["sweep"] = nlohmann::json::array();
        for (const auto& s : sweep)
            j["sweep"].push_back({{"ratio", s.ratio},
                                  {"method", s.method},
                                  {"auprc", s.auprc},
                                  {"auroc", s.auroc},
                                  {"positives", s.positives},
                                  {"negatives", s.negatives}});
        j["config"] = config;
        j["warnings"] = warnings;
        j["errors"] = errors;
        return j;
    }

    static EvalReport from_json(const nlohmann::json& j) {
        EvalReport r;
        try {
            r.protocol = j.value("protocol", "");
            for (const auto& x : j.at("rows"))
                r.rows.push_back({x.at("train"), x.value("train_sources", std::vector<std::string>{}), x.at("test"),
                                  x.value("test_source", ""), x.at("method"), x.at("auprc"), x.at("auroc"), x.at("positives"),
                                  x.at("negatives")});
            for (const auto& x : j.value("sweep", nlohmann::json::array()))
                r.sweep.push_back({x.at("ratio"), x.at("method"), x.at("auprc"), x.at("auroc"), x.at("positives"), x.at("negatives")});
            r.config = j.value("config", nlohmann::json::object());
            r.warnings = j.value("warnings", std::vector<std::string>{});
            r.errors = j.value("errors", std::vector<std::string>{});
        } catch (const nlohmann::json::exception& e) {
            throw UserError(std::string("malformed report: ") + e.what());
        }
        return r;
    }

    std::string to_table() const {
        std::ostringstream out;
        auto num = [](double v) {
            std::ostringstream s;
            s << std::fixed << std::setprecision(4) << v;
            return s.str();
        };
        std::vector<std::vector<std::string>> cells{{"method", "train", "test", "AUPRC", "AUROC", "pos", "neg"}};
        for (const auto& r : rows)
            cells.push_back({r.method, r.train, r.test, num(r.auprc), num(r.auroc), std::to_string(r.positives), std::to_string(r.negatives)});
        for (const auto& [m, a] : method_averages()) cells.push_back({m, "(all)", "(average)", num(a.auprc), num(a.auroc), "", ""});
        for (const auto& s : sweep)
            cells.push_back({s.method, "ratio " + format_double(s.ratio), "(sweep)", num(s.auprc), num(s.auroc), std::to_string(s.positives),
                             std::to_string(s.negatives)});
        std::vector<std::size_t> width(cells.front().size(), 0);
        for (const auto& row : cells)
            for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
        for (const auto& row : cells) {
            for (std::size_t c = 0; c < row.size(); ++c) {
                const bool numeric = c >= 3;
                out << (c ? "  " : "") << (numeric ? std::right : std::left) << std::setw(static_cast<int>(width[c])) << row[c];
            }
            out << "\n";
        }
        for (const auto& e : errors) out << "error: " << e << "\n";
        return out.str();
    }
};

/// Throws if any row tests on a dataset whose source was used in training.
inline void verify_exclusion(const EvalReport& report) {
    for (const auto& r : report.rows)
        for (const auto& s : r.train_sources)
            if (s == r.test_source)
                throw InvariantError("report row trains on source '" + s + "' and tests on " + r.test + " from the same source");
}

// ---------------------------------------------------------------------------
// Protocols

enum class GroupKey { Dataset, Source, Species, Network };

inline std::string group_key_name(GroupKey k) {
    switch (k) {
        case GroupKey::Dataset: return "dataset";
        case GroupKey::Source: return "source";
        case GroupKey::Species: return "species";
        case GroupKey::Network: return "network";
    }
    throw InvariantError("unknown group key");
}

inline GroupKey parse_group_key(const std::string& s) {
    for (auto k : {GroupKey::Dataset, GroupKey::Source, GroupKey::Species, GroupKey::Network})
        if (group_key_name(k) == s) return k;
    throw UserError("unknown grouping key '" + s + "'");
}

struct DatasetEntry {
    std::string name;
    data::DatasetTags tags;
};

struct ProtocolSpec {
    std::vector<DatasetEntry> datasets;
    GroupKey group = GroupKey::Dataset;
    /// Leave-some-out: when non-empty only these datasets are tested and
    /// they never join a training group.
    std::vector<std::string> held_out;

    std::string group_of(const DatasetEntry& d) const {
        switch (group) {
            case GroupKey::Dataset: return d.name;
            case GroupKey::Source: return d.tags.source;
            case GroupKey::Species: return d.tags.species;
            case GroupKey::Network: return d.tags.network;
        }
        throw InvariantError("unknown group key");
    }
};

struct Split {
    std::string train;
    std::vector<std::size_t> train_sets;
    std::vector<std::size_t> test_sets;
};

/// Training groups in first-appearance order; each tests on every other
/// dataset outside the group whose source is not among the group's sources.
inline std::vector<Split> plan_splits(const ProtocolSpec& spec) {
    require(spec.datasets.size() >= 2, "a protocol needs at least two datasets");
    std::set<std::string> names;
    for (const auto& d : spec.datasets) {
        require(!d.name.empty(), "dataset without a name");
        require(names.insert(d.name).second, "dataset '" + d.name + "' listed twice");
        require(!d.tags.source.empty(), "dataset '" + d.name + "' has no source tag");
        if (spec.group != GroupKey::Dataset && spec.group_of(d).empty())
            throw UserError("dataset '" + d.name + "' has no " + group_key_name(spec.group) + " tag");
    }
    const std::set<std::string> held(spec.held_out.begin(), spec.held_out.end());
    for (const auto& h : held) require(names.count(h) > 0, "held-out dataset '" + h + "' is not in the protocol");

    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t k = 0; k < spec.datasets.size(); ++k) {
        if (held.count(spec.datasets[k].name)) continue;
        const auto g = spec.group_of(spec.datasets[k]);
        if (!members.count(g)) order.push_back(g);
        members[g].push_back(k);
    }
    std::vector<Split> out;
    for (const auto& g : order) {
        Split s{g, members[g], {}};
        std::set<std::string> sources;
        for (auto k : s.train_sets) sources.insert(spec.datasets[k].tags.source);
        for (std::size_t k = 0; k < spec.datasets.size(); ++k) {
            if (std::find(s.train_sets.begin(), s.train_sets.end(), k) != s.train_sets.end()) continue;
            if (!held.empty() && !held.count(spec.datasets[k].name)) continue;
            if (sources.count(spec.datasets[k].tags.source)) continue;
            s.test_sets.push_back(k);
        }
        if (s.test_sets.empty())
            throw UserError("training on '" + g + "' leaves no test dataset after excluding its sources");
        out.push_back(std::move(s));
    }
    require(!out.empty(), "protocol has no training group");
    return out;
}

/// Labelled feature rows of one dataset under one feature method.
struct LabeledFeatures {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
};

/// Features per dataset name, then per feature method name.
using FeatureTable = std::map<std::string, std::map<std::string, LabeledFeatures>>;

inline bool is_origin_method(const std::string& m) { return m == "origin-pert" || m == "origin-attn"; }

/// Feature methods an evaluation method consumes.
inline std::vector<std::string> method_inputs(const std::string& m) {
    if (m == "ens") return {"vvp", "gdt"};
    return {m};
}

struct ProtocolOptions {
    translator::TranslatorConfig translator;
    std::vector<std::string> methods;
};

namespace detail {

inline const LabeledFeatures& lookup(const FeatureTable& t, const std::string& dataset, const std::string& method) {
    auto it = t.find(dataset);
    if (it == t.end()) throw UserError("no features for dataset '" + dataset + "'");
    auto jt = it->second.find(method);
    if (jt == it->second.end()) throw UserError("no " + method + " features for dataset '" + dataset + "'");
    return jt->second;
}

inline LabeledFeatures concat(const std::vector<const LabeledFeatures*>& parts) {
    LabeledFeatures out;
    for (const auto* p : parts) {
        out.X.insert(out.X.end(), p->X.begin(), p->X.end());
        out.y.insert(out.y.end(), p->y.begin(), p->y.end());
    }
    return out;
}

}  // namespace detail

/// Scores of every row of `test` under `method`: the forward probe value
/// for origin methods, translator logits otherwise (averaged for ens).
class MethodScorer {
  public:
    MethodScorer(std::string method, const translator::TranslatorConfig& cfg, const std::vector<const LabeledFeatures*>& train_vvp_or_main,
                 const std::vector<const LabeledFeatures*>& train_gdt = {})
        : method_(std::move(method)) {
        if (is_origin_method(method_)) return;
        const auto main = detail::concat(train_vvp_or_main);
        if (method_ == "ens") {
            models_.push_back(translator::train(cfg, main.X, main.y, "vvp").model);
            const auto g = detail::concat(train_gdt);
            models_.push_back(translator::train(cfg, g.X, g.y, "gdt").model);
        } else {
            models_.push_back(translator::train(cfg, main.X, main.y, method_).model);
        }
    }

    /// Wraps already trained translators (two, vvp then gdt, for ens).
    MethodScorer(std::string method, std::vector<translator::TranslatorModel> models)
        : method_(std::move(method)), models_(std::move(models)) {
        const std::size_t want = is_origin_method(method_) ? 0 : (method_ == "ens" ? 2 : 1);
        if (models_.size() != want)
            throw UserError("method '" + method_ + "' needs " + std::to_string(want) + " translator checkpoint(s), got " +
                            std::to_string(models_.size()));
    }

    std::vector<double> score(const LabeledFeatures& main, const LabeledFeatures* gdt = nullptr) const {
        if (is_origin_method(method_)) {
            std::vector<double> s;
            for (const auto& x : main.X) {
                require(!x.empty(), "empty origin feature");
                s.push_back(x[0]);
            }
            return s;
        }
        if (method_ == "ens") {
            require(gdt != nullptr, "ens needs gdt features");
            if (gdt->y != main.y) throw UserError("vvp and gdt feature sets describe different pairs");
            return translator::ensemble_logits(models_[0].logits(main.X), models_[1].logits(gdt->X));
        }
        return models_[0].logits(main.X);
    }

    const std::vector<translator::TranslatorModel>& models() const { return models_; }

  private:
    std::string method_;
    std::vector<translator::TranslatorModel> models_;
};

/// Supplies the scorer of one (split, method) cell.
using ScorerProvider = std::function<MethodScorer(const Split&, const std::string& method)>;

/// Leave-one-group-out evaluation. A failing cell is recorded in
/// report.errors and the remaining cells still run.
inline EvalReport run_protocol(const ProtocolSpec& spec, const FeatureTable& features, const std::vector<std::string>& methods,
                               const ScorerProvider& provider) {
    require(!methods.empty(), "protocol needs at least one method");
    EvalReport report;
    report.protocol = "leave-one-" + group_key_name(spec.group) + "-out";
    const auto splits = plan_splits(spec);
    for (const auto& method : methods) {
        const auto inputs = method_inputs(method);
        for (const auto& split : splits) {
            std::vector<std::string> sources;
            for (auto k : split.train_sets) {
                const auto& s = spec.datasets[k].tags.source;
                if (std::find(sources.begin(), sources.end(), s) == sources.end()) sources.push_back(s);
            }
            try {
                const MethodScorer scorer = provider(split, method);
                for (auto k : split.test_sets) {
                    const auto& d = spec.datasets[k];
                    try {
                        const auto& main = detail::lookup(features, d.name, inputs[0]);
                        const LabeledFeatures* second = inputs.size() > 1 ? &detail::lookup(features, d.name, inputs[1]) : nullptr;
                        const auto s = scorer.score(main, second);
                        EvalRow row{split.train, sources, d.name, d.tags.source, method, auprc(s, main.y), auroc(s, main.y), 0, 0};
                        for (int y : main.y) (y ? row.positives : row.negatives) += 1;
                        report.rows.push_back(std::move(row));
                    } catch (const UserError& e) {
                        report.errors.push_back(method + " train=" + split.train + " test=" + d.name + ": " + e.what());
                    }
                }
            } catch (const UserError& e) {
                report.errors.push_back(method + " train=" + split.train + ": " + e.what());
            }
        }
    }
    verify_exclusion(report);
    return report;
}

/// Scorers trained on the split's training datasets.
inline ScorerProvider training_provider(const ProtocolSpec& spec, const FeatureTable& features, const translator::TranslatorConfig& cfg) {
    return [&spec, &features, cfg](const Split& split, const std::string& method) {
        const auto inputs = method_inputs(method);
        std::vector<const LabeledFeatures*> a, b;
        for (auto k : split.train_sets) {
            a.push_back(&detail::lookup(features, spec.datasets[k].name, inputs[0]));
            if (inputs.size() > 1) b.push_back(&detail::lookup(features, spec.datasets[k].name, inputs[1]));
        }
        return MethodScorer(method, cfg, a, b);
    };
}

inline EvalReport run_protocol(const ProtocolSpec& spec, const FeatureTable& features, const ProtocolOptions& opts) {
    return run_protocol(spec, features, opts.methods, training_provider(spec, features, opts.translator));
}

/// Scores and labels of one sampled pair set.
struct ScoredSet {
    std::vector<double> scores;
    std::vector<int> labels;
};

/// Evaluates `scored(ratio)` at every ratio.
inline std::vector<SweepRow> imbalance_sweep(const std::vector<double>& ratios, const std::string& method,
                                             const std::function<ScoredSet(double)>& scored) {
    require(!ratios.empty(), "imbalance sweep needs at least one ratio");
    std::vector<SweepRow> out;
    for (double r : ratios) {
        require(std::isfinite(r) && r > 0.0, "N/P ratios must be positive");
        const auto s = scored(r);
        SweepRow row{r, method, auprc(s.scores, s.labels), auroc(s.scores, s.labels), 0, 0};
        for (int y : s.labels) (y ? row.positives : row.negatives) += 1;
        out.push_back(row);
    }
    return out;
}

inline const std::vector<double>& default_ratios() {
    static const std::vector<double> r{1, 2, 3, 5, 10};
    return r;
}

}  // namespace ugrn::eval
