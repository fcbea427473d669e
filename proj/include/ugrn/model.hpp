#pragma once

// Common surface of the frozen expression-reconstruction backends: a gene
// vocabulary, resolved gene panels, and the ExpressionModel interface that
// the feature extractors query.

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ugrn/autodiff.hpp"
#include "ugrn/common.hpp"

namespace ugrn::model {

/// Ordered, duplicate-free gene symbols with dense ids 0..|V|-1.
class GeneVocabulary {
  public:
    GeneVocabulary() = default;
    explicit GeneVocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
        for (std::size_t k = 0; k < symbols_.size(); ++k) {
            require(!symbols_[k].empty(), "empty symbol in vocabulary");
            if (!index_.emplace(symbols_[k], k).second)
                throw UserError("duplicate symbol '" + symbols_[k] + "' in vocabulary");
        }
    }

    std::size_t size() const { return symbols_.size(); }
    const std::vector<std::string>& symbols() const { return symbols_; }
    const std::string& symbol(std::size_t id) const { return symbols_.at(id); }
    bool contains(const std::string& s) const { return index_.count(s) > 0; }

    std::size_t id(const std::string& s) const {
        auto it = index_.find(s);
        if (it == index_.end()) throw UserError("gene '" + s + "' is not in the model vocabulary");
        return it->second;
    }

    std::string hash() const { return hash_symbols(symbols_); }

  private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// The genes presented to a model in one query, in input order.
class Panel {
  public:
    Panel() = default;

    static Panel resolve(const GeneVocabulary& vocab, const std::vector<std::string>& symbols) {
        Panel p;
        p.symbols_ = symbols;
        for (std::size_t k = 0; k < symbols.size(); ++k) {
            p.ids_.push_back(vocab.id(symbols[k]));
            if (!p.position_.emplace(symbols[k], k).second)
                throw UserError("gene '" + symbols[k] + "' appears twice in the panel");
        }
        return p;
    }

    std::size_t size() const { return ids_.size(); }
    const std::vector<std::size_t>& ids() const { return ids_; }
    const std::vector<std::string>& symbols() const { return symbols_; }
    bool contains(const std::string& s) const { return position_.count(s) > 0; }

    std::size_t position(const std::string& s) const {
        auto it = position_.find(s);
        if (it == position_.end()) throw UserError("gene '" + s + "' is not in the panel");
        return it->second;
    }

    std::string hash() const { return hash_symbols(symbols_); }

  private:
    std::vector<std::size_t> ids_;
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, std::size_t> position_;
};

/// Attention maps of one forward pass: maps[layer][head] is K x K and
/// row-stochastic (row = querying gene, column = attended gene).
struct AttentionRecord {
    std::vector<std::vector<ad::Tensor>> maps;

    std::size_t layers() const { return maps.size(); }
    std::size_t heads() const { return maps.empty() ? 0 : maps.front().size(); }
};

/// Per-position flags; a masked position's value is hidden from the model
/// and replaced by its mask encoding. Empty means nothing is masked.
using MaskFlags = std::vector<std::uint8_t>;

/// A frozen reconstruction model M. Implementations are immutable after
/// construction, so every query is a pure function of its arguments and
/// may run concurrently.
class ExpressionModel {
  public:
    virtual ~ExpressionModel() = default;

    virtual std::string kind() const = 0;
    virtual const GeneVocabulary& vocabulary() const = 0;

    /// Reconstructed value for every panel position.
    virtual std::vector<double> reconstruct(const Panel& panel, std::span<const double> values,
                                            const MaskFlags& masked = {}) const = 0;

    /// d M(values)[target] / d values, one entry per panel position.
    virtual std::vector<double> input_gradient(const Panel& panel, std::span<const double> values,
                                               std::size_t target, const MaskFlags& masked = {}) const = 0;

    virtual bool has_attention() const { return false; }
    virtual AttentionRecord attention(const Panel&, std::span<const double>, const MaskFlags& = {}) const {
        throw UnsupportedError(kind() + " backend exposes no attention maps");
    }

    virtual bool has_embeddings() const { return false; }
    virtual std::size_t embedding_dim() const { return 0; }
    virtual std::span<const double> embedding(std::size_t) const {
        throw UnsupportedError(kind() + " backend has no gene embedding table");
    }

    /// Hash of the serialized checkpoint; identifies the frozen parameters.
    virtual std::string fingerprint() const = 0;

  protected:
    static void check_query(const Panel& panel, std::span<const double> values, const MaskFlags& masked) {
        if (values.size() != panel.size())
            throw UserError("model query has " + std::to_string(values.size()) + " values for a panel of " +
                            std::to_string(panel.size()) + " genes");
        if (!masked.empty() && masked.size() != panel.size()) throw UserError("mask length does not match the panel");
        for (double v : values) require(std::isfinite(v), "model input contains NaN or Inf");
    }
};

}  // namespace ugrn::model
