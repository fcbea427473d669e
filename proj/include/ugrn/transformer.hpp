#pragma once

// Toy single-cell foundation model: a pre-LN transformer encoder over the
// genes of a cell. Each token is the gene's vocabulary embedding plus a
// continuous encoding of its expression value (scalar -> MLP -> d), so the
// reconstruction is differentiable with respect to the input values. A
// masked position uses a learned mask vector in place of the value encoding.
// Pretraining minimises the squared reconstruction error on masked
// positions only.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ugrn/autodiff.hpp"
#include "ugrn/common.hpp"
#include "ugrn/data.hpp"
#include "ugrn/model.hpp"
#include "ugrn/optim.hpp"

namespace ugrn::model {

struct ScFMConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t dim = 64;
    std::size_t value_hidden = 32;
    /// Feed-forward width; 0 means 2 * dim.
    std::size_t ffn_hidden = 0;
    double mask_fraction = 0.15;
    std::size_t steps = 300;
    std::size_t batch_cells = 16;
    double lr = 1e-3;
    std::uint64_t seed = 0;

    std::size_t ffn() const { return ffn_hidden ? ffn_hidden : 2 * dim; }

    void validate() const {
        require(layers >= 1, "transformer needs at least one layer");
        require(heads >= 1 && dim >= 1, "transformer needs positive heads and model dim");
        require(dim % heads == 0, "model dim must be divisible by the number of heads");
        require(value_hidden >= 1, "value-encoder hidden dim must be positive");
        require(mask_fraction > 0.0 && mask_fraction < 1.0, "mask fraction must be in (0, 1)");
        require(batch_cells >= 1, "batch must hold at least one cell");
        require(lr > 0.0, "learning rate must be positive");
    }
};

template <class T>
struct LayerWeights {
    T ln1_gain, ln1_bias;
    T wq, bq, wk, bk, wv, bv, wo, bo;
    T ln2_gain, ln2_bias;
    T ff_w1, ff_b1, ff_w2, ff_b2;

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        visit_all(*this, prefix, f);
    }
    template <class F>
    void visit(const std::string& prefix, F&& f) const {
        visit_all(*this, prefix, f);
    }

  private:
    template <class Self, class F>
    static void visit_all(Self& self, const std::string& prefix, F& f) {
        f(prefix + "ln1_gain", self.ln1_gain);
        f(prefix + "ln1_bias", self.ln1_bias);
        f(prefix + "wq", self.wq);
        f(prefix + "bq", self.bq);
        f(prefix + "wk", self.wk);
        f(prefix + "bk", self.bk);
        f(prefix + "wv", self.wv);
        f(prefix + "bv", self.bv);
        f(prefix + "wo", self.wo);
        f(prefix + "bo", self.bo);
        f(prefix + "ln2_gain", self.ln2_gain);
        f(prefix + "ln2_bias", self.ln2_bias);
        f(prefix + "ff_w1", self.ff_w1);
        f(prefix + "ff_b1", self.ff_b1);
        f(prefix + "ff_w2", self.ff_w2);
        f(prefix + "ff_b2", self.ff_b2);
    }
};

/// Parameters of the toy scFM; T is ad::Tensor for storage and ad::Var
/// while recording a forward pass.
template <class T>
struct ScFMWeights {
    T gene_embedding;  // |V| x d
    T value_w1, value_b1, value_w2, value_b2;
    T mask_vector;  // 1 x d
    std::vector<LayerWeights<T>> layers;
    T final_gain, final_bias;
    T head_w, head_b;  // d x 1, 1

    /// Visits every parameter in a fixed order (serialisation and optimiser
    /// slots depend on it).
    template <class F>
    void visit(F&& f) {
        visit_all(*this, f);
    }
    template <class F>
    void visit(F&& f) const {
        visit_all(*this, f);
    }

  private:
    template <class Self, class F>
    static void visit_all(Self& self, F& f) {
        f("gene_embedding", self.gene_embedding);
        f("value_w1", self.value_w1);
        f("value_b1", self.value_b1);
        f("value_w2", self.value_w2);
        f("value_b2", self.value_b2);
        f("mask_vector", self.mask_vector);
        for (std::size_t l = 0; l < self.layers.size(); ++l) self.layers[l].visit("layer" + std::to_string(l) + ".", f);
        f("final_gain", self.final_gain);
        f("final_bias", self.final_bias);
        f("head_w", self.head_w);
        f("head_b", self.head_b);
    }
};

using ScFMParams = ScFMWeights<ad::Tensor>;

inline ScFMParams init_scfm_params(const ScFMConfig& cfg, std::size_t vocab_size, std::uint64_t seed) {
    cfg.validate();
    require(vocab_size >= 1, "empty vocabulary");
    Rng rng(derive_seed(seed, "scfm-init"));
    const std::size_t d = cfg.dim, h = cfg.value_hidden, f = cfg.ffn();
    auto uniform = [&](ad::Shape s, double bound) {
        auto t = ad::Tensor::zeros(std::move(s));
        for (auto& v : t.values) v = rng.uniform(-bound, bound);
        return t;
    };
    auto dense = [&](std::size_t in, std::size_t out) { return uniform({in, out}, 1.0 / std::sqrt(static_cast<double>(in))); };
    auto zeros = [](std::size_t n) { return ad::Tensor::zeros({n}); };
    auto ones = [](std::size_t n) { return ad::Tensor::filled({n}, 1.0); };

    ScFMParams p;
    p.gene_embedding = uniform({vocab_size, d}, 0.5);
    p.value_w1 = dense(1, h);
    p.value_b1 = uniform({h}, 1.0);
    p.value_w2 = dense(h, d);
    p.value_b2 = zeros(d);
    p.mask_vector = uniform({1, d}, 0.5);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        LayerWeights<ad::Tensor> L;
        L.ln1_gain = ones(d);
        L.ln1_bias = zeros(d);
        L.wq = dense(d, d);
        L.bq = zeros(d);
        L.wk = dense(d, d);
        L.bk = zeros(d);
        L.wv = dense(d, d);
        L.bv = zeros(d);
        L.wo = dense(d, d);
        L.bo = zeros(d);
        L.ln2_gain = ones(d);
        L.ln2_bias = zeros(d);
        L.ff_w1 = dense(d, f);
        L.ff_b1 = zeros(f);
        L.ff_w2 = dense(f, d);
        L.ff_b2 = zeros(d);
        p.layers.push_back(std::move(L));
    }
    p.final_gain = ones(d);
    p.final_bias = zeros(d);
    p.head_w = dense(d, 1);
    p.head_b = zeros(1);
    return p;
}

inline ScFMWeights<ad::Var> bind_params(ad::Tape& tape, const ScFMParams& params, bool trainable) {
    ScFMWeights<ad::Var> vars;
    vars.layers.resize(params.layers.size());
    std::vector<ad::Var> flat;
    params.visit([&](const std::string&, const ad::Tensor& t) { flat.push_back(tape.leaf(t, trainable)); });
    std::size_t k = 0;
    vars.visit([&](const std::string&, ad::Var& v) { v = flat[k++]; });
    return vars;
}

struct ScFMForward {
    ad::Var values;  // K x 1 leaf
    ad::Var output;  // K x 1
    std::vector<std::vector<ad::Var>> attention;
};

namespace detail {

inline ad::Var silu(const ad::Var& x) { return ad::mul(x, ad::sigmoid(x)); }

}  // namespace detail

/// Records one forward pass for a single cell.
inline ScFMForward scfm_forward(ad::Tape& tape, const ScFMConfig& cfg, const ScFMWeights<ad::Var>& w,
                                const std::vector<std::size_t>& gene_ids, const ad::Var& values, const MaskFlags& masked,
                                bool keep_attention) {
    using namespace ad;
    const std::size_t K = gene_ids.size(), d = cfg.dim, dh = cfg.dim / cfg.heads;
    ScFMForward out;
    out.values = values;

    Var enc = add_row(matmul(detail::silu(add_row(matmul(values, w.value_w1), w.value_b1)), w.value_w2), w.value_b2);
    bool any_masked = false;
    for (auto m : masked) any_masked = any_masked || m;
    if (any_masked) {
        Tensor keep = Tensor::filled({K, d}, 1.0);
        Tensor flag = Tensor::zeros({K, 1});
        for (std::size_t k = 0; k < K; ++k)
            if (masked[k]) {
                flag.values[k] = 1.0;
                std::fill_n(keep.values.begin() + static_cast<std::ptrdiff_t>(k * d), d, 0.0);
            }
        enc = add(mul(enc, tape.constant(std::move(keep))), matmul(tape.constant(std::move(flag)), w.mask_vector));
    }
    Var x = add(gather_rows(w.gene_embedding, gene_ids), enc);

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (const auto& L : w.layers) {
        Var h = layer_norm(x, L.ln1_gain, L.ln1_bias);
        Var q = add_row(matmul(h, L.wq), L.bq);
        Var k = add_row(matmul(h, L.wk), L.bk);
        Var v = add_row(matmul(h, L.wv), L.bv);
        std::vector<Var> heads;
        std::vector<Var> maps;
        for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
            Var qh = slice_cols(q, hd * dh, dh);
            Var kh = slice_cols(k, hd * dh, dh);
            Var vh = slice_cols(v, hd * dh, dh);
            Var att = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
            if (keep_attention) maps.push_back(att);
            heads.push_back(matmul(att, vh));
        }
        if (keep_attention) out.attention.push_back(std::move(maps));
        Var mixed = heads.size() == 1 ? heads.front() : concat_cols(heads);
        x = add(x, add_row(matmul(mixed, L.wo), L.bo));
        Var h2 = layer_norm(x, L.ln2_gain, L.ln2_bias);
        Var ff = add_row(matmul(detail::silu(add_row(matmul(h2, L.ff_w1), L.ff_b1)), L.ff_w2), L.ff_b2);
        x = add(x, ff);
    }
    Var fin = layer_norm(x, w.final_gain, w.final_bias);
    out.output = add_row(matmul(fin, w.head_w), w.head_b);
    return out;
}

class TransformerModel final : public ExpressionModel {
  public:
    TransformerModel(GeneVocabulary vocab, ScFMConfig cfg, ScFMParams params, std::string fingerprint = {})
        : vocab_(std::move(vocab)), cfg_(cfg), params_(std::move(params)), fingerprint_(std::move(fingerprint)) {
        cfg_.validate();
        ensure(params_.gene_embedding.rank() == 2 && params_.gene_embedding.rows() == vocab_.size(),
               "embedding rows must equal vocabulary size");
        ensure(params_.gene_embedding.cols() == cfg_.dim, "embedding width must equal model dim");
        ensure(params_.layers.size() == cfg_.layers, "layer count mismatch");
        params_.visit([](const std::string& name, const ad::Tensor& t) {
            for (double v : t.values) ensure(std::isfinite(v), "non-finite parameter " + name);
        });
    }

    std::string kind() const override { return "transformer"; }
    const GeneVocabulary& vocabulary() const override { return vocab_; }
    const ScFMConfig& config() const { return cfg_; }
    const ScFMParams& params() const { return params_; }
    std::string fingerprint() const override { return fingerprint_; }
    void set_fingerprint(std::string f) { fingerprint_ = std::move(f); }

    std::vector<double> reconstruct(const Panel& panel, std::span<const double> values,
                                    const MaskFlags& masked = {}) const override {
        check_query(panel, values, masked);
        ad::Tape tape;
        tape.set_recording(false);
        auto fwd = run(tape, panel, values, masked, false, false);
        return fwd.output.value().values;
    }

    std::vector<double> input_gradient(const Panel& panel, std::span<const double> values, std::size_t target,
                                       const MaskFlags& masked = {}) const override {
        check_query(panel, values, masked);
        if (target >= panel.size()) throw UserError("gradient target outside the panel");
        ad::Tape tape;
        auto fwd = run(tape, panel, values, masked, true, false);
        auto grads = tape.backward(ad::pick(fwd.output, target));
        return grads.wrt(fwd.values).values;
    }

    bool has_attention() const override { return true; }
    AttentionRecord attention(const Panel& panel, std::span<const double> values,
                              const MaskFlags& masked = {}) const override {
        check_query(panel, values, masked);
        ad::Tape tape;
        tape.set_recording(false);
        auto fwd = run(tape, panel, values, masked, false, true);
        AttentionRecord rec;
        for (const auto& layer : fwd.attention) {
            std::vector<ad::Tensor> maps;
            for (const auto& a : layer) {
                auto t = a.value();
                t.node.reset();
                maps.push_back(std::move(t));
            }
            rec.maps.push_back(std::move(maps));
        }
        return rec;
    }

    bool has_embeddings() const override { return true; }
    std::size_t embedding_dim() const override { return cfg_.dim; }
    std::span<const double> embedding(std::size_t id) const override {
        if (id >= vocab_.size()) throw UserError("gene id " + std::to_string(id) + " outside the vocabulary");
        return std::span<const double>(params_.gene_embedding.values).subspan(id * cfg_.dim, cfg_.dim);
    }

  private:
    ScFMForward run(ad::Tape& tape, const Panel& panel, std::span<const double> values, const MaskFlags& masked,
                    bool values_need_grad, bool keep_attention) const {
        auto w = bind_params(tape, params_, false);
        auto v = tape.leaf(ad::Tensor({panel.size(), 1}, std::vector<double>(values.begin(), values.end())), values_need_grad);
        return scfm_forward(tape, cfg_, w, panel.ids(), v, masked, keep_attention);
    }

    GeneVocabulary vocab_;
    ScFMConfig cfg_;
    ScFMParams params_;
    std::string fingerprint_;
};

// ---------------------------------------------------------------------------
// Masked-value pretraining

struct MaskedCell {
    std::size_t dataset = 0;
    std::size_t cell = 0;
    MaskFlags masked;
};

/// Draws each position masked with probability `fraction`, forcing at least
/// one masked position.
inline MaskFlags draw_mask(Rng& rng, std::size_t K, double fraction) {
    MaskFlags m(K, 0);
    bool any = false;
    for (std::size_t k = 0; k < K; ++k) {
        m[k] = rng.uniform() < fraction ? 1 : 0;
        any = any || m[k];
    }
    if (!any) m[static_cast<std::size_t>(rng.below(K))] = 1;
    return m;
}

/// Mean squared error over the masked positions of one cell.
inline double masked_mse(const ExpressionModel& model, const Panel& panel, std::span<const double> values,
                         const MaskFlags& masked) {
    const auto out = model.reconstruct(panel, values, masked);
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < values.size(); ++k)
        if (masked[k]) {
            s += (out[k] - values[k]) * (out[k] - values[k]);
            ++n;
        }
    require(n > 0, "masked_mse: no masked positions");
    return s / static_cast<double>(n);
}

/// Vocabulary covering several datasets: symbols in first-appearance order.
inline GeneVocabulary union_vocabulary(const std::vector<const data::ExpressionMatrix*>& datasets) {
    std::vector<std::string> symbols;
    std::unordered_map<std::string, bool> seen;
    for (const auto* d : datasets)
        for (const auto& s : d->symbols())
            if (seen.emplace(s, true).second) symbols.push_back(s);
    return GeneVocabulary(std::move(symbols));
}

struct PretrainResult {
    TransformerModel model;
    std::vector<double> loss_trace;  // one entry per optimisation step
};

/// Adam on the masked-position MSE. Every step draws `batch_cells` cells
/// uniformly (with replacement) across the datasets and a fresh mask per
/// cell. Fully determined by cfg.seed.
inline PretrainResult pretrain_masked(const ScFMConfig& cfg, const std::vector<const data::ExpressionMatrix*>& datasets,
                                      std::optional<GeneVocabulary> vocabulary = std::nullopt) {
    cfg.validate();
    require(!datasets.empty(), "pretraining needs at least one dataset");
    std::size_t total_cells = 0;
    double grand_sum = 0.0;
    std::size_t grand_n = 0;
    for (const auto* d : datasets) {
        require(d && d->cells() >= 1, "pretraining dataset is empty");
        total_cells += d->cells();
        for (double v : d->values()) grand_sum += v;
        grand_n += d->values().size();
    }
    GeneVocabulary vocab = vocabulary ? std::move(*vocabulary) : union_vocabulary(datasets);
    std::vector<Panel> panels;
    for (const auto* d : datasets) panels.push_back(Panel::resolve(vocab, d->symbols()));

    ScFMParams params = init_scfm_params(cfg, vocab.size(), cfg.seed);
    params.head_b.values[0] = grand_sum / static_cast<double>(grand_n);

    std::vector<ad::Tensor*> slots;
    params.visit([&](const std::string&, ad::Tensor& t) { slots.push_back(&t); });
    optim::Adam adam(slots, {.lr = cfg.lr});

    Rng rng(derive_seed(cfg.seed, "pretrain"));
    std::vector<double> trace;
    trace.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        ad::Tape tape;
        auto w = bind_params(tape, params, true);
        std::vector<ad::Var> cell_losses;
        for (std::size_t b = 0; b < cfg.batch_cells; ++b) {
            auto flat = static_cast<std::size_t>(rng.below(total_cells));
            std::size_t ds = 0;
            while (flat >= datasets[ds]->cells()) flat -= datasets[ds++]->cells();
            const auto& expr = *datasets[ds];
            const auto row = expr.cell(flat);
            const auto mask = draw_mask(rng, expr.genes(), cfg.mask_fraction);
            auto v = tape.constant(ad::Tensor({expr.genes(), 1}, std::vector<double>(row.begin(), row.end())));
            auto fwd = scfm_forward(tape, cfg, w, panels[ds].ids(), v, mask, false);
            std::vector<std::size_t> idx;
            std::vector<double> target;
            for (std::size_t k = 0; k < mask.size(); ++k)
                if (mask[k]) {
                    idx.push_back(k);
                    target.push_back(row[k]);
                }
            const auto n = target.size();
            cell_losses.push_back(ad::mse(ad::gather_rows(fwd.output, std::move(idx)), ad::Tensor({n, 1}, std::move(target))));
        }
        ad::Var total = cell_losses.front();
        for (std::size_t b = 1; b < cell_losses.size(); ++b) total = ad::add(total, cell_losses[b]);
        auto loss = ad::scale(total, 1.0 / static_cast<double>(cell_losses.size()));
        trace.push_back(loss.value().item());
        auto grads = tape.backward(loss);
        std::vector<ad::Tensor> g;
        w.visit([&](const std::string&, ad::Var& v) { g.push_back(grads.wrt(v)); });
        adam.step(g);
    }
    return {TransformerModel(std::move(vocab), cfg, std::move(params)), std::move(trace)};
}

}  // namespace ugrn::model
