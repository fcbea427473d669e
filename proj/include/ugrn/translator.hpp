#pragma once

// The translator: an MLP (ReLU hidden layers, sigmoid output) mapping a pair
// feature to a regulation probability, trained with binary cross-entropy.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ugrn/autodiff.hpp"
#include "ugrn/common.hpp"
#include "ugrn/data.hpp"
#include "ugrn/optim.hpp"

namespace ugrn::translator {

struct TranslatorConfig {
    std::vector<std::size_t> hidden{128, 64};
    double lr = 1e-3;
    std::size_t batch_size = 128;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    /// One plain gradient-descent step per epoch over the whole training
    /// set, with duplicate rows merged into weights.
    bool full_batch = false;

    void validate() const {
        for (auto h : hidden) require(h >= 1, "translator hidden dims must be positive");
        require(std::isfinite(lr) && lr > 0.0, "translator learning rate must be positive");
        require(batch_size >= 1, "translator batch size must be positive");
    }

    nlohmann::json to_json() const {
        return {{"hidden", hidden}, {"lr", lr}, {"batch_size", batch_size}, {"epochs", epochs}, {"seed", seed}, {"full_batch", full_batch}};
    }

    static TranslatorConfig from_json(const nlohmann::json& j) {
        TranslatorConfig c;
        c.hidden = j.value("hidden", c.hidden);
        c.lr = j.value("lr", c.lr);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.seed = j.value("seed", c.seed);
        c.full_batch = j.value("full_batch", c.full_batch);
        c.validate();
        return c;
    }
};

inline double sigmoid(double x) {
    const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return std::clamp(s, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

inline double logit(double p) {
    require(p > 0.0 && p < 1.0, "logit needs a probability in (0, 1)");
    return std::log(p / (1.0 - p));
}

class TranslatorModel {
  public:
    TranslatorModel() = default;
    TranslatorModel(TranslatorConfig cfg, std::string method, std::size_t input_dim, std::vector<ad::Tensor> weights,
                    std::vector<ad::Tensor> biases)
        : cfg_(std::move(cfg)), method_(std::move(method)), input_dim_(input_dim), weights_(std::move(weights)),
          biases_(std::move(biases)) {
        ensure(weights_.size() == cfg_.hidden.size() + 1 && biases_.size() == weights_.size(), "translator layer count mismatch");
        std::size_t in = input_dim_;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            const std::size_t out = l < cfg_.hidden.size() ? cfg_.hidden[l] : 1;
            ensure(weights_[l].shape == ad::Shape{in, out} && biases_[l].shape == ad::Shape{out}, "translator layer shape mismatch");
            for (double v : weights_[l].values) ensure(std::isfinite(v), "non-finite translator weight");
            for (double v : biases_[l].values) ensure(std::isfinite(v), "non-finite translator bias");
            in = out;
        }
    }

    /// Fresh model with weights and biases uniform in +-1/sqrt(fan_in).
    static TranslatorModel initialise(const TranslatorConfig& cfg, std::string method, std::size_t input_dim) {
        cfg.validate();
        require(input_dim >= 1, "translator input must have at least one dimension");
        Rng rng(derive_seed(cfg.seed, "translator-init"));
        std::vector<ad::Tensor> w, b;
        std::size_t in = input_dim;
        for (std::size_t l = 0; l <= cfg.hidden.size(); ++l) {
            const std::size_t out = l < cfg.hidden.size() ? cfg.hidden[l] : 1;
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            auto W = ad::Tensor::zeros({in, out});
            for (auto& v : W.values) v = rng.uniform(-bound, bound);
            auto B = ad::Tensor::zeros({out});
            for (auto& v : B.values) v = rng.uniform(-bound, bound);
            w.push_back(std::move(W));
            b.push_back(std::move(B));
            in = out;
        }
        return TranslatorModel(cfg, std::move(method), input_dim, std::move(w), std::move(b));
    }

    const TranslatorConfig& config() const { return cfg_; }
    const std::string& method() const { return method_; }
    std::size_t input_dim() const { return input_dim_; }
    std::vector<ad::Tensor>& weights() { return weights_; }
    std::vector<ad::Tensor>& biases() { return biases_; }
    const std::vector<ad::Tensor>& weights() const { return weights_; }
    const std::vector<ad::Tensor>& biases() const { return biases_; }

    void check_input(std::size_t dims) const {
        if (dims != input_dim_)
            throw UserError("feature dimension mismatch: translator expects " + std::to_string(input_dim_) + ", got " +
                            std::to_string(dims));
    }

    double logit(std::span<const double> x) const {
        check_input(x.size());
        std::vector<double> h(x.begin(), x.end());
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            const auto& W = weights_[l];
            const std::size_t in = W.rows(), out = W.cols();
            std::vector<double> next(out, 0.0);
            for (std::size_t i = 0; i < in; ++i)
                for (std::size_t o = 0; o < out; ++o) next[o] += h[i] * W.values[i * out + o];
            for (std::size_t o = 0; o < out; ++o) {
                next[o] += biases_[l].values[o];
                if (l + 1 < weights_.size()) next[o] = std::max(0.0, next[o]);
            }
            h = std::move(next);
        }
        return h[0];
    }

    double score(std::span<const double> x) const { return sigmoid(logit(x)); }

    std::vector<double> logits(const std::vector<std::vector<double>>& X, std::size_t threads = 1) const {
        std::vector<double> out(X.size());
        parallel_for(X.size(), threads, [&](std::size_t k) { out[k] = logit(X[k]); });
        return out;
    }

    std::vector<double> scores(const std::vector<std::vector<double>>& X, std::size_t threads = 1) const {
        auto out = logits(X, threads);
        for (auto& v : out) v = sigmoid(v);
        return out;
    }

  private:
    TranslatorConfig cfg_;
    std::string method_;
    std::size_t input_dim_ = 0;
    std::vector<ad::Tensor> weights_, biases_;
};

struct TrainResult {
    TranslatorModel model;
    /// Mean training BCE of each epoch.
    std::vector<double> loss_trace;
};

namespace detail {

inline ad::Var forward(ad::Tape& tape, const std::vector<ad::Var>& w, const std::vector<ad::Var>& b, const ad::Tensor& x) {
    ad::Var h = tape.constant(x);
    for (std::size_t l = 0; l < w.size(); ++l) {
        h = ad::add_row(ad::matmul(h, w[l]), b[l]);
        if (l + 1 < w.size()) h = ad::relu(h);
    }
    return h;
}

inline ad::Tensor rows_tensor(const std::vector<const std::vector<double>*>& rows, std::size_t dims) {
    ad::Tensor t = ad::Tensor::zeros({rows.size(), dims});
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r]->begin(), rows[r]->end(), t.values.begin() + static_cast<std::ptrdiff_t>(r * dims));
    return t;
}

}  // namespace detail

inline TrainResult train(const TranslatorConfig& cfg, const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                         const std::string& method = "") {
    cfg.validate();
    require(X.size() == y.size(), "feature and label counts differ");
    require(!X.empty(), "translator training set is empty");
    const std::size_t D = X.front().size();
    std::size_t pos = 0;
    for (std::size_t k = 0; k < X.size(); ++k) {
        require(X[k].size() == D, "training features have unequal dimensions");
        require(y[k] == 0 || y[k] == 1, "labels must be 0 or 1");
        for (double v : X[k]) require(std::isfinite(v), "training feature contains NaN or Inf");
        pos += static_cast<std::size_t>(y[k]);
    }
    if (pos == 0 || pos == X.size()) throw UserError("translator training needs both positive and negative examples");

    auto model = TranslatorModel::initialise(cfg, method, D);
    std::vector<ad::Tensor*> slots;
    for (std::size_t l = 0; l < model.weights().size(); ++l) {
        slots.push_back(&model.weights()[l]);
        slots.push_back(&model.biases()[l]);
    }
    auto step_on = [&](auto& opt, const std::vector<const std::vector<double>*>& rows, const ad::Tensor& labels,
                       const ad::Tensor* weights) {
        ad::Tape tape;
        std::vector<ad::Var> w, b;
        for (std::size_t l = 0; l < model.weights().size(); ++l) {
            w.push_back(tape.leaf(model.weights()[l]));
            b.push_back(tape.leaf(model.biases()[l]));
        }
        auto prob = ad::sigmoid(detail::forward(tape, w, b, detail::rows_tensor(rows, D)));
        auto loss = weights ? ad::weighted_bce(prob, labels, *weights) : ad::bce(prob, labels);
        auto grads = tape.backward(loss);
        std::vector<ad::Tensor> g;
        for (std::size_t l = 0; l < w.size(); ++l) {
            g.push_back(grads.wrt(w[l]));
            g.push_back(grads.wrt(b[l]));
        }
        opt.step(g);
        return loss.value().item();
    };

    std::vector<double> trace;
    if (cfg.full_batch) {
        // canonical order: unique (features, label) rows with multiplicities
        std::map<std::pair<std::vector<double>, int>, double> counts;
        for (std::size_t k = 0; k < X.size(); ++k) counts[{X[k], y[k]}] += 1.0;
        std::vector<const std::vector<double>*> rows;
        ad::Tensor labels = ad::Tensor::zeros({counts.size(), 1}), weights = ad::Tensor::zeros({counts.size(), 1});
        std::size_t r = 0;
        for (const auto& [key, c] : counts) {
            rows.push_back(&key.first);
            labels.values[r] = key.second;
            weights.values[r] = c;
            ++r;
        }
        optim::GradientDescent gd(slots, cfg.lr);
        for (std::size_t e = 0; e < cfg.epochs; ++e) trace.push_back(step_on(gd, rows, labels, &weights));
    } else {
        optim::Adam adam(slots, {.lr = cfg.lr});
        Rng rng(derive_seed(cfg.seed, "translator-shuffle"));
        std::vector<std::size_t> order(X.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t e = 0; e < cfg.epochs; ++e) {
            rng.shuffle(order);
            double total = 0.0;
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t end = std::min(order.size(), start + cfg.batch_size);
                std::vector<const std::vector<double>*> rows;
                ad::Tensor labels = ad::Tensor::zeros({end - start, 1});
                for (std::size_t q = start; q < end; ++q) {
                    rows.push_back(&X[order[q]]);
                    labels.values[q - start] = y[order[q]];
                }
                total += step_on(adam, rows, labels, nullptr) * static_cast<double>(end - start);
            }
            trace.push_back(total / static_cast<double>(X.size()));
        }
    }
    return {std::move(model), std::move(trace)};
}

/// Mean BCE of a model on a labelled set.
inline double bce_loss(const TranslatorModel& m, const std::vector<std::vector<double>>& X, const std::vector<int>& y) {
    require(X.size() == y.size() && !X.empty(), "bce_loss needs matching non-empty inputs");
    double s = 0.0;
    for (std::size_t k = 0; k < X.size(); ++k) {
        const double p = std::clamp(m.score(X[k]), ad::kBceEps, 1.0 - ad::kBceEps);
        s -= y[k] ? std::log(p) : std::log(1.0 - p);
    }
    return s / static_cast<double>(X.size());
}

/// Averages two logit lists; ensemble probabilities are sigmoid of this.
inline std::vector<double> ensemble_logits(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw UserError("ensemble inputs differ in length: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    std::vector<double> out(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = 0.5 * (a[k] + b[k]);
    return out;
}

inline std::vector<double> ensemble(const std::vector<double>& a, const std::vector<double>& b) {
    auto out = ensemble_logits(a, b);
    for (auto& v : out) v = sigmoid(v);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kTranslatorFormat = "ugrn-translator";
inline constexpr int kTranslatorFormatVersion = 1;

inline nlohmann::json translator_to_json(const TranslatorModel& m, const std::string& manifest = {},
                                         const std::string& model_fingerprint = {}) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < m.weights().size(); ++l)
        layers.push_back({{"w_shape", m.weights()[l].shape}, {"w", m.weights()[l].values}, {"b", m.biases()[l].values}});
    nlohmann::json j{{"format", kTranslatorFormat},
                     {"version", kTranslatorFormatVersion},
                     {"method", m.method()},
                     {"input_dim", m.input_dim()},
                     {"config", m.config().to_json()},
                     {"layers", layers}};
    if (!manifest.empty()) j["manifest"] = manifest;
    if (!model_fingerprint.empty()) j["model_fingerprint"] = model_fingerprint;
    return j;
}

struct LoadedTranslator {
    TranslatorModel model;
    std::string manifest;
    std::string model_fingerprint;
};

inline LoadedTranslator translator_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", "") != kTranslatorFormat) throw UserError("not a ugrn translator checkpoint");
        if (j.value("version", 0) != kTranslatorFormatVersion) throw UserError("unsupported translator checkpoint version");
        auto cfg = TranslatorConfig::from_json(j.at("config"));
        std::vector<ad::Tensor> w, b;
        for (const auto& L : j.at("layers")) {
            w.emplace_back(L.at("w_shape").get<ad::Shape>(), L.at("w").get<std::vector<double>>());
            auto bv = L.at("b").get<std::vector<double>>();
            const auto n = bv.size();
            b.emplace_back(ad::Shape{n}, std::move(bv));
        }
        if (w.size() != cfg.hidden.size() + 1) throw UserError("translator checkpoint has the wrong number of layers");
        LoadedTranslator out{TranslatorModel(cfg, j.at("method").get<std::string>(), j.at("input_dim").get<std::size_t>(), std::move(w),
                                             std::move(b)),
                             j.value("manifest", ""), j.value("model_fingerprint", "")};
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw UserError(std::string("malformed translator checkpoint: ") + e.what());
    } catch (const InvariantError& e) {
        throw UserError(std::string("inconsistent translator checkpoint: ") + e.what());
    }
}

inline void save_translator(const std::filesystem::path& path, const TranslatorModel& m, const std::string& manifest = {},
                            const std::string& model_fingerprint = {}) {
    data::write_text(path, translator_to_json(m, manifest, model_fingerprint).dump() + "\n");
}

inline LoadedTranslator load_translator(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(data::read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw UserError("translator checkpoint is not valid JSON: " + std::string(e.what()));
    }
    return translator_from_json(j);
}

/// Refuses features produced by a different method or with other dims.
inline void check_compatible(const TranslatorModel& m, const std::string& method, std::size_t dims) {
    if (m.method() != method)
        throw UserError("translator was trained on '" + m.method() + "' features, got '" + method + "'");
    m.check_input(dims);
}

}  // namespace ugrn::translator
