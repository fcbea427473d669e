#pragma once

// Versioned JSON checkpoints for both reconstruction backends. A model's
// fingerprint is the hash of its serialized parameters (the checkpoint
// without the optional manifest field).

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "ugrn/data.hpp"
#include "ugrn/linear_backend.hpp"
#include "ugrn/transformer.hpp"

namespace ugrn::model {

inline constexpr const char* kModelFormat = "ugrn-model";
inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json tensor_to_json(const ad::Tensor& t) {
    return nlohmann::json{{"shape", t.shape}, {"values", t.values}};
}

inline ad::Tensor tensor_from_json(const nlohmann::json& j) {
    return ad::Tensor(j.at("shape").get<ad::Shape>(), j.at("values").get<std::vector<double>>());
}

inline nlohmann::json scfm_config_to_json(const ScFMConfig& c) {
    return nlohmann::json{{"layers", c.layers},         {"heads", c.heads},
                          {"dim", c.dim},               {"value_hidden", c.value_hidden},
                          {"ffn_hidden", c.ffn_hidden}, {"mask_fraction", c.mask_fraction},
                          {"steps", c.steps},           {"batch_cells", c.batch_cells},
                          {"lr", c.lr},                 {"seed", c.seed}};
}

inline ScFMConfig scfm_config_from_json(const nlohmann::json& j) {
    ScFMConfig c;
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.dim = j.value("dim", c.dim);
    c.value_hidden = j.value("value_hidden", c.value_hidden);
    c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
    c.mask_fraction = j.value("mask_fraction", c.mask_fraction);
    c.steps = j.value("steps", c.steps);
    c.batch_cells = j.value("batch_cells", c.batch_cells);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    return c;
}

}  // namespace detail

inline nlohmann::json checkpoint_json(const ExpressionModel& model, const std::string& manifest = {}) {
    nlohmann::json j;
    j["format"] = kModelFormat;
    j["version"] = kModelFormatVersion;
    j["kind"] = model.kind();
    j["vocabulary"] = model.vocabulary().symbols();
    j["vocabulary_hash"] = model.vocabulary().hash();
    if (!manifest.empty()) j["manifest"] = manifest;
    if (const auto* t = dynamic_cast<const TransformerModel*>(&model)) {
        j["config"] = detail::scfm_config_to_json(t->config());
        nlohmann::json params = nlohmann::json::array();
        t->params().visit([&](const std::string& name, const ad::Tensor& v) {
            auto e = detail::tensor_to_json(v);
            e["name"] = name;
            params.push_back(std::move(e));
        });
        j["params"] = std::move(params);
    } else if (const auto* l = dynamic_cast<const LinearModel*>(&model)) {
        j["lambda"] = l->params().lambda;
        j["weights"] = l->params().weights;
        j["bias"] = l->params().bias;
    } else {
        throw UnsupportedError("cannot serialise backend '" + model.kind() + "'");
    }
    return j;
}

inline std::string serialize_checkpoint(const ExpressionModel& model, const std::string& manifest = {}) {
    return checkpoint_json(model, manifest).dump() + "\n";
}

inline std::string model_fingerprint(const ExpressionModel& model) { return hash_text(checkpoint_json(model).dump()); }

/// Sets the fingerprint of a freshly built model.
template <class M>
M& stamp_fingerprint(M& model) {
    model.set_fingerprint(model_fingerprint(model));
    return model;
}

struct LoadedModel {
    std::unique_ptr<ExpressionModel> model;
    std::string manifest;
};

/// Parses a checkpoint. The stored vocabulary must hash to the recorded
/// vocabulary hash, and to `expected_vocab_hash` when one is given.
inline LoadedModel parse_checkpoint(const std::string& text, const std::optional<std::string>& expected_vocab_hash = {}) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw UserError(std::string("model checkpoint is not valid JSON: ") + e.what());
    }
    try {
        if (j.value("format", "") != kModelFormat) throw UserError("not a ugrn model checkpoint");
        if (j.value("version", 0) != kModelFormatVersion)
            throw UserError("unsupported model checkpoint version " + std::to_string(j.value("version", 0)));
        GeneVocabulary vocab(j.at("vocabulary").get<std::vector<std::string>>());
        const auto recorded = j.at("vocabulary_hash").get<std::string>();
        if (vocab.hash() != recorded) throw UserError("model checkpoint vocabulary does not match its recorded hash");
        if (expected_vocab_hash && *expected_vocab_hash != recorded)
            throw UserError("model checkpoint vocabulary hash " + recorded + " does not match expected " + *expected_vocab_hash);

        LoadedModel out;
        out.manifest = j.value("manifest", "");
        j.erase("manifest");
        const std::string fp = hash_text(j.dump());
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "transformer") {
            const auto cfg = detail::scfm_config_from_json(j.at("config"));
            ScFMParams params = init_scfm_params(cfg, vocab.size(), 0);
            const auto& arr = j.at("params");
            std::size_t k = 0;
            params.visit([&](const std::string& name, ad::Tensor& t) {
                if (k >= arr.size()) throw UserError("model checkpoint is missing parameter " + name);
                const auto& e = arr.at(k++);
                if (e.at("name").get<std::string>() != name)
                    throw UserError("model checkpoint parameter order mismatch at " + name);
                auto loaded = detail::tensor_from_json(e);
                if (loaded.shape != t.shape) throw UserError("model checkpoint parameter " + name + " has wrong shape");
                t = std::move(loaded);
            });
            if (k != arr.size()) throw UserError("model checkpoint has unexpected extra parameters");
            out.model = std::make_unique<TransformerModel>(std::move(vocab), cfg, std::move(params), fp);
        } else if (kind == "linear") {
            LinearBackendParams p;
            p.lambda = j.at("lambda").get<double>();
            p.weights = j.at("weights").get<std::vector<double>>();
            p.bias = j.at("bias").get<std::vector<double>>();
            p.vocabulary = std::move(vocab);
            const auto V = p.vocabulary.size();
            if (p.weights.size() != V * V || p.bias.size() != V) throw UserError("linear checkpoint has wrong sizes");
            out.model = std::make_unique<LinearModel>(std::move(p), fp);
        } else {
            throw UserError("unknown model kind '" + kind + "'");
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw UserError(std::string("malformed model checkpoint: ") + e.what());
    }
}

/// Writes the checkpoint and returns the model fingerprint.
inline std::string save_checkpoint(const std::filesystem::path& path, const ExpressionModel& model,
                                   const std::string& manifest = {}) {
    data::write_text(path, serialize_checkpoint(model, manifest));
    return model_fingerprint(model);
}

inline LoadedModel load_checkpoint(const std::filesystem::path& path,
                                   const std::optional<std::string>& expected_vocab_hash = {}) {
    return parse_checkpoint(data::read_text(path), expected_vocab_hash);
}

}  // namespace ugrn::model
