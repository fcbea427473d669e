#include <CLI11.hpp>

#include <iostream>
#include <json.hpp>

#include "ugrn/pipeline.hpp"

using namespace ugrn;

namespace {

struct Args {
    std::string config;
    std::string out = "ugrn-run";
    std::optional<std::uint64_t> seed;
    std::optional<double> ratio;
    std::vector<std::string> methods;
    bool refresh = false;
    bool allow_mixed = false;
    std::string report;
};

pipeline::RunConfig load_config(const Args& a) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(data::read_text(a.config));
    } catch (const nlohmann::json::parse_error& e) {
        throw UserError("cannot parse run config '" + a.config + "': " + e.what());
    }
    if (a.seed) j["seed"] = *a.seed;
    if (a.ratio) j["pairs"]["ratio"] = *a.ratio;
    const std::filesystem::path p(a.config);
    auto cfg = pipeline::RunConfig::from_json(j, p.has_parent_path() ? p.parent_path() : std::filesystem::path("."));
    cfg.check_paths();
    return cfg;
}

std::vector<std::string> methods_of(const Args& a, const pipeline::RunConfig& cfg) {
    for (const auto& m : a.methods) pipeline::check_method(m);
    return a.methods.empty() ? cfg.methods : a.methods;
}

int finish(const eval::EvalReport& r) {
    std::cout << r.to_table();
    return r.errors.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gene regulatory network inference from frozen expression models"};
    app.require_subcommand(1);
    Args a;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", a.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", a.out, "output directory");
        sub->add_option("--seed", a.seed, "override the global seed");
        sub->add_option("--ratio", a.ratio, "override the negative:positive ratio");
    };
    auto add_method = [&](CLI::App* sub) {
        sub->add_option("--method", a.methods, "origin-pert|origin-attn|pert|emb|vvp|gdt|ens (repeatable)");
    };

    auto* simulate = app.add_subcommand("simulate", "write synthetic datasets");
    add_common(simulate);
    auto* pretrain = app.add_subcommand("pretrain", "fit the expression model");
    add_common(pretrain);
    auto* extract = app.add_subcommand("extract", "sample pairs and extract feature caches");
    add_common(extract);
    add_method(extract);
    extract->add_flag("--refresh", a.refresh, "overwrite stale feature caches");
    auto* train = app.add_subcommand("train", "train translators per training group");
    add_common(train);
    add_method(train);
    auto* evaluate = app.add_subcommand("evaluate", "score held-out datasets and write the report");
    add_common(evaluate);
    add_method(evaluate);
    evaluate->add_flag("--allow-mixed-manifest", a.allow_mixed, "accept inputs produced under another manifest");
    auto* report = app.add_subcommand("report", "print a saved report");
    report->add_option("report", a.report, "report.json")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (report->parsed()) return finish(pipeline::load_report(a.report));

        const auto cfg = load_config(a);
        const auto ws = pipeline::Workspace::at(a.out);
        std::cerr << "manifest " << cfg.manifest() << "\n";
        if (simulate->parsed()) {
            for (const auto& p : pipeline::run_simulate(cfg, ws)) std::cout << "wrote " << p.string() << "\n";
        } else if (pretrain->parsed()) {
            const auto r = pipeline::run_pretrain(cfg, ws);
            std::cout << "model " << r.model->kind() << " fingerprint " << r.fingerprint << " final loss "
                      << format_double(r.loss_trace.back()) << "\n";
        } else if (extract->parsed()) {
            for (const auto& s : pipeline::run_extract(cfg, ws, methods_of(a, cfg), a.refresh))
                std::cout << s.dataset << "\t" << s.method << "\trows " << s.rows << "\tdims " << s.dims << "\tskipped " << s.skipped << "\n";
        } else if (train->parsed()) {
            for (const auto& s : pipeline::run_train(cfg, ws, methods_of(a, cfg)))
                std::cout << s.group << "\t" << s.method << "\trows " << s.rows << "\tloss " << format_double(s.final_loss) << "\t"
                          << s.path.string() << "\n";
        } else if (evaluate->parsed()) {
            return finish(pipeline::run_evaluate(cfg, ws, methods_of(a, cfg), {a.allow_mixed}));
        }
        return 0;
    } catch (const InvariantError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
