#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>

#include "disbench/bench.hpp"
#include "disbench/errors.hpp"

using namespace disbench;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 1;
};

ExperimentConfig resolve_config(const GlobalArgs& g) {
    ExperimentConfig cfg =
        g.config_path.empty() ? ExperimentConfig{} : load_config_file(g.config_path);
    if (g.seed_set) cfg.seed = g.seed;
    if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
    if (const char* env = std::getenv("DISBENCH_OUT"); env && *env) cfg.out_dir = env;
    if (g.jobs < 1) throw ConfigError("jobs", "must be >= 1");
    return cfg;
}

void require_method(const std::string& method) {
    if (method.empty()) throw ConfigError("method", "required (pass --method)");
    try {
        parse_method(method);
    } catch (const InvalidInput&) {
        throw ConfigError("method", "unknown method '" + method + "'");
    }
}

void print_record_summary(const RunRecord& r) {
    int ok = 0;
    double inv = 0.0;
    for (const auto& f : r.folds)
        if (!f.failed) {
            ++ok;
            inv += f.auroc_inverted;
        }
    std::printf("%s p=%.2f: %d/%zu folds ok, inverted AUROC mean %.1f\n", r.method.c_str(),
                r.prevalence, ok, r.folds.size(), ok ? inv / ok : 0.0);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"disbench: shortcut-mitigation benchmark on a confounded toy dataset"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "INI config file");
    auto* seed_opt = app.add_option("--seed", g.seed, "override dataset.seed");
    app.add_option("--out", g.out_dir, "output directory (DISBENCH_OUT overrides)");
    app.add_option("--jobs", g.jobs, "parallel fold workers");

    auto* cmd_gen = app.add_subcommand("gen-data", "materialize dataset pools and manifest");
    auto* cmd_train = app.add_subcommand("train", "train one method at one prevalence, all folds");
    auto* cmd_eval = app.add_subcommand("eval", "evaluate checkpoints into a run record");
    auto* cmd_sweep = app.add_subcommand("sweep", "full method x prevalence grid");
    auto* cmd_report = app.add_subcommand("report", "render tables, scatters and summary");
    for (auto* cmd : {cmd_gen, cmd_train, cmd_eval, cmd_sweep, cmd_report})
        cmd->fallthrough();  // global flags may follow the subcommand

    std::string method;
    double prevalence = -1.0;
    for (auto* cmd : {cmd_train, cmd_eval}) {
        cmd->add_option("--method", method, "method name (erm, rebal, advcl, dcor_rebal, ...)");
        cmd->add_option("--prevalence", prevalence,
                        "training prevalence (default: dataset.train_p)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // unknown flag or subcommand: usage + exit 2
    }

    try {
        g.seed_set = seed_opt->count() > 0;
        const ExperimentConfig cfg = resolve_config(g);

        if (cmd_gen->parsed()) {
            gen_data(cfg);
            std::printf("dataset written to %s/data\n", cfg.out_dir.c_str());
        } else if (cmd_train->parsed()) {
            require_method(method);
            const double p = prevalence > 0.0 ? prevalence : cfg.train_p;
            if (!(p > 0.0 && p < 1.0)) throw ConfigError("prevalence", "must lie in (0,1)");
            train_method(cfg, method, p, g.jobs);
            std::printf("checkpoints written to %s\n", run_dir(cfg, method, p).c_str());
        } else if (cmd_eval->parsed()) {
            require_method(method);
            const double p = prevalence > 0.0 ? prevalence : cfg.train_p;
            if (!(p > 0.0 && p < 1.0)) throw ConfigError("prevalence", "must lie in (0,1)");
            const RunRecord rec = eval_method(cfg, method, p);
            write_run_record(cfg, rec);
            print_record_summary(rec);
        } else if (cmd_sweep->parsed()) {
            bool has_erm = false;
            for (const auto& m : cfg.methods) has_erm |= m == "erm";
            if (!has_erm)
                throw ConfigError("methods.list", "sweep needs the erm baseline for delta tables");
            const auto records = run_sweep(cfg, g.jobs);
            for (const auto& r : records) print_record_summary(r);
            std::printf("records: %s/records.jsonl\n", cfg.out_dir.c_str());
        } else if (cmd_report->parsed()) {
            const auto records = collect_records(cfg);
            render_report(cfg, records);
            std::printf("report written under %s\n", cfg.out_dir.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
