// Experiment CLI: one subcommand per experiment kind, JSON configs,
// deterministic CSV/JSON artifacts under the output directory.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sphereloss/experiments.hpp"

namespace {

std::string default_out_dir() {
    if (const char* env = std::getenv("SPHERELOSS_OUT")) return env;
    return "out";
}

struct CommonArgs {
    std::string config;
    std::string out = default_out_dir();
    unsigned long long seed = 0;
    CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", args.out, "output directory (default: $SPHERELOSS_OUT or ./out)");
    args.seed_opt = cmd->add_option("--seed", args.seed, "seed override");
}

int run(const std::string& kind, const CommonArgs& args) {
    std::optional<std::uint64_t> seed_override;
    if (args.seed_opt->count() > 0) seed_override = args.seed;
    auto cfg = sphereloss::experiments::load_config(args.config, args.out, seed_override);
    if (cfg.kind != kind)
        throw sphereloss::ConfigParseError("config kind '" + cfg.kind +
                                           "' does not match subcommand '" + kind + "'");
    sphereloss::experiments::run_experiment(cfg);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sphereloss: angular-margin loss and architecture experiments"};
    app.require_subcommand(1);

    const std::vector<std::string> kinds = {"logit-curves", "overlap-map", "flops",
                                            "train",        "margin-sweep", "two-stage",
                                            "distill",      "eval"};
    std::map<std::string, CommonArgs> args;
    for (const auto& kind : kinds) {
        auto* cmd = app.add_subcommand(kind, "run a '" + kind + "' experiment");
        add_common(cmd, args[kind]);
    }
    auto* report = app.add_subcommand("report", "merge run summaries into a comparison table");
    std::string report_dir = default_out_dir();
    report->add_option("--dir", report_dir, "directory holding summary*.json files");

    CLI11_PARSE(app, argc, argv);

    try {
        for (const auto& kind : kinds)
            if (app.get_subcommand(kind)->parsed()) return run(kind, args[kind]);
        if (report->parsed()) {
            sphereloss::experiments::emit_reports(report_dir);
            return 0;
        }
    } catch (const sphereloss::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
