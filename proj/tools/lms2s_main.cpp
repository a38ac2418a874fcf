// lms2s command-line entry point.
//
//   lms2s <command> [--config FILE] [--set key=value ...] [--seed N]
//
// Commands: gen-data, train, enhance, train-filters, evaluate,
// cluster-report, pipeline. See README for the config key reference.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lms2s/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"latent-enhanced multi-filter seq2seq"};
    app.require_subcommand(1);

    lms2s::CliInvocation inv;
    std::uint64_t seed_flag = 0;
    bool seed_set = false;

    const std::vector<std::string> commands = {"gen-data",  "train",          "enhance",
                                               "train-filters", "evaluate",
                                               "cluster-report", "pipeline"};
    for (const auto& name : commands) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", inv.config_path, "flat key=value config file");
        sub->add_option("--set", inv.overrides, "override, key=value (repeatable)");
        sub->add_option("--seed", seed_flag, "random seed (wins over --set seed=...)")
            ->each([&](const std::string&) { seed_set = true; });
        sub->callback([&inv, name] { inv.command = name; });
    }

    CLI11_PARSE(app, argc, argv);
    if (seed_set) inv.seed = seed_flag;
    return lms2s::run_command(inv, std::cout, std::cerr);
}
