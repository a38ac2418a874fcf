#pragma once

// Command dispatch behind the CLI binary. Commands:
//   gen-data       write the synthetic heterogeneous corpus files
//   train          phase 1 (joint training, freeze encoder/enhancer)
//   enhance        phase 2 (RL enhancement of the cluster classifier)
//   train-filters  phase 3 (independent per-cluster decoders)
//   evaluate       metrics report on the validation file
//   cluster-report latent-space scatter data for the newest checkpoint
//   pipeline       all of the above in order
//
// Later phases resume from the previous phase's checkpoint in out_dir; a
// missing checkpoint names the phase to run first. A checkpoint whose
// embedded config disagrees with the effective config on any model dimension
// is refused with a side-by-side report.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lms2s/checkpoint.hpp"
#include "lms2s/cli_detail.hpp"
#include "lms2s/common.hpp"
#include "lms2s/config.hpp"
#include "lms2s/pipeline.hpp"

namespace lms2s {

struct CliInvocation {
    std::string command;
    std::string config_path;             // optional
    std::vector<std::string> overrides;  // key=value, applied in order
    std::optional<std::uint64_t> seed;   // applied after overrides
};

inline int run_command(const CliInvocation& inv, std::ostream& out, std::ostream& err) {
    try {
        std::vector<std::string> overrides = inv.overrides;
        if (inv.seed) overrides.push_back("seed=" + std::to_string(*inv.seed));
        PipelineConfig cfg = parse_config(inv.config_path, overrides);
        out << "effective configuration:\n" << config_echo(cfg);

        if (inv.command == "gen-data") {
            detail::cmd_gen_data(cfg, out);
        } else if (inv.command == "train") {
            detail::with_precision(cfg, [&](auto tag) { detail::cmd_train<decltype(tag)>(cfg, out); });
        } else if (inv.command == "enhance") {
            detail::with_precision(cfg, [&](auto tag) { detail::cmd_enhance<decltype(tag)>(cfg, out); });
        } else if (inv.command == "train-filters") {
            detail::with_precision(cfg,
                                   [&](auto tag) { detail::cmd_train_filters<decltype(tag)>(cfg, out); });
        } else if (inv.command == "evaluate") {
            detail::with_precision(cfg, [&](auto tag) { detail::cmd_evaluate<decltype(tag)>(cfg, out); });
        } else if (inv.command == "cluster-report") {
            detail::with_precision(cfg,
                                   [&](auto tag) { detail::cmd_cluster_report<decltype(tag)>(cfg, out); });
        } else if (inv.command == "pipeline") {
            detail::cmd_gen_data(cfg, out, /*only_if_missing=*/true);
            detail::with_precision(cfg, [&](auto tag) {
                detail::cmd_train<decltype(tag)>(cfg, out);
                detail::cmd_enhance<decltype(tag)>(cfg, out);
                detail::cmd_train_filters<decltype(tag)>(cfg, out);
                detail::cmd_evaluate<decltype(tag)>(cfg, out);
                detail::cmd_cluster_report<decltype(tag)>(cfg, out);
            });
        } else {
            throw ConfigError("unknown command '" + inv.command + "'");
        }
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace lms2s
